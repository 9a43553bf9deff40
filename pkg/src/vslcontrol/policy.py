"""Shared multi-agent speed-limit policy.

The policy is one small feed-forward network shared by every gantry agent.
Each agent observes a 5-vector: its own sensor's speed and occupancy, the
upstream neighbor agent's sensor speed and occupancy, and the intended
action of the downstream neighbor. Actions are discrete speed limits.
Invalid-action masking removes any action that would exceed the downstream
action by more than the permitted step-down differential, so a sweep from
the most downstream agent upward can never emit an illegal slow-down
staircase.

Everything here is plain numpy, float64, and deterministic given a seed;
the same code path serves training, batch evaluation, and the live gateway.
"""

from __future__ import annotations

import functools
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .corridor import CorridorConfig

NEG_INF = -1e30    # stands in for -inf so arithmetic stays NaN-free


class PolicyFileError(ValueError):
    """Weight file is malformed, truncated, or fails its checksum."""


@dataclass(frozen=True)
class NormalizationBounds:
    v_min: float = 0.0
    v_max: float = 80.0
    o_min: float = 0.0
    o_max: float = 1.0
    a_min: float = 30.0
    a_max: float = 70.0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("v_min", "v_max", "o_min", "o_max", "a_min", "a_max")}


@dataclass(frozen=True)
class Observation:
    """Raw (unnormalized) agent observation."""

    v_mph: float
    occupancy: float
    v_up_mph: float
    occupancy_up: float
    a_down_mph: float

    def normalized(self, bounds: NormalizationBounds) -> np.ndarray:
        b = bounds
        vec = np.array([
            (self.v_mph - b.v_min) / (b.v_max - b.v_min),
            (self.occupancy - b.o_min) / (b.o_max - b.o_min),
            (self.v_up_mph - b.v_min) / (b.v_max - b.v_min),
            (self.occupancy_up - b.o_min) / (b.o_max - b.o_min),
            (self.a_down_mph - b.a_min) / (b.a_max - b.a_min),
        ])
        return np.clip(vec, 0.0, 1.0)

    def to_dict(self) -> dict:
        return {"v": self.v_mph, "o": self.occupancy, "v_up": self.v_up_mph,
                "o_up": self.occupancy_up, "a_down": self.a_down_mph}


def build_observation(window, window_up, a_down_mph: float,
                      bounds: NormalizationBounds = NormalizationBounds()) -> Observation:
    """Assemble an agent observation from two sensor windows.

    ``window``/``window_up`` only need ``speed_mph`` and ``occupancy``
    attributes. For the most downstream agent pass the corridor's default
    maximum limit as ``a_down_mph``; for the most upstream agent pass its own
    window as ``window_up``.
    """
    return Observation(
        v_mph=window.speed_mph,
        occupancy=window.occupancy,
        v_up_mph=window_up.speed_mph,
        occupancy_up=window_up.occupancy,
        a_down_mph=a_down_mph,
    )


# -- network -------------------------------------------------------------------

class MLP:
    """Tiny fully connected network with tanh hidden layers, float64."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise ValueError("weight/bias shape mismatch")

    @classmethod
    def init(cls, layer_sizes: list[int], rng: np.random.Generator, out_scale: float = 0.01) -> "MLP":
        weights, biases = [], []
        for i, (n_in, n_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
            scale = np.sqrt(2.0 / n_in)
            if i == len(layer_sizes) - 2:
                scale = out_scale          # near-uniform initial action distribution
            weights.append(rng.normal(0.0, scale, (n_in, n_out)))
            biases.append(np.zeros(n_out))
        return cls(weights, biases)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ w + b)
        return h @ self.weights[-1] + self.biases[-1]

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping activations for a matching backward()."""
        acts = [np.asarray(x, dtype=np.float64)]
        h = acts[0]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ w + b)
            acts.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return out, acts

    def backward(self, acts, grad_out: np.ndarray):
        """Gradients of sum(grad_out * output) w.r.t. parameters and input."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        g = np.asarray(grad_out, dtype=np.float64)
        for layer in range(len(self.weights) - 1, -1, -1):
            a_in = acts[layer]
            grads_w[layer] = a_in.T @ g
            grads_b[layer] = g.sum(axis=0)
            if layer > 0:
                g = (g @ self.weights[layer].T) * (1.0 - acts[layer] ** 2)
        return grads_w, grads_b

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class PolicyParameters:
    """Actor network plus the normalization bounds it was trained with."""

    actor: MLP
    bounds: NormalizationBounds = field(default_factory=NormalizationBounds)
    action_set: tuple[int, ...] = (30, 40, 50, 60, 70)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        sizes = self.actor.layer_sizes
        if sizes[0] != 5:
            raise ValueError(f"actor input must be 5-dimensional, got {sizes[0]}")
        if sizes[-1] != len(self.action_set):
            raise ValueError("actor output width must match the action set")
        for p in self.actor.params():
            if not np.all(np.isfinite(p)):
                raise ValueError("non-finite actor parameters")

    def logits(self, obs_vec: np.ndarray) -> np.ndarray:
        return self.actor.forward(obs_vec)


def init_policy(hidden: tuple[int, ...] = (64, 64), seed: int = 0,
                action_set: tuple[int, ...] = (30, 40, 50, 60, 70)) -> PolicyParameters:
    rng = np.random.default_rng(seed)
    sizes = [5, *hidden, len(action_set)]
    return PolicyParameters(actor=MLP.init(sizes, rng), action_set=action_set)


# -- masking and action selection -----------------------------------------------

def invalid_actions(a_down_mph: float, action_set=(30, 40, 50, 60, 70), a_diff: int = 10) -> set[int]:
    """Actions that would exceed the downstream action by more than a_diff."""
    return {a for a in action_set if a > a_down_mph + a_diff}


def valid_mask(a_down_mph: float, action_set=(30, 40, 50, 60, 70), a_diff: int = 10) -> np.ndarray:
    bad = invalid_actions(a_down_mph, action_set, a_diff)
    return np.array([a not in bad for a in action_set])


@dataclass(frozen=True)
class MaskedDistribution:
    logits: np.ndarray
    mask: np.ndarray            # True where the action is valid

    def __post_init__(self):
        if not self.mask.any():
            raise RuntimeError("all actions masked; cannot form a distribution")

    @functools.cached_property
    def probabilities(self) -> np.ndarray:
        z = np.where(self.mask, self.logits, NEG_INF)
        z = z - z.max()
        e = np.where(self.mask, np.exp(z), 0.0)
        return e / e.sum()

    def log_prob(self, index: int) -> float:
        p = self.probabilities
        return float(np.log(p[index]))

    def entropy(self) -> float:
        p = self.probabilities
        nz = p > 0
        return float(-(p[nz] * np.log(p[nz])).sum())

    def argmax(self) -> int:
        z = np.where(self.mask, self.logits, NEG_INF)
        return int(np.argmax(z))

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.choice(len(self.logits), p=self.probabilities))


def act(params: PolicyParameters, obs: Observation, mask: np.ndarray,
        mode: str = "argmax", rng: np.random.Generator | None = None):
    """Evaluate the policy for one agent.

    Returns (action_mph, log_prob, distribution). ``mode`` is "argmax" for
    deployment or "sample" for training rollouts (requires ``rng``).
    """
    vec = obs.normalized(params.bounds)
    dist = MaskedDistribution(params.logits(vec), np.asarray(mask, dtype=bool))
    if mode == "argmax":
        idx = dist.argmax()
    elif mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        idx = dist.sample(rng)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return params.action_set[idx], dist.log_prob(idx), dist


@dataclass(frozen=True)
class SweepStep:
    gantry_index: int
    action_mph: int
    log_prob: float
    obs: Observation
    mask: np.ndarray


def sequential_sweep(params: PolicyParameters, windows, config: CorridorConfig,
                     mode: str = "argmax", rng: np.random.Generator | None = None,
                     correction=None) -> list[SweepStep]:
    """Run all agents in downstream-to-upstream order.

    ``windows`` is one sensor window per gantry, index-aligned with
    ``config.gantries``. Each agent's observation carries the downstream
    neighbor's already-decided action; when ``correction`` is given (the
    deployed pipeline's speed-matching step) the corrected value is what
    propagates upstream. The most downstream agent sees the corridor's
    default maximum limit instead.
    """
    n = len(config.gantries)
    if len(windows) != n:
        raise ValueError("need exactly one sensor window per gantry")
    steps: list[SweepStep] = []
    a_down = float(config.max_limit_default)
    for i in range(n):
        win_up = windows[i + 1] if i + 1 < n else windows[i]
        obs = build_observation(windows[i], win_up, a_down, params.bounds)
        mask = valid_mask(a_down, params.action_set, config.a_diff)
        action, logp, _ = act(params, obs, mask, mode, rng)
        steps.append(SweepStep(i, action, logp, obs, mask))
        a_down = float(correction(i, action, windows[i])) if correction else float(action)
    return steps


# -- weight file format ----------------------------------------------------------
#
# A policy file is a single JSON header line followed by the raw little-endian
# float64 bytes of every parameter array, concatenated in layer order
# (W0, b0, W1, b1, ...), C (row-major) layout. The header pins the format
# version, layer sizes, normalization bounds, action set, byte order, and a
# SHA-256 checksum of the parameter blob so a gateway can refuse corrupt or
# truncated files before hot-loading them.

POLICY_FORMAT = "vsl-policy"
POLICY_VERSION = 1


def save_policy(params: PolicyParameters, path) -> None:
    blob = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in params.actor.params())
    header = {
        "format": POLICY_FORMAT,
        "version": POLICY_VERSION,
        "layer_sizes": params.actor.layer_sizes,
        "bounds": params.bounds.to_dict(),
        "action_set": list(params.action_set),
        "dtype": "<f8",
        "sha256": hashlib.sha256(blob).hexdigest(),
        "meta": params.meta,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(blob)


def load_policy(path) -> PolicyParameters:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise PolicyFileError(f"{path}: bad header: {exc}") from exc
    if header.get("format") != POLICY_FORMAT:
        raise PolicyFileError(f"{path}: not a policy file")
    if header.get("version") != POLICY_VERSION:
        raise PolicyFileError(f"{path}: unsupported version {header.get('version')}")
    if hashlib.sha256(blob).hexdigest() != header["sha256"]:
        raise PolicyFileError(f"{path}: checksum mismatch")

    sizes = header["layer_sizes"]
    weights, biases = [], []
    offset = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w_bytes = n_in * n_out * 8
        weights.append(np.frombuffer(blob, dtype="<f8", count=n_in * n_out, offset=offset)
                       .reshape(n_in, n_out).astype(np.float64))
        offset += w_bytes
        biases.append(np.frombuffer(blob, dtype="<f8", count=n_out, offset=offset)
                      .astype(np.float64))
        offset += n_out * 8
    if offset != len(blob):
        raise PolicyFileError(f"{path}: blob length {len(blob)} does not match layer sizes")

    bounds = NormalizationBounds(**header["bounds"])
    return PolicyParameters(actor=MLP(weights, biases), bounds=bounds,
                            action_set=tuple(header["action_set"]), meta=header.get("meta", {}))
