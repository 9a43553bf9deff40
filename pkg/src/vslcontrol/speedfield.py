"""Dense time-space(-lane) speed fields and their file container.

A speed field is a regular grid of speeds in travel-offset coordinates
(x = 0 at the corridor's upstream end, growing in the travel direction),
with a fixed time step and space step. The canonical evaluation resolution
is 4 seconds by 0.02 miles. Fields come from two places:

  - ground truth: bilinear resampling of the simulator's per-cell speed
    history (optionally fanned out per lane with fixed offsets), and
  - sensor reconstruction: what the roadside radar stream implies, linear
    in space between sensors and sample-and-hold in time over each
    reporting interval. This is the deliberately coarse view.

The file container is a JSON header line (t0_s, dt_s, x0_mi, dx_mi, lanes,
direction, shape, dtype, checksum) followed by the raw grid bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .corridor import CorridorConfig
from .sim import SensorReading

FIELD_FORMAT = "vsl-speed-field"
FIELD_VERSION = 1


class FieldFormatError(ValueError):
    pass


@dataclass
class SpeedField:
    t0_s: float
    dt_s: float
    x0_mi: float
    dx_mi: float
    values: np.ndarray              # (time, space, lane), mph
    direction: str = "downstream-x"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        if self.values.ndim != 3:
            raise ValueError("values must be a (time, space, lane) grid")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("speed field must be finite and nonnegative")

    @property
    def lanes(self) -> int:
        return self.values.shape[2]

    @property
    def t_end_s(self) -> float:
        return self.t0_s + (self.values.shape[0] - 1) * self.dt_s

    @property
    def x_end_mi(self) -> float:
        return self.x0_mi + (self.values.shape[1] - 1) * self.dx_mi

    def times(self) -> np.ndarray:
        return self.t0_s + np.arange(self.values.shape[0]) * self.dt_s

    def xs(self) -> np.ndarray:
        return self.x0_mi + np.arange(self.values.shape[1]) * self.dx_mi

    def sample(self, t_s, x_mi, lane: int = 0) -> np.ndarray:
        """Bilinear interpolation in (t, x); clamps outside the grid."""
        t = (np.asarray(t_s, dtype=np.float64) - self.t0_s) / self.dt_s
        x = (np.asarray(x_mi, dtype=np.float64) - self.x0_mi) / self.dx_mi
        nt, nx, _ = self.values.shape
        t = np.clip(t, 0.0, nt - 1.0)
        x = np.clip(x, 0.0, nx - 1.0)
        t0 = np.clip(np.floor(t).astype(int), 0, nt - 2) if nt > 1 else np.zeros_like(t, dtype=int)
        x0 = np.clip(np.floor(x).astype(int), 0, nx - 2) if nx > 1 else np.zeros_like(x, dtype=int)
        ft = t - t0
        fx = x - x0
        v = self.values[:, :, lane]
        t1 = np.minimum(t0 + 1, nt - 1)
        x1 = np.minimum(x0 + 1, nx - 1)
        return ((1 - ft) * (1 - fx) * v[t0, x0] + (1 - ft) * fx * v[t0, x1]
                + ft * (1 - fx) * v[t1, x0] + ft * fx * v[t1, x1])

    def lane_min(self) -> np.ndarray:
        return self.values.min(axis=2)

    def window(self, t0_s: float, t1_s: float, x0_mi: float, x1_mi: float) -> "SpeedField":
        """Sub-grid covering [t0, t1] x [x0, x1] (snapped outward to the grid)."""
        ti0 = max(0, int(np.floor((t0_s - self.t0_s) / self.dt_s)))
        ti1 = min(self.values.shape[0], int(np.ceil((t1_s - self.t0_s) / self.dt_s)) + 1)
        xi0 = max(0, int(np.floor((x0_mi - self.x0_mi) / self.dx_mi)))
        xi1 = min(self.values.shape[1], int(np.ceil((x1_mi - self.x0_mi) / self.dx_mi)) + 1)
        return SpeedField(self.t0_s + ti0 * self.dt_s, self.dt_s,
                          self.x0_mi + xi0 * self.dx_mi, self.dx_mi,
                          self.values[ti0:ti1, xi0:xi1, :], self.direction)


EVAL_DT_S = 4.0
EVAL_DX_MI = 0.02


def _bilinear_resample(src_t, src_x, src_v, dst_t, dst_x) -> np.ndarray:
    """Resample src_v[(t, x)] onto the dst grid; exact for (bi)linear data."""
    src_t = np.asarray(src_t, dtype=np.float64)
    src_x = np.asarray(src_x, dtype=np.float64)
    ti = np.interp(dst_t, src_t, np.arange(len(src_t)))
    xi = np.interp(dst_x, src_x, np.arange(len(src_x)))
    t0 = np.clip(np.floor(ti).astype(int), 0, max(len(src_t) - 2, 0))
    x0 = np.clip(np.floor(xi).astype(int), 0, max(len(src_x) - 2, 0))
    t1 = np.minimum(t0 + 1, len(src_t) - 1)
    x1 = np.minimum(x0 + 1, len(src_x) - 1)
    ft = (ti - t0)[:, None]
    fx = (xi - x0)[None, :]
    return ((1 - ft) * (1 - fx) * src_v[np.ix_(t0, x0)] + (1 - ft) * fx * src_v[np.ix_(t0, x1)]
            + ft * (1 - fx) * src_v[np.ix_(t1, x0)] + ft * fx * src_v[np.ix_(t1, x1)])


def field_from_history(times_s, cell_xs, speeds, dt_s: float = EVAL_DT_S,
                       dx_mi: float = EVAL_DX_MI,
                       lane_offsets_mph=None) -> SpeedField:
    """Ground-truth field from a simulator speed history.

    ``speeds`` is (time, cell). When ``lane_offsets_mph`` is given the field
    becomes lane-resolved by applying the fixed per-lane speed offsets.
    """
    times_s = np.asarray(times_s, dtype=np.float64)
    t0, t1 = times_s[0], times_s[-1]
    dst_t = np.arange(t0, t1 + 1e-9, dt_s)
    dst_x = np.arange(cell_xs[0], cell_xs[-1] + 1e-9, dx_mi)
    base = _bilinear_resample(times_s, cell_xs, np.asarray(speeds, dtype=np.float64), dst_t, dst_x)
    if lane_offsets_mph is None:
        grid = base[:, :, None]
    else:
        offs = np.asarray(lane_offsets_mph, dtype=np.float64)
        grid = np.clip(base[:, :, None] + offs[None, None, :], 0.0, None)
    return SpeedField(float(dst_t[0]), dt_s, float(dst_x[0]), dx_mi, grid)


def field_from_readings(readings: list[SensorReading], corridor: CorridorConfig,
                        t0_s: float, t1_s: float, dt_s: float = EVAL_DT_S,
                        dx_mi: float = EVAL_DX_MI, period_s: float = 30.0,
                        per_lane: bool = False) -> SpeedField:
    """Radar-implied field: linear between sensors, held over each interval.

    Lane-average mode volume-weights speeds across lanes (matching what the
    controllers consume); per-lane mode keeps each reported lane separate.
    """
    order = sorted(corridor.sensors, key=lambda s: corridor.travel_offset(s.milepost))
    sensor_x = np.array([corridor.travel_offset(s.milepost) for s in order])
    index = {s.id: j for j, s in enumerate(order)}
    lanes = corridor.lanes if per_lane else 1

    n_periods = int(round((t1_s - t0_s) / period_s))
    per_interval = np.full((n_periods, len(order), lanes), np.nan)
    for r in readings:
        k = int(np.ceil((r.timestamp_s - t0_s) / period_s)) - 1
        if not (0 <= k < n_periods) or r.sensor_id not in index:
            continue
        j = index[r.sensor_id]
        if per_lane:
            per_interval[k, j, :] = np.asarray(r.speed_mph)[:lanes]
        else:
            vol = np.asarray(r.volume_veh)
            spd = np.asarray(r.speed_mph)
            per_interval[k, j, 0] = (vol * spd).sum() / vol.sum() if vol.sum() > 0 else spd.mean()
    # Hold the last known value through gaps; lead-in gaps get the first value.
    for j in range(len(order)):
        for ln in range(lanes):
            col = per_interval[:, j, ln]
            good = ~np.isnan(col)
            if not good.any():
                col[:] = corridor.max_limit_default
                continue
            idx = np.where(good, np.arange(len(col)), -1)
            np.maximum.accumulate(idx, out=idx)
            first = np.argmax(good)
            idx[idx < 0] = first
            per_interval[:, j, ln] = col[idx]

    dst_t = np.arange(t0_s, t1_s + 1e-9, dt_s)
    dst_x = np.arange(sensor_x[0], sensor_x[-1] + 1e-9, dx_mi)
    grids = []
    for ln in range(lanes):
        # sample-and-hold in time: interval k covers (t0 + k*P, t0 + (k+1)*P]
        tk = np.clip(((dst_t - t0_s) / period_s).astype(int), 0, n_periods - 1)
        xi = np.interp(dst_x, sensor_x, np.arange(len(sensor_x)))
        x0 = np.clip(np.floor(xi).astype(int), 0, max(len(sensor_x) - 2, 0))
        x1 = np.minimum(x0 + 1, len(sensor_x) - 1)
        fx = (xi - x0)[None, :]
        v = per_interval[:, :, ln]
        grids.append((1 - fx) * v[np.ix_(tk, x0)] + fx * v[np.ix_(tk, x1)])
    grid = np.stack(grids, axis=2)
    return SpeedField(float(dst_t[0]), dt_s, float(dst_x[0]), dx_mi, np.clip(grid, 0.0, None))


# -- file container ------------------------------------------------------------------


def save_field(field: SpeedField, path, dtype: str = "<f4") -> None:
    blob = np.ascontiguousarray(field.values, dtype=dtype).tobytes()
    header = {
        "format": FIELD_FORMAT,
        "version": FIELD_VERSION,
        "t0_s": field.t0_s,
        "dt_s": field.dt_s,
        "x0_mi": field.x0_mi,
        "dx_mi": field.dx_mi,
        "lanes": field.lanes,
        "direction": field.direction,
        "shape": list(field.values.shape),
        "dtype": dtype,
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(blob)


def load_field(path) -> SpeedField:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise FieldFormatError(f"{path}: bad header: {exc}") from exc
    if header.get("format") != FIELD_FORMAT:
        raise FieldFormatError(f"{path}: not a speed-field file")
    if header.get("version") != FIELD_VERSION:
        raise FieldFormatError(f"{path}: unsupported version")
    if hashlib.sha256(blob).hexdigest() != header["sha256"]:
        raise FieldFormatError(f"{path}: checksum mismatch")
    shape = tuple(header["shape"])
    values = np.frombuffer(blob, dtype=header["dtype"]).reshape(shape).astype(np.float64)
    return SpeedField(header["t0_s"], header["dt_s"], header["x0_mi"], header["dx_mi"],
                      values, header.get("direction", "downstream-x"))
