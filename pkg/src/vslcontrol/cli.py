"""Command-line entry points.

    vslcontrol train              train a policy on the merge scenario
    vslcontrol simulate           closed-loop episode -> decision/sensor logs + field
    vslcontrol run-live           start the live gateway (websocket service)
    vslcontrol replay             open-loop replay of a recorded sensor log
    vslcontrol evaluate-warnings  warning audit of a decision log vs a speed field
    vslcontrol evaluate-response  response delay to detected congestion events
    vslcontrol report             attribution shares of a decision log
    vslcontrol render             time-space CSV/PNG from a log or field
"""

from __future__ import annotations

import argparse
import json
import sys

from . import corridor as corridor_mod
from .corridor import load_corridor
from .guards import GuardConfig
from .policy import load_policy, save_policy
from .sim import IncidentEvent, SimConfig, build_testing_scenario


def _load_scenario_file(path):
    """Scenario file: YAML with optional sim overrides and incident list."""
    import yaml
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    incidents = tuple(IncidentEvent(**inc) for inc in data.pop("incidents", []))
    sim_kwargs = data.get("sim", {})
    for key in ("mainline_demand_profile",):
        if key in sim_kwargs:
            sim_kwargs[key] = tuple(tuple(p) for p in sim_kwargs[key])
    if "ramps" in sim_kwargs:
        sim_kwargs["ramps"] = tuple(
            (r["milepost"], tuple(tuple(p) for p in r["profile"]), r.get("lanes", 1))
            for r in sim_kwargs["ramps"])
    return SimConfig(incidents=incidents, **sim_kwargs)


def _corridor_from_args(args):
    if getattr(args, "corridor", None):
        return load_corridor(args.corridor)
    return corridor_mod.build_i24_westbound()


def cmd_train(args):
    from .training import TrainConfig, RewardWeights, train

    overrides = {}
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
    weights = RewardWeights(**overrides.pop("reward_weights", {}))
    hidden = overrides.pop("hidden", None)
    if hidden is not None:
        overrides["hidden"] = tuple(hidden)
    config = TrainConfig(**overrides)
    result = train(config, weights, curve_path=args.curve, verbose=True)
    save_policy(result.params, args.out)
    print(f"saved {args.out} (best mean episode reward {result.best_reward:.2f} "
          f"at update {result.best_update}, {result.wall_time_s:.0f}s)")


def cmd_simulate(args):
    from .episode import MarlController, run_episode
    from .logs import write_decision_log, write_sensor_log
    from .speedfield import save_field

    corridor = _corridor_from_args(args)
    sim_config = _load_scenario_file(args.scenario) if args.scenario else \
        build_testing_scenario()[1]
    policy = load_policy(args.policy)
    controller = MarlController(policy, GuardConfig())
    episode = run_episode(corridor, sim_config, controller, args.duration)
    if args.out_log:
        write_decision_log(args.out_log, corridor, episode.decisions)
        print(f"wrote {args.out_log}")
    if args.out_sensor_log:
        write_sensor_log(args.out_sensor_log, corridor, episode.readings)
        print(f"wrote {args.out_sensor_log}")
    if args.out_field:
        save_field(episode.truth_field(lane_resolved=True), args.out_field)
        print(f"wrote {args.out_field}")


def cmd_run_live(args):
    import uvicorn
    from .gateway import GatewayService, build_app, service_from_env, ingest_fixture

    corridor = _corridor_from_args(args)
    policy = load_policy(args.policy)
    kwargs = {}
    if args.mode == "closed":
        kwargs["sim_config"] = (_load_scenario_file(args.scenario) if args.scenario
                                else build_testing_scenario()[1])
        mode = "closed_loop"
    else:
        kwargs["feed"] = ingest_fixture(args.fixture, corridor)
        mode = "open_loop"
    if args.max_ticks:
        kwargs["max_ticks"] = args.max_ticks
    service, listen, token = service_from_env(corridor, policy, GuardConfig(), mode,
                                              resume=args.resume, **kwargs)
    if args.listen:
        listen = args.listen
    host, _, port = listen.partition(":")
    app = build_app(service, token=token, tick_interval_s=args.tick_interval)
    print(f"gateway on ws://{listen}/ws ({mode}, log dir {service.log_dir})")
    uvicorn.run(app, host=host, port=int(port or 8700), log_level="warning")


def cmd_replay(args):
    from .gateway import replay_fixture

    corridor = _corridor_from_args(args)
    policy = load_policy(args.policy)
    n = replay_fixture(corridor, policy, GuardConfig(), args.fixture, args.out_dir,
                       resume=args.resume)
    print(f"replayed {n} ticks into {args.out_dir}/decisions.jsonl")


def cmd_evaluate_warnings(args):
    from .evaluation import warning_audit
    from .logs import read_decision_log
    from .speedfield import load_field

    corridor = _corridor_from_args(args)
    fld = load_field(args.field)
    log = read_decision_log(args.log)
    ledger = warning_audit(fld, log, corridor, per_display_tick=args.per_display_tick)
    print(json.dumps(ledger.summary(), indent=2))


def cmd_evaluate_response(args):
    from .evaluation import detect_events, response_delay
    from .logs import read_decision_log
    from .speedfield import load_field

    corridor = _corridor_from_args(args)
    fld = load_field(args.field)
    log = read_decision_log(args.log)
    events = detect_events(fld, threshold_mph=args.threshold)
    result = response_delay(events, log, corridor, radius_mi=args.radius)
    print(json.dumps(result["stats"], indent=2))
    for ev in result["events"]:
        print(json.dumps(ev))


def cmd_report(args):
    from .evaluation import attribution_report
    from .logs import read_decision_log

    corridor = _corridor_from_args(args)
    log = read_decision_log(args.log)
    peak = tuple(args.peak_hours) if args.peak_hours else None
    report = attribution_report(log, corridor,
                                include_reduced_max=not args.exclude_reduced_max,
                                peak_hours=peak)
    print(json.dumps(report, indent=2))


def cmd_render(args):
    from .evaluation import render_time_space
    from .logs import read_decision_log
    from .speedfield import load_field

    if args.log:
        source = read_decision_log(args.log)
    else:
        source = load_field(args.field)
    render_time_space(source, out_csv=args.out_csv, out_png=args.out_png,
                      mask_non_policy=args.mask_overrides)
    for path in (args.out_csv, args.out_png):
        if path:
            print(f"wrote {path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vslcontrol", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy")
    p.add_argument("--scenario", help="scenario YAML (defaults to the merge scenario)")
    p.add_argument("--config", help="JSON file of TrainConfig overrides")
    p.add_argument("--out", required=True, help="output policy file")
    p.add_argument("--curve", help="training curve CSV")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("simulate", help="closed-loop episode")
    p.add_argument("--corridor", help="corridor YAML (default: shipped 17-mile layout)")
    p.add_argument("--scenario", help="scenario YAML")
    p.add_argument("--policy", required=True)
    p.add_argument("--duration", type=float, default=3600.0)
    p.add_argument("--out-log", help="decision log output")
    p.add_argument("--out-sensor-log", help="sensor log output")
    p.add_argument("--out-field", help="ground-truth speed field output")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("run-live", help="start the gateway service")
    p.add_argument("--corridor")
    p.add_argument("--policy", required=True)
    p.add_argument("--mode", choices=["closed", "open"], required=True)
    p.add_argument("--listen", help="host:port (default env VSL_LISTEN)")
    p.add_argument("--scenario", help="scenario YAML (closed mode)")
    p.add_argument("--fixture", help="sensor log to replay (open mode)")
    p.add_argument("--tick-interval", type=float, default=None,
                   help="wall seconds per tick (default: control period; 0 = flat out)")
    p.add_argument("--max-ticks", type=int)
    p.add_argument("--resume", action="store_true", help="resume from existing journal")
    p.set_defaults(fn=cmd_run_live)

    p = sub.add_parser("replay", help="open-loop fixture replay (no server)")
    p.add_argument("--corridor")
    p.add_argument("--policy", required=True)
    p.add_argument("--fixture", required=True, help="sensor log")
    p.add_argument("--out-dir", default="replay_logs")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("evaluate-warnings", help="warning audit")
    p.add_argument("--corridor")
    p.add_argument("--log", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--per-display-tick", action="store_true")
    p.set_defaults(fn=cmd_evaluate_warnings)

    p = sub.add_parser("evaluate-response", help="response delay to events")
    p.add_argument("--corridor")
    p.add_argument("--log", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--threshold", type=float, default=30.0)
    p.add_argument("--radius", type=float, default=1.0)
    p.set_defaults(fn=cmd_evaluate_response)

    p = sub.add_parser("report", help="attribution shares")
    p.add_argument("--corridor")
    p.add_argument("--log", required=True)
    p.add_argument("--exclude-reduced-max", action="store_true")
    p.add_argument("--peak-hours", nargs=2, type=float, metavar=("H0", "H1"))
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("render", help="time-space rendering")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--log")
    src.add_argument("--field")
    p.add_argument("--out-csv")
    p.add_argument("--out-png")
    p.add_argument("--mask-overrides", action="store_true",
                   help="blank cells where a safety guard overrode the policy")
    p.set_defaults(fn=cmd_render)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except Exception as exc:           # surfaced as a clean CLI error
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
