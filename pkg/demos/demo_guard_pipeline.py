"""Demo 2: the four-step guard pipeline, stage by stage.

Walks the guard formulas through hand-picked inputs, then runs a full
control tick over a congestion-tail snapshot and prints each gantry's
journey raw -> speed-matched -> max-limited -> debounced, with attribution.
"""

from vslcontrol.corridor import build_i24_westbound
from vslcontrol.guards import GuardConfig, SensorWindow, debounce, max_limit_correct, run_tick, speed_match
from vslcontrol.policy import load_policy


def main():
    gc = GuardConfig()
    print("speed matching (posted vs prevailing speed):")
    for a, a_down, v, o in [(30, 70, 52.0, 0.05), (30, 30, 52.0, 0.05),
                            (70, 70, 24.0, 0.30), (50, 70, 52.0, 0.05)]:
        out = speed_match(a, a_down, v, o, gc)
        print(f"  intent {a} mph, downstream {a_down}, traffic {v:.0f} mph, occ {o:.2f}"
              f"  ->  {out} mph")

    print("\nmaximum-limit correction:")
    for v, mx in [(70, 55), (40, 55), (70, 45)]:
        print(f"  {v} mph on a {mx}-mph segment -> {max_limit_correct(v, mx)}")

    print("\ndebounce (driver-order profiles):")
    for profile in [[30, 60, 50], [30, 60, 50, 40], [70, 70, 70]]:
        # driver order reads upstream-first; the pipeline stores downstream-first
        internal = list(reversed(profile))
        fixed = list(reversed(debounce(internal)))
        note = "corrected" if fixed != profile else "untouched"
        print(f"  {profile} -> {fixed}  ({note})")

    print("\nfull tick over a congestion-tail snapshot:")
    corridor = build_i24_westbound()
    policy = load_policy("artifacts/trained_policy.vslw")
    # queue at the six most downstream gantries, free flow upstream
    windows = []
    for i in range(len(corridor.gantries)):
        if i < 6:
            windows.append(SensorWindow(f"S{i}", 90.0, 12.0, 0.55, 0.0))
        else:
            windows.append(SensorWindow(f"S{i}", 90.0, 69.0, 0.08, 0.0))
    decisions = run_tick(policy, windows, corridor, gc, tick=0)
    print(f"  {'gantry':>7} {'max':>4} {'raw':>4} {'sm':>4} {'mslc':>5} {'final':>6}  attribution")
    for d, g in zip(decisions[:12], corridor.gantries[:12]):
        print(f"  {d.gantry_id:>7} {g.max_limit:>4} {d.raw_policy_action:>4} "
              f"{d.after_sm:>4} {d.after_mslc:>5} {d.final:>6}  {d.attribution}")
    print("  ... (driver approaching the queue sees the staircase in reverse order)")


if __name__ == "__main__":
    main()
