import numpy as np
import pytest

from vslcontrol.corridor import (CorridorConfig, CorridorConfigError, Gantry, Sensor,
                                 assign_critical_sensor, build_i24_westbound,
                                 corridor_from_dict, corridor_to_dict, critical_sensor_map,
                                 load_corridor, save_corridor, upstream_neighbor)


def make_corridor(gantry_mps, sensor_mps, direction="WB", length=10.0, **kwargs):
    if direction == "WB":
        gantry_mps = sorted(gantry_mps)
    else:
        gantry_mps = sorted(gantry_mps, reverse=True)
    gantries = tuple(Gantry(f"G{i}", mp, 70) for i, mp in enumerate(gantry_mps))
    sensors = tuple(Sensor(f"S{i}", mp, 4) for i, mp in enumerate(sensor_mps))
    return CorridorConfig(name="t", direction=direction, length_miles=length,
                          gantries=gantries, sensors=sensors, lanes=4, **kwargs)


class TestAssignment:
    def test_smallest_nonnegative_downstream_offset(self):
        # WB: downstream = smaller milepost
        c = make_corridor([60.0], [59.9, 60.15, 60.4], length=61.0)
        assert assign_critical_sensor(c, c.gantries[0]) == "S0"

    def test_nearest_fallback_when_nothing_downstream(self):
        c = make_corridor([60.0], [60.5, 61.0], length=61.5)
        assert assign_critical_sensor(c, c.gantries[0]) == "S0"

    def test_downstream_beyond_radius_falls_back_to_nearest(self):
        # only downstream sensor is 0.5 mi away, an upstream one is 0.1 mi
        c = make_corridor([60.0], [59.5, 60.1], length=61.0)
        assert assign_critical_sensor(c, c.gantries[0]) == "S1"

    def test_no_sensors_is_configuration_error(self):
        c = make_corridor([60.0], [60.1], length=61.0)
        bare = CorridorConfig(name="t", direction="WB", length_miles=61.0,
                              gantries=c.gantries, sensors=(), lanes=4)
        with pytest.raises(CorridorConfigError):
            assign_critical_sensor(bare, bare.gantries[0])

    def test_synthetic_deployment_layout_offsets(self):
        # 34 gantries at half-mile spacing, sensors every 0.3 miles: every
        # gantry must find a sensor 0 to 0.2 miles downstream.
        c = build_i24_westbound()
        sensors = {s.id: s for s in c.sensors}
        for g in c.gantries:
            s = sensors[assign_critical_sensor(c, g)]
            off = c.downstream_offset(g.milepost, s.milepost)
            assert 0.0 <= off <= 0.2 + 1e-9

    def test_assignment_total_and_monotone(self):
        c = build_i24_westbound()
        assigned = critical_sensor_map(c)
        assert len(assigned) == len(c.gantries)
        sensors = {s.id: s for s in c.sensors}
        xs = [c.travel_offset(sensors[sid].milepost) for sid in assigned]
        # walking gantries in the travel direction (upstream end first),
        # assigned sensors advance monotonically
        assert all(a >= b - 1e-9 for a, b in zip(xs[:-1], xs[1:]))

    def test_eastbound_direction_flip(self):
        c = make_corridor([60.0], [59.9, 60.15], direction="EB", length=61.0)
        # EB: downstream = larger milepost, so 60.15 is 0.15 downstream
        assert assign_critical_sensor(c, c.gantries[0]) == "S1"
        assert c.downstream_offset(60.0, 60.15) == pytest.approx(0.15)


class TestNeighbors:
    def test_chain(self):
        c = make_corridor(np.linspace(51, 58, 8), [51.0, 58.0], length=10.0)
        assert upstream_neighbor(c, 0) == 1
        assert upstream_neighbor(c, 7) is None
        seen = []
        i = 0
        while i is not None:
            seen.append(i)
            i = upstream_neighbor(c, i)
        assert seen == list(range(8))

    def test_out_of_range(self):
        c = make_corridor([60.0], [60.0], length=61.0)
        with pytest.raises(IndexError):
            upstream_neighbor(c, 5)


class TestInvariants:
    def test_action_set_must_be_increasing_multiples_of_10(self):
        with pytest.raises(CorridorConfigError):
            make_corridor([60.0], [60.0], length=61.0, action_set=(30, 45, 70))

    def test_gantry_max_limit_range(self):
        with pytest.raises(CorridorConfigError):
            CorridorConfig(name="t", direction="WB", length_miles=2.0,
                           gantries=(Gantry("G0", 1.0, 80),),
                           sensors=(Sensor("S0", 1.0, 4),), lanes=4)

    def test_gantry_ordering_enforced(self):
        with pytest.raises(CorridorConfigError):
            CorridorConfig(name="t", direction="WB", length_miles=5.0,
                           gantries=(Gantry("G0", 3.0, 70), Gantry("G1", 1.0, 70)),
                           sensors=(Sensor("S0", 1.0, 4),), lanes=4)

    def test_shipped_layout_counts(self):
        c = build_i24_westbound()
        assert len(c.gantries) == 34
        assert len(c.sensors) == 60
        assert c.length_miles == 17.0
        reduced = [g for g in c.gantries if g.max_limit < 70]
        assert len(reduced) == 6
        # the reduced-limit gantries are the six most downstream ones
        assert [g.id for g in reduced] == [g.id for g in c.gantries[:6]]


class TestSerialization:
    def test_yaml_round_trip(self, tmp_path):
        c = build_i24_westbound()
        path = tmp_path / "corridor.yaml"
        save_corridor(c, path)
        loaded = load_corridor(path)
        assert loaded == c
        assert loaded.digest() == c.digest()

    def test_dict_round_trip(self):
        c = build_i24_westbound()
        assert corridor_from_dict(corridor_to_dict(c)) == c

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("direction: WB\n")
        with pytest.raises(CorridorConfigError):
            load_corridor(path)
