import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opwatt.simulator import (
    Alternating,
    AlwaysOn,
    BatterySpec,
    NoiseSpec,
    OperatorSpec,
    Periodic,
    PowerState,
    SimulationConfigError,
    make_scenario,
    parse_truth,
    power_at,
    simulate,
    simulate_runs,
    write_truth,
)
from opwatt.trace import validate_trace, write_trace

from helpers import exact_periodic_energy

ZERO = NoiseSpec.zero(0)


def soc_times_s(log):
    return [e.t / 1000 for e in log.soc_events]


def test_idle_only_events_every_100s():
    log, truth = simulate([], BatterySpec(100.0, 1.0, 100), ZERO, max_intervals=3)
    assert soc_times_s(log) == [100.0, 200.0, 300.0, 400.0][: len(log.soc_events)]
    assert [e.soc for e in log.soc_events] == [99, 98, 97, 96][: len(log.soc_events)]
    assert len(truth.interval_ledger) == 3


def test_always_on_adds_power():
    op = OperatorSpec("NQ", (PowerState(1.0, 1.0),), AlwaysOn(1))
    log, _ = simulate([op], BatterySpec(100.0, 1.0, 100), ZERO, max_intervals=4)
    assert np.allclose(np.diff(soc_times_s(log)), 50.0)
    assert soc_times_s(log)[0] == pytest.approx(50.0)


@pytest.mark.parametrize("seed", [0, 1, 7])
def test_ledger_matches_independent_integration(seed):
    ops_desc = [(40.0, 20.0, 0.0, 1.98), (70.0, 25.0, 10.0, 3.28)]
    ops = [OperatorSpec(f"op{i}", (PowerState(d, 1.0),), Periodic(p, a, 1, ph))
           for i, (p, a, ph, d) in enumerate(ops_desc)]
    battery = BatterySpec(100.0, 0.717, 100)
    _, truth = simulate(ops, battery, NoiseSpec.zero(seed), max_intervals=30)
    for iv in truth.interval_ledger:
        assert iv.total_j == pytest.approx(100.0, rel=1e-6)
        assert iv.clean_active_j + iv.clean_idle_j == pytest.approx(100.0, rel=1e-6)
        oracle = exact_periodic_energy(iv.start_s, iv.end_s, 0.717, ops_desc)
        assert oracle == pytest.approx(100.0, rel=1e-6)
        assert iv.idle_j == pytest.approx(0.717 * (iv.end_s - iv.start_s), rel=1e-9)


def test_ledger_under_noise_stays_within_noise_bounds():
    ops, battery, noise = make_scenario("fixed-concurrent")
    log, truth = simulate(ops, battery, noise, max_intervals=99)
    sigma = noise.power_sigma_frac
    for iv in truth.interval_ledger:
        assert iv.total_j == pytest.approx(100.0, rel=1e-6)
        assert abs(iv.clean_active_j + iv.clean_idle_j - 100.0) <= 3 * sigma * 100.0
    jitter = np.array(soc_times_s(log)) - np.array(truth.crossings_s[: len(log.soc_events)])
    assert abs(np.std(jitter) - noise.soc_timing_sigma_s) < 0.25
    assert np.max(np.abs(jitter)) < 5 * noise.soc_timing_sigma_s


def test_power_at_examples():
    b = BatterySpec(100.0, 0.717, 100)
    assert power_at([], b) == 0.717
    assert power_at([PowerState(1.25, 1.0)] * 2, b) == pytest.approx(3.217)
    ops, _, _ = make_scenario("two-state(8, 0.5)")
    high = max(ops[0].states, key=lambda s: s.dyn_power_w)
    assert power_at([high], b) == pytest.approx(0.717 + 2.0)


def test_truth_power_at_matches_idle_gaps():
    _, truth = simulate([], BatterySpec(100.0, 0.717, 100), ZERO, max_intervals=2)
    assert truth.power_at(10.0) == 0.717
    with pytest.raises(ValueError):
        truth.power_at(-1.0)


def test_scenarios():
    ops, battery, noise = make_scenario("fixed-single")
    assert len(ops) == 1 and isinstance(ops[0].schedule, AlwaysOn) and len(ops[0].states) == 1
    assert battery.e_per_percent == 100.0 and battery.idle_power_w == 0.717
    assert noise.soc_timing_sigma_s == 1.0 and noise.power_sigma_frac == 0.02 and noise.poll_drop_prob == 0.01
    ops, _, _ = make_scenario("two-state(8, 0.5)")
    lo, hi = sorted(ops[0].states, key=lambda s: s.dyn_power_w)
    assert hi.dyn_power_w == pytest.approx(8 * lo.dyn_power_w)
    assert lo.probability == hi.probability == 0.5
    assert make_scenario("two-state:4,0.25")[0][0].states[1].probability in (0.25, 0.75)
    for name in ("fixed-concurrent", "variable-alternating", "realworld-like", "fixed-nq"):
        assert make_scenario(name)[0]
    with pytest.raises(SimulationConfigError):
        make_scenario("no-such-thing")


def test_invalid_specs_rejected():
    with pytest.raises(ValueError):
        OperatorSpec("NQ", (PowerState(1.0, 0.4), PowerState(2.0, 0.4)), AlwaysOn(1))
    with pytest.raises(ValueError):
        PowerState(-1.0, 1.0)
    with pytest.raises((ValueError, SimulationConfigError)):
        OperatorSpec("NQ", (PowerState(1.0, 1.0),), Periodic(10.0, 0.0, 1))
    with pytest.raises((ValueError, SimulationConfigError)):
        OperatorSpec("NQ", (PowerState(1.0, 1.0),), Periodic(10.0, 20.0, 1))
    with pytest.raises(ValueError):
        NoiseSpec(poll_drop_prob=1.0)
    with pytest.raises(SimulationConfigError):
        simulate([], BatterySpec(100.0, 0.717, 100), ZERO)


def test_zero_power_deadlock_is_config_error():
    with pytest.raises((SimulationConfigError, ValueError)):
        simulate([], BatterySpec(100.0, 0.0, 100), ZERO, max_intervals=1)


def test_same_seed_bit_identical():
    ops, battery, noise = make_scenario("realworld-like")
    a = simulate(ops, battery, noise, max_intervals=20)
    b = simulate(ops, battery, noise, max_intervals=20)
    assert write_trace(a[0]) == write_trace(b[0])
    assert write_truth(a[1]) == write_truth(b[1])
    c = simulate(ops, battery, NoiseSpec(seed=1), max_intervals=20)
    assert write_trace(c[0]) != write_trace(a[0])


def test_truth_round_trip():
    ops, battery, noise = make_scenario("two-state(4, 0.5)")
    _, truth = simulate(ops, battery, noise, max_intervals=5)
    text = write_truth(truth)
    back = parse_truth(text)
    assert write_truth(back) == text
    assert back.absolute_power("FaceRec") == pytest.approx(truth.absolute_power("FaceRec"))


def test_simulate_runs_concatenates_discharges():
    ops, battery, noise = make_scenario("fixed-single")
    runs = simulate_runs(ops, battery, noise, 150)
    assert [len(r[0].soc_events) - 1 for r in runs] == [99, 51]
    assert all(validate_trace(log) == [] for log, _ in runs)


def test_interval_never_exceeds_idle_bound():
    ops, battery, _ = make_scenario("realworld-like")
    log, _ = simulate(ops, battery, ZERO, max_intervals=40)
    bound = battery.e_per_percent / battery.idle_power_w
    assert max(np.diff(soc_times_s(log))) < bound
    idle_log, _ = simulate([], battery, ZERO, max_intervals=3)
    assert np.diff(soc_times_s(idle_log)) == pytest.approx(bound, abs=1e-3)


@settings(max_examples=25, deadline=None)
@given(
    base=st.floats(0.1, 3.0),
    extra=st.floats(0.01, 2.0),
    period=st.floats(10.0, 120.0),
    duty=st.floats(0.1, 0.9),
)
def test_more_dynamic_power_never_delays_crossings(base, extra, period, duty):
    """Raising an operator's power moves every SoC crossing earlier or keeps it."""
    battery = BatterySpec(100.0, 0.717, 100)

    def crossings(d):
        op = OperatorSpec("X", (PowerState(d, 1.0),), Periodic(period, period * duty, 1))
        _, truth = simulate([op], battery, ZERO, max_intervals=8)
        return np.array(truth.crossings_s)

    lo, hi = crossings(base), crossings(base + extra)
    assert np.all(hi <= lo + 1e-9)
    assert hi[1] - hi[0] <= battery.e_per_percent / battery.idle_power_w


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.01, 5.0))
def test_always_on_intervals_shrink_with_power(d, extra):
    battery = BatterySpec(100.0, 0.717, 100)

    def mean_interval(p):
        op = OperatorSpec("X", (PowerState(p, 1.0),), AlwaysOn(1))
        log, _ = simulate([op], battery, ZERO, max_intervals=3)
        return float(np.mean(np.diff(soc_times_s(log))))

    assert mean_interval(d + extra) < mean_interval(d)
    assert mean_interval(d) == pytest.approx(100.0 / (0.717 + d), abs=2e-3)


def test_alternating_schedule_windows():
    w = Alternating(120.0, 10.0, 1).windows()
    first = [next(w) for _ in range(2)]
    assert first[0] == (0.0, 120.0)
    assert first[1][1] - first[1][0] == 10.0
    assert math.isclose(first[1][0], 130.0)
