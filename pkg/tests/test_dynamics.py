import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from fepstefan.dynamics import (
    SimParams,
    StuckParams,
    run_coupled_zero_range,
    run_fep,
    run_stuck_zero_range,
    run_zero_range,
)
from fepstefan.lattice import ERGODIC, ExclusionConfig, ZeroRangeConfig, map_to_zero_range, two_phased_decompose
from fepstefan.measures import sample_ergodic_torus


def cfg(text):
    return ExclusionConfig.from_string(text)


def zr(*counts):
    return ZeroRangeConfig(np.array(counts))


# --- parameters ------------------------------------------------------------


def test_negative_horizon_is_rejected():
    with pytest.raises(ValueError):
        SimParams(-1.0)


def test_observation_times_must_be_sorted_and_inside_horizon():
    with pytest.raises(ValueError):
        SimParams(1.0, [0.5, 0.2])
    with pytest.raises(ValueError):
        SimParams(1.0, [2.0])


# --- exclusion dynamics ----------------------------------------------------


@pytest.mark.parametrize("text", ["00100010", "1" * 12, "0" * 6])
def test_blocked_configurations_never_move(text):
    eta0 = cfg(text)
    traj = run_fep(eta0, SimParams(1.0, [0.1, 0.5, 1.0], seed=4))
    assert traj.event_count == 0
    assert all(np.array_equal(s, eta0.occupancy) for s in traj.states)


def test_snapshot_times_are_the_requested_ones():
    times = [0.001, 0.002, 0.01]
    traj = run_fep(cfg("1101101011101101"), SimParams(0.01, times, seed=1))
    assert list(traj.times) == times
    assert [t for t, _ in traj.snapshots] == times


def test_same_seed_same_trajectory():
    eta0 = cfg("11011101101101110110")
    a = run_fep(eta0, SimParams(0.05, [0.01, 0.05], seed=99))
    b = run_fep(eta0, SimParams(0.05, [0.01, 0.05], seed=99))
    c = run_fep(eta0, SimParams(0.05, [0.01, 0.05], seed=100))
    assert np.array_equal(a.states, b.states) and a.event_count == b.event_count
    assert not np.array_equal(a.states, c.states)


def test_small_torus_rejected():
    with pytest.raises(ValueError):
        run_fep(cfg("110"), SimParams(1.0))


@settings(max_examples=60, deadline=None)
@given(st.integers(8, 40), st.floats(0.5, 0.9), st.integers(0, 2**32))
def test_ergodic_start_stays_ergodic(n, density, seed):
    eta0 = sample_ergodic_torus(n, min(n - 1, int(math.ceil(density * n))), seed)
    traj = run_fep(eta0, SimParams(0.5, list(np.linspace(0.01, 0.5, 25)), seed=seed))
    for state in traj.states:
        assert state.sum() == eta0.particles
        assert two_phased_decompose(state) is ERGODIC


@settings(max_examples=60, deadline=None)
@given(st.integers(8, 40), st.integers(0, 2**32))
def test_particles_conserved_and_two_phased_absorbing(n, seed):
    rng = np.random.default_rng(seed)
    eta0 = ExclusionConfig((rng.random(n) < 0.5).astype(np.uint8))
    traj = run_fep(eta0, SimParams(0.5, list(np.linspace(0.01, 0.5, 25)), seed=seed))
    seen = False
    for state in traj.states:
        assert state.sum() == eta0.particles
        ok = two_phased_decompose(state) is not None
        assert ok or not seen
        seen |= ok


def test_event_count_within_rate_bound():
    # total enabled rate is at most N, sped up by N^2
    n, horizon = 256, 0.02
    eta0 = sample_ergodic_torus(n, 192, 3)
    traj = run_fep(eta0, SimParams(horizon, seed=3))
    bound = n**3 * horizon
    assert 0 < traj.event_count <= bound + 5 * math.sqrt(bound)


def test_stop_when_two_phased_truncates_at_first_hit():
    eta0 = cfg("1100110011001100")
    times = list(np.linspace(0.0, 1.0, 101))
    traj = run_fep(eta0, SimParams(1.0, times, seed=5), stop_when_two_phased=True)
    assert two_phased_decompose(traj.states[-1]) is not None
    assert all(two_phased_decompose(s) is None for s in traj.states[:-1])
    assert traj.extras["stopped_at"] == traj.times[-1]


def test_marked_zero_tracks_a_zero():
    eta0 = cfg("1101101101101110")
    traj = run_fep(eta0, SimParams(0.2, list(np.linspace(0.01, 0.2, 40)), seed=8), marked_zero=2)
    for state, mark in zip(traj.states, traj.marks):
        assert state[mark] == 0


def test_mapping_commutes_with_dynamics_in_law():
    """Counts seen from the tracked zero match a zero-range run for time N^2 t."""
    eta0 = cfg("1101110110011101")
    n = eta0.size
    t = 1.0 / n**2
    omega0 = map_to_zero_range(eta0, 2)
    reps = 10_000
    from_fep = np.empty(reps, dtype=int)
    from_zr = np.empty(reps, dtype=int)
    for r in range(reps):
        traj = run_fep(eta0, SimParams(t, [t], seed=2 * r), marked_zero=2)
        omega = map_to_zero_range(ExclusionConfig(traj.states[-1]), int(traj.marks[-1]))
        from_fep[r] = omega.counts[0]
        from_zr[r] = run_zero_range(omega0, SimParams(1.0, [1.0], seed=2 * r + 1)).states[-1][0]
    for value in np.union1d(from_fep, from_zr):
        p1, p2 = np.mean(from_fep == value), np.mean(from_zr == value)
        se = math.sqrt(p1 * (1 - p1) / reps + p2 * (1 - p2) / reps)
        assert abs(p1 - p2) <= 3 * se + 1e-12, (value, p1, p2)


# --- zero-range dynamics ---------------------------------------------------


def test_zero_range_without_active_sites_is_static():
    traj = run_zero_range(zr(1, 0, 1, 1, 0), SimParams(10.0, [1.0, 10.0], seed=2))
    assert traj.event_count == 0
    assert all(list(s) == [1, 0, 1, 1, 0] for s in traj.states)


@given(st.lists(st.integers(0, 6), min_size=2, max_size=20), st.integers(0, 2**32))
@settings(deadline=None)
def test_zero_range_conserves_mass(counts, seed):
    traj = run_zero_range(ZeroRangeConfig(np.array(counts)), SimParams(5.0, [1.0, 2.5, 5.0], seed=seed))
    assert all(s.sum() == sum(counts) for s in traj.states)
    assert np.all(traj.high_water >= np.max(traj.states, axis=0))


def test_single_active_site_moves_left_or_right_evenly():
    left = 0
    trials = 2000
    for seed in range(trials):
        traj = run_zero_range(zr(0, 0, 5, 0, 0), SimParams(100.0, seed=seed, max_events=1))
        final = traj.final_state.counts
        assert final[2] == 4 and final.sum() == 5
        left += int(final[1] == 1)
    assert stats.binomtest(left, trials, 0.5).pvalue > 0.01


def test_holding_time_is_exponential_with_total_rate():
    # both box sites are active; any jump pushes some site over the cap
    stuck = StuckParams(0, 2, occupancy_cap=2)
    samples = [run_stuck_zero_range(zr(2, 2, 2), stuck, seed)[1] for seed in range(3000)]
    result = stats.kstest(samples, "expon", args=(0, 1 / 4.0))
    assert result.pvalue > 0.01


def test_zero_range_needs_two_sites():
    with pytest.raises(ValueError):
        run_zero_range(zr(3), SimParams(1.0))


# --- stuck process ---------------------------------------------------------


def test_stuck_exit_immediate_when_box_is_quiet():
    _, exit_time = run_stuck_zero_range(zr(1, 0, 1, 5, 5), StuckParams(0, 3), seed=1)
    assert exit_time == 0.0


def test_stuck_jumps_only_leave_the_box():
    omega0 = zr(3, 4, 2, 0, 0, 7, 1, 0)
    box = StuckParams(0, 3, occupancy_cap=50)
    for seed in range(50):
        traj, _ = run_stuck_zero_range(omega0, box, seed, horizon=20.0)
        final = traj.final_state.counts
        assert final.sum() == omega0.mass
        # sites 4, 5, 6 are at distance >= 2 from the box and never change
        assert list(final[4:7]) == [0, 7, 1]


def test_stuck_box_validation():
    with pytest.raises(ValueError):
        run_stuck_zero_range(zr(2, 2, 2), StuckParams(0, 3), seed=0)
    with pytest.raises(ValueError):
        run_stuck_zero_range(zr(2, 2, 2), StuckParams(0, 0), seed=0)


def test_default_cap_is_log_squared_of_box():
    assert StuckParams(0, 100).cap_for() == math.floor(math.log(100) ** 2)


# --- coupling --------------------------------------------------------------


def test_equal_inputs_give_identical_paths():
    omega = zr(3, 1, 4, 1, 5, 9, 2, 6)
    pair = run_coupled_zero_range(omega, omega, SimParams(5.0, [1.0, 5.0], seed=3))
    assert np.array_equal(pair.low.states, pair.high.states)
    assert pair.violations == 0


def test_coupling_rejects_unordered_inputs():
    with pytest.raises(ValueError):
        run_coupled_zero_range(zr(2, 1), zr(1, 2), SimParams(1.0))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 3)), min_size=2, max_size=64), st.integers(0, 2**32))
def test_coupling_preserves_order(pairs, seed):
    low = np.array([a for a, _ in pairs])
    high = low + np.array([b for _, b in pairs])
    out = run_coupled_zero_range(ZeroRangeConfig(low), ZeroRangeConfig(high),
                                 SimParams(10.0, list(np.linspace(0.5, 10.0, 20)), seed=seed))
    assert out.violations == 0
    assert np.all(out.low.states <= out.high.states)


def test_increasing_event_more_likely_from_larger_start():
    low0, high0 = zr(2, 1, 1, 1, 1, 1), zr(3, 1, 1, 1, 2, 1)
    hits_low = hits_high = 0
    for seed in range(400):
        pair = run_coupled_zero_range(low0, high0, SimParams(3.0, [3.0], seed=seed))
        hits_low += int(pair.low.states[-1][3] >= 2)
        hits_high += int(pair.high.states[-1][3] >= 2)
    assert hits_high >= hits_low
