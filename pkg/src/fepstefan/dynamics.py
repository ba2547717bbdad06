"""Rejection-free continuous-time simulation of the lattice dynamics.

Every enabled transition has rate one, so each event loop keeps the
enabled set in a swap-with-last index and picks uniformly from it.  The
clock is paused at observation times, which is exact by memorylessness.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .lattice import ExclusionConfig, ZeroRangeConfig

NO_CAP = -1


# --- kernels ---------------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _edge_rate(occ, e, n):
    a = occ[e - 1 if e > 0 else n - 1]
    b = occ[e]
    f = e + 1 if e + 1 < n else 0
    c = occ[f]
    d = occ[f + 1 if f + 1 < n else 0]
    return (a & b & (1 - c)) | ((1 - b) & c & d)


@numba.njit(cache=True)
def two_phased_or_ergodic(occ):
    """True when the ring has at most one run of 11-edges between 00-edges."""
    n = occ.size
    first_empty = -1
    for e in range(n):
        if occ[e] == 0 and occ[(e + 1) % n] == 0:
            first_empty = e
            break
    if first_empty < 0:
        return True
    gaps_with_full = 0
    gap_has_full = False
    for step in range(1, n + 1):
        e = (first_empty + step) % n
        s = occ[e] + occ[(e + 1) % n]
        if s == 0:
            if gap_has_full:
                gaps_with_full += 1
                if gaps_with_full > 1:
                    return False
            gap_has_full = False
        elif s == 2:
            gap_has_full = True
    return True


@numba.njit(cache=True)
def _fep_kernel(occ, obs_times, rate_scale, seed, mark, stop_when_two_phased, max_events):
    np.random.seed(seed)
    n = occ.size
    members = np.empty(n, np.int64)
    pos = np.full(n, -1, np.int64)
    count = 0
    for e in range(n):
        if _edge_rate(occ, e, n):
            members[count] = e
            pos[e] = count
            count += 1
    nobs = obs_times.size
    snaps = np.empty((nobs, n), np.uint8)
    marks = np.empty(nobs, np.int64)
    t = 0.0
    k = 0
    events = 0
    stopped = False
    while True:
        if count == 0:
            t_next = np.inf
        else:
            t_next = t - math.log(1.0 - np.random.random()) / (count * rate_scale)
        while k < nobs and obs_times[k] < t_next:
            snaps[k, :] = occ
            marks[k] = mark
            k += 1
            if stop_when_two_phased and two_phased_or_ergodic(occ):
                stopped = True
                break
        if k == nobs or stopped:
            break
        if events >= max_events:
            break
        e = members[int(np.random.random() * count)]
        f = e + 1 if e + 1 < n else 0
        if mark == e:
            mark = f
        elif mark == f:
            mark = e
        tmp = occ[e]
        occ[e] = occ[f]
        occ[f] = tmp
        g = e - 2 if e >= 2 else e - 2 + n
        for _ in range(5):
            r = _edge_rate(occ, g, n)
            p = pos[g]
            if r and p < 0:
                members[count] = g
                pos[g] = count
                count += 1
            elif not r and p >= 0:
                count -= 1
                last = members[count]
                members[p] = last
                pos[last] = p
                pos[g] = -1
            g = g + 1 if g + 1 < n else 0
        t = t_next
        events += 1
    return snaps[:k], marks[:k], events, k


@numba.njit(cache=True)
def _zr_kernel(counts, allowed, obs_times, seed, cap, stop_on_exit, max_events):
    np.random.seed(seed)
    n = counts.size
    members = np.empty(n, np.int64)
    pos = np.full(n, -1, np.int64)
    active = 0
    for x in range(n):
        if allowed[x] and counts[x] >= 2:
            members[active] = x
            pos[x] = active
            active += 1
    high_water = counts.copy()
    nobs = obs_times.size
    snaps = np.empty((nobs, n), np.int64)
    t = 0.0
    k = 0
    events = 0
    exit_time = np.inf
    over = False
    if cap >= 0:
        for x in range(n):
            if counts[x] > cap:
                over = True
    if stop_on_exit and (over or active == 0):
        exit_time = 0.0
        return snaps[:0], events, exit_time, high_water, 0
    while True:
        if active == 0:
            t_next = np.inf
        else:
            t_next = t - math.log(1.0 - np.random.random()) / (2.0 * active)
        while k < nobs and obs_times[k] < t_next:
            snaps[k, :] = counts
            k += 1
        if k == nobs or events >= max_events:
            break
        u = np.random.random() * 2.0 * active
        slot = int(u)
        if slot >= 2 * active:
            slot = 2 * active - 1
        x = members[slot >> 1]
        y = (x + 1) % n if slot & 1 else (x - 1) % n
        counts[x] -= 1
        counts[y] += 1
        if counts[y] > high_water[y]:
            high_water[y] = counts[y]
        if counts[x] < 2 and pos[x] >= 0:
            p = pos[x]
            active -= 1
            last = members[active]
            members[p] = last
            pos[last] = p
            pos[x] = -1
        if allowed[y] and counts[y] >= 2 and pos[y] < 0:
            members[active] = y
            pos[y] = active
            active += 1
        t = t_next
        events += 1
        if stop_on_exit and ((cap >= 0 and counts[y] > cap) or active == 0):
            exit_time = t
            break
    return snaps[:k], events, exit_time, high_water, k


@numba.njit(cache=True)
def _coupled_zr_kernel(low, high, obs_times, seed, max_events):
    np.random.seed(seed)
    n = high.size
    members = np.empty(n, np.int64)
    pos = np.full(n, -1, np.int64)
    active = 0
    for x in range(n):
        if high[x] >= 2:
            members[active] = x
            pos[x] = active
            active += 1
    nobs = obs_times.size
    snaps_low = np.empty((nobs, n), np.int64)
    snaps_high = np.empty((nobs, n), np.int64)
    t = 0.0
    k = 0
    events = 0
    violations = 0
    while True:
        if active == 0:
            t_next = np.inf
        else:
            t_next = t - math.log(1.0 - np.random.random()) / (2.0 * active)
        while k < nobs and obs_times[k] < t_next:
            snaps_low[k, :] = low
            snaps_high[k, :] = high
            k += 1
        if k == nobs or events >= max_events:
            break
        slot = int(np.random.random() * 2.0 * active)
        if slot >= 2 * active:
            slot = 2 * active - 1
        x = members[slot >> 1]
        y = (x + 1) % n if slot & 1 else (x - 1) % n
        if low[x] >= 2:
            low[x] -= 1
            low[y] += 1
        high[x] -= 1
        high[y] += 1
        if low[x] > high[x] or low[y] > high[y]:
            violations += 1
        if high[x] < 2 and pos[x] >= 0:
            p = pos[x]
            active -= 1
            last = members[active]
            members[p] = last
            pos[last] = p
            pos[x] = -1
        if high[y] >= 2 and pos[y] < 0:
            members[active] = y
            pos[y] = active
            active += 1
        t = t_next
        events += 1
    return snaps_low[:k], snaps_high[:k], events, violations, k


# --- public API ------------------------------------------------------------


def kernel_seed(seed: int) -> int:
    """Fold a 64-bit seed into the 32-bit state accepted by the jit RNG."""
    state = np.random.SeedSequence(int(seed) & ((1 << 64) - 1)).generate_state(1, dtype=np.uint32)
    return int(state[0])


@dataclass(frozen=True)
class SimParams:
    horizon: float
    observation_times: Sequence[float] = ()
    seed: int = 0
    time_scaling: float | None = None
    max_events: int = 2**62

    def __post_init__(self) -> None:
        if not self.horizon >= 0:
            raise ValueError("horizon must be non-negative")
        obs = np.asarray(self.observation_times, dtype=float)
        if obs.size and (np.any(np.diff(obs) < 0) or obs[0] < 0 or obs[-1] > self.horizon):
            raise ValueError("observation times must be sorted and lie in [0, horizon]")

    def grid(self) -> np.ndarray:
        """Observation times with the horizon appended as the final stop."""
        obs = np.asarray(self.observation_times, dtype=float)
        return np.append(obs, self.horizon)


@dataclass
class Trajectory:
    """Snapshots at observation times plus bookkeeping for one run."""

    times: np.ndarray
    states: np.ndarray
    event_count: int
    final_state: ExclusionConfig | ZeroRangeConfig
    marks: np.ndarray | None = None
    high_water: np.ndarray | None = None
    exit_time: float = math.inf
    wall_time: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def snapshots(self) -> list:
        wrap = ExclusionConfig if isinstance(self.final_state, ExclusionConfig) else ZeroRangeConfig
        return [(float(t), wrap(s)) for t, s in zip(self.times, self.states)]

    def __len__(self) -> int:
        return len(self.times)


def _split_final(grid: np.ndarray, states: np.ndarray, n_recorded: int, requested: int):
    """Separate the horizon stop from the user-requested snapshots."""
    return grid[: min(n_recorded, requested)], states[: min(n_recorded, requested)]


def run_fep(eta0: ExclusionConfig, params: SimParams, *, marked_zero: int | None = None,
            stop_when_two_phased: bool = False) -> Trajectory:
    """Simulate the facilitated exclusion process with rates sped up by N^2.

    With ``stop_when_two_phased`` the run ends at the first observation at
    which the configuration is two-phased or ergodic; ``times`` is then
    truncated there.
    """
    n = eta0.size
    if n < 4:
        raise ValueError("the exclusion torus needs at least 4 sites")
    scale = float(n) ** 2 if params.time_scaling is None else float(params.time_scaling)
    grid = params.grid()
    occ = np.array(eta0.occupancy, dtype=np.uint8)
    mark = -1 if marked_zero is None else int(marked_zero) % n
    if mark >= 0 and occ[mark] != 0:
        raise ValueError("marked site must be empty")
    started = time.perf_counter()
    snaps, marks, events, k = _fep_kernel(occ, grid, scale, kernel_seed(params.seed), mark,
                                          stop_when_two_phased, params.max_events)
    wall = time.perf_counter() - started
    requested = grid.size - 1
    times, states = _split_final(grid, snaps, k, requested)
    return Trajectory(
        times=times,
        states=states,
        event_count=int(events),
        final_state=ExclusionConfig(occ),
        marks=marks[: times.size] if marked_zero is not None else None,
        wall_time=wall,
        extras={"stopped_at": float(grid[k - 1]) if stop_when_two_phased and k else None,
                "final_mark": int(marks[k - 1]) if (marked_zero is not None and k) else None},
    )


def _counts(omega) -> np.ndarray:
    if isinstance(omega, ZeroRangeConfig):
        return np.array(omega.counts, dtype=np.int64)
    return np.array(omega, dtype=np.int64)


def run_zero_range(omega0: ZeroRangeConfig, params: SimParams, *, cap: int | None = None) -> Trajectory:
    """Zero-range dynamics: each site holding two or more particles sends
    one to each neighbour at rate 1.  Time is not rescaled.

    ``cap`` is only recorded; the per-site high-water mark is always kept.
    """
    counts = _counts(omega0)
    if counts.size < 2:
        raise ValueError("zero-range torus needs at least 2 sites")
    if params.time_scaling not in (None, 1, 1.0):
        raise ValueError("zero-range time is microscopic; time_scaling must be 1")
    grid = params.grid()
    allowed = np.ones(counts.size, dtype=np.bool_)
    started = time.perf_counter()
    snaps, events, _, high_water, k = _zr_kernel(counts, allowed, grid, kernel_seed(params.seed),
                                                 NO_CAP, False, params.max_events)
    wall = time.perf_counter() - started
    requested = grid.size - 1
    times, states = _split_final(grid, snaps, k, requested)
    return Trajectory(times=times, states=states, event_count=int(events),
                      final_state=ZeroRangeConfig(counts), high_water=high_water,
                      wall_time=wall, extras={"cap": cap})


@dataclass(frozen=True)
class StuckParams:
    """Box of sites allowed to emit particles, as an arc (start, length)."""

    box_start: int
    box_length: int
    occupancy_cap: float | None = None

    def cap_for(self) -> int:
        if self.occupancy_cap is not None:
            return int(math.floor(self.occupancy_cap))
        return int(math.floor(math.log(self.box_length) ** 2))


def run_stuck_zero_range(omega0: ZeroRangeConfig, stuck: StuckParams, seed: int,
                         horizon: float = math.inf,
                         observation_times: Sequence[float] = ()) -> tuple[Trajectory, float]:
    """Zero-range dynamics where only sites of the box may emit.

    Stops at the exit time: the first moment some site exceeds the cap or
    every box site holds at most one particle.
    """
    counts = _counts(omega0)
    k_sites = counts.size
    if k_sites < 2:
        raise ValueError("zero-range torus needs at least 2 sites")
    if not 0 < stuck.box_length < k_sites:
        raise ValueError("box must be non-empty and smaller than the torus")
    allowed = np.zeros(k_sites, dtype=np.bool_)
    allowed[(stuck.box_start + np.arange(stuck.box_length)) % k_sites] = True
    obs = np.asarray(observation_times, dtype=float)
    grid = np.append(obs, horizon)
    started = time.perf_counter()
    snaps, events, exit_time, high_water, k = _zr_kernel(
        counts, allowed, grid, kernel_seed(seed), stuck.cap_for(), True, 2**62)
    wall = time.perf_counter() - started
    requested = obs.size
    times, states = _split_final(grid, snaps, k, requested)
    traj = Trajectory(times=times, states=states, event_count=int(events),
                      final_state=ZeroRangeConfig(counts), high_water=high_water,
                      exit_time=float(exit_time), wall_time=wall)
    return traj, float(exit_time)


@dataclass
class CoupledTrajectory:
    low: Trajectory
    high: Trajectory
    violations: int


def run_coupled_zero_range(omega_low: ZeroRangeConfig, omega_high: ZeroRangeConfig,
                           params: SimParams) -> CoupledTrajectory:
    """Basic coupling of two ordered zero-range processes sharing clocks."""
    low, high = _counts(omega_low), _counts(omega_high)
    if low.size != high.size:
        raise ValueError("coupled configurations must have the same size")
    if np.any(low > high):
        raise ValueError("initial configurations are not ordered")
    if low.size < 2:
        raise ValueError("zero-range torus needs at least 2 sites")
    grid = params.grid()
    started = time.perf_counter()
    s_low, s_high, events, violations, k = _coupled_zr_kernel(low, high, grid, kernel_seed(params.seed),
                                                              params.max_events)
    wall = time.perf_counter() - started
    requested = grid.size - 1
    t_low, st_low = _split_final(grid, s_low, k, requested)
    _, st_high = _split_final(grid, s_high, k, requested)
    return CoupledTrajectory(
        low=Trajectory(t_low, st_low, int(events), ZeroRangeConfig(low), wall_time=wall),
        high=Trajectory(t_low.copy(), st_high, int(events), ZeroRangeConfig(high), wall_time=wall),
        violations=int(violations),
    )
