"""Observables computed from configurations and trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import Trajectory
from .lattice import (
    ExclusionConfig,
    ZeroRangeConfig,
    _occ,
    block_sums,
    h_values,
    local_densities,
    two_phased_decompose,
)
from .measures import ProfileSpec, script_H
from .stefan import DensityField, InterfaceState


def log2(x: float) -> float:
    """Square of the natural logarithm."""
    return math.log(x) ** 2


# --- empirical measure and Young histograms --------------------------------


def empirical_pairing(eta, phi: Callable[[np.ndarray], np.ndarray]) -> float:
    occ = _occ(eta)
    n = occ.size
    return float(np.sum(np.asarray(phi(np.arange(n) / n), dtype=float) * occ)) / n


@dataclass
class YoungHistogram:
    """Mass deposited at (x / N, local density) for every site x."""

    ell: int
    u_edges: np.ndarray
    r_edges: np.ndarray
    mass: np.ndarray

    @property
    def r_centers(self) -> np.ndarray:
        return 0.5 * (self.r_edges[:-1] + self.r_edges[1:])

    @property
    def u_centers(self) -> np.ndarray:
        return 0.5 * (self.u_edges[:-1] + self.u_edges[1:])

    def r_marginal(self) -> np.ndarray:
        return self.mass.sum(axis=0)

    def r_mean(self) -> float:
        return float(np.dot(self.r_marginal(), self.r_centers))

    def r_variance(self) -> float:
        marg = self.r_marginal()
        mean = np.dot(marg, self.r_centers)
        return float(np.dot(marg, (self.r_centers - mean) ** 2))

    def rows(self) -> list[tuple[int, int, float]]:
        return [(i, j, float(self.mass[i, j])) for i in range(self.mass.shape[0]) for j in range(self.mass.shape[1])]


def young_histogram(eta, ell: int, u_bins: int = 16, r_bins: int | None = None) -> YoungHistogram:
    """Binned Young measure of one configuration.

    By default there is one r-bin per attainable block density
    k / (2 ell + 1), so moments of the r-marginal are exact.
    """
    occ = _occ(eta)
    n = occ.size
    width = 2 * ell + 1
    dens = local_densities(occ, ell)
    if r_bins is None:
        r_edges = (np.arange(width + 2) - 0.5) / width
    else:
        r_edges = np.linspace(0.0, 1.0, r_bins + 1)
    u_edges = np.linspace(0.0, 1.0, u_bins + 1)
    mass, _, _ = np.histogram2d(np.arange(n) / n, dens, bins=(u_edges, r_edges))
    return YoungHistogram(ell, u_edges, r_edges, mass / n)


def _configs(source) -> list[np.ndarray]:
    if isinstance(source, Trajectory):
        return list(source.states)
    if isinstance(source, (ExclusionConfig, np.ndarray)) and _occ(source).ndim == 1:
        return [_occ(source)]
    return [_occ(s[1] if isinstance(s, tuple) else s) for s in source]


def one_block_statistic(trajectory, ell: int) -> float:
    """Space-time mean of |block average of h - H(block density)|."""
    configs = _configs(trajectory)
    if not configs:
        raise ValueError("no snapshots")
    width = 2 * ell + 1
    total = 0.0
    for occ in configs:
        h_block = block_sums(h_values(occ).astype(np.int64), ell) / width
        dens = local_densities(occ, ell)
        total += float(np.mean(np.abs(h_block - script_H(dens))))
    return total / len(configs)


def block_profile_l1(eta, reference: DensityField | Callable, ell: int) -> float:
    """L1 distance between block densities and a macroscopic profile at x / N."""
    occ = _occ(eta)
    n = occ.size
    u = np.arange(n) / n
    if isinstance(reference, DensityField):
        nodes = reference.nodes
        target = np.interp(u, np.append(nodes, 1.0), np.append(reference.values, reference.values[0]))
    else:
        target = np.asarray(reference(u), dtype=float)
    return float(np.mean(np.abs(local_densities(occ, ell) - target)))


# --- macroscopic map of empty sites ----------------------------------------


_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(5)


@dataclass
class MacroMapping:
    """Cumulative empty-site density v(u) of a profile and its inverse."""

    profile: ProfileSpec
    resolution: int = 1 << 14
    _nodes: np.ndarray = field(init=False, repr=False)
    _table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        nodes = np.arange(self.resolution + 1) / self.resolution
        pieces = self._integrate(nodes[:-1], nodes[1:])
        self._nodes = nodes
        self._table = np.concatenate([[0.0], np.cumsum(pieces)])
        if np.any(pieces <= 0):
            raise ValueError("v must be strictly increasing (profile reaches 1)")

    def _integrate(self, lo, hi):
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        pts = mid[..., None] + half[..., None] * _GAUSS_X
        vals = 1.0 - np.asarray(self.profile(pts), dtype=float)
        return half * (vals @ _GAUSS_W)

    def v(self, u):
        u = np.asarray(u, dtype=float)
        clipped = np.clip(u, 0.0, 1.0)
        idx = np.minimum((clipped * self.resolution).astype(np.int64), self.resolution - 1)
        return self._table[idx] + self._integrate(self._nodes[idx], clipped)

    @property
    def v_bar(self) -> float:
        return float(self._table[-1])

    @property
    def v_star(self) -> float:
        return float(self.v(self.profile.u_star))

    def v_inverse(self, y, tol: float = 1e-12):
        """Monotone bisection inside the bracketing table cell."""
        y = np.asarray(y, dtype=float)
        if np.any(y < 0) or np.any(y > self.v_bar + 1e-15):
            raise ValueError("value outside [0, v_bar]")
        idx = np.clip(np.searchsorted(self._table, y, side="right") - 1, 0, self.resolution - 1)
        lo = self._nodes[idx].copy()
        hi = self._nodes[idx + 1].copy()
        while np.any(hi - lo > tol):
            mid = 0.5 * (lo + hi)
            below = self.v(mid) < y
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def alpha_ini(self, vv):
        rho = self.profile(self.v_inverse(vv))
        return rho / (1.0 - rho)

    def expected_zero_positions(self, n: int, count: int) -> np.ndarray:
        """u_k = v^{-1}(k / N) for k = 1..count, clipped to 1 past v_bar."""
        ys = np.arange(1, count + 1) / n
        out = np.ones(count)
        ok = ys <= self.v_bar
        out[ok] = self.v_inverse(ys[ok])
        return out

    def zero_count_window(self, n: int) -> tuple[float, float]:
        return self.v_bar * n - log2(n), self.v_bar * n + log2(n)


@dataclass
class ZeroPositionReport:
    n: int
    zeros: int
    max_deviation: float
    zeros_in_window: bool
    threshold: float

    @property
    def deviation_ok(self) -> bool:
        return self.max_deviation <= self.threshold


def zero_position_diagnostics(eta0, spec: ProfileSpec | MacroMapping) -> ZeroPositionReport:
    """Compare the k-th empty site with N v^{-1}(k / N)."""
    mapping = spec if isinstance(spec, MacroMapping) else MacroMapping(spec)
    occ = _occ(eta0)
    n = occ.size
    ys = np.flatnonzero(occ == 0)
    if ys.size == 0:
        raise ValueError("configuration has no empty site")
    expected = n * mapping.expected_zero_positions(n, ys.size)
    lo, hi = mapping.zero_count_window(n)
    return ZeroPositionReport(n, int(ys.size), float(np.max(np.abs(ys - expected))),
                              bool(lo <= ys.size <= hi), log2(n))


# --- typical configurations ------------------------------------------------


@dataclass(frozen=True)
class TypicalityParams:
    k: int
    ell: int
    k_star: int
    c_star: float
    alpha_k: float
    window: int
    n_hat: int

    @classmethod
    def from_profile(cls, k: int, spec: ProfileSpec | MacroMapping) -> "TypicalityParams":
        mapping = spec if isinstance(spec, MacroMapping) else MacroMapping(spec)
        profile = mapping.profile
        ell = int(math.floor(k**0.75))
        if ell < 1:
            raise ValueError("K too small for a block length of at least 1")
        u_star = profile.u_star
        slope = min(-float(profile.derivative(0.0)), float(profile.derivative(u_star)))
        c_star = 4.0 * mapping.v_bar * slope
        k_star = int(math.floor(k * mapping.v_star / mapping.v_bar))
        alpha_k = 1.0 + c_star * ell / k
        window = 10 * ell
        return cls(k, ell, k_star, c_star, alpha_k, window, int(math.floor(window * alpha_k)))

    @property
    def subcritical_sites(self) -> np.ndarray:
        """B_K = {ell, ..., k_star - ell}."""
        return np.arange(self.ell, self.k_star - self.ell + 1)

    @property
    def boundary_sites(self) -> np.ndarray:
        mask = np.ones(self.k, dtype=bool)
        mask[self.subcritical_sites] = False
        return np.flatnonzero(mask)


@dataclass
class TypicalityReport:
    cond_i: bool
    cond_ii: bool
    worst_window: tuple[int, int, int] | None  # (start, length, excess) of the worst box
    witness_failures: int
    first_failure: int | None
    right_witnesses: int
    left_witnesses: int

    @property
    def typical(self) -> bool:
        return self.cond_i and self.cond_ii

    @property
    def verdict(self) -> str:
        if not self.cond_i:
            return "not typical"
        return "typical" if self.cond_ii else "witness-failed"


def _subcritical_boxes(values: np.ndarray, min_len: int) -> tuple[bool, tuple[int, int, int] | None]:
    """Largest excess sum(omega - 1) over runs of length >= min_len."""
    if values.size < min_len:
        return True, None
    prefix = np.concatenate([[0], np.cumsum(values - 1)])
    best = None
    run_min = np.minimum.accumulate(prefix[: prefix.size - min_len])
    arg_min = np.empty_like(run_min)
    cur = 0
    for i in range(run_min.size):
        if prefix[i] <= prefix[cur]:
            cur = i
        arg_min[i] = cur
    ends = np.arange(min_len, prefix.size)
    excess = prefix[ends] - run_min
    j = int(np.argmax(excess))
    best = (int(arg_min[j]), int(ends[j] - arg_min[j]), int(excess[j]))
    return best[2] <= 0, best


def _witness(counts: np.ndarray, sites: np.ndarray, params: TypicalityParams) -> np.ndarray:
    """Right-side witness for each site: n_hat closest particles with non-positive moment.

    Windows longer than the torus wrap around and revisit sites.
    """
    k = counts.size
    reps = (params.window + k) // k + 2
    ext = np.tile(counts, reps)
    idx = np.arange(ext.size)
    prefix = np.concatenate([[0], np.cumsum(ext)])
    moment = np.concatenate([[0], np.cumsum(ext * idx)])
    ok = np.zeros(sites.size, dtype=bool)
    half = 5 * params.ell
    for n, x in enumerate(sites):
        base = prefix[x + 1]
        # first j > x with sum_{x < i <= j} ext_i >= n_hat
        j = int(np.searchsorted(prefix, base + params.n_hat, side="left")) - 1
        if params.n_hat <= 0:
            ok[n] = True
            continue
        if j - x > params.window:
            continue
        full = prefix[j] - base
        rem = params.n_hat - full
        m_full = (moment[j] - moment[x + 1]) - (x + half) * full
        ok[n] = m_full + rem * (j - x - half) <= 0
    return ok


def typical_check(omega, params: TypicalityParams) -> TypicalityReport:
    counts = omega.counts if isinstance(omega, ZeroRangeConfig) else np.asarray(omega, dtype=np.int64)
    if counts.size != params.k:
        raise ValueError("configuration size differs from K")
    box = params.subcritical_sites
    cond_i, worst = _subcritical_boxes(counts[box], params.ell) if box.size else (True, None)
    if worst is not None:
        worst = (int(box[0]) + worst[0], worst[1], worst[2])
    sites = params.boundary_sites
    right = _witness(counts, sites, params)
    left = _witness(counts[::-1].copy(), (params.k - 1 - sites), params)
    passed = right | left
    failures = np.flatnonzero(~passed)
    return TypicalityReport(
        cond_i=bool(cond_i),
        cond_ii=bool(failures.size == 0),
        worst_window=worst,
        witness_failures=int(failures.size),
        first_failure=int(sites[failures[0]]) if failures.size else None,
        right_witnesses=int(right.sum()),
        left_witnesses=int(left.sum()),
    )


# --- dynamical observables -------------------------------------------------


def occupancy_monitor(trajectory: Trajectory, cap: float | None = None) -> bool:
    """True iff no site ever reached the cap (default: log(K)^2)."""
    if trajectory.high_water is None:
        raise ValueError("trajectory carries no high-water record")
    if cap is None:
        cap = log2(trajectory.high_water.size)
    return bool(np.all(trajectory.high_water < cap))


def torus_distance(a, b):
    d = np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), 1.0)
    return np.minimum(d, 1.0 - d)


@dataclass
class FrontMatch:
    times: np.ndarray
    left_error: np.ndarray
    right_error: np.ndarray
    undefined: int

    @property
    def mean_error(self) -> float:
        both = np.concatenate([self.left_error, self.right_error])
        both = both[~np.isnan(both)]
        return float(both.mean()) if both.size else math.nan


def front_match_error(micro: Sequence[tuple[int, int] | None], n: int, macro: InterfaceState,
                      times: Sequence[float]) -> FrontMatch:
    """Torus distance between scaled microscopic fronts and the macroscopic ones."""
    left, right = [], []
    undefined = 0
    for fronts, t in zip(micro, times):
        if fronts is None:
            undefined += 1
            left.append(math.nan)
            right.append(math.nan)
            continue
        um, up = macro.at(t)
        left.append(float(torus_distance(fronts[0] / n, um)))
        right.append(float(torus_distance(fronts[1] / n, up)))
    return FrontMatch(np.asarray(times, dtype=float), np.array(left), np.array(right), undefined)


def decompositions(trajectory: Trajectory) -> list:
    return [two_phased_decompose(s) for s in trajectory.states]


def hitting_time_two_phased(trajectory: Trajectory) -> float:
    """First observation time at which the configuration is two-phased or ergodic."""
    for t, state in zip(trajectory.times, trajectory.states):
        if two_phased_decompose(state) is not None:
            return float(t)
    return math.inf


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if trials == 0:
        return (0.0, 1.0)
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    spread = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return (max(0.0, centre - spread), min(1.0, centre + spread))
