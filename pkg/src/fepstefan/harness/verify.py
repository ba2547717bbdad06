"""Exact and randomized self-checks exposed through ``fepstefan verify``."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from ..dynamics import SimParams, run_coupled_zero_range, run_fep
from ..lattice import (
    ERGODIC,
    ExclusionConfig,
    PhaseDecomposition,
    ZeroRangeConfig,
    all_configurations,
    currents,
    jump_rate,
    map_from_zero_range,
    map_to_zero_range,
    two_phased_decompose,
)
from ..measures import (
    LocalFunction,
    ProfileSpec,
    detailed_balance_residual,
    gcm_weight,
    h_expectation,
    sample_gcm,
    sample_mu_N,
    sample_nu_alpha,
    script_H,
    stationarity_residual,
)
from ..stefan import DensityField, SolverParams, comparison_check

SUITES = ("exact", "property", "all")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0


def _timed(name, func, *args, **kwargs) -> CheckResult:
    started = time.perf_counter()
    passed, detail = func(*args, **kwargs)
    return CheckResult(name, bool(passed), detail, time.perf_counter() - started)


# --- exact suite -----------------------------------------------------------


def _allowed_jump(window: tuple[int, int, int, int]) -> int:
    """Exclusion rule read off directly: a particle needs an occupied site behind it."""
    left, x, right, far = window
    forward = x == 1 and right == 0 and left == 1
    backward = right == 1 and x == 0 and far == 1
    return int(forward or backward)


def brute_force_generator(occ: np.ndarray) -> np.ndarray:
    """Generator applied to every eta_x by enumerating all allowed swaps.

    Accepts one ring or a stack of rings (one per row).
    """
    rings = np.atleast_2d(occ).astype(np.int64)
    n = rings.shape[1]
    out = np.zeros_like(rings)
    for y in range(n):
        left, x, right, far = (rings[:, (y + d) % n] for d in (-1, 0, 1, 2))
        allowed = ((x == 1) & (right == 0) & (left == 1)) | ((right == 1) & (x == 0) & (far == 1))
        swapped = rings.copy()
        swapped[:, [y, (y + 1) % n]] = rings[:, [(y + 1) % n, y]]
        out += allowed[:, None] * (swapped - rings)
    return out if np.ndim(occ) == 2 else out[0]


def check_rate_table() -> tuple[bool, dict]:
    mismatches = []
    for pattern in itertools.product((0, 1), repeat=4):
        eta = ExclusionConfig(np.array(pattern + (0, 0), dtype=np.uint8))
        # site 1 carries eta_x; pattern starts at x - 1
        if jump_rate(eta, 1) != _allowed_jump(pattern):
            mismatches.append(pattern)
    return not mismatches, {"patterns": 16, "mismatches": mismatches}


def check_gradient_identity(max_n: int = 12) -> tuple[bool, dict]:
    failures = 0
    checked = 0
    for n in range(4, max_n + 1):
        rings = all_configurations(n)
        j = np.array([currents(occ) for occ in rings])
        lhs = brute_force_generator(rings)
        rhs = np.roll(j, 1, axis=1) - j
        failures += int(np.any(lhs != rhs, axis=1).sum())
        checked += len(rings)
    return failures == 0, {"configurations": checked, "failures": failures}


STATIONARITY_DENSITIES = (Fraction(3, 5), Fraction(3, 4), Fraction(9, 10))


def stationarity_functions() -> list[LocalFunction]:
    funcs = [LocalFunction.occupation(0), LocalFunction.product([0, 1])]
    funcs += [LocalFunction.pattern(-1, p) for p in itertools.product((0, 1), repeat=3)]
    return funcs


def check_stationarity() -> tuple[bool, dict]:
    residuals = {}
    for f in stationarity_functions():
        for rho in STATIONARITY_DENSITIES:
            residuals[f"{f.name}@{rho}"] = str(stationarity_residual(f, rho))
    controls = {str(rho): str(stationarity_residual(LocalFunction.product([0, 1]), rho, "bernoulli"))
                for rho in STATIONARITY_DENSITIES}
    ok = all(v == "0" for v in residuals.values()) and all(v != "0" for v in controls.values())
    return ok, {"residuals": residuals, "bernoulli_control": controls}


def check_detailed_balance() -> tuple[bool, dict]:
    out = {}
    for alpha in (Fraction(3, 2), Fraction(2)):
        for k in (1, 2, 3):
            out[f"alpha={alpha},K={k}"] = str(detailed_balance_residual(alpha, k, 5))
    return all(v == "0" for v in out.values()), {"residuals": out}


def check_h_mean() -> tuple[bool, dict]:
    cases = {}
    for rho in (Fraction(11, 20), Fraction(3, 5), Fraction(2, 3), Fraction(3, 4), Fraction(9, 10)):
        cases[str(rho)] = (str(h_expectation(rho)), str(script_H(rho)))
    return all(a == b for a, b in cases.values()), {"cases": cases}


def check_bijection(max_n: int = 14) -> tuple[bool, dict]:
    failures = 0
    checked = 0
    for n in range(4, max_n + 1):
        for occ in all_configurations(n):
            if occ[0] != 0 or two_phased_decompose(occ) is not ERGODIC:
                continue
            omega = map_to_zero_range(occ, 0)
            back = map_from_zero_range(omega)
            failures += int(not np.array_equal(back.occupancy, occ) or np.any(omega.counts < 1))
            checked += 1
    return failures == 0, {"configurations": checked, "failures": failures}


# --- property suite --------------------------------------------------------


def check_absorption(trajectories: int = 1000, n: int = 64, horizon: float = 0.5,
                     observations: int = 50, seed: int = 0) -> tuple[bool, dict]:
    """Once ergodic (or two-phased) a trajectory never leaves that set."""
    rng = np.random.default_rng(seed)
    times = list(np.linspace(horizon / observations, horizon, observations))
    ergodic_exits = two_phased_exits = conservation = 0
    for r in range(trajectories):
        rho = float(rng.uniform(0.3, 0.7))
        eta0 = sample_mu_N(ProfileSpec.constant(rho), n, rng)
        traj = run_fep(eta0, SimParams(horizon, times, seed=int(rng.integers(2**63))))
        seen_ergodic = seen_two_phased = False
        for state in [eta0.occupancy, *traj.states]:
            conservation += int(state.sum() != eta0.particles)
            dec = two_phased_decompose(state)
            ergodic = dec is ERGODIC
            two_phased = ergodic or isinstance(dec, PhaseDecomposition)
            ergodic_exits += int(seen_ergodic and not ergodic)
            two_phased_exits += int(seen_two_phased and not two_phased)
            seen_ergodic |= ergodic
            seen_two_phased |= two_phased
    detail = {"trajectories": trajectories, "ergodic_exits": ergodic_exits,
              "two_phased_exits": two_phased_exits, "mass_changes": conservation}
    return ergodic_exits == two_phased_exits == conservation == 0, detail


def check_coupling(pairs: int = 1000, k: int = 64, horizon: float = 20.0, seed: int = 1) -> tuple[bool, dict]:
    rng = np.random.default_rng(seed)
    violations = 0
    for _ in range(pairs):
        low = sample_nu_alpha(float(rng.uniform(1.2, 2.5)), k, rng).counts
        high = low + rng.poisson(0.5, size=k)
        coupled = run_coupled_zero_range(ZeroRangeConfig(low), ZeroRangeConfig(high),
                                         SimParams(horizon, list(np.linspace(1.0, horizon, 20)),
                                                   seed=int(rng.integers(2**63)), time_scaling=1.0))
        violations += coupled.violations + int(np.any(coupled.low.states > coupled.high.states))
        violations += int(np.any(coupled.low.states.sum(axis=1) != low.sum()))
    return violations == 0, {"pairs": pairs, "violations": violations}


def random_ordered_pair(m: int, rng: np.random.Generator) -> tuple[DensityField, DensityField]:
    u = np.arange(m) / m
    modes = rng.integers(1, 4, size=3)
    coeff = rng.normal(0, 0.12, size=3)
    phase = rng.uniform(0, 2 * np.pi, size=3)
    base = 0.5 + sum(c * np.sin(2 * np.pi * k * u + p) for c, k, p in zip(coeff, modes, phase))
    low = np.clip(base, 0.0, 1.0)
    bump = rng.uniform(0, 0.15) * np.exp(-(((u - rng.uniform()) + 0.5) % 1.0 - 0.5) ** 2 / 0.01)
    high = np.clip(low + bump, 0.0, 1.0)
    return DensityField(low), DensityField(high)


def check_comparison(pairs: int = 100, m: int = 128, end_time: float = 0.01, seed: int = 2) -> tuple[bool, dict]:
    rng = np.random.default_rng(seed)
    params = SolverParams(m=m, end_time=end_time)
    bad = 0
    worst = 0.0
    for _ in range(pairs):
        low, high = random_ordered_pair(m, rng)
        report = comparison_check(low, high, params)
        bad += int(not report.ordered)
        worst = max(worst, report.max_violation)
    return bad == 0, {"pairs": pairs, "unordered": bad, "max_violation": worst}


def check_gcm_sampler(samples: int = 100_000, rho: Fraction = Fraction(3, 4), seed: int = 3) -> tuple[bool, dict]:
    """Chi-square fit of four-site windows against the exact window law."""
    draws = sample_gcm(float(rho), 4, seed, count=samples)
    codes = draws @ np.array([8, 4, 2, 1])
    observed = np.bincount(codes, minlength=16)
    expected = np.array([float(gcm_weight(p, rho)) for p in itertools.product((0, 1), repeat=4)]) * samples
    support = expected > 0
    stray = int(observed[~support].sum())
    result = stats.chisquare(observed[support], expected[support])
    return stray == 0 and result.pvalue > 1e-3, {"chi2": float(result.statistic), "p_value": float(result.pvalue),
                                                 "impossible_windows": stray}


EXACT_CHECKS = {
    "rate_table": check_rate_table,
    "gradient_identity": check_gradient_identity,
    "stationarity": check_stationarity,
    "detailed_balance": check_detailed_balance,
    "h_mean": check_h_mean,
    "bijection": check_bijection,
}

PROPERTY_CHECKS = {
    "absorption": check_absorption,
    "coupling": check_coupling,
    "comparison": check_comparison,
    "gcm_chi_square": check_gcm_sampler,
}


def run_suite(suite: str) -> list[CheckResult]:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; expected one of {', '.join(SUITES)}")
    checks = {}
    if suite in ("exact", "all"):
        checks.update(EXACT_CHECKS)
    if suite in ("property", "all"):
        checks.update(PROPERTY_CHECKS)
    return [_timed(name, func) for name, func in checks.items()]
