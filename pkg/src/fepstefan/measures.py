"""Initial laws, invariant measures and exact verifiers.

Rational densities are handled with :class:`fractions.Fraction`, so the
stationarity and detailed-balance residuals come out as exact zeros.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .lattice import ExclusionConfig, ZeroRangeConfig, map_from_zero_range

HALF = Fraction(1, 2)


# --- flux function ---------------------------------------------------------


def script_H(r):
    """Flux of the free boundary problem: (2r-1)/r above one half, else 0."""
    if isinstance(r, Rational):
        r = Fraction(r)
        if not 0 <= r <= 1:
            raise ValueError("density must lie in [0, 1]")
        return (2 * r - 1) / r if r > HALF else Fraction(0)
    arr = np.asarray(r, dtype=float)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise ValueError("density must lie in [0, 1]")
    out = np.where(arr > 0.5, (2.0 * arr - 1.0) / np.where(arr > 0.5, arr, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


# --- profiles --------------------------------------------------------------


@dataclass(frozen=True)
class ProfileSpec:
    """Macroscopic initial density on the unit torus.

    Families: ``reference`` (0.5 - 0.25 sin 2 pi u), ``constant`` (value),
    ``sine`` (mean + amplitude sin 2 pi (u - phase)), ``grid`` (periodic
    linear interpolation of points) and ``regularized`` (see
    :func:`fepstefan.stefan.regularize_profile`).
    """

    family: str = "reference"
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.family not in ("reference", "constant", "sine", "grid", "regularized"):
            raise ValueError(f"unknown profile family {self.family!r}")
        if self.family == "grid":
            u = np.asarray(self.params["u"], dtype=float)
            rho = np.asarray(self.params["rho"], dtype=float)
            if u.size != rho.size or u.size < 2 or np.any(np.diff(u) <= 0) or u[0] < 0 or u[-1] >= 1:
                raise ValueError("grid profile needs increasing nodes in [0, 1)")
        values = self(np.linspace(0.0, 1.0, 1025))
        if np.any(values < 0) or np.any(values > 1):
            raise ValueError("profile leaves [0, 1]")

    @classmethod
    def reference(cls) -> "ProfileSpec":
        return cls("reference", {})

    @classmethod
    def constant(cls, value: float) -> "ProfileSpec":
        return cls("constant", {"value": float(value)})

    @classmethod
    def sine(cls, mean: float, amplitude: float, phase: float = 0.0) -> "ProfileSpec":
        return cls("sine", {"mean": float(mean), "amplitude": float(amplitude), "phase": float(phase)})

    @classmethod
    def from_csv(cls, path: str | Path) -> "ProfileSpec":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        if rows and not _is_number(rows[0][0]):
            rows = rows[1:]
        u = [float(r[0]) for r in rows]
        rho = [float(r[1]) for r in rows]
        return cls("grid", {"u": u, "rho": rho})

    @classmethod
    def from_dict(cls, data: dict) -> "ProfileSpec":
        data = dict(data)
        family = data.pop("family", "reference")
        if family == "csv":
            return cls.from_csv(data["path"])
        if family == "regularized":
            data["base"] = cls.from_dict(data["base"]).to_dict()
        return cls(family, data)

    def to_dict(self) -> dict:
        return {"family": self.family, **self.params}

    def __call__(self, u):
        u = np.mod(np.asarray(u, dtype=float), 1.0)
        p = self.params
        if self.family == "reference":
            return 0.5 - 0.25 * np.sin(2 * np.pi * u)
        if self.family == "constant":
            return np.full_like(u, p["value"])
        if self.family == "sine":
            return p["mean"] + p["amplitude"] * np.sin(2 * np.pi * (u - p["phase"]))
        if self.family == "grid":
            nodes = np.asarray(p["u"], dtype=float)
            vals = np.asarray(p["rho"], dtype=float)
            return np.interp(u, np.append(nodes, nodes[0] + 1), np.append(vals, vals[0]), period=1.0)
        base = ProfileSpec.from_dict(p["base"])
        raw = base(u)
        return np.where(raw < 0.5, raw * (1.0 - 1.0 / p["n"]), raw)

    def derivative(self, u):
        u = np.asarray(u, dtype=float)
        p = self.params
        if self.family == "reference":
            return -0.5 * np.pi * np.cos(2 * np.pi * u)
        if self.family == "constant":
            return np.zeros_like(u)
        if self.family == "sine":
            return 2 * np.pi * p["amplitude"] * np.cos(2 * np.pi * (u - p["phase"]))
        step = 1e-6
        return (self(u + step) - self(u - step)) / (2 * step)

    # derived quantities

    def critical_points(self, resolution: int = 1 << 14) -> np.ndarray:
        """Points where the profile equals one half, sorted in [0, 1)."""
        grid = np.arange(resolution) / resolution
        f = self(grid) - 0.5
        found = list(grid[np.abs(f) < 1e-13])
        nxt = np.roll(f, -1)
        for i in np.flatnonzero((f * nxt < 0) & (np.abs(f) >= 1e-13) & (np.abs(nxt) >= 1e-13)):
            a, b = grid[i], grid[i] + 1.0 / resolution
            found.append(optimize.brentq(lambda s: float(self(s)) - 0.5, a, b, xtol=1e-15) % 1.0)
        return np.array(sorted(found))

    def satisfies_h1(self) -> bool:
        pts = self.critical_points()
        return 0 < pts.size < 64

    def satisfies_h2(self) -> bool:
        pts = self.critical_points()
        return bool(pts.size and np.all(np.abs(self.derivative(pts)) > 1e-8))

    def satisfies_t1(self) -> bool:
        pts = self.critical_points()
        if pts.size != 2 or abs(pts[0]) > 1e-9:
            return False
        grid = np.linspace(0, 1, 4097)[:-1]
        vals = self(grid)
        sub = grid <= pts[1]
        return bool(np.all(vals < 1) and np.all(vals[sub] <= 0.5 + 1e-13) and np.all(vals[~sub] > 0.5 - 1e-13)
                    and float(self(pts[1] / 2)) < 0.5 and float(self((1 + pts[1]) / 2)) > 0.5)

    @property
    def u_star(self) -> float:
        if not self.satisfies_t1():
            raise ValueError("profile does not have a single subcritical arc starting at 0")
        return float(self.critical_points()[1])


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


# --- samplers --------------------------------------------------------------


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def sample_mu_N(spec: ProfileSpec | Callable, n: int, seed) -> ExclusionConfig:
    """Independent sites with P(eta_x = 1) = rho(x / N)."""
    if n < 1:
        raise ValueError("N must be positive")
    probs = np.asarray(spec(np.arange(n) / n), dtype=float)
    if np.any(probs < 0) or np.any(probs > 1):
        raise ValueError("profile leaves [0, 1]")
    return ExclusionConfig((_rng(seed).random(n) < probs).astype(np.uint8))


def _exact(rho):
    """Rational value of a density; floats are read by their shortest decimal form."""
    if isinstance(rho, (str, Rational)):
        return Fraction(rho)
    value = float(rho)
    if not math.isfinite(value):
        raise ValueError("density must be finite")
    return Fraction(repr(value))


def alpha_of(rho) -> Fraction:
    rho = _exact(rho)
    return rho / (1 - rho)


def gcm_weight(sigma: Sequence[int], rho):
    """Probability of the window ``sigma`` (sites 0..l) under pi_rho, rho in (1/2, 1)."""
    rho = _exact(rho)
    if not HALF < rho < 1:
        raise ValueError("grand-canonical weights need rho in (1/2, 1)")
    sigma = [int(s) for s in sigma]
    ell = len(sigma) - 1
    if ell < 0:
        raise ValueError("window must contain at least one site")
    if any(a == 0 and b == 0 for a, b in zip(sigma, sigma[1:])):
        return rho * 0
    p = sum(sigma)
    return (1 - rho) * ((1 - rho) / rho) ** (ell - p) * ((2 * rho - 1) / rho) ** (2 * p - ell - sigma[0] - sigma[-1])


def bernoulli_weight(sigma: Sequence[int], rho):
    rho = _exact(rho)
    out = rho * 0 + 1
    for s in sigma:
        out *= rho if s else 1 - rho
    return out


def sample_gcm(rho, length: int, seed, count: int | None = None):
    """Stationary window of pi_rho by the renewal construction.

    Runs of particles between empty sites are i.i.d. geometric with mean
    alpha = rho / (1 - rho).  The window starts on an empty site with
    probability 1 - rho, otherwise inside a run whose residual length is
    again geometric.  With ``count`` an array of independent windows is
    returned instead of a single configuration.
    """
    rho = float(rho)
    if not 0.5 < rho <= 1:
        raise ValueError("sample_gcm needs rho in (1/2, 1]")
    rng = _rng(seed)
    rows = 1 if count is None else int(count)
    if rho == 1.0:
        block = np.ones((rows, length), dtype=np.uint8)
        return ExclusionConfig(block[0]) if count is None else block
    success = (1 - rho) / rho  # 1 / alpha
    inside_run = rng.random(rows) < rho
    first = np.where(inside_run, rng.geometric(success, rows), 0)
    out = np.ones((rows, length), dtype=np.uint8)
    zero_pos = first.astype(np.int64)
    live = zero_pos < length
    while np.any(live):
        r = np.flatnonzero(live)
        out[r, zero_pos[r]] = 0
        zero_pos[r] += 1 + rng.geometric(success, r.size)
        live = zero_pos < length
    return ExclusionConfig(out[0]) if count is None else out


def sample_subcritical(rho, n: int, seed) -> ExclusionConfig:
    """One of the two alternating configurations, each with probability 1/2."""
    if float(rho) > 0.5:
        raise ValueError("subcritical measure needs rho <= 1/2")
    if n % 2:
        raise ValueError("alternation needs an even torus")
    phase = int(_rng(seed).integers(2))
    return ExclusionConfig((np.arange(n) + phase) % 2)


def sample_nu_alpha(alpha: float, k: int, seed) -> ZeroRangeConfig:
    """I.i.d. geometric counts on {1, 2, ...} with mean alpha."""
    alpha = float(alpha)
    if alpha < 1:
        raise ValueError("alpha must be at least 1")
    return ZeroRangeConfig(_rng(seed).geometric(1.0 / alpha, k))


def sample_ergodic_torus(n: int, particles: int, seed) -> ExclusionConfig:
    """Uniform ergodic configuration on the torus with a fixed particle count.

    This is the equilibrium of the exclusion dynamics restricted to the
    ergodic component: a uniform composition of the particles into the
    gaps between empty sites, placed with a uniform rotation.
    """
    empties = n - particles
    if empties < 1 or particles < empties:
        raise ValueError("need 1 <= empty sites <= particles")
    rng = _rng(seed)
    cuts = np.sort(rng.choice(np.arange(1, particles), size=empties - 1, replace=False))
    gaps = np.diff(np.concatenate([[0], cuts, [particles]]))
    eta = map_from_zero_range(gaps)
    return eta.rotated(int(rng.integers(n)))


# --- exact verifiers -------------------------------------------------------


@dataclass(frozen=True)
class LocalFunction:
    """Function of the sites offset, ..., offset + width - 1."""

    offset: int
    width: int
    func: Callable[[tuple], int]
    name: str = "f"

    def __call__(self, window: tuple) -> int:
        return self.func(window)

    @classmethod
    def occupation(cls, site: int = 0) -> "LocalFunction":
        return cls(site, 1, lambda w: w[0], f"eta_{site}")

    @classmethod
    def product(cls, sites: Sequence[int]) -> "LocalFunction":
        lo, hi = min(sites), max(sites)
        rel = [s - lo for s in sites]
        return cls(lo, hi - lo + 1, lambda w: int(all(w[r] for r in rel)), "eta_" + "".join(map(str, sites)))

    @classmethod
    def pattern(cls, offset: int, pattern: Sequence[int]) -> "LocalFunction":
        pattern = tuple(int(p) for p in pattern)
        return cls(offset, len(pattern), lambda w: int(tuple(w) == pattern), f"1[{pattern}]")


def _rate(window: Sequence[int], x: int) -> int:
    a, b, c, d = window[x - 1], window[x], window[x + 1], window[x + 2]
    return a * b * (1 - c) + (1 - b) * c * d


def stationarity_residual(f: LocalFunction, rho, measure: str = "grand-canonical"):
    """Expectation of the generator applied to ``f`` under the given window law.

    The sum runs over every configuration on the support of f enlarged by
    two sites on each side, which holds all rates that can change f.
    ``measure="bernoulli"`` swaps in the product law as a negative control.
    """
    if not isinstance(f, LocalFunction) or f.width < 1:
        raise ValueError("stationarity residual needs a local function with finite support")
    weight = {"grand-canonical": gcm_weight, "bernoulli": bernoulli_weight}[measure]
    pad = 2
    length = f.width + 2 * pad
    lo = pad  # index of the first support site inside the window
    total = _exact(rho) * 0
    for sigma in itertools.product((0, 1), repeat=length):
        w = weight(sigma, rho)
        if not w:
            continue
        base = f(sigma[lo : lo + f.width])
        acc = 0
        for x in range(lo - 1, lo + f.width):
            if _rate(sigma, x):
                swapped = list(sigma)
                swapped[x], swapped[x + 1] = swapped[x + 1], swapped[x]
                acc += f(tuple(swapped[lo : lo + f.width])) - base
        total += w * acc
    return total


def nu_alpha_weight(omega: Sequence[int], alpha):
    alpha = _exact(alpha)
    out = alpha * 0 + 1
    for w in omega:
        if w < 1:
            return alpha * 0
        out *= (1 / alpha) * (1 - 1 / alpha) ** (w - 1)
    return out


def zero_range_moves(omega: tuple[int, ...]) -> dict[tuple[int, ...], int]:
    """Outgoing transitions of the torus zero-range generator with rates."""
    k = len(omega)
    moves: dict[tuple[int, ...], int] = {}
    for x in range(k):
        if omega[x] < 2:
            continue
        for step in (-1, 1):
            target = list(omega)
            target[x] -= 1
            target[(x + step) % k] += 1
            key = tuple(target)
            moves[key] = moves.get(key, 0) + 1
    return moves


def detailed_balance_residual(alpha, k: int, cap: int):
    """Largest flux imbalance over transitions inside {0..cap}^K."""
    if not 1 <= k <= 8:
        raise ValueError("truncation supports 1 <= K <= 8")
    alpha = _exact(alpha)
    worst = alpha * 0
    for omega in itertools.product(range(cap + 1), repeat=k):
        for target, rate in zero_range_moves(omega).items():
            if max(target) > cap:
                continue
            back = zero_range_moves(target).get(omega, 0)
            gap = abs(nu_alpha_weight(omega, alpha) * rate - nu_alpha_weight(target, alpha) * back)
            worst = max(worst, gap)
    return worst


def gcm_expectation(func: Callable[[tuple], object], width: int, rho):
    """Exact expectation of a function of ``width`` consecutive sites."""
    return sum(gcm_weight(s, rho) * func(s) for s in itertools.product((0, 1), repeat=width))


def h_expectation(rho):
    """Exact grand-canonical mean of h, from the weights on three sites."""
    return gcm_expectation(lambda s: s[0] * s[1] + s[1] * s[2] - s[0] * s[1] * s[2], 3, rho)
