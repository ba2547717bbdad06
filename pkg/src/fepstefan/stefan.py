"""Numerical solvers for d_t rho = d_uu H(rho) on the unit torus.

``solve_weak`` is the monotone explicit scheme applied to the whole
torus.  ``solve_classical`` tracks the two fronts explicitly: the active
arc is mapped onto a fixed number of moving cells, the frozen arc keeps
the regularized initial data, and each front advances by exactly the
distance needed to lift the swallowed frozen mass to one half.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from .measures import ProfileSpec, script_H

CFL_SAFETY = 0.5
FLUX_LIPSCHITZ = 4.0


@dataclass(frozen=True, eq=False)
class DensityField:
    """Density values at the nodes i / M of the unit torus."""

    values: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=float, copy=True)
        if arr.ndim != 1 or arr.size < 3:
            raise ValueError("a density field needs at least 3 nodes")
        if np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12):
            raise ValueError("density values must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_profile(cls, profile: Callable, m: int, time: float = 0.0) -> "DensityField":
        return cls(np.asarray(profile(np.arange(m) / m), dtype=float), time)

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def spacing(self) -> float:
        return 1.0 / self.size

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.size) / self.size

    @property
    def mass(self) -> float:
        return float(self.values.sum()) / self.size


@dataclass(frozen=True)
class SolverParams:
    m: int = 512
    dt: float | None = None
    end_time: float = 0.05
    regularization: int = 8
    cells: int | None = None  # moving cells on the active arc (classical solver)

    @property
    def du(self) -> float:
        return 1.0 / self.m

    def time_step(self) -> float:
        limit = self.du**2 / (2 * FLUX_LIPSCHITZ)
        dt = CFL_SAFETY * limit if self.dt is None else float(self.dt)
        if not 0 < dt <= limit * (1 + 1e-12):
            raise ValueError(f"time step {dt:g} violates the CFL bound {limit:g}")
        return dt


# --- weak solver -----------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _flux(r):
    return (2.0 * r - 1.0) / r if r > 0.5 else 0.0


@numba.njit(cache=True)
def _weak_steps(rho, lam, nsteps, record):
    m = rho.size
    h = np.empty(m)
    lo = 1.0
    hi = 0.0
    out = np.empty((nsteps if record else 0, m))
    for s in range(nsteps):
        for i in range(m):
            h[i] = _flux(rho[i])
        for i in range(m):
            left = h[i - 1] if i > 0 else h[m - 1]
            right = h[i + 1] if i + 1 < m else h[0]
            rho[i] += lam * (left + right - 2.0 * h[i])
            if rho[i] < lo:
                lo = rho[i]
            if rho[i] > hi:
                hi = rho[i]
        if record:
            out[s, :] = rho
    return lo, hi, out


@numba.njit(cache=True)
def _weak_pair_steps(low, high, lam, nsteps):
    m = low.size
    hl = np.empty(m)
    hh = np.empty(m)
    worst = -np.inf
    for _ in range(nsteps):
        for i in range(m):
            hl[i] = _flux(low[i])
            hh[i] = _flux(high[i])
        for i in range(m):
            a = i - 1 if i > 0 else m - 1
            b = i + 1 if i + 1 < m else 0
            low[i] += lam * (hl[a] + hl[b] - 2.0 * hl[i])
            high[i] += lam * (hh[a] + hh[b] - 2.0 * hh[i])
            gap = low[i] - high[i]
            if gap > worst:
                worst = gap
    return worst


def _segments(start: float, targets: Sequence[float], dt: float):
    """Yield (target, steps, step size) so that every target is hit exactly."""
    t = start
    for target in targets:
        span = float(target) - t
        if span < -1e-15:
            raise ValueError("requested times must be increasing and after the start")
        steps = max(0, math.ceil(span / dt - 1e-9))
        yield float(target), steps, (span / steps if steps else 0.0)
        t = float(target)


@dataclass
class WeakRun:
    fields: list[DensityField]
    steps: int
    min_value: float
    max_value: float


def solve_weak(rho0: DensityField, params: SolverParams, times: Sequence[float] | None = None,
               *, every_step: bool = False) -> list[DensityField]:
    """Advance the monotone explicit scheme and return fields at ``times``.

    ``every_step`` returns every intermediate field instead, which is what
    the weak-form residual needs for a consistent time quadrature.
    """
    return solve_weak_run(rho0, params, times, every_step=every_step).fields


def solve_weak_run(rho0: DensityField, params: SolverParams, times: Sequence[float] | None = None,
                   *, every_step: bool = False) -> WeakRun:
    if rho0.size != params.m:
        raise ValueError("initial field and solver grid differ")
    dt = params.time_step()
    targets = [params.end_time] if times is None else list(times)
    rho = np.array(rho0.values)
    du2 = params.du**2
    fields: list[DensityField] = [DensityField(rho, rho0.time)] if every_step else []
    total = 0
    lo, hi = float(rho.min()), float(rho.max())
    t = rho0.time
    for target, steps, step in _segments(rho0.time, targets, dt):
        if steps:
            seg_lo, seg_hi, rec = _weak_steps(rho, step / du2, steps, every_step)
            lo, hi = min(lo, seg_lo), max(hi, seg_hi)
            if every_step:
                fields.extend(DensityField(row, t + (k + 1) * step) for k, row in enumerate(rec))
        total += steps
        t = target
        if not every_step:
            fields.append(DensityField(rho, target))
    if lo < -1e-12 or hi > 1 + 1e-12:
        raise FloatingPointError("explicit scheme left [0, 1]; time step too large")
    return WeakRun(fields, total, lo, hi)


# --- interfaces ------------------------------------------------------------


@dataclass
class InterfaceState:
    """Front positions per time, on the unwrapped line (u_minus <= u_plus)."""

    times: np.ndarray
    u_minus: np.ndarray
    u_plus: np.ndarray
    merged: np.ndarray
    tau: float = math.inf

    def rows(self) -> list[tuple[float, float, float, bool]]:
        return [(float(t), float(a) % 1.0, float(b) % 1.0, bool(m))
                for t, a, b, m in zip(self.times, self.u_minus, self.u_plus, self.merged)]

    def at(self, t: float) -> tuple[float, float]:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-12:
            raise KeyError(f"no interface record at t={t}")
        return float(self.u_minus[i]), float(self.u_plus[i])


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Cyclic runs of True as (first index, length)."""
    m = mask.size
    if mask.all():
        return [(0, m)]
    if not mask.any():
        return []
    starts = np.flatnonzero(mask & ~np.roll(mask, 1))
    ends = np.flatnonzero(mask & ~np.roll(mask, -1))
    out = []
    for s in starts:
        e = ends[np.searchsorted(ends, s) % ends.size]
        out.append((int(s), int((e - s) % m) + 1))
    return out


def _crossing(values: np.ndarray, inside: int, direction: int) -> float:
    """Sub-grid position of the one-half crossing next to a subcritical run end.

    ``inside`` is the run's end cell; ``direction`` is -1 for the left end
    and +1 for the right end.  Returned in cell units, possibly outside
    [0, M).
    """
    m = values.size
    j = inside
    for _ in range(m):
        nxt = j + direction
        if values[nxt % m] >= 0.5:
            a, b = values[j % m], values[nxt % m]
            frac = (0.5 - a) / (b - a) if b != a else 0.0
            return j + direction * frac
        j = nxt
    return float(inside)


def extract_interfaces(fields: Sequence[DensityField], eps: float = 1e-3,
                       start: tuple[float, float] | None = None) -> InterfaceState:
    """Fronts as the ends of the subcritical arc {rho < 1/2 - eps}.

    Positions are unwrapped continuously from ``start`` (by default the
    first field's own arc) and kept monotone: u_minus never decreases and
    u_plus never increases.
    """
    times, lefts, rights, merged = [], [], [], []
    prev: tuple[float, float] | None = start
    tau = math.inf
    for fld in fields:
        vals = fld.values
        m = fld.size
        arcs = _runs(vals < 0.5 - eps)
        times.append(fld.time)
        if prev is not None and merged and merged[-1]:
            lefts.append(lefts[-1])
            rights.append(rights[-1])
            merged.append(True)
            continue
        if len(arcs) > 1:
            detail = ", ".join(f"[{s / m:.4f}, {(s + n - 1) / m:.4f}]" for s, n in arcs)
            raise ValueError(f"several subcritical arcs at t={fld.time:g}: {detail}")
        if not arcs:
            if prev is None:
                prev = (0.0, 0.0)
            mid = 0.5 * (prev[0] + prev[1])
            lefts.append(mid)
            rights.append(mid)
            merged.append(True)
            tau = min(tau, fld.time)
            continue
        s, n = arcs[0]
        if n == m:
            left, right = 0.0, 1.0
        else:
            left = _crossing(vals, s, -1) / m
            right = _crossing(vals, s + n - 1, +1) / m
        length = (right - left) % 1.0 if n < m else 1.0
        if prev is None:
            left = left if left < 0.5 else left - 1.0
        else:
            left = prev[0] + ((left - prev[0] + 0.5) % 1.0) - 0.5
            left = max(left, prev[0])
        right = left + length
        if prev is not None:
            right = min(right, prev[1])
        prev = (left, right)
        lefts.append(left)
        rights.append(right)
        merged.append(False)
    return InterfaceState(np.array(times), np.array(lefts), np.array(rights), np.array(merged, dtype=bool), tau)


# --- classical solver ------------------------------------------------------


def regularize_profile(spec: ProfileSpec, n: int) -> ProfileSpec:
    """Lower the subcritical part by the factor 1 - 1/n."""
    if n < 3:
        raise ValueError("regularization index must be at least 3")
    return ProfileSpec("regularized", {"base": spec.to_dict(), "n": int(n)})


@dataclass
class _Primitive:
    """Tabulated antiderivative of the frozen data on [-1, 2]."""

    origin: float
    step: float
    density: np.ndarray
    cumulative: np.ndarray

    @classmethod
    def build(cls, profile: Callable, per_unit: int = 1 << 17) -> "_Primitive":
        origin, step = -1.0, 1.0 / per_unit
        nodes = origin + step * np.arange(3 * per_unit + 1)
        mids = nodes[:-1] + step / 2
        dens = np.asarray(profile(mids), dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(dens) * step])
        return cls(origin, step, dens, cum)


@numba.njit(cache=True, inline="always")
def _prim(u, origin, step, dens, cum):
    s = (u - origin) / step
    i = int(math.floor(s))
    if i < 0:
        i = 0
    if i >= dens.size:
        i = dens.size - 1
    return cum[i] + (s - i) * step * dens[i]


@numba.njit(cache=True, inline="always")
def _dens(u, origin, step, dens):
    i = int(math.floor((u - origin) / step))
    if i < 0:
        i = 0
    if i >= dens.size:
        i = dens.size - 1
    return dens[i]


@numba.njit(cache=True)
def _advance_front(pos, deficit, sign, origin, step, dens, cum):
    """Distance d >= 0 with integral of (1/2 - frozen) over the swept strip = deficit."""
    if deficit <= 0.0:
        return pos
    gap = 0.5 - _dens(pos + sign * 1e-12, origin, step, dens)
    d = deficit / gap
    for _ in range(50):
        new = pos + sign * d
        swept = sign * (_prim(new, origin, step, dens, cum) - _prim(pos, origin, step, dens, cum))
        g = 0.5 * d - swept - deficit
        slope = 0.5 - _dens(new, origin, step, dens)
        if slope <= 0.0:
            break
        delta = g / slope
        d -= delta
        if d < 0.0:
            d = 0.0
        if abs(delta) < 1e-15:
            break
    return pos + sign * d


@numba.njit(cache=True)
def _classical_steps(rho, a, b, t0, targets, dt_factor, origin, step, dens, cum, merge_gap, min_gap):
    """Moving-cell finite volumes on the active arc [a, b].

    Returns per target: (a, b, cell values); stops early on merge.
    """
    cells = rho.size
    ntar = targets.size
    out_a = np.empty(ntar)
    out_b = np.empty(ntar)
    out_rho = np.empty((ntar, cells))
    hflux = np.empty(cells)
    g = np.empty(cells + 1)
    t = t0
    k = 0
    status = 0
    while k < ntar:
        length = b - a
        h = length / cells
        if (a - (b - 1.0)) < merge_gap:
            status = 1
            break
        dt = dt_factor * h * h
        if t + dt >= targets[k]:
            dt = targets[k] - t
        for j in range(cells):
            hflux[j] = _flux(rho[j])
        j_left = -(9.0 * hflux[0] - hflux[1]) / (3.0 * h)
        j_right = (9.0 * hflux[cells - 1] - hflux[cells - 2]) / (3.0 * h)
        gap_a = 0.5 - _dens(a - 1e-12, origin, step, dens)
        gap_b = 0.5 - _dens(b + 1e-12, origin, step, dens)
        if gap_a < min_gap or gap_b < min_gap:
            status = 2
            break
        a_new = _advance_front(a, -j_left * dt, -1.0, origin, step, dens, cum)
        b_new = _advance_front(b, j_right * dt, 1.0, origin, step, dens, cum)
        if dt > 0.0:
            va = (a_new - a) / dt
            vb = (b_new - b) / dt
            g[0] = (_prim(a, origin, step, dens, cum) - _prim(a_new, origin, step, dens, cum)) / dt
            g[cells] = -(_prim(b_new, origin, step, dens, cum) - _prim(b, origin, step, dens, cum)) / dt
        else:
            va = 0.0
            vb = 0.0
            g[0] = 0.0
            g[cells] = 0.0
        for f in range(1, cells):
            face_v = va + (f / cells) * (vb - va)
            up = rho[f - 1] if face_v < 0.0 else rho[f]
            g[f] = -(hflux[f] - hflux[f - 1]) / h - up * face_v
        h_new = (b_new - a_new) / cells
        for j in range(cells):
            rho[j] = (rho[j] * h + dt * (g[j] - g[j + 1])) / h_new
        a = a_new
        b = b_new
        t += dt
        if t >= targets[k] - 1e-15:
            t = targets[k]
            out_a[k] = a
            out_b[k] = b
            out_rho[k, :] = rho
            k += 1
    return out_a[:k], out_b[:k], out_rho[:k], a, b, t, status


@dataclass
class ClassicalRun:
    fields: list[DensityField]
    interfaces: InterfaceState
    mass: np.ndarray
    cells: int
    extras: dict = field(default_factory=dict)


def solve_classical(spec: ProfileSpec, n: int, params: SolverParams,
                    times: Sequence[float] | None = None) -> ClassicalRun:
    """Front-tracking solution started from the n-regularized profile.

    The active arc runs from u_plus to u_minus + 1 with value one half at
    both ends; the frozen arc [u_minus, u_plus] holds the regularized data.
    Front speeds follow from the one-sided flux gradient through exact
    mass balance on the strip each front sweeps.
    """
    if not spec.satisfies_t1():
        raise ValueError("profile must have one subcritical arc [0, u_*] and stay below 1")
    reg = regularize_profile(spec, n)
    u_star = spec.u_star
    cells = params.cells or params.m
    targets = np.array([params.end_time] if times is None else list(times), dtype=float)
    if np.any(np.diff(targets) < 0) or targets[0] < 0:
        raise ValueError("requested times must be increasing and non-negative")

    def frozen(u):
        # regularized data on the subcritical arc, with the jump placed at its ends
        u = np.asarray(u, dtype=float)
        wrapped = np.mod(u, 1.0)
        inside = (wrapped > 0) & (wrapped < u_star)
        return np.where(inside, reg(wrapped), spec(wrapped))

    prim = _Primitive.build(frozen)
    a, b = u_star, 1.0
    edges = a + (b - a) * np.arange(cells + 1) / cells
    pvals = np.array([_prim(x, prim.origin, prim.step, prim.density, prim.cumulative) for x in edges])
    rho = np.diff(pvals) / ((b - a) / cells)
    min_gap = 1e-6
    dt_factor = 0.4 / (4 * FLUX_LIPSCHITZ)
    merge_gap = 3 * params.du
    out_a, out_b, out_rho, a_end, b_end, t_end, status = _classical_steps(
        rho, a, b, 0.0, targets, dt_factor, prim.origin, prim.step, prim.density, prim.cumulative,
        merge_gap, min_gap)
    if status == 2:
        raise ValueError("front denominator 1/2 - frozen density fell below 1e-6; use a larger n")

    nodes = np.arange(params.m) * params.du
    fields: list[DensityField] = []
    lefts, rights, merged, masses = [], [], [], []

    def assemble(a_pos, b_pos, vals, t):
        h = (b_pos - a_pos) / cells
        centers = a_pos + h * (np.arange(cells) + 0.5)
        xs = np.concatenate([[a_pos], centers, [b_pos]])
        ys = np.concatenate([[0.5], vals, [0.5]])
        unwrapped = np.where(nodes < a_pos, nodes + 1.0, nodes)
        active = (unwrapped >= a_pos) & (unwrapped <= b_pos)
        values = np.where(active, np.interp(unwrapped, xs, ys), frozen(nodes))
        mass = float(vals.sum() * h + frozen_mass(b_pos - 1.0, a_pos))
        return DensityField(np.clip(values, 0.0, 1.0), t), mass

    def frozen_mass(lo, hi):
        p = lambda x: _prim(x, prim.origin, prim.step, prim.density, prim.cumulative)
        return p(hi) - p(lo)

    for i in range(out_a.size):
        fld, mass = assemble(out_a[i], out_b[i], out_rho[i], targets[i])
        fields.append(fld)
        lefts.append(out_b[i] - 1.0)
        rights.append(out_a[i])
        merged.append(False)
        masses.append(mass)

    tau = math.inf
    if status == 1:
        tau = t_end
        mid = 0.5 * (a_end + b_end - 1.0)
        state, _ = assemble(a_end, b_end, rho, t_end)
        rest = targets[out_a.size :]
        after = solve_weak(state, params, rest) if rest.size else []
        for fld in after:
            fields.append(fld)
            lefts.append(mid)
            rights.append(mid)
            merged.append(True)
            masses.append(fld.mass)
    interfaces = InterfaceState(targets[: len(fields)], np.array(lefts), np.array(rights),
                                np.array(merged, dtype=bool), tau)
    initial_mass = float(frozen_mass(0.0, u_star) + frozen_mass(u_star, 1.0))
    return ClassicalRun(fields, interfaces, np.array(masses), cells, {"initial_mass": initial_mass})


# --- diagnostics -----------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """Smooth test function with its time derivative and second space derivative."""

    phi: Callable[[float, np.ndarray], np.ndarray]
    dphi_dt: Callable[[float, np.ndarray], np.ndarray]
    d2phi_du2: Callable[[float, np.ndarray], np.ndarray]

    __test__ = False

    @classmethod
    def constant_one(cls) -> "TestFunction":
        zero = lambda t, u: np.zeros_like(u)
        return cls(lambda t, u: np.ones_like(u), zero, zero)

    @classmethod
    def cosine(cls, mode: int = 1) -> "TestFunction":
        k = 2 * np.pi * mode
        return cls(lambda t, u: np.cos(k * u), lambda t, u: np.zeros_like(u),
                   lambda t, u: -(k**2) * np.cos(k * u))


def weak_form_residual(fields: Sequence[DensityField], test: TestFunction, end_time: float | None = None) -> float:
    """Defect of the weak formulation, integrated with the trapezoid rule in time."""
    fields = [f for f in fields if end_time is None or f.time <= end_time + 1e-15]
    if len(fields) < 2:
        raise ValueError("need at least two stored fields")
    u = fields[0].nodes
    times = np.array([f.time for f in fields])
    pair = lambda f, g: float(np.mean(f * g))
    first, last = fields[0], fields[-1]
    drift = np.array([pair(f.values, test.dphi_dt(f.time, u)) for f in fields])
    diffusion = np.array([pair(script_H(f.values), test.d2phi_du2(f.time, u)) for f in fields])
    integral = getattr(np, "trapezoid", None) or np.trapz
    return (pair(last.values, test.phi(last.time, u)) - pair(first.values, test.phi(first.time, u))
            - float(integral(drift, times)) - float(integral(diffusion, times)))


@dataclass
class ComparisonReport:
    ordered: bool
    max_violation: float
    nested: bool


def comparison_check(low: DensityField, high: DensityField, params: SolverParams,
                     times: Sequence[float] | None = None, eps: float = 1e-3) -> ComparisonReport:
    """Run both data through the weak scheme and test order and arc nesting.

    Order is checked after every step; nesting of the subcritical sets is
    checked at the requested times.
    """
    if low.size != high.size or low.size != params.m:
        raise ValueError("fields and solver grid differ")
    if np.any(low.values > high.values + 1e-12):
        raise ValueError("initial data are not ordered")
    dt = params.time_step()
    targets = [params.end_time] if times is None else list(times)
    lo, hi = np.array(low.values), np.array(high.values)
    worst = float(np.max(lo - hi))
    nested = True
    for _, steps, step in _segments(low.time, targets, dt):
        if steps:
            worst = max(worst, _weak_pair_steps(lo, hi, step / params.du**2, steps))
        if np.any((hi < 0.5 - eps) & ~(lo < 0.5 - eps)):
            nested = False
    return ComparisonReport(bool(worst <= 1e-12), max(worst, 0.0), nested)
