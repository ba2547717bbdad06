"""Canned ensemble experiments: replica functions plus aggregation rules.

Every replica function is a top-level function of plain arguments so it can
be shipped to worker processes; it returns a JSON-ready dict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..analysis import (
    MacroMapping,
    TypicalityParams,
    block_profile_l1,
    front_match_error,
    log2,
    one_block_statistic,
    typical_check,
    wilson_interval,
    zero_position_diagnostics,
)
from ..dynamics import SimParams, run_fep, run_zero_range
from ..lattice import empty_sites, front_positions, map_to_zero_range, two_phased_decompose
from ..measures import ProfileSpec, sample_ergodic_torus, sample_mu_N
from ..stefan import DensityField, SolverParams, extract_interfaces, solve_weak
from .config import ExperimentSpec, merged_params, replica_seed
from .runner import Task


@dataclass
class Outcome:
    rows: list[dict]
    verdict: dict
    columns: list[str]


# --- replica functions -----------------------------------------------------


def hydro_replica(seed: int, n: int, profile: dict, times: list[float], ell: int,
                  pde_values: list[list[float]]) -> dict:
    spec = ProfileSpec.from_dict(profile)
    eta0 = sample_mu_N(spec, n, seed)
    traj = run_fep(eta0, SimParams(max(times), times, seed=seed))
    history = [two_phased_decompose(s) for s in traj.states]
    fronts = front_positions(history)
    rows = []
    for t, state, dec, fr, ref in zip(traj.times, traj.states, history, fronts, pde_values):
        field = DensityField(np.asarray(ref), float(t))
        rows.append({
            "time": float(t),
            "l1": block_profile_l1(state, field, ell),
            "two_phased": dec is not None,
            "front_left": None if fr is None else int(fr[0]),
            "front_right": None if fr is None else int(fr[1]),
            "particles": int(state.sum()),
        })
    return {"events": traj.event_count, "rows": rows, "particles0": eta0.particles}


def hitting_replica(seed: int, n: int, profile: dict, exponent: float, observations: int) -> dict:
    spec = ProfileSpec.from_dict(profile)
    eta0 = sample_mu_N(spec, n, seed)
    t_n = n ** (-exponent)
    obs = list(t_n * np.arange(0, observations + 1) / observations)
    if two_phased_decompose(eta0) is not None:
        return {"events": 0, "hit": 0.0, "t_n": t_n}
    traj = run_fep(eta0, SimParams(t_n, obs, seed=seed), stop_when_two_phased=True)
    hit = traj.extras["stopped_at"]
    if hit is None:
        hit = math.inf
    return {"events": traj.event_count, "hit": hit, "t_n": t_n}


def oneblock_replica(seed: int, n: int, density: float, ells: list[int], times: list[float]) -> dict:
    rng = np.random.default_rng(seed)
    particles = int(round(density * n))
    eta0 = sample_ergodic_torus(n, particles, rng)
    traj = run_fep(eta0, SimParams(max(times), times, seed=seed))
    return {"events": traj.event_count, "stats": {str(ell): one_block_statistic(traj, ell) for ell in ells}}


def typicality_replica(seed: int, n: int, profile: dict) -> dict:
    spec = ProfileSpec.from_dict(profile)
    mapping = MacroMapping(spec)
    eta0 = sample_mu_N(spec, n, seed)
    zeros = zero_position_diagnostics(eta0, mapping)
    omega = map_to_zero_range(eta0, int(empty_sites(eta0)[0]))
    params = TypicalityParams.from_profile(omega.size, mapping)
    report = typical_check(omega, params)
    return {
        "zeros": zeros.zeros,
        "zeros_in_window": zeros.zeros_in_window,
        "max_deviation": zeros.max_deviation,
        "deviation_ok": zeros.deviation_ok,
        "cond_i": report.cond_i,
        "cond_ii": report.cond_ii,
        "witness_failures": report.witness_failures,
        "typical": zeros.zeros_in_window and zeros.deviation_ok and report.typical,
    }


def occupancy_replica(seed: int, n: int, profile: dict, exponent: float) -> dict:
    spec = ProfileSpec.from_dict(profile)
    eta0 = sample_mu_N(spec, n, seed)
    omega = map_to_zero_range(eta0, int(empty_sites(eta0)[0]))
    k0 = omega.size
    horizon = k0**exponent
    traj = run_zero_range(omega, SimParams(horizon, seed=seed))
    cap = log2(k0)
    peak = int(traj.high_water.max())
    return {"events": traj.event_count, "k0": k0, "horizon": horizon, "cap": cap, "peak": peak,
            "held": bool(peak < cap)}


# --- PDE reference ---------------------------------------------------------


def weak_reference(profile: ProfileSpec, m: int, times: list[float]) -> list[DensityField]:
    return solve_weak(DensityField.from_profile(profile, m), SolverParams(m=m, end_time=max(times)), times)


def macro_fronts(profile: ProfileSpec, m: int, end: float, step: float = 5e-4):
    grid = sorted(set(np.round(np.arange(0.0, end + step / 2, step), 12)) | {end})
    fields = weak_reference(profile, m, grid)
    return extract_interfaces(fields)


# --- experiment table ------------------------------------------------------


def _hydro_tasks(spec: ExperimentSpec) -> list[Task]:
    p = merged_params(spec, {})
    profile = spec.profile_spec()
    fields = weak_reference(profile, spec.m, spec.times)
    values = [f.values.tolist() for f in fields]
    tasks = []
    for n in spec.sizes:
        ell = int(p.get("ell", math.floor(n**0.75)))
        for r in range(spec.replicas):
            seed = replica_seed(spec.base_seed, n, r)
            tasks.append(Task(f"N{n}_r{r:04d}", seed, hydro_replica,
                              dict(n=n, profile=spec.profile, times=spec.times, ell=ell, pde_values=values)))
    return tasks


def _hydro_rows(spec: ExperimentSpec, results: dict) -> list[dict]:
    rows = []
    for key, res in results.items():
        n = int(key[1:].split("_")[0])
        r = int(key.split("_r")[1])
        for row in res["rows"]:
            rows.append({"experiment": spec.kind, "N": n, "replica": r,
                         "seed": replica_seed(spec.base_seed, n, r), **row})
    rows.sort(key=lambda d: (d["N"], d["replica"], d["time"]))
    return rows


def _hydro_aggregate(spec: ExperimentSpec, results: dict) -> Outcome:
    rows = _hydro_rows(spec, results)
    t_eval = float(spec.params.get("eval_time", spec.times[-1]))
    limit = float(spec.thresholds.get("l1_max", 0.05))
    means = {}
    for n in spec.sizes:
        vals = [r["l1"] for r in rows if r["N"] == n and abs(r["time"] - t_eval) < 1e-12]
        means[n] = float(np.mean(vals)) if vals else math.nan
    seq = [means[n] for n in spec.sizes]
    monotone = all(b <= a for a, b in zip(seq, seq[1:]))
    largest = seq[-1]
    verdict = {"kind": spec.kind, "eval_time": t_eval, "mean_l1": {str(k): v for k, v in means.items()},
               "monotone": monotone, "largest_l1": largest, "threshold": limit,
               "pass": bool(monotone and largest <= limit)}
    cols = ["experiment", "N", "replica", "seed", "time", "l1", "two_phased", "front_left", "front_right", "particles"]
    return Outcome(rows, verdict, cols)


def _fronts_aggregate(spec: ExperimentSpec, results: dict) -> Outcome:
    rows = _hydro_rows(spec, results)
    t_eval = float(spec.params.get("eval_time", spec.times[-1]))
    limit = float(spec.thresholds.get("front_error_max", 0.05))
    macro = macro_fronts(spec.profile_spec(), spec.m, t_eval)
    n = max(spec.sizes)
    picked = [r for r in rows if r["N"] == n and abs(r["time"] - t_eval) < 1e-12]
    micro = [None if r["front_left"] is None else (r["front_left"], r["front_right"]) for r in picked]
    match = front_match_error(micro, n, macro, [t_eval] * len(micro))
    out_rows = []
    for r, le, re in zip(picked, match.left_error, match.right_error):
        out_rows.append({"experiment": "fronts", "N": n, "replica": r["replica"], "seed": r["seed"],
                         "time": t_eval, "front_left": r["front_left"], "front_right": r["front_right"],
                         "error_left": None if math.isnan(le) else float(le),
                         "error_right": None if math.isnan(re) else float(re)})
    um, up = macro.at(t_eval)
    mean = match.mean_error
    verdict = {"kind": "fronts", "N": n, "eval_time": t_eval, "macro_fronts": [um % 1.0, up % 1.0],
               "mean_error": mean, "undefined": match.undefined, "replicas": len(picked),
               "threshold": limit, "pass": bool(not math.isnan(mean) and mean <= limit)}
    cols = ["experiment", "N", "replica", "seed", "time", "front_left", "front_right", "error_left", "error_right"]
    return Outcome(out_rows, verdict, cols)


def _hitting_tasks(spec: ExperimentSpec) -> list[Task]:
    p = merged_params(spec, {"exponent": 0.25, "observations": 100})
    return [Task(f"N{n}_r{r:04d}", replica_seed(spec.base_seed, n, r), hitting_replica,
                 dict(n=n, profile=spec.profile, exponent=p["exponent"], observations=p["observations"]))
            for n in spec.sizes for r in range(spec.replicas)]


def _hitting_aggregate(spec: ExperimentSpec, results: dict) -> Outcome:
    limit = float(spec.thresholds.get("fraction_min", 0.9))
    rows = []
    for key, res in results.items():
        n, r = int(key[1:].split("_")[0]), int(key.split("_r")[1])
        rows.append({"experiment": "hitting", "N": n, "replica": r, "seed": replica_seed(spec.base_seed, n, r),
                     "time": res["t_n"], "hitting_time": res["hit"], "two_phased_by_tN": res["hit"] <= res["t_n"],
                     "events": res["events"]})
    per_n = {}
    for n in spec.sizes:
        sub = [r for r in rows if r["N"] == n]
        hits = sum(r["two_phased_by_tN"] for r in sub)
        lo, hi = wilson_interval(hits, len(sub))
        per_n[str(n)] = {"fraction": hits / len(sub) if sub else math.nan, "wilson95": [lo, hi], "replicas": len(sub)}
    largest = per_n[str(max(spec.sizes))]["fraction"]
    verdict = {"kind": "hitting", "per_N": per_n, "threshold": limit, "pass": bool(largest >= limit)}
    cols = ["experiment", "N", "replica", "seed", "time", "hitting_time", "two_phased_by_tN", "events"]
    return Outcome(sorted(rows, key=lambda d: (d["N"], d["replica"])), verdict, cols)


def _oneblock_tasks(spec: ExperimentSpec) -> list[Task]:
    p = merged_params(spec, {"density": 0.75})
    times = spec.times or [0.0005, 0.001, 0.0015, 0.002]
    return [Task(f"N{n}_r{r:04d}", replica_seed(spec.base_seed, n, r), oneblock_replica,
                 dict(n=n, density=p["density"], ells=spec.ells or [8, 16, 32, 64], times=times))
            for n in spec.sizes for r in range(spec.replicas)]


def _oneblock_aggregate(spec: ExperimentSpec, results: dict) -> Outcome:
    ells = spec.ells or [8, 16, 32, 64]
    rows = []
    for key, res in results.items():
        n, r = int(key[1:].split("_")[0]), int(key.split("_r")[1])
        for ell in ells:
            rows.append({"experiment": "oneblock", "N": n, "replica": r, "seed": replica_seed(spec.base_seed, n, r),
                         "ell": ell, "statistic": res["stats"][str(ell)]})
    rows.sort(key=lambda d: (d["N"], d["replica"], d["ell"]))
    n = max(spec.sizes)
    means = [float(np.mean([d["statistic"] for d in rows if d["N"] == n and d["ell"] == ell])) for ell in ells]
    decreasing = all(b < a for a, b in zip(means, means[1:]))
    verdict = {"kind": "oneblock", "N": n, "ells": ells, "mean_statistic": means, "pass": bool(decreasing)}
    return Outcome(rows, verdict, ["experiment", "N", "replica", "seed", "ell", "statistic"])


def _typicality_tasks(spec: ExperimentSpec) -> list[Task]:
    return [Task(f"N{n}_r{r:04d}", replica_seed(spec.base_seed, n, r), typicality_replica,
                 dict(n=n, profile=spec.profile))
            for n in spec.sizes for r in range(spec.replicas)]


def _typicality_aggregate(spec: ExperimentSpec, results: dict) -> Outcome:
    limit = float(spec.thresholds.get("fraction_min", 0.9))
    rows = []
    for key, res in results.items():
        n, r = int(key[1:].split("_")[0]), int(key.split("_r")[1])
        rows.append({"experiment": "typicality", "N": n, "replica": r, "seed": replica_seed(spec.base_seed, n, r),
                     **res})
    rows.sort(key=lambda d: (d["N"], d["replica"]))
    n = max(spec.sizes)
    sub = [d for d in rows if d["N"] == n]
    frac = lambda k: float(np.mean([bool(d[k]) for d in sub])) if sub else math.nan
    verdict = {"kind": "typicality", "N": n, "samples": len(sub),
               "fraction_zero_count_in_window": frac("zeros_in_window"),
               "fraction_zero_positions_ok": frac("deviation_ok"),
               "fraction_cond_i": frac("cond_i"), "fraction_cond_ii_witness": frac("cond_ii"),
               "fraction_all": frac("typical"), "threshold": limit,
               "pass": bool(frac("typical") >= limit)}
    cols = ["experiment", "N", "replica", "seed", "zeros", "zeros_in_window", "max_deviation", "deviation_ok",
            "cond_i", "cond_ii", "witness_failures", "typical"]
    return Outcome(rows, verdict, cols)


def _occupancy_tasks(spec: ExperimentSpec) -> list[Task]:
    p = merged_params(spec, {"exponent": 1.75})
    return [Task(f"N{n}_r{r:04d}", replica_seed(spec.base_seed, n, r), occupancy_replica,
                 dict(n=n, profile=spec.profile, exponent=p["exponent"]))
            for n in spec.sizes for r in range(spec.replicas)]


def _occupancy_aggregate(spec: ExperimentSpec, results: dict) -> Outcome:
    limit = float(spec.thresholds.get("fraction_min", 0.95))
    rows = []
    for key, res in results.items():
        n, r = int(key[1:].split("_")[0]), int(key.split("_r")[1])
        rows.append({"experiment": "occupancy", "N": n, "replica": r, "seed": replica_seed(spec.base_seed, n, r),
                     "time": res["horizon"], **res})
    rows.sort(key=lambda d: (d["N"], d["replica"]))
    n = max(spec.sizes)
    sub = [d for d in rows if d["N"] == n]
    held = sum(d["held"] for d in sub)
    frac = held / len(sub) if sub else math.nan
    verdict = {"kind": "occupancy", "N": n, "replicas": len(sub), "fraction_held": frac,
               "wilson95": list(wilson_interval(held, len(sub))), "max_peak": max(d["peak"] for d in sub) if sub else None,
               "threshold": limit, "pass": bool(frac >= limit)}
    cols = ["experiment", "N", "replica", "seed", "time", "k0", "cap", "peak", "held", "events"]
    return Outcome(rows, verdict, cols)


EXPERIMENTS: dict[str, tuple[Callable, Callable]] = {
    "hydro": (_hydro_tasks, _hydro_aggregate),
    "fronts": (_hydro_tasks, _fronts_aggregate),
    "hitting": (_hitting_tasks, _hitting_aggregate),
    "oneblock": (_oneblock_tasks, _oneblock_aggregate),
    "typicality": (_typicality_tasks, _typicality_aggregate),
    "occupancy": (_occupancy_tasks, _occupancy_aggregate),
}

DEFAULTS: dict[str, dict] = {
    "hydro": {"sizes": [512, 1024, 2048], "times": [0.01, 0.05], "replicas": 8, "m": 512},
    "fronts": {"sizes": [2048], "times": [0.01, 0.05], "replicas": 8, "m": 512},
    "hitting": {"sizes": [2048], "replicas": 50},
    "oneblock": {"sizes": [4096], "replicas": 4, "ells": [8, 16, 32, 64]},
    "typicality": {"sizes": [4096], "replicas": 200},
    "occupancy": {"sizes": [2048], "replicas": 50},
}


def default_spec(kind: str, **overrides) -> ExperimentSpec:
    data = {"kind": kind, **DEFAULTS[kind], **overrides}
    return ExperimentSpec.from_dict(data)
