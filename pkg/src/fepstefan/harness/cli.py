"""Command-line entry point: ``fepstefan {simulate,pde,sample,experiment,verify}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import struct
import sys
import time
from pathlib import Path
from typing import Iterable

from ..dynamics import SimParams, run_fep
from ..lattice import ERGODIC, ExclusionConfig, PhaseDecomposition, empty_sites, front_positions, two_phased_decompose
from ..measures import sample_ergodic_torus, sample_gcm, sample_mu_N, sample_nu_alpha
from ..stefan import DensityField, SolverParams, extract_interfaces, solve_weak_run
from .config import ConfigError, ExperimentSpec, load_config, replica_seed
from .experiments import EXPERIMENTS, default_spec
from .runner import RunManifest, file_digest, quorum_met, resolve_workers, run_tasks, write_csv, write_json
from .verify import SUITES, run_suite

LOGGER = logging.getLogger("fepstefan")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SNAPSHOT_MAGIC = b"FEPSNAP1"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 already; keep the message on stderr
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- snapshot stream -------------------------------------------------------


def write_snapshots(path: Path, frames: Iterable[tuple[float, bytes]]) -> Path:
    """Length-prefixed records: magic, then (float64 time, uint64 size, payload)*."""
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        for t, payload in frames:
            fh.write(struct.pack("<dQ", float(t), len(payload)))
            fh.write(payload)
    return path


def read_snapshots(path: Path) -> list[tuple[float, bytes]]:
    data = Path(path).read_bytes()
    if not data.startswith(SNAPSHOT_MAGIC):
        raise ValueError(f"{path} is not a snapshot stream")
    pos, out = len(SNAPSHOT_MAGIC), []
    while pos < len(data):
        t, size = struct.unpack_from("<dQ", data, pos)
        pos += 16
        out.append((t, data[pos:pos + size]))
        pos += size
    return out


# --- helpers ---------------------------------------------------------------


def _spec(args, kind: str, defaults: dict) -> ExperimentSpec:
    if args.config:
        spec = load_config(args.config)
        if spec.kind != kind:
            raise ConfigError(f"config is for {spec.kind!r}, command expects {kind!r}")
    else:
        spec = ExperimentSpec.from_dict({"kind": kind, **defaults})
    changes = {}
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    if getattr(args, "replicas", None):
        changes["replicas"] = args.replicas
    return dataclasses.replace(spec, **changes) if changes else spec


def _out_dir(spec: ExperimentSpec) -> Path:
    path = Path(spec.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _finish(manifest: RunManifest, out: Path, files: list[Path], status: str) -> None:
    manifest.outputs = {p.name: file_digest(p) for p in files}
    manifest.status = status
    manifest.write(out)


def _initial_state(spec: ExperimentSpec, n: int, seed: int) -> ExclusionConfig:
    text = spec.params.get("initial")
    if text:
        return ExclusionConfig.from_string(text)
    return sample_mu_N(spec.profile_spec(), n, seed)


# --- commands --------------------------------------------------------------


def cmd_simulate(args) -> int:
    spec = _spec(args, "simulate", {"sizes": [1024], "times": [0.01, 0.02, 0.03, 0.04, 0.05]})
    out = _out_dir(spec)
    manifest = RunManifest(spec_hash=spec.digest(), kind="simulate")
    manifest.write(out)
    started = time.perf_counter()
    horizon = float(spec.params.get("horizon", max(spec.times, default=0.05)))
    frames, rows = [], []
    failures = []
    sizes = spec.sizes or [len(spec.params["initial"])]
    for n in sizes:
        for r in range(spec.replicas):
            seed = replica_seed(spec.base_seed, n, r)
            key = f"N{n}_r{r:04d}"
            manifest.seeds[key] = seed
            eta0 = _initial_state(spec, n, seed)
            traj = run_fep(eta0, SimParams(horizon, spec.times, seed=seed))
            manifest.event_counts[key] = traj.event_count
            LOGGER.info("%s: %d events in %.2fs", key, traj.event_count, traj.wall_time)
            history = [two_phased_decompose(s) for s in traj.states]
            seen_ergodic = seen_two_phased = False
            for t, state, dec in zip(traj.times, traj.states, history):
                cfg = ExclusionConfig(state)
                frames.append((float(t), cfg.to_bytes()))
                if cfg.particles != eta0.particles:
                    failures.append(f"{key}: particle count changed at t={t:g}")
                ergodic = dec is ERGODIC
                two_phased = ergodic or isinstance(dec, PhaseDecomposition)
                if (seen_ergodic and not ergodic) or (seen_two_phased and not two_phased):
                    failures.append(f"{key}: left an absorbing set at t={t:g}")
                seen_ergodic |= ergodic
                seen_two_phased |= two_phased
            try:
                fronts = front_positions(history)
            except ValueError as exc:
                failures.append(f"{key}: {exc}")
                fronts = [None] * len(history)
            for t, state, dec, fr in zip(traj.times, traj.states, history, fronts):
                rows.append({"experiment": "simulate", "N": n, "seed": seed, "time": float(t),
                             "particles": int(state.sum()), "two_phased": dec is not None,
                             "ergodic": dec is ERGODIC,
                             "front_left": None if fr is None else fr[0],
                             "front_right": None if fr is None else fr[1],
                             "events": traj.event_count})
    files = [write_snapshots(out / "snapshots.bin", frames),
             write_csv(out / "stats.csv", rows)]
    manifest.wall_clock = time.perf_counter() - started
    verdict = {"kind": "simulate", "violations": failures, "pass": not failures,
               "event_counts": manifest.event_counts}
    files.append(write_json(out / "verdict.json", verdict))
    _finish(manifest, out, files, "failed" if failures else "complete")
    for line in failures:
        LOGGER.error(line)
    print(json.dumps({"pass": not failures, "events": manifest.event_counts, "out": str(out)}))
    return EXIT_FAIL if failures else EXIT_OK


def cmd_pde(args) -> int:
    spec = _spec(args, "pde", {"times": [0.0, 0.01, 0.02, 0.03, 0.04, 0.05]})
    out = _out_dir(spec)
    manifest = RunManifest(spec_hash=spec.digest(), kind="pde")
    manifest.write(out)
    started = time.perf_counter()
    times = spec.times or [0.05]
    params = SolverParams(m=spec.m, dt=spec.params.get("dt"), end_time=max(times))
    params.time_step()  # reject a CFL-violating step before any work
    rho0 = DensityField.from_profile(spec.profile_spec(), spec.m)
    run = solve_weak_run(rho0, params, times)
    interfaces = extract_interfaces(run.fields)
    failures = []
    mass0 = rho0.mass
    drift = max(abs(f.mass - mass0) for f in run.fields)
    if drift > 1e-12 * max(run.steps, 1):
        failures.append(f"mass drift {drift:g} over {run.steps} steps")
    if run.min_value < -1e-12 or run.max_value > 1 + 1e-12:
        failures.append("density left [0, 1]")
    nodes = rho0.nodes
    field_rows = [{"time": f.time, "u": float(u), "rho": float(v)}
                  for f in run.fields for u, v in zip(nodes, f.values)]
    iface_rows = [{"t": t, "u_minus": a, "u_plus": b, "merged": m} for t, a, b, m in interfaces.rows()]
    files = [write_csv(out / "fields.csv", field_rows, ["time", "u", "rho"]),
             write_csv(out / "interfaces.csv", iface_rows, ["t", "u_minus", "u_plus", "merged"])]
    verdict = {"kind": "pde", "steps": run.steps, "mass_drift": drift, "min": run.min_value,
               "max": run.max_value, "violations": failures, "pass": not failures}
    files.append(write_json(out / "verdict.json", verdict))
    manifest.wall_clock = time.perf_counter() - started
    _finish(manifest, out, files, "failed" if failures else "complete")
    print(json.dumps({"pass": not failures, "steps": run.steps, "out": str(out)}))
    return EXIT_FAIL if failures else EXIT_OK


def _draw(measure: str, spec: ExperimentSpec, n: int, seed: int):
    p = spec.params
    if measure == "mu":
        return sample_mu_N(spec.profile_spec(), n, seed)
    if measure == "gcm":
        return ExclusionConfig(sample_gcm(float(p.get("density", 0.75)), n, seed))
    if measure == "ergodic":
        return sample_ergodic_torus(n, int(round(float(p.get("density", 0.75)) * n)), seed)
    if measure == "nu":
        return sample_nu_alpha(float(p.get("alpha", 1.5)), n, seed)
    raise ConfigError(f"unknown measure {measure!r}; expected mu, gcm, ergodic or nu")


def cmd_sample(args) -> int:
    spec = _spec(args, "sample", {"sizes": [1024], "replicas": 4})
    out = _out_dir(spec)
    manifest = RunManifest(spec_hash=spec.digest(), kind="sample")
    manifest.write(out)
    measure = spec.params.get("measure", "mu")
    frames, rows = [], []
    for n in spec.sizes:
        for r in range(spec.replicas):
            seed = replica_seed(spec.base_seed, n, r)
            manifest.seeds[f"N{n}_r{r:04d}"] = seed
            cfg = _draw(measure, spec, n, seed)
            frames.append((0.0, cfg.to_bytes()))
            if isinstance(cfg, ExclusionConfig):
                rows.append({"experiment": "sample", "N": n, "seed": seed, "measure": measure,
                             "particles": cfg.particles, "zeros": int(empty_sites(cfg).size),
                             "two_phased": two_phased_decompose(cfg) is not None})
            else:
                rows.append({"experiment": "sample", "N": n, "seed": seed, "measure": measure,
                             "particles": cfg.mass, "zeros": cfg.size, "two_phased": None})
    files = [write_snapshots(out / "samples.bin", frames),
             write_csv(out / "stats.csv", rows, ["experiment", "N", "seed", "measure", "particles", "zeros",
                                                 "two_phased"])]
    _finish(manifest, out, files, "complete")
    print(json.dumps({"pass": True, "samples": len(rows), "out": str(out)}))
    return EXIT_OK


def cmd_experiment(args) -> int:
    kind = args.kind
    spec = _spec(args, kind, default_spec(kind).to_dict() | {"out": str(Path("runs") / kind)})
    out = _out_dir(spec)
    make_tasks, aggregate = EXPERIMENTS[kind]
    tasks = make_tasks(spec)
    LOGGER.info("%s: %d replicas", kind, len(tasks))
    results, manifest = run_tasks(spec, tasks, out, workers=resolve_workers(args.workers))
    outcome = aggregate(spec, results)
    verdict = dict(outcome.verdict)
    verdict["failed_replicas"] = len(manifest.failures)
    verdict["quorum_met"] = quorum_met(manifest, len(tasks))
    files = [write_csv(out / "summary.csv", outcome.rows, outcome.columns),
             write_json(out / "verdict.json", verdict)]
    ok = bool(verdict["pass"] and verdict["quorum_met"])
    _finish(manifest, out, files, "complete" if ok else "failed")
    print(json.dumps(verdict, sort_keys=True, default=str))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_verify(args) -> int:
    results = run_suite(args.suite)
    for res in results:
        print(f"{'PASS' if res.passed else 'FAIL'} {res.name} ({res.seconds:.2f}s) {json.dumps(res.detail, default=str)}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / f"verify_{args.suite}.json",
                   {r.name: {"pass": r.passed, "seconds": r.seconds, "detail": r.detail} for r in results})
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


# --- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON experiment file")
    common.add_argument("--seed", type=int, help="base seed (overrides the config)")
    common.add_argument("--workers", type=int, default=1, help="replica processes (FEPSTEFAN_WORKERS overrides)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="fepstefan", description="Facilitated exclusion and Stefan problem experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="run exclusion trajectories").add_argument(
        "--replicas", type=int)
    sub.add_parser("pde", parents=[common], help="solve the Stefan problem on a grid")
    sub.add_parser("sample", parents=[common], help="draw initial or equilibrium configurations").add_argument(
        "--replicas", type=int)
    exp = sub.add_parser("experiment", parents=[common], help="run a canned ensemble experiment")
    exp.add_argument("kind", choices=sorted(EXPERIMENTS))
    exp.add_argument("--replicas", type=int)
    ver = sub.add_parser("verify", parents=[common], help="run exact or randomized self-checks")
    ver.add_argument("suite", choices=SUITES)
    return parser


COMMANDS = {"simulate": cmd_simulate, "pde": cmd_pde, "sample": cmd_sample,
            "experiment": cmd_experiment, "verify": cmd_verify}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"fepstefan: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # bad parameters such as a CFL-violating time step
        print(f"fepstefan: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"fepstefan: invariant violated: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
