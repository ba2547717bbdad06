"""Replica pool, per-replica checkpoints and run manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

from .. import __version__
from .config import ExperimentSpec

LOGGER = logging.getLogger(__name__)
WORKERS_ENV = "FEPSTEFAN_WORKERS"
QUORUM = 0.9


@dataclass(frozen=True)
class Task:
    key: str
    seed: int
    func: Callable[..., dict]
    kwargs: dict


@dataclass
class RunManifest:
    spec_hash: str
    kind: str
    code_version: str = __version__
    seeds: dict[str, int] = field(default_factory=dict)
    status: str = "running"
    started: float = field(default_factory=time.time)
    wall_clock: float = 0.0
    event_counts: dict[str, int] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(asdict(self), indent=2, sort_keys=True))
        tmp.replace(path)
        return path


def resolve_workers(flag: int | None) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return max(1, int(flag or 1))


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _call(task: Task) -> tuple[str, dict | None, str | None]:
    try:
        return task.key, task.func(seed=task.seed, **task.kwargs), None
    except Exception as exc:  # a failed replica is reported, not fatal
        LOGGER.exception("replica %s failed", task.key)
        return task.key, None, f"{type(exc).__name__}: {exc}"


def run_tasks(spec: ExperimentSpec, tasks: list[Task], out_dir: Path, workers: int = 1,
              manifest: RunManifest | None = None) -> tuple[dict[str, dict], RunManifest]:
    """Run replicas, reusing checkpoints written by an earlier run of the same spec."""
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "replicas"
    ckpt_dir.mkdir(exist_ok=True)
    digest = spec.digest()
    manifest = manifest or RunManifest(spec_hash=digest, kind=spec.kind)
    manifest.seeds.update({t.key: t.seed for t in tasks})
    manifest.write(out_dir)
    started = time.perf_counter()

    results: dict[str, dict] = {}
    pending = []
    for task in tasks:
        ckpt = ckpt_dir / f"{task.key}.json"
        if ckpt.exists():
            saved = json.loads(ckpt.read_text())
            if saved.get("spec_hash") == digest and saved.get("seed") == task.seed:
                results[task.key] = saved["result"]
                continue
        pending.append(task)
    if len(pending) < len(tasks):
        LOGGER.info("resuming: %d of %d replicas already done", len(tasks) - len(pending), len(tasks))

    def store(key: str, result: dict | None, error: str | None, seed: int) -> None:
        if error is not None:
            manifest.failures[key] = error
            return
        results[key] = result
        payload = {"spec_hash": digest, "seed": seed, "result": result}
        (ckpt_dir / f"{key}.json").write_text(json.dumps(payload, sort_keys=True))

    seeds = {t.key: t.seed for t in pending}
    if workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for key, result, error in pool.map(_call, pending):
                store(key, result, error, seeds[key])
    else:
        for task in pending:
            store(*_call(task), task.seed)

    for key, res in results.items():
        if isinstance(res, dict) and "events" in res:
            manifest.event_counts[key] = int(res["events"])
    manifest.wall_clock += time.perf_counter() - started
    manifest.write(out_dir)
    return {k: results[k] for k in sorted(results)}, manifest


def quorum_met(manifest: RunManifest, total: int) -> bool:
    return total == 0 or (total - len(manifest.failures)) / total >= QUORUM


def write_csv(path: Path, rows: list[dict], columns: list[str] | None = None) -> Path:
    columns = columns or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k)) for k in columns})
    path.write_text(buf.getvalue())
    return path


def _fmt(value: Any) -> Any:
    if isinstance(value, float):
        return repr(value)
    return value


def write_json(path: Path, payload: dict) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(value: Any):
    if hasattr(value, "item"):
        return value.item()
    if isinstance(value, (set, tuple)):
        return list(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")
