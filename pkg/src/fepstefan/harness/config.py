"""Experiment specifications: loading, hashing and seed derivation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..measures import ProfileSpec

SCHEMA_VERSION = 1
KINDS = ("simulate", "pde", "sample", "hydro", "fronts", "hitting", "oneblock", "typicality", "occupancy")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment specifications."""


@dataclass
class ExperimentSpec:
    kind: str
    profile: dict = field(default_factory=lambda: {"family": "reference"})
    sizes: list[int] = field(default_factory=list)
    m: int = 512
    ells: list[int] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    replicas: int = 1
    base_seed: int = 0
    out: str = "runs"
    params: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    schema: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.schema != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema version {self.schema}")
        if self.replicas < 1:
            raise ConfigError("replicas must be positive")
        if any(n < 1 for n in self.sizes):
            raise ConfigError("sizes must be positive")
        if sorted(self.times) != list(self.times) or any(t < 0 for t in self.times):
            raise ConfigError("times must be sorted and non-negative")
        self.sizes = [int(n) for n in self.sizes]
        self.ells = [int(e) for e in self.ells]
        self.times = [float(t) for t in self.times]
        try:
            self.profile_spec()
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad profile: {exc}") from exc

    def profile_spec(self) -> ProfileSpec:
        return ProfileSpec.from_dict(self.profile)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        if "kind" not in data:
            raise ConfigError("config needs a 'kind'")
        return cls(**data)

    def digest(self) -> str:
        """Hash of everything that affects results (the output path does not)."""
        payload = self.to_dict()
        payload.pop("out")
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def load_config(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    raw = path.read_bytes()
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(raw)
        else:
            data = tomllib.loads(raw.decode())
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return ExperimentSpec.from_dict(data)


def replica_seed(base_seed: int, *keys: int) -> int:
    """64-bit seed for one replica, a pure function of the base seed and keys."""
    entropy = [int(base_seed) & ((1 << 64) - 1)] + [int(k) for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def merged_params(spec: ExperimentSpec, defaults: dict[str, Any]) -> dict[str, Any]:
    out = dict(defaults)
    out.update(spec.params)
    return out
