"""Configurations on the discrete torus and their local observables.

Exclusion configurations are 0/1 rings, zero-range configurations are
count rings.  The helpers here are pure functions; arrays handed back to
callers are fresh copies or read-only views.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True).ravel()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ExclusionConfig:
    """Occupancy ring on the torus of length ``size``."""

    occupancy: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.occupancy)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("occupancy must be a non-empty 1-d sequence")
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError("occupancy entries must be 0 or 1")
        object.__setattr__(self, "occupancy", _frozen_array(arr, np.uint8))

    @classmethod
    def from_string(cls, text: str) -> "ExclusionConfig":
        text = text.strip()
        if not text or set(text) - {"0", "1"}:
            raise ValueError(f"not an exclusion configuration: {text!r}")
        return cls(np.frombuffer(text.encode("ascii"), dtype=np.uint8) - ord("0"))

    @property
    def size(self) -> int:
        return int(self.occupancy.size)

    @property
    def particles(self) -> int:
        return int(self.occupancy.sum())

    def to_string(self) -> str:
        return (self.occupancy + ord("0")).tobytes().decode("ascii")

    def to_bytes(self) -> bytes:
        return struct.pack("<Q", self.size) + np.packbits(self.occupancy).tobytes()

    @classmethod
    def from_bytes(cls, payload: bytes) -> "ExclusionConfig":
        (size,) = struct.unpack_from("<Q", payload)
        body = np.frombuffer(payload, dtype=np.uint8, offset=8)
        if body.size != (size + 7) // 8:
            raise ValueError("truncated or oversized exclusion payload")
        return cls(np.unpackbits(body, count=size))

    def rotated(self, shift: int) -> "ExclusionConfig":
        """Configuration whose site 0 is site ``shift`` of this one."""
        return ExclusionConfig(np.roll(self.occupancy, -shift))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ExclusionConfig):
            return NotImplemented
        return np.array_equal(self.occupancy, other.occupancy)

    def __hash__(self) -> int:
        return hash(self.occupancy.tobytes())

    def __repr__(self) -> str:
        text = self.to_string()
        if len(text) > 64:
            text = text[:61] + "..."
        return f"ExclusionConfig({text!r})"


@dataclass(frozen=True, eq=False)
class ZeroRangeConfig:
    """Count ring on the torus of length ``size``."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.counts)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("counts must be a non-empty 1-d sequence")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(np.equal(np.mod(arr, 1), 0)):
                raise ValueError("counts must be integers")
        if np.any(arr < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", _frozen_array(arr, np.int64))

    @classmethod
    def from_string(cls, text: str) -> "ZeroRangeConfig":
        return cls([int(tok) for tok in text.strip().split(",")])

    @property
    def size(self) -> int:
        return int(self.counts.size)

    @property
    def mass(self) -> int:
        return int(self.counts.sum())

    def to_string(self) -> str:
        return ",".join(str(int(c)) for c in self.counts)

    def to_bytes(self) -> bytes:
        return struct.pack("<Q", self.size) + self.counts.astype("<u8").tobytes()

    @classmethod
    def from_bytes(cls, payload: bytes) -> "ZeroRangeConfig":
        (size,) = struct.unpack_from("<Q", payload)
        body = np.frombuffer(payload, dtype="<u8", offset=8)
        if body.size != size:
            raise ValueError("truncated or oversized zero-range payload")
        return cls(body.astype(np.int64))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ZeroRangeConfig):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)

    def __hash__(self) -> int:
        return hash(self.counts.tobytes())

    def __repr__(self) -> str:
        return f"ZeroRangeConfig({self.to_string()!r})"


def _occ(eta) -> np.ndarray:
    if isinstance(eta, ExclusionConfig):
        return eta.occupancy
    return np.asarray(eta, dtype=np.uint8)


# --- local functions -------------------------------------------------------


def jump_rate(eta, x: int) -> int:
    """Swap rate of the edge (x, x+1): a particle jumps only if pushed."""
    occ = _occ(eta)
    n = occ.size
    a, b, c, d = (int(occ[(x + k) % n]) for k in (-1, 0, 1, 2))
    return a * b * (1 - c) + (1 - b) * c * d


def h_local(eta, x: int) -> int:
    occ = _occ(eta)
    n = occ.size
    a, b, c = (int(occ[(x + k) % n]) for k in (-1, 0, 1))
    return a * b + b * c - a * b * c


def current(eta, x: int) -> int:
    """Instantaneous current through the edge (x, x+1)."""
    return h_local(eta, x) - h_local(eta, x + 1)


def jump_rates(eta) -> np.ndarray:
    """Vector of all edge rates; entry x is the rate of (x, x+1)."""
    occ = _occ(eta).astype(np.int8)
    left, here = np.roll(occ, 1), occ
    right, right2 = np.roll(occ, -1), np.roll(occ, -2)
    return (left * here * (1 - right) + (1 - here) * right * right2).astype(np.int8)


def h_values(eta) -> np.ndarray:
    occ = _occ(eta).astype(np.int8)
    left, right = np.roll(occ, 1), np.roll(occ, -1)
    return (left * occ + occ * right - left * occ * right).astype(np.int8)


def currents(eta) -> np.ndarray:
    hv = h_values(eta)
    return hv - np.roll(hv, -1)


def local_density(eta, x: int, ell: int) -> float:
    occ = _occ(eta)
    n = occ.size
    if 2 * ell + 1 > n:
        raise ValueError("block of radius ell does not fit on the torus")
    idx = (np.arange(x - ell, x + ell + 1)) % n
    return float(occ[idx].sum()) / (2 * ell + 1)


def block_sums(values: np.ndarray, ell: int) -> np.ndarray:
    """Periodic sums over the blocks {x-ell, ..., x+ell} for every x."""
    values = np.asarray(values)
    n = values.size
    if 2 * ell + 1 > n:
        raise ValueError("block of radius ell does not fit on the torus")
    padded = np.concatenate([values[n - ell :], values, values[: ell + 1]]) if ell else values
    csum = np.concatenate([[0], np.cumsum(padded, dtype=np.int64)])
    width = 2 * ell + 1
    return csum[width : width + n] - csum[:n]


def local_densities(eta, ell: int) -> np.ndarray:
    return block_sums(_occ(eta).astype(np.int64), ell) / (2 * ell + 1)


# --- classification --------------------------------------------------------


class Classification(enum.Enum):
    ERGODIC = "ergodic"
    FROZEN = "frozen"
    BOTH = "both"
    TRANSIENT = "transient"


def _edge_sums(occ: np.ndarray, start: int, length: int, wrap: bool) -> np.ndarray:
    n = occ.size
    idx = (start + np.arange(length)) % n
    vals = occ[idx].astype(np.int8)
    sums = vals[:-1] + vals[1:]
    if wrap:
        sums = np.append(sums, vals[-1] + vals[0])
    return sums


def classify(eta, window: tuple[int, int] | None = None) -> Classification:
    """Classify the configuration on an arc ``(start, length)``.

    ``None`` means the whole torus, in which case the wrap edge counts.
    """
    occ = _occ(eta)
    n = occ.size
    if window is None:
        start, length, wrap = 0, n, True
    else:
        start, length = window
        if length <= 0 or length > n:
            raise ValueError("window must be a non-empty arc of the torus")
        wrap = False
        if length == n:
            wrap = False
    sums = _edge_sums(occ, start, length, wrap)
    ergodic = bool(np.all(sums >= 1))
    frozen = bool(np.all(sums <= 1))
    if ergodic and frozen:
        return Classification.BOTH
    if ergodic:
        return Classification.ERGODIC
    if frozen:
        return Classification.FROZEN
    return Classification.TRANSIENT


@dataclass(frozen=True)
class Arc:
    start: int
    length: int
    size: int

    @property
    def first(self) -> int:
        return self.start

    @property
    def last(self) -> int:
        return (self.start + self.length - 1) % self.size

    def sites(self) -> np.ndarray:
        return (self.start + np.arange(self.length)) % self.size

    def __contains__(self, site: int) -> bool:
        return (site - self.start) % self.size < self.length


@dataclass(frozen=True)
class PhaseDecomposition:
    """Ergodic and frozen arcs of a two-phased configuration."""

    ergodic_arc: Arc
    frozen_arc: Arc
    merged: bool = False

    @property
    def front_left(self) -> int:
        return self.frozen_arc.first

    @property
    def front_right(self) -> int:
        return self.frozen_arc.last


#: Marker returned by :func:`two_phased_decompose` for ergodic configurations.
ERGODIC = Classification.ERGODIC


def two_phased_decompose(eta) -> PhaseDecomposition | Classification | None:
    """Split a configuration into a maximal ergodic arc and a frozen arc.

    Returns :data:`ERGODIC` for configurations without an adjacent empty
    pair, a :class:`PhaseDecomposition` for non-ergodic two-phased ones and
    ``None`` otherwise.  Every 00-edge must be interior to the frozen arc;
    a configuration frozen on the whole torus gets F equal to the torus.
    """
    occ = _occ(eta).astype(np.int8)
    n = occ.size
    sums = occ + np.roll(occ, -1)
    empty_edges = np.flatnonzero(sums == 0)
    full_edges = np.flatnonzero(sums == 2)
    if empty_edges.size == 0:
        return ERGODIC
    if full_edges.size == 0:
        return PhaseDecomposition(Arc(0, 0, n), Arc(0, n, n))
    # All 11-edges must lie strictly between two cyclically consecutive
    # 00-edges; the ergodic arc is then the whole gap between them.
    first_full = int(full_edges[0])
    pos = np.searchsorted(empty_edges, first_full)
    after = int(empty_edges[pos % empty_edges.size])
    before = int(empty_edges[pos - 1])
    span = (after - before) % n or n
    offsets = (full_edges - before) % n
    if np.any(offsets >= span) or np.any(offsets == 0):
        return None
    e_start = (before + 2) % n
    e_len = span - 2
    f_start = after
    f_len = n - e_len
    return PhaseDecomposition(Arc(e_start, e_len, n), Arc(f_start, f_len, n))


def front_positions(history: Sequence) -> list[tuple[int, int] | None]:
    """Front sites along a sequence of decompositions.

    Entries are ``None`` until the first two-phased observation; once the
    configuration turns ergodic the last frozen-arc endpoints are held.
    """
    out: list[tuple[int, int] | None] = []
    last: tuple[int, int] | None = None
    for item in history:
        if isinstance(item, PhaseDecomposition):
            last = (item.front_left, item.front_right)
        elif item is ERGODIC:
            pass
        elif last is not None:
            raise ValueError("configuration left the two-phased set")
        out.append(last)
    return out


# --- zero-range mapping ----------------------------------------------------


def map_to_zero_range(eta, marked_zero: int = 0) -> ZeroRangeConfig:
    occ = _occ(eta)
    n = occ.size
    marked_zero %= n
    if occ[marked_zero] != 0:
        raise ValueError(f"site {marked_zero} is occupied")
    rolled = np.roll(occ, -marked_zero)
    zeros = np.flatnonzero(rolled == 0)
    gaps = np.diff(np.append(zeros, n)) - 1
    return ZeroRangeConfig(gaps)


def map_from_zero_range(omega) -> ExclusionConfig:
    counts = omega.counts if isinstance(omega, ZeroRangeConfig) else np.asarray(omega, dtype=np.int64)
    k = counts.size
    if k < 1:
        raise ValueError("need at least one zero-range site")
    n = k + int(counts.sum())
    occ = np.ones(n, dtype=np.uint8)
    zero_sites = np.concatenate([[0], np.cumsum(counts[:-1] + 1)])
    occ[zero_sites] = 0
    return ExclusionConfig(occ)


def empty_sites(eta) -> np.ndarray:
    return np.flatnonzero(_occ(eta) == 0)


def alternating(n: int, phase: int = 0) -> ExclusionConfig:
    """0101... when ``phase`` is 0, 1010... otherwise."""
    return ExclusionConfig((np.arange(n) + phase) % 2)


def all_configurations(n: int) -> Iterable[np.ndarray]:
    """Every 0/1 ring of length n as rows of a uint8 array (small n only)."""
    codes = np.arange(2**n, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(n)) & 1).astype(np.uint8)
    return bits
