"""Intervals, hyper-rectangles and interval matrix-vector products."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import SpecificationError

MAX_VERTEX_DIMS = 16


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise SpecificationError(f"invalid interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def __contains__(self, value) -> bool:
        return self.lo <= value <= self.hi


class HyperBox:
    """Axis-aligned box ``{x : lower <= x <= upper}``.

    The bound arrays are copied and made read-only so a box can be shared
    between workers.
    """

    __slots__ = ("lower", "upper")

    def __init__(self, lower, upper):
        lower = np.array(lower, dtype=float).reshape(-1)
        upper = np.array(upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape or lower.size == 0:
            raise SpecificationError(
                f"lower/upper shapes differ or are empty: {lower.shape} vs {upper.shape}")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise SpecificationError("box bounds must be finite")
        if np.any(lower > upper):
            bad = int(np.argmax(lower > upper))
            raise SpecificationError(
                f"lower[{bad}]={lower[bad]} exceeds upper[{bad}]={upper[bad]}")
        lower.flags.writeable = False
        upper.flags.writeable = False
        self.lower = lower
        self.upper = upper

    @classmethod
    def from_point(cls, x) -> "HyperBox":
        return cls(x, x)

    @property
    def dims(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return (self.lower + self.upper) / 2

    def width(self, i: int) -> float:
        return float(self.upper[i] - self.lower[i])

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def contains_box(self, other: "HyperBox", tol: float = 0.0) -> bool:
        return bool(np.all(other.lower >= self.lower - tol)
                    and np.all(other.upper <= self.upper + tol))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.dims))

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, data) -> "HyperBox":
        try:
            return cls(data["lower"], data["upper"])
        except (KeyError, TypeError) as exc:
            raise SpecificationError(f"box needs 'lower' and 'upper' arrays: {exc}") from exc

    def __eq__(self, other):
        if not isinstance(other, HyperBox):
            return NotImplemented
        return (np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))

    def __repr__(self):
        return f"HyperBox(lower={self.lower.tolist()}, upper={self.upper.tolist()})"


def interval_matvec_arrays(A, lower, upper):
    """Bounds of ``A @ x`` for ``lower <= x <= upper``.

    ``lower``/``upper`` may carry leading batch dimensions. Returns
    ``(lo, hi)`` arrays with ``A``'s row count as trailing dimension.
    """
    A = np.asarray(A, dtype=float)
    pos = np.maximum(A, 0.0)
    neg = np.minimum(A, 0.0)
    lo = lower @ pos.T + upper @ neg.T
    hi = lower @ neg.T + upper @ pos.T
    return lo, hi


def interval_matvec(A, box: HyperBox) -> list[Interval]:
    """Tight interval enclosure of ``A x`` over ``box``.

    Each entry uses ``[A]+ lower + [A]- upper`` for the lower end and
    ``[A]- lower + [A]+ upper`` for the upper end, accumulated left to right
    over columns.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[1] != box.dims:
        raise SpecificationError(
            f"matrix of shape {A.shape} cannot multiply a {box.dims}-dimensional box")
    if not np.all(np.isfinite(A)):
        raise SpecificationError("matrix entries must be finite")
    out = []
    for row in A:
        lo = 0.0
        hi = 0.0
        for a, xl, xu in zip(row, box.lower, box.upper):
            if a >= 0:
                lo += a * xl
                hi += a * xu
            else:
                lo += a * xu
                hi += a * xl
        out.append(Interval(lo, hi))
    return out


def split_box(box: HyperBox, dim: int) -> tuple[HyperBox, HyperBox]:
    """Halve ``box`` at the midpoint of dimension ``dim``."""
    if not 0 <= dim < box.dims:
        raise SpecificationError(f"split dimension {dim} out of range for {box.dims}-D box")
    if box.width(dim) <= 0:
        raise SpecificationError(f"cannot split zero-width dimension {dim}")
    mid = (box.lower[dim] + box.upper[dim]) / 2
    left_upper = box.upper.copy()
    left_upper[dim] = mid
    right_lower = box.lower.copy()
    right_lower[dim] = mid
    return HyperBox(box.lower, left_upper), HyperBox(right_lower, box.upper)


def vertices(box: HyperBox, cap: int = MAX_VERTEX_DIMS) -> list[np.ndarray]:
    """All corners of ``box`` in lexicographic order, last dimension fastest."""
    if box.dims > cap:
        raise SpecificationError(
            f"refusing to enumerate 2^{box.dims} vertices (cap is {cap} dimensions)")
    pairs: Sequence = [(lo, hi) for lo, hi in zip(box.lower, box.upper)]
    return [np.array(v, dtype=float) for v in itertools.product(*pairs)]


def vertex_array(box: HyperBox, cap: int = MAX_VERTEX_DIMS) -> np.ndarray:
    return np.array(vertices(box, cap))


def uniform_split(box: HyperBox, depth: int = 1) -> list[HyperBox]:
    """Partition ``box`` into equal cells, bisecting each dimension ``depth`` times.

    Zero-width dimensions are left whole.
    """
    if depth <= 0:
        return [box]
    edges = [_dyadic_edges(lo, hi, depth) for lo, hi in zip(box.lower, box.upper)]
    cells = []
    for idx in itertools.product(*(range(len(e) - 1) for e in edges)):
        lo = [e[i] for e, i in zip(edges, idx)]
        hi = [e[i + 1] for e, i in zip(edges, idx)]
        cells.append(HyperBox(lo, hi))
    return cells


def _dyadic_edges(lo: float, hi: float, depth: int) -> list[float]:
    # repeated midpoint halving so edges coincide with split_box cuts
    edges = [lo, hi]
    if lo == hi:
        return edges
    for _ in range(depth):
        refined = [edges[0]]
        for a, b in zip(edges[:-1], edges[1:]):
            refined.extend([(a + b) / 2, b])
        edges = refined
    return edges
