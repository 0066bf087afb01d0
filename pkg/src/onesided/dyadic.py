"""Finite dyadic grids on [0, 1) and piecewise-constant data living on them.

A grid of depth ``N`` has ``2**N`` finest cells of width ``2**-N``.  A dyadic
interval is addressed by ``IntervalId(level, index)`` and covers
``[index * 2**-level, (index + 1) * 2**-level)``.  Functions are stored as one
float per finest cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import AddressingError, DomainError

MIN_DEPTH = 2


class IntervalId(NamedTuple):
    level: int
    index: int

    @property
    def length(self) -> float:
        return 2.0 ** -self.level

    @property
    def left(self) -> "IntervalId":
        """Left half ``I^-``."""
        return IntervalId(self.level + 1, 2 * self.index)

    @property
    def right(self) -> "IntervalId":
        """Right half ``I^+``."""
        return IntervalId(self.level + 1, 2 * self.index + 1)

    @property
    def parent(self) -> "IntervalId":
        if self.level == 0:
            raise AddressingError("the root interval has no parent")
        return IntervalId(self.level - 1, self.index // 2)

    @property
    def is_left(self) -> bool:
        return self.level > 0 and self.index % 2 == 0

    def contains(self, other: "IntervalId") -> bool:
        """Inclusion ``other ⊆ self``."""
        if other.level < self.level:
            return False
        return other.index >> (other.level - self.level) == self.index

    def ancestors(self) -> Iterator["IntervalId"]:
        """Strict ancestors, finest first."""
        node = self
        while node.level > 0:
            node = node.parent
            yield node

    def bounds(self) -> tuple[float, float]:
        return self.index * self.length, (self.index + 1) * self.length


def heap_index(I: IntervalId) -> int:
    """Position of ``I`` in level-major storage: ``2**level - 1 + index``."""
    return (1 << I.level) - 1 + I.index


def from_heap_index(h: int) -> IntervalId:
    level = (h + 1).bit_length() - 1
    return IntervalId(level, h + 1 - (1 << level))


@dataclass(frozen=True)
class DyadicGrid:
    depth: int

    def __post_init__(self):
        if int(self.depth) != self.depth or self.depth < MIN_DEPTH:
            raise DomainError(f"grid depth must be an integer >= {MIN_DEPTH}, got {self.depth}")

    @property
    def n(self) -> int:
        """Number of finest cells."""
        return 1 << self.depth

    @property
    def width(self) -> float:
        return 2.0 ** -self.depth

    @cached_property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.width

    def check(self, I: IntervalId, max_level: int | None = None) -> IntervalId:
        top = self.depth if max_level is None else max_level
        if not (0 <= I.level <= top) or not (0 <= I.index < (1 << I.level)):
            raise AddressingError(f"interval {tuple(I)} not addressable (max level {top})")
        return IntervalId(int(I.level), int(I.index))

    def cells(self, I: IntervalId) -> slice:
        """Slice of finest cells covered by ``I``."""
        I = self.check(I)
        span = 1 << (self.depth - I.level)
        return slice(I.index * span, (I.index + 1) * span)

    def indicator(self, I: IntervalId) -> "GridFunction":
        values = np.zeros(self.n)
        values[self.cells(I)] = 1.0
        return GridFunction(self, values)

    def cell_interval(self, cell: int) -> IntervalId:
        return IntervalId(self.depth, int(cell))

    def intervals(self, min_level: int = 0, max_level: int | None = None) -> Iterator[IntervalId]:
        top = self.depth if max_level is None else max_level
        for level in range(min_level, top + 1):
            for k in range(1 << level):
                yield IntervalId(level, k)

    def subintervals(self, I: IntervalId, max_level: int | None = None) -> Iterator[IntervalId]:
        """All dyadic ``J ⊆ I`` (``I`` included), coarse to fine."""
        top = self.depth if max_level is None else max_level
        for level in range(I.level, top + 1):
            shift = level - I.level
            base = I.index << shift
            for k in range(base, base + (1 << shift)):
                yield IntervalId(level, k)


def enumerate_intervals(grid: DyadicGrid, max_level: int) -> list[IntervalId]:
    """Every interval with level ``<= max_level`` in level-major order."""
    if not 0 <= max_level <= grid.depth:
        raise AddressingError(f"max_level {max_level} outside [0, {grid.depth}]")
    return list(grid.intervals(0, max_level))


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: DyadicGrid
    values: np.ndarray

    def __post_init__(self):
        values = _readonly(self.values)
        if values.shape != (self.grid.n,):
            raise DomainError(f"expected {self.grid.n} cell values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("grid function values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: DyadicGrid, c: float = 1.0) -> "GridFunction":
        return cls(grid, np.full(grid.n, float(c)))

    @cached_property
    def prefix(self) -> np.ndarray:
        """Cumulative integrals at the cell boundaries (length ``n + 1``)."""
        out = np.zeros(self.grid.n + 1)
        np.cumsum(self.values, out=out[1:])
        out *= self.grid.width
        out.setflags(write=False)
        return out

    def integral(self, I: IntervalId) -> float:
        s = self.grid.cells(I)
        return float(self.prefix[s.stop] - self.prefix[s.start])

    def average(self, I: IntervalId) -> float:
        return self.integral(I) / I.length

    def total(self) -> float:
        return float(self.prefix[-1])

    def is_unimodular_on(self, I: IntervalId, atol: float = 0.0) -> bool:
        """``|f| == 1_I`` cell by cell."""
        target = self.grid.indicator(I).values
        return bool(np.all(np.abs(np.abs(self.values) - target) <= atol))

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.grid.n

    def _wrap(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)

    def __add__(self, other):
        return self._wrap(self.values + np.asarray(other))

    def __sub__(self, other):
        return self._wrap(self.values - np.asarray(other))

    def __mul__(self, other):
        return self._wrap(self.values * np.asarray(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self._wrap(-self.values)

    def __abs__(self):
        return self._wrap(np.abs(self.values))


def interval_integral(f: GridFunction, I: IntervalId) -> float:
    return f.integral(I)


def interval_average(f: GridFunction, I: IntervalId) -> float:
    """Mean of ``f`` over ``I`` via the cached prefix sums."""
    return f.average(I)


def level_integrals(values: np.ndarray, level: int, width: float) -> np.ndarray:
    """Integrals over every dyadic interval of ``level`` (vectorized)."""
    return values.reshape(1 << level, -1).sum(axis=1) * width


@dataclass(frozen=True, eq=False)
class Weight:
    """A strictly positive grid function with its Lebesgue exponent ``p``.

    The dual weight is ``sigma = w ** (-1 / (p - 1))`` with exponent ``p' = p / (p - 1)``.
    """

    base: GridFunction
    p: float = 2.0

    def __post_init__(self):
        if not self.p > 1 or not np.isfinite(self.p):
            raise DomainError(f"weight exponent p must lie in (1, inf), got {self.p}")
        if np.any(self.base.values <= 0):
            raise DomainError("weights must be strictly positive on every cell")

    @classmethod
    def from_values(cls, values, p: float = 2.0, grid: DyadicGrid | None = None) -> "Weight":
        values = np.asarray(values, dtype=float)
        if grid is None:
            depth = int(np.log2(values.size))
            if 1 << depth != values.size:
                raise DomainError(f"cell count {values.size} is not a power of two")
            grid = DyadicGrid(depth)
        return cls(GridFunction(grid, values), p)

    @classmethod
    def uniform(cls, grid: DyadicGrid, p: float = 2.0) -> "Weight":
        return cls(GridFunction.constant(grid, 1.0), p)

    @property
    def grid(self) -> DyadicGrid:
        return self.base.grid

    @property
    def values(self) -> np.ndarray:
        return self.base.values

    @property
    def p_dual(self) -> float:
        return self.p / (self.p - 1.0)

    def dual(self) -> "Weight":
        return Weight(GridFunction(self.grid, self.values ** (-1.0 / (self.p - 1.0))), self.p_dual)

    def with_p(self, p: float) -> "Weight":
        return Weight(self.base, p)

    def scaled(self, c: float) -> "Weight":
        return Weight(GridFunction(self.grid, self.values * c), self.p)

    def measure(self, I: IntervalId) -> float:
        return self.base.integral(I)

    def average(self, I: IntervalId) -> float:
        return self.base.average(I)

    def mass(self, mask: np.ndarray) -> float:
        """Weighted measure of a set of cells given as a boolean mask."""
        return float(np.sum(self.values[mask]) * self.grid.width)


# --- serialization -------------------------------------------------------

def dumps_function(f: GridFunction) -> str:
    lines = [f"depth={f.grid.depth}"]
    lines.extend(repr(float(v)) for v in f.values)
    return "\n".join(lines) + "\n"


def loads_function(text: str) -> GridFunction:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("depth="):
        raise DomainError("grid function text must start with a 'depth=N' header")
    grid = DyadicGrid(int(lines[0].split("=", 1)[1]))
    values = [float(v) for v in lines[1:]]
    return GridFunction(grid, np.array(values))


def save_function(f: GridFunction, path) -> None:
    Path(path).write_text(dumps_function(f))


def load_function(path) -> GridFunction:
    return loads_function(Path(path).read_text())
