"""Haar analysis, the one-sided martingale transform and one-sided maximal functions.

The transform is ``T f = sum_I eps_I <f, h_{I+}> h_{I-}`` with the Haar function
``h_J = (1_{J+} - 1_{J-}) / sqrt|J|``.  Only intervals at levels ``0 .. N-2``
contribute on a depth-``N`` grid (``h_{I+}`` must be resolved by the cells), so
each operator below is a loop over ``N - 1`` levels with vectorized work per
level: ``O(N 2**N)`` overall.

Per-level contributions are kept separately (``forward_terms`` /
``adjoint_terms``) because truncations and linearizations only differ in which
levels are summed at each cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Literal, Union

import numpy as np
from scipy.ndimage import maximum_filter1d

from .dyadic import DyadicGrid, GridFunction, IntervalId, Weight, from_heap_index, heap_index
from .errors import AddressingError, DomainError, ResourceLimitError

Mode = Literal["dyadic", "sliding"]
MAX_DENSE_DEPTH = 12


def n_coefficients(grid: DyadicGrid) -> int:
    """Intervals carrying a multiplier: levels ``0 .. N-2``."""
    return (1 << (grid.depth - 1)) - 1


@dataclass(frozen=True, eq=False)
class SignPattern:
    """Multiplier coefficients ``eps_I`` in {-1, 0, +1}, stored level-major."""

    grid: DyadicGrid
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64, copy=True)
        if c.shape != (n_coefficients(self.grid),):
            raise DomainError(f"expected {n_coefficients(self.grid)} coefficients, got {c.shape}")
        if not np.all(np.isin(c, (-1.0, 0.0, 1.0))):
            raise DomainError("sign pattern entries must be -1, 0 or +1")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def full(cls, grid: DyadicGrid, sign: int = 1) -> "SignPattern":
        return cls(grid, np.full(n_coefficients(grid), float(sign)))

    @classmethod
    def zeros(cls, grid: DyadicGrid) -> "SignPattern":
        return cls(grid, np.zeros(n_coefficients(grid)))

    @classmethod
    def random(cls, grid: DyadicGrid, rng: np.random.Generator, zero_prob: float = 0.0) -> "SignPattern":
        c = rng.choice((-1.0, 1.0), size=n_coefficients(grid))
        if zero_prob > 0:
            c[rng.random(c.size) < zero_prob] = 0.0
        return cls(grid, c)

    @classmethod
    def from_mapping(cls, grid: DyadicGrid, mapping: dict) -> "SignPattern":
        c = np.zeros(n_coefficients(grid))
        for I, v in mapping.items():
            c[_coeff_slot(grid, I)] = v
        return cls(grid, c)

    def __getitem__(self, I: IntervalId) -> float:
        return float(self.coeffs[_coeff_slot(self.grid, I)])

    def level(self, level: int) -> np.ndarray:
        start = (1 << level) - 1
        return self.coeffs[start:start + (1 << level)]

    def restrict(self, K) -> "SignPattern":
        """Zero every coefficient outside the collection ``K``."""
        return SignPattern(self.grid, self.coeffs * collection_mask(self.grid, K))

    def flip(self, I: IntervalId) -> "SignPattern":
        c = self.coeffs.copy()
        c[_coeff_slot(self.grid, I)] *= -1
        return SignPattern(self.grid, c)

    def support(self) -> set[IntervalId]:
        return {from_heap_index(int(h)) for h in np.flatnonzero(self.coeffs)}


def _coeff_slot(grid: DyadicGrid, I: IntervalId) -> int:
    grid.check(I, max_level=grid.depth - 2)
    return heap_index(I)


Collection = Union[None, Callable[[IntervalId], bool], Iterable[IntervalId], np.ndarray]


def collection_mask(grid: DyadicGrid, K: Collection) -> np.ndarray:
    """0/1 float mask over coefficient slots for an interval collection.

    ``K`` may be ``None`` (every interval), a predicate, an iterable of ids or a
    ready-made mask.  Members finer than level ``N-2`` carry no coefficient and
    are ignored.
    """
    size = n_coefficients(grid)
    if K is None:
        return np.ones(size)
    if isinstance(K, np.ndarray):
        if K.shape != (size,):
            raise DomainError(f"collection mask must have shape ({size},)")
        return K.astype(float)
    mask = np.zeros(size)
    if callable(K):
        for h in range(size):
            if K(from_heap_index(h)):
                mask[h] = 1.0
        return mask
    for I in K:
        if I.level <= grid.depth - 2:
            mask[heap_index(grid.check(I))] = 1.0
    return mask


@dataclass(frozen=True, eq=False)
class TruncationProfile:
    """Per-cell scale threshold ``delta(x)``; scale ``|I|`` is kept iff ``|I| > delta(x)``.

    Values are quantized to ``{0, +inf} ∪ {2**-l : 0 <= l <= N}``.
    """

    grid: DyadicGrid
    delta: np.ndarray

    def __post_init__(self):
        d = np.array(self.delta, dtype=np.float64, copy=True)
        if d.shape != (self.grid.n,):
            raise DomainError(f"expected {self.grid.n} thresholds, got {d.shape}")
        allowed = np.concatenate(([0.0, np.inf], 2.0 ** -np.arange(self.grid.depth + 1)))
        if not np.all(np.isin(d, allowed)):
            raise DomainError("thresholds must be 0, inf or a dyadic scale 2**-l")
        d.setflags(write=False)
        object.__setattr__(self, "delta", d)

    @classmethod
    def none(cls, grid: DyadicGrid) -> "TruncationProfile":
        return cls(grid, np.zeros(grid.n))

    @classmethod
    def constant(cls, grid: DyadicGrid, delta: float) -> "TruncationProfile":
        return cls(grid, np.full(grid.n, float(delta)))

    @classmethod
    def from_cutoffs(cls, grid: DyadicGrid, cutoffs) -> "TruncationProfile":
        """Build from per-cell counts ``c``: levels ``0 .. c-1`` are kept.

        ``c = 0`` keeps nothing (``delta = inf``); ``c >= N-1`` keeps every
        contributing level (``delta = 0``).
        """
        c = np.asarray(cutoffs, dtype=int)
        d = np.where(c <= 0, np.inf, 2.0 ** -np.clip(c, 0, grid.depth))
        d = np.where(c >= grid.depth - 1, 0.0, d)
        return cls(grid, d)

    @classmethod
    def random(cls, grid: DyadicGrid, rng: np.random.Generator) -> "TruncationProfile":
        return cls.from_cutoffs(grid, rng.integers(0, grid.depth, size=grid.n))

    def keeps(self, level: int) -> np.ndarray:
        """Boolean cell mask where intervals of ``level`` pass the cutoff."""
        return 2.0 ** -level > self.delta


# --- vectorized kernels ----------------------------------------------------

def _level_coeffs(coeffs: np.ndarray, level: int) -> np.ndarray:
    start = (1 << level) - 1
    return coeffs[start:start + (1 << level)]


def forward_terms(values: np.ndarray, coeffs: np.ndarray, depth: int) -> np.ndarray:
    """Per-level pieces of ``T f``: row ``l`` is the sum over level-``l`` intervals."""
    n = 1 << depth
    width = 2.0 ** -depth
    out = np.zeros((depth - 1, n))
    for level in range(depth - 1):
        m = 1 << level
        quarters = values.reshape(m, 4, -1).sum(axis=2) * width
        half = 2.0 ** -(level + 1)
        c = _level_coeffs(coeffs, level) * (quarters[:, 3] - quarters[:, 2]) / half
        block = out[level].reshape(m, 4, -1)
        block[:, 0, :] = -c[:, None]
        block[:, 1, :] = c[:, None]
    return out


def adjoint_terms(values: np.ndarray, coeffs: np.ndarray, depth: int, keep=None) -> np.ndarray:
    """Per-level pieces of ``T* g``; ``keep(level)`` masks the integrand of the pairing."""
    n = 1 << depth
    width = 2.0 ** -depth
    out = np.zeros((depth - 1, n))
    for level in range(depth - 1):
        m = 1 << level
        g = values if keep is None else values * keep(level)
        quarters = g.reshape(m, 4, -1).sum(axis=2) * width
        half = 2.0 ** -(level + 1)
        c = _level_coeffs(coeffs, level) * (quarters[:, 1] - quarters[:, 0]) / half
        block = out[level].reshape(m, 4, -1)
        block[:, 2, :] = -c[:, None]
        block[:, 3, :] = c[:, None]
    return out


def apply_transform(values: np.ndarray, coeffs: np.ndarray, depth: int) -> np.ndarray:
    return forward_terms(values, coeffs, depth).sum(axis=0)


def apply_adjoint(values: np.ndarray, coeffs: np.ndarray, depth: int) -> np.ndarray:
    return adjoint_terms(values, coeffs, depth).sum(axis=0)


def _coeffs(eps: SignPattern, K: Collection = None) -> np.ndarray:
    if K is None:
        return eps.coeffs
    return eps.coeffs * collection_mask(eps.grid, K)


def _same_grid(f: GridFunction, eps: SignPattern):
    if f.grid != eps.grid:
        raise DomainError(f"grid mismatch: depth {f.grid.depth} vs {eps.grid.depth}")


# --- public operators --------------------------------------------------------

def haar_coeff(f: GridFunction, I: IntervalId) -> float:
    """``<f, h_I>``; positive weight on the right half."""
    try:
        f.grid.check(I, max_level=f.grid.depth - 1)
    except AddressingError as exc:
        raise AddressingError(f"{tuple(I)} has no children on a depth-{f.grid.depth} grid") from exc
    return (f.integral(I.right) - f.integral(I.left)) / np.sqrt(I.length)


def haar_function(grid: DyadicGrid, I: IntervalId) -> GridFunction:
    grid.check(I, max_level=grid.depth - 1)
    v = np.zeros(grid.n)
    v[grid.cells(I.right)] = 1.0
    v[grid.cells(I.left)] = -1.0
    return GridFunction(grid, v / np.sqrt(I.length))


def transform(f: GridFunction, eps: SignPattern) -> GridFunction:
    _same_grid(f, eps)
    return GridFunction(f.grid, apply_transform(f.values, eps.coeffs, f.grid.depth))


def adjoint_transform(g: GridFunction, eps: SignPattern) -> GridFunction:
    _same_grid(g, eps)
    return GridFunction(g.grid, apply_adjoint(g.values, eps.coeffs, g.grid.depth))


def maximal_truncation(f: GridFunction, eps: SignPattern) -> GridFunction:
    """``T_# f``: largest absolute partial sum over levels ``0..l`` at each cell."""
    _same_grid(f, eps)
    partial = np.cumsum(forward_terms(f.values, eps.coeffs, f.grid.depth), axis=0)
    return GridFunction(f.grid, np.abs(partial).max(axis=0))


def linearized_transform(f: GridFunction, eps: SignPattern, delta: TruncationProfile,
                         K: Collection = None) -> GridFunction:
    """``T_delta f(x)``: the sum restricted to scales ``|I| > delta(x)`` (and ``I in K``)."""
    _same_grid(f, eps)
    terms = forward_terms(f.values, _coeffs(eps, K), f.grid.depth)
    out = np.zeros(f.grid.n)
    for level in range(f.grid.depth - 1):
        out += np.where(delta.keeps(level), terms[level], 0.0)
    return GridFunction(f.grid, out)


def linearized_adjoint_restricted(g: GridFunction, eps: SignPattern, delta: TruncationProfile,
                                  K: Collection = None) -> GridFunction:
    """``T*_{delta,K} g = sum_{I in K} eps_I <g, h_{I-} 1_{|I| > delta(.)}> h_{I+}``."""
    _same_grid(g, eps)
    terms = adjoint_terms(g.values, _coeffs(eps, K), g.grid.depth, keep=delta.keeps)
    return GridFunction(g.grid, terms.sum(axis=0))


def operator_matrix(eps: SignPattern, grid: DyadicGrid | None = None,
                    delta: TruncationProfile | None = None, K: Collection = None,
                    adjoint: bool = False) -> np.ndarray:
    """Dense matrix of ``T`` (or ``T_{delta,K}``) in the finest-cell basis.

    Built term by term from explicit Haar vectors, independently of the fast
    kernels, so it serves as their oracle.  ``adjoint=True`` returns the matrix
    of ``T*_{delta,K}``, which is the transpose.
    """
    grid = eps.grid if grid is None else grid
    if grid.depth > MAX_DENSE_DEPTH:
        raise ResourceLimitError(f"dense operator matrix refused for depth {grid.depth} > {MAX_DENSE_DEPTH}")
    coeffs = _coeffs(eps, K)
    n = grid.n
    M = np.zeros((n, n))
    for h in np.flatnonzero(coeffs):
        I = from_heap_index(int(h))
        out_vec = haar_function(grid, I.left).values
        in_vec = haar_function(grid, I.right).values
        if delta is not None:
            out_vec = out_vec * delta.keeps(I.level)
        M += coeffs[h] * np.outer(out_vec, in_vec) * grid.width
    return M.T.copy() if adjoint else M


# --- one-sided maximal functions --------------------------------------------

def _max_plus_dyadic(a: np.ndarray, depth: int) -> np.ndarray:
    n = a.size
    width = 2.0 ** -depth
    out = np.zeros(n)
    for level in range(depth):
        m = 1 << level
        halves = a.reshape(2 * m, -1).sum(axis=1).reshape(m, 2) * width / 2.0 ** -(level + 1)
        view = out.reshape(m, 2, -1)
        np.maximum(view[:, 0, :], halves[:, 1][:, None], out=view[:, 0, :])
    return out


def _max_plus_sliding(a: np.ndarray) -> np.ndarray:
    n = a.size
    prefix = np.concatenate(([0.0], np.cumsum(a)))
    out = np.zeros(n)
    for m in range(1, n // 2 + 1):
        # candidate windows start at s = 0 .. n - 2m; right-half average sits at s + m
        right_avg = (prefix[2 * m:] - prefix[m:n - m + 1]) / m
        padded = np.full(n + m - 1, -np.inf)
        padded[m - 1:m - 1 + right_avg.size] = right_avg
        best = maximum_filter1d(padded, size=m, mode="constant", cval=-np.inf)
        np.maximum(out, best[m // 2:m // 2 + n], out=out)
    return out


def _check_mode(mode: str):
    if mode not in ("dyadic", "sliding"):
        raise DomainError(f"mode must be 'dyadic' or 'sliding', got {mode!r}")


def max_plus(f: GridFunction, mode: Mode = "dyadic") -> GridFunction:
    """``M_+ f(x) = sup_{I : x in I-} <|f|>_{I+}``; empty sup is 0."""
    _check_mode(mode)
    a = np.abs(f.values)
    out = _max_plus_dyadic(a, f.grid.depth) if mode == "dyadic" else _max_plus_sliding(a)
    return GridFunction(f.grid, out)


def max_minus(f: GridFunction, mode: Mode = "dyadic") -> GridFunction:
    """Mirror of ``max_plus``: reflection x -> 1 - x swaps the halves of every interval."""
    flipped = GridFunction(f.grid, f.values[::-1])
    return GridFunction(f.grid, max_plus(flipped, mode).values[::-1])


def max_plus_weighted(f: GridFunction, mu: Weight) -> GridFunction:
    """Dyadic ``M^+_mu f``: ``mu``-averages of ``|f|`` over right halves, placed on left halves."""
    depth = f.grid.depth
    fm = np.abs(f.values) * mu.values
    out = np.zeros(f.grid.n)
    for level in range(depth):
        m = 1 << level
        num = fm.reshape(2 * m, -1).sum(axis=1).reshape(m, 2)[:, 1]
        den = mu.values.reshape(2 * m, -1).sum(axis=1).reshape(m, 2)[:, 1]
        view = out.reshape(m, 2, -1)
        np.maximum(view[:, 0, :], (num / den)[:, None], out=view[:, 0, :])
    return GridFunction(f.grid, out)
