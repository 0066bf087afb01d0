"""One-sided weight characteristics and weight generators.

All suprema default to the dyadic lattice of the grid; ``mode="sliding"``
ranges over every grid-aligned interval of even cell length instead.  The
``minus`` variants are obtained from the ``plus`` ones by reflecting x -> 1 - x,
which exchanges left and right halves.
"""

from __future__ import annotations

import shlex
from dataclasses import asdict, dataclass, fields

import numpy as np

from .dyadic import DyadicGrid, GridFunction, IntervalId, Weight
from .errors import ConfigError, DomainError, ResourceLimitError
from .operators import Mode, _check_mode, max_minus, max_plus

SLIDING_AINF_MAX_DEPTH = 7


def dual_weight(w: Weight) -> Weight:
    """``sigma = w ** (-1/(p-1))``, carrying the conjugate exponent."""
    return w.dual()


def _reflect(w: Weight) -> Weight:
    return Weight(GridFunction(w.grid, w.values[::-1]), w.p)


def ap_plus_at(w: Weight, I: IntervalId) -> float:
    """``<w>_{I-} <sigma>_{I+}^{p-1}`` for one interval."""
    sigma = w.dual()
    return w.average(I.left) * sigma.average(I.right) ** (w.p - 1)


def ap_plus(w: Weight, mode: Mode = "dyadic") -> float:
    """``[w]_{A_p^+} = sup_I <w>_{I-} <sigma>_{I+}^{p-1}``."""
    _check_mode(mode)
    wv = w.values
    sv = w.dual().values
    e = w.p - 1.0
    n = w.grid.n
    best = 0.0
    if mode == "dyadic":
        for level in range(w.grid.depth):
            m = 1 << level
            wl = wv.reshape(2 * m, -1).mean(axis=1).reshape(m, 2)[:, 0]
            sr = sv.reshape(2 * m, -1).mean(axis=1).reshape(m, 2)[:, 1]
            best = max(best, float(np.max(wl * sr ** e)))
        return best
    pw = np.concatenate(([0.0], np.cumsum(wv)))
    ps = np.concatenate(([0.0], np.cumsum(sv)))
    for m in range(1, n // 2 + 1):
        starts = np.arange(0, n - 2 * m + 1)
        wl = (pw[starts + m] - pw[starts]) / m
        sr = (ps[starts + 2 * m] - ps[starts + m]) / m
        best = max(best, float(np.max(wl * sr ** e)))
    return best


def ap_minus(w: Weight, mode: Mode = "dyadic") -> float:
    """``[w]_{A_p^-} = sup_I <w>_{I+} <sigma>_{I-}^{p-1}``."""
    return ap_plus(_reflect(w), mode)


def a1_plus(w: Weight, mode: Mode = "dyadic") -> float:
    """``|| M_- w / w ||_inf``; cells where the sup is empty contribute 0."""
    return float(np.max(max_minus(w.base, mode).values / w.values))


def a1_minus(w: Weight, mode: Mode = "dyadic") -> float:
    return float(np.max(max_plus(w.base, mode).values / w.values))


def _ainf_plus_dyadic(wv: np.ndarray, depth: int) -> float:
    n = wv.size
    # local[l, x]: <w>_{J-} when x lies in J+ for the level-l interval J containing x, else 0
    local = np.zeros((depth, n))
    for level in range(depth):
        m = 1 << level
        left_avg = wv.reshape(2 * m, -1).mean(axis=1).reshape(m, 2)[:, 0]
        local[level].reshape(m, 2, -1)[:, 1, :] = left_avg[:, None]
    # M_-(w 1_I) on I only sees intervals J ⊆ I, i.e. levels >= level(I)
    suffix = np.maximum.accumulate(local[::-1], axis=0)[::-1]
    best = 0.0
    for level in range(depth):
        m = 1 << level
        num = suffix[level].reshape(m, -1).sum(axis=1)
        den = wv.reshape(m, -1).sum(axis=1)
        best = max(best, float(np.max(num / den)))
    return best


def _ainf_plus_sliding(w: Weight) -> float:
    if w.grid.depth > SLIDING_AINF_MAX_DEPTH:
        raise ResourceLimitError(
            f"sliding A_inf is brute force; depth {w.grid.depth} > {SLIDING_AINF_MAX_DEPTH}")
    n = w.grid.n
    best = 0.0
    for length in range(2, n + 1, 2):
        for start in range(0, n - length + 1):
            restricted = np.zeros(n)
            restricted[start:start + length] = w.values[start:start + length]
            m = max_minus(GridFunction(w.grid, restricted), "sliding").values
            best = max(best, m[start:start + length].sum() / w.values[start:start + length].sum())
    return best


def ainf_plus(w: Weight, mode: Mode = "dyadic") -> float:
    """``[w]_{A_inf^+} = sup_I w(I)^{-1} int_I M_-(w 1_I)``."""
    _check_mode(mode)
    if mode == "sliding":
        return _ainf_plus_sliding(w)
    return _ainf_plus_dyadic(w.values, w.grid.depth)


def ainf_minus(w: Weight, mode: Mode = "dyadic") -> float:
    return ainf_plus(_reflect(w), mode)


# --- weight families ---------------------------------------------------------

KINDS = ("constant", "step", "power", "one_sided_power", "cascade")
ORIENTATIONS = ("decreasing", "increasing")


@dataclass(frozen=True)
class WeightFamilySpec:
    kind: str = "constant"
    alpha: float = 0.0
    orientation: str = "decreasing"
    theta: float = 0.0
    seed: int = 0
    depth: int = 10
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown weight kind {self.kind!r}; expected one of {KINDS}")
        if self.orientation not in ORIENTATIONS:
            raise DomainError(f"orientation must be one of {ORIENTATIONS}")
        if not 0.0 <= self.theta < 1.0:
            raise DomainError("cascade amplitude theta must lie in [0, 1)")

    @classmethod
    def parse(cls, text: str) -> "WeightFamilySpec":
        """Parse ``kind=power alpha=-0.5 orientation=decreasing depth=10 seed=42``."""
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for token in shlex.split(text, comments=True):
            if "=" not in token:
                raise ConfigError(f"expected key=value, got {token!r}")
            key, value = token.split("=", 1)
            if key not in types:
                raise ConfigError(f"unknown weight key {key!r}")
            kwargs[key] = _coerce(types[key], value)
        return cls(**kwargs)

    def replace(self, **changes) -> "WeightFamilySpec":
        return WeightFamilySpec(**{**asdict(self), **changes})

    def to_text(self) -> str:
        return " ".join(f"{k}={v}" for k, v in asdict(self).items())


def _coerce(type_name, value: str):
    name = type_name if isinstance(type_name, str) else type_name.__name__
    try:
        if name == "int":
            return int(value)
        if name == "float":
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {value!r} as {name}") from exc
    return value


def power_cell_averages(lo: np.ndarray, hi: np.ndarray, alpha: float) -> np.ndarray:
    """Exact averages of ``t**alpha`` over ``[lo, hi]`` (``0 <= lo < hi``)."""
    if alpha <= -1:
        raise DomainError(f"t**{alpha} is not integrable at 0 (need alpha > -1)")
    s = alpha + 1.0
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    out = np.empty_like(hi)
    zero = lo == 0
    out[zero] = hi[zero] ** s
    nz = ~zero
    # lo**s * expm1(s log(hi/lo)) avoids cancellation when hi/lo is close to 1
    out[nz] = lo[nz] ** s * np.expm1(s * np.log1p((hi[nz] - lo[nz]) / lo[nz]))
    return out / (s * (hi - lo))


def cascade_signs(depth: int, seed: int) -> np.ndarray:
    """The ±1 choices of a cascade, level-major over levels ``0..depth-1``."""
    rng = np.random.default_rng(seed)
    return rng.choice((-1.0, 1.0), size=(1 << depth) - 1)


def cascade_values(depth: int, theta: float, signs: np.ndarray) -> np.ndarray:
    """Mass-preserving multiplicative cascade: children get ``(1 + s theta, 1 - s theta)``."""
    v = np.ones(1)
    for level in range(depth):
        s = signs[(1 << level) - 1:(1 << (level + 1)) - 1]
        v = np.stack([v * (1 + s * theta), v * (1 - s * theta)], axis=1).ravel()
    return v


def generate_weight(spec: WeightFamilySpec) -> Weight:
    grid = DyadicGrid(spec.depth)
    n = grid.n
    h = grid.width
    edges = np.arange(n + 1) * h
    if spec.kind == "constant":
        values = np.ones(n)
    elif spec.kind == "step":
        values = np.where(np.arange(n) < n // 2, 2.0 ** spec.alpha, 1.0)
    elif spec.kind == "power":
        values = power_cell_averages(edges[:-1], edges[1:], spec.alpha)
    elif spec.kind == "one_sided_power":
        # singular at the midpoint, power profile on the right half only
        half = n // 2
        values = np.ones(n)
        values[half:] = power_cell_averages(edges[:half], edges[1:half + 1], spec.alpha)
    else:
        values = cascade_values(spec.depth, spec.theta, cascade_signs(spec.depth, spec.seed))
    if spec.orientation == "increasing" and spec.kind != "cascade":
        values = values[::-1]
    return Weight(GridFunction(grid, values), spec.p)
