"""Weighted norms, exact L^2(w) operator norms and testing constants.

Every estimator that searches over test functions is a *lower bound* on the
quantity it names: the supremum is only taken over the family it is given.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .dyadic import DyadicGrid, GridFunction, IntervalId, Weight
from .errors import ConvergenceError, DomainError, ResourceLimitError
from .operators import (
    MAX_DENSE_DEPTH,
    SignPattern,
    TruncationProfile,
    adjoint_terms,
    apply_adjoint,
    apply_transform,
    max_plus,
    operator_matrix,
)

POWER_TOL = 1e-8
POWER_MAX_ITER = 100_000


def _cell_weights(w, grid: DyadicGrid) -> np.ndarray:
    if w is None:
        return np.ones(grid.n)
    return w.values if isinstance(w, Weight) else np.asarray(w, dtype=float)


def lp_norm(f: GridFunction, w: Weight | None = None, p: float = 2.0) -> float:
    """``(sum |f|^p w dx)^(1/p)``; ``w=None`` is Lebesgue measure."""
    if p < 1:
        raise DomainError("lp_norm needs p >= 1")
    wv = _cell_weights(w, f.grid)
    return float(np.sum(np.abs(f.values) ** p * wv) * f.grid.width) ** (1.0 / p)


@dataclass
class WeakNormReport:
    value: float
    witness_lambda: float
    measure: float
    witness_function: str = ""
    input_norm: float = 1.0
    p: float = 1.0

    def recompute(self) -> float:
        return self.witness_lambda * self.measure ** (1.0 / self.p) / self.input_norm

    def to_dict(self) -> dict:
        return asdict(self)


def weak_lp_norm(f: GridFunction, w: Weight | None = None, p: float = 1.0,
                 label: str = "") -> WeakNormReport:
    """``max_v v * w({|f| >= v})^(1/p)`` over the distinct values ``v`` of ``|f|``."""
    if p < 1:
        raise DomainError("weak_lp_norm needs p >= 1")
    a = np.abs(f.values)
    wv = _cell_weights(w, f.grid)
    order = np.argsort(-a, kind="stable")
    a = a[order]
    cum = np.cumsum(wv[order]) * f.grid.width
    ends = np.flatnonzero(np.append(a[1:] != a[:-1], True))
    ends = ends[a[ends] > 0]
    if ends.size == 0:
        return WeakNormReport(0.0, 0.0, 0.0, label, 1.0, p)
    cand = a[ends] * cum[ends] ** (1.0 / p)
    best = ends[int(np.argmax(cand))]
    return WeakNormReport(float(a[best] * cum[best] ** (1.0 / p)), float(a[best]),
                          float(cum[best]), label, 1.0, p)


# --- L^2 operator norms --------------------------------------------------------

def _two_weight_factors(w: Weight | None, sigma: Weight | None, grid: DyadicGrid):
    """Scalings making ``x -> left * T(right * x)`` the operator on plain l^2."""
    wv = _cell_weights(w, grid)
    sv = 1.0 / wv if sigma is None else _cell_weights(sigma, grid)
    dx = grid.width
    return np.sqrt(wv * dx), np.sqrt(sv / dx)


def operator_l2_matrix(eps: SignPattern, w: Weight | None = None, sigma: Weight | None = None) -> np.ndarray:
    """Dense matrix whose spectral norm is ``||T(sigma .)||_{L2(sigma) -> L2(w)}``.

    Without ``sigma`` this is the one-weight norm on ``L^2(w)``.
    """
    left, right = _two_weight_factors(w, sigma, eps.grid)
    return left[:, None] * operator_matrix(eps) * right[None, :]


def op_norm_svd(eps: SignPattern, w: Weight | None = None, sigma: Weight | None = None) -> float:
    """Dense singular-value oracle for ``op_norm_l2``."""
    return float(np.linalg.svd(operator_l2_matrix(eps, w, sigma), compute_uv=False)[0])


@dataclass
class PowerResult:
    value: float
    iterations: int
    residual: float
    right_vector: np.ndarray
    left_vector: np.ndarray


LANCZOS_AFTER = 500


def _lanczos_top(matvec, rmatvec, n: int, x0: np.ndarray, tol: float, max_iter: int):
    op = LinearOperator((n, n), matvec=lambda v: rmatvec(matvec(np.ravel(v))), dtype=float)
    try:
        _, vecs = eigsh(op, k=1, which="LA", v0=x0, tol=tol * 1e-3, maxiter=max_iter)
    except ArpackNoConvergence as exc:
        raise ConvergenceError("Lanczos refinement did not converge", residual=np.inf,
                               estimate=float(np.sqrt(max(exc.eigenvalues, default=0.0)))) from exc
    return vecs[:, 0]


def power_iteration(matvec, rmatvec, n: int, tol: float = POWER_TOL,
                    max_iter: int = POWER_MAX_ITER, x0: np.ndarray | None = None,
                    lanczos_after: int | None = LANCZOS_AFTER) -> PowerResult:
    """Largest singular value by power iteration on ``A^T A``.

    Starts from ``x0`` (all ones by default); if that start is annihilated by
    ``A`` a fixed pseudo-random start is used instead.  When the top singular
    values are clustered, plain power steps converge very slowly; after
    ``lanczos_after`` steps the current iterate seeds a Lanczos solve instead.
    """
    x = np.ones(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    x /= np.linalg.norm(x)
    y = matvec(x)
    if not np.linalg.norm(y) > 1e-300:
        x = np.random.default_rng(0).standard_normal(n)
        x /= np.linalg.norm(x)
        y = matvec(x)
    s = float(np.linalg.norm(y))
    if s == 0.0:
        return PowerResult(0.0, 0, 0.0, x, np.zeros(n))
    # stop on the eigen-residual of A^T A, not on the change of s: slow
    # convergence makes successive estimates agree long before they are right
    residual = np.inf
    for it in range(1, max_iter + 1):
        z = rmatvec(y)
        residual = float(np.linalg.norm(z - s * s * x)) / (s * s)
        if residual <= tol:
            return PowerResult(s, it, residual, x, y / s)
        if lanczos_after is not None and it >= lanczos_after and n > 2:
            x = _lanczos_top(matvec, rmatvec, n, x, tol, max_iter)
            y = matvec(x)
            s = float(np.linalg.norm(y))
            residual = float(np.linalg.norm(rmatvec(y) - s * s * x)) / (s * s)
            return PowerResult(s, it, residual, x, y / s)
        x = z / np.linalg.norm(z)
        y = matvec(x)
        s = float(np.linalg.norm(y))
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations",
                           residual=residual, estimate=s)


def op_norm_l2_result(eps: SignPattern, w: Weight | None = None, sigma: Weight | None = None,
                      tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER,
                      x0: np.ndarray | None = None) -> PowerResult:
    grid = eps.grid
    left, right = _two_weight_factors(w, sigma, grid)
    c, depth = eps.coeffs, grid.depth

    def matvec(x):
        return left * apply_transform(right * x, c, depth)

    def rmatvec(y):
        return right * apply_adjoint(left * y, c, depth)

    return power_iteration(matvec, rmatvec, grid.n, tol, max_iter, x0)


def op_norm_l2(eps: SignPattern, w: Weight | None = None, sigma: Weight | None = None,
               tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER) -> float:
    """``||T||_{L^2(w)}``, or ``||T(sigma .)||_{L^2(sigma) -> L^2(w)}`` when ``sigma`` is given."""
    return op_norm_l2_result(eps, w, sigma, tol, max_iter).value


# --- testing constants ---------------------------------------------------------

@dataclass
class TestingReport:
    forward_restricted: float
    forward_global: float
    adjoint_restricted: float
    adjoint_global: float
    witness_interval: IntervalId
    forward_parent: float = 0.0
    adjoint_parent: float = 0.0

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        d = asdict(self)
        d["witness_interval"] = list(self.witness_interval)
        return d

    @property
    def global_max(self) -> float:
        return max(self.forward_global, self.adjoint_global)


def _l2(values: np.ndarray, weights: np.ndarray, dx: float) -> float:
    return float(np.sqrt(np.sum(values * values * weights) * dx))


def ntv_testing(eps: SignPattern, w: Weight, sigma: Weight) -> TestingReport:
    """Forward and adjoint testing constants over dyadic ``I`` (levels ``0..N-2``).

    Three localizations are reported for each direction: restricted (outer
    ``1_I``), parent (outer indicator of the parent of ``I``) and global (no
    outer indicator).
    """
    grid = eps.grid
    depth, dx = grid.depth, grid.width
    wv, sv = w.values, sigma.values
    best = dict(fr=0.0, fg=0.0, fp=0.0, ar=0.0, ag=0.0, ap=0.0)
    witness, witness_value = IntervalId(0, 0), -1.0
    for I in grid.intervals(0, depth - 2):
        cells = grid.cells(I)
        outer = grid.cells(I.parent) if I.level > 0 else cells
        ind = np.zeros(grid.n)
        ind[cells] = 1.0
        s_mass = float(np.sum(sv[cells]) * dx)
        w_mass = float(np.sum(wv[cells]) * dx)
        fwd = apply_transform(sv * ind, eps.coeffs, depth)
        adj = apply_adjoint(wv * ind, eps.coeffs, depth)
        fr = _l2(fwd[cells], wv[cells], dx) / np.sqrt(s_mass)
        fg = _l2(fwd, wv, dx) / np.sqrt(s_mass)
        fp = _l2(fwd[outer], wv[outer], dx) / np.sqrt(s_mass)
        ar = _l2(adj[cells], sv[cells], dx) / np.sqrt(w_mass)
        ag = _l2(adj, sv, dx) / np.sqrt(w_mass)
        ap = _l2(adj[outer], sv[outer], dx) / np.sqrt(w_mass)
        for key, val in zip(("fr", "fg", "fp", "ar", "ag", "ap"), (fr, fg, fp, ar, ag, ap)):
            best[key] = max(best[key], val)
        if max(fg, ag) > witness_value:
            witness, witness_value = I, max(fg, ag)
    return TestingReport(best["fr"], best["fg"], best["ar"], best["ag"], witness, best["fp"], best["ap"])


def indicator_family(grid: DyadicGrid):
    """``1_{I+}`` for every dyadic ``I`` that has children, with labels."""
    for I in grid.intervals(0, grid.depth - 1):
        yield f"1_I+{tuple(I)}", grid.indicator(I.right)


def random_nonnegative_family(grid: DyadicGrid, size: int, seed: int):
    rng = np.random.default_rng(seed)
    for k in range(size):
        kind = k % 3
        if kind == 0:
            v = rng.exponential(size=grid.n)
        elif kind == 1:
            v = rng.exponential(size=grid.n) * (rng.random(grid.n) < 0.05)
        else:
            lo = int(rng.integers(0, grid.n))
            hi = int(rng.integers(lo + 1, grid.n + 1))
            v = np.zeros(grid.n)
            v[lo:hi] = 1.0
        yield f"random[{k}]", GridFunction(grid, v)


def maximal_weak_testing(w: Weight, sigma: Weight, p: float, family_size: int = 0,
                         seed: int = 0) -> float:
    """Lower bound for ``||M_+(sigma .)||_{L^p(sigma) -> L^{p,inf}(w)}`` over a test family."""
    return maximal_weak_testing_report(w, sigma, p, family_size, seed).value


def maximal_weak_testing_report(w: Weight, sigma: Weight, p: float, family_size: int = 0,
                                seed: int = 0) -> WeakNormReport:
    if not p > 1:
        raise DomainError("maximal_weak_testing needs p > 1")
    grid = w.grid
    family = itertools.chain(indicator_family(grid), random_nonnegative_family(grid, family_size, seed))
    best = WeakNormReport(0.0, 0.0, 0.0, "", 1.0, p)
    for label, f in family:
        sf = GridFunction(grid, sigma.values * f.values)
        if not np.any(sf.values):
            continue
        rep = weak_lp_norm(max_plus(sf), w, p, label)
        norm = lp_norm(f, sigma, p)
        ratio = rep.value / norm
        if ratio > best.value:
            best = WeakNormReport(ratio, rep.witness_lambda, rep.measure, label, norm, p)
    return best


# --- linearized testing -------------------------------------------------------

EXHAUSTIVE_LIMIT = 400_000
LINEARIZED_MAX_CELLS = 512


def _cutoff_columns(eps: SignPattern, w: Weight, I0: IntervalId) -> tuple[np.ndarray, list[int]]:
    """``cols[y, j]``: output on ``I0`` of a unit spike at cell ``y`` of ``I0`` (times ``w``),
    keeping levels below ``cutoffs[j]``."""
    grid = eps.grid
    cells = grid.cells(I0)
    c = cells.stop - cells.start
    if c > LINEARIZED_MAX_CELLS:
        raise ResourceLimitError(f"linearized testing supports up to {LINEARIZED_MAX_CELLS} cells in I0")
    cutoffs = list(range(I0.level + 1, grid.depth))  # keep levels < k; k <= level(I0) keeps nothing
    cols = np.zeros((c, len(cutoffs), c))
    for j, y in enumerate(range(cells.start, cells.stop)):
        spike = np.zeros(grid.n)
        spike[y] = w.values[y]
        partial = np.cumsum(adjoint_terms(spike, eps.coeffs, grid.depth), axis=0)
        for i, k in enumerate(cutoffs):
            cols[j, i] = partial[k - 1, cells]
    return cols, cutoffs


@dataclass
class LinearizedTestingResult:
    value: float
    signs: np.ndarray
    cutoffs: np.ndarray
    exhaustive: bool

    def profile(self, grid: DyadicGrid, I0: IntervalId) -> tuple[GridFunction, TruncationProfile]:
        """The maximizing ``(phi, delta)`` as grid objects (``delta = 0`` outside ``I0``)."""
        phi = np.zeros(grid.n)
        cuts = np.full(grid.n, grid.depth)
        cells = grid.cells(I0)
        phi[cells] = self.signs
        cuts[cells] = self.cutoffs
        return GridFunction(grid, phi), TruncationProfile.from_cutoffs(grid, cuts)


def linearized_testing(eps: SignPattern, w: Weight, sigma: Weight, p: float, I0: IntervalId,
                       budget: int = 20, seed: int = 0, exhaustive: bool | None = None) -> float:
    """Lower bound for the ``I0`` term of the linearized testing constant.

    Maximizes ``||1_{I0} T*_delta(w phi)||_{L^{p'}(sigma)} / w(I0)^{1/p'}`` over
    ``phi`` in {±1} on ``I0`` and per-cell cutoffs ``delta``.
    """
    return linearized_testing_result(eps, w, sigma, p, I0, budget, seed, exhaustive).value


def linearized_testing_result(eps: SignPattern, w: Weight, sigma: Weight, p: float, I0: IntervalId,
                              budget: int = 20, seed: int = 0,
                              exhaustive: bool | None = None) -> LinearizedTestingResult:
    grid = eps.grid
    grid.check(I0, max_level=grid.depth - 2)
    q = p / (p - 1.0)
    cells = grid.cells(I0)
    sv = sigma.values[cells]
    scale = w.measure(I0) ** (1.0 / q)
    dx = grid.width
    cols, cutoffs = _cutoff_columns(eps, w, I0)
    c, k = cols.shape[0], cols.shape[1]
    # option 0 keeps nothing; then (sign, cutoff) pairs
    options = np.concatenate([np.zeros((c, 1, c)), cols, -cols], axis=1)
    opt_sign = np.concatenate([[1.0], np.ones(k), -np.ones(k)])
    opt_cut = np.concatenate([[0], cutoffs, cutoffs])
    n_opt = options.shape[1]

    def objective(out):
        return (np.sum(np.abs(out) ** q * sv, axis=-1) * dx) ** (1.0 / q) / scale

    if exhaustive is None:
        exhaustive = n_opt ** c <= EXHAUSTIVE_LIMIT
    if exhaustive:
        if n_opt ** c > EXHAUSTIVE_LIMIT:
            raise ResourceLimitError(f"{n_opt}**{c} combinations exceed the exhaustive limit")
        best_val, best_choice = -1.0, None
        chunk = list(itertools.product(range(n_opt), repeat=min(c, 4)))
        head = np.array(chunk).reshape(len(chunk), -1)
        head_out = sum(options[j, head[:, j]] for j in range(head.shape[1]))
        for tail in itertools.product(range(n_opt), repeat=c - head.shape[1]):
            base = np.zeros(c)
            for j, o in enumerate(tail):
                base = base + options[head.shape[1] + j, o]
            vals = objective(head_out + base)
            i = int(np.argmax(vals))
            if vals[i] > best_val:
                best_val, best_choice = float(vals[i]), tuple(head[i]) + tail
        choice = np.array(best_choice)
        return LinearizedTestingResult(best_val, opt_sign[choice], opt_cut[choice], True)

    rng = np.random.default_rng(seed)
    best_val, best_choice = -1.0, None
    for restart in range(max(budget, 1)):
        choice = np.full(c, k) if restart == 0 else rng.integers(0, n_opt, size=c)
        out = options[np.arange(c), choice].sum(axis=0)
        current = float(objective(out))
        improved = True
        while improved:
            improved = False
            for y in range(c):
                trial = out[None, :] - options[y, choice[y]][None, :] + options[y]
                vals = objective(trial)
                o = int(np.argmax(vals))
                if vals[o] > current * (1 + 1e-14) and o != choice[y]:
                    out = trial[o]
                    choice[y] = o
                    current = float(vals[o])
                    improved = True
        if current > best_val:
            best_val, best_choice = current, choice.copy()
    return LinearizedTestingResult(best_val, opt_sign[best_choice], opt_cut[best_choice], False)


# --- weak L^1 of the linearized adjoint --------------------------------------

def _random_l1_input(grid: DyadicGrid, rng: np.random.Generator, kind: int) -> np.ndarray:
    n = grid.n
    if kind == 0:
        return rng.standard_normal(n)
    if kind == 1:
        v = np.zeros(n)
        v[int(rng.integers(0, n))] = 1.0 / grid.width
        return v
    if kind == 2:
        v = rng.standard_normal(n) * (rng.random(n) < 0.02)
        if not np.any(v):
            v[int(rng.integers(0, n))] = 1.0
        return v
    level = int(rng.integers(1, grid.depth))
    k = int(rng.integers(0, 1 << level))
    span = n >> level
    v = np.zeros(n)
    v[k * span:(k + 1) * span] = rng.choice((-1.0, 1.0))
    return v


def weak_l1_adjoint_probe(eps: SignPattern | None = None, delta: TruncationProfile | None = None,
                          trials: int = 100, seed: int = 0, depth: int | None = None) -> float:
    """Empirical ``sup ||T*_delta f||_{L^{1,inf}} / ||f||_{L^1}`` over seeded random inputs.

    A fixed ``eps`` or ``delta`` is used as given; missing ones are redrawn per trial.
    """
    if eps is not None:
        grid = eps.grid
    elif delta is not None:
        grid = delta.grid
    elif depth is not None:
        grid = DyadicGrid(depth)
    else:
        raise DomainError("weak_l1_adjoint_probe needs eps, delta or depth")
    rng = np.random.default_rng(seed)
    best = 0.0
    for t in range(trials):
        e = eps if eps is not None else SignPattern.random(grid, rng)
        d = delta if delta is not None else TruncationProfile.random(grid, rng)
        f = GridFunction(grid, _random_l1_input(grid, rng, t % 4))
        norm = lp_norm(f, None, 1.0)
        if norm == 0:
            continue
        out = adjoint_terms(f.values, e.coeffs, grid.depth, keep=d.keeps).sum(axis=0)
        best = max(best, weak_lp_norm(GridFunction(grid, out), None, 1.0).value / norm)
    return best
