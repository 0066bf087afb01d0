"""Slicing by the A_p^+ product, the stopping-time corona, and the
verification harnesses built on them (distributional estimate, John–Nirenberg
bootstrap, and the layered estimate chain for a single slice).

Constants hidden in the "≲" of the underlying inequalities are never assumed:
every harness reports measured ratios, and suite-level constants are fitted
from those ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np

from .characteristics import ainf_plus
from .dyadic import DyadicGrid, GridFunction, IntervalId, Weight
from .errors import AddressingError, PreconditionError
from .operators import SignPattern, TruncationProfile, adjoint_terms, collection_mask

Region = Literal["left", "proper"]

LAMBDA_GRID = tuple(2.0 ** (k / 2) for k in range(-16, 17))


def dyadic_class(x: float) -> int:
    """The integer ``a`` with ``2**a < x <= 2**(a+1)`` (exact for powers of two)."""
    if not x > 0:
        raise ValueError("dyadic_class needs a positive argument")
    m, e = math.frexp(x)
    return e - 2 if m == 0.5 else e - 1


@dataclass(frozen=True)
class SliceSpec:
    I0: IntervalId
    a: int
    p: float
    enforce_w_bound: bool = False
    b: int | None = None
    region: Region = "left"


def _candidates(grid: DyadicGrid, I0: IntervalId, region: Region) -> Iterable[IntervalId]:
    top = grid.depth - 2
    if region == "left":
        yield from grid.subintervals(I0.left, top)
    elif region == "proper":
        for J in grid.subintervals(I0, top):
            if J != I0:
                yield J
    else:
        raise PreconditionError(f"region must be 'left' or 'proper', got {region!r}")


def ap_product(w: Weight, sigma: Weight, I: IntervalId, p: float) -> float:
    return sigma.average(I.right) ** (p - 1) * w.average(I.left)


def product_classes(w: Weight, sigma: Weight, I0: IntervalId, p: float,
                    region: Region = "left") -> dict[IntervalId, int]:
    """``a`` for every candidate interval, i.e. the slice it falls in."""
    return {I: dyadic_class(ap_product(w, sigma, I, p)) for I in _candidates(w.grid, I0, region)}


def band_of(w: Weight, I: IntervalId, I0: IntervalId) -> int:
    """``b`` with ``2**-b <w>_{I0-} < <w>_{I-} <= 2**(1-b) <w>_{I0-}``."""
    return -dyadic_class(w.average(I.left) / w.average(I0.left))


def slice_ka(w: Weight, sigma: Weight, spec: SliceSpec) -> set[IntervalId]:
    """Intervals whose A_p^+ product lies in ``(2**a, 2**(a+1)]``.

    ``region="left"`` takes ``I ⊆ I0^-`` and ``region="proper"`` takes
    ``I ⊊ I0``; the upper bound on ``<w>_{I-}`` and the band ``b`` are optional.
    """
    grid = w.grid
    grid.check(spec.I0)
    if spec.I0.level > grid.depth - 3:
        raise PreconditionError(f"I0 must sit at level <= {grid.depth - 3} on this grid")
    w0 = w.average(spec.I0.left)
    out = set()
    for I in _candidates(grid, spec.I0, spec.region):
        if dyadic_class(ap_product(w, sigma, I, spec.p)) != spec.a:
            continue
        if spec.enforce_w_bound and not w.average(I.left) <= 2 * w0:
            continue
        if spec.b is not None and band_of(w, I, spec.I0) != spec.b:
            continue
        out.add(I)
    return out


def populated_slices(w: Weight, sigma: Weight, I0: IntervalId, p: float, region: Region = "left",
                     enforce_w_bound: bool = False) -> dict[int, int]:
    """Slice sizes ``{a: |K_a|}``."""
    w0 = w.average(I0.left)
    sizes: dict[int, int] = {}
    for I, a in product_classes(w, sigma, I0, p, region).items():
        if enforce_w_bound and not w.average(I.left) <= 2 * w0:
            continue
        sizes[a] = sizes.get(a, 0) + 1
    return dict(sorted(sizes.items()))


def top_populated_slice(w: Weight, sigma: Weight, I0: IntervalId, p: float, region: Region = "left",
                        enforce_w_bound: bool = True) -> int:
    sizes = populated_slices(w, sigma, I0, p, region, enforce_w_bound)
    return max(sizes, key=lambda a: (sizes[a], a))


# --- corona ---------------------------------------------------------------------

@dataclass
class CoronaForest:
    I0: IntervalId
    generations: list[list[IntervalId]]
    parent: dict[IntervalId, IntervalId | None]
    assignment: dict[IntervalId, IntervalId]
    partition: dict[IntervalId, list[IntervalId]]

    @property
    def stopping(self) -> list[IntervalId]:
        return [S for gen in self.generations for S in gen]

    def generation_of(self, S: IntervalId) -> int:
        for t, gen in enumerate(self.generations, start=1):
            if S in gen:
                return t
        raise KeyError(S)

    def chain(self, S: IntervalId) -> list[IntervalId]:
        """Stopping intervals from ``S`` up to its generation-1 root."""
        out = [S]
        while self.parent[out[-1]] is not None:
            out.append(self.parent[out[-1]])
        return out

    def shape(self) -> dict:
        depths = [len(self.chain(S)) for S in self.stopping]
        return {
            "generations": [len(g) for g in self.generations],
            "stopping_intervals": len(self.stopping),
            "max_chain_depth": max(depths, default=0),
            "members": len(self.assignment),
        }


def build_corona(w: Weight, K: Iterable[IntervalId], I0: IntervalId) -> CoronaForest:
    """Stopping intervals of ``K`` ordered by their left halves.

    Generation 1 holds the members whose ``I^-`` is maximal; below a stopping
    ``S`` the next generation holds the maximal ``J`` with ``J^- ⊊ S^-`` and
    ``<w>_{J^-} > 2 <w>_{S^-}``.  Each member is assigned to the minimal
    stopping interval whose left half contains its own.
    """
    members = sorted(set(K))
    for J in members:
        if not I0.contains(J):
            raise PreconditionError(f"{tuple(J)} is not inside I0={tuple(I0)}")
    stop_by_left: dict[IntervalId, IntervalId] = {}
    gen: dict[IntervalId, int] = {}
    parent: dict[IntervalId, IntervalId | None] = {}
    assignment: dict[IntervalId, IntervalId] = {}
    # coarse-to-fine order settles every ancestor before its descendants
    for J in sorted(members, key=lambda I: (I.level, I.index)):
        S = None
        for A in J.left.ancestors():
            if A in stop_by_left:
                S = stop_by_left[A]
                break
        if S is None or w.average(J.left) > 2 * w.average(S.left):
            stop_by_left[J.left] = J
            gen[J] = 1 if S is None else gen[S] + 1
            parent[J] = S
            assignment[J] = J
        else:
            assignment[J] = S
    depth = max(gen.values(), default=0)
    generations = [sorted(S for S, t in gen.items() if t == g) for g in range(1, depth + 1)]
    partition: dict[IntervalId, list[IntervalId]] = {S: [] for S in gen}
    for J, S in sorted(assignment.items()):
        partition[S].append(J)
    return CoronaForest(I0, generations, parent, assignment, partition)


def corona_invariants(w: Weight, K: Iterable[IntervalId], forest: CoronaForest) -> dict:
    """Partition, stopping-growth and minimality checks by enumeration."""
    K = set(K)
    covered = [J for members in forest.partition.values() for J in members]
    partition_ok = len(covered) == len(K) and set(covered) == K
    growth_ok = all(
        w.average(S.left) > 2 * w.average(P.left)
        for S, P in forest.parent.items() if P is not None
    )
    stopping = set(forest.stopping)
    minimal_ok = True
    bounded_ok = True
    for J, S in forest.assignment.items():
        if not S.left.contains(J.left):
            minimal_ok = False
        for T in stopping:
            if T != S and S.left.contains(T.left) and T.left != S.left and T.left.contains(J.left):
                minimal_ok = False
        if not w.average(J.left) <= 2 * w.average(S.left) and J != S:
            bounded_ok = False
    return {
        "partition": partition_ok,
        "growth": growth_ok,
        "minimal_assignment": minimal_ok,
        "stopping_bound": bounded_ok,
    }


# --- restricted adjoint helpers ---------------------------------------------------

def restricted_adjoint(g: np.ndarray, eps: SignPattern, delta: TruncationProfile | None,
                       K) -> np.ndarray:
    keep = None if delta is None else delta.keeps
    coeffs = eps.coeffs * collection_mask(eps.grid, K)
    return adjoint_terms(g, coeffs, eps.grid.depth, keep=keep).sum(axis=0)


def _check_phi(phi: GridFunction, I0: IntervalId):
    if not phi.is_unimodular_on(I0):
        raise PreconditionError("phi must satisfy |phi| = 1_{I0}")


# --- distributional estimate -------------------------------------------------------

@dataclass
class DistributionProfile:
    lambdas: np.ndarray
    sigma_measure: np.ndarray
    sigma_I0_plus: float
    sigma_I0: float
    w_I0_minus_avg: float
    p: float
    c_fit: float = float("nan")
    C_fit: float = float("nan")
    C_power: float = float("nan")
    band: int | None = None
    band_measure: np.ndarray | None = None
    band_reference: float | None = None

    @property
    def normalized(self) -> np.ndarray:
        return self.sigma_measure / self.sigma_I0_plus

    @property
    def power_exponent(self) -> float:
        q = self.p / (self.p - 1)
        return -2 * q / (self.p + 1)

    def exponential_bound(self, lam, c: float | None = None, C: float | None = None):
        c = self.c_fit if c is None else c
        C = self.C_fit if C is None else C
        return C * np.exp(-c * np.asarray(lam)) * self.sigma_I0_plus

    def power_bound(self, lam, C: float | None = None):
        C = self.C_power if C is None else C
        return C * np.asarray(lam) ** self.power_exponent * self.sigma_I0_plus

    def measure_at(self, lam: float) -> float:
        i = int(np.argmin(np.abs(self.lambdas - lam)))
        if not math.isclose(self.lambdas[i], lam, rel_tol=1e-12):
            raise KeyError(f"lambda {lam} is not on the grid")
        return float(self.sigma_measure[i])

    def to_dict(self) -> dict:
        d = {
            "lambdas": self.lambdas.tolist(),
            "sigma_measure": self.sigma_measure.tolist(),
            "sigma_I0_plus": self.sigma_I0_plus,
            "sigma_I0": self.sigma_I0,
            "w_I0_minus_avg": self.w_I0_minus_avg,
            "p": self.p,
            "c_fit": self.c_fit,
            "C_fit": self.C_fit,
            "C_power": self.C_power,
        }
        if self.band is not None:
            d.update(band=self.band, band_measure=self.band_measure.tolist(),
                     band_reference=self.band_reference)
        return d


def fit_exponential(lambdas: np.ndarray, normalized: np.ndarray) -> tuple[float, float]:
    """Least-squares ``log m = log C - c lam`` on positive points, then the
    smallest ``C`` putting every point (zeros included) under the curve."""
    lambdas = np.asarray(lambdas, dtype=float)
    normalized = np.asarray(normalized, dtype=float)
    pos = normalized > 0
    if np.count_nonzero(pos) >= 2 and np.ptp(lambdas[pos]) > 0:
        slope, _ = np.polyfit(lambdas[pos], np.log(normalized[pos]), 1)
        c = float(-slope)
    else:
        c = float("nan")
    if not pos.any():
        return c, 0.0
    cc = 0.0 if math.isnan(c) else c
    return c, float(np.max(normalized[pos] * np.exp(cc * lambdas[pos])))


def distribution_profile(eps: SignPattern, delta: TruncationProfile | None, w: Weight, sigma: Weight,
                         K, I0: IntervalId, phi: GridFunction | None = None, p: float | None = None,
                         scale: float = 1.0, band: int | None = None,
                         lambdas=LAMBDA_GRID) -> DistributionProfile:
    """σ-measures of ``{|T*_{delta,K}(w phi)| > lam * scale * <w>_{I0-}}`` on a λ grid.

    When ``K`` is a single band ``b``, ``band=b`` also records the measures at
    the band thresholds ``lam * 2**(1-b) * <w>_{I0-}`` and the reference
    ``2**(b/(p-1)) σ(I0+)``.
    """
    grid = w.grid
    p = w.p if p is None else p
    phi = grid.indicator(I0) if phi is None else phi
    _check_phi(phi, I0)
    lambdas = np.asarray(lambdas, dtype=float)
    g = restricted_adjoint(w.values * phi.values, eps, delta, K)
    mag = np.abs(g)
    w0 = w.average(I0.left)
    dx = grid.width
    sv = sigma.values

    def measures(thresholds):
        return np.array([np.sum(sv[mag > t]) * dx for t in thresholds])

    meas = measures(lambdas * scale * w0)
    prof = DistributionProfile(lambdas, meas, sigma.measure(I0.right), sigma.measure(I0), w0, p)
    big = lambdas >= 1
    prof.c_fit, prof.C_fit = fit_exponential(lambdas[big], prof.normalized[big])
    small = lambdas < 1
    prof.C_power = float(np.max(prof.normalized[small] / lambdas[small] ** prof.power_exponent,
                                initial=0.0))
    if band is not None:
        prof.band = band
        prof.band_measure = measures(lambdas * 2.0 ** (1 - band) * w0)
        prof.band_reference = 2.0 ** (band / (p - 1)) * prof.sigma_I0_plus
    return prof


def band_conversion_spread(w: Weight, sigma: Weight, K_band: Iterable[IntervalId]) -> float:
    """``max / min`` of ``σ(I+)/|I|`` over one band (1.0 for fewer than two members)."""
    ratios = [sigma.measure(I.right) / I.length for I in K_band]
    if len(ratios) < 2:
        return 1.0
    return max(ratios) / min(ratios)


def split_bands(w: Weight, K: Iterable[IntervalId], I0: IntervalId) -> dict[int, set[IntervalId]]:
    bands: dict[int, set[IntervalId]] = {}
    for I in K:
        bands.setdefault(band_of(w, I, I0), set()).add(I)
    return dict(sorted(bands.items()))


# --- John–Nirenberg bootstrap ----------------------------------------------------

def haar_summand_family(eps: SignPattern, w: Weight, phi: GridFunction, K: Iterable[IntervalId],
                        delta: TruncationProfile | None = None,
                        unit: float = 1.0) -> dict[IntervalId, GridFunction]:
    """``phi_I = eps_I <w phi, h_{I-} 1_{|I| > delta}> h_{I+} / unit`` for ``I`` in ``K``."""
    grid = w.grid
    g = w.values * phi.values / unit
    out = {}
    for I in sorted(K):
        mask = np.zeros(eps.coeffs.size)
        mask[(1 << I.level) - 1 + I.index] = 1.0
        out[I] = GridFunction(grid, restricted_adjoint(g, eps, delta, mask))
    return out


@dataclass
class JNReport:
    C: float
    hypothesis_holds: bool
    hypothesis_max_ratio: float
    hypothesis_tests: int
    lambdas: list[float]
    conclusion_max_ratio: list[float]
    violations: list[dict] = field(default_factory=list)

    @property
    def conclusion_holds(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "C": self.C,
            "hypothesis_holds": self.hypothesis_holds,
            "hypothesis_max_ratio": self.hypothesis_max_ratio,
            "hypothesis_tests": self.hypothesis_tests,
            "lambdas": self.lambdas,
            "conclusion_max_ratio": self.conclusion_max_ratio,
            "violations": self.violations,
        }


def _check_family(grid: DyadicGrid, family: dict[IntervalId, GridFunction]):
    for I, f in family.items():
        if I.level > grid.depth - 2:
            raise PreconditionError(f"{tuple(I)} has no grandchildren on a depth-{grid.depth} grid")
        cells = grid.cells(I)
        outside = np.ones(grid.n, dtype=bool)
        outside[cells] = False
        if np.any(f.values[outside] != 0):
            raise PreconditionError(f"phi_{tuple(I)} is not supported on the interval")
        quarters = f.values[cells].reshape(4, -1)
        if np.any(quarters != quarters[:, :1]):
            raise PreconditionError(f"phi_{tuple(I)} is not constant on grandchildren")


def _jn_tests(E: list[IntervalId], I0: IntervalId, grid: DyadicGrid, samples: int, seed: int):
    rng = np.random.default_rng(seed)
    tests: list[tuple[IntervalId, np.ndarray]] = []
    for J in grid.subintervals(I0, grid.depth - 2):
        sel = np.array([J.contains(I) for I in E])
        if sel.any():
            tests.append((J, sel))
    roots = list(tests)
    for _ in range(samples):
        J, sel = roots[int(rng.integers(0, len(roots)))]
        tests.append((J, sel & (rng.random(len(E)) < 0.5)))
    return tests


def jn_minimal_constant(phi_family: dict[IntervalId, GridFunction], I0: IntervalId,
                        E: Iterable[IntervalId], samples: int = 64, seed: int = 0) -> float:
    """Smallest ``C`` for which the sampled weak-type hypothesis holds.

    For each tested ``(J, E')`` this is the ``|J|/2``-th largest value of
    ``|sum phi_I|``; the hypothesis ``|{|sum| > C}| < |J|/2`` holds for all
    tests exactly when ``C`` is at least the maximum of these.
    """
    E = sorted(set(E))
    if not E:
        return 0.0
    grid = next(iter(phi_family.values())).grid
    stack = np.array([phi_family[I].values for I in E])
    best = 0.0
    for J, sel in _jn_tests(E, I0, grid, samples, seed):
        s = np.sort(np.abs(sel.astype(float) @ stack)[grid.cells(J)])[::-1]
        best = max(best, float(s[s.size // 2 - 1]))
    return best


def jn_bootstrap_check(phi_family: dict[IntervalId, GridFunction], I0: IntervalId,
                       E: Iterable[IntervalId], C: float, samples: int = 64, seed: int = 0,
                       lambdas: Iterable[float] | None = None) -> JNReport:
    """Measure the weak-type hypothesis on sampled sub-collections, then the
    exponential level-set conclusion ``|{|sum| > (C+1) lam}| < 2**((1-lam)/2) |J|``.

    Tested pairs ``(J, E')`` are every full subtree ``E ∩ {I ⊆ J}`` for dyadic
    ``J ⊆ I0`` plus ``samples`` random halvings of such subtrees.
    """
    E = sorted(set(E))
    if not E:
        lams = list(lambdas) if lambdas is not None else []
        return JNReport(C, True, 0.0, 0, lams, [0.0] * len(lams))
    grid = next(iter(phi_family.values())).grid
    for I in E:
        if not I0.contains(I):
            raise PreconditionError(f"{tuple(I)} is not inside I0")
    _check_family(grid, {I: phi_family[I] for I in E})
    lams = list(lambdas) if lambdas is not None else [float(x) for x in np.linspace(1.25, 20, 76)]
    stack = np.array([phi_family[I].values for I in E])
    dx = grid.width
    tests = _jn_tests(E, I0, grid, samples, seed)

    hyp_ratio = 0.0
    concl = np.zeros(len(lams))
    violations = []
    sums = [(J, np.abs(sel.astype(float) @ stack)) for J, sel in tests]
    for J, s in sums:
        hyp_ratio = max(hyp_ratio, np.count_nonzero(s > C) * dx / J.length)
    holds = hyp_ratio < 0.5
    for J, s in sums:
        for i, lam in enumerate(lams):
            meas = np.count_nonzero(s > (C + 1) * lam) * dx
            bound = 2.0 ** ((1 - lam) / 2) * J.length
            concl[i] = max(concl[i], meas / bound)
            if not meas < bound:
                violations.append({"lambda": lam, "interval": list(J), "measure": meas, "bound": bound})
    return JNReport(C, bool(holds), float(hyp_ratio), len(tests), lams, concl.tolist(), violations)


# --- layered estimate for one slice -------------------------------------------------

@dataclass
class ETaReport:
    a: int
    p: float
    slice_size: int
    forest_shape: dict
    lhs: float
    rhs: float
    ratio: float
    ainf_plus: float
    decomposition_error: float
    layer_error: float
    chain_norm: float
    chain_layers: float
    chain_split: float
    triangle_ok: bool
    n_p: int
    layers: list[dict]
    carleson_sum: float
    carleson_ratio: float
    invariants: dict

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def threshold_np(C_p: float) -> int:
    """Least positive ``n`` with ``2**(n-1) >= C_p``."""
    n = 1
    while 2.0 ** (n - 1) < C_p:
        n += 1
    return n


def verify_eTa_chain(eps: SignPattern, w: Weight, sigma: Weight, p: float, I0: IntervalId, a: int,
                     delta: TruncationProfile | None = None, phi: GridFunction | None = None,
                     C_p: float = 1.0) -> ETaReport:
    """Decompose ``T*_{delta,K_a}(w phi)`` over the corona of ``K_a`` and its layers.

    ``K_a`` is taken over all ``I ⊊ I0`` without the upper bound on ``<w>_{I-}``.
    """
    grid = w.grid
    phi = grid.indicator(I0) if phi is None else phi
    _check_phi(phi, I0)
    q = p / (p - 1)
    dx = grid.width
    sv = sigma.values
    K = slice_ka(w, sigma, SliceSpec(I0, a, p, enforce_w_bound=False, region="proper"))
    forest = build_corona(w, K, I0)
    g = w.values * phi.values
    full = restricted_adjoint(g, eps, delta, K)
    inside = np.zeros(grid.n, dtype=bool)
    inside[grid.cells(I0)] = True

    def norm(v):
        return float(np.sum(np.abs(v[inside]) ** q * sv[inside]) * dx) ** (1 / q)

    taus = {S: restricted_adjoint(g, eps, delta, members) for S, members in forest.partition.items()}
    total = np.sum(list(taus.values()), axis=0) if taus else np.zeros(grid.n)
    scale = max(1.0, float(np.max(np.abs(full))))
    decomposition_error = float(np.max(np.abs(total - full))) / scale

    layers: dict[int, dict[IntervalId, np.ndarray]] = {}
    layer_error = 0.0
    for S, tau in taus.items():
        wS = w.average(S.left)
        nz = np.flatnonzero(tau)
        n_of = np.array([dyadic_class(abs(tau[i]) / wS) + 1 for i in nz], dtype=int)
        rebuilt = np.zeros(grid.n)
        for n in np.unique(n_of):
            X = np.zeros(grid.n)
            idx = nz[n_of == n]
            X[idx] = tau[idx]
            layers.setdefault(int(n), {})[S] = X
            rebuilt += X
        layer_error = max(layer_error, float(np.max(np.abs(rebuilt - tau), initial=0.0)))

    chain_layers = 0.0
    chain_split = 0.0
    layer_rows = []
    for n in sorted(layers):
        pieces = layers[n]
        summed = norm(np.sum(list(pieces.values()), axis=0))
        split_pq = sum(norm(X) ** q for X in pieces.values())
        chain_layers += summed
        chain_split += split_pq ** (1 / q)
        weight_sum = sum(w.average(S.left) ** q * sigma.measure(S.right) for S in pieces)
        layer_rows.append({"n": n, "pieces": len(pieces), "norm_of_sum": summed,
                           "sum_of_pth_powers": split_pq, "weighted_stopping_sum": weight_sum})

    chain_norm = norm(full)
    lhs = chain_norm ** q
    A = ainf_plus(w)
    rhs = 2.0 ** (a * (q - 1)) * A * w.measure(I0)
    carleson = sum(w.average(S.left) * S.right.length for S in forest.stopping)
    return ETaReport(
        a=a, p=p, slice_size=len(K), forest_shape=forest.shape(),
        lhs=lhs, rhs=rhs, ratio=lhs / rhs, ainf_plus=A,
        decomposition_error=decomposition_error, layer_error=layer_error,
        chain_norm=chain_norm, chain_layers=chain_layers, chain_split=chain_split,
        triangle_ok=chain_norm <= chain_layers * (1 + 1e-12) + 1e-300,
        n_p=threshold_np(C_p), layers=layer_rows,
        carleson_sum=carleson, carleson_ratio=carleson / (A * w.measure(I0)),
        invariants=corona_invariants(w, K, forest),
    )
