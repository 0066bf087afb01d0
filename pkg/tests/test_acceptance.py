"""Acceptance suite: one test per criterion, each part logged through ``record``."""
import math

import numpy as np
import pytest

from conftest import record
from onesided import (
    DyadicGrid,
    GridFunction,
    IntervalId,
    SignPattern,
    TruncationProfile,
    Weight,
    WeightFamilySpec,
    adjoint_transform,
    ainf_minus,
    ap_minus,
    ap_plus,
    generate_weight,
    linearized_adjoint_restricted,
    linearized_transform,
    maximal_truncation,
    maximal_weak_testing,
    ntv_testing,
    op_norm_l2,
    operator_matrix,
    transform,
    weak_l1_adjoint_probe,
)
from onesided.corona import (
    SliceSpec,
    band_conversion_spread,
    distribution_profile,
    fit_exponential,
    haar_summand_family,
    jn_bootstrap_check,
    jn_minimal_constant,
    populated_slices,
    slice_ka,
    split_bands,
    top_populated_slice,
    verify_eTa_chain,
)
from onesided.experiments import ExperimentConfig, probe_weighted_maximal, run_search, run_sweep

ROOT = IntervalId(0, 0)
POWER_ALPHAS = [round(a, 2) for a in np.linspace(-0.95, -0.05, 10)]
SUITE_SEEDS = range(20)


def _power(alpha, depth=12):
    return generate_weight(WeightFamilySpec(kind="power", alpha=alpha, depth=depth))


def _cascade(seed, depth=10, theta=0.6, p=2.0):
    return generate_weight(WeightFamilySpec(kind="cascade", theta=theta, seed=seed, depth=depth, p=p))


def _random_collection(grid, rng):
    return [I for I in grid.intervals(0, grid.depth - 2) if rng.random() < 0.6]


def test_criterion_01_dense_oracle():
    worst = 0.0
    for depth in range(2, 7):
        rng = np.random.default_rng(100 + depth)
        grid = DyadicGrid(depth)
        for _ in range(100):
            eps = SignPattern.random(grid, rng, zero_prob=0.2)
            delta = TruncationProfile.random(grid, rng)
            K = _random_collection(grid, rng)
            f = rng.standard_normal(grid.n)
            F = GridFunction(grid, f)
            M = operator_matrix(eps)
            MdK = operator_matrix(eps, delta=delta, K=K)
            # partial sums through level l are the constant cutoff 2**-(l+1)
            M_levels = [operator_matrix(eps, delta=TruncationProfile.constant(grid, 2.0 ** -(l + 1)))
                        for l in range(depth - 1)]
            sharp = np.max(np.abs([A @ f for A in M_levels]), axis=0)
            errs = [
                transform(F, eps).values - M @ f,
                adjoint_transform(F, eps).values - M.T @ f,
                linearized_transform(F, eps, delta, K).values - MdK @ f,
                linearized_adjoint_restricted(F, eps, delta, K).values - MdK.T @ f,
                maximal_truncation(F, eps).values - sharp,
            ]
            worst = max(worst, max(float(np.max(np.abs(e))) for e in errs))
    ok = worst <= 1e-12
    record(1, "dense oracle N=2..6", ok, f"max error {worst:.2e}")
    assert ok


def test_criterion_02_adjoint_pairing():
    rng = np.random.default_rng(2)
    grid = DyadicGrid(8)
    worst = 0.0
    for _ in range(100):
        eps = SignPattern.random(grid, rng, zero_prob=0.2)
        delta = TruncationProfile.random(grid, rng)
        K = _random_collection(grid, rng)
        f = GridFunction(grid, rng.standard_normal(grid.n))
        g = GridFunction(grid, rng.standard_normal(grid.n))
        lhs = np.dot(linearized_transform(f, eps, delta, K).values, g.values) * grid.width
        rhs = np.dot(f.values, linearized_adjoint_restricted(g, eps, delta, K).values) * grid.width
        worst = max(worst, abs(lhs - rhs))
    ok = worst <= 1e-12
    record(2, "pairing N=8", ok, f"max gap {worst:.2e}")
    assert ok


def test_criterion_03_unweighted_norm():
    rng = np.random.default_rng(3)
    worst = 0.0
    for depth in range(4, 11):
        grid = DyadicGrid(depth)
        one = Weight.uniform(grid)
        pm = SignPattern.random(grid, rng)
        for eps in (SignPattern.full(grid), SignPattern.full(grid, -1), pm):
            worst = max(worst, abs(op_norm_l2(eps, one) - 1.0))
    ok = worst <= 1e-8
    record(3, "op_norm = 1 for N=4..10", ok, f"max |norm-1| {worst:.2e}")
    assert ok


def _suite_cascades():
    for p in (1.5, 2.0, 3.0):
        for seed in range(200):
            yield p, _cascade(seed, depth=8, theta=0.3 + 0.6 * (seed % 7) / 6, p=p)


def test_criterion_04_duality_identity():
    worst = 0.0
    for p, w in _suite_cascades():
        lhs = ap_plus(w)
        rhs = ap_minus(w.dual()) ** (p - 1)
        worst = max(worst, abs(lhs - rhs) / lhs)
    ok = worst <= 1e-10
    record(4, "600 cascades p in {3/2,2,3}", ok, f"max rel error {worst:.2e}")
    assert ok


def test_criterion_05_sigma_ainf_bound():
    weights = [(p, w) for p, w in _suite_cascades()]
    weights += [(2.0, _power(a, 10)) for a in POWER_ALPHAS]
    weights += [(2.0, _cascade(s)) for s in SUITE_SEEDS]
    worst = 0.0
    violations = 0
    for p, w in weights:
        q = p / (p - 1)
        lhs = ainf_minus(w.dual())
        rhs = ap_plus(w) ** (q - 1)
        worst = max(worst, lhs / rhs)
        violations += lhs > rhs
    ok = violations == 0
    record(5, f"{len(weights)} weights", ok, f"max lhs/rhs {worst:.4f}")
    assert ok


def test_criterion_06_support_identity_and_testing():
    grid = DyadicGrid(6)
    support_ok = True
    eps = SignPattern.full(grid)
    signs = SignPattern.random(grid, np.random.default_rng(6))
    for I in grid.intervals():
        cells = grid.cells(I)
        for c in (1.0, -2.5, 1e6):
            for e in (eps, signs):
                out = transform(grid.indicator(I) * c, e).values[cells]
                support_ok &= not np.any(out)
    record(6, "1_I T(c 1_I) = 0", support_ok)
    one = Weight.uniform(grid)
    rep = ntv_testing(eps, one, one)
    norm = op_norm_l2(eps, one)
    restricted_ok = rep.forward_restricted == 0.0 and abs(norm - 1.0) <= 1e-8
    record(6, "restricted forward testing = 0, norm = 1", restricted_ok,
           f"restricted {rep.forward_restricted}, norm {norm:.10f}")
    global_ok = rep.forward_global >= 0.5
    record(6, "global forward testing >= 0.5", global_ok, f"{rep.forward_global:.4f}")
    assert support_ok and restricted_ok and global_ok


@pytest.fixture(scope="module")
def power_sweep(tmp_path_factory):
    values = ",".join(str(a) for a in POWER_ALPHAS)
    cfg = ExperimentConfig(depth=12, weight="power", values=values, signs="all_plus", weak_estimate=False,
                           out=str(tmp_path_factory.mktemp("sweep")))
    return run_sweep(cfg)


def test_criterion_07_a2t_probe(power_sweep):
    rows, summary = power_sweep
    span = summary["ap_plus_span_decades"]
    span_ok = span >= 2.0
    record(7, "ap_plus spans >= 2 decades", span_ok, f"span {span:.3f} decades")
    slope = summary["slope"]
    slope_ok = slope is not None and -0.1 <= slope <= 0.05
    record(7, "log-log slope in [-0.1, 0.05]", slope_ok, f"slope {slope:.4f}, suite constant {summary['max_ratio']:.4f}")
    assert all(math.isfinite(r.ratio) for r in rows)
    assert span_ok and slope_ok


def test_criterion_08_weak_maximal_band():
    ratios = []
    for a in POWER_ALPHAS:
        w = _power(a)
        ratios.append(maximal_weak_testing(w, w.dual(), 2.0) / math.sqrt(ap_plus(w)))
    c_fit, C_fit = min(ratios), max(ratios)
    ok = c_fit > 0 and C_fit / c_fit <= 20
    record(8, "band C_fit/c_fit <= 20", ok, f"band [{c_fit:.4f}, {C_fit:.4f}], spread {C_fit / c_fit:.3f}")
    assert ok


def _top_slice(w):
    sigma = w.dual()
    a = top_populated_slice(w, sigma, ROOT, 2.0)
    return sigma, a, slice_ka(w, sigma, SliceSpec(ROOT, a, 2.0, True))


def test_criterion_09_distribution():
    big = np.array([1.0, 2.0, 4.0, 8.0])
    small = np.array([0.25, 0.5])
    lams = np.concatenate([small, big])
    rows = []
    for seed in SUITE_SEEDS:
        w = _cascade(seed)
        sigma, _, K = _top_slice(w)
        eps = SignPattern.random(w.grid, np.random.default_rng(seed))
        prof = distribution_profile(eps, None, w, sigma, K, ROOT, scale=1 / 8, lambdas=lams)
        rows.append(prof.normalized)
    P = np.array(rows)
    c_fit, C_fit = fit_exponential(np.tile(big, len(rows)), P[:, 2:].ravel())
    exp_ok = c_fit > 0 and bool(np.all(P[:, 2:] <= C_fit * np.exp(-c_fit * big) * (1 + 1e-12)))
    record(9, "exponential tail lambda in {1,2,4,8}", exp_ok, f"c_fit {c_fit:.4f}, C_fit {C_fit:.4f}")
    C_pow = float(np.max(P[:, :2] / small ** (-4 / 3)))
    pow_ok = bool(np.all(P[:, :2] <= C_pow * small ** (-4 / 3) * (1 + 1e-12)))
    record(9, "power bound lambda in {1/4,1/2}, exponent -4/3", pow_ok, f"C_fit {C_pow:.4f}")
    assert exp_ok and pow_ok


def test_criterion_10_corona_invariants():
    problems = []
    worst_dec = 0.0
    worst_spread = 1.0
    limit = 2 ** (2 / (2 - 1) + 2)
    for seed in SUITE_SEEDS:
        w = _cascade(seed)
        sigma, _, K = _top_slice(w)
        eps = SignPattern.random(w.grid, np.random.default_rng(seed))
        for a in populated_slices(w, sigma, ROOT, 2.0, region="proper"):
            rep = verify_eTa_chain(eps, w, sigma, 2.0, ROOT, a)
            worst_dec = max(worst_dec, rep.decomposition_error)
            if not all(rep.invariants.values()):
                problems.append((seed, a, rep.invariants))
        for B in split_bands(w, K, ROOT).values():
            worst_spread = max(worst_spread, band_conversion_spread(w, sigma, B))
    ok = not problems and worst_dec <= 1e-12 and worst_spread <= limit
    record(10, "partition, growth, decomposition, band spread", ok,
           f"decomposition {worst_dec:.2e}, spread {worst_spread:.3f} <= {limit}, failures {len(problems)}")
    assert ok


def test_criterion_11_jn_bootstrap():
    lambdas = [2.0, 4.0, 8.0, 16.0]
    checked = 0
    failures = []
    worst = [0.0] * len(lambdas)
    for seed in SUITE_SEEDS:
        w = _cascade(seed)
        _, _, K = _top_slice(w)
        eps = SignPattern.random(w.grid, np.random.default_rng(seed))
        w0 = w.average(ROOT.left)
        for b, B in split_bands(w, K, ROOT).items():
            fam = haar_summand_family(eps, w, w.grid.indicator(ROOT), B, unit=2.0 ** (1 - b) * w0)
            C = jn_minimal_constant(fam, ROOT, B)
            rep = jn_bootstrap_check(fam, ROOT, B, C, lambdas=lambdas)
            if not rep.hypothesis_holds:
                continue
            checked += 1
            worst = [max(x, y) for x, y in zip(worst, rep.conclusion_max_ratio)]
            if not rep.conclusion_holds:
                failures.append((seed, b))
    ok = checked > 0 and not failures
    record(11, "conclusion whenever hypothesis holds", ok,
           f"{checked} bands, max measure/bound {max(worst):.3f}, failures {len(failures)}")
    assert ok


def test_criterion_12_weak_l1_adjoint():
    depths = [6, 8, 10]
    consts = [weak_l1_adjoint_probe(depth=N, trials=100, seed=0) for N in depths]
    slope = float(np.polyfit(depths, consts, 1)[0])
    ok = slope <= 0.05 and all(math.isfinite(c) for c in consts)
    record(12, "no upward trend in N", ok,
           f"constants {', '.join(f'{c:.4f}' for c in consts)}, C_fit {max(consts):.4f}, slope {slope:.4f}")
    assert ok


def test_criterion_13_replay(tmp_path):
    runs = {
        "sweep": lambda out: run_sweep(ExperimentConfig(depth=7, values="-0.8:-0.2:3", signs="random",
                                                        out=out)),
        "search": lambda out: run_search(ExperimentConfig(depth=5, weight="cascade", budget=8, seed=2, out=out)),
        "probe": lambda out: probe_weighted_maximal(ExperimentConfig(depth=6, weight="cascade", sweep="theta",
                                                                     values="0,0.5", out=out)),
    }
    same = {}
    for name, run in runs.items():
        blobs = []
        for k in range(2):
            out = tmp_path / f"{name}{k}"
            run(str(out))
            blobs.append((out / "records.jsonl").read_bytes())
        same[name] = blobs[0] == blobs[1] and len(blobs[0]) > 0
    ok = all(same.values())
    record(13, "byte-identical records.jsonl", ok, ", ".join(f"{k} {'same' if v else 'differs'}" for k, v in same.items()))
    assert ok

