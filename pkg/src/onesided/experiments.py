"""Experiment configs, parameter sweeps, extremal search and the weighted
maximal probe.

Everything here is deterministic given a config: each task draws from its own
RNG stream seeded by ``(seed, task index)`` and results are aggregated in task
order, so single-threaded reruns reproduce every output byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .characteristics import (
    WeightFamilySpec,
    ainf_minus,
    ainf_plus,
    ap_plus,
    cascade_signs,
    cascade_values,
    generate_weight,
)
from .dyadic import DyadicGrid, GridFunction, Weight, dumps_function
from .errors import ConfigError, ResourceLimitError
from .norms import (
    indicator_family,
    lp_norm,
    op_norm_l2_result,
    random_nonnegative_family,
    weak_lp_norm,
)
from .operators import SignPattern, max_plus_weighted, transform

MAX_EXPERIMENT_DEPTH = 12
SIGN_POLICIES = ("all_plus", "random", "search")
SWEEP_PARAMS = ("alpha", "theta", "weight_seed")
VERIFY_FRACTION = 0.05
VERIFY_TOL = 1e-10
SLOPE_BAND = (-0.1, 0.05)


# --- config -------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    depth: int = 10
    p: float = 2.0
    seed: int = 0
    weight: str = "power"
    alpha: float = -0.5
    theta: float = 0.5
    orientation: str = "decreasing"
    weight_seed: int = 0
    sweep: str = "alpha"
    values: str = ""
    signs: str = "all_plus"
    out: str = "results"
    threads: int = 1
    mode: str = "dyadic"
    verify: bool = False
    budget: int = 200
    restarts: int = 1
    family_size: int = 0
    weak_estimate: bool = True
    search_weights: bool = True
    level: int = 0
    index: int = 0
    scale: float = 1.0

    def __post_init__(self):
        if self.signs not in SIGN_POLICIES:
            raise ConfigError(f"signs must be one of {SIGN_POLICIES}, got {self.signs!r}")
        if self.sweep not in SWEEP_PARAMS:
            raise ConfigError(f"sweep must be one of {SWEEP_PARAMS}, got {self.sweep!r}")
        if self.mode not in ("dyadic", "sliding"):
            raise ConfigError(f"mode must be 'dyadic' or 'sliding', got {self.mode!r}")
        if self.threads < 1 or self.budget < 0 or self.restarts < 1 or self.family_size < 0:
            raise ConfigError("threads and restarts must be >= 1; budget and family_size >= 0")
        if not self.p > 1:
            raise ConfigError(f"p must exceed 1, got {self.p}")
        self.sweep_values()  # surface malformed ranges early

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig(**{**asdict(self), **changes})

    def sweep_values(self) -> list:
        """Parameter values: ``lo:hi:count`` (inclusive linspace), a comma list or ``none``."""
        text = self.values.strip()
        if not text:
            return [getattr(self, self.sweep)]
        if text.lower() == "none":
            return []
        try:
            if ":" in text:
                lo, hi, count = text.split(":")
                vals = [float(v) for v in np.linspace(float(lo), float(hi), int(count))]
            else:
                vals = [float(v) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"cannot parse values={text!r}") from exc
        if self.sweep == "weight_seed":
            return [int(v) for v in vals]
        return vals

    def weight_spec(self, value=None) -> WeightFamilySpec:
        spec = WeightFamilySpec(kind=self.weight, alpha=self.alpha, orientation=self.orientation,
                                theta=self.theta, seed=self.weight_seed, depth=self.depth, p=self.p)
        if value is None:
            return spec
        key = "seed" if self.sweep == "weight_seed" else self.sweep
        return spec.replace(**{key: value})


_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def _coerce(name: str, kind: str, raw: str, where: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {name}={raw!r} as {kind}") from None
    return raw


_FIELD_TYPES = {f.name: f.type if isinstance(f.type, str) else f.type.__name__
                for f in fields(ExperimentConfig)}


def parse_assignments(pairs, source: str = "<args>") -> dict:
    """Turn ``key=value`` strings into typed config entries."""
    out = {}
    for lineno, raw in pairs:
        where = f"{source}:{lineno}"
        if "=" not in raw:
            raise ConfigError(f"{where}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in raw.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{where}: unknown key {key!r}")
        out[key] = _coerce(key, _FIELD_TYPES[key], value, where)
    return out


def parse_config(text: str, source: str = "<config>", base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment, unknown keys are errors."""
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if line:
            pairs.append((lineno, line))
    entries = parse_assignments(pairs, source)
    base = base or ExperimentConfig()
    return base.replace(**entries)


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path), base)


def _guard_depth(depth: int):
    if depth > MAX_EXPERIMENT_DEPTH:
        raise ResourceLimitError(f"depth {depth} exceeds the experiment limit {MAX_EXPERIMENT_DEPTH}")


def _map(fn, tasks, threads: int):
    """Ordered map, in a process pool when ``threads > 1``."""
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=True)


# --- sign ascent ----------------------------------------------------------------

def _haar_levels(values: np.ndarray, depth: int) -> list[np.ndarray]:
    """``<F, h_J>`` for every ``J`` of each level ``0..depth-1``."""
    dx = 2.0 ** -depth
    out = []
    for level in range(depth):
        m = 1 << level
        halves = values.reshape(2 * m, -1).sum(axis=1).reshape(m, 2) * dx
        out.append((halves[:, 1] - halves[:, 0]) * 2.0 ** (level / 2))
    return out


def pairing_contributions(F: np.ndarray, G: np.ndarray, depth: int) -> np.ndarray:
    """``<F, h_{I+}> <G, h_{I-}>`` for every coefficient slot, heap ordered."""
    hf = _haar_levels(F, depth)
    hg = _haar_levels(G, depth)
    return np.concatenate([hf[level + 1][1::2] * hg[level + 1][0::2] for level in range(depth - 1)])


def ascend_signs(eps: SignPattern, w: Weight, sigma: Weight, max_rounds: int = 20):
    """Sign flips guided by the top singular pair until the pattern is stable.

    With ``u, v`` the current singular pair, choosing ``eps_I`` as the sign of
    ``<F, h_{I+}> <G, h_{I-}>`` can only raise ``u^T A v``, so the norm never
    decreases.  Returns the final pattern and the norm after each round.
    """
    grid = eps.grid
    dx = grid.width
    res = op_norm_l2_result(eps, w, sigma)
    history = [res.value]
    for _ in range(max_rounds):
        F = np.sqrt(sigma.values / dx) * res.right_vector
        G = np.sqrt(w.values / dx) * res.left_vector
        c = pairing_contributions(F, G, grid.depth)
        new = np.where(c > 0, 1.0, np.where(c < 0, -1.0, eps.coeffs))
        if np.array_equal(new, eps.coeffs):
            break
        eps = SignPattern(grid, new)
        res = op_norm_l2_result(eps, w, sigma, x0=res.right_vector)
        history.append(res.value)
    return eps, history


def a2t_rhs(w: Weight, sigma: Weight) -> float:
    """``([w]_{A_2^+} max{[sigma]_{A_inf^-}, [w]_{A_inf^+}})^(1/2)``."""
    return math.sqrt(ap_plus(w) * max(ainf_minus(sigma), ainf_plus(w)))


# --- sweep ----------------------------------------------------------------------

@dataclass
class SweepRow:
    index: int
    param: str
    value: float
    ap_plus: float
    ainf_plus: float
    ainf_minus_of_sigma: float
    op_norm: float | None
    weak_norm_estimate: float | None
    bound_rhs: float
    weak_rhs: float
    ratio: float
    weak_ratio: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def weak_transform_estimate(eps: SignPattern, w: Weight) -> float:
    """Lower bound for ``||T||_{L^p(w) -> L^{p,inf}(w)}`` over indicators ``1_{I+}``."""
    best = 0.0
    for label, f in indicator_family(w.grid):
        rep = weak_lp_norm(transform(f, eps), w, w.p, label)
        best = max(best, rep.value / lp_norm(f, w, w.p))
    return best


def _row_signs(config: ExperimentConfig, grid: DyadicGrid, index: int, w: Weight, sigma: Weight) -> SignPattern:
    if config.signs == "random":
        return SignPattern.random(grid, np.random.default_rng([config.seed, index]))
    eps = SignPattern.full(grid)
    if config.signs == "search" and config.p == 2:
        eps, _ = ascend_signs(eps, w, sigma)
    return eps


def compute_row(task: tuple[ExperimentConfig, int, float]) -> SweepRow:
    """One sweep row; depends only on the config, the row index and the value."""
    config, index, value = task
    w = generate_weight(config.weight_spec(value))
    sigma = w.dual()
    grid = w.grid
    A = ap_plus(w, config.mode)
    ai_w = ainf_plus(w)
    ai_s = ainf_minus(sigma)
    eps = _row_signs(config, grid, index, w, sigma)
    bound = math.sqrt(A * max(ai_s, ai_w))
    weak_rhs = A ** (1 / w.p) * ai_w ** (1 / w.p_dual)
    op = op_norm_l2_result(eps, w, sigma).value if config.p == 2 else None
    weak = weak_transform_estimate(eps, w) if config.weak_estimate else None
    weak_ratio = None if weak is None else weak / weak_rhs
    ratio = op / bound if op is not None else (weak_ratio if weak_ratio is not None else float("nan"))
    return SweepRow(index, config.sweep, value, A, ai_w, ai_s, op, weak, bound, weak_rhs, ratio, weak_ratio)


def loglog_slope(x, y) -> float | None:
    """Least-squares slope of ``log y`` against ``log x``; ``None`` if undetermined."""
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    if x.size < 2 or np.ptp(x) == 0:
        return None
    return float(np.polyfit(x, y, 1)[0])


def _rows_match(a: SweepRow, b: SweepRow, tol: float) -> bool:
    for (ka, va), (_, vb) in zip(a.to_dict().items(), b.to_dict().items()):
        if isinstance(va, float) and isinstance(vb, float):
            if not abs(va - vb) <= tol * max(1.0, abs(va)):
                return False
        elif va != vb:
            return False
    return True


def verify_rows(config: ExperimentConfig, rows: list[SweepRow]) -> dict:
    """Recompute a seeded 5% sample of rows from their parameters alone."""
    if not rows:
        return {"checked": [], "mismatches": [], "tolerance": VERIFY_TOL}
    k = max(1, math.ceil(VERIFY_FRACTION * len(rows)))
    rng = np.random.default_rng([config.seed, len(rows)])
    picked = sorted(int(i) for i in rng.choice(len(rows), size=k, replace=False))
    bad = [i for i in picked if not _rows_match(rows[i], compute_row((config, i, rows[i].value)), VERIFY_TOL)]
    return {"checked": picked, "mismatches": bad, "tolerance": VERIFY_TOL}


def summarize(rows: list[SweepRow]) -> dict:
    if not rows:
        return {"rows": 0}
    ratios = [r.ratio for r in rows]
    best = int(np.argmax(ratios))
    aps = [r.ap_plus for r in rows]
    out = {
        "rows": len(rows),
        "max_ratio": max(ratios),
        "argmax_value": rows[best].value,
        "slope": loglog_slope(aps, ratios),
        "ap_plus_span_decades": float(np.log10(max(aps) / min(aps))),
    }
    weak = [r.weak_ratio for r in rows if r.weak_ratio is not None]
    if weak:
        out["max_weak_ratio"] = max(weak)
        out["weak_slope"] = loglog_slope([r.ap_plus for r in rows if r.weak_ratio is not None], weak)
    return out


def check_rows(rows: list[SweepRow], summary: dict, verification: dict | None) -> list[str]:
    """Acceptance-style violations of a sweep (empty means pass)."""
    problems = []
    for r in rows:
        if not (r.bound_rhs > 0 and math.isfinite(r.ratio)):
            problems.append(f"row {r.index}: rhs {r.bound_rhs} or ratio {r.ratio} invalid")
    slope = summary.get("slope")
    if slope is not None and not SLOPE_BAND[0] <= slope <= SLOPE_BAND[1]:
        problems.append(f"log-log slope {slope:.4f} outside {list(SLOPE_BAND)}")
    if verification and verification["mismatches"]:
        problems.append(f"recomputed rows differ: {verification['mismatches']}")
    return problems


def write_rows(out: Path, rows: list[SweepRow]):
    out.mkdir(parents=True, exist_ok=True)
    names = [f.name for f in fields(SweepRow)]
    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=names)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v)
                             for k, v in r.to_dict().items()})
    with open(out / "records.jsonl", "w") as fh:
        for r in rows:
            fh.write(_dump(r.to_dict()) + "\n")


def run_sweep(config: ExperimentConfig, check: bool = False) -> tuple[list[SweepRow], dict]:
    """Tabulate characteristics, norms and ratios across the configured family."""
    _guard_depth(config.depth)
    values = config.sweep_values()
    tasks = [(config, i, v) for i, v in enumerate(values)]
    rows = _map(compute_row, tasks, config.threads)
    summary = summarize(rows)
    verification = verify_rows(config, rows) if config.verify else None
    summary["verify"] = verification
    summary["config"] = config.to_dict()
    if check:
        problems = check_rows(rows, summary, verification)
        summary["check"] = {"passed": not problems, "violations": problems}
    out = Path(config.out)
    write_rows(out, rows)
    (out / "summary.json").write_text(_dump(summary) + "\n")
    return rows, summary


# --- extremal search -------------------------------------------------------------

@dataclass
class SearchResult:
    best_ratio: float
    best_ap_plus: float
    best_theta: float | None
    signs: list[float]
    weight_text: str
    iterations: int
    budget_exhausted: bool
    trajectory: list[dict]

    def to_dict(self) -> dict:
        return asdict(self)


def _evaluate(w: Weight, rounds: int) -> tuple[float, float, SignPattern]:
    sigma = w.dual()
    eps, history = ascend_signs(SignPattern.full(w.grid), w, sigma, rounds)
    return history[-1] / a2t_rhs(w, sigma), ap_plus(w), eps


def _search_one(task: tuple[ExperimentConfig, int]) -> SearchResult:
    config, restart = task
    rng = np.random.default_rng([config.seed, restart])
    depth = config.depth
    rounds = 20
    traj: list[dict] = []

    if not config.search_weights:
        w = generate_weight(config.weight_spec())
        sigma = w.dual()
        rhs = a2t_rhs(w, sigma)
        A = ap_plus(w)
        eps, history = ascend_signs(SignPattern.full(w.grid), w, sigma, min(config.budget, rounds))
        for it, s in enumerate(history):
            traj.append({"restart": restart, "iteration": it, "ratio": s / rhs, "ap_plus": A})
        return SearchResult(history[-1] / rhs, A, None, eps.coeffs.tolist(), dumps_function(w.base),
                            len(history) - 1, len(history) - 1 >= config.budget, traj)

    theta = float(config.theta)
    signs = cascade_signs(depth, int(rng.integers(2 ** 31)))

    def weight_of(th, sg):
        return Weight(GridFunction(DyadicGrid(depth), cascade_values(depth, th, sg)), 2.0)

    w = weight_of(theta, signs)
    cur, cur_ap, eps = _evaluate(w, rounds)
    best = (cur, cur_ap, theta, eps, w)
    traj.append({"restart": restart, "iteration": 0, "ratio": cur, "ap_plus": cur_ap,
                 "theta": theta, "accepted": True, "best_ratio": cur})
    t0 = 0.1
    for k in range(1, config.budget + 1):
        if rng.random() < 0.5:
            th, sg = float(np.clip(theta + 0.05 * rng.standard_normal(), 0.0, 0.95)), signs
        else:
            sg = signs.copy()
            sg[int(rng.integers(sg.size))] *= -1
            th = theta
        cand_w = weight_of(th, sg)
        val, val_ap, val_eps = _evaluate(cand_w, rounds)
        temp = t0 * (1.0 - (k - 1) / config.budget) + 1e-3
        delta = math.log(val / cur)
        accepted = delta >= 0 or rng.random() < math.exp(delta / temp)
        if accepted:
            theta, signs, cur = th, sg, val
            if val > best[0]:
                best = (val, val_ap, th, val_eps, cand_w)
        traj.append({"restart": restart, "iteration": k, "ratio": val, "ap_plus": val_ap,
                     "theta": th, "accepted": bool(accepted), "best_ratio": best[0]})
    return SearchResult(best[0], best[1], best[2], best[3].coeffs.tolist(), dumps_function(best[4].base),
                        config.budget, True, traj)


def run_search(config: ExperimentConfig) -> SearchResult:
    """Maximize ``op_norm / rhs`` over sign patterns and (optionally) cascade weights.

    Sign patterns are improved by singular-pair ascent; cascade amplitude and
    signs by seeded annealing.  ``budget`` counts annealing proposals (or
    ascent rounds when weights are fixed); ``budget=0`` returns the initial point.
    """
    _guard_depth(config.depth)
    if config.p != 2:
        raise ConfigError("run_search optimizes the exact L^2 norm and needs p=2")
    results = _map(_search_one, [(config, r) for r in range(config.restarts)], config.threads)
    best = max(results, key=lambda r: r.best_ratio)
    traj = [row for r in results for row in r.trajectory]
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trajectory.jsonl", "w") as fh:
        for row in traj:
            fh.write(_dump(row) + "\n")
    record = best.to_dict()
    record.pop("trajectory")
    record["budget_exhausted"] = all(r.budget_exhausted for r in results)
    with open(out / "records.jsonl", "w") as fh:
        fh.write(_dump(record) + "\n")
    (out / "summary.json").write_text(_dump({"best": record, "config": config.to_dict()}) + "\n")
    return SearchResult(**{**record, "trajectory": traj})


# --- weighted maximal probe ---------------------------------------------------------

def weighted_maximal_weak(mu: Weight, p: float, family_size: int = 0, seed: int = 0) -> dict:
    """Lower bound for ``||M^+_mu||_{L^p(mu) -> L^{p,inf}(mu)}`` with its witness."""
    grid = mu.grid
    best = {"value": 0.0, "witness": ""}
    family = list(indicator_family(grid)) + list(random_nonnegative_family(grid, family_size, seed))
    for label, f in family:
        rep = weak_lp_norm(max_plus_weighted(f, mu), mu, p, label)
        ratio = rep.value / lp_norm(f, mu, p)
        if ratio > best["value"]:
            best = {"value": ratio, "witness": label}
    return best


def _probe_row(task: tuple[ExperimentConfig, int, float]) -> dict:
    config, index, value = task
    mu = generate_weight(config.weight_spec(value))
    row = {"index": index, "param": config.sweep, "value": value, "ainf_plus": ainf_plus(mu)}
    for p in (1, 2):
        est = weighted_maximal_weak(mu, p, config.family_size, config.seed + index)
        row[f"weak_l{p}"] = est["value"]
        row[f"witness_l{p}"] = est["witness"]
    return row


def probe_weighted_maximal(config: ExperimentConfig, values: list | None = None) -> dict:
    """Weak-type constants of ``M^+_mu`` tabulated against ``[mu]_{A_inf^+}``."""
    _guard_depth(config.depth)
    values = config.sweep_values() if values is None else list(values)
    rows = _map(_probe_row, [(config, i, v) for i, v in enumerate(values)], config.threads)
    report = {
        "label": "evidence, not proof",
        "rows": rows,
        "slope_l1_vs_ainf": loglog_slope([r["ainf_plus"] for r in rows], [r["weak_l1"] for r in rows])
        if rows else None,
        "max_weak_l1": max((r["weak_l1"] for r in rows), default=None),
    }
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "records.jsonl", "w") as fh:
        for r in rows:
            fh.write(_dump(r) + "\n")
    (out / "summary.json").write_text(_dump({**report, "config": config.to_dict()}) + "\n")
    return report
