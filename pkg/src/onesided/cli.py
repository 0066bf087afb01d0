"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 resource guard, 4 check violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import corona
from .characteristics import a1_minus, a1_plus, ainf_minus, ainf_plus, ap_minus, ap_plus, generate_weight
from .dyadic import IntervalId
from .errors import ConfigError, DomainError, PreconditionError, ResourceLimitError
from .experiments import (
    ExperimentConfig,
    ascend_signs,
    load_config,
    parse_assignments,
    probe_weighted_maximal,
    run_search,
    run_sweep,
)
from .norms import maximal_weak_testing_report, ntv_testing, op_norm_l2_result
from .operators import SignPattern

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE, EXIT_CHECK = 0, 2, 3, 4


def _emit(obj, out: str | None, name: str):
    text = json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n"
    sys.stdout.write(text)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / name).write_text(text)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, (set, tuple)):
        return list(x)
    raise TypeError(f"not serializable: {type(x).__name__}")


def build_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    flags = {k: getattr(args, k) for k in ("depth", "p", "seed", "out", "threads", "mode")
             if getattr(args, k) is not None}
    config = config.replace(**flags)
    if args.set:
        config = config.replace(**parse_assignments(list(enumerate(args.set, start=1)), "--set"))
    return config


def _signs(config: ExperimentConfig, grid) -> SignPattern:
    if config.signs == "random":
        return SignPattern.random(grid, np.random.default_rng(config.seed))
    return SignPattern.full(grid)


def _I0(config: ExperimentConfig) -> IntervalId:
    return IntervalId(config.level, config.index)


def cmd_characteristic(config, args) -> int:
    w = generate_weight(config.weight_spec())
    m = config.mode
    sigma = w.dual()
    _emit({
        "weight": config.weight_spec().to_text(),
        "mode": m,
        "ap_plus": ap_plus(w, m),
        "ap_minus": ap_minus(w, m),
        "a1_plus": a1_plus(w, m),
        "a1_minus": a1_minus(w, m),
        "ainf_plus": ainf_plus(w, m),
        "ainf_minus": ainf_minus(w, m),
        "ainf_minus_of_sigma": ainf_minus(sigma, m),
    }, args.out, "characteristic.json")
    return EXIT_OK


def cmd_norm(config, args) -> int:
    if config.p != 2:
        raise ConfigError("exact operator norms are only available at p=2")
    w = generate_weight(config.weight_spec())
    sigma = w.dual()
    eps = _signs(config, w.grid)
    if config.signs == "search":
        eps, _ = ascend_signs(eps, w, sigma)
    res = op_norm_l2_result(eps, w, sigma)
    _emit({"weight": config.weight_spec().to_text(), "signs": config.signs, "op_norm": res.value,
           "iterations": res.iterations, "residual": res.residual}, args.out, "norm.json")
    return EXIT_OK


def cmd_testing(config, args) -> int:
    w = generate_weight(config.weight_spec())
    sigma = w.dual()
    eps = _signs(config, w.grid)
    report = {"weight": config.weight_spec().to_text(),
              "maximal_weak": maximal_weak_testing_report(w, sigma, config.p, config.family_size,
                                                          config.seed).to_dict()}
    if config.p == 2:
        report["ntv"] = ntv_testing(eps, w, sigma).to_dict()
    _emit(report, args.out, "testing.json")
    return EXIT_OK


def cmd_corona(config, args) -> int:
    w = generate_weight(config.weight_spec())
    sigma = w.dual()
    I0 = _I0(config)
    sizes = corona.populated_slices(w, sigma, I0, config.p, enforce_w_bound=True)
    slices = {}
    for a in sizes:
        K = corona.slice_ka(w, sigma, corona.SliceSpec(I0, a, config.p, True))
        forest = corona.build_corona(w, K, I0)
        slices[str(a)] = {"size": len(K), "forest": forest.shape(),
                          "invariants": corona.corona_invariants(w, K, forest),
                          "bands": {str(b): len(Kb) for b, Kb in corona.split_bands(w, K, I0).items()}}
    _emit({"weight": config.weight_spec().to_text(), "I0": list(I0), "slices": slices},
          args.out, "corona.json")
    return EXIT_OK


def cmd_distribution(config, args) -> int:
    w = generate_weight(config.weight_spec())
    sigma = w.dual()
    I0 = _I0(config)
    a = corona.top_populated_slice(w, sigma, I0, config.p)
    K = corona.slice_ka(w, sigma, corona.SliceSpec(I0, a, config.p, True))
    eps = _signs(config, w.grid)
    prof = corona.distribution_profile(eps, None, w, sigma, K, I0, p=config.p, scale=config.scale)
    _emit({"weight": config.weight_spec().to_text(), "a": a, "slice_size": len(K),
           "profile": prof.to_dict()}, args.out, "distribution.json")
    return EXIT_OK


def cmd_sweep(config, args) -> int:
    _, summary = run_sweep(config, check=args.check)
    _emit(summary, None, "")
    if args.check and not summary["check"]["passed"]:
        return EXIT_CHECK
    return EXIT_OK


def cmd_search(config, args) -> int:
    result = run_search(config)
    record = result.to_dict()
    record.pop("trajectory")
    record.pop("signs")
    record.pop("weight_text")
    _emit(record, None, "")
    return EXIT_OK


def cmd_probe(config, args) -> int:
    report = probe_weighted_maximal(config)
    _emit(report, None, "")
    return EXIT_OK


COMMANDS = {
    "characteristic": cmd_characteristic,
    "norm": cmd_norm,
    "testing": cmd_testing,
    "corona": cmd_corona,
    "distribution": cmd_distribution,
    "sweep": cmd_sweep,
    "search": cmd_search,
    "probe-maximal": cmd_probe,
}


HELP = {
    "characteristic": "one-sided weight characteristics of the configured weight",
    "norm": "two-weight L^2 norm of the transform",
    "testing": "indicator testing constants for the transform and the maximal function",
    "corona": "stopping-time decomposition checks on the top populated slice",
    "distribution": "level-set measures of the restricted adjoint",
    "sweep": "tabulate norms and characteristics across a weight family",
    "search": "search signs and cascade weights for large norm ratios",
    "probe-maximal": "weak-type constants of the weighted one-sided maximal function",
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onesided", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--depth", type=int)
    common.add_argument("--p", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int)
    common.add_argument("--mode", choices=("dyadic", "sliding"))
    common.add_argument("--check", action="store_true", help="exit 4 on acceptance violations")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        config = build_config(args)
        return COMMANDS[args.command](config, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceLimitError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (DomainError, PreconditionError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
