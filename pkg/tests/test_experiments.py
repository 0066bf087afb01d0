import csv
import json

import numpy as np
import pytest

from onesided import ConfigError, ResourceLimitError, SignPattern, Weight, WeightFamilySpec, generate_weight
from onesided.cli import main
from onesided.dyadic import loads_function
from onesided.experiments import (
    ExperimentConfig,
    a2t_rhs,
    ascend_signs,
    check_rows,
    compute_row,
    loglog_slope,
    parse_config,
    probe_weighted_maximal,
    run_search,
    run_sweep,
    summarize,
)
from onesided.norms import op_norm_l2, op_norm_svd


def test_parse_config_with_comments():
    text = """
    # sweep the decreasing power family
    depth = 8
    p=2   # exact norms
    weight=power
    values=-0.9:-0.1:3
    verify=true
    """
    cfg = parse_config(text)
    assert cfg.depth == 8 and cfg.verify is True
    assert cfg.sweep_values() == pytest.approx([-0.9, -0.5, -0.1])


def test_parse_config_reports_line_numbers():
    with pytest.raises(ConfigError, match=r"cfg:3: unknown key 'colour'"):
        parse_config("depth=6\n\ncolour=red\n", "cfg")
    with pytest.raises(ConfigError, match=r"cfg:1: cannot parse depth"):
        parse_config("depth=deep\n", "cfg")
    with pytest.raises(ConfigError, match="expected key=value"):
        parse_config("depth\n", "cfg")
    with pytest.raises(ConfigError):
        parse_config("signs=sometimes\n")


def test_sweep_values_forms():
    cfg = ExperimentConfig(values="0.1, 0.2,0.3", sweep="theta")
    assert cfg.sweep_values() == [0.1, 0.2, 0.3]
    assert ExperimentConfig(values="none").sweep_values() == []
    assert ExperimentConfig(alpha=-0.3).sweep_values() == [-0.3]
    assert ExperimentConfig(values="1,2", sweep="weight_seed").sweep_values() == [1, 2]
    with pytest.raises(ConfigError):
        ExperimentConfig(values="a:b:c")


def test_ascent_never_decreases_the_norm():
    w = generate_weight(WeightFamilySpec(kind="cascade", theta=0.7, seed=2, depth=7))
    sigma = w.dual()
    eps0 = SignPattern.random(w.grid, np.random.default_rng(0))
    eps, history = ascend_signs(eps0, w, sigma)
    assert all(b >= a * (1 - 1e-9) for a, b in zip(history, history[1:]))
    assert history[-1] == pytest.approx(op_norm_svd(eps, w, sigma), rel=1e-7)


def test_constant_family_rows(tmp_path):
    cfg = ExperimentConfig(depth=6, weight="constant", values="-0.5,-0.2", out=str(tmp_path))
    rows, summary = run_sweep(cfg)
    for r in rows:
        assert r.ap_plus == pytest.approx(1.0)
        assert r.op_norm == pytest.approx(1.0, abs=1e-8)
        assert r.ratio == pytest.approx(1.0 / r.bound_rhs, rel=1e-8)
    assert summary["slope"] is None


def test_sweep_outputs(tmp_path):
    cfg = ExperimentConfig(depth=7, values="-0.8:-0.2:4", signs="random", verify=True, out=str(tmp_path))
    rows, summary = run_sweep(cfg, check=True)
    with open(tmp_path / "results.csv", newline="") as fh:
        table = list(csv.DictReader(fh))
    assert len(table) == 4 and float(table[2]["ratio"]) == rows[2].ratio
    lines = (tmp_path / "records.jsonl").read_text().splitlines()
    assert [json.loads(ln)["index"] for ln in lines] == [0, 1, 2, 3]
    saved = json.loads((tmp_path / "summary.json").read_text())
    assert saved["max_ratio"] == max(r.ratio for r in rows)
    assert saved["verify"]["mismatches"] == [] and len(saved["verify"]["checked"]) == 1
    assert "check" in summary
    for r in rows:
        assert r.bound_rhs > 0 and np.isfinite(r.ratio)


def test_rows_are_recomputable():
    cfg = ExperimentConfig(depth=6, values="-0.7,-0.3", signs="random", seed=5)
    a = compute_row((cfg, 1, -0.3))
    b = compute_row((cfg, 1, -0.3))
    assert a == b


def test_sweep_row_contents():
    cfg = ExperimentConfig(depth=6, signs="all_plus")
    row = compute_row((cfg, 0, -0.5))
    w = generate_weight(cfg.weight_spec(-0.5))
    assert row.op_norm == pytest.approx(op_norm_l2(SignPattern.full(w.grid), w))
    assert row.bound_rhs == pytest.approx(a2t_rhs(w, w.dual()))
    assert row.weak_norm_estimate <= row.op_norm * (1 + 1e-9)


def test_check_flags_bad_slopes():
    cfg = ExperimentConfig(depth=6, values="-0.8,-0.2", weak_estimate=False)
    rows = [compute_row((cfg, i, v)) for i, v in enumerate(cfg.sweep_values())]
    summary = summarize(rows)
    summary["slope"] = 0.3
    assert check_rows(rows, summary, None)


def test_loglog_slope():
    x = np.array([1.0, 10.0, 100.0])
    assert loglog_slope(x, x ** 0.5) == pytest.approx(0.5)
    assert loglog_slope([2.0, 2.0], [1.0, 3.0]) is None


def test_depth_guard(tmp_path):
    with pytest.raises(ResourceLimitError):
        run_sweep(ExperimentConfig(depth=13, out=str(tmp_path)))


def test_search_budget_zero_is_initial_point(tmp_path):
    cfg = ExperimentConfig(depth=6, weight="cascade", theta=0.4, budget=0, out=str(tmp_path))
    res = run_search(cfg)
    assert res.iterations == 0 and res.budget_exhausted
    assert len(res.trajectory) == 1
    assert res.best_theta == 0.4


def test_search_with_unit_weight_is_flat(tmp_path):
    cfg = ExperimentConfig(depth=6, weight="constant", search_weights=False, budget=5, out=str(tmp_path))
    res = run_search(cfg)
    one = Weight.uniform(generate_weight(cfg.weight_spec()).grid)
    assert res.best_ratio == pytest.approx(1.0 / a2t_rhs(one, one), rel=1e-8)
    assert all(row["ratio"] == pytest.approx(res.best_ratio, rel=1e-8) for row in res.trajectory)


def test_search_witness_is_serialized(tmp_path):
    cfg = ExperimentConfig(depth=5, weight="cascade", budget=6, seed=3, out=str(tmp_path))
    res = run_search(cfg)
    w = Weight(loads_function(res.weight_text))
    eps = SignPattern(w.grid, np.array(res.signs))
    assert op_norm_l2(eps, w) / a2t_rhs(w, w.dual()) == pytest.approx(res.best_ratio, rel=1e-8)
    assert max(row["best_ratio"] for row in res.trajectory) == res.best_ratio
    assert (tmp_path / "trajectory.jsonl").exists()


def test_search_needs_p2(tmp_path):
    with pytest.raises(ConfigError):
        run_search(ExperimentConfig(p=3.0, out=str(tmp_path)))


def test_probe_rows_and_label(tmp_path):
    cfg = ExperimentConfig(depth=6, weight="cascade", sweep="theta", values="0,0.5", out=str(tmp_path))
    report = probe_weighted_maximal(cfg)
    assert report["label"] == "evidence, not proof"
    assert len(report["rows"]) == 2
    # mu = 1 reduces to the unweighted one-sided maximal function
    assert report["rows"][0]["weak_l1"] == pytest.approx(2 - 2.0 ** (1 - cfg.depth))


def test_probe_empty_family(tmp_path):
    report = probe_weighted_maximal(ExperimentConfig(values="none", out=str(tmp_path)))
    assert report["rows"] == [] and report["max_weak_l1"] is None


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("depth=6\nnope=1\n")
    assert main(["sweep", "--config", str(bad)]) == 2
    assert "bad.cfg:2" in capsys.readouterr().err
    assert main(["sweep", "--depth", "13", "--out", str(tmp_path)]) == 3
    assert main(["characteristic", "--depth", "5"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["ap_plus"] >= 1.0
    # increasing-weight rows have a sizeable negative slope, which --check rejects
    args = ["sweep", "--depth", "8", "--out", str(tmp_path / "s"), "--check",
            "--set", "values=-0.95,-0.05", "--set", "orientation=increasing", "--set", "weak_estimate=false"]
    code = main(args)
    summary = json.loads((tmp_path / "s" / "summary.json").read_text())
    assert code == (0 if summary["check"]["passed"] else 4)


@pytest.mark.parametrize("command", ["norm", "testing", "corona", "distribution", "probe-maximal"])
def test_cli_subcommands_run(command, tmp_path, capsys):
    args = [command, "--depth", "6", "--out", str(tmp_path), "--set", "weight=cascade"]
    assert main(args) == 0
    assert json.loads(capsys.readouterr().out)


def test_cli_search(tmp_path, capsys):
    assert main(["search", "--depth", "5", "--out", str(tmp_path), "--set", "budget=3",
                 "--set", "weight=cascade"]) == 0
    assert "best_ratio" in json.loads(capsys.readouterr().out)


def test_threaded_sweep_matches_serial(tmp_path):
    base = ExperimentConfig(depth=6, values="-0.8:-0.2:3", signs="random", weak_estimate=False)
    serial, _ = run_sweep(base.replace(out=str(tmp_path / "a")))
    pooled, _ = run_sweep(base.replace(out=str(tmp_path / "b"), threads=2))
    assert serial == pooled
