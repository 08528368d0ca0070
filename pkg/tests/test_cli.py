import json

import numpy as np
import pandas as pd
import pytest

from drcate.cli import analyze_dataset, main, read_config, resolve
from drcate.dataset import Schema, load_csv
from drcate.pipeline import MethodSettings
from drcate.simlab import ScenarioConfig, gen_scenario

FAST = ["--draws", "40", "--burnin", "40", "--resamples", "30"]


def read(path):
    return pd.read_csv(path, comment="#", float_precision="round_trip")


def write_scenario_csv(path, n=150, seed=3, scenario="linear"):
    ds, _ = gen_scenario(ScenarioConfig(scenario, n=n, replicates=2, seed=seed), 0)
    frame = pd.DataFrame(ds.x, columns=ds.x_names)
    frame.insert(0, "T", ds.t)
    frame.insert(0, "Y", ds.y)
    frame.to_csv(path, index=False, float_format="%.17g")
    return ds


def analyze_args(data, out, *extra):
    return ["analyze", "--data", str(data), "--outcome", "Y", "--treatment", "T",
            "--confounders", ",".join(f"X{j}" for j in range(1, 11)),
            "--out", str(out), *FAST, *extra]


@pytest.fixture(scope="module")
def sim_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    code = main(["simulate", "--scenario", "linear", "--n", "200", "--replicates", "4",
                 "--seed", "1", "--out", str(out), *FAST])
    return code, out


def test_simulate_smoke(sim_run):
    code, out = sim_run
    assert code == 0
    records, report = read(out / "records.csv"), read(out / "report.csv")
    assert len(records) == 4 * 100
    assert {"rmse", "scaled_rmse", "se_ratio", "coverage"} <= set(report.metric)
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {"records.csv", "report.csv", "failures.csv"}


def test_simulate_rerun_is_byte_identical(sim_run, tmp_path):
    _, first = sim_run
    assert main(["simulate", "--scenario", "linear", "--n", "200", "--replicates", "4",
                 "--seed", "1", "--out", str(tmp_path), *FAST]) == 0
    for name in ("records.csv", "report.csv", "failures.csv", "manifest.json"):
        assert (first / name).read_bytes() == (tmp_path / name).read_bytes()


def test_rerun_from_output_header(sim_run, tmp_path):
    _, first = sim_run
    assert main(["simulate", "--config", str(first / "report.csv"), "--out",
                 str(tmp_path)]) == 0
    assert (first / "report.csv").read_bytes() == (tmp_path / "report.csv").read_bytes()


def test_too_few_replicates_is_usage_error(tmp_path, capsys):
    assert main(["simulate", "--replicates", "1", "--out", str(tmp_path)]) == 1
    assert "replicates" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["simulate", "--scenario", "cubic"],
                                  ["simulate", "--draws", "1"],
                                  ["simulate", "--level", "1.5"],
                                  ["simulate", "--bogus", "3"],
                                  ["analyze", "--query", "random"]])
def test_usage_errors(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == 1


def test_too_many_failures_exit_code(tmp_path, capsys):
    code = main(["simulate", "--n", "60", "--replicates", "3", "--methods", "DR-External",
                 "--out", str(tmp_path), *FAST])
    assert code == 3
    assert "DR-External" in capsys.readouterr().err
    assert len(read(tmp_path / "failures.csv")) == 3


def test_config_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# a comment\nseed = 5\ndraws = 60\nscenario=nonlinear\n")
    s, _ = resolve("simulate", {"seed": "9"}, cfg)
    assert (s["seed"], s["draws"], s["scenario"], s["resamples"]) == (9, 60, "nonlinear", 250)
    cfg.write_text("colour=blue\n")
    with pytest.raises(Exception, match="colour"):
        resolve("simulate", {}, cfg)


def test_config_reader_stops_at_csv_body(tmp_path):
    f = tmp_path / "out.csv"
    f.write_text("# seed=4\n# note: free text\na,b\n1,2\n")
    assert read_config(f) == {"seed": "4"}


def test_analyze_matches_in_process_pipeline(tmp_path):
    data = tmp_path / "data.csv"
    write_scenario_csv(data)
    assert main(analyze_args(data, tmp_path / "out", "--seed", "11", "--export-zbar")) == 0
    got = read(tmp_path / "out" / "cate_DR-Linear.csv")
    names = [f"X{j}" for j in range(1, 11)]
    ds = load_csv(data, Schema("Y", ("T",), names))
    res = analyze_dataset(ds, "DR-Linear", MethodSettings(draws=40, burnin=40, resamples=30), 11)
    np.testing.assert_allclose(got.estimate, res.interval.point, rtol=0, atol=1e-12)
    np.testing.assert_allclose(got.se, res.interval.se, rtol=0, atol=1e-12)
    assert sorted(got.sorted_index) == list(range(ds.n))
    assert np.all(np.diff(got.estimate.to_numpy()[np.argsort(got.sorted_index)]) >= 0)
    zbar = read(tmp_path / "out" / "zbar_DR-Linear.csv")
    np.testing.assert_allclose(zbar.z_bar, res.z_bar, atol=1e-12)


def test_analyze_at_query_file(tmp_path):
    data = tmp_path / "data.csv"
    write_scenario_csv(data)
    q = pd.DataFrame(np.zeros((3, 10)), columns=[f"X{j}" for j in range(1, 11)])
    q.to_csv(tmp_path / "q.csv", index=False)
    assert main(analyze_args(data, tmp_path / "out", "--query", "file", "--query-file",
                             str(tmp_path / "q.csv"))) == 0
    got = read(tmp_path / "out" / "cate_DR-Linear.csv")
    assert len(got) == 3 and np.ptp(got.estimate) == 0


def test_analyze_dichotomizes_three_exposures(tmp_path):
    rng = np.random.default_rng(4)
    n = 120
    e = rng.standard_normal((n, 3))
    x = rng.standard_normal((n, 2))
    frame = pd.DataFrame({"Y": rng.standard_normal(n), "E1": e[:, 0], "E2": e[:, 1],
                          "E3": e[:, 2], "X1": x[:, 0], "X2": x[:, 1]})
    frame.to_csv(tmp_path / "d.csv", index=False)
    ds = load_csv(tmp_path / "d.csv", Schema("Y", ("E1", "E2", "E3"), ("X1", "X2")),
                  dichotomize_treatment=True)
    expected = ((e > e.mean(axis=0)).sum(axis=1) >= 2).astype(int)
    np.testing.assert_array_equal(ds.t, expected)
    code = main(["analyze", "--data", str(tmp_path / "d.csv"), "--outcome", "Y",
                 "--treatment", "E1,E2,E3", "--confounders", "X1,X2", "--dichotomize",
                 "--out", str(tmp_path / "out"), *FAST])
    assert code == 0


def test_analyze_missing_key_is_named(tmp_path, capsys):
    assert main(["analyze", "--data", "x.csv", "--treatment", "T", "--confounders", "X1",
                 "--out", str(tmp_path)]) == 1
    assert "'outcome'" in capsys.readouterr().err


def test_analyze_bad_column_is_data_error(tmp_path, capsys):
    data = tmp_path / "data.csv"
    write_scenario_csv(data)
    code = main(["analyze", "--data", str(data), "--outcome", "Y", "--treatment", "T",
                 "--confounders", "X1,X99", "--out", str(tmp_path / "o"), *FAST])
    assert code == 2
    assert "X99" in capsys.readouterr().err


def _univariate(data, out, *extra):
    return ["univariate", "--data", str(data), "--outcome", "Y", "--treatment", "T",
            "--confounders", "X1,X2,B", "--out", str(out), *FAST, *extra]


def _with_columns(path, n=200, seed=5, **cols):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2))
    t = rng.integers(0, 2, n)
    frame = pd.DataFrame({"Y": x[:, 0] + t * (1 + x[:, 1]) + rng.standard_normal(n), "T": t,
                          "X1": x[:, 0], "X2": x[:, 1]})
    for name, values in cols.items():
        frame[name] = values
    frame.to_csv(path, index=False)


def test_univariate_binary_modifier_falls_back_to_linear(tmp_path):
    data = tmp_path / "d.csv"
    _with_columns(data, B=np.arange(200) % 2)
    assert main(_univariate(data, tmp_path / "o", "--covariates", "X2,B")) == 0
    header = (tmp_path / "o" / "univariate_DR-Linear_B.csv").read_text()
    assert "# curve_basis=linear" in header
    assert "# curve_basis=spline" in (tmp_path / "o" / "univariate_DR-Linear_X2.csv").read_text()
    curve = read(tmp_path / "o" / "univariate_DR-Linear_X2.csv")
    assert len(curve) == 100
    assert np.all(curve.lower <= curve.estimate) and np.all(curve.estimate <= curve.upper)


def test_univariate_constant_modifier_is_error(tmp_path, capsys):
    data = tmp_path / "d.csv"
    _with_columns(data, B=np.ones(200))
    code = main(_univariate(data, tmp_path / "o", "--covariates", "B",
                            "--modifiers", "X1,B"))
    assert code != 0
    assert "constant" in capsys.readouterr().err


@pytest.mark.slow
def test_univariate_curves_cover_marginal_truth(tmp_path):
    from drcate.simlab import true_cate
    write_scenario_csv(tmp_path / "d.csv", n=2000, seed=40)
    args = analyze_args(tmp_path / "d.csv", tmp_path / "o", "--covariates", "X1,X2,X8",
                        "--seed", "40")
    args[0] = "univariate"
    args[args.index("--draws") + 1] = args[args.index("--burnin") + 1] = "200"
    args[args.index("--resamples") + 1] = "200"
    assert main(args) == 0
    mc = np.random.default_rng(0).standard_normal((1_000_000, 10))
    covered = []
    for j, name in ((0, "X1"), (1, "X2"), (7, "X8")):
        curve = read(tmp_path / "o" / f"univariate_DR-Linear_{name}.csv")
        keep = mc[:, j].copy()
        truth = []
        for g in curve.grid:
            mc[:, j] = g
            truth.append(true_cate("linear", mc).mean())
        mc[:, j] = keep
        covered.extend((curve.lower <= truth) & (truth <= curve.upper))
    assert np.mean(covered) >= 0.90
