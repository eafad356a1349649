import csv
import json

import numpy as np
import pytest
import yaml

from abayes import cli
from abayes.diagnostics import summarize
from abayes.io import read_draws


def write_config(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


def run(tmp_path, data, name="cfg.yaml", command="run", extra=()):
    return cli.main([command, write_config(tmp_path / name, data), *extra])


REJECT = {"model": "conjugate-gaussian", "method": "abc-reject",
          "params": {"M": 20_000, "quantile": 0.01}, "seed": 5}


def test_run_writes_three_files_and_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(tmp_path, {**REJECT, "output": str(a)}) == cli.EXIT_OK
    assert run(tmp_path, {**REJECT, "output": str(b)}) == cli.EXIT_OK
    assert sorted(p.name for p in a.iterdir()) == ["draws.csv", "manifest.json", "summary.json"]
    assert (a / "draws.csv").read_bytes() == (b / "draws.csv").read_bytes()
    header = (a / "draws.csv").read_text().splitlines()[0]
    assert header == "param_1,weight,distance"
    assert sum(1 for _ in open(a / "draws.csv")) - 1 == 200


def test_manifest_lists_every_default(tmp_path):
    out = tmp_path / "o"
    assert run(tmp_path, {**REJECT, "output": str(out)}) == 0
    man = json.loads((out / "manifest.json").read_text())
    params = man["config"]["params"]
    assert params["M"] == 20_000 and params["quantile"] == 0.01
    for key in ("epsilon", "metric", "regression_adjust", "n_pilot"):
        assert key in params
    assert man["config"]["n_workers"] == 1
    assert man["results"]["epsilon"] > 0
    assert man["results"]["acceptance_rate"] == 0.01
    assert man["wall_time_seconds"] >= 0
    assert man["n_draws"] == 200


def test_seed_and_out_overrides(tmp_path):
    out = tmp_path / "x"
    assert run(tmp_path, {**REJECT, "output": "unused"}, extra=["--seed", "9", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["seed"] == 9
    ref = tmp_path / "y"
    assert run(tmp_path, {**REJECT, "seed": 9, "output": str(ref)}, name="ref.yaml") == 0
    assert (out / "draws.csv").read_bytes() == (ref / "draws.csv").read_bytes()


def test_unknown_method_exit_2(tmp_path, capsys):
    rc = run(tmp_path, {**REJECT, "method": "abc-magic", "output": str(tmp_path / "o")})
    assert rc == cli.EXIT_CONFIG
    assert "abc-magic" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("bad,key", [
    ({"params": {"M": 100, "quantile": 0.1, "epsilon": 0.1}}, "epsilon"),
    ({"params": {"M": "many"}}, "M"),
    ({"params": {"bogus": 1}}, "bogus"),
    ({"model": "nope"}, "model"),
    ({"method": "cavi"}, "method"),
    ({"seed": None}, "seed"),
])
def test_invalid_config_names_key(tmp_path, capsys, bad, key):
    data = {**REJECT, "output": str(tmp_path / "o"), **bad}
    data = {k: v for k, v in data.items() if v is not None}
    assert run(tmp_path, data) == cli.EXIT_CONFIG
    assert key in capsys.readouterr().err


def test_unparseable_yaml_exit_2(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("model: [unclosed\n")
    assert cli.main(["run", str(p)]) == cli.EXIT_CONFIG
    assert cli.main(["run", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG


def test_runtime_failure_exit_3(tmp_path, capsys):
    data = {"model": "gaussian-lgm", "method": "laplace-inla", "params": {"half_width": 0.5},
            "seed": 1, "output": str(tmp_path / "o")}
    assert run(tmp_path, data) == cli.EXIT_RUNTIME
    err = capsys.readouterr().err
    assert "laplace-inla" in err and "sampling" in err


def test_bsl_summary_round_trip(tmp_path):
    out = tmp_path / "bsl"
    data = {"model": "conjugate-gaussian", "method": "bsl",
            "params": {"m": 20, "chain_length": 400, "proposal_sd": 0.3}, "seed": 3, "output": str(out)}
    assert run(tmp_path, data) == 0
    draws = read_draws(out / "draws.csv")
    summ = json.loads((out / "summary.json").read_text())
    again = summarize(draws, chain=True)
    assert abs(again.mean[0] - summ["mean"][0]) < 1e-12
    assert abs(again.sd[0] - summ["sd"][0]) < 1e-12
    assert "ess" in summ


def test_vb_and_laplace_outputs_have_empty_distance(tmp_path):
    for i, (model, method) in enumerate([("normal-gamma", "cavi"), ("poisson-lgm", "laplace-inla")]):
        out = tmp_path / f"o{i}"
        assert run(tmp_path, {"model": model, "method": method, "seed": 1, "output": str(out)}) == 0
        rows = list(csv.reader(open(out / "draws.csv")))
        assert rows[0][-1] == "distance"
        assert all(r[-1] == "" for r in rows[1:])
        summ = json.loads((out / "summary.json").read_text())
        assert ("variational" in summ) or ("grid" in summ)


def test_compare_identical_blocks_tv_zero(tmp_path):
    out = tmp_path / "cmp"
    blk = {"method": "abc-reject", "params": {"M": 10_000, "quantile": 0.02}}
    data = {"model": "conjugate-gaussian", "seed": 4, "output": str(out),
            "methods": [{"label": "a", **blk}, {"label": "b", **blk}]}
    assert run(tmp_path, data, command="compare") == 0
    report = json.loads((out / "comparison.json").read_text())
    assert [r["tv_to_reference"] for r in report["rows"]] == [0.0, 0.0]
    assert (out / "curves" / "a_mu.csv").exists()
    lines = (out / "comparison.csv").read_text().splitlines()
    assert lines[0] == "method,parameter,mean,sd,ci90_low,ci90_high,tv_to_reference"
    assert len(lines) == 3
    x, d = np.loadtxt(out / "curves" / "b_mu.csv", delimiter=",", skiprows=1, unpack=True)
    assert np.all(d >= 0)


def test_compare_abc_against_oracle(tmp_path):
    out = tmp_path / "cmp"
    data = {"model": "conjugate-gaussian", "seed": 8, "output": str(out), "reference": "exact",
            "methods": [{"label": "exact", "method": "oracle", "params": {"n_draws": 100_000}},
                        {"label": "abc", "method": "abc-reject",
                         "params": {"M": 1_000_000, "quantile": 0.001}}]}
    assert run(tmp_path, data, command="compare") == 0
    rows = {r["method"]: r for r in json.loads((out / "comparison.json").read_text())["rows"]}
    assert rows["exact"]["tv_to_reference"] == 0
    assert rows["abc"]["tv_to_reference"] < 0.1


def test_compare_budget_is_shared(tmp_path):
    out = tmp_path / "cmp"
    data = {"model": "conjugate-gaussian", "seed": 1, "output": str(out), "budget": 6000,
            "methods": [{"method": "abc-reject", "params": {"quantile": 0.05}},
                        {"method": "bsl", "params": {"m": 30}}]}
    assert run(tmp_path, data, command="compare") == 0
    m1 = json.loads((out / "abc-reject" / "manifest.json").read_text())
    m2 = json.loads((out / "bsl" / "manifest.json").read_text())
    assert m1["config"]["params"]["M"] == 6000
    assert m2["config"]["params"]["chain_length"] * 30 == 6000


@pytest.mark.parametrize("change,key", [
    (lambda d: d["methods"][1].update(model="stereological"), "methods[1].model"),
    (lambda d: d["methods"][1].update(label="a"), "duplicate"),
    (lambda d: d.update(reference="zzz"), "reference"),
    (lambda d: d.update(methods=d["methods"][:1]), "methods"),
    (lambda d: d["methods"][0]["params"].update(quantile="x"), "methods[0].params.quantile"),
])
def test_compare_config_errors(tmp_path, capsys, change, key):
    data = {"model": "conjugate-gaussian", "seed": 1, "output": str(tmp_path / "c"),
            "methods": [{"label": "a", "method": "abc-reject", "params": {"M": 1000, "quantile": 0.1}},
                        {"label": "b", "method": "abc-reject", "params": {"M": 1000, "quantile": 0.1}}]}
    change(data)
    assert run(tmp_path, data, command="compare") == cli.EXIT_CONFIG
    assert key in capsys.readouterr().err


def test_list_commands(capsys):
    assert cli.main(["list-models"]) == 0
    out = capsys.readouterr().out
    for name in ("conjugate-gaussian", "stereological", "normal-gamma", "random-effects",
                 "poisson-lgm", "gaussian-lgm"):
        assert name in out
    assert cli.main(["list-methods"]) == 0
    out = capsys.readouterr().out
    for name in ("abc-reject", "abc-mcmc", "abc-smc", "bsl", "cavi", "svi", "laplace-inla", "pm-mh"):
        assert name in out
