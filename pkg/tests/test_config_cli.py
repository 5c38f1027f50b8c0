import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmrsw import cli
from bmrsw.config import RunConfig, load_config, parse_config
from bmrsw.errors import ConfigError
from bmrsw.measures import WeightedDiscreteMeasure as W, w2sq_1d
from bmrsw.simulators import NORMAL, NoiseBank, derive_seed, simulate_batch


# -- configuration -------------------------------------------------------------

def test_defaults():
    cfg = load_config(None)
    assert cfg.selection.m_prime == 15
    assert cfg.bootstrap.replicates == 100
    assert cfg.sga.iterations == 20000
    assert cfg.sga.learning_rate_scale == 1.0
    assert cfg.cmaes.rounds == 50
    assert cfg.cmaes.population == 16
    assert cfg.cmaes.sigma0 == 1.0
    assert cfg.schema_version == 1


def test_round_trip_default():
    cfg = RunConfig()
    assert parse_config(cfg.dumps()) == cfg


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(1, 10**6), st.integers(0, 2**64 - 1), st.floats(0.0, 0.99),
       st.one_of(st.none(), st.lists(st.floats(0.01, 100), min_size=1, max_size=5, unique=True).map(sorted)),
       st.sampled_from(["normal", "gandk"]))
def test_round_trip(lam, iters, seed, burn, grid, name):
    text = json.dumps({"lambda": lam, "sga": {"iterations": iters, "burn_in_fraction": burn},
                       "master_seed": seed, "selection": {"grid": grid}, "simulator": {"name": name},
                       "dataset": {"simulator": name, "contamination": {"epsilon": 0.05, "dirac": 50}}})
    cfg = parse_config(text)
    assert parse_config(cfg.dumps()) == cfg


def test_lambda_auto():
    assert parse_config('{"lambda": "auto"}').lam == "auto"


def test_malformed_json_location():
    with pytest.raises(ConfigError, match=r"line 2, column \d+"):
        parse_config('{"lambda": 1.0,\n  "sga": }')


@pytest.mark.parametrize("text, field", [
    ('{"bogus": 1}', "bogus"),
    ('{"sga": {"iterations": 0}}', "sga.iterations"),
    ('{"sga": {"iterations": 1.5}}', "sga.iterations"),
    ('{"lambda": -1}', "lambda"),
    ('{"lambda": "big"}', "lambda"),
    ('{"selection": {"grid": []}}', "selection.grid"),
    ('{"selection": {"grid": [1, 0.5]}}', "selection.grid"),
    ('{"dataset": {"contamination": {"epsilon": 2}}}', "dataset.contamination.epsilon"),
    ('{"dataset": {"source": "csv"}}', "dataset.path"),
    ('{"schema_version": 2}', "schema_version"),
    ('{"sga": 3}', "sga"),
])
def test_invalid_fields_are_named(text, field):
    with pytest.raises(ConfigError, match=f"field '{field}'"):
        parse_config(text)


# -- command line --------------------------------------------------------------

def write_config(tmp_path, **blocks):
    base = {"simulator": {"name": "normal"},
            "dataset": {"simulator": "normal", "theta_star": [0.0, 1.0], "n": 5}}
    base.update(blocks)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(base))
    return str(path)


def run(args, capsys):
    code = cli.main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_simulate_writes_rows(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, _, _ = run(["simulate", "--config", cfg, "--out", str(tmp_path / "o"), "--seed", "3"], capsys)
    assert code == 0
    lines = (tmp_path / "o" / "dataset.csv").read_text().strip().splitlines()
    assert lines[0] == "x0,weight"
    assert len(lines) == 6
    manifest = json.loads((tmp_path / "o" / "simulate_manifest.json").read_text())
    assert manifest["master_seed"] == 3 and "timestamp" in manifest


def test_simulate_is_byte_identical(tmp_path, capsys):
    cfg = write_config(tmp_path)
    for d in ("a", "b"):
        run(["simulate", "--config", cfg, "--out", str(tmp_path / d), "--seed", "8"], capsys)
    assert (tmp_path / "a" / "dataset.csv").read_bytes() == (tmp_path / "b" / "dataset.csv").read_bytes()


def test_simulate_gandk_contamination(tmp_path, capsys):
    cfg = write_config(tmp_path, simulator={"name": "gandk"},
                       dataset={"simulator": "gandk", "theta_star": [3, 1, 2, 0.5], "n": 1000,
                                "contamination": {"epsilon": 0.05, "rho": 0.05, "dirac": 50}})
    run(["simulate", "--config", cfg, "--out", str(tmp_path / "o")], capsys)
    data = W.from_csv(tmp_path / "o" / "dataset.csv")
    # binomial standard deviation is about 0.007
    assert 0.03 <= np.mean(data.atoms == 50.0) <= 0.07


def test_env_overrides(tmp_path, capsys, monkeypatch):
    cfg = write_config(tmp_path)
    monkeypatch.setenv("BMRSW_SEED", "8")
    run(["simulate", "--config", cfg, "--out", str(tmp_path / "env")], capsys)
    run(["simulate", "--config", cfg, "--out", str(tmp_path / "flag"), "--seed", "8"], capsys)
    run(["simulate", "--config", cfg, "--out", str(tmp_path / "other"), "--seed", "9"], capsys)
    env = (tmp_path / "env" / "dataset.csv").read_bytes()
    assert env == (tmp_path / "flag" / "dataset.csv").read_bytes()
    assert env != (tmp_path / "other" / "dataset.csv").read_bytes()
    monkeypatch.setenv("BMRSW_WORKERS", "3")
    resolved = cli._resolve(load_config(cfg), cli.build_parser().parse_args(["report", "--config", cfg]))
    assert resolved.parallelism == 3 and resolved.master_seed == 8


def test_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"selection": {"grid": []}}')
    code, _, err = run(["lambda-select", "--config", str(path)], capsys)
    assert code == 2
    assert "selection.grid" in err


def rsw_eval_setup(tmp_path, lam, scale, seed, s=200000):
    cfg = write_config(tmp_path, dataset={"simulator": "normal", "theta_star": [0.0, 1.0], "n": 10},
                       sga={"iterations": s, "learning_rate_scale": scale}, master_seed=seed)
    out = tmp_path / f"o{lam}"
    args = ["rsw-eval", "--config", cfg, "--out", str(out), "--lambda", str(lam), "--theta", "0,1"]
    # the same dataset and bank, rebuilt independently
    from bmrsw.config import load_config as load
    data = cli._load_dataset(load(cfg))
    bank = NoiseBank.generate(int(derive_seed(seed, 0, "rsw-eval").generate_state(1, np.uint64)[0]), s)
    return args, out, data, simulate_batch(NORMAL, (0.0, 1.0), bank)


def test_rsw_eval_large_lambda_nearest_neighbour(tmp_path, capsys):
    args, out, data, x = rsw_eval_setup(tmp_path, 1000.0, 0.01, 5)
    assert run(args, capsys)[0] == 0
    report = json.loads((out / "rsw_eval.json").read_text())
    nn = np.mean(np.min((x - data.atoms.T) ** 2, axis=1))
    assert report["estimate"] == pytest.approx(nn, rel=0.02)
    assert len(report["lowest_weight_atoms"]) == 10


def test_rsw_eval_small_lambda_w2(tmp_path, capsys):
    args, out, data, x = rsw_eval_setup(tmp_path, 0.01, 0.3, 5)
    assert run(args, capsys)[0] == 0
    report = json.loads((out / "rsw_eval.json").read_text())
    assert report["estimate"] == pytest.approx(w2sq_1d(W.uniform(x), data), rel=0.05)


def test_rsw_eval_single_atom_degenerate(tmp_path, capsys):
    (tmp_path / "one.csv").write_text("x0,weight\n0.25,1.0\n")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dataset": {"source": "csv", "path": str(tmp_path / "one.csv")},
                               "sga": {"iterations": 2000}}))
    code, out, _ = run(["rsw-eval", "--config", str(cfg), "--out", str(tmp_path / "o"),
                        "--theta", "0.25,0.1"], capsys)
    assert code == 0
    est = json.loads(out)["estimate"]
    # a weighted mean of (0.1 z)^2 over 800 post-burn-in draws: small, positive, near 0.01
    assert 0 < est == pytest.approx(0.01, rel=0.15)


def test_rsw_eval_out_of_bounds(tmp_path, capsys):
    cfg = write_config(tmp_path, sga={"iterations": 100})
    code, _, err = run(["rsw-eval", "--config", cfg, "--out", str(tmp_path / "o"), "--theta", "0,-1"], capsys)
    assert code == 2
    assert "outside bounds" in err


def test_mmd_limit_files(tmp_path, capsys):
    (tmp_path / "x.csv").write_text("x0,weight\n0.0,1.0\n")
    (tmp_path / "y.csv").write_text("x0,weight\n1.0,1.0\n")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mmd": {"xs": str(tmp_path / "x.csv"), "ys": str(tmp_path / "y.csv")}}))
    code, out, _ = run(["mmd-limit", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "sigma0,scaled_mmd_sq,target"
    for line in lines[1:]:
        s, v, t = map(float, line.split(","))
        assert v == pytest.approx(2 * s * s * -math.expm1(-0.5 / s**2), rel=1e-9)
        assert t == 1.0


def test_mmd_limit_identical_files(tmp_path, capsys):
    (tmp_path / "x.csv").write_text("x0,weight\n0.0,0.5\n2.0,0.5\n")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mmd": {"xs": str(tmp_path / "x.csv"), "ys": str(tmp_path / "x.csv")}}))
    _, out, _ = run(["mmd-limit", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert all(float(line.split(",")[1]) == 0.0 for line in out.strip().splitlines()[1:])


def smoke_config(tmp_path, **extra):
    return write_config(tmp_path, dataset={"simulator": "normal", "theta_star": [0.0, 1.0], "n": 30},
                        sga={"iterations": 200}, cmaes={"population": 6, "rounds": 3},
                        bootstrap={"replicates": 2}, selection={"m_prime": 2, "grid": [0.1, 1.0, 10.0]},
                        **extra)


def test_bootstrap_smoke_and_rerun(tmp_path, capsys):
    cfg = smoke_config(tmp_path)
    for d in ("a", "b"):
        code, _, _ = run(["bootstrap", "--config", cfg, "--out", str(tmp_path / d), "--workers", "1"], capsys)
        assert code == 0
    rows = (tmp_path / "a" / "bootstrap.csv").read_text().strip().splitlines()
    assert rows[0] == "replicate,mu,sigma,loss" and len(rows) == 3
    for name in ("bootstrap.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_lambda_auto_pipeline(tmp_path, capsys):
    cfg = smoke_config(tmp_path)
    out = str(tmp_path / "o")
    code, _, err = run(["bootstrap", "--config", cfg, "--out", out, "--lambda", "auto", "--workers", "1"], capsys)
    assert code == 2 and "lambda-select" in err
    code, text, _ = run(["lambda-select", "--config", cfg, "--out", out, "--workers", "1"], capsys)
    assert code == 0
    manifest = json.loads((tmp_path / "o" / "selection_manifest.json").read_text())
    expected = 0.001 if manifest["suggestion"] is None else manifest["suggestion"]
    assert run(["bootstrap", "--config", cfg, "--out", out, "--lambda", "auto", "--workers", "1"], capsys)[0] == 0
    assert json.loads((tmp_path / "o" / "bootstrap_manifest.json").read_text())["lambda"] == expected
    code, text, _ = run(["report", "--config", cfg, "--out", out], capsys)
    assert code == 0
    assert "lambda selection" in text and "bootstrap summary" in text


def test_report_empty(tmp_path, capsys):
    assert run(["report", "--out", str(tmp_path)], capsys)[0] == 1


def test_help_documents_formats(capsys):
    with pytest.raises(SystemExit):
        cli.main(["bootstrap", "--help"])
    out = capsys.readouterr().out
    assert "bootstrap.csv" in out and "BMRSW_SEED" in out
