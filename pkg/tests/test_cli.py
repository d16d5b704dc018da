import csv
import json

import numpy as np
import pytest

from tatd import synth
from tatd.cli import main
from tatd.model import load_checkpoint, predict_entries
from tatd.tensor_store import ingest, slice_census, write_tensor

FAST = ["--rank", "2", "--max-outer", "4", "--max-inner", "10"]


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    x, _ = synth.generate(synth.SynthSpec(dims=(20, 8, 6), rank=2, period=8.0, rate=0.4))
    path = d / "toy.tsv"
    write_tensor(x, path)
    return path


@pytest.fixture(scope="module")
def fitted(toy, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit") / "run"
    assert main(["fit", "--data", str(toy), "--modes", "3", "--out", str(out), *FAST]) == 0
    return out


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_fit_writes_outputs(fitted, capsys):
    report = _rows(fitted / "report.csv")
    assert report[0] == ["iteration", "train_rmse", "val_rmse", "val_mae", "inner_epochs"]
    assert len(report) >= 2
    assert _rows(fitted / "timings.csv")[0] == ["iteration", "seconds"]
    for name in ("smoothing_weights.csv", "smoothing_beta.csv", "training_curve.png",
                 "checkpoint/manifest.json"):
        assert (fitted / name).exists()
    manifest = json.loads((fitted / "manifest.json").read_text())
    assert manifest["data"]["entries"] > 0 and len(manifest["data"]["sha256"]) == 64
    assert manifest["config"]["rank"] == 2
    for rel in manifest["outputs"]:
        assert (fitted / rel).exists()
    assert manifest["results"]["test_rmse_original"] == pytest.approx(
        manifest["results"]["test_rmse"] * manifest["normalization"]["std"])


def test_fit_prints_both_scales(toy, tmp_path, capsys):
    assert main(["fit", "--data", str(toy), "--modes", "3", "--out", str(tmp_path / "r"),
                 "--no-plots", *FAST]) == 0
    out = capsys.readouterr().out
    assert "normalized" in out and "original scale" in out


def test_even_window_is_usage_error(toy, tmp_path, capsys):
    code = main(["fit", "--data", str(toy), "--modes", "3", "--out", str(tmp_path / "r"),
                 "--window", "4"])
    assert code == 2
    assert "--window" in capsys.readouterr().err


def test_unknown_strategy_lists_choices(toy, tmp_path, capsys):
    code = main(["fit", "--data", str(toy), "--modes", "3", "--out", str(tmp_path / "r"),
                 "--strategy", "bogus"])
    assert code == 2
    err = capsys.readouterr().err
    assert all(s in err for s in ("als_adam", "sgd", "alt_adam"))


def test_malformed_data_is_runtime_error(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("1\t1\t1\t0.5\n1\t2\tx\t0.3\n")
    assert main(["fit", "--data", str(bad), "--modes", "3", "--out", str(tmp_path / "r")]) == 1
    assert "line 2" in capsys.readouterr().err


def test_missing_data_file(tmp_path):
    assert main(["fit", "--data", str(tmp_path / "nope.tsv"), "--modes", "3",
                 "--out", str(tmp_path / "r")]) == 1


def test_config_file_and_flag_precedence(toy, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nrank = 2\nmax_outer = 6\nmax-inner = 5\nno_sparsity_penalty = true\n")
    out = tmp_path / "r"
    assert main(["fit", "--data", str(toy), "--modes", "3", "--out", str(out), "--no-plots",
                 "--config", str(cfg), "--max-outer", "2"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["rank"] == 2
    assert manifest["config"]["max_outer"] == 2
    assert manifest["config"]["max_inner"] == 5
    assert manifest["config"]["sparsity_penalty"] is False


def test_unknown_config_key(toy, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("rnak = 2\n")
    code = main(["fit", "--data", str(toy), "--modes", "3", "--out", str(tmp_path / "r"),
                 "--config", str(cfg)])
    assert code == 2
    assert "rnak" in capsys.readouterr().err


def test_threads_env(toy, tmp_path, monkeypatch):
    monkeypatch.setenv("TATD_THREADS", "1")
    assert main(["fit", "--data", str(toy), "--modes", "3", "--out", str(tmp_path / "r"),
                 "--no-plots", *FAST]) == 0


def test_predict_roundtrip(fitted, toy, tmp_path):
    idx = tmp_path / "idx.tsv"
    idx.write_text("1\t1\t1\n20\t8\t6\n")
    out = tmp_path / "pred.tsv"
    assert main(["predict", "--model", str(fitted / "checkpoint"), "--indices", str(idx),
                 "--out", str(out)]) == 0
    model, manifest = load_checkpoint(fitted / "checkpoint")
    expect = predict_entries(model, [[0, 0, 0], [19, 7, 5]]) * manifest["std"] + manifest["mean"]
    got = [line.split("\t") for line in out.read_text().splitlines()]
    assert [g[:3] for g in got] == [["1", "1", "1"], ["20", "8", "6"]]
    np.testing.assert_allclose([float(g[3]) for g in got], expect, rtol=1e-12)


def test_predict_out_of_range_rows(fitted, tmp_path, capsys):
    idx = tmp_path / "idx.tsv"
    idx.write_text("1\t1\t1\n21\t1\t1\n2\t2\t2\n")
    assert main(["predict", "--model", str(fitted / "checkpoint"), "--indices", str(idx)]) == 1
    cap = capsys.readouterr()
    assert len(cap.out.splitlines()) == 2
    assert "line 2" in cap.err and "(21, 1, 1)" in cap.err


def test_predict_malformed_row(fitted, tmp_path, capsys):
    idx = tmp_path / "idx.tsv"
    idx.write_text("1\t1\t1\n1\t1\n")
    assert main(["predict", "--model", str(fitted / "checkpoint"), "--indices", str(idx)]) == 1
    assert "line 2" in capsys.readouterr().err


def test_predict_empty_file(fitted, tmp_path, capsys):
    idx = tmp_path / "idx.tsv"
    idx.write_text("")
    assert main(["predict", "--model", str(fitted / "checkpoint"), "--indices", str(idx)]) == 0
    assert capsys.readouterr().out == ""


def test_predict_zero_based(fitted, tmp_path, capsys):
    idx = tmp_path / "idx.tsv"
    idx.write_text("0,0,0\n")
    assert main(["predict", "--model", str(fitted / "checkpoint"), "--indices", str(idx),
                 "--zero-based"]) == 0
    assert capsys.readouterr().out.startswith("0\t0\t0\t")


def test_density_sweep_matches_census(toy, tmp_path):
    out = tmp_path / "dens"
    assert main(["sweep", "--experiment", "density", "--data", str(toy), "--modes", "3",
                 "--out", str(out)]) == 0
    rows = _rows(out / "census.csv")
    counts = slice_census(ingest(toy, 3)).counts
    assert rows[0] == ["time_index", "nonzero_count"]
    assert [int(r[1]) for r in rows[1:]] == counts.tolist()
    assert (out / "density.png").exists()


def test_density_needs_data(tmp_path):
    assert main(["sweep", "--experiment", "density", "--out", str(tmp_path)]) == 2


SWEEP_FAST = ["--dims", "16,6,5", "--true-rank", "2", "--period", "8", *FAST,
              "--max-outer", "3", "--patience", "2"]


def test_sparsity_sweep_table(tmp_path):
    out = tmp_path / "sp"
    assert main(["sweep", "--experiment", "sparsity", "--out", str(out), *SWEEP_FAST]) == 0
    rows = _rows(out / "sparsity.csv")
    assert rows[0] == ["rate", "method", "rmse", "mae"]
    assert len(rows) - 1 == 5 * 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert sorted(manifest["outputs"]) == ["sparsity.csv", "sparsity.png"]


@pytest.mark.parametrize("exp,extra,n_rows", [
    ("penalty", ["--lambdas", "0.1,10"], 2),
    ("rank", ["--ranks", "1,2"], 4),
])
def test_other_sweeps(tmp_path, exp, extra, n_rows):
    out = tmp_path / exp
    assert main(["sweep", "--experiment", exp, "--out", str(out), "--no-plots",
                 *SWEEP_FAST, *extra]) == 0
    assert len(_rows(out / f"{exp}.csv")) - 1 == n_rows


def test_optimizer_sweep_keeps_timings_apart(tmp_path):
    out = tmp_path / "opt"
    assert main(["sweep", "--experiment", "optimizers", "--out", str(out),
                 *SWEEP_FAST, "--max-outer", "1"]) == 0
    rows = _rows(out / "optimizers.csv")
    assert "seconds" not in rows[0]
    assert [r[0] for r in rows[1:]] == ["als_adam", "adam", "sgd", "als_sgd", "alt_adam"]
    assert _rows(out / "optimizer_timings.csv")[0] == ["strategy", "seconds"]


def test_sweep_rerun_is_byte_identical(tmp_path):
    args = ["sweep", "--experiment", "penalty", "--lambdas", "1,100", "--no-plots",
            *SWEEP_FAST]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/penalty.csv").read_bytes() == (tmp_path / "b/penalty.csv").read_bytes()


def test_fit_rerun_is_byte_identical(toy, tmp_path):
    for name in ("a", "b"):
        assert main(["fit", "--data", str(toy), "--modes", "3", "--out", str(tmp_path / name),
                     "--no-plots", "--seed", "3", *FAST]) == 0
    for rel in ("report.csv", "checkpoint/factor_1.tsv", "smoothing_beta.csv"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_no_command_is_usage_error():
    assert main([]) == 2


def test_predict_reproduces_training_entries_of_noiseless_model(tmp_path, capsys):
    x, _ = synth.generate(synth.SynthSpec(dims=(20, 10, 8), rank=3, rate=1.0, noise=0.0))
    data = tmp_path / "clean.tsv"
    write_tensor(x, data)
    out = tmp_path / "run"
    assert main(["fit", "--data", str(data), "--modes", "3", "--out", str(out), "--rank", "3",
                 "--lambda-r", "0", "--max-outer", "3000", "--patience", "3000",
                 "--no-plots"]) == 0
    idx = tmp_path / "idx.tsv"
    idx.write_text("".join("\t".join(str(i + 1) for i in row) + "\n" for row in x.indices))
    capsys.readouterr()
    assert main(["predict", "--model", str(out / "checkpoint"), "--indices", str(idx)]) == 0
    got = np.array([float(line.split("\t")[3]) for line in capsys.readouterr().out.splitlines()])
    assert np.abs(got - x.values).max() < 1e-2
