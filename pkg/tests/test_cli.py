import json
import subprocess
import sys

import numpy as np
import pytest

from hgnb import io as hio
from hgnb.cli import EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from hgnb.model import CountMatrix


@pytest.fixture
def toy(tmp_path):
    dense = np.random.default_rng(0).poisson(2.0, size=(5, 8))
    p = tmp_path / "counts.csv"
    hio.write_counts(p, CountMatrix.from_dense(dense))
    return p


FIT = ["--iterations", "20", "--burn-in", "10", "--seed", "3", "-K", "2", "--pg-terms", "20"]


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def test_fit_is_byte_identical(tmp_path, toy, monkeypatch):
    assert main(["fit", "--counts", str(toy), "--out", str(tmp_path / "a"), *FIT, "--save-samples"]) == EXIT_OK
    assert main(["fit", "--counts", str(toy), "--out", str(tmp_path / "b"), *FIT, "--save-samples"]) == EXIT_OK
    monkeypatch.setenv("HGNB_WORKERS", "3")
    assert main(["fit", "--counts", str(toy), "--out", str(tmp_path / "c"), *FIT, "--save-samples",
                 "--block-size", "2"]) == EXIT_OK
    assert main(["fit", "--counts", str(toy), "--out", str(tmp_path / "d"), *FIT, "--save-samples",
                 "--block-size", "2", "--workers", "1"]) == EXIT_OK
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    assert a == b
    assert files(tmp_path / "c") == files(tmp_path / "d")
    for name in ("theta.csv", "phi.csv", "beta.csv", "delta.csv", "r.csv", "trace.csv", "embedding.csv",
                 "checkpoint.hgnb", "point_estimate.hgnb", "samples.npz", "config.json"):
        assert name in a
    theta, rows, cols = hio.read_matrix(tmp_path / "a" / "theta.csv")
    assert theta.shape == (2, 8)
    assert hio.read_matrix(tmp_path / "a" / "phi.csv")[0].shape == (2, 5)


def test_fit_config_file_and_flag_precedence(tmp_path, toy):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"iterations": 6, "burn_in": 2, "seed": 9, "K": 1}))
    out = tmp_path / "o"
    assert main(["fit", "--config", str(cfg), "--counts", str(toy), "--out", str(out), "--seed", "4"]) == EXIT_OK
    echo = json.loads((out / "config.json").read_text())
    assert echo["iterations"] == 6 and echo["seed"] == 4 and echo["K"] == 1
    assert echo["partition"]["block_size"] == 128
    assert len((out / "trace.csv").read_text().splitlines()) == 7


def test_fit_resume_matches_straight(tmp_path, toy):
    from hgnb.checkpoint import load_checkpoint
    from hgnb.gibbs import run_chain
    from hgnb.model import DesignMatrices, Hyperparams

    straight = tmp_path / "s"
    assert main(["fit", "--counts", str(toy), "--out", str(straight), *FIT]) == EXIT_OK
    # an interrupted run leaves its checkpoint behind
    split = tmp_path / "p"
    split.mkdir()
    h = Hyperparams(K=2, n_iterations=20, burn_in=10, seed=3, pg_terms=20)
    run_chain(hio.read_counts(toy), DesignMatrices.intercepts(5, 8), h,
              checkpoint_path=split / "checkpoint.hgnb", stop_after=9)
    assert load_checkpoint(split / "checkpoint.hgnb").iteration == 9
    assert main(["fit", "--counts", str(toy), "--out", str(split), *FIT, "--resume"]) == EXIT_OK
    for name in ("theta.csv", "trace.csv", "point_estimate.hgnb", "checkpoint.hgnb"):
        assert (split / name).read_bytes() == (straight / name).read_bytes()


def test_simulate_zinb40_zero_fraction(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--preset", "zinb-40", "--seed", "1", "--out", str(out)]) == EXIT_OK
    counts = hio.read_counts(out / "counts.mtx")
    assert counts.shape == (1000, 100)
    assert abs(counts.zero_fraction() - 0.40) <= 0.01
    labels, cells = hio.read_vector(out / "labels.csv")
    assert len(cells) == 100 and set(labels) <= {0, 1, 2}


def test_simulate_hgnb_writes_truth(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--model", "hgnb", "--genes", "7", "--cells", "4", "--e0", "3", "--f0", "3",
                 "--format", "csv", "--out", str(out)]) == EXIT_OK
    assert (out / "truth.hgnb").exists() and hio.read_counts(out / "counts.csv").shape == (7, 4)


def test_evaluate_hand_silhouette(tmp_path):
    emb = tmp_path / "emb.csv"
    hio.write_matrix(emb, np.array([[0.0], [1.0], [10.0], [11.0]]), ["a", "b", "c", "d"], ["factor1"], "cell")
    lab = tmp_path / "labels.csv"
    lab.write_text("cell,label\na,0\nb,0\nc,1\nd,1\n")
    out = tmp_path / "ev"
    assert main(["evaluate", "--embedding", str(emb), "--labels", str(lab), "--clusters", "2",
                 "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "evaluation.json").read_text())
    # s = 9.5 / 10.5 for the outer points and 8.5 / 9.5 for the inner ones
    assert summary["silhouette"] == pytest.approx((2 * 9.5 / 10.5 + 2 * 8.5 / 9.5) / 4, rel=1e-12)
    assert summary["ari"] == 1.0
    assert (out / "embedding.svg").exists() and (out / "mst.csv").read_text() == "from,to\n0,1\n"


def test_evaluate_md_and_pca(tmp_path, toy):
    fit = tmp_path / "fit"
    assert main(["fit", "--counts", str(toy), "--out", str(fit), *FIT]) == EXIT_OK
    out = tmp_path / "ev"
    assert main(["evaluate", "--fit", str(fit), "--counts", str(toy), "--clusters", "2", "--pca",
                 "--md-bins", "4", "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "evaluation.json").read_text())
    assert {"silhouette", "pca_silhouette", "md_max_abs_z"} <= set(summary)
    assert len((out / "md.csv").read_text().splitlines()) == 5


def test_transform(tmp_path, toy):
    fit = tmp_path / "fit"
    assert main(["fit", "--counts", str(toy), "--out", str(fit), *FIT]) == EXIT_OK
    new = tmp_path / "new.csv"
    hio.write_counts(new, CountMatrix.from_dense(np.random.default_rng(1).poisson(2.0, size=(5, 3))))
    out = tmp_path / "tr"
    assert main(["transform", "--fit", str(fit), "--counts", str(new), "--out", str(out),
                 "--iterations", "10", "--burn-in", "5"]) == EXIT_OK
    assert hio.read_matrix(out / "theta.csv")[0].shape == (2, 3)
    assert (out / "phi.csv").read_bytes() == (fit / "phi.csv").read_bytes()


def one_line_error(capsys, kind):
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and err.startswith(f"hgnb: error[{kind}]: ")
    return err


def test_exit_code_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("gene,c1\ng1,-1\n")
    assert main(["fit", "--counts", str(bad), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert "bad.csv:2" in one_line_error(capsys, "data")


def test_exit_code_usage(tmp_path, capsys):
    assert main(["fit", "--out", str(tmp_path)]) == EXIT_USAGE
    one_line_error(capsys, "usage")
    assert main(["fit", "--bogus"]) == EXIT_USAGE
    one_line_error(capsys, "usage")
    assert main([]) == EXIT_USAGE
    one_line_error(capsys, "usage")


@pytest.mark.filterwarnings("ignore:overflow")
def test_exit_code_numerical(tmp_path, toy, capsys):
    cov = tmp_path / "x.csv"
    cov.write_text(",".join(["1e300"] * 8) + "\n")
    code = main(["fit", "--counts", str(toy), "--cell-covariates", str(cov), "--out", str(tmp_path / "o"),
                 "--iterations", "3", "--burn-in", "1"])
    assert code == EXIT_NUMERICAL
    one_line_error(capsys, "numerical")


def test_exit_code_missing_checkpoint(tmp_path, toy, capsys):
    assert main(["fit", "--counts", str(toy), "--out", str(tmp_path / "none"), "--resume"]) == EXIT_DATA
    one_line_error(capsys, "data")


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "hgnb.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("fit", "simulate", "evaluate", "transform"):
        assert cmd in res.stdout
