import csv

import numpy as np
import pytest

from skeleton_fixtures import synthetic_walk
from tobitkf.cli import main
from tobitkf.trajectory_io import SkeletonFrameSet, parse_skeleton_csv, write_skeleton_csv


def data_lines(path):
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]


def read_table(path):
    return list(csv.DictReader(data_lines(path)))


@pytest.fixture
def walk_csv(tmp_path):
    fs, _ = synthetic_walk(0, frames=60)
    path = tmp_path / "walk.csv"
    write_skeleton_csv(fs, path)
    return path


def test_no_command_is_usage_error(capsys):
    assert main([]) == 64
    assert main(["oscillator", "--bogus"]) == 64


def test_oscillator_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["oscillator", "--iterations", "1", "--seed", "7", "--steps", "300",
                     "--out-dir", str(d)]) == 0
    for name in ("table1.csv", "rmse_diff.csv"):
        assert (a / name).read_text() == (b / name).read_text().replace(str(b), str(a))
    rows = read_table(a / "table1.csv")
    assert [r["filter"] for r in rows] == ["TKF", "TKFc"]
    assert all(float(r["rmse_x1"]) > 0 and float(r["rmse_x2"]) > 0 for r in rows)
    diff = read_table(a / "rmse_diff.csv")
    assert [d["seed"] for d in diff] == ["7"]
    tkf, tkfc = rows
    assert float(diff[0]["diff_x1"]) == pytest.approx(float(tkf["rmse_x1"]) - float(tkfc["rmse_x1"]))


def test_oscillator_echo_header(tmp_path):
    main(["oscillator", "--iterations", "1", "--steps", "50", "--out-dir", str(tmp_path)])
    lines = (tmp_path / "table1.csv").read_text().splitlines()
    echo = [ln for ln in lines if ln.startswith("#")]
    assert echo[0].startswith("# tobitkf ")
    assert "# command=oscillator" in echo
    assert "# seed=0" in echo and "# a=-0.5" in echo
    assert lines[len(echo)] == "filter,rmse_x1,rmse_x2"


def test_oscillator_rejects_inverted_limits(tmp_path, capsys):
    assert main(["oscillator", "--a", "0.5", "--b", "-0.5", "--out-dir", str(tmp_path)]) == 64
    assert not (tmp_path / "table1.csv").exists()


def test_moments_check_defaults(tmp_path, capsys):
    assert main(["moments-check", "--reps", "10", "--samples", "20000", "--out-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "0.6133" in out and "2.7471" in out
    rows = read_table(tmp_path / "moments_check.csv")
    cov = {(int(r["i"]), int(r["j"])): float(r["analytic"]) for r in rows if r["quantity"] == "cov"}
    assert cov[(0, 0)] == pytest.approx(0.4651, abs=1e-3)
    assert cov[(1, 2)] == pytest.approx(1.9189, abs=1e-3)


def test_moments_check_unbounded_and_one_dimensional(tmp_path, capsys):
    assert main(["moments-check", "--bounds", "-inf", "inf", "--reps", "5", "--samples", "5000",
                 "--out-dir", str(tmp_path)]) == 0
    rows = read_table(tmp_path / "moments_check.csv")
    cov = np.array([float(r["analytic"]) for r in rows if r["quantity"] == "cov"]).reshape(3, 3)
    # No censoring: the covariance is the input covariance.
    assert cov == pytest.approx(np.array([[5, 3, 4], [3, 5, 4], [4, 4, 5.0]]))
    assert main(["moments-check", "--dim", "1", "--mean", "0", "--var", "1", "--bounds", "0", "inf",
                 "--reps", "5", "--samples", "5000", "--out-dir", str(tmp_path)]) == 0
    row = read_table(tmp_path / "moments_check.csv")[0]
    assert float(row["analytic"]) == pytest.approx(1 / np.sqrt(2 * np.pi))


def test_moments_check_bad_input(tmp_path):
    assert main(["moments-check", "--dim", "2", "--out-dir", str(tmp_path)]) == 64
    assert main(["moments-check", "--cov", "1", "0", "0", "--out-dir", str(tmp_path)]) == 64


def test_filter_raw_reproduces_input(tmp_path, walk_csv):
    assert main(["filter", "--input", str(walk_csv), "--method", "raw", "--out-dir", str(tmp_path)]) == 0
    assert data_lines(tmp_path / "filtered.csv") == walk_csv.read_text().splitlines()
    metrics = read_table(tmp_path / "metrics.csv")
    assert metrics[-1]["joint"] == "ALL" and len(metrics) == 76


def test_filter_window_must_be_odd(tmp_path, walk_csv):
    assert main(["filter", "--input", str(walk_csv), "--method", "sgf", "--window", "4",
                 "--out-dir", str(tmp_path)]) == 64
    assert main(["filter", "--input", str(walk_csv), "--method", "sgf", "--window", "7",
                 "--out-dir", str(tmp_path)]) == 0


def test_filter_atkf_smoother_than_kf(tmp_path, walk_csv):
    m = {}
    for method in ("kf", "atkf"):
        out = tmp_path / method
        assert main(["filter", "--input", str(walk_csv), "--method", method, "--out-dir", str(out)]) == 0
        m[method] = float(read_table(out / "metrics.csv")[-1]["m"])
    assert m["atkf"] < m["kf"]


def test_filter_bad_schema_is_data_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,x\n0,1\n")
    assert main(["filter", "--input", str(bad), "--out-dir", str(tmp_path)]) == 65
    assert main(["filter", "--input", str(tmp_path / "missing.csv"), "--out-dir", str(tmp_path)]) == 65


def test_estimate_q_boundary_and_single_point(tmp_path, capsys):
    t = np.arange(80) / 30
    g = np.tile(np.linspace(0.5, 2.0, 75), (80, 1))
    g += np.random.default_rng(0).normal(0, 0.1, g.shape)
    path = tmp_path / "static.csv"
    write_skeleton_csv(SkeletonFrameSet.from_matrix(t, g), path)
    assert main(["estimate-q", "--input", str(path), "--joints", "head", "--q-num", "5",
                 "--out-dir", str(tmp_path)]) == 3
    profile = read_table(tmp_path / "q_profile.csv")
    assert len(profile) == 5
    capsys.readouterr()
    assert main(["estimate-q", "--input", str(path), "--joints", "head", "--q-grid", "0.01",
                 "--out-dir", str(tmp_path)]) == 0
    assert "q_hat=0.01" in capsys.readouterr().out
    assert main(["estimate-q", "--input", str(path), "--joints", "nose", "--out-dir", str(tmp_path)]) == 64


def test_evaluate_command(tmp_path, walk_csv):
    assert main(["evaluate", "--test", str(walk_csv), "--reference", str(walk_csv),
                 "--lag-min", "-2", "--lag-max", "2", "--out-dir", str(tmp_path)]) == 0
    rows = read_table(tmp_path / "rmse.csv")
    assert len(rows) == 75
    assert all(float(r["rmse"]) == 0.0 and r["lag"] == "0" for r in rows)
    assert main(["evaluate", "--test", str(walk_csv), "--reference", str(walk_csv),
                 "--lag", "100", "--out-dir", str(tmp_path)]) == 65
    n = parse_skeleton_csv(walk_csv).n_frames
    assert n == 60
