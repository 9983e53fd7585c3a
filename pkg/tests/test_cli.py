"""End-to-end runs of tools/bitmat_cli.py."""

import json
import os

import pandas as pd
import pytest

from bitmat.lib.core import ObservedBinaryMatrix
from bitmat.lib.fileio import MatrixFile, canonical_json, load_json, read_matrix_file, write_matrix_file
from bitmat.modules.report.modules import INFER_HEADER, RANK_HEADER
from tests.oracles import random_instance
from tools.bitmat_cli import main


@pytest.fixture
def matrix_path(tmp_path, rng):
    data, _ = random_instance(rng, 12, 8, missing=0.2)
    mf = MatrixFile(
        data=data,
        row_labels=["r%02d" % i for i in range(12)],
        col_labels=["c%d" % j for j in range(8)],
    )
    path = str(tmp_path / "votes.csv")
    write_matrix_file(path, mf)
    return path


@pytest.fixture
def fit_path(tmp_path, matrix_path):
    out = str(tmp_path / "fit.json")
    args = ["fit", "--input", matrix_path, "--output", out, "--step", "newton", "--tol", "1e-300", "--grad-tol", "1e-6"]
    assert main(args) == 0
    return out


def test_fit_writes_a_record(fit_path):
    record = load_json(fit_path)
    assert len(record["theta"]) == 12 and len(record["beta"]) == 8
    assert abs(sum(record["theta"])) < 1e-9
    assert record["converged"] is True
    assert record["row_labels"][0] == "r00"
    assert record["config"]["step"] == "newton"
    assert "ratio_logN_Jstar" in record["diagnostics"]


def test_infer_writes_rows(tmp_path, fit_path):
    out = str(tmp_path / "infer.csv")
    code = main(
        [
            "infer",
            "--input",
            fit_path,
            "--rowdiff",
            "r00",
            "r01",
            "--entry",
            "r02",
            "c3",
            "--col",
            "c1",
            "--method",
            "exact",
            "--level",
            "0.9",
            "--output",
            out,
        ]
    )
    assert code == 0
    df = pd.read_csv(out)
    assert list(df.columns) == INFER_HEADER
    assert df["form"].tolist() == ["m[r02,c3]", "beta[c1]", "theta[r00]-theta[r01]"]
    assert (df["ci_lower"] < df["estimate"]).all()
    assert (df["method"] == "exact_oracle").all()
    assert (df["level"] == 0.9).all()


def test_rank_orders_rows(tmp_path, fit_path):
    out = str(tmp_path / "rank.csv")
    assert main(["rank", "--input", fit_path, "--top", "3", "--output", out]) == 0
    df = pd.read_csv(out)
    assert list(df.columns) == RANK_HEADER
    assert df["rank"].tolist() == [1, 2, 3]
    assert df["estimate"].is_monotonic_decreasing
    theta = load_json(fit_path)["theta"]
    assert df["estimate"].iloc[0] == pytest.approx(max(theta))

    assert main(["rank", "--input", fit_path, "--top", "50", "--direction", "asc", "--output", out]) == 0
    df = pd.read_csv(out)
    assert len(df) == 12
    assert df["estimate"].is_monotonic_increasing
    assert main(["rank", "--input", fit_path, "--top", "0"]) == 2


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,c\n0,0,1\n", encoding="utf-8")
    assert main(["fit", "--input", str(bad), "--output", str(tmp_path / "f.json")]) == 2

    split = ObservedBinaryMatrix.from_entries(4, 4, [0, 0, 1, 1, 2, 2, 3, 3], [0, 1, 0, 1, 2, 3, 2, 3], [1, 0, 0, 1] * 2)
    path = str(tmp_path / "split.csv")
    write_matrix_file(path, MatrixFile(data=split))
    assert main(["fit", "--input", path, "--output", str(tmp_path / "f.json")]) == 3

    with pytest.raises(SystemExit) as e:
        main(["infer", "--input", "x.json", "--method", "bootstrap"])
    assert e.value.code == 2


def test_true_method_needs_a_truth_file(tmp_path, fit_path):
    with pytest.raises(SystemExit):
        main(["infer", "--input", fit_path, "--row", "r00", "--method", "true_param"])
    assert main(["infer", "--input", fit_path, "--row", "r00", "--method", "true"]) == 2

    record = load_json(fit_path)
    truth = tmp_path / "truth.json"
    truth.write_text(json.dumps({"theta": [0.0] * 12, "beta": [0.0] * 8}), encoding="utf-8")
    out = str(tmp_path / "infer.csv")
    args = ["infer", "--input", fit_path, "--row", "r00", "--method", "true", "--truth", str(truth)]
    assert main(args + ["--output", out]) == 0
    df = pd.read_csv(out)
    assert df["method"].tolist() == ["true_param"]
    assert df["estimate"].iloc[0] == pytest.approx(record["theta"][0])
    # sigma_ij = 1/4 at the origin, so Var(theta_0) = 4 / (cells in row 0)
    n_obs_row0 = int(read_matrix_file(record["input"]).data.row_counts[0])
    assert df["se"].iloc[0] == pytest.approx((4.0 / n_obs_row0) ** 0.5)

    short = tmp_path / "short.json"
    short.write_text(json.dumps({"theta": [0.0] * 3, "beta": [0.0] * 8}), encoding="utf-8")
    assert main(["infer", "--input", fit_path, "--row", "r00", "--method", "true", "--truth", str(short)]) == 2


def test_fit_output_is_byte_identical_on_rerun(tmp_path, matrix_path):
    outs = []
    for k in range(2):
        out = str(tmp_path / ("fit%d.json" % k))
        assert main(["fit", "--input", matrix_path, "--output", out, "--seed", "5", "--max-sweeps", "300"]) == 0
        with open(out, "rb") as f:
            outs.append(f.read())
    assert outs[0] == outs[1]
    assert outs[0] == canonical_json(json.loads(outs[0])).encode("utf-8")


def test_make_design(tmp_path):
    out = str(tmp_path / "mask.csv")
    assert main(["make-design", "--kind", "block", "--rows", "10", "--cols", "8", "--output", out]) == 0
    df = pd.read_csv(out)
    assert list(df.columns) == ["i", "j"]
    assert len(df) == 40
    stats = load_json(str(tmp_path / "mask.stats.json"))
    assert stats["connected"] is True
    assert stats["J_star_min"] == 4

    link = str(tmp_path / "link.csv")
    args = ["make-design", "--kind", "linking", "--n-per-form", "3", "--items-per-form", "4"]
    assert main(args + ["--n-anchor", "0", "--output", link]) == 0
    assert load_json(str(tmp_path / "link.stats.json"))["n_components"] == 2
    assert main(args + ["--output", link]) == 2


def test_rollcall_prep(tmp_path, rollcall_csv):
    out = str(tmp_path / "senate.csv")
    assert main(["rollcall-prep", "--input", rollcall_csv, "--output", out]) == 0
    meta = load_json(str(tmp_path / "senate.meta.json"))
    assert meta["row_labels"][0] == "Alexander"
    assert meta["J"] == 7
    with open(str(tmp_path / "senate.audit.jsonl"), encoding="utf-8") as f:
        records = [json.loads(line) for line in f]
    assert records[-1]["step"] == "summary"
    assert records[-1]["senators_out"] == 9

    fit_out = str(tmp_path / "senate.fit.json")
    assert main(["fit", "--input", out, "--output", fit_out, "--step", "newton", "--max-sweeps", "200"]) == 0
    assert load_json(fit_out)["degenerate_rows"] == ["Boxer", "Cantwell", "Coburn"]


def _study(tmp_path):
    path = str(tmp_path / "tiny.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(
            {
                "name": "tiny",
                "n_rows": 20,
                "n_cols": 12,
                "design": {"kind": "full"},
                "replications": 6,
                "seed": 3,
                "half_width": 1.0,
                "fit": {"step": "newton", "tol_per_obs": 1e-14, "max_sweeps": 2000},
            },
            f,
        )
    return path


def test_simulate_outputs(tmp_path):
    out = str(tmp_path / "sim")
    code = main(["simulate", "--input", _study(tmp_path), "--output", out, "--threads", "1", "--no-progress"])
    assert code == 0
    for name in ("variance_pairs.csv", "density.csv", "coverage.csv", "summary.json"):
        assert os.path.exists(os.path.join(out, name))
    summary = load_json(os.path.join(out, "summary.json"))
    assert summary["replications"] == 6
    assert summary["config"]["design"]["kind"] == "full"
    pairs = pd.read_csv(os.path.join(out, "variance_pairs.csv"))
    assert len(pairs) == 240 + 20 + 12


def test_coverage_outputs(tmp_path):
    out = str(tmp_path / "cov")
    args = ["coverage", "--config", _study(tmp_path), "--output", out, "--threads", "1", "--no-progress"]
    assert main(args + ["--replications", "4"]) == 0
    quartiles = pd.read_csv(os.path.join(out, "coverage_quartiles.csv"))
    assert quartiles["family"].tolist() == ["m", "theta", "beta"]
    assert load_json(os.path.join(out, "summary.json"))["replications"] == 4


def test_weights_file_matches_the_row_form(tmp_path, fit_path):
    weights = tmp_path / "w.csv"
    weights.write_text("axis,index,w\ntheta,r01,1\n", encoding="utf-8")
    out = str(tmp_path / "infer.csv")
    assert main(["infer", "--input", fit_path, "--row", "r01", "--weights", str(weights), "--output", out]) == 0
    df = pd.read_csv(out)
    assert df["estimate"].iloc[0] == pytest.approx(df["estimate"].iloc[1])
    assert df["se"].iloc[0] == pytest.approx(df["se"].iloc[1])


def test_rowdiff_of_a_row_with_itself_fails(fit_path):
    assert main(["infer", "--input", fit_path, "--rowdiff", "r03", "r03"]) == 2


def test_rollcall_prep_files_are_byte_identical_on_rerun(tmp_path, rollcall_csv):
    contents = []
    for k in range(2):
        out = str(tmp_path / ("run%d" % k) / "senate.csv")
        os.makedirs(os.path.dirname(out))
        assert main(["rollcall-prep", "--input", rollcall_csv, "--output", out]) == 0
        files = {}
        for name in ("senate.csv", "senate.meta.json", "senate.audit.jsonl"):
            with open(os.path.join(os.path.dirname(out), name), "rb") as f:
                files[name] = f.read()
        contents.append(files)
    assert contents[0] == contents[1]
