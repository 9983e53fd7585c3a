"""Tests for roll-call preprocessing."""

import numpy as np
import pandas as pd
import pytest

from bitmat.lib.errors import InvalidArgumentError, ParseError
from bitmat.modules.rollcall.preprocess import (
    ROLLCALL_HEADER,
    RollCallPreprocessor,
    preprocess_rollcall,
    read_rollcall,
)

SENATORS = ["Alexander", "Barrasso", "Baucus", "Boxer", "Cantwell", "Coburn", "DeMint", "Durbin", "Sanders"]
BILLS = ["B01", "B02", "B05", "B06", "B07", "B08", "B12"]
NA = np.nan
EXPECTED = np.array(
    [
        [1, 1, 1, 0, 1, 1, 1],
        [1, 1, 1, 1, 1, 1, 0],
        [0, 0, 1, 0, 1, 1, 0],
        [0, 0, 0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 0, NA],
        [1, 1, 1, 1, NA, 1, 1],
        [1, 1, 0, 1, 1, 1, 1],
        [0, 0, 0, 0, NA, 0, 1],
        [0, 0, 0, 0, NA, 0, 1],
    ]
)


def test_fixture_matrix(rollcall_csv):
    result = preprocess_rollcall(rollcall_csv)
    mf = result.matrix
    assert mf.row_labels == SENATORS
    assert mf.col_labels == BILLS
    np.testing.assert_array_equal(mf.data.to_dense(), EXPECTED)


def test_fixture_counts_and_audit(rollcall_csv):
    result = preprocess_rollcall(rollcall_csv)
    counts = result.counts
    assert counts["senators_in"] == 11
    assert counts["bills_in"] == 12
    assert counts["senators_out"] == 9
    assert counts["bills_out"] == 7
    assert counts["missing_fraction"] == pytest.approx(4 / 63)
    assert counts["dropped_service"] == 1
    assert counts["dropped_tie"] == 2
    assert counts["dropped_no_votes"] == 2
    assert counts["dropped_constant"] == 1
    assert counts["dropped_no_observations"] == 1

    by_step = {}
    for rec in result.audit:
        by_step.setdefault(rec["step"], []).append(rec)
    assert [r["senator"] for r in by_step["service"]] == ["Goodwin"]
    assert by_step["service"][0]["days"] == 57
    assert [r["bill"] for r in by_step["tie"]] == ["B03", "B11"]
    assert [r["bill"] for r in by_step["constant"]] == ["B04"]
    assert sorted(r["bill"] for r in by_step["no_votes"]) == ["B09", "B10"]
    assert [r["senator"] for r in by_step["no_observations"]] == ["Kirk"]
    skipped = [r for r in by_step["no_votes"] if r["bill"] == "B09"][0]
    assert skipped["reason"] == "Rep did not vote"


def test_orientation_follows_the_chosen_party(rollcall_csv):
    flipped = preprocess_rollcall(rollcall_csv, party_a="Dem", party_b="Rep")
    base = preprocess_rollcall(rollcall_csv)
    assert flipped.matrix.col_labels == base.matrix.col_labels
    np.testing.assert_array_equal(flipped.matrix.data.to_dense(), 1 - base.matrix.data.to_dense())


def test_service_threshold_is_configurable(rollcall_csv):
    result = preprocess_rollcall(rollcall_csv, min_service_days=0)
    assert result.counts["dropped_service"] == 0
    assert "Goodwin" in result.matrix.row_labels


def test_dataframe_input(rollcall_csv):
    df = read_rollcall(rollcall_csv)
    assert list(df.columns) == ROLLCALL_HEADER
    result = preprocess_rollcall(df)
    assert result.matrix.data.n_obs == 59


def _csv(tmp_path, rows):
    path = tmp_path / "votes.csv"
    pd.DataFrame(rows, columns=ROLLCALL_HEADER).to_csv(path, index=False)
    return str(path)


@pytest.mark.parametrize(
    "bad_row",
    [
        ["Y", "Rep", "B2", "Maybe", "2010-01-01"],
        ["Y", "Green", "B2", "Yea", "2010-01-01"],
        ["Y", "Rep", "B2", "Yea", "01/02/2010"],
        ["X", "Rep", "B1", "Nay", "2010-01-01"],
    ],
)
def test_bad_records_are_parse_errors(tmp_path, bad_row):
    rows = [["X", "Rep", "B1", "Yea", "2010-01-01"], ["Z", "Dem", "B1", "Nay", "2010-01-01"], bad_row]
    with pytest.raises(ParseError) as e:
        read_rollcall(_csv(tmp_path, rows))
    assert e.value.line == 4


def test_party_arguments_are_checked(rollcall_csv):
    with pytest.raises(InvalidArgumentError):
        RollCallPreprocessor(party_a="Rep", party_b="Rep")
    with pytest.raises(InvalidArgumentError):
        preprocess_rollcall(rollcall_csv, party_b="Green")


def test_preprocessing_is_deterministic(rollcall_csv):
    first = preprocess_rollcall(rollcall_csv)
    second = preprocess_rollcall(rollcall_csv)
    assert first.matrix.row_labels == second.matrix.row_labels
    assert first.matrix.col_labels == second.matrix.col_labels
    for name in ("rows", "cols", "values"):
        assert np.array_equal(getattr(first.matrix.data, name), getattr(second.matrix.data, name))
    assert first.audit == second.audit
    assert first.counts == second.counts
