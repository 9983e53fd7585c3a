"""Tests for MatrixFile CSVs, weights files and canonical JSON."""

import json
import os

import numpy as np
import pytest

from bitmat.lib.core import ObservedBinaryMatrix
from bitmat.lib.errors import InvalidArgumentError, ParseError
from bitmat.lib.fileio import (
    MatrixFile,
    canonical_json,
    dump_json,
    load_json,
    read_matrix_file,
    read_weights_file,
    sidecar_path,
    write_matrix_file,
)


def _write(path, text):
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return str(path)


def _labelled(tmp_path):
    data = ObservedBinaryMatrix.from_entries(3, 2, [0, 0, 1, 2], [0, 1, 1, 0], [1, 0, 1, 0])
    mf = MatrixFile(data=data, row_labels=["ann", "bob", "cy"], col_labels=["q1", "q2"])
    path = str(tmp_path / "m.csv")
    write_matrix_file(path, mf)
    return path, mf


def test_matrix_file_round_trip_keeps_labels(tmp_path):
    path, mf = _labelled(tmp_path)
    assert os.path.exists(sidecar_path(path))
    back = read_matrix_file(path)
    assert back.data.shape == (3, 2)
    assert np.array_equal(back.data.values, mf.data.values)
    assert back.row_labels == ["ann", "bob", "cy"]
    assert back.row_index("bob") == 1
    assert back.col_index("1") == 1
    assert back.col_label(0) == "q1"
    with open(path, encoding="utf-8") as f:
        assert f.readline().strip() == "i,j,y"


def test_unknown_labels_and_indices(tmp_path):
    path, _ = _labelled(tmp_path)
    mf = read_matrix_file(path)
    with pytest.raises(InvalidArgumentError):
        mf.row_index("dora")
    with pytest.raises(InvalidArgumentError):
        mf.row_index("3")


def test_dimensions_come_from_the_data_without_a_sidecar(tmp_path):
    path = _write(tmp_path / "plain.csv", "i,j,y\n0,0,1\n2,1,0\n")
    mf = read_matrix_file(path)
    assert mf.data.shape == (3, 2)
    assert mf.row_labels is None
    assert mf.row_label(2) == "2"


def test_shared_meta_json_is_used(tmp_path):
    path = _write(tmp_path / "plain.csv", "i,j,y\n0,0,1\n")
    _write(tmp_path / "meta.json", json.dumps({"N": 2, "J": 3}))
    assert read_matrix_file(path).data.shape == (2, 3)


@pytest.mark.parametrize(
    "text, line",
    [
        ("", 1),
        ("row,col,y\n0,0,1\n", 1),
        ("i,j,y\n", 2),
        ("i,j,y\n0,0,1\n0,1,2\n", 3),
        ("i,j,y\n0,0,1\n-1,1,0\n", 3),
        ("i,j,y\n0,0,1\n0,x,0\n", 3),
        ("i,j,y\n0,0,1\n1,1,0\n0,0,0\n", 4),
    ],
)
def test_parse_errors_carry_the_line(tmp_path, text, line):
    path = _write(tmp_path / "bad.csv", text)
    with pytest.raises(ParseError) as e:
        read_matrix_file(path)
    assert e.value.line == line
    assert e.value.exit_code == 2
    assert str(e.value).startswith(path)


def test_sidecar_bounds_are_enforced(tmp_path):
    path = _write(tmp_path / "m.csv", "i,j,y\n0,0,1\n2,0,1\n")
    _write(tmp_path / "m.meta.json", json.dumps({"N": 2, "J": 1}))
    with pytest.raises(ParseError) as e:
        read_matrix_file(path)
    assert e.value.line == 3


def test_missing_file(tmp_path):
    with pytest.raises(ParseError):
        read_matrix_file(str(tmp_path / "nope.csv"))


def test_entry_weights_file(tmp_path):
    path, _ = _labelled(tmp_path)
    mf = read_matrix_file(path)
    w = _write(tmp_path / "w.csv", "i,j,w\nann,q2,1.5\n2,0,-0.5\n")
    g = read_weights_file(w, mf)
    assert g.origin is not None
    assert g.w_g.tolist() == [1.5, 0.0, -0.5]
    assert g.w_tilde_g.tolist() == [0.5, -1.5]
    assert g.name == "w.csv"


def test_entry_weights_on_unobserved_cells_are_rejected(tmp_path):
    path, _ = _labelled(tmp_path)
    mf = read_matrix_file(path)
    # (bob, q1) is not observed
    w = _write(tmp_path / "w.csv", "i,j,w\nann,q1,1\ncy,q1,2\nbob,q1,1\n")
    with pytest.raises(ParseError) as e:
        read_weights_file(w, mf)
    assert e.value.line == 4
    assert "unobserved" in str(e.value)


def test_vector_weights_file(tmp_path):
    path, _ = _labelled(tmp_path)
    mf = read_matrix_file(path)
    w = _write(tmp_path / "v.csv", "axis,index,w\ntheta,ann,1\ntheta,bob,-1\nbeta,q1,2\n")
    g = read_weights_file(w, mf)
    assert g.origin is None
    assert g.w_g.tolist() == [1.0, -1.0, 0.0]
    assert g.w_tilde_g.tolist() == [2.0, 0.0]

    bad = _write(tmp_path / "x.csv", "axis,index,w\ntheta,ann,1\ngamma,0,1\n")
    with pytest.raises(ParseError) as e:
        read_weights_file(bad, mf)
    assert e.value.line == 3

    unknown = _write(tmp_path / "u.csv", "i,j,w\ndora,q1,1\n")
    with pytest.raises(ParseError) as e:
        read_weights_file(unknown, mf)
    assert e.value.line == 2


def test_canonical_json():
    text = canonical_json({"b": 1.0, "a": [float("nan"), 0.1, True, None], "c": np.int64(3)})
    assert text == '{"a": [null, 0.10000000000000001, true, null], "b": 1, "c": 3}\n'
    assert json.loads(text)["c"] == 3


def test_json_files(tmp_path):
    path = str(tmp_path / "out" / "x.json")
    dump_json({"theta": np.array([0.25, -0.25])}, path)
    assert load_json(path) == {"theta": [0.25, -0.25]}
    broken = _write(tmp_path / "broken.json", "{")
    with pytest.raises(ParseError):
        load_json(broken)
    with pytest.raises(ParseError):
        load_json(str(tmp_path / "missing.json"))
