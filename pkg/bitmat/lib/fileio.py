"""File formats: MatrixFile CSV + sidecar, canonical JSON, CSV tables."""

import json
import logging
import math
import os
import re
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import pandas as pd

from bitmat.lib.core import LinearForm, ObservedBinaryMatrix
from bitmat.lib.errors import BitmatError, InvalidArgumentError, ParseError

logger = logging.getLogger(__name__)

MATRIX_HEADER = ["i", "j", "y"]
MASK_HEADER = ["i", "j"]
ENTRY_WEIGHTS_HEADER = ["i", "j", "w"]
VECTOR_WEIGHTS_HEADER = ["axis", "index", "w"]
FLOAT_FORMAT = "%.17g"


def sidecar_path(path):
    stem, _ = os.path.splitext(path)
    return stem + ".meta.json"


def _find_sidecar(path):
    for candidate in (sidecar_path(path), os.path.join(os.path.dirname(path) or ".", "meta.json")):
        if os.path.exists(candidate):
            return candidate
    return None


def read_table(path, header):
    """CSV with an exact header, all cells kept as strings."""
    if not os.path.exists(path):
        raise ParseError("file not found", path=path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ParseError("empty file, expected header %s" % ",".join(header), line=1, path=path)
    except pd.errors.ParserError as e:
        m = re.search(r"line (\d+)", str(e))
        raise ParseError(str(e).strip(), line=int(m.group(1)) if m else None, path=path)
    columns = [c.strip() for c in df.columns]
    if columns != header:
        raise ParseError(
            "expected header %s, got %s" % (",".join(header), ",".join(columns)), line=1, path=path
        )
    df.columns = columns
    return df


def parse_int_column(df, name, path, lo=0, hi=None):
    """Column ``name`` as int64; errors carry the 1-based file line (header = 1)."""
    values = pd.to_numeric(df[name].str.strip(), errors="coerce")
    bad = values.isna() | (values != values.round())
    if hi is not None:
        bad |= (values < lo) | (values >= hi)
    else:
        bad |= values < lo
    if bad.any():
        k = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError(
            "bad %s value %r" % (name, df[name].iloc[k]), line=k + 2, path=path
        )
    return values.to_numpy(dtype=np.int64)


def parse_float_column(df, name, path):
    values = pd.to_numeric(df[name].str.strip(), errors="coerce")
    bad = values.isna() | ~np.isfinite(values.to_numpy(dtype=float, na_value=np.nan))
    if bad.any():
        k = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError("bad %s value %r" % (name, df[name].iloc[k]), line=k + 2, path=path)
    return values.to_numpy(dtype=float)


def _check_labels(labels, expected, what, path):
    if labels is None:
        return None
    labels = [str(x) for x in labels]
    if len(labels) != expected:
        raise ParseError("%d %s labels for %d %ss" % (len(labels), what, expected, what), path=path)
    if len(set(labels)) != len(labels):
        seen = set()
        dup = next(x for x in labels if x in seen or seen.add(x))
        raise ParseError("duplicate %s label %r" % (what, dup), path=path)
    return labels


@dataclass
class MatrixFile:
    data: ObservedBinaryMatrix
    row_labels: Optional[List[str]] = None
    col_labels: Optional[List[str]] = None
    path: str = ""

    def row_label(self, i):
        return self.row_labels[i] if self.row_labels else str(i)

    def col_label(self, j):
        return self.col_labels[j] if self.col_labels else str(j)

    def row_index(self, token):
        return _resolve(token, self.row_labels, self.data.n_rows, "row")

    def col_index(self, token):
        return _resolve(token, self.col_labels, self.data.n_cols, "column")

    def meta(self):
        d = {"N": self.data.n_rows, "J": self.data.n_cols}
        if self.row_labels is not None:
            d["row_labels"] = list(self.row_labels)
        if self.col_labels is not None:
            d["col_labels"] = list(self.col_labels)
        return d


def _resolve(token, labels, size, what):
    """Label first, then a 0-based index."""
    token = str(token)
    if labels is not None and token in labels:
        return labels.index(token)
    try:
        k = int(token)
    except ValueError:
        raise InvalidArgumentError("unknown %s label %r" % (what, token))
    if not 0 <= k < size:
        raise InvalidArgumentError("%s index %d outside [0, %d)" % (what, k, size))
    return k


def read_matrix_file(path, meta_path=None) -> MatrixFile:
    df = read_table(path, MATRIX_HEADER)
    if df.empty:
        raise ParseError("no observed entries", line=2, path=path)
    meta_path = meta_path or _find_sidecar(path)
    meta = {}
    if meta_path is not None:
        try:
            with open(meta_path, "r", encoding="utf-8") as f:
                meta = json.load(f)
        except ValueError as e:
            raise ParseError("sidecar is not valid JSON: %s" % e, path=meta_path)
    n_rows = meta.get("N")
    n_cols = meta.get("J")
    rows = parse_int_column(df, "i", path, hi=n_rows)
    cols = parse_int_column(df, "j", path, hi=n_cols)
    y = parse_int_column(df, "y", path, hi=2)
    n_rows = int(n_rows) if n_rows is not None else int(rows.max()) + 1
    n_cols = int(n_cols) if n_cols is not None else int(cols.max()) + 1
    key = pd.Series(rows * n_cols + cols)
    dup = key.duplicated()
    if dup.any():
        k = int(np.flatnonzero(dup.to_numpy())[0])
        raise ParseError("cell (%d, %d) listed twice" % (rows[k], cols[k]), line=k + 2, path=path)
    data = ObservedBinaryMatrix.from_entries(n_rows, n_cols, rows, cols, y)
    logger.info("read %s: %d x %d with %d observed entries", path, n_rows, n_cols, data.n_obs)
    return MatrixFile(
        data=data,
        row_labels=_check_labels(meta.get("row_labels"), n_rows, "row", meta_path),
        col_labels=_check_labels(meta.get("col_labels"), n_cols, "column", meta_path),
        path=path,
    )


def write_csv(path, header, rows):
    df = pd.DataFrame(list(rows), columns=header)
    _ensure_dir(path)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")
    return path


def write_matrix_file(path, mf: MatrixFile):
    data = mf.data
    write_csv(path, MATRIX_HEADER, zip(data.rows.tolist(), data.cols.tolist(), data.values.tolist()))
    dump_json(mf.meta(), sidecar_path(path))
    return path


def write_mask_file(path, rows, cols):
    return write_csv(path, MASK_HEADER, zip(np.asarray(rows).tolist(), np.asarray(cols).tolist()))


def read_weights_file(path, mf: MatrixFile, name="") -> LinearForm:
    """Entry weights (``i,j,w``) or coefficient vectors (``axis,index,w``).

    Indices may be labels from the sidecar. Entry weights keep their origin,
    so the refined and exact variances can use them; they must sit on
    observed cells.
    """
    n, J = mf.data.n_rows, mf.data.n_cols
    name = name or os.path.basename(path)
    try:
        df = read_table(path, ENTRY_WEIGHTS_HEADER)
        kind = "entries"
    except ParseError as e:
        if e.line != 1:
            raise
        df = read_table(path, VECTOR_WEIGHTS_HEADER)
        kind = "vectors"
    if df.empty:
        raise ParseError("weights file lists no weights", line=2, path=path)
    w = parse_float_column(df, "w", path)

    def resolve_all(column, resolver):
        out = []
        for k, token in enumerate(df[column].str.strip()):
            try:
                out.append(resolver(token))
            except BitmatError as e:
                raise ParseError(str(e), line=k + 2, path=path)
        return np.asarray(out, dtype=np.int64)

    if kind == "entries":
        rows = resolve_all("i", mf.row_index)
        cols = resolve_all("j", mf.col_index)
        unobserved = np.flatnonzero(~np.isin(rows * J + cols, mf.data.rows * J + mf.data.cols))
        if unobserved.size:
            k = int(unobserved[0])
            raise ParseError(
                "entry weight on unobserved cell (%d, %d)" % (rows[k], cols[k]),
                line=k + 2,
                path=path,
            )
        return LinearForm.from_entries(n, J, rows, cols, w, name=name)

    w_g = np.zeros(n)
    w_tilde = np.zeros(J)
    for k, axis in enumerate(df["axis"].str.strip()):
        token = df["index"].iloc[k].strip()
        try:
            if axis == "theta":
                w_g[mf.row_index(token)] += w[k]
            elif axis == "beta":
                w_tilde[mf.col_index(token)] += w[k]
            else:
                raise InvalidArgumentError("axis must be theta or beta, got %r" % axis)
        except BitmatError as e:
            raise ParseError(str(e), line=k + 2, path=path)
    return LinearForm.from_vectors(w_g, w_tilde, name=name)


def _canonical(obj):
    if isinstance(obj, dict):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ", ".join("%s: %s" % (json.dumps(k), _canonical(v)) for k, v in items) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_canonical(v) for v in list(obj)) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        return format(x, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    raise TypeError("cannot serialize %s" % type(obj).__name__)


def canonical_json(obj):
    """Sorted keys, floats with 17 significant digits, NaN/inf as null."""
    return _canonical(obj) + "\n"


def dump_json(obj, path):
    _ensure_dir(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(canonical_json(obj))
    return path


def load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ParseError("file not found", path=path)
    except ValueError as e:
        raise ParseError("invalid JSON: %s" % e, path=path)


def write_jsonl(path, records):
    _ensure_dir(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            f.write(_canonical(rec) + "\n")
    return path


def _ensure_dir(path):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
