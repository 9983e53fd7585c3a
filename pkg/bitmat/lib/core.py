"""Data model, likelihood, gradients and variance building blocks.

Observed entries are kept as a coordinate list sorted by (row, col) together
with per-row ranges into that list and a column-major permutation with
per-column ranges, so row sweeps and column sweeps both read contiguous
slices. Nothing in here ever materializes an N x J array unless asked to via
``to_dense``.

Reduction order: every row (column) aggregate is accumulated with
``np.bincount`` over the stored cell order, which is sequential and fixed, so
results are bitwise reproducible for a given input.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from bitmat.lib.errors import DimensionError, InvalidArgumentError

logger = logging.getLogger(__name__)

CENTER_TOL = 1e-10


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ObservedBinaryMatrix:
    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    row_counts: np.ndarray = field(repr=False)
    col_counts: np.ndarray = field(repr=False)
    row_ptr: np.ndarray = field(repr=False)
    col_order: np.ndarray = field(repr=False)
    col_ptr: np.ndarray = field(repr=False)

    @classmethod
    def from_entries(cls, n_rows, n_cols, rows, cols, values):
        n_rows, n_cols = int(n_rows), int(n_cols)
        if n_rows < 1 or n_cols < 1:
            raise DimensionError(
                "matrix dimensions must be positive, got %d x %d" % (n_rows, n_cols)
            )
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.asarray(values).ravel()
        if not (rows.shape == cols.shape == values.shape):
            raise DimensionError(
                "rows/cols/values lengths differ: %d, %d, %d"
                % (rows.size, cols.size, values.size)
            )
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows):
            raise DimensionError("row index out of range [0, %d)" % n_rows)
        if cols.size and (cols.min() < 0 or cols.max() >= n_cols):
            raise DimensionError("column index out of range [0, %d)" % n_cols)
        if values.size and not np.all((values == 0) | (values == 1)):
            raise InvalidArgumentError("observed values must be 0 or 1")
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        key = rows * n_cols + cols
        dup = np.flatnonzero(np.diff(key) == 0)
        if dup.size:
            k = dup[0]
            raise InvalidArgumentError(
                "cell (%d, %d) observed more than once" % (rows[k], cols[k])
            )
        return cls._build(n_rows, n_cols, rows, cols, values)

    @classmethod
    def _build(cls, n_rows, n_cols, rows, cols, values):
        # rows/cols must already be sorted by (row, col) and duplicate free
        row_counts = np.bincount(rows, minlength=n_rows)
        col_counts = np.bincount(cols, minlength=n_cols)
        row_ptr = np.concatenate(([0], np.cumsum(row_counts)))
        col_order = np.lexsort((rows, cols))
        col_ptr = np.concatenate(([0], np.cumsum(col_counts)))
        return cls(
            n_rows=n_rows,
            n_cols=n_cols,
            rows=_frozen(rows, np.int64),
            cols=_frozen(cols, np.int64),
            values=_frozen(values, np.int8),
            row_counts=_frozen(row_counts, np.int64),
            col_counts=_frozen(col_counts, np.int64),
            row_ptr=_frozen(row_ptr, np.int64),
            col_order=_frozen(col_order, np.int64),
            col_ptr=_frozen(col_ptr, np.int64),
        )

    @classmethod
    def from_dense(cls, y, mask=None):
        """Build from a dense array; NaN (or ``mask == 0``) marks missing cells."""
        y = np.asarray(y, dtype=float)
        if y.ndim != 2:
            raise DimensionError("dense input must be 2-d, got shape %s" % (y.shape,))
        observed = ~np.isnan(y)
        if mask is not None:
            mask = np.asarray(mask).astype(bool)
            if mask.shape != y.shape:
                raise DimensionError("mask shape %s != %s" % (mask.shape, y.shape))
            observed &= mask
        rows, cols = np.nonzero(observed)
        return cls.from_entries(y.shape[0], y.shape[1], rows, cols, y[rows, cols])

    def with_values(self, values):
        """Same support, new observed values (aligned with ``self.rows``)."""
        values = np.asarray(values).ravel()
        if values.shape != self.rows.shape:
            raise DimensionError(
                "expected %d values, got %d" % (self.rows.size, values.size)
            )
        if values.size and not np.all((values == 0) | (values == 1)):
            raise InvalidArgumentError("observed values must be 0 or 1")
        return ObservedBinaryMatrix._build(
            self.n_rows, self.n_cols, self.rows, self.cols, values
        )

    def subset(self, keep_rows, keep_cols):
        """Restrict to the given rows and columns, renumbered in order."""
        keep_rows = np.asarray(keep_rows, dtype=np.int64)
        keep_cols = np.asarray(keep_cols, dtype=np.int64)
        row_map = np.full(self.n_rows, -1, dtype=np.int64)
        col_map = np.full(self.n_cols, -1, dtype=np.int64)
        row_map[keep_rows] = np.arange(keep_rows.size)
        col_map[keep_cols] = np.arange(keep_cols.size)
        r = row_map[self.rows]
        c = col_map[self.cols]
        sel = (r >= 0) & (c >= 0)
        return ObservedBinaryMatrix.from_entries(
            keep_rows.size, keep_cols.size, r[sel], c[sel], self.values[sel]
        )

    @property
    def n_obs(self):
        return int(self.rows.size)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    def row_slice(self, i):
        return slice(int(self.row_ptr[i]), int(self.row_ptr[i + 1]))

    def col_cells(self, j):
        """Positions (into the row-major cell list) of column j's cells."""
        return self.col_order[self.col_ptr[j] : self.col_ptr[j + 1]]

    def to_dense(self):
        out = np.full((self.n_rows, self.n_cols), np.nan)
        out[self.rows, self.cols] = self.values
        return out

    def mask(self):
        out = np.zeros((self.n_rows, self.n_cols), dtype=bool)
        out[self.rows, self.cols] = True
        return out

    def validate(self):
        """Re-derive the cached counts and check them against the stored ones."""
        if not np.array_equal(
            np.bincount(self.rows, minlength=self.n_rows), self.row_counts
        ):
            raise InvalidArgumentError("stored row counts disagree with entries")
        if not np.array_equal(
            np.bincount(self.cols, minlength=self.n_cols), self.col_counts
        ):
            raise InvalidArgumentError("stored column counts disagree with entries")
        return True


@dataclass(frozen=True)
class DesignStats:
    j_star_min: int
    j_star_max: int
    n_star_min: int
    n_star_max: int
    missing_fraction: float

    def as_dict(self):
        return {
            "J_star_min": self.j_star_min,
            "J_star_max": self.j_star_max,
            "N_star_min": self.n_star_min,
            "N_star_max": self.n_star_max,
            "missing_fraction": self.missing_fraction,
        }


def design_stats(data: ObservedBinaryMatrix) -> DesignStats:
    return DesignStats(
        j_star_min=int(data.row_counts.min()),
        j_star_max=int(data.row_counts.max()),
        n_star_min=int(data.col_counts.min()),
        n_star_max=int(data.col_counts.max()),
        missing_fraction=1.0 - data.n_obs / float(data.n_rows * data.n_cols),
    )


@dataclass(frozen=True)
class ModelParams:
    theta: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen(np.ravel(self.theta), float))
        object.__setattr__(self, "beta", _frozen(np.ravel(self.beta), float))

    @property
    def n_rows(self):
        return int(self.theta.size)

    @property
    def n_cols(self):
        return int(self.beta.size)

    def m(self, i, j):
        return float(self.theta[i] - self.beta[j])

    def is_centered(self, tol=CENTER_TOL):
        return abs(float(self.theta.sum())) <= tol * max(self.n_rows, 1)

    def shift(self, c):
        return ModelParams(self.theta + c, self.beta + c)


def center(params: ModelParams) -> ModelParams:
    mu = params.theta.mean()
    return ModelParams(params.theta - mu, params.beta - mu)


def _check_dims(params: ModelParams, data: ObservedBinaryMatrix):
    if params.n_rows != data.n_rows or params.n_cols != data.n_cols:
        raise DimensionError(
            "parameters are %d x %d but data is %d x %d"
            % (params.n_rows, params.n_cols, data.n_rows, data.n_cols)
        )


def linear_predictor(params: ModelParams, data: ObservedBinaryMatrix) -> np.ndarray:
    """m_ij = theta_i - beta_j on every observed cell, in stored cell order."""
    _check_dims(params, data)
    return params.theta[data.rows] - params.beta[data.cols]


def log1pexp(m):
    # log(1 + e^m) without overflow; logaddexp branches on the sign internally
    return np.logaddexp(0.0, m)


def log_likelihood(params: ModelParams, data: ObservedBinaryMatrix) -> float:
    m = linear_predictor(params, data)
    return float(np.sum(data.values * m - log1pexp(m)))


def gradient(
    params: ModelParams, data: ObservedBinaryMatrix
) -> Tuple[np.ndarray, np.ndarray]:
    m = linear_predictor(params, data)
    resid = data.values - expit(m)
    g_theta = np.bincount(data.rows, weights=resid, minlength=data.n_rows)
    g_beta = -np.bincount(data.cols, weights=resid, minlength=data.n_cols)
    return g_theta, g_beta


@dataclass(frozen=True)
class SigmaStats:
    sigma_row: np.ndarray
    sigma_col: np.ndarray
    sigma_total: float
    cell: np.ndarray = field(repr=False)
    params: Optional[ModelParams] = field(default=None, repr=False)

    def sigma_ij(self, i, j):
        if self.params is None:
            raise InvalidArgumentError("sigma_ij needs the parameters it was built from")
        p = expit(self.params.m(i, j))
        return float(p * (1.0 - p))


def sigma_stats(params: ModelParams, data: ObservedBinaryMatrix) -> SigmaStats:
    p = expit(linear_predictor(params, data))
    cell = p * (1.0 - p)
    sigma_row = np.bincount(data.rows, weights=cell, minlength=data.n_rows)
    sigma_col = np.bincount(data.cols, weights=cell, minlength=data.n_cols)
    return SigmaStats(
        sigma_row=_frozen(sigma_row, float),
        sigma_col=_frozen(sigma_col, float),
        sigma_total=float(sigma_row.sum()),
        cell=_frozen(cell, float),
        params=params,
    )


def predict_probability(params: ModelParams, i: int, j: int) -> float:
    if not (0 <= i < params.n_rows and 0 <= j < params.n_cols):
        raise DimensionError(
            "cell (%d, %d) outside %d x %d" % (i, j, params.n_rows, params.n_cols)
        )
    return float(expit(params.theta[i] - params.beta[j]))


def predict_matrix(params: ModelParams, rows, cols) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.size and (rows.min() < 0 or rows.max() >= params.n_rows):
        raise DimensionError("row index out of range [0, %d)" % params.n_rows)
    if cols.size and (cols.min() < 0 or cols.max() >= params.n_cols):
        raise DimensionError("column index out of range [0, %d)" % params.n_cols)
    return expit(params.theta[rows] - params.beta[cols])


@dataclass(frozen=True)
class LinearForm:
    """g(M) = w_g . theta + w_tilde_g . beta, optionally built from entry weights.

    ``origin`` is ``(rows, cols, weights)`` over cells; when present
    ``w_g[i] = sum_j w_ij`` and ``w_tilde_g[j] = -sum_i w_ij``.
    """

    w_g: np.ndarray
    w_tilde_g: np.ndarray
    origin: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "w_g", _frozen(np.ravel(self.w_g), float))
        object.__setattr__(self, "w_tilde_g", _frozen(np.ravel(self.w_tilde_g), float))
        if self.origin is not None:
            rows, cols, w = self.origin
            rows = _frozen(rows, np.int64)
            cols = _frozen(cols, np.int64)
            w = _frozen(w, float)
            if not (rows.shape == cols.shape == w.shape):
                raise DimensionError("origin rows/cols/weights lengths differ")
            row_sum = np.bincount(rows, weights=w, minlength=self.w_g.size)
            col_sum = np.bincount(cols, weights=w, minlength=self.w_tilde_g.size)
            if row_sum.size != self.w_g.size or col_sum.size != self.w_tilde_g.size:
                raise DimensionError("origin indices exceed form dimensions")
            if not (
                np.array_equal(row_sum, self.w_g)
                and np.array_equal(-col_sum, self.w_tilde_g)
            ):
                raise InvalidArgumentError("origin weights disagree with (w_g, w_tilde_g)")
            object.__setattr__(self, "origin", (rows, cols, w))

    @classmethod
    def from_entries(cls, n_rows, n_cols, rows, cols, weights, name=""):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        weights = np.asarray(weights, dtype=float).ravel()
        if rows.size and (
            rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols
        ):
            raise DimensionError("entry weight outside %d x %d" % (n_rows, n_cols))
        w_g = np.bincount(rows, weights=weights, minlength=n_rows)
        w_tilde = -np.bincount(cols, weights=weights, minlength=n_cols)
        return cls(w_g, w_tilde, origin=(rows, cols, weights), name=name)

    @classmethod
    def from_vectors(cls, w_g, w_tilde_g, name=""):
        return cls(np.asarray(w_g, float), np.asarray(w_tilde_g, float), name=name)

    @classmethod
    def entry(cls, n_rows, n_cols, i, j):
        return cls.from_entries(n_rows, n_cols, [i], [j], [1.0], name="m[%d,%d]" % (i, j))

    @classmethod
    def row(cls, n_rows, n_cols, i):
        if not 0 <= i < n_rows:
            raise DimensionError("row %d outside [0, %d)" % (i, n_rows))
        w = np.zeros(n_rows)
        w[i] = 1.0
        return cls(w, np.zeros(n_cols), name="theta[%d]" % i)

    @classmethod
    def col(cls, n_rows, n_cols, j):
        if not 0 <= j < n_cols:
            raise DimensionError("column %d outside [0, %d)" % (j, n_cols))
        w = np.zeros(n_cols)
        w[j] = 1.0
        return cls(np.zeros(n_rows), w, name="beta[%d]" % j)

    @classmethod
    def rowdiff(cls, n_rows, n_cols, i, k):
        if i == k:
            raise InvalidArgumentError("row difference needs two distinct rows, got %d twice" % i)
        for r in (i, k):
            if not 0 <= r < n_rows:
                raise DimensionError("row %d outside [0, %d)" % (r, n_rows))
        w = np.zeros(n_rows)
        w[i], w[k] = 1.0, -1.0
        return cls(w, np.zeros(n_cols), name="theta[%d]-theta[%d]" % (i, k))

    @property
    def n_rows(self):
        return int(self.w_g.size)

    @property
    def n_cols(self):
        return int(self.w_tilde_g.size)

    def evaluate(self, params: ModelParams) -> float:
        if params.n_rows != self.n_rows or params.n_cols != self.n_cols:
            raise DimensionError(
                "form is %d x %d but parameters are %d x %d"
                % (self.n_rows, self.n_cols, params.n_rows, params.n_cols)
            )
        return float(self.w_g @ params.theta + self.w_tilde_g @ params.beta)

    def is_zero(self):
        return not (np.any(self.w_g) or np.any(self.w_tilde_g))

    def norms(self):
        return float(np.abs(self.w_g).sum()), float(np.abs(self.w_tilde_g).sum())

    def identified(self) -> "LinearForm":
        """Shift-invariant form equal to this one whenever sum(theta) = 0."""
        s = float(self.w_g.sum() + self.w_tilde_g.sum())
        if s == 0.0:
            return self
        return LinearForm(self.w_g - s / self.n_rows, self.w_tilde_g, name=self.name)

    def aggregates(self):
        """(w_{i+}, w_{+j}, w_{++}); from the entry weights when available."""
        if self.origin is not None:
            rows, cols, w = self.origin
            w_row = np.bincount(rows, weights=w, minlength=self.n_rows)
            w_col = np.bincount(cols, weights=w, minlength=self.n_cols)
            return w_row, w_col, float(w.sum())
        g = self.identified()
        return g.w_g.copy(), -g.w_tilde_g, float(g.w_g.sum())
