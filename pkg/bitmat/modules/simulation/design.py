import logging

logger = logging.getLogger(__name__)

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from bitmat.lib.core import DesignStats, ObservedBinaryMatrix
from bitmat.lib.errors import DimensionError, IdentifiabilityError, InvalidArgumentError

KINDS = ("full", "block", "bernoulli", "explicit")

# row clusters x column clusters; each column of this array is one of the
# cluster vectors (1,0,0,1,0), (1,1,0,0,1), (0,1,1,1,0), (0,0,1,0,1)
BLOCK_MASK = np.array(
    [
        [1, 0, 0, 1, 0],
        [1, 1, 0, 0, 1],
        [0, 1, 1, 1, 0],
        [0, 0, 1, 0, 1],
    ],
    dtype=bool,
).T


@dataclass(frozen=True)
class MissingDesign:
    """Which cells of an N x J matrix are observed.

    ``block`` repeats ``block_mask`` over equal-sized clusters, ``bernoulli``
    observes each cell independently with probability ``rate`` (drawn from
    ``seed``), ``explicit`` lists the observed cells.
    """

    kind: str
    n_rows: int
    n_cols: int
    block_mask: Optional[np.ndarray] = field(default=None, repr=False)
    rate: Optional[float] = None
    seed: int = 0
    cells: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError("design kind must be one of %s, got %r" % (KINDS, self.kind))
        if self.n_rows < 1 or self.n_cols < 1:
            raise DimensionError("design dimensions must be positive")
        if self.kind == "block":
            mask = np.asarray(self.block_mask, dtype=bool)
            if mask.ndim != 2:
                raise DimensionError("block_mask must be 2-d")
            rc, cc = mask.shape
            if self.n_rows % rc or self.n_cols % cc:
                raise DimensionError(
                    "%d x %d is not divisible into %d x %d equal blocks"
                    % (self.n_rows, self.n_cols, rc, cc)
                )
            object.__setattr__(self, "block_mask", mask)
        elif self.kind == "bernoulli":
            if self.rate is None or not 0.0 < self.rate <= 1.0:
                raise InvalidArgumentError("bernoulli rate must lie in (0, 1]")
        elif self.kind == "explicit":
            if self.cells is None:
                raise InvalidArgumentError("explicit design needs its observed cells")
            rows = np.asarray(self.cells[0], dtype=np.int64)
            cols = np.asarray(self.cells[1], dtype=np.int64)
            if rows.shape != cols.shape:
                raise DimensionError("explicit cells: rows and cols lengths differ")
            object.__setattr__(self, "cells", (rows, cols))

    def support(self):
        """Observed cells as (rows, cols), sorted by (row, col).

        Raises IdentifiabilityError when a row or column ends up unobserved.
        """
        n, J = self.n_rows, self.n_cols
        if self.kind == "full":
            rows, cols = np.divmod(np.arange(n * J, dtype=np.int64), J)
        elif self.kind == "block":
            rc, cc = self.block_mask.shape
            row_cluster = np.arange(n) // (n // rc)
            col_cluster = np.arange(J) // (J // cc)
            rows, cols = np.nonzero(self.block_mask[np.ix_(row_cluster, col_cluster)])
        elif self.kind == "bernoulli":
            rng = np.random.Generator(np.random.Philox(self.seed))
            rows, cols = np.nonzero(rng.random((n, J)) < self.rate)
        else:
            rows, cols = self.cells
            order = np.lexsort((cols, rows))
            rows, cols = rows[order], cols[order]
        rows = rows.astype(np.int64)
        cols = cols.astype(np.int64)
        empty_rows = np.flatnonzero(np.bincount(rows, minlength=n) == 0)
        empty_cols = np.flatnonzero(np.bincount(cols, minlength=J) == 0)
        if empty_rows.size or empty_cols.size:
            raise IdentifiabilityError(
                "%s design leaves rows %s and columns %s unobserved"
                % (self.kind, empty_rows[:10].tolist(), empty_cols[:10].tolist())
            )
        return rows, cols

    def to_matrix(self, values=None):
        """ObservedBinaryMatrix on this support (all zeros unless given)."""
        rows, cols = self.support()
        if values is None:
            values = np.zeros(rows.size, dtype=np.int8)
        return ObservedBinaryMatrix.from_entries(self.n_rows, self.n_cols, rows, cols, values)

    def stats(self) -> DesignStats:
        rows, cols = self.support()
        row_counts = np.bincount(rows, minlength=self.n_rows)
        col_counts = np.bincount(cols, minlength=self.n_cols)
        return DesignStats(
            j_star_min=int(row_counts.min()),
            j_star_max=int(row_counts.max()),
            n_star_min=int(col_counts.min()),
            n_star_max=int(col_counts.max()),
            missing_fraction=1.0 - rows.size / float(self.n_rows * self.n_cols),
        )

    def as_dict(self):
        d = {"kind": self.kind, "n_rows": self.n_rows, "n_cols": self.n_cols}
        if self.kind == "block":
            d["block_mask"] = self.block_mask.astype(int).tolist()
        elif self.kind == "bernoulli":
            d["rate"] = self.rate
            d["seed"] = self.seed
        return d


def make_full_design(n_rows, n_cols) -> MissingDesign:
    return MissingDesign("full", int(n_rows), int(n_cols))


def make_block_design(n_rows, n_cols, block_mask=None) -> MissingDesign:
    mask = BLOCK_MASK if block_mask is None else block_mask
    return MissingDesign("block", int(n_rows), int(n_cols), block_mask=mask)


def make_bernoulli_design(n_rows, n_cols, rate, seed=0) -> MissingDesign:
    return MissingDesign("bernoulli", int(n_rows), int(n_cols), rate=float(rate), seed=int(seed))


def make_explicit_design(n_rows, n_cols, rows, cols) -> MissingDesign:
    return MissingDesign("explicit", int(n_rows), int(n_cols), cells=(rows, cols))


def make_linking_design(n_per_form, items_per_form, n_anchor) -> MissingDesign:
    """Two test forms answered by disjoint groups, sharing ``n_anchor`` items.

    Form A is rows [0, n) x columns [0, items); form B is rows [n, 2n) x
    columns [items - n_anchor, 2 * items - n_anchor).
    """
    n, k, a = int(n_per_form), int(items_per_form), int(n_anchor)
    if n < 1 or k < 1:
        raise DimensionError("forms need at least one examinee and one item")
    if not 0 <= a <= k:
        raise InvalidArgumentError("anchor count must lie in [0, %d], got %d" % (k, a))
    if a == 0:
        logger.warning("linking design without anchor items is disconnected")
    n_cols = 2 * k - a
    rows_a, cols_a = np.divmod(np.arange(n * k, dtype=np.int64), k)
    rows_b = rows_a + n
    cols_b = cols_a + (k - a)
    return make_explicit_design(
        2 * n, n_cols, np.concatenate([rows_a, rows_b]), np.concatenate([cols_a, cols_b])
    )


def design_from_dict(d, n_rows=None, n_cols=None) -> MissingDesign:
    """Build a design from a study-config ``design`` section."""
    d = dict(d or {})
    kind = d.get("kind", "full")
    if kind == "linking":
        return make_linking_design(d["n_per_form"], d["items_per_form"], d["n_anchor"])
    n_rows = int(d.get("n_rows", n_rows))
    n_cols = int(d.get("n_cols", n_cols))
    if kind == "full":
        return make_full_design(n_rows, n_cols)
    if kind == "block":
        mask = d.get("block_mask")
        return make_block_design(n_rows, n_cols, None if mask is None else np.asarray(mask, dtype=bool))
    if kind == "bernoulli":
        return make_bernoulli_design(n_rows, n_cols, d.get("rate"), d.get("seed", 0))
    raise InvalidArgumentError("unknown design kind %r" % kind)
