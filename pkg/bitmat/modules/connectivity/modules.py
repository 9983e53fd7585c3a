import logging

logger = logging.getLogger(__name__)

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from bitmat.lib.core import ModelParams, ObservedBinaryMatrix, center
from bitmat.lib.errors import (
    DimensionError,
    IdentifiabilityError,
    InconsistentSystemError,
)
from bitmat.lib.unionfind import UnionFind

CYCLE_TOL = 1e-8


@dataclass(frozen=True)
class ConnectivityReport:
    """Bipartite connectivity of the observation pattern.

    Nodes ``0..N-1`` are rows, ``N..N+J-1`` are columns. ``witness`` is a
    parameter shift ``(d_theta, d_beta)`` that keeps sum(theta) and every
    observed m_ij unchanged; it is only set when the design is disconnected.
    """

    n_rows: int
    n_cols: int
    connected: bool
    components: List[List[int]]
    empty_rows: List[int] = field(default_factory=list)
    empty_cols: List[int] = field(default_factory=list)
    witness: Optional[Tuple[np.ndarray, np.ndarray]] = None

    @property
    def n_components(self):
        return len(self.components)

    def split_nodes(self, component):
        rows = [v for v in component if v < self.n_rows]
        cols = [v - self.n_rows for v in component if v >= self.n_rows]
        return rows, cols

    def apply_witness(self, params: ModelParams) -> ModelParams:
        """The alternative solution (theta~, beta~) built from ``params``."""
        if self.witness is None:
            raise IdentifiabilityError("design is connected; no alternative solution exists")
        d_theta, d_beta = self.witness
        return ModelParams(params.theta + d_theta, params.beta + d_beta)

    def describe(self):
        parts = []
        for k, comp in enumerate(self.components):
            rows, cols = self.split_nodes(comp)
            parts.append("component %d: %d rows, %d columns" % (k, len(rows), len(cols)))
        if self.empty_rows:
            parts.append("rows without observations: %s" % self.empty_rows[:10])
        if self.empty_cols:
            parts.append("columns without observations: %s" % self.empty_cols[:10])
        return "; ".join(parts)


def _witness(n_rows, n_cols, components):
    first = components[0]
    rest = [v for comp in components[1:] for v in comp]
    n1 = sum(1 for v in first if v < n_rows)
    n2 = sum(1 for v in rest if v < n_rows)
    shift = np.zeros(n_rows + n_cols)
    if n2 > 0:
        tau = n1 / float(n2)
        shift[first] = 1.0
        shift[rest] = -tau
    else:
        # every row sits in the first component; move the row-free rest
        shift[rest] = 1.0
    return shift[:n_rows], shift[n_rows:]


def check_connectivity(data: ObservedBinaryMatrix) -> ConnectivityReport:
    n_rows, n_cols = data.n_rows, data.n_cols
    uf = UnionFind(n_rows + n_cols)
    for i, j in zip(data.rows.tolist(), data.cols.tolist()):
        uf.union(i, n_rows + j)
    components = uf.groups()
    empty_rows = np.flatnonzero(data.row_counts == 0).tolist()
    empty_cols = np.flatnonzero(data.col_counts == 0).tolist()
    if empty_rows or empty_cols:
        logger.warning(
            "%d rows and %d columns have no observed entries",
            len(empty_rows),
            len(empty_cols),
        )
    connected = len(components) == 1
    witness = None if connected else _witness(n_rows, n_cols, components)
    if not connected:
        logger.info("design splits into %d components", len(components))
    return ConnectivityReport(
        n_rows=n_rows,
        n_cols=n_cols,
        connected=connected,
        components=components,
        empty_rows=empty_rows,
        empty_cols=empty_cols,
        witness=witness,
    )


def require_connected(data: ObservedBinaryMatrix) -> ConnectivityReport:
    report = check_connectivity(data)
    if not report.connected:
        raise IdentifiabilityError(
            "parameters are not identifiable: %s" % report.describe(),
            components=report.components,
        )
    return report


def anchored_solve(data: ObservedBinaryMatrix, m_values) -> ModelParams:
    """Recover the unique centered (theta, beta) from observed m_ij.

    Breadth-first propagation along observed cells starting at row 0, then a
    residual check over every cell (a nonzero residual means some cycle has a
    nonzero alternating sum), then centering.
    """
    m_values = np.asarray(m_values, dtype=float).ravel()
    if m_values.size != data.n_obs:
        raise DimensionError("expected %d m values, got %d" % (data.n_obs, m_values.size))
    require_connected(data)

    theta = np.zeros(data.n_rows)
    beta = np.zeros(data.n_cols)
    known_r = np.zeros(data.n_rows, dtype=bool)
    known_c = np.zeros(data.n_cols, dtype=bool)
    known_r[0] = True
    frontier_rows = np.array([0])
    while frontier_rows.size:
        cells = np.flatnonzero(np.isin(data.rows, frontier_rows))
        cells = cells[~known_c[data.cols[cells]]]
        new_cols = data.cols[cells]
        beta[new_cols] = theta[data.rows[cells]] - m_values[cells]
        known_c[new_cols] = True
        frontier_cols = np.unique(new_cols)

        cells = np.flatnonzero(np.isin(data.cols, frontier_cols))
        cells = cells[~known_r[data.rows[cells]]]
        new_rows = data.rows[cells]
        theta[new_rows] = beta[data.cols[cells]] + m_values[cells]
        known_r[new_rows] = True
        frontier_rows = np.unique(new_rows)

    residual = theta[data.rows] - beta[data.cols] - m_values
    worst = float(np.max(np.abs(residual))) if residual.size else 0.0
    if worst > CYCLE_TOL:
        k = int(np.argmax(np.abs(residual)))
        raise InconsistentSystemError(
            "m values are inconsistent: residual %.3g at cell (%d, %d)"
            % (worst, data.rows[k], data.cols[k])
        )
    return center(ModelParams(theta, beta))
