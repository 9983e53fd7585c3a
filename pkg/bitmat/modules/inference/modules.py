"""Variances of linear forms g(M-hat) and Wald inference.

Four variance methods are available:

* ``true_param`` / ``plug_in``: sum_i w_gi^2 / s_i+ + sum_j w~_gj^2 / s_+j with
  the sigma aggregates taken at the true or the fitted parameters.
* ``refined``: the same leading terms plus the row/column cross term and the
  grand-total correction, computed from the entry-weight aggregates.
* ``exact_oracle``: the three-way decomposition d_ij = b + f_i + m_j solved
  as a dense linear system; equal to the inverse-information variance of
  the identified form. Only for small designs.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.stats import norm

from bitmat.lib.core import (
    LinearForm,
    ModelParams,
    ObservedBinaryMatrix,
    SigmaStats,
    design_stats,
    sigma_stats,
)
from bitmat.lib.errors import (
    DimensionError,
    IdentifiabilityError,
    InvalidArgumentError,
    NumericalError,
)

logger = logging.getLogger(__name__)

METHODS = ("true_param", "plug_in", "refined", "exact_oracle")
METHOD_ALIASES = {
    "plugin": "plug_in",
    "plug_in": "plug_in",
    "true": "true_param",
    "true_param": "true_param",
    "refined": "refined",
    "exact": "exact_oracle",
    "exact_oracle": "exact_oracle",
}
EXACT_MAX_NODES = 2000


def resolve_method(method):
    try:
        return METHOD_ALIASES[method]
    except KeyError:
        raise InvalidArgumentError(
            "unknown variance method %r; choose from %s" % (method, sorted(METHOD_ALIASES))
        )


@dataclass(frozen=True)
class VarianceEstimate:
    value: float
    method: str
    row_component: float
    col_component: float
    extra_terms: float = 0.0


@dataclass(frozen=True)
class InferenceResult:
    estimate: float
    se: float
    ci_lower: float
    ci_upper: float
    level: float
    z_stat: float
    p_value: float
    log10_p_value: float
    variance: Optional[VarianceEstimate] = None
    name: str = ""

    @property
    def method(self):
        return self.variance.method if self.variance is not None else ""


def evaluate_form(g: LinearForm, params: ModelParams) -> float:
    return g.evaluate(params)


def _check_form(g, n_rows, n_cols):
    if g.n_rows != n_rows or g.n_cols != n_cols:
        raise DimensionError(
            "form is %d x %d but the model is %d x %d" % (g.n_rows, g.n_cols, n_rows, n_cols)
        )


def _weighted_inverse_sum(w, s, what):
    nz = np.flatnonzero(w)
    if nz.size == 0:
        return 0.0
    s_nz = s[nz]
    bad = nz[s_nz <= 0]
    if bad.size:
        raise NumericalError(
            "%s %d carries weight but has zero variance aggregate (no observed entries)"
            % (what, bad[0])
        )
    return float(np.sum(w[nz] ** 2 / s_nz))


def variance_main(g: LinearForm, sigma: SigmaStats, method="plug_in") -> VarianceEstimate:
    method = resolve_method(method)
    if method not in ("true_param", "plug_in"):
        raise InvalidArgumentError("variance_main handles true_param and plug_in, got %r" % method)
    _check_form(g, sigma.sigma_row.size, sigma.sigma_col.size)
    row = _weighted_inverse_sum(g.w_g, sigma.sigma_row, "row")
    col = _weighted_inverse_sum(g.w_tilde_g, sigma.sigma_col, "column")
    return VarianceEstimate(value=row + col, method=method, row_component=row, col_component=col)


def variance_refined(
    g: LinearForm, sigma: SigmaStats, data: ObservedBinaryMatrix, require_origin=False
) -> VarianceEstimate:
    """Leading terms plus cross and grand-total corrections.

    Uses the entry-weight aggregates w_{i+}, w_{+j}, w_{++}; without an
    entry origin the shift-invariant representative of ``g`` supplies them
    unless ``require_origin`` is set.
    """
    _check_form(g, data.n_rows, data.n_cols)
    if require_origin and g.origin is None:
        raise InvalidArgumentError("refined variance needs entry weights w_ij for %s" % (g.name or "form"))
    w_row, w_col, w_tot = g.aggregates()
    row = _weighted_inverse_sum(w_row, sigma.sigma_row, "row")
    col = _weighted_inverse_sum(w_col, sigma.sigma_col, "column")
    a = np.zeros(data.n_rows)
    b = np.zeros(data.n_cols)
    nz_r = w_row != 0
    nz_c = w_col != 0
    a[nz_r] = w_row[nz_r] / sigma.sigma_row[nz_r]
    b[nz_c] = w_col[nz_c] / sigma.sigma_col[nz_c]
    cross = 2.0 * float(np.sum(a[data.rows] * b[data.cols] * sigma.cell))
    total = 3.0 * w_tot**2 / sigma.sigma_total if w_tot != 0 else 0.0
    extra = cross - total
    return VarianceEstimate(
        value=row + col + extra,
        method="refined",
        row_component=row,
        col_component=col,
        extra_terms=extra,
    )


def fisher_information(sigma: SigmaStats, data: ObservedBinaryMatrix):
    """(N+J) x (N+J) information of (theta, beta) ignoring the centering constraint."""
    n, j = data.n_rows, data.n_cols
    off = scipy.sparse.coo_matrix(
        (-sigma.cell, (data.rows, n + data.cols)), shape=(n + j, n + j)
    )
    diag = scipy.sparse.diags(np.concatenate([sigma.sigma_row, sigma.sigma_col]))
    return (diag + off + off.T).tocsr()


def exact_variance(g: LinearForm, sigma: SigmaStats, data: ObservedBinaryMatrix) -> VarianceEstimate:
    """Exact asymptotic variance via the three-way decomposition system.

    Unknowns are f (N) and m (J); b = w_{++} / s_{++}. The N row and J column
    equations are rank deficient by one along (1, -1); the last column
    equation is replaced by the side condition sum_i s_i+ f_i = 0, which
    pins that direction (the matching column condition then holds
    automatically).
    """
    n, J = data.n_rows, data.n_cols
    _check_form(g, n, J)
    if n + J > EXACT_MAX_NODES:
        raise InvalidArgumentError(
            "exact variance is limited to N + J <= %d (got %d)" % (EXACT_MAX_NODES, n + J)
        )
    if np.any(sigma.sigma_row <= 0) or np.any(sigma.sigma_col <= 0):
        raise IdentifiabilityError("exact variance needs every row and column observed")
    w_row, w_col, w_tot = g.aggregates()
    b = w_tot / sigma.sigma_total

    size = n + J
    K = np.zeros((size, size))
    K[np.arange(n), np.arange(n)] = sigma.sigma_row
    K[n + np.arange(J), n + np.arange(J)] = sigma.sigma_col
    K[data.rows, n + data.cols] = sigma.cell
    K[n + data.cols, data.rows] = sigma.cell
    rhs = np.concatenate([w_row - b * sigma.sigma_row, w_col - b * sigma.sigma_col])
    K[-1, :] = 0.0
    K[-1, :n] = sigma.sigma_row
    rhs[-1] = 0.0
    try:
        sol = scipy.linalg.solve(K, rhs, assume_a="gen", check_finite=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise NumericalError("three-way decomposition system is singular: %s" % e)
    f, m = sol[:n], sol[n:]
    # a near-singular solve shows up as a violated column side condition
    side = float(np.dot(sigma.sigma_col, m))
    if not np.isfinite(sol).all() or abs(side) > 1e-6 * (1.0 + np.abs(sol).max() * sigma.sigma_total):
        raise NumericalError("three-way decomposition system is singular (side residual %.3g)" % side)

    value = (
        b * b * sigma.sigma_total
        + float(np.dot(sigma.sigma_row, f * f))
        + float(np.dot(sigma.sigma_col, m * m))
        + 2.0 * float(np.sum(sigma.cell * f[data.rows] * m[data.cols]))
    )
    row = _weighted_inverse_sum(w_row, sigma.sigma_row, "row")
    col = _weighted_inverse_sum(w_col, sigma.sigma_col, "column")
    return VarianceEstimate(
        value=value,
        method="exact_oracle",
        row_component=row,
        col_component=col,
        extra_terms=value - row - col,
    )


def wald_from_estimate(estimate, se, level=0.95, null=0.0, variance=None, name=""):
    if not 0.0 < level < 1.0:
        raise InvalidArgumentError("level must lie in (0, 1), got %r" % level)
    if not (se > 0 and np.isfinite(se)):
        raise InvalidArgumentError("standard error must be positive and finite, got %r" % se)
    q = float(norm.ppf(1.0 - (1.0 - level) / 2.0))
    z = (estimate - null) / se
    log_p = math.log(2.0) + float(norm.logsf(abs(z)))
    return InferenceResult(
        estimate=float(estimate),
        se=float(se),
        ci_lower=float(estimate - q * se),
        ci_upper=float(estimate + q * se),
        level=float(level),
        z_stat=float(z),
        p_value=min(1.0, math.exp(log_p)),
        log10_p_value=min(0.0, log_p / math.log(10.0)),
        variance=variance,
        name=name,
    )


def form_variance(g, fit, method="plug_in", true_params=None, sigma=None):
    """Variance of g(M-hat) for a fitted model under the chosen method."""
    method = resolve_method(method)
    data = fit.data
    if data is None:
        raise InvalidArgumentError("fit report carries no data; cannot compute variances")
    if method == "true_param":
        if true_params is None:
            raise InvalidArgumentError("true_param variance needs the true parameters")
        return variance_main(g, sigma_stats(true_params, data), "true_param")
    if sigma is None:
        sigma = sigma_stats(fit.params, data)
    if method == "plug_in":
        return variance_main(g, sigma, "plug_in")
    if method == "refined":
        return variance_refined(g, sigma, data)
    return exact_variance(g, sigma, data)


def wald_interval(g: LinearForm, fit, level=0.95, method="plug_in", true_params=None, null=0.0):
    variance = form_variance(g, fit, method, true_params=true_params)
    estimate = g.evaluate(fit.params)
    if variance.value <= 0:
        raise InvalidArgumentError("variance of %s is not positive (%.3g)" % (g.name or "form", variance.value))
    return wald_from_estimate(
        estimate, math.sqrt(variance.value), level, null=null, variance=variance, name=g.name
    )


def test_difference(i, k, fit, level=0.95):
    """Two-sided z-test of H0: theta_i = theta_k."""
    if i == k:
        raise InvalidArgumentError("test_difference needs two distinct rows, got %d twice" % i)
    data = fit.data
    g = LinearForm.rowdiff(data.n_rows, data.n_cols, i, k)
    return wald_interval(g, fit, level=level, method="plug_in")


# pytest would otherwise collect the function above
test_difference.__test__ = False


def infer_many(forms: Sequence[LinearForm], fit, level=0.95, method="plug_in", true_params=None):
    method = resolve_method(method)
    sigma = sigma_stats(fit.params, fit.data) if method in ("plug_in", "refined", "exact_oracle") else None
    out = []
    for g in forms:
        if method == "true_param":
            variance = form_variance(g, fit, method, true_params=true_params)
        else:
            variance = form_variance(g, fit, method, sigma=sigma)
        if variance.value <= 0:
            raise InvalidArgumentError("variance of %s is not positive" % (g.name or "form"))
        out.append(
            wald_from_estimate(
                g.evaluate(fit.params), math.sqrt(variance.value), level, variance=variance, name=g.name
            )
        )
    return out


def diagnostics(data: ObservedBinaryMatrix, forms: Sequence[LinearForm] = ()):
    """Asymptotic-regime ratios; reported, never enforced."""
    stats = design_stats(data)
    log_n = math.log(max(data.n_rows, 2))
    out = {
        "ratio_Jstar2_Nstar_logN2": stats.n_star_min * log_n**2 / float(stats.j_star_min) ** 2,
        "ratio_logN_Jstar": log_n / float(stats.j_star_min),
    }
    if forms:
        out["form_norms"] = {
            (g.name or str(k)): {"w_g_l1": g.norms()[0], "w_tilde_g_l1": g.norms()[1]}
            for k, g in enumerate(forms)
        }
    return out
