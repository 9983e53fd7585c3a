import logging

logger = logging.getLogger(__name__)

from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import expit

from bitmat.lib.core import (
    LinearForm,
    ModelParams,
    ObservedBinaryMatrix,
    center,
    log_likelihood,
)
from bitmat.lib.errors import IdentifiabilityError, InvalidArgumentError, NumericalError
from bitmat.modules.connectivity.modules import check_connectivity

STEPS = ("gradient", "newton")
MAX_HALVINGS = 60
MARGIN_WARN = 30.0


@dataclass(frozen=True)
class FitConfig:
    """Settings for the alternating ascent.

    ``learning_rate`` is the step of both half sweeps for ``step="gradient"``
    (``None`` means 4 / J* for theta and 4 / N* for beta, the largest counts)
    and the damping factor for ``step="newton"`` (``None`` means 1). ``tol``
    is on the per-sweep log-likelihood improvement; ``None`` means
    ``tol_per_obs * n_obs``, and with both unset only a sweep that gains
    nothing stops before the gradient certificate holds.
    """

    learning_rate: Optional[float] = None
    tol: Optional[float] = None
    tol_per_obs: Optional[float] = None
    max_sweeps: int = 10000
    init_half_width: float = 1.0
    seed: int = 0
    grad_tol: float = 1e-6
    step: str = "gradient"

    def __post_init__(self):
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if self.tol is not None and not self.tol > 0:
            raise InvalidArgumentError("tol must be positive")
        if self.tol_per_obs is not None and not self.tol_per_obs > 0:
            raise InvalidArgumentError("tol_per_obs must be positive")
        if int(self.max_sweeps) < 1:
            raise InvalidArgumentError("max_sweeps must be at least 1")
        if not self.init_half_width > 0:
            raise InvalidArgumentError("init_half_width must be positive")
        if not self.grad_tol > 0:
            raise InvalidArgumentError("grad_tol must be positive")
        if self.step not in STEPS:
            raise InvalidArgumentError("step must be one of %s, got %r" % (STEPS, self.step))

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in (d or {}).items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def updated(self, **kwargs):
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def as_dict(self):
        return asdict(self)


@dataclass
class FitReport:
    params: ModelParams
    final_loglik: float
    sweeps: int
    converged: bool
    grad_max_norm: float
    loglik_trace: List[float]
    stop_reason: str = ""
    learning_rate: float = 0.0
    step: str = "gradient"
    step_halvings: int = 0
    degenerate_rows: List[int] = field(default_factory=list)
    degenerate_cols: List[int] = field(default_factory=list)
    data: Optional[ObservedBinaryMatrix] = field(default=None, repr=False)


@dataclass
class ProfiledFit:
    report: FitReport
    probe_values: np.ndarray  # (len(loglik_trace), n_probes); row 0 is the start


def screen_existence(data: ObservedBinaryMatrix):
    """Rows / columns whose observed values are all 0 or all 1."""
    row_ones = np.bincount(data.rows, weights=data.values, minlength=data.n_rows)
    col_ones = np.bincount(data.cols, weights=data.values, minlength=data.n_cols)
    rows = np.flatnonzero(
        (data.row_counts > 0) & ((row_ones == 0) | (row_ones == data.row_counts))
    )
    cols = np.flatnonzero(
        (data.col_counts > 0) & ((col_ones == 0) | (col_ones == data.col_counts))
    )
    return rows.tolist(), cols.tolist()


def _row_terms(theta, beta, data):
    p = expit(theta[data.rows] - beta[data.cols])
    resid = data.values - p
    g = np.bincount(data.rows, weights=resid, minlength=data.n_rows)
    h = np.bincount(data.rows, weights=p * (1.0 - p), minlength=data.n_rows)
    return g, h


def _col_terms(theta, beta, data):
    # d loglik / d beta_j = sum_i (p_ij - y_ij)
    p = expit(theta[data.rows] - beta[data.cols])
    resid = p - data.values
    g = np.bincount(data.cols, weights=resid, minlength=data.n_cols)
    h = np.bincount(data.cols, weights=p * (1.0 - p), minlength=data.n_cols)
    return g, h


def _loglik(theta, beta, data):
    return log_likelihood(ModelParams(theta, beta), data)


class AlternatingAscent:
    """Constrained MLE by alternating theta / beta sweeps with centering.

    Each half sweep moves one block along its gradient (optionally scaled by
    the inverse diagonal curvature) and halves the step until the
    log-likelihood does not decrease, so the accepted trace is monotone.
    """

    def __init__(self, config: Optional[FitConfig] = None):
        self.config = config or FitConfig()

    def _check_design(self, data, allow_disconnected):
        report = check_connectivity(data)
        if report.empty_rows or report.empty_cols:
            raise IdentifiabilityError(
                "rows %s and columns %s have no observed entries"
                % (report.empty_rows[:10], report.empty_cols[:10]),
                components=report.components,
            )
        if not report.connected:
            if not allow_disconnected:
                raise IdentifiabilityError(
                    "parameters are not identifiable: %s" % report.describe(),
                    components=report.components,
                )
            logger.warning(
                "fitting a disconnected design (%d components); the estimate is one of many maximizers",
                report.n_components,
            )

    def _init_params(self, data):
        rng = np.random.Generator(np.random.Philox(self.config.seed))
        c = self.config.init_half_width
        theta = rng.uniform(-c, c, size=data.n_rows)
        beta = rng.uniform(-c, c, size=data.n_cols)
        mu = theta.mean()
        return theta - mu, beta - mu

    def _halving_step(self, current_ll, make_candidate, rate, sweep):
        """Try ``make_candidate(rate)``; halve until the likelihood does not drop."""
        halvings = 0
        while True:
            cand, cand_ll = make_candidate(rate)
            if np.isfinite(cand_ll) and cand_ll >= current_ll:
                return cand, cand_ll, rate, halvings
            if halvings >= MAX_HALVINGS:
                if not np.isfinite(cand_ll):
                    raise NumericalError(
                        "log-likelihood is not finite at sweep %d; reduce the step size" % sweep,
                        sweep=sweep,
                    )
                return None, current_ll, rate, halvings
            rate *= 0.5
            halvings += 1

    def base_rates(self, data):
        """Starting step of the theta and beta half steps, used afresh every sweep."""
        cfg = self.config
        if cfg.learning_rate is not None:
            return cfg.learning_rate, cfg.learning_rate
        if cfg.step == "newton":
            return 1.0, 1.0
        # sigma_ij <= 1/4 bounds each coordinate's curvature by count / 4
        return 4.0 / float(data.row_counts.max()), 4.0 / float(data.col_counts.max())

    def theta_step(self, theta, beta, data, rate, ll=None, sweep=0):
        """Guarded ascent step on theta with beta fixed.

        Returns ``(theta, loglik, rate_used, halvings)``; theta comes back
        unchanged when no halved step improves the log-likelihood.
        """
        if ll is None:
            ll = _loglik(theta, beta, data)
        g, h = _row_terms(theta, beta, data)
        direction = g / np.maximum(h, 1e-12) if self.config.step == "newton" else g

        def candidate(r):
            t = theta + r * direction
            return t, _loglik(t, beta, data)

        cand, ll, used, halved = self._halving_step(ll, candidate, rate, sweep)
        return (theta if cand is None else cand), ll, used, halved

    def beta_step(self, theta, beta, data, rate, ll=None, sweep=0):
        """Guarded ascent step on beta with theta fixed; see ``theta_step``."""
        if ll is None:
            ll = _loglik(theta, beta, data)
        g, h = _col_terms(theta, beta, data)
        direction = g / np.maximum(h, 1e-12) if self.config.step == "newton" else g

        def candidate(r):
            b = beta + r * direction
            return b, _loglik(theta, b, data)

        cand, ll, used, halved = self._halving_step(ll, candidate, rate, sweep)
        return (beta if cand is None else cand), ll, used, halved

    def _warn_margins(self, theta, beta, data, sweep, warned):
        m = theta[data.rows] - beta[data.cols]
        wild = np.abs(m) > MARGIN_WARN
        if not wild.any() or warned:
            return warned
        rows = np.unique(data.rows[wild])[:5].tolist()
        cols = np.unique(data.cols[wild])[:5].tolist()
        logger.warning(
            "|m_ij| exceeds %g at sweep %d (rows %s, columns %s); the margin is near degenerate",
            MARGIN_WARN,
            sweep,
            rows,
            cols,
        )
        return True

    def _tol(self, data):
        cfg = self.config
        if cfg.tol is not None:
            return cfg.tol
        if cfg.tol_per_obs is not None:
            return cfg.tol_per_obs * data.n_obs
        # only a sweep that changes nothing stops the fit early
        return 0.0

    def run(self, data: ObservedBinaryMatrix, probes: Sequence[LinearForm] = (), allow_disconnected=False):
        cfg = self.config
        if not isinstance(data, ObservedBinaryMatrix):
            raise InvalidArgumentError("data must be an ObservedBinaryMatrix")
        self._check_design(data, allow_disconnected)
        degenerate_rows, degenerate_cols = screen_existence(data)
        if degenerate_rows or degenerate_cols:
            logger.warning(
                "maximum likelihood estimate may not exist: constant rows %s, constant columns %s",
                degenerate_rows[:10],
                degenerate_cols[:10],
            )

        rate_theta, rate_beta = self.base_rates(data)
        tol = self._tol(data)
        row_bound = cfg.grad_tol * (1.0 + data.row_counts)
        col_bound = cfg.grad_tol * (1.0 + data.col_counts)

        theta, beta = self._init_params(data)
        ll = _loglik(theta, beta, data)
        if not np.isfinite(ll):
            raise NumericalError("log-likelihood is not finite at the starting point", sweep=0)
        trace = [ll]
        probe_rows = [[g.evaluate(ModelParams(theta, beta)) for g in probes]]
        total_halvings = 0
        warned = False
        stop_reason = "max_sweeps"
        certified = False
        g_theta, _ = _row_terms(theta, beta, data)
        g_beta, _ = _col_terms(theta, beta, data)

        sweep = 0
        for sweep in range(1, int(cfg.max_sweeps) + 1):
            ll_prev = ll
            theta, ll, _, halved = self.theta_step(theta, beta, data, rate_theta, ll, sweep)
            total_halvings += halved
            beta, ll, _, halved = self.beta_step(theta, beta, data, rate_beta, ll, sweep)
            total_halvings += halved

            mu = theta.mean()
            theta = theta - mu
            beta = beta - mu
            trace.append(ll)
            if probes:
                params = ModelParams(theta, beta)
                probe_rows.append([g.evaluate(params) for g in probes])
            warned = self._warn_margins(theta, beta, data, sweep, warned)

            g_theta, _ = _row_terms(theta, beta, data)
            g_beta, _ = _col_terms(theta, beta, data)
            certified = bool(
                np.all(np.abs(g_theta) <= row_bound) and np.all(np.abs(g_beta) <= col_bound)
            )
            if certified:
                stop_reason = "grad_tol"
                break
            if ll - ll_prev <= tol:
                stop_reason = "tol"
                break
            if sweep % 500 == 0:
                logger.debug("sweep %d: loglik %.10g", sweep, ll)

        grad_max = float(max(np.max(np.abs(g_theta)), np.max(np.abs(g_beta))))
        if total_halvings:
            logger.info("step halved %d times during the fit", total_halvings)
        logger.info(
            "fit stopped after %d sweeps (%s): loglik %.10g, max |grad| %.3g",
            sweep,
            stop_reason,
            ll,
            grad_max,
        )
        report = FitReport(
            params=center(ModelParams(theta, beta)),
            final_loglik=float(ll),
            sweeps=sweep,
            converged=certified and not (degenerate_rows or degenerate_cols),
            grad_max_norm=grad_max,
            loglik_trace=[float(v) for v in trace],
            stop_reason=stop_reason,
            learning_rate=float(min(rate_theta, rate_beta)),
            step=cfg.step,
            step_halvings=total_halvings,
            degenerate_rows=degenerate_rows,
            degenerate_cols=degenerate_cols,
            data=data,
        )
        return report, np.asarray(probe_rows, dtype=float).reshape(len(trace), len(probes))

    def fit(self, data, allow_disconnected=False) -> FitReport:
        report, _ = self.run(data, (), allow_disconnected=allow_disconnected)
        return report

    def fit_profile(self, data, probes, allow_disconnected=False) -> ProfiledFit:
        report, values = self.run(data, list(probes), allow_disconnected=allow_disconnected)
        return ProfiledFit(report=report, probe_values=values)


def fit(data: ObservedBinaryMatrix, config: Optional[FitConfig] = None, allow_disconnected=False) -> FitReport:
    return AlternatingAscent(config).fit(data, allow_disconnected=allow_disconnected)


def fit_profile(
    data: ObservedBinaryMatrix,
    config: Optional[FitConfig],
    probes: Sequence[LinearForm],
    allow_disconnected=False,
) -> ProfiledFit:
    return AlternatingAscent(config).fit_profile(data, probes, allow_disconnected=allow_disconnected)
