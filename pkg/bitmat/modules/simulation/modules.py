import logging

logger = logging.getLogger(__name__)

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit
from scipy.stats import norm
from tqdm import tqdm

from bitmat.lib.core import ModelParams, ObservedBinaryMatrix, sigma_stats
from bitmat.lib.errors import BitmatError, InvalidArgumentError, NumericalError
from bitmat.modules.connectivity.modules import require_connected
from bitmat.modules.estimator.modules import FitConfig, fit, screen_existence
from bitmat.modules.simulation.design import MissingDesign, design_from_dict

MAX_DRAWS = 10**6
MAX_EXCLUDED_FRACTION = 0.01
# stall stops count as fitted when the gradient is this small
STALL_GRAD_TOL = 1e-3
FAMILIES = ("m", "theta", "beta")


def _generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class SimStudyConfig:
    n_rows: int
    n_cols: int
    design: MissingDesign
    replications: int = 2000
    seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)
    level: float = 0.95
    half_width: float = 2.0
    # None tracks every observed cell as an m target
    m_targets: Optional[int] = None
    name: str = ""

    def __post_init__(self):
        if int(self.replications) < 1:
            raise InvalidArgumentError("replications must be at least 1")
        if not 0.0 < self.level < 1.0:
            raise InvalidArgumentError("level must lie in (0, 1), got %r" % self.level)
        if not self.half_width > 0:
            raise InvalidArgumentError("half_width must be positive")
        if (self.design.n_rows, self.design.n_cols) != (self.n_rows, self.n_cols):
            raise InvalidArgumentError(
                "design is %d x %d but the study is %d x %d"
                % (self.design.n_rows, self.design.n_cols, self.n_rows, self.n_cols)
            )
        if self.m_targets is not None and int(self.m_targets) < 1:
            raise InvalidArgumentError("m_targets must be positive or null")

    @classmethod
    def from_hparams(cls, hps, **overrides):
        """Study config from a loaded study JSON (HParams or plain dict)."""
        d = hps.to_dict() if hasattr(hps, "to_dict") else dict(hps)
        d.update({k: v for k, v in overrides.items() if v is not None})
        design = design_from_dict(d.get("design"), d.get("n_rows"), d.get("n_cols"))
        fit_cfg = d.get("fit") or {}
        if not isinstance(fit_cfg, FitConfig):
            fit_cfg = FitConfig.from_dict(fit_cfg)
        m_targets = d.get("m_targets")
        return cls(
            n_rows=design.n_rows,
            n_cols=design.n_cols,
            design=design,
            replications=int(d.get("replications", 2000)),
            seed=int(d.get("seed", 0)),
            fit=fit_cfg,
            level=float(d.get("level", 0.95)),
            half_width=float(d.get("half_width", 2.0)),
            m_targets=None if m_targets is None else int(m_targets),
            name=d.get("name", ""),
        )

    def streams(self):
        """(target stream, truth stream, per-replication streams) spawned from ``seed``."""
        truth, reps = np.random.SeedSequence(self.seed).spawn(2)
        targets, params = truth.spawn(2)
        return targets, params, reps.spawn(int(self.replications))


def draw_parameters(config: SimStudyConfig, seed=None) -> ModelParams:
    """beta iid U[-c, c]; theta from U[-c, c]^N centered, rejected while any |theta_i| > c."""
    rng = _generator(config.streams()[1] if seed is None else seed)
    c = config.half_width
    for attempt in range(1, MAX_DRAWS + 1):
        theta = rng.uniform(-c, c, size=config.n_rows)
        theta -= theta.mean()
        if np.max(np.abs(theta)) <= c:
            break
    else:
        raise NumericalError("theta rejection sampler gave up after %d draws" % MAX_DRAWS)
    if attempt > 1:
        logger.debug("theta accepted after %d draws", attempt)
    beta = rng.uniform(-c, c, size=config.n_cols)
    return ModelParams(theta, beta)


def simulate_on(base: ObservedBinaryMatrix, params: ModelParams, seed) -> ObservedBinaryMatrix:
    """Fresh Bernoulli draws on the observed support of ``base``."""
    rng = _generator(seed)
    p = expit(params.theta[base.rows] - params.beta[base.cols])
    y = (rng.random(base.n_obs) < p).astype(np.int8)
    return base.with_values(y)


def simulate_matrix(params: ModelParams, design: MissingDesign, seed) -> ObservedBinaryMatrix:
    return simulate_on(design.to_matrix(), params, seed)


def drop_degenerate(data: ObservedBinaryMatrix):
    """Repeatedly remove constant rows / columns; returns kept row and column indices."""
    keep_rows = np.arange(data.n_rows)
    keep_cols = np.arange(data.n_cols)
    current = data
    while True:
        bad_rows, bad_cols = screen_existence(current)
        empty_rows = np.flatnonzero(current.row_counts == 0).tolist()
        empty_cols = np.flatnonzero(current.col_counts == 0).tolist()
        bad_rows = sorted(set(bad_rows) | set(empty_rows))
        bad_cols = sorted(set(bad_cols) | set(empty_cols))
        if not bad_rows and not bad_cols:
            return keep_rows, keep_cols, current
        keep_r = np.setdiff1d(np.arange(current.n_rows), bad_rows)
        keep_c = np.setdiff1d(np.arange(current.n_cols), bad_cols)
        if keep_r.size < 2 or keep_c.size < 1:
            raise NumericalError("every row or column is degenerate; nothing left to fit")
        keep_rows, keep_cols = keep_rows[keep_r], keep_cols[keep_c]
        current = current.subset(keep_r, keep_c)


@dataclass
class Replication:
    index: int
    excluded: str = ""
    theta_err: Optional[np.ndarray] = None  # NaN where the row was dropped
    beta_err: Optional[np.ndarray] = None
    m_err: Optional[np.ndarray] = None
    theta_var: Optional[np.ndarray] = None
    beta_var: Optional[np.ndarray] = None
    m_var: Optional[np.ndarray] = None
    mse: Optional[Tuple[float, float, float]] = None  # (m, theta, beta)
    dropped: Tuple[int, int] = (0, 0)


def _fit_ok(report):
    return report.converged or (
        report.stop_reason == "tol" and report.grad_max_norm <= STALL_GRAD_TOL
    )


def run_replication(index, config: SimStudyConfig, truth: ModelParams, base, m_rows, m_cols, stream):
    rng = _generator(stream)
    data = simulate_on(base, truth, rng)
    try:
        keep_rows, keep_cols, sub = drop_degenerate(data)
        report = fit(sub, config.fit)
    except BitmatError as e:
        return Replication(index=index, excluded=str(e))
    if not _fit_ok(report):
        return Replication(
            index=index,
            excluded="fit did not converge (%s, max |grad| %.3g)" % (report.stop_reason, report.grad_max_norm),
        )

    n, J = config.n_rows, config.n_cols
    shift = truth.theta[keep_rows].mean()
    theta_err = np.full(n, np.nan)
    beta_err = np.full(J, np.nan)
    theta_err[keep_rows] = report.params.theta - (truth.theta[keep_rows] - shift)
    beta_err[keep_cols] = report.params.beta - (truth.beta[keep_cols] - shift)

    sigma = sigma_stats(report.params, sub)
    theta_var = np.full(n, np.nan)
    beta_var = np.full(J, np.nan)
    theta_var[keep_rows] = 1.0 / sigma.sigma_row
    beta_var[keep_cols] = 1.0 / sigma.sigma_col

    a = theta_err[keep_rows]
    b = beta_err[keep_cols]
    # mean of (a_i - b_j)^2 over every kept (i, j) pair
    mse_m = float(np.mean(a * a) + np.mean(b * b) - 2.0 * a.mean() * b.mean())
    return Replication(
        index=index,
        theta_err=theta_err,
        beta_err=beta_err,
        m_err=theta_err[m_rows] - beta_err[m_cols],
        theta_var=theta_var,
        beta_var=beta_var,
        m_var=theta_var[m_rows] + beta_var[m_cols],
        mse=(mse_m, float(np.mean(a * a)), float(np.mean(b * b))),
        dropped=(n - keep_rows.size, J - keep_cols.size),
    )


class _Accumulator:
    """Per-target running moments, updated in replication order."""

    def __init__(self, size, truth, sigma_tilde2, quantile):
        self.count = np.zeros(size, dtype=np.int64)
        self.hits = np.zeros(size, dtype=np.int64)
        self.mean = np.zeros(size)
        self.m2 = np.zeros(size)
        self.var_sum = np.zeros(size)
        self.truth = truth
        self.sigma_tilde2 = sigma_tilde2
        self.quantile = quantile

    def add(self, err, var):
        ok = ~np.isnan(err)
        self.count[ok] += 1
        delta = err[ok] - self.mean[ok]
        self.mean[ok] += delta / self.count[ok]
        self.m2[ok] += delta * (err[ok] - self.mean[ok])
        self.var_sum[ok] += var[ok]
        self.hits[ok] += np.abs(err[ok]) <= self.quantile * np.sqrt(var[ok])

    def coverage(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.count > 0, self.hits / np.maximum(self.count, 1), np.nan)

    def sample_variance(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.count > 1, self.m2 / np.maximum(self.count - 1, 1), np.nan)

    def mean_plugin_variance(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.count > 0, self.var_sum / np.maximum(self.count, 1), np.nan)


@dataclass
class CoverageReport:
    level: float
    replications: int
    n_excluded: int
    exclusions: List[Tuple[int, str]]
    coverage_m: np.ndarray
    coverage_theta: np.ndarray
    coverage_beta: np.ndarray
    m_rows: np.ndarray
    m_cols: np.ndarray
    mse_m: float
    mse_theta: float
    mse_beta: float
    s2: dict
    sigma_bar2: dict
    sigma_tilde2: dict
    truth: ModelParams = field(repr=False)
    # estimates of the first m target, theta_0 and beta_0 per kept replication
    density_samples: dict = field(default_factory=dict, repr=False)
    dropped_rows: int = 0
    dropped_cols: int = 0
    name: str = ""

    def coverage(self, family):
        return {"m": self.coverage_m, "theta": self.coverage_theta, "beta": self.coverage_beta}[family]

    def target_labels(self, family):
        if family == "m":
            return ["m[%d,%d]" % (i, j) for i, j in zip(self.m_rows.tolist(), self.m_cols.tolist())]
        size = self.coverage_theta.size if family == "theta" else self.coverage_beta.size
        return ["%s[%d]" % (family, k) for k in range(size)]

    def variance_rows(self):
        """(family, target, s2, sigma_bar2, sigma_tilde2) for every target."""
        out = []
        for family in FAMILIES:
            labels = self.target_labels(family)
            for k, label in enumerate(labels):
                out.append(
                    (
                        family,
                        label,
                        float(self.s2[family][k]),
                        float(self.sigma_bar2[family][k]),
                        float(self.sigma_tilde2[family][k]),
                    )
                )
        return out

    def coverage_quartiles(self):
        out = {}
        for family in FAMILIES:
            cov = self.coverage(family)
            cov = cov[~np.isnan(cov)]
            if cov.size == 0:
                out[family] = [float("nan")] * 5
            else:
                out[family] = np.quantile(cov, [0.0, 0.25, 0.5, 0.75, 1.0]).tolist()
        return out

    def histogram(self, bins=30):
        """Histogram densities of the tracked estimates with the reference normal density."""
        rows = []
        for target, (values, center, var) in sorted(self.density_samples.items()):
            values = np.asarray(values, dtype=float)
            if values.size == 0:
                continue
            density, edges = np.histogram(values, bins=bins, density=True)
            mids = 0.5 * (edges[:-1] + edges[1:])
            ref = norm.pdf(mids, loc=center, scale=np.sqrt(var))
            for lo, hi, d, r in zip(edges[:-1], edges[1:], density, ref):
                rows.append((target, float(lo), float(hi), float(d), float(r)))
        return rows

    def summary(self):
        return {
            "name": self.name,
            "level": self.level,
            "replications": self.replications,
            "n_excluded": self.n_excluded,
            "exclusions": [[k, reason] for k, reason in self.exclusions],
            "mse_m": self.mse_m,
            "mse_theta": self.mse_theta,
            "mse_beta": self.mse_beta,
            "coverage_m": self.coverage_m.tolist(),
            "coverage_theta": self.coverage_theta.tolist(),
            "coverage_beta": self.coverage_beta.tolist(),
            "coverage_mean": {f: float(np.nanmean(self.coverage(f))) for f in FAMILIES},
            "coverage_quartiles": self.coverage_quartiles(),
            "dropped_rows": self.dropped_rows,
            "dropped_cols": self.dropped_cols,
        }


def _m_targets(config, base, stream):
    if config.m_targets is None or config.m_targets >= base.n_obs:
        return base.rows.copy(), base.cols.copy()
    rng = _generator(stream)
    pick = np.sort(rng.choice(base.n_obs, size=int(config.m_targets), replace=False))
    # the first observed cell is always tracked for the density output
    pick = np.unique(np.concatenate([[0], pick]))[: int(config.m_targets)]
    return base.rows[pick], base.cols[pick]


def run_study(config: SimStudyConfig, n_jobs=1, progress=True) -> CoverageReport:
    """Monte-Carlo study with the truth drawn once and held fixed.

    Replication k uses the k-th spawned Philox stream, and results are folded
    in replication order, so the report does not depend on ``n_jobs``.
    """
    target_stream, param_stream, rep_streams = config.streams()
    base = config.design.to_matrix()
    require_connected(base)
    truth = draw_parameters(config, param_stream)
    m_rows, m_cols = _m_targets(config, base, target_stream)

    quantile = float(norm.ppf(1.0 - (1.0 - config.level) / 2.0))
    sigma_true = sigma_stats(truth, base)
    tilde_theta = 1.0 / sigma_true.sigma_row
    tilde_beta = 1.0 / sigma_true.sigma_col
    acc = {
        "m": _Accumulator(m_rows.size, truth.theta[m_rows] - truth.beta[m_cols], tilde_theta[m_rows] + tilde_beta[m_cols], quantile),
        "theta": _Accumulator(config.n_rows, truth.theta, tilde_theta, quantile),
        "beta": _Accumulator(config.n_cols, truth.beta, tilde_beta, quantile),
    }
    samples = {"m_first": [], "theta_0": [], "beta_0": []}
    mse = []
    exclusions = []
    dropped_rows = dropped_cols = 0

    logger.info(
        "study %s: %d x %d, %d observed cells, %d replications, %d m targets",
        config.name or "(unnamed)",
        config.n_rows,
        config.n_cols,
        base.n_obs,
        config.replications,
        m_rows.size,
    )
    jobs = (
        delayed(run_replication)(k, config, truth, base, m_rows, m_cols, stream)
        for k, stream in enumerate(rep_streams)
    )
    results = Parallel(n_jobs=n_jobs, return_as="generator")(jobs)
    for rep in tqdm(results, total=config.replications, disable=not progress, desc="replications"):
        if rep.excluded:
            logger.warning("replication %d excluded: %s", rep.index, rep.excluded)
            exclusions.append((rep.index, rep.excluded))
            continue
        acc["m"].add(rep.m_err, rep.m_var)
        acc["theta"].add(rep.theta_err, rep.theta_var)
        acc["beta"].add(rep.beta_err, rep.beta_var)
        mse.append(rep.mse)
        dropped_rows += rep.dropped[0]
        dropped_cols += rep.dropped[1]
        for key, err, family, k in (
            ("m_first", rep.m_err, "m", 0),
            ("theta_0", rep.theta_err, "theta", 0),
            ("beta_0", rep.beta_err, "beta", 0),
        ):
            if err.size and not np.isnan(err[k]):
                samples[key].append(float(acc[family].truth[k] + err[k]))

    n_excluded = len(exclusions)
    if n_excluded > MAX_EXCLUDED_FRACTION * config.replications:
        raise NumericalError(
            "%d of %d replications failed to fit (limit %.0f%%)"
            % (n_excluded, config.replications, 100 * MAX_EXCLUDED_FRACTION)
        )
    if dropped_rows or dropped_cols:
        logger.info(
            "degenerate rows/columns dropped over the study: %d rows, %d columns", dropped_rows, dropped_cols
        )
    mse = np.asarray(mse, dtype=float).reshape(-1, 3)
    density = {
        "m_first": (samples["m_first"], float(acc["m"].truth[0]), float(acc["m"].sigma_tilde2[0])),
        "theta_0": (samples["theta_0"], float(truth.theta[0]), float(tilde_theta[0])),
        "beta_0": (samples["beta_0"], float(truth.beta[0]), float(tilde_beta[0])),
    }
    return CoverageReport(
        level=config.level,
        replications=config.replications,
        n_excluded=n_excluded,
        exclusions=exclusions,
        coverage_m=acc["m"].coverage(),
        coverage_theta=acc["theta"].coverage(),
        coverage_beta=acc["beta"].coverage(),
        m_rows=m_rows,
        m_cols=m_cols,
        mse_m=float(mse[:, 0].mean()) if mse.size else float("nan"),
        mse_theta=float(mse[:, 1].mean()) if mse.size else float("nan"),
        mse_beta=float(mse[:, 2].mean()) if mse.size else float("nan"),
        s2={f: acc[f].sample_variance() for f in FAMILIES},
        sigma_bar2={f: acc[f].mean_plugin_variance() for f in FAMILIES},
        sigma_tilde2={f: acc[f].sigma_tilde2 for f in FAMILIES},
        truth=truth,
        density_samples=density,
        dropped_rows=dropped_rows,
        dropped_cols=dropped_cols,
        name=config.name,
    )
