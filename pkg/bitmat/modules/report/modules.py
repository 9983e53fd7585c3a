import logging
import os

logger = logging.getLogger(__name__)

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from bitmat.lib.core import LinearForm, ModelParams, design_stats, sigma_stats
from bitmat.lib.errors import DimensionError, InvalidArgumentError, ParseError
from bitmat.lib.fileio import (
    MatrixFile,
    dump_json,
    load_json,
    read_matrix_file,
    read_weights_file,
    sidecar_path,
    write_csv,
    write_jsonl,
    write_mask_file,
    write_matrix_file,
)
from bitmat.modules.connectivity.modules import check_connectivity
from bitmat.modules.estimator.modules import FitConfig, FitReport, fit
from bitmat.modules.inference.modules import diagnostics, infer_many, resolve_method, test_difference
from bitmat.modules.rollcall.preprocess import MIN_SERVICE_DAYS, preprocess_rollcall
from bitmat.modules.simulation.design import (
    make_bernoulli_design,
    make_block_design,
    make_full_design,
    make_linking_design,
)
from bitmat.modules.simulation.modules import FAMILIES, SimStudyConfig, run_study
from configs.config import load_study_config

INFER_HEADER = ["form", "estimate", "se", "ci_lower", "ci_upper", "z", "p", "log10_p", "method", "level"]
RANK_HEADER = ["rank", "label", "estimate", "se"]
VARIANCE_HEADER = ["family", "target", "s2", "sigma_bar2", "sigma_tilde2"]
DENSITY_HEADER = ["target", "bin_left", "bin_right", "density", "normal_density"]
COVERAGE_HEADER = ["family", "target", "coverage"]
QUARTILE_HEADER = ["family", "min", "q1", "median", "q3", "max"]


@dataclass
class FittedModel:
    """A fit file joined with the matrix it was fitted on."""

    report: FitReport
    matrix: MatrixFile
    record: dict
    path: str = ""

    def row_label(self, i):
        return self.matrix.row_label(i)

    def col_label(self, j):
        return self.matrix.col_label(j)


def cmd_fit(input_path, output_path, config: Optional[FitConfig] = None, allow_disconnected=False):
    config = config or FitConfig()
    mf = read_matrix_file(input_path)
    report = fit(mf.data, config, allow_disconnected=allow_disconnected)
    if not report.converged:
        logger.warning(
            "fit did not reach the gradient tolerance (%s after %d sweeps, max |grad| %.3g)",
            report.stop_reason,
            report.sweeps,
            report.grad_max_norm,
        )
    n, J = mf.data.n_rows, mf.data.n_cols
    record = {
        "input": input_path,
        "n_rows": n,
        "n_cols": J,
        "n_obs": mf.data.n_obs,
        "row_labels": [mf.row_label(i) for i in range(n)],
        "col_labels": [mf.col_label(j) for j in range(J)],
        "theta": report.params.theta.tolist(),
        "beta": report.params.beta.tolist(),
        "final_loglik": report.final_loglik,
        "sweeps": report.sweeps,
        "converged": report.converged,
        "stop_reason": report.stop_reason,
        "grad_max_norm": report.grad_max_norm,
        "step": report.step,
        "learning_rate": report.learning_rate,
        "step_halvings": report.step_halvings,
        "degenerate_rows": [mf.row_label(i) for i in report.degenerate_rows],
        "degenerate_cols": [mf.col_label(j) for j in report.degenerate_cols],
        "design_stats": design_stats(mf.data).as_dict(),
        "diagnostics": diagnostics(mf.data),
        "config": config.as_dict(),
    }
    dump_json(record, output_path)
    logger.info("wrote fit to %s", output_path)
    return record


def load_fit(path) -> FittedModel:
    record = load_json(path)
    for key in ("input", "theta", "beta"):
        if key not in record:
            raise ParseError("fit file lacks %r" % key, path=path)
    input_path = record["input"]
    if not os.path.exists(input_path):
        beside = os.path.join(os.path.dirname(path), input_path)
        if os.path.exists(beside):
            input_path = beside
    mf = read_matrix_file(input_path)
    params = ModelParams(np.asarray(record["theta"], float), np.asarray(record["beta"], float))
    if (params.n_rows, params.n_cols) != mf.data.shape:
        raise ParseError(
            "fit is %d x %d but %s is %d x %d"
            % (params.n_rows, params.n_cols, input_path, mf.data.n_rows, mf.data.n_cols),
            path=path,
        )
    report = FitReport(
        params=params,
        final_loglik=float(record.get("final_loglik", float("nan"))),
        sweeps=int(record.get("sweeps", 0)),
        converged=bool(record.get("converged", False)),
        grad_max_norm=float(record.get("grad_max_norm", float("nan"))),
        loglik_trace=[],
        stop_reason=record.get("stop_reason", ""),
        step=record.get("step", "gradient"),
        data=mf.data,
    )
    return FittedModel(report=report, matrix=mf, record=record, path=path)


def parse_form(tokens: Sequence[str], model: FittedModel) -> LinearForm:
    """``entry i j``, ``row i``, ``col j``, ``rowdiff i k`` or ``weights PATH``; labels allowed."""
    if not tokens:
        raise InvalidArgumentError("empty form description")
    kind, args = tokens[0], list(tokens[1:])
    mf = model.matrix
    n, J = mf.data.n_rows, mf.data.n_cols
    arity = {"entry": 2, "row": 1, "col": 1, "rowdiff": 2, "weights": 1}
    if kind not in arity:
        raise InvalidArgumentError("unknown form kind %r; choose from %s" % (kind, sorted(arity)))
    if len(args) != arity[kind]:
        raise InvalidArgumentError("%s takes %d argument(s), got %d" % (kind, arity[kind], len(args)))
    if kind == "entry":
        i, j = mf.row_index(args[0]), mf.col_index(args[1])
        g = LinearForm.entry(n, J, i, j)
        return LinearForm(g.w_g, g.w_tilde_g, origin=g.origin, name="m[%s,%s]" % (mf.row_label(i), mf.col_label(j)))
    if kind == "row":
        i = mf.row_index(args[0])
        g = LinearForm.row(n, J, i)
        return LinearForm(g.w_g, g.w_tilde_g, name="theta[%s]" % mf.row_label(i))
    if kind == "col":
        j = mf.col_index(args[0])
        g = LinearForm.col(n, J, j)
        return LinearForm(g.w_g, g.w_tilde_g, name="beta[%s]" % mf.col_label(j))
    if kind == "rowdiff":
        i, k = mf.row_index(args[0]), mf.row_index(args[1])
        g = LinearForm.rowdiff(n, J, i, k)
        return LinearForm(
            g.w_g, g.w_tilde_g, name="theta[%s]-theta[%s]" % (mf.row_label(i), mf.row_label(k))
        )
    return read_weights_file(args[0], mf)


def _result_row(res, method):
    return [
        res.name,
        res.estimate,
        res.se,
        res.ci_lower,
        res.ci_upper,
        res.z_stat,
        res.p_value,
        res.log10_p_value,
        method,
        res.level,
    ]


def load_truth(path, model: FittedModel) -> ModelParams:
    """True theta / beta for ``--method true``: JSON with ``theta`` and ``beta`` lists."""
    record = load_json(path)
    try:
        params = ModelParams(record["theta"], record["beta"])
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError("truth file needs theta and beta lists (%s)" % e, path=path)
    data = model.report.data
    if (params.n_rows, params.n_cols) != (data.n_rows, data.n_cols):
        raise DimensionError(
            "truth is %d x %d but the fit is %d x %d" % (params.n_rows, params.n_cols, data.n_rows, data.n_cols)
        )
    return params


def cmd_infer(fit_path, forms: List[Sequence[str]], output_path=None, level=0.95, method="plug_in", truth_path=None):
    model = load_fit(fit_path)
    method = resolve_method(method)
    truth = None
    if method == "true_param":
        if not truth_path:
            raise InvalidArgumentError("true-parameter variances need the truth; pass a truth JSON")
        truth = load_truth(truth_path, model)
    parsed = [parse_form(tokens, model) for tokens in forms]
    if not parsed:
        raise InvalidArgumentError("no forms requested")
    results = infer_many(parsed, model.report, level=level, method=method, true_params=truth)
    rows = [_result_row(res, method) for res in results]
    if output_path:
        write_csv(output_path, INFER_HEADER, rows)
        logger.info("wrote %d inference rows to %s", len(rows), output_path)
    return rows


def compare_rows(model: FittedModel, a, b, level=0.95):
    """z-test of theta_a = theta_b with rows given by label or index."""
    i, k = model.matrix.row_index(a), model.matrix.row_index(b)
    res = test_difference(i, k, model.report, level=level)
    return replace(res, name="theta[%s]-theta[%s]" % (model.row_label(i), model.row_label(k)))


def cmd_rank(fit_path, top=10, direction="desc", output_path=None):
    if direction not in ("desc", "asc"):
        raise InvalidArgumentError("direction must be desc or asc, got %r" % direction)
    model = load_fit(fit_path)
    data = model.report.data
    n = data.n_rows
    top = int(top)
    if top < 1:
        raise InvalidArgumentError("top must be at least 1")
    if top > n:
        logger.warning("top %d exceeds the %d rows; showing all", top, n)
        top = n
    theta = model.report.params.theta
    se = np.sqrt(1.0 / sigma_stats(model.report.params, data).sigma_row)
    labels = [model.row_label(i) for i in range(n)]
    sign = -1.0 if direction == "desc" else 1.0
    # ties resolve by label, then by index
    order = sorted(range(n), key=lambda i: (sign * theta[i], labels[i], i))
    rows = [[rank + 1, labels[i], float(theta[i]), float(se[i])] for rank, i in enumerate(order[:top])]
    if output_path:
        write_csv(output_path, RANK_HEADER, rows)
    return rows


def _study_config(study, seed=None, replications=None, level=None):
    hps = study if not isinstance(study, (str, os.PathLike)) else load_study_config(study)
    return SimStudyConfig.from_hparams(hps, seed=seed, replications=replications, level=level)


def _coverage_rows(report):
    rows = []
    for family in FAMILIES:
        for label, cov in zip(report.target_labels(family), report.coverage(family).tolist()):
            rows.append([family, label, cov])
    return rows


def cmd_simulate(study, output_dir, seed=None, replications=None, level=None, n_jobs=1, progress=True):
    """Run a study and write variance pairs, densities, coverage and a JSON summary."""
    config = _study_config(study, seed, replications, level)
    report = run_study(config, n_jobs=n_jobs, progress=progress)
    os.makedirs(output_dir, exist_ok=True)
    paths = {
        "variance_pairs": write_csv(os.path.join(output_dir, "variance_pairs.csv"), VARIANCE_HEADER, report.variance_rows()),
        "density": write_csv(os.path.join(output_dir, "density.csv"), DENSITY_HEADER, report.histogram()),
        "coverage": write_csv(os.path.join(output_dir, "coverage.csv"), COVERAGE_HEADER, _coverage_rows(report)),
    }
    summary = report.summary()
    summary["config"] = {
        "n_rows": config.n_rows,
        "n_cols": config.n_cols,
        "design": config.design.as_dict(),
        "seed": config.seed,
        "fit": config.fit.as_dict(),
    }
    paths["summary"] = dump_json(summary, os.path.join(output_dir, "summary.json"))
    logger.info(
        "study %s: mse m %.4g, theta %.4g, beta %.4g; mean coverage %s",
        config.name,
        report.mse_m,
        report.mse_theta,
        report.mse_beta,
        {k: round(v, 4) for k, v in summary["coverage_mean"].items()},
    )
    return report, paths


def cmd_coverage(study, output_dir, seed=None, replications=None, level=None, n_jobs=1, progress=True):
    """Coverage-only outputs: per-target coverage, boxplot quartiles and the summary."""
    config = _study_config(study, seed, replications, level)
    report = run_study(config, n_jobs=n_jobs, progress=progress)
    os.makedirs(output_dir, exist_ok=True)
    quartiles = report.coverage_quartiles()
    paths = {
        "coverage": write_csv(os.path.join(output_dir, "coverage.csv"), COVERAGE_HEADER, _coverage_rows(report)),
        "quartiles": write_csv(
            os.path.join(output_dir, "coverage_quartiles.csv"),
            QUARTILE_HEADER,
            [[f] + quartiles[f] for f in FAMILIES],
        ),
        "summary": dump_json(report.summary(), os.path.join(output_dir, "summary.json")),
    }
    return report, paths


def make_design(kind, n_rows=None, n_cols=None, n_per_form=None, items_per_form=None, n_anchor=None, rate=None, seed=0):
    needed = {
        "block": {"rows": n_rows, "cols": n_cols},
        "full": {"rows": n_rows, "cols": n_cols},
        "bernoulli": {"rows": n_rows, "cols": n_cols, "rate": rate},
        "linking": {"n-per-form": n_per_form, "items-per-form": items_per_form, "n-anchor": n_anchor},
    }.get(kind, {})
    missing = sorted(k for k, v in needed.items() if v is None)
    if missing:
        raise InvalidArgumentError("%s design needs %s" % (kind, ", ".join("--" + k for k in missing)))
    if kind == "block":
        return make_block_design(n_rows, n_cols)
    if kind == "full":
        return make_full_design(n_rows, n_cols)
    if kind == "bernoulli":
        return make_bernoulli_design(n_rows, n_cols, rate, seed)
    if kind == "linking":
        return make_linking_design(n_per_form, items_per_form, n_anchor)
    raise InvalidArgumentError("unknown design kind %r" % kind)


def cmd_make_design(output_path, kind="block", **kwargs):
    design = make_design(kind, **kwargs)
    rows, cols = design.support()
    write_mask_file(output_path, rows, cols)
    report = check_connectivity(design.to_matrix())
    stats = design.stats().as_dict()
    stats.update(
        {
            "n_rows": design.n_rows,
            "n_cols": design.n_cols,
            "n_obs": int(rows.size),
            "connected": report.connected,
            "n_components": report.n_components,
            "design": design.as_dict(),
        }
    )
    stats_path = os.path.splitext(output_path)[0] + ".stats.json"
    dump_json(stats, stats_path)
    if not report.connected:
        logger.warning("design is disconnected: %s", report.describe())
    return stats


def cmd_rollcall_prep(input_path, output_path, min_service_days=MIN_SERVICE_DAYS, party_a="Rep", party_b="Dem"):
    result = preprocess_rollcall(input_path, min_service_days, party_a, party_b)
    write_matrix_file(output_path, result.matrix)
    audit_path = os.path.splitext(output_path)[0] + ".audit.jsonl"
    write_jsonl(audit_path, result.audit + [dict(step="summary", **result.counts)])
    logger.info("wrote %s (+ %s, %s)", output_path, sidecar_path(output_path), audit_path)
    return result
