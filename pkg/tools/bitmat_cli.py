import argparse
import logging
import os
import sys

now_dir = os.getcwd()
sys.path.append(now_dir)
from dotenv import load_dotenv
from tabulate import tabulate

from bitmat.lib.errors import BitmatError
from bitmat.modules.estimator.modules import FitConfig
from bitmat.modules.report.modules import (
    INFER_HEADER,
    RANK_HEADER,
    cmd_coverage,
    cmd_fit,
    cmd_infer,
    cmd_make_design,
    cmd_rank,
    cmd_rollcall_prep,
    cmd_simulate,
)
from bitmat.modules.rollcall.preprocess import MIN_SERVICE_DAYS
from configs.config import get_config, setup_logging

logger = logging.getLogger(__name__)

####
# USAGE
#
# python tools/bitmat_cli.py fit --input votes.csv --output fit.json
# python tools/bitmat_cli.py infer --input fit.json --rowdiff Rubio Gregg
# python tools/bitmat_cli.py rank --input fit.json --top 10
# python tools/bitmat_cli.py simulate --input scaled --output runs/scaled --threads 8


def add_fit_flags(p):
    p.add_argument("--gamma", type=float, help="learning rate (gradient) or damping (newton)")
    p.add_argument("--tol", type=float, help="stop when a sweep improves the log-likelihood by less")
    p.add_argument("--grad-tol", type=float, help="per-coordinate gradient tolerance")
    p.add_argument("--max-sweeps", type=int, help="sweep limit")
    p.add_argument("--seed", type=int, help="seed of the random starting point")
    p.add_argument("--step", choices=["gradient", "newton"], help="update rule")


def arg_parse(argv=None):
    parser = argparse.ArgumentParser(prog="bitmat", description="Logistic 1-bit matrix completion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit theta and beta to a MatrixFile")
    p.add_argument("--input", required=True, help="CSV with header i,j,y")
    p.add_argument("--output", required=True, help="fit JSON")
    p.add_argument("--allow-disconnected", action="store_true")
    add_fit_flags(p)

    p = sub.add_parser("infer", help="Wald intervals for linear forms of a fit")
    p.add_argument("--input", required=True, help="fit JSON written by fit")
    p.add_argument("--output", help="CSV of results")
    p.add_argument("--entry", nargs=2, action="append", default=[], metavar=("I", "J"))
    p.add_argument("--row", action="append", default=[], metavar="I")
    p.add_argument("--col", action="append", default=[], metavar="J")
    p.add_argument("--rowdiff", nargs=2, action="append", default=[], metavar=("I", "K"))
    p.add_argument("--weights", action="append", default=[], metavar="PATH")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--method", choices=["plugin", "true", "refined", "exact"], default="plugin")
    p.add_argument("--truth", metavar="PATH", help="JSON with the true theta and beta, for --method true")

    p = sub.add_parser("rank", help="rows ordered by theta-hat")
    p.add_argument("--input", required=True, help="fit JSON written by fit")
    p.add_argument("--output", help="CSV of the ranking")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--direction", choices=["desc", "asc"], default="desc")

    for name, text in (("simulate", "full simulation study outputs"), ("coverage", "coverage-only study outputs")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--input", "--config", dest="config", required=True, help="study preset name or JSON path")
        p.add_argument("--output", required=True, help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--replications", type=int)
        p.add_argument("--level", type=float)
        p.add_argument("--threads", type=int, help="parallel replications (default BITMAT_THREADS)")
        p.add_argument("--no-progress", action="store_true")

    p = sub.add_parser("rollcall-prep", help="roll-call CSV to MatrixFile")
    p.add_argument("--input", required=True, help="CSV with header senator,party,bill,vote,date")
    p.add_argument("--output", required=True, help="MatrixFile CSV; sidecar and audit log go beside it")
    p.add_argument("--min-service-days", type=int, default=MIN_SERVICE_DAYS)
    p.add_argument("--party-a", default="Rep", help="party whose support orients Y = 1")
    p.add_argument("--party-b", default="Dem")

    p = sub.add_parser("make-design", help="write an observation mask")
    p.add_argument("--output", required=True, help="mask CSV with header i,j")
    p.add_argument("--kind", choices=["block", "linking", "full", "bernoulli"], default="block")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--n-per-form", type=int)
    p.add_argument("--items-per-form", type=int)
    p.add_argument("--n-anchor", type=int)
    p.add_argument("--rate", type=float)
    p.add_argument("--seed", type=int, default=0)

    return parser.parse_args(argv)


def fit_config_from_args(args) -> FitConfig:
    base = FitConfig.from_dict(get_config().fit_defaults)
    return base.updated(
        learning_rate=args.gamma,
        tol=args.tol,
        grad_tol=args.grad_tol,
        max_sweeps=args.max_sweeps,
        seed=args.seed,
        step=args.step,
    )


def run(args):
    if args.command == "fit":
        record = cmd_fit(args.input, args.output, fit_config_from_args(args), args.allow_disconnected)
        print(
            "converged=%s sweeps=%d loglik=%.6f stop=%s"
            % (record["converged"], record["sweeps"], record["final_loglik"], record["stop_reason"])
        )
    elif args.command == "infer":
        forms = (
            [["entry"] + e for e in args.entry]
            + [["row", r] for r in args.row]
            + [["col", c] for c in args.col]
            + [["rowdiff"] + d for d in args.rowdiff]
            + [["weights", w] for w in args.weights]
        )
        rows = cmd_infer(
            args.input, forms, args.output, level=args.level, method=args.method, truth_path=args.truth
        )
        print(tabulate(rows, headers=INFER_HEADER, floatfmt=".4g"))
    elif args.command == "rank":
        rows = cmd_rank(args.input, args.top, args.direction, args.output)
        print(tabulate(rows, headers=RANK_HEADER, floatfmt=".3f"))
    elif args.command in ("simulate", "coverage"):
        n_jobs = args.threads if args.threads else get_config().n_threads
        func = cmd_simulate if args.command == "simulate" else cmd_coverage
        report, paths = func(
            args.config,
            args.output,
            seed=args.seed,
            replications=args.replications,
            level=args.level,
            n_jobs=n_jobs,
            progress=not args.no_progress,
        )
        print(
            tabulate(
                [[report.mse_m, report.mse_theta, report.mse_beta, report.n_excluded]],
                headers=["mse_m", "mse_theta", "mse_beta", "excluded"],
                floatfmt=".4g",
            )
        )
        for key, path in sorted(paths.items()):
            print("%s: %s" % (key, path))
    elif args.command == "rollcall-prep":
        result = cmd_rollcall_prep(args.input, args.output, args.min_service_days, args.party_a, args.party_b)
        print(tabulate(sorted(result.counts.items()), headers=["count", "value"]))
    elif args.command == "make-design":
        stats = cmd_make_design(
            args.output,
            kind=args.kind,
            n_rows=args.rows,
            n_cols=args.cols,
            n_per_form=args.n_per_form,
            items_per_form=args.items_per_form,
            n_anchor=args.n_anchor,
            rate=args.rate,
            seed=args.seed,
        )
        print(tabulate(sorted((k, v) for k, v in stats.items() if k != "design"), headers=["stat", "value"]))
    return 0


def main(argv=None):
    load_dotenv()
    setup_logging()
    args = arg_parse(argv)
    try:
        return run(args)
    except BitmatError as e:
        logger.error("%s", e)
        return e.exit_code
    except Exception:
        logger.exception("unexpected failure")
        return 1


if __name__ == "__main__":
    sys.exit(main())
