"""Command-line interface.

Exit codes: 0 success, 1 invariant violation (``check-invariants``),
2 invalid input, 3 numeric failure.  Every subcommand is a pure function of
its flags, input files and seed; worker counts never change the output.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import distributions, estimators, experiments, invariants, lowerbound
from . import rng as rngmod
from .errors import NoRootInInterval, NumericFailure, ValidationError
from .smoothing import SmoothedModel

EXIT_OK, EXIT_VIOLATION, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on its own; route through our handler instead
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def fmt(v) -> str:
    """Key=value number format: 15 significant digits, stable across platforms."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.15g}"


def emit(out, **kv):
    for k, v in kv.items():
        out.write(f"{k}={fmt(v)}\n")


def load_dist(spec: str):
    """A JSON spec file, inline JSON text, or a fixture name."""
    if os.path.exists(spec):
        return distributions.load(spec)
    if spec.lstrip().startswith("{"):
        return distributions.from_json(spec)
    if spec in distributions.FIXTURE_NAMES:
        return distributions.make_fixture(spec)
    raise ValidationError(f"--dist {spec!r} is neither a readable file nor a fixture name")


def read_samples(path: str) -> np.ndarray:
    """One float per line; blank and ``#`` lines are skipped."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ValidationError(f"cannot read samples file: {exc}") from None
    vals = []
    for no, line in enumerate(lines, 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        try:
            vals.append(float(s))
        except ValueError:
            raise ValidationError(f"{path}:{no}: not a number: {s!r}") from None
    if not vals:
        raise ValidationError(f"{path}: no samples")
    x = np.array(vals)
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{path}: samples must be finite")
    return x


def float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command}: missing required flag(s) {', '.join(missing)}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_estimate(args, out):
    _require(args, "dist", "samples")
    f = load_dist(args.dist)
    x = read_samples(args.samples)
    r_override = args.r
    if args.eps_max is not None:
        if r_override is not None:
            raise UsageError("estimate: --r and --eps-max are mutually exclusive")
        r_override = estimators.solve_min_smoothing(f, args.eps_max, args.delta, x.size,
                                                    args.gamma)
    cfg = estimators.EstimatorConfig(delta=args.delta, gamma=args.gamma,
                                     eps_max=args.eps_max, r_override=r_override)
    emit(out, seed=args.seed, n=x.size)
    gen = rngmod.stream(args.seed, "estimate")
    failure = None
    try:
        res = estimators.global_mle(f, x, args.delta, gen, cfg)
    except NoRootInInterval as exc:
        if exc.result is None:
            raise
        res, failure = exc.result, exc
    emit(out, lambda_hat=res.lambda_hat, interval_lo=res.interval[0],
         interval_hi=res.interval[1], r_used=res.r_used, I_r=res.fisher_r,
         predicted_bound=res.predicted_bound, refinement_factor=res.refinement_factor,
         flagged=res.flagged)
    for w in res.warnings:
        out.write(f"warning={w}\n")
    if failure is not None:
        raise failure
    return EXIT_OK


def cmd_fisher(args, out):
    _require(args, "dist", "r")
    m = SmoothedModel(load_dist(args.dist), args.r)
    emit(out, r=args.r, I_r=m.fisher_info(), bound=1.0 / (args.r * args.r))
    return EXIT_OK


def cmd_score_scan(args, out):
    _require(args, "dist", "r")
    m = SmoothedModel(load_dist(args.dist), args.r)
    if args.points < 2:
        raise UsageError("score-scan: --points must be >= 2")
    if args.lo is None and args.hi is None:
        x = invariants.scan_grid(m, args.points)
    else:
        _require(args, "lo", "hi")
        if not args.lo < args.hi:
            raise UsageError("score-scan: need --lo < --hi")
        x = np.linspace(args.lo, args.hi, args.points)
    s = m.eval_score(x)
    ds = m.eval_score_deriv(x)
    out.write("x,s,s_prime\n")
    for row in zip(x, s, ds):
        out.write(",".join(experiments._fmt(v) for v in row) + "\n")
    return EXIT_OK


def _experiment_cfg(args, **kw) -> experiments.ExperimentConfig:
    dist = load_dist(args.dist)
    opts = dict(dist=dist, lambda_true=args.lambda_true, delta=args.delta,
                seed=args.seed, workers=args.workers)
    if args.n is not None:
        opts["n_grid"] = tuple(args.n)
    if args.r is not None:
        opts["r_grid"] = tuple(args.r)
    if args.trials is not None:
        opts["trials"] = args.trials
    opts.update(kw)
    return experiments.ExperimentConfig(**opts)


def _deliver_csv(args, out, text, **summary):
    """CSV goes to ``--out`` (summary on stdout) or to stdout (summary on stderr)."""
    if args.out is None:
        out.write(text)
        emit(sys.stderr, seed=args.seed, **summary)
        return
    with open(args.out, "w", newline="") as fh:
        fh.write(text)
    emit(out, seed=args.seed, **summary)
    out.write(f"out={args.out}\n")


def cmd_heatmap(args, out):
    _require(args, "dist")
    cfg = _experiment_cfg(args)
    cells = experiments.run_mse_heatmap(cfg)
    best = experiments.best_r_by_n(cells)
    text = experiments.write_heatmap_csv(cells)
    summary = {f"best_r_n{n}": best[n] for n in cfg.n_grid if n in best}
    _deliver_csv(args, out, text, trials=cfg.trials, **summary)
    return EXIT_OK


def cmd_errors(args, out):
    _require(args, "dist")
    extra = {}
    if args.estimators is not None:
        extra["estimators"] = tuple(e for e in args.estimators.split(",") if e)
    if (args.n is not None and len(args.n) != 1) or (args.r is not None and len(args.r) != 1):
        raise UsageError("errors: give at most one --n and one --r")
    cfg = _experiment_cfg(args, **extra)
    res = experiments.run_error_distribution(cfg)
    text = experiments.write_errors_csv(res["errors"])
    summary = {}
    for name, errs in res["errors"].items():
        ok = errs[np.isfinite(errs)]
        summary[f"mse_{name}"] = float(np.mean(ok * ok)) if ok.size else math.nan
        summary[f"failures_{name}"] = res["failures"][name]
    _deliver_csv(args, out, text, n=res["n"], r=res["r"], trials=cfg.trials, **summary)
    return EXIT_OK


def cmd_coverage(args, out):
    _require(args, "dist")
    if args.n is not None and len(args.n) != 1:
        raise UsageError("coverage: give exactly one --n")
    cfg = _experiment_cfg(args)
    res = experiments.run_coverage(cfg)
    text = experiments.write_coverage_csv(res["coverage"], res["trials"])
    _deliver_csv(args, out, text, n=cfg.n_grid[0], trials=res["trials"],
                 failures=res["failures"])
    return EXIT_OK


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return obj


def cmd_lowerbound(args, out):
    _require(args, "dist", "r")
    if (args.eps is None) == (args.shift is None):
        raise UsageError("lowerbound: give exactly one of --eps or --shift (shift = 2 eps)")
    eps = args.eps if args.eps is not None else 0.5 * args.shift
    m = SmoothedModel(load_dist(args.dist), args.r)
    rep = lowerbound.check_newlb_conditions(m, eps, args.kappa, kmax=args.kmax,
                                            n=args.n[0] if args.n else None, C=args.C)
    if args.trials is not None:
        if not args.n:
            raise UsageError("lowerbound: --trials needs --n")
        rep.tv_complement_estimate, rep.tv_stderr = lowerbound.tv_product_mc(
            m, rep.shift, args.n[0], args.trials, args.seed, workers=args.workers)
    doc = {"seed": args.seed, "all_passed": rep.all_passed, **rep.to_json()}
    json.dump(_json_safe(doc), out, indent=2, sort_keys=True, allow_nan=False)
    out.write("\n")
    return EXIT_OK


def cmd_check_invariants(args, out):
    if not args.scale > 0:
        raise UsageError("check-invariants: --scale must be positive")
    failed = 0

    def report(chk):
        nonlocal failed
        failed += not chk.passed
        out.write(f"{'PASS' if chk.passed else 'FAIL'} {chk.module}: {chk.name}: {chk.detail}\n")
        out.flush()

    res = invariants.run_all(scale=args.scale, only=args.only, progress=report)
    out.write(f"checks={len(res)} failed={failed}\n")
    return EXIT_VIOLATION if failed else EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "fisher": cmd_fisher,
    "score-scan": cmd_score_scan,
    "heatmap": cmd_heatmap,
    "errors": cmd_errors,
    "coverage": cmd_coverage,
    "lowerbound": cmd_lowerbound,
    "check-invariants": cmd_check_invariants,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smoothmle",
                description="Gaussian-smoothed maximum likelihood for 1-D location.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    def common(sp, workers=False):
        sp.add_argument("--dist", help="distribution JSON file, inline JSON or fixture name")
        sp.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
        if workers:
            sp.add_argument("--workers", type=int, default=1,
                            help="worker processes; output does not depend on it")

    sp = sub.add_parser("estimate", help="global smoothed MLE from a samples file")
    common(sp)
    sp.add_argument("--samples", help="file with one float per line, '#' comments allowed")
    sp.add_argument("--delta", type=float, default=0.05)
    sp.add_argument("--gamma", type=float, default=1.0)
    sp.add_argument("--eps-max", type=float, help="choose r as the minimal feasible smoothing")
    sp.add_argument("--r", type=float, help="override the smoothing radius")

    sp = sub.add_parser("fisher", help="smoothed Fisher information and the 1/r^2 bound")
    common(sp)
    sp.add_argument("--r", type=float)

    sp = sub.add_parser("score-scan", help="CSV of the smoothed score and its derivative")
    common(sp)
    sp.add_argument("--r", type=float)
    sp.add_argument("--lo", type=float)
    sp.add_argument("--hi", type=float)
    sp.add_argument("--points", type=int, default=1000)

    for name, helptext in (("heatmap", "MSE of the smoothed MLE over an (n, r) grid"),
                           ("errors", "paired per-trial errors of several estimators"),
                           ("coverage", "coverage of the global MLE's predicted bound")):
        sp = sub.add_parser(name, help=helptext)
        common(sp, workers=True)
        sp.add_argument("--n", type=int_list, help="sample size(s), comma separated")
        sp.add_argument("--r", type=float_list, help="radius or radii, comma separated")
        sp.add_argument("--trials", type=int)
        sp.add_argument("--delta", type=float, default=0.05)
        sp.add_argument("--lambda", dest="lambda_true", type=float, default=0.0)
        sp.add_argument("--out", help="CSV path; stdout when omitted")
        if name == "errors":
            sp.add_argument("--estimators", help="comma separated subset of "
                            + ",".join(experiments.ESTIMATORS))

    sp = sub.add_parser("lowerbound", help="two-point lower-bound conditions as JSON")
    common(sp, workers=True)
    sp.add_argument("--r", type=float)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--shift", type=float)
    sp.add_argument("--kappa", type=float, default=0.05)
    sp.add_argument("--kmax", type=int, default=4)
    sp.add_argument("--n", type=int_list)
    sp.add_argument("--C", type=float, default=1.0)
    sp.add_argument("--trials", type=int, help="Monte Carlo trials for 1 - TV (>= 1000)")

    sp = sub.add_parser("check-invariants", help="run the property suite")
    sp.add_argument("--scale", type=float, default=1.0,
                    help="multiplier on Monte Carlo trial counts")
    sp.add_argument("--only", help="substring filter on module or check name")
    return p


def main(argv=None, out=None) -> int:
    out = out if out is not None else sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be >= 1")
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n{parser.format_usage()}")
        return EXIT_VALIDATION
    except (ValidationError, OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    except NumericFailure as exc:
        sys.stderr.write(f"numeric failure: {type(exc).__name__}: {exc}\n")
        failed = getattr(exc, "failed", None)
        if failed:
            sys.stderr.write("failed conditions: " + "; ".join(failed) + "\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
