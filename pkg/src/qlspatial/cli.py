"""Command-line entry point: ``qlspatial {fit,test,variogram,simulate,validate}``.

Exit status is 0 on success, 1 when ``validate`` reports failed checks,
2 for usage errors, 3 for invalid input data, 4 for estimation failures and
5 for infeasible or non-positive-definite correlation settings.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .correlation import (
    CorrelationModel,
    NotPositiveDefiniteError,
    build_gamma,
    dump_matrix_csv,
)
from .estimator import EstimationError, fit, format_fit_kv, format_fit_text, wald_test
from .glm import DesignError, check_design
from .gridio import GridData, GridFileError, read_grid, write_grid
from .lattice import Lattice
from .simulate import FieldSimulator, InfeasibleCorrelationError, SimulationConfig
from .variogram import (
    DegenerateVariogramError,
    correlation_from_fit,
    empirical_semivariogram,
    fit_exponential,
)

EXIT_OK = 0
EXIT_CHECKS_FAILED = 1
EXIT_DATA = 3
EXIT_ESTIMATION = 4
EXIT_INFEASIBLE = 5

OUT_ENV = "QLSPATIAL_OUT"
DEFAULT_BETA = (-0.34, -0.26)

log = logging.getLogger("qlspatial")


class CommandError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------- config


def read_config(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CommandError(f"{path}:{lineno}: expected key=value, got {raw!r}", EXIT_DATA)
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("_", "-")] = value
    return out


def _config_argv(config: dict[str, str], parser: argparse.ArgumentParser) -> list[str]:
    known = {opt: action for action in parser._actions for opt in action.option_strings}
    argv = []
    for key, value in config.items():
        opt = f"--{key}"
        if opt not in known:
            raise CommandError(f"unknown config key {key!r}", EXIT_DATA)
        if isinstance(known[opt], argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                argv.append(opt)
        else:
            argv += [opt, value]
    return argv


def _output_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------- parser


def _add_correlation_flags(p, default_rho=None):
    g = p.add_argument_group("correlation")
    g.add_argument("--metric", type=int, choices=(1, 2), default=2, help="L_p metric for distances")
    g.add_argument("--rho", type=float, default=default_rho, help="fixed decay rate (per unit distance)")
    g.add_argument("--a", type=float, default=1.0, help="correlation scale constant in (0, 1]")
    g.add_argument("--range", dest="range_", type=float, help="fixed exponential range; rho = exp(-1/range)")
    g.add_argument("--effective-range-convention", choices=("literal", "thirds"), default="literal",
                   help="literal: scale = fitted range; thirds: scale = range / 3")


def _add_data_flags(p):
    p.add_argument("data", help="grid CSV with columns row,col,y[,covariates...]")
    p.add_argument("--spacing", type=float, default=1.0, help="distance between adjacent sites")
    p.add_argument("--corr-source", choices=("data", "covariate", "fixed"),
                   help="correlation from the response variogram (default), the covariate variogram, "
                        "or fixed --rho/--range")
    p.add_argument("--bin-width", type=float, default=0.5)
    p.add_argument("--max-lag", type=float)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--damping", action="store_true", help="halve Newton steps that increase max|U|")
    p.add_argument("--dump-matrices", action="store_true", help="write the correlation matrix as CSV")


def _add_common(p):
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or the working directory)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qlspatial", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="quasi-likelihood fit of a marginal logistic model")
    _add_data_flags(p)
    _add_correlation_flags(p)
    _add_common(p)

    p = sub.add_parser("test", help="Wald test of independence between the response and one covariate")
    _add_data_flags(p)
    _add_correlation_flags(p)
    _add_common(p)

    p = sub.add_parser("variogram", help="empirical semivariogram with exponential fit")
    p.add_argument("data")
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--column", default="y", help="field to analyse (y or a covariate name)")
    p.add_argument("--bin-width", type=float, default=0.5)
    p.add_argument("--max-lag", type=float)
    _add_common(p)

    p = sub.add_parser("simulate", help="write a synthetic grid file")
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--beta0", type=float, default=DEFAULT_BETA[0])
    p.add_argument("--beta1", type=float, default=DEFAULT_BETA[1])
    p.add_argument("--shrinkage", action="store_true", help="shrink a non-PD latent matrix toward identity")
    p.add_argument("--output", help="file name inside --out (default simulated_seed<seed>.csv)")
    _add_correlation_flags(p, default_rho=math.exp(-1 / 1.091))
    _add_common(p)

    p = sub.add_parser("validate", help="run the Monte Carlo and numerical validation suites")
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--reps", type=int, help="replicates for both studies (default 2000 / 500)")
    p.add_argument("--shrinkage", action="store_true")
    _add_correlation_flags(p, default_rho=0.4)
    _add_common(p)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if "--config" in argv:
        i = argv.index("--config")
        if i + 1 >= len(argv):
            parser.error("--config needs a file")
        command = argv[0]
        subparser = parser._subparsers._group_actions[0].choices[command]
        argv = [command] + _config_argv(read_config(argv[i + 1]), subparser) + argv[1:]
    return parser.parse_args(argv)


# --------------------------------------------------------------------------- helpers


def _load(args) -> GridData:
    try:
        return read_grid(args.data, spacing=args.spacing)
    except FileNotFoundError as exc:
        raise CommandError(f"cannot read {args.data}: {exc.strerror}", EXIT_DATA) from exc
    except GridFileError as exc:
        raise CommandError(str(exc), EXIT_DATA) from exc


def _fixed_model(args) -> CorrelationModel | None:
    if args.range_ is not None:
        scale = args.range_ if args.effective_range_convention == "literal" else args.range_ / 3
        return CorrelationModel(args.a, math.exp(-1 / scale), args.metric)
    if args.rho is not None:
        return CorrelationModel(args.a, args.rho, args.metric)
    return None


def _variogram_outputs(field, lattice, args, out: Path, stem: str):
    sv = empirical_semivariogram(field, lattice, args.bin_width, args.max_lag)
    if sv.constant_field:
        raise CommandError("no spatial variation: the field is constant", EXIT_DATA)
    try:
        vfit = fit_exponential(sv)
    except DegenerateVariogramError as exc:
        raise CommandError(str(exc), EXIT_DATA) from exc
    sv.to_csv(out / f"{stem}.csv")
    plotting.plot_semivariogram(sv, vfit, out / f"{stem}.svg")
    return sv, vfit


def _resolve_correlation(args, data: GridData, out: Path):
    """Correlation model plus a line describing where it came from."""
    source = args.corr_source or ("fixed" if args.rho is not None or args.range_ is not None else "data")
    if source == "fixed":
        model = _fixed_model(args)
        if model is None:
            raise CommandError("--corr-source fixed needs --rho or --range", 2)
        return model, f"fixed a={model.a:g}, rho={model.rho:.6g}, metric L{model.metric:g}"
    if source == "covariate":
        if len(data.covariates) != 1:
            raise CommandError("--corr-source covariate needs exactly one covariate column", EXIT_DATA)
        field = next(iter(data.covariates.values()))
    else:
        field = data.y
    _, vfit = _variogram_outputs(field, data.lattice, args, out, "variogram")
    model = correlation_from_fit(vfit, args.effective_range_convention)
    if args.metric != 2:
        model = CorrelationModel(model.a, model.rho, args.metric)
    flag = " (range at search boundary)" if vfit.at_boundary else ""
    desc = (f"variogram of {'response' if source == 'data' else 'covariate'}: sill {vfit.sill:.4f}, "
            f"range {vfit.range:.4f}{flag}; rho = {model.rho:.6g}, metric L{model.metric:g}")
    return model, desc


def _fit_data(args, data: GridData, out: Path):
    names = ["intercept", *data.covariates]
    T = np.column_stack([np.ones(data.lattice.size), *data.covariates.values()])
    try:
        check_design(T)
    except DesignError as exc:
        raise CommandError(f"design matrix rejected: {exc}", EXIT_DATA) from exc
    model, desc = _resolve_correlation(args, data, out)
    try:
        gamma = build_gamma(data.lattice, model)
    except NotPositiveDefiniteError as exc:
        raise CommandError(str(exc), EXIT_INFEASIBLE) from exc
    if args.dump_matrices:
        dump_matrix_csv(gamma.gamma, out / "gamma.csv")
    try:
        result = fit(T, data.y, gamma, tol=args.tol, max_iter=args.max_iter, damping=args.damping)
    except EstimationError as exc:
        raise CommandError(f"estimation failed: {exc}", EXIT_ESTIMATION) from exc
    return result, names, desc


# --------------------------------------------------------------------------- commands


def cmd_fit(args) -> int:
    out = _output_dir(args)
    data = _load(args)
    result, names, desc = _fit_data(args, data, out)
    text = f"data: {args.data} ({data.lattice.m}x{data.lattice.n} sites)\ncorrelation: {desc}\n\n"
    text += format_fit_text(result, names)
    (out / "fit.txt").write_text(text)
    (out / "fit.kv").write_text(format_fit_kv(result, names))
    print(text, end="")
    return EXIT_OK


def cmd_test(args) -> int:
    out = _output_dir(args)
    data = _load(args)
    if len(data.covariates) != 1:
        raise CommandError(f"independence test needs exactly one covariate column, found {len(data.covariates)}",
                           EXIT_DATA)
    result, names, desc = _fit_data(args, data, out)
    test = wald_test(result, 1)
    cov = names[1]
    lines = [
        f"data: {args.data} ({data.lattice.m}x{data.lattice.n} sites)",
        f"correlation: {desc}",
        "",
        f"beta1 ({cov}) = {test.estimate:.4f}, var = {test.variance:.4f}",
        f"Wald statistic beta1^2/var(beta1) = {test.statistic:.2f} on 1 df, p-value = {test.p_value:.4g}",
    ]
    if test.p_value < 0.05:
        verb = "discourages" if test.estimate < 0 else "encourages"
        sign = "negative" if test.estimate < 0 else "positive"
        lines.append(f"direction: {sign} association; presence of {cov} {verb} presence of the response")
    else:
        lines.append("direction: no significant association at the 5% level")
    report = "\n".join(lines) + "\n\n" + format_fit_text(result, names, test)
    (out / "test.txt").write_text(report)
    (out / "test.kv").write_text(format_fit_kv(result, names, test))
    print(report, end="")
    return EXIT_OK


def cmd_variogram(args) -> int:
    out = _output_dir(args)
    data = _load(args)
    if args.column == "y":
        field = data.y
    elif args.column in data.covariates:
        field = data.covariates[args.column]
    else:
        raise CommandError(f"no column {args.column!r} in {args.data}", EXIT_DATA)
    try:
        sv, vfit = _variogram_outputs(field, data.lattice, args, out, "variogram")
    except ValueError as exc:
        raise CommandError(str(exc), EXIT_DATA) from exc
    print(f"{len(sv)} bins written to {out / 'variogram.csv'}")
    print(f"exponential fit: sill {vfit.sill:.4f}, range {vfit.range:.4f}"
          + (" (range at search boundary)" if vfit.at_boundary else ""))
    print(f"figure: {out / 'variogram.svg'}")
    return EXIT_OK


def _sim_model(args) -> CorrelationModel:
    model = _fixed_model(args)
    return model if model is not None else CorrelationModel(args.a, 0.0, args.metric)


def cmd_simulate(args) -> int:
    out = _output_dir(args)
    lattice = Lattice(args.m, args.n)
    model = _sim_model(args)
    beta = (args.beta0, args.beta1)
    config = SimulationConfig(lattice, beta, None, model, args.seed, 1, args.shrinkage)
    sim = FieldSimulator(config)
    field = sim.field(0)
    path = out / (args.output or f"simulated_seed{args.seed}.csv")
    write_grid(path, lattice, field.y, {"x": config.covariate})
    print(f"wrote {path} ({lattice.m}x{lattice.n} = {lattice.size} sites)")
    print(f"true beta: beta0={beta[0]:g}, beta1={beta[1]:g}")
    print(f"correlation: a={model.a:g}, rho={model.rho:.6g}, metric L{model.metric:g}")
    if sim.shrinkage_eps:
        print(f"latent matrix shrunk toward identity with eps={sim.shrinkage_eps:.4g}")
    return EXIT_OK


def _write_records(path: Path, records: list[dict]):
    keys = list(dict.fromkeys(k for r in records for k in r))
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, keys, lineterminator="\n")
        writer.writeheader()
        writer.writerows(records)


def cmd_validate(args) -> int:
    from . import validation

    out = _output_dir(args)
    lattice = Lattice(args.m, args.n)
    model = _fixed_model(args) or CorrelationModel(args.a, 0.4, args.metric)
    norm_reps = args.reps or 2000
    cov_reps = args.reps or 500
    strict = args.reps is None or args.reps >= 1000
    if not strict:
        print(f"note: {args.reps} replicates is below the recommended 1000/500; results are indicative only")
    norm_cfg = SimulationConfig(lattice, (0.0,), None, model, args.seed, norm_reps, args.shrinkage)
    cov_cfg = SimulationConfig(lattice, DEFAULT_BETA, None, model, args.seed, cov_reps, args.shrinkage)
    checks = validation.run_all(norm_cfg, cov_cfg, strict=strict)

    for check in checks:
        art = check.artifacts
        if "normality" in art:
            res = art["normality"]
            _write_records(out / "normality.csv",
                           [{"replicate": i, "standardized_sum": repr(float(z))} for i, z in enumerate(res.standardized)])
            plotting.plot_standardized_sums(res.standardized, out / "normality.svg")
        if "coverage" in art:
            res = art["coverage"]
            _write_records(out / "coverage.csv", res.records)
            plotting.plot_coverage(res.records, res.beta0, out / "coverage.svg")
        if "null" in art:
            _write_records(out / "coverage_null.csv", art["null"].records)
    report = validation.format_report(checks)
    (out / "validation.txt").write_text(report)
    print(report, end="")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECKS_FAILED


COMMANDS = {
    "fit": cmd_fit,
    "test": cmd_test,
    "variogram": cmd_variogram,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (InfeasibleCorrelationError, NotPositiveDefiniteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
