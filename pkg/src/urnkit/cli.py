"""Command-line interface.

Subcommands: ``validate`` (assumption and spectral report), ``simulate``
(trajectory CSV), ``limit`` (covariance JSON for a requested law),
``verify`` (statistical acceptance suites) and ``example`` (named built-in
demonstrations).  Exit codes: 0 success, 1 usage or config error,
2 statistical failure, 3 resource cap exceeded.

When ``--out`` is given, report paths also render matplotlib figures next
to the delimited output; ``--no-plots`` suppresses them.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, parse_config
from .io import (
    SerializationError,
    covariance_report,
    ensemble_to_csv,
    ensure_dir,
    moment_report,
    write_report,
)
from .limits import DomainError, QuadratureError
from .model import UrnModelError, friedman, identity, matching, mean_matrix, validate_structure
from .simulate import ResourceCapError, run_ensemble
from .spectral import SpectralError, classify, decomposition_for, perron_frobenius
from .verify import SUITES

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STATISTICAL = 2
EXIT_RESOURCE = 3

EXAMPLES = {
    "friedman-small": (friedman(2, 1), "two-colour rule with a small second eigenvalue"),
    "friedman-critical": (friedman(3, 1), "two-colour rule at the critical spectral gap"),
    "friedman-large": (friedman(5, 1), "two-colour rule with a large second eigenvalue"),
    "matching": (matching(4), "pure-removal matching urn (S = -1)"),
    "identity": (identity(3, 2), "diagonal rule, non-simple leading eigenvalue"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _build_parser() -> _Parser:
    p = _Parser(prog="urnkit", description=__doc__)
    p.add_argument("--version", action="version", version=f"urnkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a JSON experiment config")
    common.add_argument("--seed", type=int, help="override the base seed")
    common.add_argument("--out", help="output directory for reports and CSV")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    common.add_argument("--no-plots", action="store_true",
                        help="skip figure rendering in report paths")

    sub.add_parser("validate", parents=[common],
                   help="assumption checks and spectral classification")
    sub.add_parser("simulate", parents=[common],
                   help="run an ensemble and write the trajectory CSV")

    lim = sub.add_parser("limit", parents=[common],
                         help="write the covariance JSON of a limit law")
    lim.add_argument("--law", required=True,
                     choices=["W1", "W2", "Ws", "WJk", "VJ", "Y1", "Y2", "Ys", "YJk", "ZJ", "ZS"])
    lim.add_argument("--t", default="1", help="comma-separated time list")
    lim.add_argument("--kappa", type=int, default=1)
    lim.add_argument("--eigen", type=float, default=None,
                     help="real part selecting the Jordan block for component laws")

    ver = sub.add_parser("verify", parents=[common], help="run an acceptance suite")
    ver.add_argument("--suite", help=f"one of {sorted(SUITES)}")

    ex = sub.add_parser("example", parents=[common], help="run a named built-in")
    ex.add_argument("name", choices=sorted(EXAMPLES))
    return p


def _load_config(args) -> ExperimentConfig:
    if not args.config:
        raise _UsageError("--config is required for this command")
    try:
        with open(args.config) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise _UsageError(f"cannot read config: {exc}")


def _decomposition(structure, jordan_basis=None):
    from .spectral import decompose

    A = mean_matrix(structure)
    if jordan_basis is not None:
        return decompose(A, jordan_basis=jordan_basis)
    return decomposition_for(A)


def _spectral_summary(structure, jordan_basis=None) -> dict:
    report = validate_structure(structure)
    A = mean_matrix(structure)
    lam1, m1, a3 = perron_frobenius(A)
    out = {
        "checks": [
            {"name": c.name, "passed": c.passed, "detail": c.detail}
            for c in report.checks
        ],
        "balanced": report.balanced,
        "S": report.S,
        "mean_matrix": A.tolist(),
        "lambda1": lam1,
        "m1": m1,
        "a3_holds": a3,
    }
    if report.balanced:
        dec = _decomposition(structure, jordan_basis)
        cls = classify(dec)
        out["classification"] = {
            "subcase": cls.subcase,
            "small": [[l.real, l.imag] for l in cls.small],
            "critical": [[l.real, l.imag] for l in cls.critical],
            "large": [[l.real, l.imag] for l in cls.large],
        }
    return out


def _cmd_validate(args) -> int:
    cfg = _load_config(args)
    structure = cfg.structure()
    summary = _spectral_summary(structure, cfg.jordan_basis())
    for c in summary["checks"]:
        print(f"  {c['name']:28s} {'pass' if c['passed'] else 'FAIL'}  {c['detail']}")
    print(f"  lambda1 = {summary['lambda1']:g}   m1 = {summary['m1']}   "
          f"(A3) positive leading eigenvalue: {'pass' if summary['a3_holds'] else 'FAIL'}")
    if "classification" in summary:
        print(f"  classification: {summary['classification']['subcase']}")
    if args.out:
        ensure_dir(args.out)
        write_report(summary, os.path.join(args.out, "validate.json"))
    if not summary["balanced"]:
        print("error: structure is not balanced", file=sys.stderr)
        return EXIT_USAGE
    if cfg.regime() == "tsd" and not summary["a3_holds"]:
        print(
            "error: the time-step-dominant regime needs a positive leading "
            "eigenvalue (assumption (A3) fails: the urn dies out)",
            file=sys.stderr,
        )
        return EXIT_USAGE
    return EXIT_OK


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    es = cfg.ensemble_spec(base_seed=args.seed)
    result = run_ensemble(es, threads=max(1, args.threads))
    out_dir = ensure_dir(args.out or ".")
    csv_path = os.path.join(out_dir, "trajectories.csv")
    ensemble_to_csv(result, csv_path)
    write_report(moment_report(result), os.path.join(out_dir, "moments.json"))
    print(f"wrote {csv_path} ({es.replicates} replicates x {len(es.grid_times)} grid points)")
    print(f"wrote {os.path.join(out_dir, 'moments.json')}")
    if not args.no_plots:
        from .plots import trajectory_fan

        fig = trajectory_fan(result, os.path.join(out_dir, "trajectories.png"))
        print(f"wrote {fig}")
    return EXIT_OK


def _select_block(dec, eigen):
    if eigen is None:
        others = [b for b in dec.blocks if abs(b.lam - dec.lambda1) > 1e-9]
        if not others:
            raise _UsageError("no non-leading block; pass --eigen to select one")
        return max(others, key=lambda b: b.lam.real)
    cands = sorted(dec.blocks, key=lambda b: abs(b.lam - eigen))
    return cands[0]


def _cmd_limit(args) -> int:
    from . import limits as L

    cfg = _load_config(args)
    structure = cfg.structure()
    urn = cfg.data.get("urn")
    if urn is not None:
        mu = cfg.urn_spec().mu_float
    else:
        mu = np.full(structure.d, 1.0 / structure.d)
    times = [float(x) for x in str(args.t).split(",")]
    t1, t2 = (times[0], times[-1]) if len(times) > 1 else (times[0], times[0])
    tol = cfg.tolerances()["quad_tol"]
    dec = _decomposition(structure, cfg.jordan_basis())
    law = args.law
    if law == "W1":
        lc = L.cov_W1(t1, t2, structure, mu)
    elif law == "W2":
        lc = L.cov_W2(t1, t2, structure, mu, dec, tol)
    elif law == "Ws":
        lc = L.cov_Ws(t1, t2, structure, mu, dec, tol)
    elif law == "WJk":
        lc = L.cov_WJk(t1, t2, _select_block(dec, args.eigen), args.kappa, structure, mu, dec)
    elif law == "VJ":
        blk = _select_block(dec, args.eigen)
        cov, pseudo, horizon = L.var_VJ(blk, blk, structure, mu, dec, tol)
        lc = L.LimitCovariance("VJ", {"lam": blk.lam}, cov, pseudo_cov=pseudo, horizon=horizon)
    elif law == "Y1":
        lc = L.cov_Y1(t1, t2, structure, mu)
    elif law == "Y2":
        lc = L.cov_Y2(t1, t2, structure, mu, tol)
    elif law == "Ys":
        lc = L.cov_Ys(t1, t2, structure, mu, tol)
    elif law == "YJk":
        lc = L.cov_YJk(t1, t2, _select_block(dec, args.eigen), args.kappa, structure, mu)
    elif law == "ZJ":
        blk = _select_block(dec, args.eigen)
        lc = L.cov_ZJ(blk, blk, structure, mu, tol)
    else:
        lc = L.cov_ZS(structure, mu, tol)
    payload = covariance_report(lc)
    out_dir = ensure_dir(args.out or ".")
    path = os.path.join(out_dir, f"limit-{law}.json")
    write_report(payload, path)
    print(f"wrote {path}")
    print(np.array_str(np.asarray(lc.cov), precision=10))
    return EXIT_OK


def _cmd_verify(args) -> int:
    suite_name = args.suite
    overrides: dict = {}
    if args.config:
        cfg = _load_config(args)
        spec = cfg.suite()
        if spec:
            suite_name = suite_name or spec.get("name")
            overrides = {k: v for k, v in spec.items() if k != "name"}
    if not suite_name:
        raise _UsageError("--suite (or a config suite section) is required")
    if suite_name not in SUITES:
        raise _UsageError(f"unknown suite {suite_name!r}; available: {sorted(SUITES)}")
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.threads and args.threads > 1:
        import inspect

        if "threads" in inspect.signature(SUITES[suite_name]).parameters:
            overrides["threads"] = args.threads
    report = SUITES[suite_name](**overrides)
    for check in report["checks"]:
        status = "pass" if check["passed"] else "FAIL"
        extras = {
            k: v for k, v in check.items()
            if k not in ("name", "passed", "report") and isinstance(v, (int, float))
        }
        brief = "  ".join(f"{k}={v:.5g}" for k, v in extras.items())
        print(f"  [{status}] {check['name']}  {brief}")
    if args.out:
        out_dir = ensure_dir(args.out)
        write_report(report, os.path.join(out_dir, f"verify-{suite_name}.json"))
        print(f"wrote {os.path.join(out_dir, f'verify-{suite_name}.json')}")
        if not args.no_plots:
            from .plots import suite_figures

            for fig in suite_figures(report, out_dir):
                print(f"wrote {fig}")
    print(f"suite {suite_name}: {'pass' if report['passed'] else 'FAIL'}")
    return EXIT_OK if report["passed"] else EXIT_STATISTICAL


def _cmd_example(args) -> int:
    structure, blurb = EXAMPLES[args.name]
    print(f"{args.name}: {blurb}")
    summary = _spectral_summary(structure)
    print(f"  S = {summary['S']:g}, lambda1 = {summary['lambda1']:g}, "
          f"subcase: {summary.get('classification', {}).get('subcase')}")
    from .model import UrnSpec
    from .simulate import EnsembleSpec

    d = structure.d
    regime = "tr" if summary["S"] < 0 else "ibd"
    times = (0.25, 0.5) if summary["S"] < 0 else (0.5, 1.0)
    spec = UrnSpec(structure, N=120 * d, mu=[f"1/{d}"] * d, n=60)
    es = EnsembleSpec(spec, regime=regime, replicates=256,
                      grid_times=times, base_seed=args.seed or 7)
    result = run_ensemble(es)
    print(f"  simulated {es.replicates} replicates; mean state at final grid point: "
          f"{np.array_str(result.states[:, -1, :].mean(axis=0), precision=3)}")
    if args.out:
        out_dir = ensure_dir(args.out)
        write_report(summary, os.path.join(out_dir, f"example-{args.name}.json"))
        ensemble_to_csv(result, os.path.join(out_dir, f"example-{args.name}.csv"))
        if not args.no_plots:
            from .plots import trajectory_fan

            trajectory_fan(result, os.path.join(out_dir, f"example-{args.name}.png"),
                           title=args.name)
        print(f"  wrote example outputs under {out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "validate": _cmd_validate,
            "simulate": _cmd_simulate,
            "limit": _cmd_limit,
            "verify": _cmd_verify,
            "example": _cmd_example,
        }[args.command]
        return handler(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, UrnModelError, DomainError, SpectralError,
            SerializationError, QuadratureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ResourceCapError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
