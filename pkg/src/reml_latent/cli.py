"""Command-line interface: ``reml-latent {fit,screen,verify,correct}``.

Exit codes: 0 success, 2 usage (including refused problem sizes), 3 parse or
I/O failure, 4 model-condition failure, 5 verification failure.  Errors are
printed to stderr as ``error[<category>]: <message>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import CovariateBasis, FitConfig, sample_covariance, symmetric_eigh
from .downstream import KernelEigen, correct_residuals, fit_all_gene_variances, remove_confounding
from .errors import (
    EnumerationSizeError,
    ModelConditionError,
    NotPositiveDefiniteError,
    RankError,
    RemlLatentError,
    ShapeError,
)
from .io import center_samples, read_expression, read_fit, read_matrix, write_fit, write_matrix
from .oracle import MAX_ORACLE_N, oracle_maximize
from .screening import compute_pcs, screen_candidates
from .selection import fit_auto
from .solver import fit_full

log = logging.getLogger("reml_latent")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_MODEL, EXIT_VERIFY = 0, 2, 3, 4, 5
VERIFY_TOLERANCE = 1e-6


class VerificationFailed(Exception):
    category = "verification"


class UsageError(Exception):
    category = "usage"


# --------------------------------------------------------------------------
# argument types
# --------------------------------------------------------------------------


def _open_unit(text):
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie strictly between 0 and 1, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {text}")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {text}")
    return v


LAYOUT_CHOICES = ["samples-rows", "samples-cols"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reml-latent",
        description="Closed-form REML fits of known and latent variance components.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit the model with automatic latent dimension")
    fit.add_argument("--expression", required=True, type=Path)
    fit.add_argument("--covariates", type=Path, help="samples x candidates (or raw matrix with --pcs)")
    fit.add_argument("--rho", required=True, type=_open_unit,
                     help="target fraction of variance explained, in (0, 1)")
    fit.add_argument("--theta", default=0.0, type=_nonneg_float,
                     help="minimum fraction of tr(C) each covariate must explain alone")
    fit.add_argument("--pcs", type=_nonneg_int,
                     help="use this many principal components of the covariates file as candidates")
    fit.add_argument("--out", required=True, type=Path)
    fit.add_argument("--layout", choices=LAYOUT_CHOICES, default="samples-cols",
                     help="expression file orientation (default: genes x samples)")
    fit.add_argument("--covariates-layout", choices=LAYOUT_CHOICES, default="samples-rows")
    fit.add_argument("--max-latent", type=_nonneg_int)
    fit.add_argument("--seed", type=int, default=0, help="recorded for provenance; the fit is deterministic")
    fit.add_argument("--report-overlap", action="store_true",
                     help="report cosine similarities between covariates and latent factors")
    fit.set_defaults(handler=cmd_fit)

    scr = sub.add_parser("screen", help="score candidate covariates")
    scr.add_argument("--expression", required=True, type=Path)
    scr.add_argument("--covariates", required=True, type=Path)
    scr.add_argument("--theta", required=True, type=_nonneg_float)
    scr.add_argument("--pcs", type=_nonneg_int)
    scr.add_argument("--out", type=Path, help="report path (default: stdout)")
    scr.add_argument("--layout", choices=LAYOUT_CHOICES, default="samples-cols")
    scr.add_argument("--covariates-layout", choices=LAYOUT_CHOICES, default="samples-rows")
    scr.set_defaults(handler=cmd_screen)

    ver = sub.add_parser("verify", help="compare the analytic fit with a numerical optimum")
    ver.add_argument("--expression", type=Path, help="use this data instead of a built-in instance")
    ver.add_argument("--covariates", type=Path)
    ver.add_argument("--layout", choices=LAYOUT_CHOICES, default="samples-cols")
    ver.add_argument("--covariates-layout", choices=LAYOUT_CHOICES, default="samples-rows")
    ver.add_argument("--instance", choices=["pcs", "random"], default="pcs",
                     help="built-in generator: known covariates are the top principal "
                          "axes of the data (pcs) or random directions (random)")
    ver.add_argument("--n", type=_positive_int, default=6)
    ver.add_argument("--m", type=_positive_int, default=100)
    ver.add_argument("--d", type=_nonneg_int, default=1)
    ver.add_argument("--p", type=_nonneg_int, default=1)
    ver.add_argument("--restarts", type=_positive_int, default=16)
    ver.add_argument("--seed", type=int, default=0)
    ver.set_defaults(handler=cmd_verify)

    cor = sub.add_parser("correct", help="write confounder-corrected expression")
    cor.add_argument("--fit", required=True, type=Path, help="output directory of `fit`")
    cor.add_argument("--expression", required=True, type=Path)
    cor.add_argument("--out", required=True, type=Path)
    cor.add_argument("--layout", choices=LAYOUT_CHOICES, default="samples-cols")
    cor.add_argument("--method", choices=["kernel", "subtract"], default="kernel",
                     help="kernel: y -> K (s_c K + s_e I)^-1 y; "
                          "subtract: y -> s_e (s_c K + s_e I)^-1 y")
    cor.add_argument("--no-recenter", action="store_true")
    cor.set_defaults(handler=cmd_correct)
    return parser


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _align(matrix, sample_ids, what):
    """Reorder rows of ``matrix`` to ``sample_ids`` when labels allow it."""
    if matrix.shape[0] == 0 and matrix.shape[1] == 0:
        return np.zeros((len(sample_ids), 0)), ()
    if matrix.shape[0] != len(sample_ids):
        raise ShapeError(
            f"{what} has {matrix.shape[0]} samples but the expression data has {len(sample_ids)}"
        )
    if set(matrix.row_ids) == set(sample_ids):
        index = {lab: i for i, lab in enumerate(matrix.row_ids)}
        return matrix.values[[index[s] for s in sample_ids]], matrix.col_ids
    log.warning("%s sample labels differ from the expression labels; using file order", what)
    return matrix.values, matrix.col_ids


def _load_candidates(args, Y):
    raw = read_matrix(args.covariates, args.covariates_layout)
    values, ids = _align(raw, Y.sample_ids, "covariates file")
    if args.pcs is not None:
        if values.shape[1] == 0 and args.pcs > 0:
            raise RankError(f"requested {args.pcs} principal components of an empty matrix",
                            achievable=0)
        values = compute_pcs(values, args.pcs) if values.shape[1] else values
        ids = tuple(f"PC{k + 1}" for k in range(values.shape[1]))
    return values, ids


def _screening_rows(result):
    rank = {cid: r + 1 for r, cid in enumerate(result.retained)}
    header = ["candidate_id", "beta2", "sigma2", "admissible", "passed_threshold",
              "retained", "rank", "reason"]
    lines = ["\t".join(header)]
    for rec in result.records:
        lines.append("\t".join([
            rec.candidate_id, format(rec.beta2, ".17g"), format(rec.sigma2, ".17g"),
            str(rec.admissible).lower(), str(rec.passed_threshold).lower(),
            str(rec.retained).lower(), str(rank.get(rec.candidate_id, "")), rec.reason or "",
        ]))
    return "\n".join(lines) + "\n"


def overlap_cosines(Z, X):
    """``|cos|`` between every covariate column and every latent factor."""
    Z = np.asarray(Z, dtype=float)
    X = np.asarray(X, dtype=float)
    if Z.shape[1] == 0 or X.shape[1] == 0:
        return np.zeros((Z.shape[1], X.shape[1]))
    zn = Z / np.linalg.norm(Z, axis=0)
    xn = X / np.linalg.norm(X, axis=0)
    return np.abs(zn.T @ xn)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_fit(args) -> int:
    Y = read_expression(args.expression, args.layout)
    C = sample_covariance(Y)
    covariate_ids = ()
    screening = None
    if args.covariates is not None:
        candidates, ids = _load_candidates(args, Y)
        screening = screen_candidates(C, candidates, theta=args.theta, candidate_ids=ids)
        basis = screening.basis
        covariate_ids = screening.retained
    else:
        basis = CovariateBasis.empty(Y.n)
    config = FitConfig(rho=args.rho, theta=args.theta, max_latent=args.max_latent)
    fit = fit_auto(C, basis, config)

    extra = {}
    if screening is not None:
        extra["screening"] = {
            "candidates": len(screening.records),
            "retained": list(screening.retained),
            "threshold": screening.threshold,
            "fallback": "ppca" if not screening.retained else None,
        }
    cos = None
    if args.report_overlap:
        cos = overlap_cosines(basis.Z, fit.latent)
        extra["overlap"] = {"max_abs_cosine": float(cos.max(initial=0.0)),
                            "cosines": cos.tolist()}
    config_echo = {
        "expression": str(args.expression),
        "covariates": str(args.covariates) if args.covariates else None,
        "rho": args.rho, "theta": args.theta, "pcs": args.pcs, "layout": args.layout,
        "max_latent": args.max_latent, "seed": args.seed,
    }
    write_fit(fit, args.out, sample_ids=Y.sample_ids, covariate_ids=covariate_ids,
              config=config_echo, extra=extra)

    known, latent, residual = fit.variance_decomposition
    out = sys.stdout
    print(f"samples n={fit.n}  known covariates d={fit.d}  latent factors p={fit.p}", file=out)
    if screening is not None and not screening.retained:
        print("screening retained 0 covariates; fitted latent factors only (PPCA)", file=out)
    print(f"sigma2={fit.sigma2:.6g}  loglik={fit.loglik:.10g}", file=out)
    print(f"variance explained: known={known:.4f} latent={latent:.4f} residual={residual:.4f}",
          file=out)
    sel = fit.selection
    if sel.retries:
        print(f"existence condition forced p from {sel.initial_p} to {sel.p}", file=out)
    if sel.exceeds_target:
        print(f"explained variance {fit.explained_variance:.4f} exceeds rho={sel.rho}", file=out)
    if cos is not None:
        print(f"max |cosine| between covariates and latent factors: {cos.max(initial=0.0):.3e}",
              file=out)
    print(f"wrote {args.out}", file=out)
    return EXIT_OK


def cmd_screen(args) -> int:
    Y = read_expression(args.expression, args.layout)
    C = sample_covariance(Y)
    candidates, ids = _load_candidates(args, Y)
    result = screen_candidates(C, candidates, theta=args.theta, candidate_ids=ids)
    text = _screening_rows(result)
    if args.out is None:
        sys.stdout.write(text)
    else:
        try:
            Path(args.out).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write {args.out}: {exc.strerror or exc}") from exc
    log.info("retained %d of %d candidates", len(result.retained), len(result.records))
    return EXIT_OK


def builtin_instance(kind: str, n: int, m: int, d: int, seed: int):
    """Synthetic covariance and covariates for ``verify``.

    ``pcs`` uses the top ``d`` principal axes of the simulated data as
    known covariates, ``random`` uses random directions.
    """
    rng = np.random.default_rng(seed)
    scales = np.linspace(3.0, 1.0, n) ** 2
    Y = rng.normal(size=(n, m)) * np.sqrt(scales)[:, None]
    C = sample_covariance(center_samples(Y))
    if d == 0:
        return C, CovariateBasis.empty(n)
    if kind == "pcs":
        _, vecs = symmetric_eigh(C.matrix)
        Z = vecs[:, :d]
    else:
        Z = rng.normal(size=(n, d))
    return C, CovariateBasis.from_covariates(Z)


def cmd_verify(args) -> int:
    if args.expression is not None:
        Y = read_expression(args.expression, args.layout)
        n = Y.n
        if n > MAX_ORACLE_N:
            raise EnumerationSizeError(
                f"verify is limited to n <= {MAX_ORACLE_N} samples, input has n={n}"
            )
        C = sample_covariance(Y)
        if args.covariates is not None:
            raw = read_matrix(args.covariates, args.covariates_layout)
            Z, _ = _align(raw, Y.sample_ids, "covariates file")
            basis = CovariateBasis.from_covariates(Z) if Z.shape[1] else CovariateBasis.empty(n)
        else:
            basis = CovariateBasis.empty(n)
    else:
        if args.n > MAX_ORACLE_N:
            raise EnumerationSizeError(
                f"verify is limited to n <= {MAX_ORACLE_N} samples, requested n={args.n}"
            )
        if args.d + args.p >= args.n:
            raise UsageError(f"need d + p < n, got d={args.d}, p={args.p}, n={args.n}")
        C, basis = builtin_instance(args.instance, args.n, args.m, args.d, args.seed)
    fit = fit_full(C, basis, args.p)
    oracle = oracle_maximize(C, basis, args.p, restarts=args.restarts, seed=args.seed)
    gap = fit.loglik - oracle.loglik
    ok = gap >= -VERIFY_TOLERANCE
    report = {
        "n": basis.n, "d": basis.d, "p": args.p,
        "restarts": args.restarts, "seed": args.seed,
        "analytic_loglik": fit.loglik, "oracle_loglik": oracle.loglik,
        "gap": gap, "tolerance": VERIFY_TOLERANCE,
        "oracle_converged": oracle.converged, "passed": ok,
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    if not ok:
        raise VerificationFailed(
            f"numerical optimum exceeds the analytic log-likelihood by {-gap:.3g} "
            f"(tolerance {VERIFY_TOLERANCE:g})"
        )
    return EXIT_OK


def cmd_correct(args) -> int:
    stored = read_fit(args.fit)
    Y = read_expression(args.expression, args.layout)
    n_fit = stored.K.shape[0]
    if Y.n != n_fit:
        raise ShapeError(
            f"expression has n={Y.n} samples but the fit in {args.fit} has n={n_fit}"
        )
    if set(Y.sample_ids) == set(stored.sample_ids):
        index = {lab: i for i, lab in enumerate(stored.sample_ids)}
        order = [index[s] for s in Y.sample_ids]
        K = stored.K[np.ix_(order, order)]
    else:
        log.warning("expression sample labels differ from the fit; using file order")
        K = stored.K
    eig = KernelEigen.from_fit(K)
    gene_fits = fit_all_gene_variances(eig, Y)
    apply = correct_residuals if args.method == "kernel" else remove_confounding
    out = apply(eig, Y, gene_fits, recenter=not args.no_recenter)
    values, rows, cols = out.values, out.sample_ids, out.gene_ids
    if args.layout == "samples-cols":
        values, rows, cols = values.T, cols, rows
    write_matrix(args.out, values, rows, cols)
    log.info("corrected %d genes with method %s", Y.m, args.method)
    print(f"wrote {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _exit_code(exc) -> int:
    if isinstance(exc, VerificationFailed):
        return EXIT_VERIFY
    if isinstance(exc, (UsageError, EnumerationSizeError, RankError)):
        return EXIT_USAGE
    if isinstance(exc, (ModelConditionError, NotPositiveDefiniteError)):
        return EXIT_MODEL
    return EXIT_IO


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.handler(args)
    except (RemlLatentError, OSError, VerificationFailed, UsageError) as exc:
        category = getattr(exc, "category", None) or "io"
        if isinstance(exc, OSError) and not isinstance(exc, RemlLatentError):
            category = "io"
        print(f"error[{category}]: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
