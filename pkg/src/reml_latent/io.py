"""Tab-separated matrix files and fit artifacts.

Matrix format: the first row holds column labels (its first cell names the
row-label column), every following row starts with a row label, cells are
tab-separated decimals with '.' as separator.  Missing values are rejected.
Floats are written with 17 significant digits, so a write/read round trip
is exact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .core import ExpressionMatrix, ModelFit
from .errors import ParseError, ShapeError

LAYOUTS = {
    "samples-rows": "samples-rows",
    "rows-are-samples": "samples-rows",
    "samples-cols": "samples-cols",
    "columns-are-samples": "samples-cols",
}
MISSING = {"", "na", "nan", "n/a", "null", "none", "."}
FLOAT_FORMAT = ".17g"


@dataclass(frozen=True)
class LabeledMatrix:
    """Matrix with rows as samples, plus row and column labels."""

    values: np.ndarray
    row_ids: tuple
    col_ids: tuple

    @property
    def shape(self):
        return self.values.shape

    def transpose(self) -> "LabeledMatrix":
        return LabeledMatrix(self.values.T.copy(), self.col_ids, self.row_ids)


def _normalize_layout(layout):
    try:
        return LAYOUTS[layout]
    except KeyError:
        raise ValueError(f"unknown layout {layout!r}; expected one of {sorted(LAYOUTS)}") from None


def _check_unique(labels, what, path, row=None):
    seen = {}
    for j, lab in enumerate(labels):
        if lab in seen:
            raise ParseError(
                f"{path}: duplicate {what} label {lab!r} (positions {seen[lab] + 1} and {j + 1})",
                path=str(path), row=row, column=None,
            )
        seen[lab] = j


def read_matrix(path, layout: str = "samples-rows") -> LabeledMatrix:
    """Read a labeled TSV matrix and return it with samples as rows.

    With ``layout="samples-cols"`` the file is stored samples-as-columns
    (the usual genes x samples expression layout) and is transposed.
    Errors report 1-based file row and column numbers.
    """
    layout = _normalize_layout(layout)
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        return LabeledMatrix(np.zeros((0, 0)), (), ())
    header = [c.strip() for c in rows[0]]
    col_ids = tuple(header[1:])
    _check_unique(col_ids, "column", path, row=1)
    width = len(header)
    row_ids, data = [], []
    for i, raw in enumerate(rows[1:], start=2):
        if len(raw) != width:
            raise ParseError(
                f"{path}: row {i} has {len(raw)} fields, header has {width}",
                path=str(path), row=i, column=None,
            )
        row_ids.append(raw[0].strip())
        vals = []
        for j, cell in enumerate(raw[1:], start=2):
            text = cell.strip()
            if text.lower() in MISSING:
                raise ParseError(
                    f"{path}: missing value {cell!r} at row {i}, column {j}",
                    path=str(path), row=i, column=j,
                )
            try:
                v = float(text)
            except ValueError:
                raise ParseError(
                    f"{path}: non-numeric cell {cell!r} at row {i}, column {j}",
                    path=str(path), row=i, column=j,
                ) from None
            if not math.isfinite(v):
                raise ParseError(
                    f"{path}: non-finite value {cell!r} at row {i}, column {j}",
                    path=str(path), row=i, column=j,
                )
            vals.append(v)
        data.append(vals)
    _check_unique(row_ids, "row", path)
    values = np.array(data, dtype=float).reshape(len(row_ids), len(col_ids))
    out = LabeledMatrix(values, tuple(row_ids), col_ids)
    return out.transpose() if layout == "samples-cols" else out


def write_matrix(path, values, row_ids=None, col_ids=None, corner: str = "id") -> Path:
    """Write a labeled TSV matrix with 17 significant digits."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    r, c = values.shape
    row_ids = list(row_ids) if row_ids is not None else [f"row_{i + 1}" for i in range(r)]
    col_ids = list(col_ids) if col_ids is not None else [f"col_{j + 1}" for j in range(c)]
    if len(row_ids) != r or len(col_ids) != c:
        raise ShapeError(f"labels {len(row_ids)}x{len(col_ids)} do not match matrix {r}x{c}")
    path = Path(path)
    lines = ["\t".join([corner, *map(str, col_ids)])]
    # a matrix without columns is written as its header alone
    for lab, row in zip(row_ids if c else [], values):
        lines.append("\t".join([str(lab), *(format(float(v), FLOAT_FORMAT) for v in row)]))
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def center_samples(M) -> ExpressionMatrix:
    """Subtract each sample's mean across genes; records the subtracted means."""
    if isinstance(M, LabeledMatrix):
        values, rows, cols = M.values, M.row_ids, M.col_ids
    elif isinstance(M, ExpressionMatrix):
        values, rows, cols = M.values, M.sample_ids, M.gene_ids
    else:
        values, rows, cols = np.asarray(M, dtype=float), (), ()
    values = np.asarray(values, dtype=float)
    means = values.mean(axis=1)
    return ExpressionMatrix(values - means[:, None], rows, cols, centered=True,
                            sample_means=means)


def read_expression(path, layout: str = "samples-cols") -> ExpressionMatrix:
    """Read an expression file (genes x samples on disk by default) and center it."""
    return center_samples(read_matrix(path, layout))


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def fit_summary(fit: ModelFit, config=None, extra=None) -> dict:
    known, latent, residual = fit.variance_decomposition
    total = known + latent + residual
    if abs(total - 1.0) > 1e-8:
        raise ArithmeticError(f"variance decomposition sums to {total!r}, not 1")
    summary = {
        "software": "reml_latent",
        "version": __version__,
        "n": fit.n,
        "d": fit.d,
        "p": fit.p,
        "sigma2": fit.sigma2,
        "loglik": fit.loglik,
        "variance_decomposition": {"known": known, "latent": latent, "residual": residual},
        "explained_variance": fit.explained_variance,
        "checks": fit.checks,
    }
    if fit.selection is not None:
        sel = fit.selection
        summary["selection"] = {
            "rho": sel.rho,
            "target_sigma2": sel.target_sigma2,
            "unclamped_target_sigma2": sel.unclamped_target,
            "clamp_active": sel.clamp_active,
            "initial_p": sel.initial_p,
            "p": sel.p,
            "retries": [{"p": p, "f": f} for p, f in sel.retries],
            "exceeds_target": sel.exceeds_target,
        }
    if config is not None:
        summary["config"] = config
    if extra:
        summary.update(extra)
    return _jsonable(summary)


def write_fit(fit: ModelFit, out_dir, sample_ids=None, covariate_ids=None, config=None,
              extra=None) -> dict:
    """Write latent factors, parameter matrices, ``K``, a summary and a manifest.

    Files: ``latent.tsv`` (samples x p), ``B.tsv``, ``A.tsv``, ``D.tsv``,
    ``K.tsv``, ``summary.json`` (sorted keys, no timestamps) and
    ``manifest.json`` listing every file with its SHA-256.  Returns the
    manifest.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror or exc}") from exc
    n, d, p = fit.n, fit.d, fit.p
    samples = list(sample_ids) if sample_ids else [f"sample_{i + 1}" for i in range(n)]
    covs = list(covariate_ids) if covariate_ids else [f"covariate_{k + 1}" for k in range(d)]
    latents = [f"latent_{j + 1}" for j in range(p)]
    params = fit.params
    files = {
        "latent.tsv": (fit.latent, samples, latents),
        "B.tsv": (params.B, covs, covs),
        "A.tsv": (params.A, latents, latents),
        "D.tsv": (params.D, covs, latents),
        "K.tsv": (fit.K, samples, samples),
    }
    for name, (mat, rows, cols) in files.items():
        write_matrix(out / name, np.asarray(mat).reshape(len(rows), len(cols)), rows, cols)
    summary = fit_summary(fit, config=config, extra=extra)
    summary["sample_ids"] = samples
    summary["covariate_ids"] = covs
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    names = sorted([*files, "summary.json"])
    manifest = {
        "version": __version__,
        "files": [{"name": nm, "sha256": _sha256(out / nm), "bytes": os.path.getsize(out / nm)}
                  for nm in names],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return manifest


@dataclass(frozen=True)
class StoredFit:
    K: np.ndarray
    latent: LabeledMatrix
    summary: dict
    sample_ids: tuple


def read_fit(out_dir) -> StoredFit:
    """Load what :func:`write_fit` wrote; verifies checksums from the manifest."""
    out = Path(out_dir)
    if not out.is_dir():
        raise FileNotFoundError(f"fit directory {out} does not exist")
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    for entry in manifest["files"]:
        if _sha256(out / entry["name"]) != entry["sha256"]:
            raise ParseError(f"{out / entry['name']}: checksum does not match manifest",
                             path=str(out / entry["name"]))
    K = read_matrix(out / "K.tsv")
    latent = read_matrix(out / "latent.tsv")
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    return StoredFit(K=K.values, latent=latent, summary=summary, sample_ids=K.row_ids)
