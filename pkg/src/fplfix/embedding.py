"""Embedding algebra: normalisation, branch concatenation, linear reduction.

The dimension sweep is realised with a principal-component projection fitted
on a training set of raw embeddings, or with plain truncation as a baseline.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fplfix.errors import DegenerateInputError, FormatError

STANDARD_SIZES = (32, 64, 128, 256, 512, 1024, 2048)
UNIT_TOL = 1e-6

PROJECTION_MAGIC = b"FPPJ"
PROJECTION_VERSION = 1
_PJ_HEADER = struct.Struct("<4sHII")


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm == 0.0:
        raise DegenerateInputError("cannot normalise a zero-norm vector")
    return v / norm


def l2_normalize_rows(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
        raise DegenerateInputError("cannot normalise a zero-norm row")
    return m / norms


def _check_unit(v: np.ndarray, name: str) -> None:
    n = np.linalg.norm(v, axis=-1)
    if np.any(np.abs(n - 1.0) > UNIT_TOL):
        raise ValueError(f"{name} is not unit norm (|{name}| = {np.max(np.abs(n)):.9f})")


def concat_branches(t, m) -> np.ndarray:
    """Join texture and minutiae embeddings with equal energy per branch.

    Works on single vectors or on row-stacked batches.
    """
    t = np.asarray(t, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    _check_unit(t, "t")
    _check_unit(m, "m")
    return np.concatenate([t, m], axis=-1) / np.sqrt(2.0)


def truncate(v, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if not 1 <= n <= v.shape[-1]:
        raise ValueError(f"cannot truncate length {v.shape[-1]} to {n}")
    return l2_normalize(v[:n]) if v.ndim == 1 else l2_normalize_rows(v[:, :n])


@dataclass(frozen=True, eq=False)
class ProjectionModel:
    mean: np.ndarray = field(repr=False)
    basis: np.ndarray = field(repr=False)
    explained_variance: np.ndarray = field(repr=False)

    @property
    def input_dim(self) -> int:
        return self.basis.shape[1]

    @property
    def output_dim(self) -> int:
        return self.basis.shape[0]

    def __repr__(self) -> str:
        return f"ProjectionModel(input_dim={self.input_dim}, output_dim={self.output_dim})"


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # each row's largest-magnitude entry (first on ties) becomes positive
    idx = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(len(vecs)), idx])
    signs[signs == 0] = 1.0
    return vecs * signs[:, None]


def fit_projection(train, n: int) -> ProjectionModel:
    """Principal-component model keeping the top ``n`` directions.

    Eigenvectors of the sample covariance (denominator count - 1), sorted by
    eigenvalue descending; ties keep solver index order.
    """
    x = np.asarray(train, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("training data must be a 2-D array of vectors")
    count, dim = x.shape
    if count < 2:
        raise ValueError("need at least two training vectors")
    if n < 1 or n > dim:
        raise ValueError(f"output dimension {n} outside 1..{dim}")
    if count <= n:
        raise ValueError(f"need more than {n} training vectors, got {count}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / (count - 1)
    cov = (cov + cov.T) / 2.0
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")[:n]
    basis = _fix_signs(evecs[:, order].T.copy())
    var = np.maximum(evals[order], 0.0)
    return ProjectionModel(mean, basis, var)


def project(model: ProjectionModel, v) -> np.ndarray:
    """Centre, rotate onto the kept components and re-normalise.

    Accepts one vector or a batch (rows).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.input_dim:
        raise ValueError(f"vector length {v.shape[-1]} != model input dim {model.input_dim}")
    out = (v - model.mean) @ model.basis.T
    return l2_normalize(out) if out.ndim == 1 else l2_normalize_rows(out)


def write_projection(model: ProjectionModel, path) -> None:
    """Binary layout: header, mean, basis rows, then explained variance (all <f8)."""
    with Path(path).open("wb") as fh:
        fh.write(_PJ_HEADER.pack(PROJECTION_MAGIC, PROJECTION_VERSION, model.input_dim, model.output_dim))
        fh.write(model.mean.astype("<f8").tobytes())
        fh.write(model.basis.astype("<f8").tobytes())
        fh.write(model.explained_variance.astype("<f8").tobytes())


def read_projection(path) -> ProjectionModel:
    blob = Path(path).read_bytes()
    if len(blob) < _PJ_HEADER.size:
        raise FormatError(f"{path}: too short for a projection header")
    magic, version, din, n = _PJ_HEADER.unpack_from(blob)
    if magic != PROJECTION_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != PROJECTION_VERSION:
        raise FormatError(f"{path}: unsupported projection version {version}")
    expected = _PJ_HEADER.size + 8 * (din + n * din + n)
    if len(blob) != expected or n > din or n == 0:
        raise FormatError(f"{path}: payload inconsistent with input_dim={din}, N={n}")
    arr = np.frombuffer(blob, dtype="<f8", offset=_PJ_HEADER.size).astype(np.float64)
    mean = arr[:din]
    basis = arr[din : din + n * din].reshape(n, din)
    var = arr[din + n * din :]
    return ProjectionModel(mean, basis, var)
