"""CP factor model: reconstruction, objective, metrics and checkpoints."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import EmptyEvaluationError, ShapeError
from .smoothing import SmoothingSpec
from .tensor_store import SparseTensor


@dataclass
class FactorModel:
    """One (I_n, K) factor matrix per mode, plus which mode is time."""

    factors: list
    time_mode: int = 0

    def __post_init__(self):
        self.factors = [np.asarray(f, dtype=np.float64) for f in self.factors]
        ranks = {f.shape[1] for f in self.factors}
        if len(ranks) != 1 or any(f.ndim != 2 for f in self.factors):
            raise ShapeError("all factor matrices must be 2-D and share the same rank")
        if not 0 <= self.time_mode < len(self.factors):
            raise ShapeError(f"time_mode {self.time_mode} out of range")

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def order(self) -> int:
        return len(self.factors)

    @property
    def time_factor(self) -> np.ndarray:
        return self.factors[self.time_mode]

    def copy(self) -> "FactorModel":
        return FactorModel([f.copy() for f in self.factors], self.time_mode)


@dataclass(frozen=True)
class LossBreakdown:
    fit_sse: float
    smooth_term: float
    ridge_term: float

    @property
    def total(self) -> float:
        return self.fit_sse + self.smooth_term + self.ridge_term


def init_model(dims, rank: int, seed: int, time_mode: int = 0) -> FactorModel:
    """Factors with entries drawn uniformly from [0, 1/sqrt(rank))."""
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(rank)
    return FactorModel([rng.random((int(d), rank)) * scale for d in dims], time_mode)


def other_products(factors, indices: np.ndarray, skip: int | None = None) -> np.ndarray:
    """Element-wise product of the factor rows of every mode except ``skip``.

    Returns an (nnz, K) array; with ``skip=None`` all modes are multiplied.
    """
    out = np.ones((indices.shape[0], factors[0].shape[1]))
    for n, f in enumerate(factors):
        if n != skip:
            out *= f[indices[:, n]]
    return out


def predict_entries(model: FactorModel, indices) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64).reshape(-1, model.order)
    if indices.size and ((indices < 0).any() or (indices >= np.asarray(model.dims)).any()):
        raise IndexError("index outside model dims")
    return other_products(model.factors, indices).sum(axis=1)


def predict(model: FactorModel, index) -> float:
    """Reconstructed value of one entry (zero-based index tuple)."""
    index = tuple(int(i) for i in index)
    if len(index) != model.order:
        raise IndexError(f"expected {model.order} indices, got {len(index)}")
    for n, (i, d) in enumerate(zip(index, model.dims)):
        if not 0 <= i < d:
            raise IndexError(f"index {i} out of range for mode {n} of size {d}")
    return float(predict_entries(model, [index])[0])


def check_compatible(model: FactorModel, x: SparseTensor) -> None:
    if model.dims != x.dims or model.time_mode != x.time_mode:
        raise ShapeError(
            f"model dims {model.dims} (time mode {model.time_mode}) do not match "
            f"tensor dims {x.dims} (time mode {x.time_mode})"
        )


def smooth_penalty(time_factor: np.ndarray, spec: SmoothingSpec, lambda_t: float) -> float:
    resid = spec.residual(time_factor)
    return float(lambda_t * np.dot(spec.beta, np.einsum("ik,ik->i", resid, resid)))


def loss(model: FactorModel, train: SparseTensor, spec: SmoothingSpec,
         lambda_t: float, lambda_r: float) -> LossBreakdown:
    """Training objective split into data fit, time smoothing and ridge parts.

    The ridge part covers every factor except the time factor.
    """
    check_compatible(model, train)
    if spec.n_time != model.dims[model.time_mode]:
        raise ShapeError("smoothing spec does not match the time dimension")
    resid = train.values - predict_entries(model, train.indices)
    ridge = sum(
        float(np.sum(f * f)) for n, f in enumerate(model.factors) if n != model.time_mode
    )
    return LossBreakdown(
        fit_sse=float(resid @ resid),
        smooth_term=smooth_penalty(model.time_factor, spec, lambda_t),
        ridge_term=float(lambda_r * ridge),
    )


def evaluate(model: FactorModel, holdout: SparseTensor) -> tuple[float, float]:
    """(RMSE, MAE) over the entries of ``holdout``."""
    if holdout.nnz == 0:
        raise EmptyEvaluationError("cannot evaluate on an empty holdout set")
    err = holdout.values - predict_entries(model, holdout.indices)
    return float(np.sqrt(np.mean(err * err))), float(np.mean(np.abs(err)))


MANIFEST_NAME = "manifest.json"


def save_checkpoint(model: FactorModel, directory, **meta) -> list[str]:
    """Write one delimited file per factor matrix plus ``manifest.json``.

    Extra keyword arguments (normalization mean/std, seed, ...) are stored in
    the manifest. Returns the paths written.
    """
    os.makedirs(directory, exist_ok=True)
    paths = []
    names = []
    for n, f in enumerate(model.factors):
        name = f"factor_{n + 1}.tsv"
        path = os.path.join(directory, name)
        with open(path, "w", encoding="utf-8") as fh:
            for row in f:
                fh.write("\t".join(repr(float(v)) for v in row) + "\n")
        paths.append(path)
        names.append(name)
    manifest = {
        "dims": list(model.dims),
        "rank": model.rank,
        "time_mode": model.time_mode + 1,
        "factor_files": names,
        **meta,
    }
    mpath = os.path.join(directory, MANIFEST_NAME)
    with open(mpath, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(mpath)
    return paths


def load_checkpoint(directory) -> tuple[FactorModel, dict]:
    with open(os.path.join(directory, MANIFEST_NAME), encoding="utf-8") as fh:
        manifest = json.load(fh)
    factors = []
    for name, dim in zip(manifest["factor_files"], manifest["dims"]):
        f = np.loadtxt(os.path.join(directory, name), delimiter="\t", ndmin=2)
        if f.shape != (dim, manifest["rank"]):
            raise ShapeError(f"{name} has shape {f.shape}, manifest says {(dim, manifest['rank'])}")
        factors.append(f)
    return FactorModel(factors, manifest["time_mode"] - 1), manifest
