"""Training engine: closed-form row updates, time-factor gradients, Adam, fit loop."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, SingularUpdateError
from .model import (
    FactorModel,
    check_compatible,
    evaluate,
    init_model,
    loss,
    other_products,
    predict_entries,
)
from .smoothing import SmoothingSpec, build_smoothing
from .tensor_store import SparseTensor, slice_census

log = logging.getLogger(__name__)

STRATEGIES = ("als_adam", "adam", "sgd", "als_sgd", "alt_adam")


@dataclass
class TrainConfig:
    lambda_t: float = 100.0
    lambda_r: float = 1e-2
    lr: float = 1e-2
    rank: int = 10
    window: int = 3
    sigma: float = 0.5
    max_outer: int = 100
    max_inner: int = 100
    patience_outer: int = 5
    strategy: str = "als_adam"
    seed: int = 0
    sparsity_penalty: bool = True
    time_budget: float | None = None  # seconds; None means unlimited
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(
                f"unknown strategy {self.strategy!r}; choose one of {', '.join(STRATEGIES)}"
            )
        if self.patience_outer < 1:
            raise ValueError("patience_outer must be >= 1")
        if self.lambda_t < 0 or self.lambda_r < 0:
            raise ValueError("regularization weights must be non-negative")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.max_outer < 0 or self.max_inner < 1:
            raise ValueError("max_outer must be >= 0 and max_inner >= 1")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, shape, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), 0, beta1, beta2, eps)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float):
    """One bias-corrected Adam update. Returns ``(new_param, state)``; the state
    is updated in place."""
    if grad.shape != param.shape or state.m.shape != param.shape:
        raise ValueError("parameter, gradient and state shapes differ")
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient")
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (grad * grad)
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return param - lr * m_hat / (np.sqrt(v_hat) + state.eps), state


def _scatter_rows(rows: np.ndarray, vals: np.ndarray, n_rows: int) -> np.ndarray:
    out = np.empty((n_rows, vals.shape[1]))
    for k in range(vals.shape[1]):
        out[:, k] = np.bincount(rows, weights=vals[:, k], minlength=n_rows)
    return out


def _residual(model: FactorModel, train: SparseTensor) -> np.ndarray:
    return train.values - predict_entries(model, train.indices)


def time_gradient(model: FactorModel, train: SparseTensor, spec: SmoothingSpec,
                  lambda_t: float, resid: np.ndarray | None = None) -> np.ndarray:
    """Gradient of the training objective with respect to the time factor.

    The smoothing part is ``2 lambda_t (I - W)^T diag(beta) (I - W) A``, which
    includes the pull each row receives through its neighbors' smoothed rows.
    """
    t = model.time_mode
    if resid is None:
        resid = _residual(model, train)
    prods = other_products(model.factors, train.indices, skip=t)
    grad = -2.0 * _scatter_rows(train.indices[:, t], resid[:, None] * prods, model.dims[t])
    if lambda_t:
        a = model.factors[t]
        r = spec.beta[:, None] * spec.residual(a)
        grad += 2.0 * lambda_t * (r - spec.matrix.T @ r)
    return grad


def factor_gradient(model: FactorModel, train: SparseTensor, mode: int,
                    lambda_r: float, resid: np.ndarray | None = None) -> np.ndarray:
    """Gradient with respect to a non-time factor (data fit plus ridge)."""
    if resid is None:
        resid = _residual(model, train)
    prods = other_products(model.factors, train.indices, skip=mode)
    grad = -2.0 * _scatter_rows(train.indices[:, mode], resid[:, None] * prods,
                                model.dims[mode])
    return grad + 2.0 * lambda_r * model.factors[mode]


def rowwise_update(model: FactorModel, train: SparseTensor, mode: int,
                   lambda_r: float) -> np.ndarray:
    """Exact least-squares update of every row of a non-time factor.

    Row ``i`` solves ``(B_i + lambda_r I) a_i = c_i`` where ``B_i`` and ``c_i``
    collect the products of the other factors' rows over the entries whose
    ``mode`` index equals ``i``. Rows without observed entries become zero.
    Returns the new factor matrix; ``model`` is not modified.
    """
    if mode == model.time_mode:
        raise ValueError("rowwise_update applies to non-time modes only")
    check_compatible(model, train)
    n_rows, rank = model.dims[mode], model.rank
    rows = train.indices[:, mode]
    order = np.argsort(rows, kind="stable")
    prods = other_products(model.factors, train.indices[order], skip=mode)
    vals = train.values[order]
    bounds = np.searchsorted(rows[order], np.arange(n_rows + 1))

    gram = np.empty((n_rows, rank, rank))
    rhs = np.zeros((n_rows, rank))
    observed = bounds[1:] > bounds[:-1]
    for i in np.flatnonzero(observed):
        p = prods[bounds[i]:bounds[i + 1]]
        gram[i] = p.T @ p
        rhs[i] = vals[bounds[i]:bounds[i + 1]] @ p

    out = np.zeros((n_rows, rank))
    live = np.flatnonzero(observed)
    if live.size == 0:
        return out
    system = gram[live] + lambda_r * np.eye(rank)
    try:
        np.linalg.cholesky(system)
    except np.linalg.LinAlgError:
        for j, i in enumerate(live):
            try:
                np.linalg.cholesky(system[j])
            except np.linalg.LinAlgError:
                raise SingularUpdateError(mode, int(i)) from None
    out[live] = np.linalg.solve(system, rhs[live][:, :, None])[:, :, 0]
    if not np.all(np.isfinite(out)):
        bad = live[~np.all(np.isfinite(out[live]), axis=1)][0]
        raise SingularUpdateError(mode, int(bad))
    return out


@dataclass
class IterationRecord:
    iteration: int
    train_rmse: float
    val_rmse: float
    val_mae: float
    inner_epochs: int
    seconds: float


@dataclass
class FitReport:
    records: list = field(default_factory=list)
    best_iteration: int | None = None
    stopping_reason: str = ""

    @property
    def best_val_rmse(self) -> float:
        if self.best_iteration is None:
            return float("nan")
        return self.records[self.best_iteration - 1].val_rmse

    def to_csv(self, path) -> None:
        """Per-iteration metrics. Wall-clock times go to :meth:`timings_to_csv`
        so that this file is reproducible byte for byte."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "train_rmse", "val_rmse", "val_mae", "inner_epochs"])
            for r in self.records:
                w.writerow([r.iteration, repr(r.train_rmse), repr(r.val_rmse),
                            repr(r.val_mae), r.inner_epochs])

    def timings_to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "seconds"])
            for r in self.records:
                w.writerow([r.iteration, f"{r.seconds:.6f}"])


class _Trainer:
    def __init__(self, model, train, validation, spec, config):
        self.model = model
        self.train = train
        self.validation = validation
        self.spec = spec
        self.cfg = config
        self.states = {}
        self.start = time.perf_counter()

    def out_of_time(self) -> bool:
        budget = self.cfg.time_budget
        return budget is not None and time.perf_counter() - self.start >= budget

    def val_rmse(self) -> float:
        return evaluate(self.model, self.validation)[0]

    def _state(self, mode):
        if mode not in self.states:
            c = self.cfg
            self.states[mode] = AdamState.zeros(self.model.factors[mode].shape,
                                                c.beta1, c.beta2, c.eps)
        return self.states[mode]

    def gradient_epochs(self, modes, method: str) -> int:
        """Gradient steps on ``modes`` jointly until validation RMSE goes up."""
        cfg, model = self.cfg, self.model
        prev = self.val_rmse()
        epochs = 0
        for epochs in range(1, cfg.max_inner + 1):
            resid = _residual(model, self.train)
            grads = {}
            for n in modes:
                if n == model.time_mode:
                    grads[n] = time_gradient(model, self.train, self.spec, cfg.lambda_t, resid)
                else:
                    grads[n] = factor_gradient(model, self.train, n, cfg.lambda_r, resid)
            for n, g in grads.items():
                if method == "adam":
                    model.factors[n], _ = adam_step(model.factors[n], g, self._state(n), cfg.lr)
                else:
                    if not np.all(np.isfinite(g)):
                        raise DivergenceError("non-finite gradient")
                    # mean-normalized objective keeps plain gradient steps stable
                    model.factors[n] = model.factors[n] - cfg.lr * g / self.train.nnz
            cur = self.val_rmse()
            if not np.isfinite(cur) or cur > prev or self.out_of_time():
                break
            prev = cur
        return epochs

    def outer_iteration(self) -> int:
        strategy = self.cfg.strategy
        model = self.model
        t = model.time_mode
        if strategy in ("adam", "sgd"):
            return self.gradient_epochs(range(model.order), strategy)
        epochs = 0
        for n in range(model.order):
            if strategy == "alt_adam":
                epochs += self.gradient_epochs([n], "adam")
            elif n == t:
                epochs += self.gradient_epochs([n], "adam" if strategy == "als_adam" else "sgd")
            else:
                model.factors[n] = rowwise_update(model, self.train, n, self.cfg.lambda_r)
        return epochs


def default_spec(train: SparseTensor, config: TrainConfig) -> SmoothingSpec:
    """Smoothing spec from the training census, or with unit penalties when
    ``config.sparsity_penalty`` is off."""
    census = slice_census(train) if config.sparsity_penalty else None
    return build_smoothing(train.n_time, config.window, config.sigma, census=census)


def fit(train: SparseTensor, validation: SparseTensor, config: TrainConfig,
        spec: SmoothingSpec | None = None, model: FactorModel | None = None):
    """Train a factor model and return ``(best_model, report)``.

    Each outer iteration visits the modes in order. Under the default
    ``als_adam`` strategy the time factor takes Adam epochs until validation
    RMSE rises (or ``max_inner``), and every other factor gets one exact
    row-wise least-squares pass. Training stops after ``patience_outer``
    consecutive outer iterations with rising validation RMSE, after
    ``max_outer`` iterations, or when ``time_budget`` runs out. The returned
    model is the one with the lowest validation RMSE.
    """
    if train.dims != validation.dims or train.time_mode != validation.time_mode:
        raise ValueError("train and validation tensors must share dims and time mode")
    if spec is None:
        spec = default_spec(train, config)
    if model is None:
        model = init_model(train.dims, config.rank, config.seed, train.time_mode)
    else:
        model = model.copy()
    check_compatible(model, train)

    report = FitReport()
    best = model.copy()
    if config.max_outer == 0:
        report.stopping_reason = "max_outer"
        return best, report

    trainer = _Trainer(model, train, validation, spec, config)
    best_val = np.inf
    rises = 0
    for it in range(1, config.max_outer + 1):
        try:
            epochs = trainer.outer_iteration()
        except DivergenceError as exc:
            raise DivergenceError(f"outer iteration {it}: {exc}") from None
        total = loss(model, train, spec, config.lambda_t, config.lambda_r).total
        if not np.isfinite(total):
            raise DivergenceError(f"non-finite training loss at outer iteration {it}")
        train_rmse = evaluate(model, train)[0]
        val_rmse, val_mae = evaluate(model, validation)
        rec = IterationRecord(it, train_rmse, val_rmse, val_mae, epochs,
                              time.perf_counter() - trainer.start)
        if report.records:
            rises = rises + 1 if val_rmse > report.records[-1].val_rmse else 0
        report.records.append(rec)
        log.debug("iter %d train %.6f val %.6f epochs %d", it, train_rmse, val_rmse, epochs)
        if val_rmse < best_val:
            best_val = val_rmse
            best = model.copy()
            report.best_iteration = it
        if rises >= config.patience_outer:
            report.stopping_reason = "patience"
            break
        if trainer.out_of_time():
            report.stopping_reason = "time_budget"
            break
    else:
        report.stopping_reason = "max_outer"
    return best, report


def fit_strategy_variants(train, validation, config: TrainConfig, **kwargs):
    """Same as :func:`fit`, restricted to the comparison strategies."""
    if config.strategy == "als_adam":
        raise ValueError("use fit() for the default als_adam strategy")
    return fit(train, validation, config, **kwargs)
