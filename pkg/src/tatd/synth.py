"""Synthetic temporal tensors and the benchmark sweeps run on them."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .model import FactorModel, evaluate, predict_entries
from .optimizer import TrainConfig, fit
from .tensor_store import SparseTensor, split, z_normalize

SIGNALS = ("sinusoid", "random_walk")
PROFILES = ("uniform", "linear")

METHODS = ("tatd", "tatd_no_penalty", "cp_als")
SPARSITY_RATES = (0.1, 0.3, 0.5, 0.7, 0.9)
PENALTY_GRID = (1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3)
RANK_GRID = (5, 10, 20, 30, 40, 50)

# Desk-scale training setup for the synthetic benchmark. The 150-entry
# validation split is noisy, so patience is longer than the library default.
BENCHMARK_TRAINING = dict(rank=3, window=3, sigma=0.5, lr=1e-2, lambda_t=100.0,
                          lambda_r=1e-2, max_outer=200, max_inner=100, patience_outer=20)


def benchmark_config(**overrides) -> TrainConfig:
    return TrainConfig(**{**BENCHMARK_TRAINING, **overrides})


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic tensor with a smooth time factor.

    With the ``linear`` profile the per-slice observation probability ramps
    from ``rate * (1 - slope)`` at the first time index to ``rate * (1 + slope)``
    at the last (clipped to 1).
    """

    dims: tuple = (50, 20, 15)
    rank: int = 3
    time_mode: int = 0
    signal: str = "sinusoid"
    period: float = 8.0
    walk_step: float = 0.3
    noise: float = 0.1
    rate: float = 0.3
    profile: str = "uniform"
    slope: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.rate <= 1:
            raise ValueError(f"observation rate must be in (0, 1], got {self.rate}")
        if self.period < 2:
            raise ValueError("period must be >= 2")
        if self.noise < 0:
            raise ValueError("noise std must be non-negative")
        if self.signal not in SIGNALS:
            raise ValueError(f"signal must be one of {SIGNALS}")
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {PROFILES}")
        if not 0 <= self.slope < 1:
            raise ValueError("slope must be in [0, 1)")


def _time_factor(spec: SynthSpec, rng) -> np.ndarray:
    n_time = spec.dims[spec.time_mode]
    steps = np.arange(n_time)[:, None]
    if spec.signal == "sinusoid":
        phase = 2 * np.pi * np.arange(spec.rank) / spec.rank
        return np.sin(2 * np.pi * steps / spec.period + phase)
    walk = np.cumsum(rng.normal(0.0, spec.walk_step, (n_time, spec.rank)), axis=0)
    return walk - walk.mean(axis=0)


def _observed_cells(spec: SynthSpec, rng) -> np.ndarray:
    dims = spec.dims
    total = int(np.prod(dims))
    if spec.profile == "uniform":
        n_obs = int(round(spec.rate * total))
        return np.sort(rng.permutation(total)[:n_obs])
    t = spec.time_mode
    n_time = dims[t]
    ramp = np.linspace(1 - spec.slope, 1 + spec.slope, n_time)
    prob = np.clip(spec.rate * ramp, 0.0, 1.0)
    other = [d for n, d in enumerate(dims) if n != t]
    slice_size = int(np.prod(other))
    # cells of each slice in the tensor's flat (C-order) numbering
    grid = np.indices(other).reshape(len(other), -1)
    cells = []
    for i in range(n_time):
        k = rng.binomial(slice_size, prob[i])
        pick = rng.permutation(slice_size)[:k]
        coords = list(grid[:, pick])
        coords.insert(t, np.full(k, i))
        cells.append(np.ravel_multi_index(coords, dims))
    return np.sort(np.concatenate(cells))


def generate(spec: SynthSpec) -> tuple[SparseTensor, FactorModel]:
    """Sample a noisy partially observed tensor and its ground-truth factors."""
    rng = np.random.default_rng(spec.seed)
    factors = []
    for n, d in enumerate(spec.dims):
        if n == spec.time_mode:
            factors.append(_time_factor(spec, rng))
        else:
            factors.append(rng.random((d, spec.rank)))
    truth = FactorModel(factors, spec.time_mode)
    cells = _observed_cells(spec, rng)
    indices = np.stack(np.unravel_index(cells, spec.dims), axis=1)
    values = predict_entries(truth, indices)
    if spec.noise > 0:
        values = values + rng.normal(0.0, spec.noise, values.shape)
    return SparseTensor(indices, values, spec.dims, spec.time_mode, _checked=True), truth


def method_config(method: str, config: TrainConfig) -> TrainConfig:
    """Config for one of the benchmark methods derived from a base config."""
    if method == "tatd":
        return replace(config, sparsity_penalty=True)
    if method == "tatd_no_penalty":
        return replace(config, sparsity_penalty=False)
    if method == "cp_als":
        return replace(config, lambda_t=0.0, strategy="als_adam")
    raise ValueError(f"unknown method {method!r}; choose one of {METHODS}")


def run_cell(x: SparseTensor, config: TrainConfig, split_seed: int) -> dict:
    """Normalize, split, fit and score one tensor; metrics are on the z-scale."""
    xn, _, _ = z_normalize(x)
    parts = split(xn, split_seed)
    t0 = time.perf_counter()
    model, report = fit(parts.train, parts.validation, config)
    rmse, mae = evaluate(model, parts.test)
    return {
        "rmse": rmse,
        "mae": mae,
        "val_rmse": report.best_val_rmse,
        "iterations": len(report.records),
        "seconds": time.perf_counter() - t0,
        "model": model,
        "report": report,
    }


def _average(rows, keys):
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key, grp in groups.items():
        row = dict(zip(keys, key))
        row["rmse"] = float(np.mean([g["rmse"] for g in grp]))
        row["mae"] = float(np.mean([g["mae"] for g in grp]))
        out.append(row)
    return out


def sparsity_sweep(spec: SynthSpec, config: TrainConfig, rates=SPARSITY_RATES,
                   seeds=(0,), methods=METHODS, per_seed=False) -> list[dict]:
    """Test RMSE/MAE of each method as the observation rate varies.

    Rows are averaged over ``seeds`` unless ``per_seed`` is set, in which case
    each row also carries its seed.
    """
    rows = []
    for seed in seeds:
        for rate in rates:
            x, _ = generate(replace(spec, rate=rate, seed=seed))
            for method in methods:
                cfg = replace(method_config(method, config), seed=seed)
                res = run_cell(x, cfg, seed)
                rows.append({"seed": seed, "rate": rate, "method": method,
                             "rmse": res["rmse"], "mae": res["mae"]})
    return rows if per_seed else _average(rows, ("rate", "method"))


def penalty_sweep(spec: SynthSpec, config: TrainConfig, lambdas=PENALTY_GRID,
                  seeds=(0,), per_seed=False) -> list[dict]:
    rows = []
    for seed in seeds:
        x, _ = generate(replace(spec, seed=seed))
        for lam in lambdas:
            cfg = replace(config, lambda_t=float(lam), seed=seed)
            res = run_cell(x, cfg, seed)
            rows.append({"seed": seed, "lambda_t": float(lam),
                         "rmse": res["rmse"], "mae": res["mae"]})
    return rows if per_seed else _average(rows, ("lambda_t",))


def rank_sweep(spec: SynthSpec, config: TrainConfig, ranks=RANK_GRID, seeds=(0,),
               methods=("tatd", "cp_als"), per_seed=False) -> list[dict]:
    rows = []
    for seed in seeds:
        x, _ = generate(replace(spec, seed=seed))
        for k in ranks:
            for method in methods:
                cfg = replace(method_config(method, config), rank=int(k), seed=seed)
                res = run_cell(x, cfg, seed)
                rows.append({"seed": seed, "rank": int(k), "method": method,
                             "rmse": res["rmse"], "mae": res["mae"]})
    return rows if per_seed else _average(rows, ("rank", "method"))


def optimizer_comparison(spec: SynthSpec, config: TrainConfig,
                         strategies=("als_adam", "adam", "sgd", "als_sgd", "alt_adam"),
                         seeds=(0,), per_seed=False) -> list[dict]:
    """Best validation RMSE, test RMSE and running time of each strategy.

    Set ``config.time_budget`` to give every strategy the same wall-clock
    allowance; the output then depends on machine speed.
    """
    rows = []
    for seed in seeds:
        x, _ = generate(replace(spec, seed=seed))
        for name in strategies:
            cfg = replace(config, strategy=name, seed=seed)
            res = run_cell(x, cfg, seed)
            rows.append({"seed": seed, "strategy": name, "val_rmse": res["val_rmse"],
                         "rmse": res["rmse"], "mae": res["mae"],
                         "seconds": res["seconds"], "iterations": res["iterations"]})
    if per_seed:
        return rows
    out = []
    for name in strategies:
        grp = [r for r in rows if r["strategy"] == name]
        out.append({"strategy": name,
                    **{k: float(np.mean([g[k] for g in grp]))
                       for k in ("val_rmse", "rmse", "mae", "seconds", "iterations")}})
    return out
