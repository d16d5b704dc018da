"""Gaussian-kernel smoothing of the time factor and per-slice sparsity penalties."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidNeighborhoodError, InvalidWindowError
from .tensor_store import SliceCensus

DENSITY_LOW = 0.001
DENSITY_HIGH = 0.999


def build_neighbors(n_time: int, window: int) -> list[np.ndarray]:
    """Neighbor indices of every time index within a window of ``window`` slots.

    Each side gets ``window // 2`` indices, the center is excluded, and windows
    are truncated at the ends of the time axis.
    """
    if window < 3 or window % 2 == 0:
        raise InvalidWindowError(f"window must be an odd integer >= 3, got {window}")
    if n_time < 2:
        raise InvalidWindowError(f"need at least 2 time slices, got {n_time}")
    half = window // 2
    out = []
    for i in range(n_time):
        lo, hi = max(0, i - half), min(n_time - 1, i + half)
        nb = np.arange(lo, hi + 1)
        out.append(nb[nb != i])
    return out


def kernel_weights(i_t: int, neighbors, sigma: float) -> np.ndarray:
    """Normalized Gaussian weights ``exp(-(i_t - i_s)^2 / (2 sigma^2))``."""
    neighbors = np.asarray(neighbors)
    if neighbors.size == 0:
        raise InvalidNeighborhoodError(f"time index {i_t} has no neighbors")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    d = (neighbors - i_t).astype(np.float64)
    # shift by the nearest distance so distant neighbors do not underflow to 0
    logk = -(d * d - np.min(d * d)) / (2.0 * sigma * sigma)
    k = np.exp(logk)
    return k / k.sum()


def sparsity_penalties(census: SliceCensus) -> np.ndarray:
    """Time sparsity ``1 - d`` with ``d`` the count min-max scaled to [0.001, 0.999].

    A census with equal counts everywhere maps to d = 0.999 for every slice.
    """
    counts = np.asarray(census.counts, dtype=np.float64)
    lo, hi = census.omega_min, census.omega_max
    if hi == lo:
        return np.full(counts.shape, DENSITY_LOW)
    density = (DENSITY_HIGH - DENSITY_LOW) * (counts - lo) / (hi - lo) + DENSITY_LOW
    beta = 1.0 - density
    # pin the extremes: 1 - 0.999 is not exactly 0.001 in binary
    beta[counts == lo] = 1.0 - DENSITY_LOW
    beta[counts == hi] = DENSITY_LOW
    return beta


@dataclass(frozen=True)
class SmoothingSpec:
    """Precomputed smoothing weights and penalties for one time axis.

    ``matrix`` is the dense (I_t, I_t) weight matrix W with ``W[i, s] = w(i, s)``,
    so the smoothed time factor is ``W @ A``.
    """

    window: int
    sigma: float
    neighbors: tuple
    weights: tuple
    beta: np.ndarray
    matrix: np.ndarray

    @property
    def n_time(self) -> int:
        return self.matrix.shape[0]

    def residual(self, time_factor: np.ndarray) -> np.ndarray:
        """Rows of ``A - W @ A``."""
        return time_factor - self.matrix @ time_factor

    def to_csv(self, weights_path=None, beta_path=None) -> None:
        if weights_path is not None:
            with open(weights_path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["time_index", "neighbor_index", "weight"])
                for i, (nb, wt) in enumerate(zip(self.neighbors, self.weights)):
                    for s, v in zip(nb, wt):
                        w.writerow([i + 1, int(s) + 1, repr(float(v))])
        if beta_path is not None:
            with open(beta_path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["time_index", "beta"])
                for i, b in enumerate(self.beta):
                    w.writerow([i + 1, repr(float(b))])


def build_smoothing(n_time: int, window: int, sigma: float,
                    census: SliceCensus | None = None, beta=None) -> SmoothingSpec:
    """Assemble a :class:`SmoothingSpec`.

    Penalties come from ``census`` when given, else from an explicit ``beta``
    array, else default to 1 for every slice (smoothing without the sparsity
    penalty).
    """
    neighbors = build_neighbors(n_time, window)
    weights = [kernel_weights(i, nb, sigma) for i, nb in enumerate(neighbors)]
    mat = np.zeros((n_time, n_time))
    for i, (nb, wt) in enumerate(zip(neighbors, weights)):
        mat[i, nb] = wt
    if census is not None:
        if len(census.counts) != n_time:
            raise ValueError("census length does not match the time dimension")
        b = sparsity_penalties(census)
    elif beta is not None:
        b = np.asarray(beta, dtype=np.float64).copy()
        if b.shape != (n_time,):
            raise ValueError("beta length does not match the time dimension")
    else:
        b = np.ones(n_time)
    for arr in (mat, b, *weights, *neighbors):
        arr.setflags(write=False)
    return SmoothingSpec(window, float(sigma), tuple(neighbors), tuple(weights), b, mat)


def smoothed_row(time_factor: np.ndarray, spec: SmoothingSpec, i_t: int) -> np.ndarray:
    nb, wt = spec.neighbors[i_t], spec.weights[i_t]
    return wt @ np.asarray(time_factor)[nb]
