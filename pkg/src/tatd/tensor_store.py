"""Sparse temporal tensors in coordinate (COO) form.

Indices are zero-based inside the library. Text files use one-based indices
by default, and ``ingest(..., one_based=False)`` reads zero-based files.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateDataError,
    DuplicateEntryError,
    InsufficientDataError,
    ParseError,
    ShapeError,
)

SPLIT_RATIO = (8, 1, 1)


@dataclass(frozen=True)
class SparseTensor:
    """Observed entries of an N-mode tensor with one designated time mode.

    ``indices`` has shape (nnz, N) and holds zero-based coordinates, ``values``
    has shape (nnz,). Both arrays are made read-only on construction.
    """

    indices: np.ndarray
    values: np.ndarray
    dims: tuple[int, ...]
    time_mode: int = 0
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        indices = np.array(self.indices, dtype=np.int64, copy=True)
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if indices.size == 0:
            indices = indices.reshape(0, len(dims))
        if indices.ndim != 2 or indices.shape[1] != len(dims):
            raise ShapeError(
                f"indices must have shape (nnz, {len(dims)}), got {indices.shape}"
            )
        if indices.shape[0] != values.shape[0]:
            raise ShapeError("indices and values disagree on the number of entries")
        if not dims or any(d < 1 for d in dims):
            raise ShapeError(f"dims must be positive, got {dims}")
        if not 0 <= self.time_mode < len(dims):
            raise ShapeError(f"time_mode {self.time_mode} out of range for order {len(dims)}")
        if indices.shape[0]:
            if (indices < 0).any() or (indices >= np.asarray(dims)).any():
                raise ShapeError("index outside tensor dims")
            if not self._checked:
                uniq = np.unique(indices, axis=0)
                if uniq.shape[0] != indices.shape[0]:
                    raise DuplicateEntryError("duplicate index tuples among entries")
        indices.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dims", dims)

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_time(self) -> int:
        return self.dims[self.time_mode]

    def take(self, rows) -> "SparseTensor":
        """Sub-tensor made of the given entry positions, keeping dims."""
        rows = np.asarray(rows)
        return SparseTensor(
            self.indices[rows], self.values[rows], self.dims, self.time_mode, _checked=True
        )

    def with_values(self, values) -> "SparseTensor":
        return SparseTensor(self.indices, values, self.dims, self.time_mode, _checked=True)


@dataclass(frozen=True)
class SliceCensus:
    """Number of observed entries per time slice."""

    counts: np.ndarray

    @property
    def omega_min(self) -> int:
        return int(self.counts.min()) if self.counts.size else 0

    @property
    def omega_max(self) -> int:
        return int(self.counts.max()) if self.counts.size else 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["time_index", "nonzero_count"])
            for i, c in enumerate(self.counts, start=1):
                w.writerow([i, int(c)])


@dataclass(frozen=True)
class SplitDataset:
    train: SparseTensor
    validation: SparseTensor
    test: SparseTensor
    split_seed: int


def _detect_delimiter(line: str):
    if "\t" in line:
        return "\t"
    if "," in line:
        return ","
    return None  # any run of whitespace


def ingest(path, n_modes: int, time_mode: int = 0, one_based: bool = True,
           dims=None) -> SparseTensor:
    """Read a delimited text file of ``n_modes`` index columns plus a value.

    The delimiter (tab, comma or whitespace) is detected on the first data
    line and must stay the same for the whole file. Blank lines and lines
    starting with ``#`` are skipped. ``dims`` defaults to the per-mode maximum
    index; pass it explicitly when reading a holdout file for a known shape.
    """
    rows, vals = [], []
    delim = None
    detected = False
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if not detected:
                delim = _detect_delimiter(line)
                detected = True
            parts = [p.strip() for p in line.split(delim)]
            if len(parts) != n_modes + 1:
                raise ParseError(
                    f"expected {n_modes + 1} columns, found {len(parts)}", lineno
                )
            try:
                idx = [int(p) for p in parts[:n_modes]]
            except ValueError:
                raise ParseError(f"non-integer index in {line!r}", lineno) from None
            try:
                val = float(parts[n_modes])
            except ValueError:
                raise ParseError(f"non-numeric value {parts[n_modes]!r}", lineno) from None
            if not np.isfinite(val):
                raise ParseError(f"non-finite value {parts[n_modes]!r}", lineno)
            if one_based:
                idx = [i - 1 for i in idx]
            if min(idx) < 0:
                raise ParseError("index below the first valid position", lineno)
            rows.append(idx)
            vals.append(val)

    indices = np.asarray(rows, dtype=np.int64).reshape(-1, n_modes)
    if dims is None:
        dims = tuple(int(m) + 1 for m in indices.max(axis=0)) if rows else (1,) * n_modes
    try:
        return SparseTensor(indices, np.asarray(vals), dims, time_mode)
    except DuplicateEntryError:
        _, first, counts = np.unique(indices, axis=0, return_index=True, return_counts=True)
        dup = indices[first[counts > 1][0]]
        shown = tuple(int(i) + (1 if one_based else 0) for i in dup)
        raise DuplicateEntryError(f"duplicate index tuple {shown} in {path}") from None


def read_index_rows(path, n_modes: int, one_based: bool = True):
    """Read rows of ``n_modes`` integer indices; returns ``[(line, index_tuple)]``
    with zero-based tuples. Range checks are left to the caller."""
    out = []
    delim = None
    detected = False
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if not detected:
                delim = _detect_delimiter(line)
                detected = True
            parts = [p.strip() for p in line.split(delim)]
            if len(parts) != n_modes:
                raise ParseError(f"expected {n_modes} columns, found {len(parts)}", lineno)
            try:
                idx = tuple(int(p) - (1 if one_based else 0) for p in parts)
            except ValueError:
                raise ParseError(f"non-integer index in {line!r}", lineno) from None
            out.append((lineno, idx))
    return out


def write_tensor(x: SparseTensor, path, delimiter: str = "\t", one_based: bool = True) -> None:
    """Serialize entries in the format read by :func:`ingest`."""
    shift = 1 if one_based else 0
    with open(path, "w", encoding="utf-8") as fh:
        for idx, val in zip(x.indices, x.values):
            cols = [str(int(i) + shift) for i in idx] + [repr(float(val))]
            fh.write(delimiter.join(cols) + "\n")


def z_normalize(x: SparseTensor):
    """Standardize observed values; returns (tensor, mean, std).

    Uses the population standard deviation of the observed values.
    """
    if x.nnz < 2:
        raise InsufficientDataError("z-normalization needs at least 2 entries")
    mean = float(x.values.mean())
    std = float(x.values.std())
    if std == 0.0 or not np.isfinite(std):
        raise DegenerateDataError("observed values have zero variance")
    return x.with_values((x.values - mean) / std), mean, std


def split(x: SparseTensor, seed: int) -> SplitDataset:
    """Random 8:1:1 train/validation/test split of the observed entries.

    Validation and test each get ``round(nnz / 10)`` entries and training
    keeps the rest, so every part is within one entry of its exact share.
    """
    if x.nnz < 10:
        raise InsufficientDataError(f"need at least 10 entries to split, got {x.nnz}")
    perm = np.random.default_rng(seed).permutation(x.nnz)
    n_hold = int(round(x.nnz * SPLIT_RATIO[1] / sum(SPLIT_RATIO)))
    n_train = x.nnz - 2 * n_hold
    return SplitDataset(
        train=x.take(np.sort(perm[:n_train])),
        validation=x.take(np.sort(perm[n_train:n_train + n_hold])),
        test=x.take(np.sort(perm[n_train + n_hold:])),
        split_seed=seed,
    )


def slice_census(x: SparseTensor) -> SliceCensus:
    counts = np.bincount(x.indices[:, x.time_mode], minlength=x.n_time).astype(np.int64)
    return SliceCensus(counts)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
