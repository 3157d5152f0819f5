"""LIBSVM-style sparse classification files, splits, and the dataset registry."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "ParseError",
    "SparseDataset",
    "SplitSpec",
    "DatasetInfo",
    "parse_sparse_file",
    "write_sparse_file",
    "split",
    "registry",
    "lookup",
    "check_against_registry",
]


class ParseError(ValueError):
    """Malformed input; the message carries the 1-based line number."""


@dataclass(frozen=True, eq=False)
class SparseDataset:
    X: sp.csr_matrix
    labels: np.ndarray
    name: str = ""

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def rows(self, idx, name=None) -> "SparseDataset":
        return SparseDataset(self.X[idx], self.labels[idx], name or self.name)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train fraction must lie in (0, 1)")


@dataclass(frozen=True)
class DatasetInfo:
    name: str
    n_train: int
    n_test: int
    n_features: int
    large: bool = False


_REGISTRY = (
    DatasetInfo("gisette", 6_000, 1_000, 5_000),
    DatasetInfo("mushrooms", 7_311, 813, 112),
    DatasetInfo("sido", 11_410, 1_268, 4_932),
    DatasetInfo("ijcnn", 35_000, 91_701, 22),
    DatasetInfo("spam", 82_970, 9_219, 823_470),
    DatasetInfo("alpha", 450_000, 50_000, 500),
    DatasetInfo("covertype", 522_910, 58_102, 54),
    DatasetInfo("url", 2_156_517, 239_613, 3_231_961, large=True),
)


def registry() -> list[DatasetInfo]:
    return list(_REGISTRY)


def lookup(name: str) -> DatasetInfo | None:
    for info in _REGISTRY:
        if info.name == name:
            return info
    return None


def _normalize_labels(raw: np.ndarray) -> np.ndarray:
    """Map two distinct label values to -1 (smaller) and +1 (larger)."""
    values = np.unique(raw)
    if values.size > 2:
        raise ParseError(f"expected two classes, found {values.size}: {values[:5]}")
    if values.size == 2:
        return np.where(raw == values[0], -1, 1).astype(np.int8)
    # a single class: read 0/-1 as negative, anything else as positive
    return np.full(raw.shape, -1 if values[0] <= 0 else 1, dtype=np.int8)


def parse_sparse_file(path, name: str | None = None, n_features: int | None = None) -> SparseDataset:
    """Parse ``label idx:val idx:val ...`` lines with 1-based, strictly
    increasing feature indices. Blank lines and ``#`` comments are skipped.

    Lines are read one at a time; only the parsed arrays are kept.
    """
    path = Path(path)
    labels: list[float] = []
    indptr = [0]
    cols: list[int] = []
    vals: list[float] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            try:
                labels.append(float(fields[0]))
            except ValueError:
                raise ParseError(f"line {lineno}: bad label {fields[0]!r}") from None
            last = 0
            for tok in fields[1:]:
                idx_s, sep, val_s = tok.partition(":")
                try:
                    if not sep:
                        raise ValueError
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise ParseError(f"line {lineno}: bad feature {tok!r}") from None
                if idx < 1 or idx > 2**32 - 1:
                    raise ParseError(f"line {lineno}: feature index {idx} out of range")
                if idx <= last:
                    raise ParseError(f"line {lineno}: feature indices not strictly increasing")
                last = idx
                cols.append(idx - 1)
                vals.append(val)
            indptr.append(len(cols))
    if not labels:
        raise ParseError(f"{path}: no data rows")
    d = (max(cols) + 1) if cols else 0
    if n_features is not None:
        if n_features < d:
            raise ParseError(f"{path}: feature index {d} exceeds n_features={n_features}")
        d = n_features
    X = sp.csr_matrix(
        (np.array(vals, dtype=np.float64), np.array(cols, dtype=np.uint32), np.array(indptr, dtype=np.int64)),
        shape=(len(labels), d),
    )
    return SparseDataset(X, _normalize_labels(np.array(labels)), name or path.stem)


def write_sparse_file(dataset: SparseDataset, path) -> None:
    """Write ``dataset`` in the format :func:`parse_sparse_file` reads,
    with labels as +1/-1 and values in round-trip precision."""
    X = dataset.X.tocsr()
    with Path(path).open("w") as fh:
        for i in range(X.shape[0]):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            order = np.argsort(X.indices[lo:hi])
            feats = " ".join(f"{c + 1}:{v!r}" for c, v in zip(X.indices[lo:hi][order], X.data[lo:hi][order].tolist()))
            label = "+1" if dataset.labels[i] > 0 else "-1"
            fh.write(f"{label} {feats}\n" if feats else f"{label}\n")


def split(dataset: SparseDataset, spec: SplitSpec = SplitSpec()) -> tuple[SparseDataset, SparseDataset]:
    """Shuffle with ``spec.seed``; the first ceil(fraction * n) rows train."""
    n = dataset.n
    n_train = math.ceil(spec.train_fraction * n)
    if n_train <= 0 or n_train >= n:
        raise ValueError(f"split of {n} rows at {spec.train_fraction} leaves one side empty")
    perm = np.random.default_rng(spec.seed).permutation(n)
    return (dataset.rows(perm[:n_train], f"{dataset.name}-train"),
            dataset.rows(perm[n_train:], f"{dataset.name}-test"))


def check_against_registry(dataset: SparseDataset, name: str | None = None, part: str = "total") -> bool:
    """Warn when the shape disagrees with the registry entry; returns whether
    it matched. ``part`` is ``"train"``, ``"test"`` or ``"total"``."""
    info = lookup(name or dataset.name)
    if info is None:
        return True
    expected = {"train": info.n_train, "test": info.n_test, "total": info.n_train + info.n_test}[part]
    ok = True
    if dataset.n != expected:
        warnings.warn(f"{info.name}: {dataset.n} rows, registry lists {expected} ({part})")
        ok = False
    if dataset.d > info.n_features:
        warnings.warn(f"{info.name}: {dataset.d} features, registry lists {info.n_features}")
        ok = False
    return ok
