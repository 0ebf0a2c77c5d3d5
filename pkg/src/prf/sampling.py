"""Bootstrap sampling via an index table instead of copied data.

Each of the k trees gets one row of N uniform-with-replacement row indexes.
Rows a tree never drew form its out-of-bag set, used later as that tree's
private test set. Everything is reproducible from (n_rows, k, seed): the
generator is numpy's PCG64, seeded through SeedSequence with a fixed stream
tag so other consumers of the same user seed stay independent.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DSI_MAGIC = b"DSI1"

# SeedSequence stream tags; trees use (seed, 1, tree_index) in the forest module.
DSI_STREAM = 0


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class DsiTable:
    """k x N table of sampled row indexes, one row per tree."""

    k: int
    n: int
    seed: int
    indexes: np.ndarray  # shape (k, n), int64 in [0, n)

    def row(self, tree_i: int) -> np.ndarray:
        if not 0 <= tree_i < self.k:
            raise SamplingError(f"tree index {tree_i} out of range [0, {self.k})")
        return self.indexes[tree_i]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<QQQ", self.k, self.n, self.seed))
        h.update(np.ascontiguousarray(self.indexes, dtype="<i8").tobytes())
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(DSI_MAGIC)
            fh.write(struct.pack("<QQQ", self.k, self.n, self.seed))
            fh.write(np.ascontiguousarray(self.indexes, dtype="<i8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "DsiTable":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != DSI_MAGIC:
                raise SamplingError(f"{path}: bad magic {magic!r}")
            k, n, seed = struct.unpack("<QQQ", fh.read(24))
            data = np.frombuffer(fh.read(), dtype="<i8")
        if data.size != k * n:
            raise SamplingError(f"{path}: truncated index block")
        return cls(k=k, n=n, seed=seed, indexes=data.reshape(k, n).astype(np.int64))


@dataclass(frozen=True)
class OobSet:
    tree_index: int
    row_indexes: np.ndarray  # sorted, unique

    @property
    def size(self) -> int:
        return len(self.row_indexes)


def build_dsi(n_rows: int, k_trees: int, seed: int) -> DsiTable:
    if n_rows < 1:
        raise SamplingError("n_rows must be >= 1")
    if k_trees < 1:
        raise SamplingError("k_trees must be >= 1")
    if seed < 0:
        raise SamplingError("seed must be non-negative")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, DSI_STREAM))))
    indexes = rng.integers(0, n_rows, size=(k_trees, n_rows), dtype=np.int64)
    return DsiTable(k=k_trees, n=n_rows, seed=seed, indexes=indexes)


def oob_indices(table: DsiTable, tree_i: int) -> OobSet:
    """Rows absent from the tree's bootstrap draw."""
    drawn = table.row(tree_i)
    missing = np.setdiff1d(np.arange(table.n, dtype=np.int64), drawn)
    return OobSet(tree_index=tree_i, row_indexes=missing)
