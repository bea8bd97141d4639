"""Exact, incremental cosine top-k index over unit-norm vectors."""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, DuplicateId, UnknownId

# Scores are compared on this grid when ranking so that duplicate vectors
# stored at different rows tie exactly regardless of BLAS summation order.
SCORE_DECIMALS = 12


@dataclass(frozen=True)
class ScoredHit:
    id: str
    score: float


class VectorIndex:
    """Brute-force cosine index. Ties rank by insertion order (older first)."""

    def __init__(self, dim: int, capacity: int = 64):
        self.dim = dim
        self._vecs = np.zeros((capacity, dim), dtype=np.float64)
        self._ids: list[str | None] = []
        self._seqs: list[int] = []
        self._row: dict[str, int] = {}
        self._next_seq = 0
        self._n = 0
        self._free: list[int] = []
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._row)

    def __contains__(self, id: str) -> bool:
        return id in self._row

    def insert(self, id: str, v: np.ndarray) -> None:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise DimMismatch(f"expected dim {self.dim}, got {v.shape}")
        with self._lock:
            if id in self._row:
                raise DuplicateId(id)
            if self._n == self._vecs.shape[0]:
                grown = np.zeros((max(1, 2 * self._n), self.dim), dtype=np.float64)
                grown[: self._n] = self._vecs[: self._n]
                self._vecs = grown
            row = self._n
            self._vecs[row] = v
            self._ids.append(id)
            self._seqs.append(self._next_seq)
            self._next_seq += 1
            self._n += 1
            self._row[id] = row

    def remove(self, id: str) -> None:
        with self._lock:
            row = self._row.pop(id, None)
            if row is None:
                raise UnknownId(id)
            self._ids[row] = None
            self._vecs[row] = 0.0
            self._free.append(row)
            if len(self._free) > 64 and len(self._free) > self._n // 2:
                self._compact()

    def _compact(self) -> None:
        keep = [r for r in range(self._n) if self._ids[r] is not None]
        self._vecs[: len(keep)] = self._vecs[keep]
        self._ids = [self._ids[r] for r in keep]
        self._seqs = [self._seqs[r] for r in keep]
        self._n = len(keep)
        self._row = {id: r for r, id in enumerate(self._ids)}
        self._free = []

    def vector(self, id: str) -> np.ndarray:
        with self._lock:
            if id not in self._row:
                raise UnknownId(id)
            return self._vecs[self._row[id]].copy()

    def ids(self) -> list[str]:
        """Live ids in insertion order."""
        with self._lock:
            live = [(self._seqs[r], self._ids[r]) for r in self._row.values()]
        return [id for _, id in sorted(live)]

    def top_k(self, q: np.ndarray, k: int) -> list[ScoredHit]:
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimMismatch(f"expected dim {self.dim}, got {q.shape}")
        with self._lock:
            if not self._row:
                return []
            scores = self._vecs[: self._n] @ q
            rows = [r for r in range(self._n) if self._ids[r] is not None]
            ranked = sorted(rows, key=lambda r: (-round(float(scores[r]), SCORE_DECIMALS), self._seqs[r]))
            return [ScoredHit(self._ids[r], float(scores[r])) for r in ranked[:k]]
