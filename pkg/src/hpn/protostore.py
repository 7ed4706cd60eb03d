"""Threshold-gated stores of unit-norm prototypes (one per hierarchy level)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .numerics import NORM_EPS, cosine_grad

# slack for re-matching an embedding against a prototype built from it
MATCH_SLACK = 1e-12


class FrozenStoreError(RuntimeError):
    pass


class PrototypeCollapse(RuntimeError):
    pass


class MatchError(RuntimeError):
    pass


@dataclass
class MatchResult:
    index: np.ndarray  # matched prototype id per embedding
    sim: np.ndarray
    was_new: np.ndarray  # bool: embedding was not "old" at partition time


@dataclass
class PrototypeStore:
    dim: int
    threshold: float
    level: str = "A"
    frozen: bool = False
    vectors: np.ndarray = None
    provenance: list = field(default_factory=list)  # (task_id, source) per prototype
    skipped_zero: int = 0

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.vectors is None:
            self.vectors = np.empty((0, self.dim))
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64).reshape(-1, self.dim)

    def __len__(self):
        return self.vectors.shape[0]

    def similarities(self, embs):
        return _kernels.cosine_matrix(np.atleast_2d(embs), self.vectors)

    def partition(self, embs):
        """Split embedding row ids into (old, new) by the threshold test."""
        embs = np.atleast_2d(embs)
        if len(self) == 0:
            return np.empty(0, dtype=np.int64), np.arange(embs.shape[0])
        best = self.similarities(embs).max(axis=1)
        old = best >= self.threshold
        return np.flatnonzero(old), np.flatnonzero(~old)

    def dedup_new(self, candidates, return_index=False):
        """Greedy in-order filter keeping mutually dissimilar, normalized candidates."""
        kept, where = [], []
        for i, c in enumerate(np.atleast_2d(candidates)):
            n = np.linalg.norm(c)
            if n < NORM_EPS:
                self.skipped_zero += 1
                continue
            u = c / n
            if kept and max(float(u @ k) for k in kept) >= self.threshold:
                continue
            kept.append(u)
            where.append(i)
        kept = np.array(kept).reshape(-1, self.dim)
        if return_index:
            return kept, np.asarray(where, dtype=np.int64)
        return kept

    def create(self, kept, provenance=None):
        """Append ``kept`` rows as new prototypes; returns their ids."""
        kept = np.asarray(kept, dtype=np.float64).reshape(-1, self.dim)
        if kept.shape[0] == 0:
            return np.empty(0, dtype=np.int64)
        if self.frozen:
            raise FrozenStoreError(f"{self.level}-store is frozen")
        start = len(self)
        self.vectors = np.concatenate([self.vectors, kept])
        prov = provenance if provenance is not None else [None] * kept.shape[0]
        if not isinstance(prov, list):
            prov = [prov] * kept.shape[0]
        self.provenance.extend(prov)
        return np.arange(start, start + kept.shape[0])

    def match(self, embs, relaxed=False, was_new=None):
        """Argmax-cosine assignment, lowest id on ties.

        Without ``relaxed``, every embedding must clear the threshold.
        """
        embs = np.atleast_2d(embs)
        if len(self) == 0:
            raise MatchError(f"{self.level}-store is empty")
        sims = self.similarities(embs)
        idx = np.argmax(sims, axis=1)  # first max wins ties
        best = sims[np.arange(sims.shape[0]), idx]
        if not relaxed:
            bad = best < self.threshold - MATCH_SLACK
            # zero-norm embeddings match nothing; they fall back to the argmax
            bad &= np.linalg.norm(embs, axis=1) >= NORM_EPS
            if np.any(bad):
                raise MatchError(f"{self.level}-level embedding below threshold after creation")
        if was_new is None:
            was_new = np.zeros(embs.shape[0], dtype=bool)
        return MatchResult(idx.astype(np.int64), best, np.asarray(was_new, dtype=bool))

    def assign(self, embs, provenance=None, create=True):
        """Partition, dedup, create (if allowed) and match in one pass.

        ``provenance`` is one record per embedding row (or a single record
        shared by all); created prototypes inherit their source row's record.
        """
        embs = np.atleast_2d(embs)
        old, new = self.partition(embs)
        was_new = np.zeros(embs.shape[0], dtype=bool)
        was_new[new] = True
        if create and not self.frozen and new.size:
            kept, where = self.dedup_new(embs[new], return_index=True)
            if isinstance(provenance, list):
                prov = [provenance[new[i]] for i in where]
            else:
                prov = [provenance] * len(where)
            self.create(kept, prov)
        relaxed = not create or self.frozen
        return self.match(embs, relaxed=relaxed, was_new=was_new)

    def distance_loss(self, matches: MatchResult, embs):
        """Negative summed cosine between old embeddings and their prototypes.

        Returns ``(loss, grad_embs, grad_protos)``; ``grad_protos`` has the
        store's shape and accumulates over embeddings sharing a prototype.
        """
        embs = np.atleast_2d(np.asarray(embs, dtype=np.float64))
        g_e = np.zeros_like(embs)
        g_p = np.zeros_like(self.vectors)
        loss = 0.0
        for i in np.flatnonzero(~matches.was_new):
            m = matches.index[i]
            c, ga, gb = cosine_grad(embs[i], self.vectors[m])
            loss -= c
            g_e[i] -= ga
            g_p[m] -= gb
        return loss, g_e, g_p

    def renormalize(self):
        if len(self) == 0:
            return self
        norms = np.linalg.norm(self.vectors, axis=1)
        if np.any(norms < NORM_EPS):
            raise PrototypeCollapse(f"{self.level}-prototype collapsed to zero norm")
        self.vectors /= norms[:, None]
        return self

    def copy(self):
        return PrototypeStore(self.dim, self.threshold, self.level, self.frozen,
                              self.vectors.copy(), list(self.provenance), self.skipped_zero)
