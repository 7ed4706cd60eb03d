"""Atomic feature extractors: linear maps producing per-node atomic embeddings."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .numerics import ShapeError


@dataclass
class AfeBank:
    """Node-type and structure-type extractors, stored as stacked arrays.

    ``node[i]`` is the ``d_v x d`` matrix of node extractor ``i`` and
    ``struct[j]`` that of structure extractor ``j``.  Both kinds share the
    output width so their embeddings live in one prototype space.
    """

    node: np.ndarray  # (l_a, d_v, d)
    struct: np.ndarray  # (l_r, d_v, d)

    def __post_init__(self):
        self.node = np.ascontiguousarray(self.node, dtype=np.float64)
        self.struct = np.ascontiguousarray(self.struct, dtype=np.float64)
        if self.node.ndim != 3 or self.struct.ndim != 3:
            raise ShapeError("AFE stacks must be 3-d")
        if len(self.node) < 1 or len(self.struct) < 1:
            raise ValueError("need at least one AFE of each kind")
        if self.node.shape[1:] != self.struct.shape[1:]:
            raise ShapeError(f"node AFEs {self.node.shape[1:]} and struct AFEs {self.struct.shape[1:]} must match")

    @property
    def l_a(self):
        return self.node.shape[0]

    @property
    def l_r(self):
        return self.struct.shape[0]

    @property
    def d_v(self):
        return self.node.shape[1]

    @property
    def dim(self):
        return self.node.shape[2]

    @classmethod
    def random(cls, l_a, l_r, d_v, dim, rng, scale=None):
        # unit expected Frobenius norm per extractor; the quartic divergence
        # term is only stable at large learning rates when the Gram diagonal is O(1)
        lim = np.sqrt(3.0 / (d_v * dim)) if scale is None else scale
        node = rng.uniform(-lim, lim, size=(l_a, d_v, dim))
        struct = rng.uniform(-lim, lim, size=(l_r, d_v, dim))
        return cls(node, struct)


@dataclass
class AtomicEmbeddingSet:
    node_embs: np.ndarray  # (l_a, d)
    struct_embs: np.ndarray  # (l_r, S, d), one row per sampled neighbor


@dataclass
class AfeSelection:
    node: np.ndarray  # selected node-AFE ids, rank order
    struct: np.ndarray  # selected struct-AFE ids, rank order
    node_scores: np.ndarray  # SimMAX per node AFE
    struct_scores: np.ndarray  # SimMAX per struct AFE


def atomic_embeddings(bank: AfeBank, x, neighbor_features):
    x = np.asarray(x, dtype=np.float64)
    nb = np.asarray(neighbor_features, dtype=np.float64).reshape(-1, x.shape[0] if x.ndim else 0)
    if x.shape != (bank.d_v,) or nb.shape[1] != bank.d_v:
        raise ShapeError(f"expected features of width {bank.d_v}")
    node_embs = np.matmul(x, bank.node)
    struct_embs = np.matmul(nb, bank.struct)
    return AtomicEmbeddingSet(node_embs, struct_embs)


def divergence_loss(bank: AfeBank):
    """Sum of squared Frobenius inner products over ordered pairs of distinct same-kind AFEs.

    Returns ``(loss, grad_node, grad_struct)``.
    """
    loss = 0.0
    grads = []
    for stack in (bank.node, bank.struct):
        flat = stack.reshape(stack.shape[0], -1)
        gram = flat @ flat.T
        np.fill_diagonal(gram, 0.0)
        loss = loss + np.sum(gram * gram)
        grads.append((4.0 * gram @ flat).reshape(stack.shape))
    return loss, grads[0], grads[1]


def simmax_scores(embs: AtomicEmbeddingSet, prototypes):
    """Max cosine of each AFE's embeddings against the prototype rows.

    An empty prototype set scores every AFE at -1.
    """
    l_a = embs.node_embs.shape[0]
    l_r, s, d = embs.struct_embs.shape
    if len(prototypes) == 0:
        return np.full(l_a, -1.0), np.full(l_r, -1.0)
    node_scores = _kernels.cosine_matrix(embs.node_embs, prototypes).max(axis=1)
    if s == 0:
        return node_scores, np.full(l_r, -1.0)
    sims = _kernels.cosine_matrix(embs.struct_embs.reshape(-1, d), prototypes)
    struct_scores = sims.reshape(l_r, -1).max(axis=1)
    return node_scores, struct_scores


def _rank(scores, k):
    # stable sort on -score: ties keep ascending AFE index
    return np.argsort(-scores, kind="stable")[:k].astype(np.int64)


def select_afes(bank: AfeBank, embs: AtomicEmbeddingSet, a_store, l_a_sel, l_r_sel):
    """Pick the ``l_a_sel`` node AFEs and ``l_r_sel`` struct AFEs most similar to the A-store."""
    if l_a_sel > bank.l_a or l_r_sel > bank.l_r:
        raise ValueError("cannot select more AFEs than exist")
    protos = a_store.vectors if a_store is not None else np.empty((0, bank.dim))
    node_scores, struct_scores = simmax_scores(embs, protos)
    return AfeSelection(_rank(node_scores, l_a_sel), _rank(struct_scores, l_r_sel), node_scores, struct_scores)
