"""Graph container, CSV ingestion, task splitting and neighbor sampling."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels

SPLITS = ("train", "val", "test")


class GraphFormatError(ValueError):
    pass


@dataclass
class Graph:
    features: np.ndarray  # (N, d_v)
    labels: np.ndarray  # (N,) int64
    indptr: np.ndarray  # CSR row pointer, (N+1,)
    indices: np.ndarray  # CSR column ids, sorted per row
    directed: bool = False

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.indptr = np.asarray(self.indptr, dtype=np.int64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        n = self.features.shape[0]
        if self.labels.shape != (n,) or self.indptr.shape != (n + 1,):
            raise GraphFormatError("features, labels and adjacency disagree on node count")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= n):
            raise GraphFormatError("neighbor id out of range")

    @property
    def num_nodes(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def neighbors(self, v):
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def degree(self, v):
        return int(self.indptr[v + 1] - self.indptr[v])

    def edge_list(self):
        src = np.repeat(np.arange(self.num_nodes), np.diff(self.indptr))
        return np.stack([src, self.indices], axis=1)

    def num_undirected_edges(self):
        e = self.edge_list()
        return int(np.sum(e[:, 0] < e[:, 1]) + np.sum(e[:, 0] == e[:, 1]))

    @classmethod
    def from_edges(cls, features, labels, edges, directed=False):
        n = np.asarray(features).shape[0]
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise GraphFormatError("edge endpoint out of range")
        if not directed:
            edges = np.concatenate([edges, edges[:, ::-1]])
        # unique() sorts by (src, dst), which gives sorted neighbor lists
        edges = np.unique(edges, axis=0) if edges.size else edges.reshape(0, 2)
        counts = np.bincount(edges[:, 0], minlength=n) if edges.size else np.zeros(n, dtype=np.int64)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        return cls(features, labels, indptr, edges[:, 1] if edges.size else np.empty(0, dtype=np.int64), directed)


@dataclass
class SplitAssignment:
    tags: np.ndarray  # per-node index into SPLITS

    def mask(self, split):
        return self.tags == SPLITS.index(split)

    def nodes(self, split):
        return np.flatnonzero(self.mask(split))


@dataclass
class TaskSpec:
    tasks: list

    def __post_init__(self):
        self.tasks = [[int(c) for c in t] for t in self.tasks]
        flat = [c for t in self.tasks for c in t]
        if len(flat) != len(set(flat)):
            raise ValueError("class indices must be disjoint across tasks")

    def validate(self, g: Graph):
        present = set(np.unique(g.labels).tolist())
        missing = [c for t in self.tasks for c in t if c not in present]
        if missing:
            raise ValueError(f"classes {missing} not present in graph")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls(json.load(fh)["tasks"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump({"tasks": self.tasks}, fh)


@dataclass
class SamplerConfig:
    per_hop_counts: tuple = (5, 7)

    def __post_init__(self):
        self.per_hop_counts = tuple(int(c) for c in self.per_hop_counts)
        if len(self.per_hop_counts) < 1 or min(self.per_hop_counts) < 0:
            raise ValueError("need at least one hop and non-negative counts")

    @property
    def hops(self):
        return len(self.per_hop_counts)

    @property
    def total(self):
        return sum(self.per_hop_counts)


@dataclass
class TaskView:
    """Nodes of one task; labels remapped to 0..c-1 inside the view."""

    graph: Graph
    task_id: int
    classes: list
    nodes: np.ndarray  # global ids, ascending
    member: np.ndarray  # (N,) bool mask of view membership
    local_labels: np.ndarray  # (N,) remapped label, -1 outside the view
    splits: SplitAssignment | None = None
    _frontier_cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_classes(self):
        return len(self.classes)

    def split_nodes(self, split):
        if self.splits is None:
            return self.nodes
        return self.nodes[self.splits.mask(split)[self.nodes]]

    def frontiers(self, v, hops):
        key = (int(v), hops)
        hit = self._frontier_cache.get(key)
        if hit is None:
            flat, offsets = _kernels.hop_frontiers(self.graph.indptr, self.graph.indices, self.member, v, hops)
            hit = [flat[offsets[i]:offsets[i + 1]] for i in range(hops)]
            self._frontier_cache[key] = hit
        return hit


def _read_csv(path, header_check):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise GraphFormatError(f"{path}: empty file") from None
        header_check(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            yield lineno, row


def load_graph(nodes_path, edges_path, splits_path, directed=False):
    """Parse the three-file CSV dataset format into ``(Graph, SplitAssignment)``."""
    def nodes_header(h):
        if h[:2] != ["id", "label"] or any(col != f"f{i}" for i, col in enumerate(h[2:])):
            raise GraphFormatError(f"{nodes_path}:1: expected header id,label,f0,...")

    ids, labels, feats = [], [], []
    width = None
    for lineno, row in _read_csv(nodes_path, nodes_header):
        try:
            ids.append(int(row[0]))
            labels.append(int(row[1]))
            vals = [float(x) for x in row[2:]]
        except (ValueError, IndexError) as exc:
            raise GraphFormatError(f"{nodes_path}:{lineno}: {exc}") from None
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise GraphFormatError(f"{nodes_path}:{lineno}: expected {width} features, got {len(vals)}")
        feats.append(vals)
    n = len(ids)
    if ids != list(range(n)):
        raise GraphFormatError(f"{nodes_path}: ids must be contiguous 0..N-1 in order")

    def edges_header(h):
        if h != ["src", "dst"]:
            raise GraphFormatError(f"{edges_path}:1: expected header src,dst")

    edges = []
    for lineno, row in _read_csv(edges_path, edges_header):
        try:
            s, d = int(row[0]), int(row[1])
        except (ValueError, IndexError) as exc:
            raise GraphFormatError(f"{edges_path}:{lineno}: {exc}") from None
        if not (0 <= s < n and 0 <= d < n):
            raise GraphFormatError(f"{edges_path}:{lineno}: dangling edge endpoint ({s},{d})")
        edges.append((s, d))

    def splits_header(h):
        if h != ["id", "split"]:
            raise GraphFormatError(f"{splits_path}:1: expected header id,split")

    tags = np.full(n, -1, dtype=np.int64)
    for lineno, row in _read_csv(splits_path, splits_header):
        try:
            v = int(row[0])
            tag = SPLITS.index(row[1])
        except (ValueError, IndexError):
            raise GraphFormatError(f"{splits_path}:{lineno}: bad row {row}") from None
        if not 0 <= v < n:
            raise GraphFormatError(f"{splits_path}:{lineno}: unknown node {v}")
        if tags[v] != -1:
            raise GraphFormatError(f"{splits_path}:{lineno}: node {v} tagged twice")
        tags[v] = tag
    if np.any(tags < 0):
        raise GraphFormatError(f"{splits_path}: {int(np.sum(tags < 0))} nodes without a split")

    features = np.asarray(feats, dtype=np.float64).reshape(n, width or 0)
    graph = Graph.from_edges(features, labels, edges, directed=directed)
    return graph, SplitAssignment(tags)


def save_graph(g: Graph, splits: SplitAssignment, directory):
    """Write ``nodes.csv``, ``edges.csv`` and ``splits.csv`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "nodes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"f{i}" for i in range(g.dim)])
        for v in range(g.num_nodes):
            w.writerow([v, int(g.labels[v])] + [repr(float(x)) for x in g.features[v]])
    with open(directory / "edges.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst"])
        for s, d in g.edge_list():
            if g.directed or s <= d:
                w.writerow([int(s), int(d)])
    with open(directory / "splits.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "split"])
        for v, t in enumerate(splits.tags):
            w.writerow([v, SPLITS[t]])


def load_dataset(directory, directed=False):
    d = Path(directory)
    g, splits = load_graph(d / "nodes.csv", d / "edges.csv", d / "splits.csv", directed=directed)
    spec = TaskSpec.load(d / "tasks.json") if (d / "tasks.json").exists() else None
    return g, splits, spec


def make_task_subgraphs(g: Graph, spec: TaskSpec, splits: SplitAssignment | None = None):
    spec.validate(g)
    views = []
    for tid, classes in enumerate(spec.tasks):
        remap = np.full(max(g.num_classes, max(classes) + 1), -1, dtype=np.int64)
        remap[classes] = np.arange(len(classes))
        local = remap[g.labels]
        member = local >= 0
        nodes = np.flatnonzero(member)
        if nodes.size == 0:
            raise ValueError(f"task {tid} has no nodes")
        views.append(TaskView(g, tid, list(classes), nodes, member, local, splits))
    return views


def sample_neighborhood(view: TaskView, v, cfg: SamplerConfig, rng):
    """Uniform with-replacement draws from each exact-distance hop frontier.

    Hop ``l`` contributes ``cfg.per_hop_counts[l-1]`` ids; an empty frontier
    contributes copies of ``v`` itself.
    """
    out = np.empty(cfg.total, dtype=np.int64)
    pos = 0
    for frontier, k in zip(view.frontiers(v, cfg.hops), cfg.per_hop_counts):
        if k == 0:
            continue
        if frontier.size:
            out[pos:pos + k] = frontier[rng.integers(0, frontier.size, size=k)]
        else:
            out[pos:pos + k] = v
        pos += k
    return out


def gen_synthetic(classes, nodes_per_class, dim, intra_p, inter_p, sep, rng):
    """Gaussian class clusters on an SBM graph, 60/20/20 split per class."""
    if classes < 1 or nodes_per_class < 1 or dim < 1:
        raise ValueError("counts must be >= 1")
    if not (0 <= intra_p <= 1 and 0 <= inter_p <= 1):
        raise ValueError("probabilities must lie in [0, 1]")
    if dim < classes:
        raise ValueError("orthogonal class means need dim >= classes")
    q, _ = np.linalg.qr(rng.standard_normal((dim, classes)))
    means = sep * q.T  # (classes, dim), orthonormal directions
    n = classes * nodes_per_class
    labels = np.repeat(np.arange(classes), nodes_per_class)
    features = means[labels] + rng.standard_normal((n, dim))

    iu, ju = np.triu_indices(n, k=1)
    p = np.where(labels[iu] == labels[ju], intra_p, inter_p)
    keep = rng.random(iu.size) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    graph = Graph.from_edges(features, labels, edges)

    tags = np.empty(n, dtype=np.int64)
    n_tr = int(round(0.6 * nodes_per_class))
    n_va = int(round(0.2 * nodes_per_class))
    for k in range(classes):
        members = rng.permutation(np.flatnonzero(labels == k))
        tags[members[:n_tr]] = 0
        tags[members[n_tr:n_tr + n_va]] = 1
        tags[members[n_tr + n_va:]] = 2
    return graph, SplitAssignment(tags)
