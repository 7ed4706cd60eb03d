"""Three-level prototype model: forward pass, loss, manual backward, training.

A node's representation is built from *matched prototypes*, not raw
embeddings: selected atomic embeddings are assigned to A-prototypes, the
concatenated A-prototypes are mapped to a node-level embedding and assigned
to an N-prototype, which is mapped again and assigned to a C-prototype.  The
classifier reads the concatenation of all matched prototypes.

Matching and creation are discrete; the backward pass treats the recorded
assignments as constants, so every gradient here is the exact derivative of
the loss with the assignments held fixed.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .afe import AfeBank, AfeSelection, atomic_embeddings, divergence_loss, select_afes
from .graphstore import SamplerConfig, TaskView, sample_neighborhood
from .numerics import NORM_EPS, child_rng, softmax
from .protostore import MatchResult, PrototypeStore

CHECKPOINT_VERSION = 1

PARAM_NAMES = (
    "afe_node", "afe_struct",
    "fc_a2n.W", "fc_a2n.b", "fc_n2c.W", "fc_n2c.b", "cls.W", "cls.b",
    "proto_A", "proto_N", "proto_C",
)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ModelConfig:
    d_v: int
    num_classes: int
    d_a: int = 16
    d_n: int = 16
    d_c: int = 16
    l_a: int = 22
    l_r: int = 22
    l_a_sel: int = 1
    l_r_sel: int = 1
    per_hop_counts: tuple = (5, 7)
    t_a: float = 0.3
    t_n: float = 0.3
    t_c: float = 0.4
    alpha: float = 1.0
    beta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.per_hop_counts = tuple(int(c) for c in self.per_hop_counts)

    def problems(self):
        out = []
        for name in ("d_v", "num_classes", "d_a", "d_n", "d_c", "l_a", "l_r", "l_a_sel", "l_r_sel"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be >= 1")
        if self.l_a_sel > self.l_a:
            out.append("l_a_sel exceeds l_a")
        if self.l_r_sel > self.l_r:
            out.append("l_r_sel exceeds l_r")
        for name in ("t_a", "t_n", "t_c"):
            if not 0.0 < getattr(self, name) < 1.0:
                out.append(f"{name} must lie in (0, 1)")
        if self.alpha < 0 or self.beta < 0:
            out.append("alpha and beta must be >= 0")
        if not self.per_hop_counts or min(self.per_hop_counts) < 0:
            out.append("per_hop_counts needs >= 1 hop with non-negative counts")
        return out

    @property
    def k_sel(self):
        return self.l_a_sel + self.l_r_sel

    @property
    def rep_dim(self):
        return self.k_sel * self.d_a + self.d_n + self.d_c


@dataclass
class TrainConfig:
    """Optimisation schedule.  Learning-rate schedules are ``[[start_epoch, lr], ...]``."""

    epochs: int = 90
    warmup_epochs: int = 35
    afe_lr: list = field(default_factory=lambda: [[0, 0.1], [35, 0.001]])
    proto_lr: list = field(default_factory=lambda: [[0, 0.1], [85, 0.01]])
    other_lr: list = field(default_factory=lambda: [[0, 0.1], [35, 0.001]])
    batch_size: int = 0  # 0 = full batch
    warmup_scope: str = "first"  # "first": only while no prototypes exist; "every": each task
    schedule_scope: str = "run"  # "run": epochs count across tasks; "task": schedules restart every task
    freeze_prototypes: bool = False  # no creation and no prototype updates after the first task
    freeze_shared: bool = False  # AFEs and hierarchy maps fixed after the first task
    freeze_old_prototypes: bool = False  # prototypes from earlier tasks receive no updates
    refine_prototypes: bool = True  # False: prototypes stay where they were created
    grad_clip: float = 0.0  # > 0: cap the L2 norm of each parameter block's gradient

    def problems(self):
        out = []
        if self.epochs < 0:
            out.append("epochs must be >= 0")
        if not 0 <= self.warmup_epochs <= max(self.epochs, 0):
            out.append("warmup_epochs must lie in [0, epochs]")
        for name in ("afe_lr", "proto_lr", "other_lr"):
            sched = getattr(self, name)
            if not sched or any(lr <= 0 for _, lr in sched):
                out.append(f"{name}: learning rates must be > 0")
            elif sched[0][0] != 0 or any(a[0] >= b[0] for a, b in zip(sched, sched[1:])):
                out.append(f"{name}: schedule must start at epoch 0 and increase")
        if self.batch_size < 0:
            out.append("batch_size must be >= 0")
        if self.grad_clip < 0:
            out.append("grad_clip must be >= 0")
        if self.warmup_scope not in ("first", "every"):
            out.append("warmup_scope must be 'first' or 'every'")
        if self.schedule_scope not in ("task", "run"):
            out.append("schedule_scope must be 'task' or 'run'")
        return out


def lr_at(schedule, epoch):
    lr = schedule[0][1]
    for start, value in schedule:
        if epoch >= start:
            lr = value
    return lr


def _glorot(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


class HpnModel:
    def __init__(self, cfg: ModelConfig, rng=None):
        bad = cfg.problems()
        if bad:
            raise ValueError("; ".join(bad))
        self.cfg = cfg
        rng = rng if rng is not None else child_rng(cfg.seed, 0)
        self.bank = AfeBank.random(cfg.l_a, cfg.l_r, cfg.d_v, cfg.d_a, rng)
        k = cfg.k_sel * cfg.d_a
        self.fc_a2n_W = _glorot(rng, k, cfg.d_n)
        self.fc_a2n_b = np.zeros(cfg.d_n)
        self.fc_n2c_W = _glorot(rng, cfg.d_n, cfg.d_c)
        self.fc_n2c_b = np.zeros(cfg.d_c)
        self.cls_W = _glorot(rng, cfg.rep_dim, cfg.num_classes)
        self.cls_b = np.zeros(cfg.num_classes)
        self.a_store = PrototypeStore(cfg.d_a, cfg.t_a, "A")
        self.n_store = PrototypeStore(cfg.d_n, cfg.t_n, "N")
        self.c_store = PrototypeStore(cfg.d_c, cfg.t_c, "C")
        self.sampler = SamplerConfig(cfg.per_hop_counts)

    # -- parameter access -------------------------------------------------
    @property
    def stores(self):
        return {"A": self.a_store, "N": self.n_store, "C": self.c_store}

    def param(self, name):
        return {
            "afe_node": self.bank.node, "afe_struct": self.bank.struct,
            "fc_a2n.W": self.fc_a2n_W, "fc_a2n.b": self.fc_a2n_b,
            "fc_n2c.W": self.fc_n2c_W, "fc_n2c.b": self.fc_n2c_b,
            "cls.W": self.cls_W, "cls.b": self.cls_b,
            "proto_A": self.a_store.vectors, "proto_N": self.n_store.vectors,
            "proto_C": self.c_store.vectors,
        }[name]

    def set_param(self, name, value):
        value = np.asarray(value, dtype=np.float64)
        target = self.param(name)
        if value.shape != target.shape:
            raise ValueError(f"{name}: shape {value.shape} != {target.shape}")
        target[...] = value

    def freeze_stores(self, frozen=True):
        for s in self.stores.values():
            s.frozen = frozen

    # -- serialisation ------------------------------------------------------
    def to_dict(self):
        def arr(a):
            return {"shape": list(a.shape), "data": [float(x) for x in a.ravel()]}

        return {
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.cfg),
            "seed": self.cfg.seed,
            "params": {name: arr(self.param(name)) for name in PARAM_NAMES if not name.startswith("proto_")},
            "stores": {
                lvl: {
                    "dim": s.dim, "threshold": s.threshold, "frozen": s.frozen,
                    "vectors": arr(s.vectors), "provenance": [list(p) if p is not None else None for p in s.provenance],
                }
                for lvl, s in self.stores.items()
            },
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def digest(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')}")
        cfg = ModelConfig(**d["config"])
        model = cls(cfg)

        def arr(e):
            return np.asarray(e["data"], dtype=np.float64).reshape(e["shape"])

        for name, e in d["params"].items():
            model.set_param(name, arr(e))
        for lvl, e in d["stores"].items():
            store = model.stores[lvl]
            store.vectors = arr(e["vectors"]).reshape(-1, store.dim)
            store.provenance = [tuple(p) if isinstance(p, list) else p for p in e["provenance"]]
            store.frozen = e["frozen"]
        return model

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

@dataclass
class ForwardTrace:
    node: int
    label: int
    x: np.ndarray
    xbar: np.ndarray  # mean feature of the sampled neighborhood
    neighbors: np.ndarray
    selection: AfeSelection
    sel_node: np.ndarray  # selected node-AFE ids, ascending
    sel_struct: np.ndarray  # selected struct-AFE ids, ascending
    embs: np.ndarray  # (k_sel, d_a) selected atomic embeddings
    warm: bool
    a_match: MatchResult | None = None
    n_emb: np.ndarray | None = None
    n_match: MatchResult | None = None
    c_emb: np.ndarray | None = None
    c_match: MatchResult | None = None
    rep: np.ndarray | None = None
    logits: np.ndarray | None = None

    def match_indices(self):
        if self.warm:
            return None
        return (tuple(int(i) for i in self.a_match.index), int(self.n_match.index[0]), int(self.c_match.index[0]))


def forward(model: HpnModel, view: TaskView, v, rng, create=True, warmup=False, task_id=None):
    """Run one node through the hierarchy.

    With ``create`` false the stores are read-only and matching falls back to
    plain argmax when nothing clears the threshold.  With ``warmup`` the raw
    embeddings stand in for prototypes and no store is touched.
    """
    cfg = model.cfg
    g = view.graph
    v = int(v)
    nbrs = sample_neighborhood(view, v, model.sampler, rng)
    x = g.features[v]
    nb_feats = g.features[nbrs]
    xbar = nb_feats.mean(axis=0) if nbrs.size else x.copy()
    embs_all = atomic_embeddings(model.bank, x, nb_feats)
    sel = select_afes(model.bank, embs_all, model.a_store, cfg.l_a_sel, cfg.l_r_sel)
    sel_node = np.sort(sel.node)
    sel_struct = np.sort(sel.struct)
    E = np.concatenate([embs_all.node_embs[sel_node], np.matmul(xbar, model.bank.struct[sel_struct])])
    label = int(view.local_labels[v])
    tid = view.task_id if task_id is None else task_id

    if warmup or (not create and len(model.a_store) == 0):
        a_vec = E.ravel()
        n_emb = a_vec @ model.fc_a2n_W + model.fc_a2n_b
        c_emb = n_emb @ model.fc_n2c_W + model.fc_n2c_b
        rep = np.concatenate([a_vec, n_emb, c_emb])
        logits = rep @ model.cls_W + model.cls_b
        return ForwardTrace(v, label, x, xbar, nbrs, sel, sel_node, sel_struct, E, True,
                            n_emb=n_emb, c_emb=c_emb, rep=rep, logits=logits)

    prov = [(tid, "node", int(i)) for i in sel_node] + [(tid, "struct", int(j)) for j in sel_struct]
    a_match = model.a_store.assign(E, prov, create=create)
    a_vec = model.a_store.vectors[a_match.index].ravel()
    n_emb = a_vec @ model.fc_a2n_W + model.fc_a2n_b
    n_match = model.n_store.assign(n_emb, (tid, "N"), create=create)
    pn = model.n_store.vectors[n_match.index[0]]
    c_emb = pn @ model.fc_n2c_W + model.fc_n2c_b
    c_match = model.c_store.assign(c_emb, (tid, "C"), create=create)
    pc = model.c_store.vectors[c_match.index[0]]
    rep = np.concatenate([a_vec, pn, pc])
    logits = rep @ model.cls_W + model.cls_b
    return ForwardTrace(v, label, x, xbar, nbrs, sel, sel_node, sel_struct, E, False,
                        a_match, n_emb, n_match, c_emb, c_match, rep, logits)


def predict_trace(model: HpnModel, view: TaskView, v):
    """Evaluation forward: no creation, per-node sampling stream."""
    rng = child_rng(model.cfg.seed, 2, int(v))
    return forward(model, view, v, rng, create=False)


def predict(model: HpnModel, view: TaskView, v):
    return int(np.argmax(predict_trace(model, view, v).logits))


def evaluate(model: HpnModel, view: TaskView, split="test"):
    nodes = view.split_nodes(split)
    if nodes.size == 0:
        return float("nan")
    hits = sum(predict(model, view, v) == view.local_labels[v] for v in nodes)
    return hits / nodes.size


# ---------------------------------------------------------------------------
# loss and manual backward
# ---------------------------------------------------------------------------

def _cos_rows(a, b):
    """Row-wise cosine and its gradients; zero wherever either norm is degenerate."""
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    ok = (na >= NORM_EPS) & (nb >= NORM_EPS)
    na_s = np.where(ok, na, 1.0)
    nb_s = np.where(ok, nb, 1.0)
    c = np.where(ok, np.sum(a * b, axis=-1) / (na_s * nb_s), 0.0)
    inv = (1.0 / (na_s * nb_s))[..., None]
    ga = b * inv - c[..., None] * a / (na_s * na_s)[..., None]
    gb = a * inv - c[..., None] * b / (nb_s * nb_s)[..., None]
    ga = np.where(ok[..., None], ga, 0.0)
    gb = np.where(ok[..., None], gb, 0.0)
    return c, ga, gb


def _stack(traces, warm):
    sub = [t for t in traces if t.warm == warm]
    if not sub:
        return None
    out = {
        "X": np.stack([t.x for t in sub]),
        "Xbar": np.stack([t.xbar for t in sub]),
        "SN": np.stack([t.sel_node for t in sub]),
        "SS": np.stack([t.sel_struct for t in sub]),
        "Y": np.array([t.label for t in sub]),
    }
    if not warm:
        out["AI"] = np.stack([t.a_match.index for t in sub])
        out["AOLD"] = np.stack([~t.a_match.was_new for t in sub])
        out["NI"] = np.array([t.n_match.index[0] for t in sub])
        out["NOLD"] = np.array([not t.n_match.was_new[0] for t in sub])
        out["CI"] = np.array([t.c_match.index[0] for t in sub])
        out["COLD"] = np.array([not t.c_match.was_new[0] for t in sub])
    return out


def _selected_embs(model, S):
    b = S["X"].shape[0]
    rows = np.arange(b)[:, None]
    en = np.matmul(S["X"], model.bank.node).transpose(1, 0, 2)[rows, S["SN"]]
    es = np.matmul(S["Xbar"], model.bank.struct).transpose(1, 0, 2)[rows, S["SS"]]
    return np.concatenate([en, es], axis=1)  # (B, K, d)


def _xent(logits, y):
    p = softmax(logits)
    b = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    loss = np.log(np.exp(z).sum(axis=1)) - z[np.arange(b), y]
    g = p.copy()
    g[np.arange(b), y] -= 1.0
    return loss, g


def loss_and_grads(model: HpnModel, traces, with_grads=True, cls_weight=1.0):
    """Total loss over a batch of traces and gradients for every parameter block.

    ``L = mean(L_cls) + alpha * L_div + beta * mean(L_dis_A + L_dis_N + L_dis_C)``.
    The forward quantities are recomputed from the current parameters using
    the discrete decisions stored in the traces.  ``cls_weight`` scales the
    classification term (0 isolates the auxiliary losses).
    """
    cfg = model.cfg
    B = len(traces)
    grads = {name: np.zeros_like(model.param(name)) for name in PARAM_NAMES}
    parts = {"loss_cls": 0.0, "loss_div": 0.0, "loss_dis": 0.0, "correct": 0}
    if B == 0:
        return 0.0, parts, grads
    w_cls = cls_weight / B
    w_dis = cfg.beta / B
    d = cfg.d_a
    K = cfg.k_sel

    div, g_dn, g_ds = divergence_loss(model.bank)
    parts["loss_div"] = div
    grads["afe_node"] += cfg.alpha * g_dn
    grads["afe_struct"] += cfg.alpha * g_ds

    dE_groups = []
    for warm in (True, False):
        S = _stack(traces, warm)
        if S is None:
            continue
        b = S["X"].shape[0]
        E = _selected_embs(model, S)
        if warm:
            a_vec = E.reshape(b, K * d)
            n_emb = a_vec @ model.fc_a2n_W + model.fc_a2n_b
            c_emb = n_emb @ model.fc_n2c_W + model.fc_n2c_b
            rep = np.concatenate([a_vec, n_emb, c_emb], axis=1)
        else:
            PA = model.a_store.vectors[S["AI"]]  # (b, K, d)
            a_vec = PA.reshape(b, K * d)
            n_emb = a_vec @ model.fc_a2n_W + model.fc_a2n_b
            PN = model.n_store.vectors[S["NI"]]
            c_emb = PN @ model.fc_n2c_W + model.fc_n2c_b
            PC = model.c_store.vectors[S["CI"]]
            rep = np.concatenate([a_vec, PN, PC], axis=1)
        logits = rep @ model.cls_W + model.cls_b
        xent, g_logits = _xent(logits, S["Y"])
        parts["loss_cls"] += xent.sum() / B
        parts["correct"] += int(np.sum(np.argmax(logits, axis=1) == S["Y"]))
        if not warm:
            cA, gaA, gpA = _cos_rows(E, PA)
            cN, gaN, gpN = _cos_rows(n_emb, PN)
            cC, gaC, gpC = _cos_rows(c_emb, PC)
            dis = -(np.sum(cA * S["AOLD"]) + np.sum(cN * S["NOLD"]) + np.sum(cC * S["COLD"]))
            parts["loss_dis"] += dis / B
        if not with_grads:
            continue

        G = g_logits * w_cls
        grads["cls.W"] += rep.T @ G
        grads["cls.b"] += G.sum(axis=0)
        drep = G @ model.cls_W.T
        d_avec = drep[:, :K * d].copy()
        d_n = drep[:, K * d:K * d + cfg.d_n].copy()
        d_c = drep[:, K * d + cfg.d_n:].copy()
        if warm:
            # rep = [a_vec, n_emb, c_emb], c_emb = fc_n2c(n_emb), n_emb = fc_a2n(a_vec)
            grads["fc_n2c.W"] += n_emb.T @ d_c
            grads["fc_n2c.b"] += d_c.sum(axis=0)
            d_n += d_c @ model.fc_n2c_W.T
            grads["fc_a2n.W"] += a_vec.T @ d_n
            grads["fc_a2n.b"] += d_n.sum(axis=0)
            d_avec += d_n @ model.fc_a2n_W.T
            dE = d_avec.reshape(b, K, d)
        else:
            dE = -w_dis * gaA * S["AOLD"][..., None]
            dPA = d_avec.reshape(b, K, d) - w_dis * gpA * S["AOLD"][..., None]
            dnemb = -w_dis * gaN * S["NOLD"][:, None]
            dPN = d_n - w_dis * gpN * S["NOLD"][:, None]
            dcemb = -w_dis * gaC * S["COLD"][:, None]
            dPC = d_c - w_dis * gpC * S["COLD"][:, None]
            grads["fc_a2n.W"] += a_vec.T @ dnemb
            grads["fc_a2n.b"] += dnemb.sum(axis=0)
            dPA += (dnemb @ model.fc_a2n_W.T).reshape(b, K, d)
            grads["fc_n2c.W"] += PN.T @ dcemb
            grads["fc_n2c.b"] += dcemb.sum(axis=0)
            dPN += dcemb @ model.fc_n2c_W.T
            np.add.at(grads["proto_A"], S["AI"].ravel(), dPA.reshape(-1, d))
            np.add.at(grads["proto_N"], S["NI"], dPN)
            np.add.at(grads["proto_C"], S["CI"], dPC)
        dE_groups.append((S, dE))

    for S, dE in dE_groups:
        b = S["X"].shape[0]
        rows = np.arange(b)[:, None]
        la_sel = cfg.l_a_sel
        gn = np.zeros((b, cfg.l_a, d))
        gn[rows, S["SN"]] = dE[:, :la_sel]
        gs = np.zeros((b, cfg.l_r, d))
        gs[rows, S["SS"]] = dE[:, la_sel:]
        grads["afe_node"] += (S["X"].T @ gn.reshape(b, -1)).reshape(cfg.d_v, cfg.l_a, d).transpose(1, 0, 2)
        grads["afe_struct"] += (S["Xbar"].T @ gs.reshape(b, -1)).reshape(cfg.d_v, cfg.l_r, d).transpose(1, 0, 2)

    total = cls_weight * parts["loss_cls"] + cfg.alpha * parts["loss_div"] + cfg.beta * parts["loss_dis"]
    return total, parts, grads


def total_loss(model: HpnModel, traces, cls_weight=1.0):
    return loss_and_grads(model, traces, with_grads=False, cls_weight=cls_weight)[0]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def count_parameters(model: HpnModel):
    cfg = model.cfg
    out = {
        "afe_node": model.bank.node.size,
        "afe_struct": model.bank.struct.size,
        "fc_a2n": model.fc_a2n_W.size + model.fc_a2n_b.size,
        "fc_n2c": model.fc_n2c_W.size + model.fc_n2c_b.size,
        "classifier": model.cls_W.size + model.cls_b.size,
        "proto_A": len(model.a_store) * cfg.d_a,
        "proto_N": len(model.n_store) * cfg.d_n,
        "proto_C": len(model.c_store) * cfg.d_c,
    }
    out["total"] = int(sum(out.values()))
    return {k: int(v) for k, v in out.items()}


PARAM_LIMIT = 1e12


def _clip(grads, cap):
    out = {}
    for k, g in grads.items():
        n = float(np.sqrt(np.sum(g * g)))
        out[k] = g * (cap / n) if n > cap else g
    return out


def _check_params(model, epoch):
    for name in PARAM_NAMES:
        p = model.param(name)
        if p.size and not np.max(np.abs(p)) < PARAM_LIMIT:  # also catches NaN
            raise TrainingDiverged(f"{name} left the finite range at epoch {epoch}")


def _apply_step(model, grads, lrs, tcfg: TrainConfig, stage_frozen, old_counts):
    afe_lr, proto_lr, other_lr = lrs
    if tcfg.grad_clip > 0:
        grads = _clip(grads, tcfg.grad_clip)
    if not stage_frozen["shared"]:
        model.bank.node -= afe_lr * grads["afe_node"]
        model.bank.struct -= afe_lr * grads["afe_struct"]
        model.fc_a2n_W -= other_lr * grads["fc_a2n.W"]
        model.fc_a2n_b -= other_lr * grads["fc_a2n.b"]
        model.fc_n2c_W -= other_lr * grads["fc_n2c.W"]
        model.fc_n2c_b -= other_lr * grads["fc_n2c.b"]
    model.cls_W -= other_lr * grads["cls.W"]
    model.cls_b -= other_lr * grads["cls.b"]
    for lvl, store in model.stores.items():
        if store.frozen or len(store) == 0 or not tcfg.refine_prototypes:
            continue
        g = grads[f"proto_{lvl}"]
        start = old_counts[lvl] if tcfg.freeze_old_prototypes else 0
        store.vectors[start:] -= proto_lr * g[start:]
        store.renormalize()


def train_epochs(model: HpnModel, views, tcfg: TrainConfig, rng, *, stage=0, log=None, task_label=None):
    """Train over one or more task views (several views = interleaved joint mode).

    ``stage`` counts earlier training stages (tasks) of this model; freezing
    options only take effect from stage 1 on.
    """
    bad = tcfg.problems()
    if bad:
        raise ValueError("; ".join(bad))
    views = list(views)
    later = stage > 0
    if later and tcfg.freeze_prototypes:
        model.freeze_stores(True)
    stage_frozen = {"shared": later and tcfg.freeze_shared}
    old_counts = {lvl: len(s) for lvl, s in model.stores.items()}
    do_warmup = tcfg.warmup_scope == "every" or len(model.a_store) == 0
    log = log if log is not None else []
    train_nodes = [view.split_nodes("train") for view in views]

    for epoch in range(tcfg.epochs):
        warm = do_warmup and epoch < tcfg.warmup_epochs
        e = epoch + (stage * tcfg.epochs if tcfg.schedule_scope == "run" else 0)
        lrs = (lr_at(tcfg.afe_lr, e), lr_at(tcfg.proto_lr, e), lr_at(tcfg.other_lr, e))
        sums = {"loss_cls": 0.0, "loss_div": 0.0, "loss_dis": 0.0, "correct": 0, "n": 0}
        for view, nodes in zip(views, train_nodes):
            order = nodes[rng.permutation(nodes.size)]
            bs = tcfg.batch_size or max(order.size, 1)
            for start in range(0, order.size, bs):
                batch = order[start:start + bs]
                traces = [forward(model, view, v, rng, create=not warm, warmup=warm) for v in batch]
                total, parts, grads = loss_and_grads(model, traces)
                if not np.isfinite(total):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} (cls={parts['loss_cls']}, "
                        f"div={parts['loss_div']}, dis={parts['loss_dis']})")
                _apply_step(model, grads, lrs, tcfg, stage_frozen, old_counts)
                _check_params(model, epoch)
                for k in ("loss_cls", "loss_dis"):
                    sums[k] += parts[k] * len(batch)
                sums["loss_div"] = parts["loss_div"]
                sums["correct"] += parts["correct"]
                sums["n"] += len(batch)
        n = max(sums["n"], 1)
        log.append({
            "task": task_label if task_label is not None else views[0].task_id,
            "epoch": epoch,
            "loss_cls": sums["loss_cls"] / n,
            "loss_div": sums["loss_div"],
            "loss_dis": sums["loss_dis"] / n,
            "train_acc": sums["correct"] / n,
            "warmup": bool(warm),
            "n_proto_a": len(model.a_store),
            "n_proto_n": len(model.n_store),
            "n_proto_c": len(model.c_store),
            "params_total": count_parameters(model)["total"],
        })
    return log


def train_task(model: HpnModel, view: TaskView, tcfg: TrainConfig, rng, *, stage=0, log=None):
    return train_epochs(model, [view], tcfg, rng, stage=stage, log=log)
