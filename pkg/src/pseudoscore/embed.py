"""node2vec: second-order biased random walks and skip-gram with negative sampling."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numba
import numpy as np

from .network import USER, CSRGraph
from .scoring.matrix import FeatureMatrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Node2VecConfig:
    dimensions: int = 64
    walks_per_node: int = 10
    walk_length: int = 80
    context_window: int = 10
    p: float = 1.0
    q: float = 1.0
    negative_samples: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    seed: int = 0

    def __post_init__(self):
        for name in ("dimensions", "walks_per_node", "walk_length", "context_window",
                     "negative_samples", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.p <= 0 or self.q <= 0 or self.learning_rate <= 0:
            raise ValueError("p, q and learning_rate must be positive")
        if self.context_window >= self.walk_length:
            raise ValueError("context_window must be shorter than walk_length")


@dataclass
class Embedding:
    nodes: tuple
    matrix: np.ndarray
    loss_history: list = field(default_factory=list)

    @property
    def vectors(self) -> dict:
        return {v: self.matrix[i] for i, v in enumerate(self.nodes)}

    def __getitem__(self, node) -> np.ndarray:
        return self.matrix[self.nodes.index(node)]

    def to_text(self, path: str | os.PathLike) -> None:
        """One line per node: id followed by its vector."""
        with open(path, "w", encoding="utf-8") as fh:
            for v, row in zip(self.nodes, self.matrix):
                key = ":".join(map(str, v)) if isinstance(v, tuple) else str(v)
                fh.write(key + " " + " ".join(repr(float(x)) for x in row) + "\n")


# --
# Walks


def walk_transition_probs(g: CSRGraph, prev, curr, cfg: Node2VecConfig) -> dict:
    """Next-step distribution of the walk standing at ``curr`` having come from ``prev``.

    Each neighbour x gets ``w(curr, x)`` times 1/p if x is ``prev``, 1 if x
    neighbours ``prev``, 1/q otherwise. ``prev=None`` gives the plain
    weight-proportional first step.
    """
    nbrs = g.neighbors(curr)
    if not nbrs:
        return {}
    if prev is None:
        raw = dict(nbrs)
    else:
        prev_nbrs = g.neighbors(prev)
        raw = {}
        for x, w in nbrs.items():
            if x == prev:
                raw[x] = w / cfg.p
            elif x in prev_nbrs:
                raw[x] = w
            else:
                raw[x] = w / cfg.q
    z = math.fsum(raw.values())
    return {x: w / z for x, w in raw.items()}


@numba.njit(cache=True)
def _is_neighbor(indptr, indices, u, x):
    lo, hi = indptr[u], indptr[u + 1]
    while lo < hi:
        mid = (lo + hi) // 2
        if indices[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo < indptr[u + 1] and indices[lo] == x


@numba.njit(cache=True)
def _walks(indptr, indices, weights, walks_per_node, walk_length, inv_p, inv_q, seed):
    np.random.seed(seed)
    n = len(indptr) - 1
    out = np.full((walks_per_node * n, walk_length), -1, dtype=np.int64)
    probs = np.empty(max(1, np.max(np.diff(indptr)) if n > 0 else 1))
    biased = inv_p != 1.0 or inv_q != 1.0
    row = 0
    for _ in range(walks_per_node):
        order = np.random.permutation(n)
        for start in order:
            out[row, 0] = start
            prev = -1
            cur = start
            for step in range(1, walk_length):
                lo, hi = indptr[cur], indptr[cur + 1]
                if lo == hi:
                    break
                total = 0.0
                for k in range(lo, hi):
                    x = indices[k]
                    w = weights[k]
                    if biased and prev >= 0:
                        if x == prev:
                            w *= inv_p
                        elif not _is_neighbor(indptr, indices, prev, x):
                            w *= inv_q
                    total += w
                    probs[k - lo] = total
                u = np.random.random() * total
                k = 0
                while k < hi - lo - 1 and probs[k] <= u:
                    k += 1
                nxt = indices[lo + k]
                out[row, step] = nxt
                prev = cur
                cur = nxt
            row += 1
    return out


def _walk_array(g: CSRGraph, cfg: Node2VecConfig) -> np.ndarray:
    return _walks(g.indptr, g.indices, g.weights, cfg.walks_per_node, cfg.walk_length,
                  1.0 / cfg.p, 1.0 / cfg.q, cfg.seed)


def generate_walks(g: CSRGraph, cfg: Node2VecConfig) -> list[list]:
    """``walks_per_node`` walks from every node, truncated at dead ends.

    Start nodes are visited in a fresh seeded shuffle each round.
    """
    arr = _walk_array(g, cfg)
    return [[g.nodes[i] for i in row[row >= 0]] for row in arr]


# --
# Skip-gram with negative sampling


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sgns_pair_loss(center: np.ndarray, context: np.ndarray, negatives: np.ndarray):
    """Loss of one (center, context) pair with its negative samples, and its gradients.

    ``center`` is the input vector of the center node, ``context`` and the
    rows of ``negatives`` are output vectors. Returns
    ``(loss, d_center, d_context, d_negatives)``.
    """
    s_pos = center @ context
    s_neg = negatives @ center
    loss = np.logaddexp(0.0, -s_pos) + np.logaddexp(0.0, s_neg).sum()
    g_pos = _sigmoid(s_pos) - 1.0
    g_neg = _sigmoid(s_neg)
    d_center = g_pos * context + g_neg @ negatives
    d_context = g_pos * center
    d_negatives = np.outer(g_neg, center)
    return float(loss), d_center, d_context, d_negatives


@numba.njit(cache=True)
def _sgd_pair(w_in, w_out, c, o, negs, lr, grad):
    # one SGD step on the pair loss; returns the loss before the step
    d = w_in.shape[1]
    grad[:] = 0.0
    loss = 0.0
    for t in range(len(negs) + 1):
        target = o if t == 0 else negs[t - 1]
        label = 1.0 if t == 0 else 0.0
        s = 0.0
        for j in range(d):
            s += w_in[c, j] * w_out[target, j]
        if label == 1.0:
            loss += math.log1p(math.exp(-s)) if s > -30 else -s
        else:
            loss += math.log1p(math.exp(s)) if s < 30 else s
        g = 1.0 / (1.0 + math.exp(-s)) - label
        for j in range(d):
            grad[j] += g * w_out[target, j]
            w_out[target, j] -= lr * g * w_in[c, j]
    for j in range(d):
        w_in[c, j] -= lr * grad[j]
    return loss


@numba.njit(cache=True)
def _train(walks, n_nodes, w_in, w_out, cum, window, negative, epochs, lr0, seed):
    np.random.seed(seed)
    n_walks, length = walks.shape
    d = w_in.shape[1]
    grad = np.empty(d)
    negs = np.empty(negative, dtype=np.int64)
    total = float(epochs * n_walks)
    losses = np.zeros(epochs)
    done = 0.0
    for ep in range(epochs):
        ep_loss = 0.0
        ep_pairs = 0
        for r in np.random.permutation(n_walks):
            lr = max(lr0 * (1.0 - done / total), lr0 * 1e-4)
            done += 1.0
            for i in range(length):
                c = walks[r, i]
                if c < 0:
                    break
                lo = max(0, i - window)
                hi = min(length, i + window + 1)
                for j in range(lo, hi):
                    if j == i:
                        continue
                    o = walks[r, j]
                    if o < 0:
                        break
                    for t in range(negative):
                        x = np.searchsorted(cum, np.random.random() * cum[-1], side="right")
                        if x >= n_nodes:
                            x = n_nodes - 1
                        negs[t] = x
                    # negatives that hit the positive are dropped
                    m = 0
                    for t in range(negative):
                        if negs[t] != o:
                            negs[m] = negs[t]
                            m += 1
                    ep_loss += _sgd_pair(w_in, w_out, c, o, negs[:m], lr, grad)
                    ep_pairs += 1
        losses[ep] = ep_loss / max(ep_pairs, 1)
    return losses


def train_skipgram(walks, cfg: Node2VecConfig, nodes=None) -> Embedding:
    """Skip-gram with negative sampling over every (center, context) pair in the window.

    ``walks`` is either a list of node-id sequences or an int array of node
    indices padded with -1 (then ``nodes`` names the indices). Negatives are
    drawn from the unigram distribution raised to 3/4. The learning rate
    decays linearly over the run.
    """
    if isinstance(walks, np.ndarray):
        arr = walks
        if nodes is None:
            nodes = tuple(range(int(arr.max()) + 1))
    else:
        if not walks:
            raise ValueError("empty walk corpus")
        if nodes is None:
            nodes = tuple(dict.fromkeys(v for w in walks for v in w))
        pos = {v: i for i, v in enumerate(nodes)}
        arr = np.full((len(walks), max(map(len, walks))), -1, dtype=np.int64)
        for r, w in enumerate(walks):
            arr[r, : len(w)] = [pos[v] for v in w]
    nodes = tuple(nodes)
    n = len(nodes)
    rng = np.random.default_rng(cfg.seed)
    w_in = (rng.random((n, cfg.dimensions)) - 0.5) / cfg.dimensions
    w_out = np.zeros((n, cfg.dimensions))
    counts = np.bincount(arr[arr >= 0], minlength=n).astype(float)
    if (counts > 0).sum() < 2:
        log.warning("degenerate walk corpus (%d distinct nodes); returning initial vectors", int((counts > 0).sum()))
        return Embedding(nodes, w_in, [])
    cum = np.cumsum(counts ** 0.75)
    losses = _train(arr, n, w_in, w_out, cum, cfg.context_window, cfg.negative_samples,
                    cfg.epochs, cfg.learning_rate, cfg.seed)
    return Embedding(nodes, w_in, losses.tolist())


def embed(g: CSRGraph, cfg: Node2VecConfig) -> Embedding:
    """Walks plus skip-gram on ``g``."""
    walks = _walk_array(g, cfg)
    return train_skipgram(walks, cfg, nodes=g.nodes)


def embedding_features(emb: Embedding, prefix: str = "n2v") -> FeatureMatrix:
    """Embedding columns for the user rows.

    On the combined bipartite graph only ``("user", id)`` nodes are exported,
    keyed by the bare user id.
    """
    keys = list(emb.nodes)
    if keys and isinstance(keys[0], tuple):
        rows = [i for i, k in enumerate(keys) if k[0] == USER]
        ids = [keys[i][1] for i in rows]
    else:
        rows = list(range(len(keys)))
        ids = keys
    m = emb.matrix[rows]
    names = [f"{prefix}_{j}" for j in range(m.shape[1])]
    return FeatureMatrix(ids, names, ("embedding",) * len(names), m)
