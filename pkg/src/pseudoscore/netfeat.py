"""Neighbourhood, centrality and influence features of the labeled user network."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numba
import numpy as np

from .data import AppUsage, Label
from .network import APP, USER, BipartiteNetwork, CSRGraph, LabeledNetwork
from .scoring.matrix import FeatureMatrix

log = logging.getLogger(__name__)


class PageRankConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int, scores: dict):
        super().__init__(
            f"personalized PageRank did not converge in {iterations} iterations "
            f"(final L1 residual {residual:.3e})"
        )
        self.residual = residual
        self.iterations = iterations
        self.scores = scores


@dataclass(frozen=True)
class EgonetFeatures:
    degree: int
    good_degree: int
    bad_degree: int
    triangle_count: int
    transitivity: float
    relational_neighbor: float  # nan when no labeled neighbour


@dataclass(frozen=True)
class PageRankConfig:
    """Damping factor ``alpha`` and restart distribution of personalized PageRank."""

    restart: Mapping
    alpha: float = 0.85
    tolerance: float = 1e-9
    max_iterations: int = 200

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie strictly inside (0, 1)")
        if self.tolerance <= 0 or self.max_iterations < 1:
            raise ValueError("tolerance and max_iterations must be positive")
        vals = np.fromiter(self.restart.values(), dtype=float)
        if vals.size == 0 or (vals < 0).any():
            raise ValueError("restart vector must be nonempty and nonnegative")
        if abs(math.fsum(vals) - 1.0) > 1e-12:
            raise ValueError(f"restart vector sums to {math.fsum(vals)!r}, not 1")


@dataclass
class PageRankScores:
    scores: dict
    iterations: int = 0
    residual: float = 0.0

    def __getitem__(self, node):
        return self.scores[node]


# --
# Neighbourhood


def egonet_features(g: LabeledNetwork, u) -> EgonetFeatures:
    net = g.network
    nbrs = net.neighbors(u)
    deg = len(nbrs)
    good = sum(1 for v in nbrs if g.labels[v] is Label.GOOD)
    bad = sum(1 for v in nbrs if g.labels[v] is Label.BAD)
    nb_idx = set(net.index[v] for v in nbrs)
    links = 0
    for v in nbrs:
        i = net.index[v]
        links += sum(1 for j in net.indices[net.indptr[i]:net.indptr[i + 1]] if j in nb_idx)
    tri = links // 2
    trans = 2.0 * tri / (deg * (deg - 1)) if deg >= 2 else 0.0
    w_bad = sum(w for v, w in nbrs.items() if g.labels[v] is Label.BAD)
    w_lab = sum(w for v, w in nbrs.items() if g.labels[v] is not Label.UNLABELED)
    rn = w_bad / w_lab if w_lab > 0 else math.nan
    return EgonetFeatures(deg, good, bad, tri, trans, rn)


@numba.njit(cache=True)
def _triangles(indptr, indices):
    n = len(indptr) - 1
    out = np.zeros(n, dtype=np.int64)
    for u in range(n):
        total = 0
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            # |N(u) ∩ N(v)| by sorted merge
            a, a_end = indptr[u], indptr[u + 1]
            b, b_end = indptr[v], indptr[v + 1]
            while a < a_end and b < b_end:
                x, y = indices[a], indices[b]
                if x == y:
                    total += 1
                    a += 1
                    b += 1
                elif x < y:
                    a += 1
                else:
                    b += 1
        out[u] = total // 2
    return out


def neighborhood_features(g: LabeledNetwork) -> FeatureMatrix:
    """Egonet features for every node, vectorised over the CSR arrays."""
    net = g.network
    n = len(net)
    code = np.array([_LABEL_CODE[g.labels[v]] for v in net.nodes], dtype=np.int8)
    deg = np.diff(net.indptr)
    row = np.repeat(np.arange(n), deg)
    nb_code = code[net.indices]
    good = np.bincount(row, weights=(nb_code == 0), minlength=n)
    bad = np.bincount(row, weights=(nb_code == 1), minlength=n)
    w_bad = np.bincount(row, weights=net.weights * (nb_code == 1), minlength=n)
    w_lab = np.bincount(row, weights=net.weights * (nb_code >= 0), minlength=n)
    tri = _triangles(net.indptr, net.indices).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        trans = np.where(deg >= 2, 2.0 * tri / (deg * (deg - 1.0)), 0.0)
        rn = np.where(w_lab > 0, w_bad / w_lab, np.nan)
    return FeatureMatrix.from_columns(
        net.nodes,
        "neighborhood",
        {
            "degree": deg,
            "good_degree": good,
            "bad_degree": bad,
            "triangles": tri,
            "transitivity": trans,
            "relational_neighbor": rn,
            "has_labeled_neighbor": (w_lab > 0).astype(float),
        },
    )


_LABEL_CODE = {Label.GOOD: 0, Label.BAD: 1, Label.UNLABELED: -1}


# --
# Centrality


def closeness(g: CSRGraph, u) -> tuple[float, int]:
    """Mean hop distance from ``u`` to the nodes it reaches, and how many it reaches."""
    src = g._idx(u)
    dist = {src: 0}
    queue = deque([src])
    while queue:
        i = queue.popleft()
        for j in g.indices[g.indptr[i]:g.indptr[i + 1]]:
            if j not in dist:
                dist[j] = dist[i] + 1
                queue.append(j)
    reach = len(dist) - 1
    if reach == 0:
        return math.nan, 0
    return sum(dist.values()) / reach, reach


@numba.njit(cache=True)
def _brandes(indptr, indices):
    n = len(indptr) - 1
    bc = np.zeros(n)
    dist_sum = np.zeros(n)
    reach = np.zeros(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.int64)
    sigma = np.empty(n)
    delta = np.empty(n)
    order = np.empty(n, dtype=np.int64)
    for s in range(n):
        dist[:] = -1
        sigma[:] = 0.0
        delta[:] = 0.0
        dist[s] = 0
        sigma[s] = 1.0
        order[0] = s
        head, tail = 0, 1
        while head < tail:
            v = order[head]
            head += 1
            for k in range(indptr[v], indptr[v + 1]):
                w = indices[k]
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    order[tail] = w
                    tail += 1
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
        total = 0
        for k in range(1, tail):
            total += dist[order[k]]
        dist_sum[s] = total
        reach[s] = tail - 1
        for idx in range(tail - 1, 0, -1):
            w = order[idx]
            coeff = (1.0 + delta[w]) / sigma[w]
            for k in range(indptr[w], indptr[w + 1]):
                v = indices[k]
                if dist[v] == dist[w] - 1:
                    delta[v] += sigma[v] * coeff
            bc[w] += delta[w]
    return bc / 2.0, dist_sum, reach


def betweenness(g: CSRGraph) -> dict:
    """Unweighted shortest-path betweenness, each unordered pair counted once."""
    bc, _, _ = _brandes(g.indptr, g.indices)
    return dict(zip(g.nodes, bc.tolist()))


def centrality_features(g: CSRGraph) -> FeatureMatrix:
    """Closeness (mean hop distance, reach count) and betweenness for all nodes."""
    bc, dsum, reach = _brandes(g.indptr, g.indices)
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = np.where(reach > 0, dsum / np.maximum(reach, 1), np.nan)
    return FeatureMatrix.from_columns(
        g.nodes,
        "centrality",
        {"closeness_avg_distance": avg, "closeness_reach": reach, "betweenness": bc},
    )


# --
# Personalized PageRank


def personalized_pagerank(g: CSRGraph, cfg: PageRankConfig) -> PageRankScores:
    """Iterate ``r <- alpha * P r + (1 - alpha) * e`` to its fixed point.

    ``P`` is the column-stochastic transition operator of the weighted
    adjacency (each column divided by the node's weighted degree). Mass
    sitting on degree-0 nodes is sent back along the restart vector.
    """
    n = len(g)
    e = np.zeros(n)
    for node, mass in cfg.restart.items():
        e[g._idx(node)] = mass
    A = g.adjacency_matrix()
    strength = np.asarray(A.sum(axis=0)).ravel()
    dangling = strength == 0
    inv = np.zeros(n)
    inv[~dangling] = 1.0 / strength[~dangling]
    alpha = cfg.alpha
    r = e.copy()
    residual = math.inf
    for it in range(1, cfg.max_iterations + 1):
        nxt = alpha * (A @ (r * inv)) + (alpha * r[dangling].sum() + (1.0 - alpha)) * e
        residual = float(np.abs(nxt - r).sum())
        r = nxt
        if residual < cfg.tolerance:
            return PageRankScores(dict(zip(g.nodes, r.tolist())), it, residual)
    raise PageRankConvergenceError(residual, cfg.max_iterations, dict(zip(g.nodes, r.tolist())))


def restart_from_bad_users(g: LabeledNetwork, exclude: Iterable = ()) -> dict:
    """Uniform restart mass over the Bad nodes (minus ``exclude``)."""
    skip = set(exclude)
    bad = [v for v in g.bad_nodes() if v not in skip]
    if not bad:
        raise ValueError("restart vector needs at least one Bad node")
    return {v: 1.0 / len(bad) for v in bad}


def restart_from_app_rfm(
    nb: BipartiteNetwork, usage: Iterable[AppUsage], half_life: float = 30.0
) -> dict:
    """Restart mass on app nodes of the bipartite graph from app frequency and recency.

    An app's weight is its share of total weekly uses over the linked users,
    damped by ``exp(-mean_days_since_last_use / half_life)``. User nodes get
    zero mass. Keys are the combined-graph node keys ``("app", app_id)``.
    """
    freq: dict = {}
    rec: dict = {}
    for r in usage:
        if (r.user_id, r.app_id) in nb.edges:
            freq[r.app_id] = freq.get(r.app_id, 0.0) + r.uses_per_week
            rec.setdefault(r.app_id, []).append(r.days_since_last_use)
    total = sum(freq.values())
    if total <= 0:
        raise ValueError("all app weights are zero")
    raw = {a: (f / total) * math.exp(-float(np.mean(rec[a])) / half_life) for a, f in freq.items()}
    z = math.fsum(raw.values())
    if z <= 0:
        raise ValueError("all app weights are zero")
    restart = {(USER, u): 0.0 for u in nb.users}
    restart.update({(APP, a): 0.0 for a in nb.apps})
    for a, w in raw.items():
        restart[(APP, a)] = w / z
    return restart


def influence_features(
    g: LabeledNetwork,
    nb: BipartiteNetwork | None = None,
    usage: Iterable[AppUsage] | None = None,
    alpha: float = 0.85,
    tolerance: float = 1e-9,
    max_iterations: int = 200,
    half_life: float = 30.0,
    crossfit_folds: int = 5,
    seed: int = 0,
) -> FeatureMatrix:
    """Influence scores per user.

    ``ppr_bad`` propagates from the Bad users. A user's own label must not
    feed its score, so users are split into ``crossfit_folds`` groups and
    each group is scored by a run whose restart set leaves that group out.
    ``crossfit_folds <= 1`` runs once from every Bad user instead.
    ``ppr_app_rfm`` runs on the bipartite graph from app frequency/recency
    and keeps the user side.
    """
    net = g.network
    nodes = net.nodes
    cols = {}
    rng = np.random.default_rng(seed)
    folds = max(int(crossfit_folds), 1)
    fold = rng.integers(0, folds, size=len(nodes))
    ppr = np.zeros(len(nodes))
    for k in range(folds):
        members = np.flatnonzero(fold == k)
        if members.size == 0:
            continue
        held = {nodes[i] for i in members} if folds > 1 else set()
        try:
            restart = restart_from_bad_users(g, exclude=held)
        except ValueError:
            log.warning("no Bad user outside fold %d; its ppr_bad scores stay 0", k)
            continue
        res = personalized_pagerank(net, PageRankConfig(restart, alpha, tolerance, max_iterations))
        r = np.fromiter((res.scores[v] for v in nodes), dtype=float, count=len(nodes))
        ppr[members] = r[members]
    # scale-free: scores sum to 1 over n nodes
    cols["ppr_bad"] = ppr * len(nodes)
    if nb is not None and usage is not None:
        bg = nb.as_graph()
        res = personalized_pagerank(
            bg, PageRankConfig(restart_from_app_rfm(nb, usage, half_life), alpha, tolerance, max_iterations)
        )
        cols["ppr_app_rfm"] = np.array([res.scores.get((USER, v), np.nan) for v in nodes]) * len(bg)
    return FeatureMatrix.from_columns(nodes, "influence", cols)
