"""Bipartite user-app network, its one-mode projection and label attachment."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

from .data import AppUsage, Label

log = logging.getLogger(__name__)

USER = "user"
APP = "app"


class CSRGraph:
    """Undirected weighted graph stored as sorted neighbour lists.

    Shared base of the projected user network and the combined view of the
    bipartite network; every downstream algorithm iterates neighbours off
    ``indptr``/``indices``/``weights``.
    """

    def __init__(self, nodes: Iterable, edges: Mapping[tuple, float]):
        self.nodes = tuple(nodes)
        self.index = {v: i for i, v in enumerate(self.nodes)}
        if len(self.index) != len(self.nodes):
            raise ValueError("duplicate node ids")
        n = len(self.nodes)
        rows, cols, vals = [], [], []
        for (u, v), w in edges.items():
            if u == v:
                raise ValueError(f"self-loop on {u!r}")
            if w <= 0:
                raise ValueError(f"non-positive weight on ({u!r}, {v!r})")
            i, j = self.index[u], self.index[v]
            rows += [i, j]
            cols += [j, i]
            vals += [w, w]
        m = sp.csr_matrix(
            (np.asarray(vals, dtype=float), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
            shape=(n, n),
        )
        m.sum_duplicates()
        m.sort_indices()
        self._set_csr(m)

    def _set_csr(self, m: sp.csr_matrix) -> None:
        self.indptr = m.indptr.astype(np.int64)
        self.indices = m.indices.astype(np.int64)
        self.weights = m.data.astype(float)

    @classmethod
    def _from_csr(cls, nodes, m: sp.csr_matrix):
        g = cls.__new__(cls)
        g.nodes = tuple(nodes)
        g.index = {v: i for i, v in enumerate(g.nodes)}
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.sort_indices()
        g._set_csr(m)
        return g

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node) -> bool:
        return node in self.index

    @property
    def n_edges(self) -> int:
        return len(self.indices) // 2

    def _idx(self, node) -> int:
        try:
            return self.index[node]
        except KeyError:
            raise KeyError(f"unknown node {node!r}") from None

    def neighbors(self, node) -> dict:
        i = self._idx(node)
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return {self.nodes[j]: float(w) for j, w in zip(self.indices[lo:hi], self.weights[lo:hi])}

    def degree(self, node) -> int:
        i = self._idx(node)
        return int(self.indptr[i + 1] - self.indptr[i])

    def weight(self, u, v) -> float:
        """Edge weight, 0.0 when the nodes are not adjacent."""
        i, j = self._idx(u), self._idx(v)
        lo, hi = self.indptr[i], self.indptr[i + 1]
        k = lo + np.searchsorted(self.indices[lo:hi], j)
        if k < hi and self.indices[k] == j:
            return float(self.weights[k])
        return 0.0

    def edges(self):
        """Yield each undirected edge once as ``(u, v, weight)`` with index(u) < index(v)."""
        for i in range(len(self.nodes)):
            for k in range(self.indptr[i], self.indptr[i + 1]):
                j = self.indices[k]
                if i < j:
                    yield self.nodes[i], self.nodes[j], float(self.weights[k])

    def adjacency_matrix(self) -> sp.csr_matrix:
        n = len(self.nodes)
        return sp.csr_matrix((self.weights, self.indices, self.indptr), shape=(n, n))

    @property
    def density(self) -> float:
        n = len(self.nodes)
        return 0.0 if n < 2 else 2.0 * self.n_edges / (n * (n - 1))


class UnipartiteNetwork(CSRGraph):
    """Weighted user-user pseudo-social network."""


@dataclass
class BipartiteNetwork:
    """Users linked to the apps they use frequently.

    ``edges`` maps ``(user_id, app_id)`` to a positive weight. The combined
    graph view keys nodes as ``("user", id)`` / ``("app", id)`` so user and
    app ids never collide.
    """

    users: tuple
    apps: tuple
    edges: dict = field(default_factory=dict)
    _graph: CSRGraph | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        us, ap = set(self.users), set(self.apps)
        for (u, a), w in self.edges.items():
            if u not in us or a not in ap:
                raise ValueError(f"edge ({u!r}, {a!r}) does not join a user and an app")
            if w <= 0:
                raise ValueError("bipartite weights must be positive")

    def user_apps(self, user) -> dict:
        return {a: w for (u, a), w in self.edges.items() if u == user}

    def as_graph(self) -> CSRGraph:
        """Combined undirected graph over user and app nodes."""
        if self._graph is None:
            nodes = [(USER, u) for u in self.users] + [(APP, a) for a in self.apps]
            self._graph = CSRGraph(
                nodes, {((USER, u), (APP, a)): w for (u, a), w in self.edges.items()}
            )
        return self._graph

    def incidence(self) -> sp.csr_matrix:
        """Users x apps weight matrix."""
        ui = {u: i for i, u in enumerate(self.users)}
        ai = {a: i for i, a in enumerate(self.apps)}
        if not self.edges:
            return sp.csr_matrix((len(self.users), len(self.apps)))
        keys = list(self.edges)
        r = np.fromiter((ui[u] for u, _ in keys), dtype=np.int64, count=len(keys))
        c = np.fromiter((ai[a] for _, a in keys), dtype=np.int64, count=len(keys))
        w = np.fromiter(self.edges.values(), dtype=float, count=len(keys))
        return sp.csr_matrix((w, (r, c)), shape=(len(self.users), len(self.apps)))


@dataclass
class LabeledNetwork:
    network: UnipartiteNetwork
    labels: dict
    ignored_labels: int = 0

    def label(self, node) -> Label:
        return self.labels[node]

    def bad_nodes(self) -> list:
        return [v for v in self.network.nodes if self.labels[v] is Label.BAD]


def build_bipartite(
    usage: Iterable[AppUsage],
    frequency_threshold: float = 1.0,
    weighted: bool = False,
    users: Iterable[str] | None = None,
) -> BipartiteNetwork:
    """Link each user to every app used at least ``frequency_threshold`` times a week.

    Every user and app seen in ``usage`` (plus any extra ``users``) is a
    node, linked or not. With ``weighted`` the edge carries uses per week,
    otherwise 1.0.
    """
    if frequency_threshold < 0:
        raise ValueError("frequency_threshold must be nonnegative")
    user_set = set(users or ())
    app_set = set()
    edges = {}
    for rec in usage:
        user_set.add(rec.user_id)
        app_set.add(rec.app_id)
        if rec.uses_per_week >= frequency_threshold and (not weighted or rec.uses_per_week > 0):
            edges[(rec.user_id, rec.app_id)] = rec.uses_per_week if weighted else 1.0
    return BipartiteNetwork(tuple(sorted(user_set)), tuple(sorted(app_set)), edges)


def project_to_unipartite(
    nb: BipartiteNetwork,
    weight_rule: str = "shared_count",
    max_app_fraction: float | None = None,
) -> UnipartiteNetwork:
    """One-mode projection onto users.

    ``shared_count`` weighs a pair by the number of apps both use;
    ``min_intensity`` by the sum over shared apps of the smaller of the two
    edge weights. Apps linked to more than ``max_app_fraction`` of all users
    are skipped when that guard is set.
    """
    if weight_rule not in ("shared_count", "min_intensity"):
        raise ValueError(f"unknown weight rule {weight_rule!r}")
    n_users = len(nb.users)
    inc = nb.incidence().tocsc()
    rows, cols, vals = [], [], []
    skipped = 0
    for a in range(inc.shape[1]):
        lo, hi = inc.indptr[a], inc.indptr[a + 1]
        k = hi - lo
        if k < 2:
            continue
        if max_app_fraction is not None and k > max_app_fraction * n_users:
            skipped += 1
            continue
        members = inc.indices[lo:hi]
        w = inc.data[lo:hi]
        i, j = np.triu_indices(k, 1)
        rows.append(members[i])
        cols.append(members[j])
        vals.append(np.ones(len(i)) if weight_rule == "shared_count" else np.minimum(w[i], w[j]))
    if skipped:
        log.info("projection skipped %d ubiquitous apps", skipped)
    if rows:
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        upper = sp.coo_matrix((v, (r, c)), shape=(n_users, n_users)).tocsr()
        upper.sum_duplicates()
        m = upper + upper.T
    else:
        m = sp.csr_matrix((n_users, n_users))
    return UnipartiteNetwork._from_csr(nb.users, m)


def attach_labels(nu: UnipartiteNetwork, labels: Mapping) -> LabeledNetwork:
    """Label every node; nodes missing from ``labels`` become Unlabeled."""
    full = {v: labels.get(v, Label.UNLABELED) for v in nu.nodes}
    extra = sum(1 for k in labels if k not in nu.index)
    if extra:
        log.warning("%d labels refer to users outside the network; ignored", extra)
    return LabeledNetwork(nu, full, extra)


# --
# Edge-list dump/restore: "u<TAB>v<TAB>weight" per edge, a lone id per
# isolated node.


def write_edgelist(g: CSRGraph, path: str | os.PathLike) -> None:
    deg = np.diff(g.indptr)
    with open(path, "w", encoding="utf-8") as fh:
        for u, v, w in g.edges():
            fh.write(f"{_node_str(u)}\t{_node_str(v)}\t{w!r}\n")
        for i in np.flatnonzero(deg == 0):
            fh.write(f"{_node_str(g.nodes[i])}\n")


def read_edgelist(path: str | os.PathLike) -> UnipartiteNetwork:
    nodes, edges = set(), {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if parts == [""]:
                continue
            if len(parts) == 1:
                nodes.add(parts[0])
            elif len(parts) == 3:
                u, v = parts[0], parts[1]
                nodes.update((u, v))
                edges[(u, v)] = float(parts[2])
            else:
                raise ValueError(f"malformed edge-list line: {line!r}")
    return UnipartiteNetwork(sorted(nodes), edges)


def write_bipartite(nb: BipartiteNetwork, path: str | os.PathLike) -> None:
    """Bipartite dump: ``user<TAB>app<TAB>weight`` lines, then ``#user``/``#app`` lines for unlinked nodes."""
    linked_u = {u for u, _ in nb.edges}
    linked_a = {a for _, a in nb.edges}
    with open(path, "w", encoding="utf-8") as fh:
        for (u, a), w in sorted(nb.edges.items()):
            fh.write(f"{u}\t{a}\t{w!r}\n")
        for u in nb.users:
            if u not in linked_u:
                fh.write(f"#user\t{u}\n")
        for a in nb.apps:
            if a not in linked_a:
                fh.write(f"#app\t{a}\n")


def read_bipartite(path: str | os.PathLike) -> BipartiteNetwork:
    users, apps, edges = set(), set(), {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if parts[0] == "#user":
                users.add(parts[1])
            elif parts[0] == "#app":
                apps.add(parts[1])
            elif len(parts) == 3:
                users.add(parts[0])
                apps.add(parts[1])
                edges[(parts[0], parts[1])] = float(parts[2])
    return BipartiteNetwork(tuple(sorted(users)), tuple(sorted(apps)), edges)


def _node_str(node) -> str:
    if isinstance(node, tuple):
        return ":".join(map(str, node))
    return str(node)
