import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import betweenness_by_enumeration, closeness_by_floyd, random_graph_edges
from pseudoscore.data import AppUsage, Label
from pseudoscore.netfeat import (
    PageRankConfig,
    PageRankConvergenceError,
    betweenness,
    centrality_features,
    closeness,
    egonet_features,
    influence_features,
    neighborhood_features,
    personalized_pagerank,
    restart_from_app_rfm,
    restart_from_bad_users,
)
from pseudoscore.network import BipartiteNetwork, CSRGraph, LabeledNetwork, attach_labels


def labeled(nodes, edges, labels=None):
    return attach_labels(CSRGraph(nodes, edges), labels or {})


def test_triad_and_star():
    tri = labeled("abc", {("a", "b"): 1.0, ("b", "c"): 1.0, ("a", "c"): 1.0})
    f = egonet_features(tri, "a")
    assert (f.triangle_count, f.transitivity) == (1, 1.0)
    star = labeled("cxyz", {("c", "x"): 1.0, ("c", "y"): 1.0, ("c", "z"): 1.0})
    f = egonet_features(star, "c")
    assert (f.degree, f.triangle_count, f.transitivity) == (3, 0, 0.0)
    assert math.isnan(f.relational_neighbor)


def test_relational_neighbor_is_weighted_bad_share():
    g = labeled("uabc", {("u", "a"): 2.0, ("u", "b"): 1.0, ("u", "c"): 1.0},
                {"a": Label.BAD, "b": Label.GOOD, "c": Label.GOOD})
    assert egonet_features(g, "u").relational_neighbor == 0.5


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 15), st.floats(0.05, 0.9), st.integers(0, 2**31))
def test_bulk_features_match_per_node(n, p, seed):
    rng = np.random.default_rng(seed)
    nodes = list(range(n))
    edges = random_graph_edges(rng, n, p)
    labels = {v: [Label.GOOD, Label.BAD, Label.UNLABELED][rng.integers(3)] for v in nodes}
    g = labeled(nodes, edges, labels)
    bulk = neighborhood_features(g)
    col = {c: i for i, c in enumerate(bulk.columns)}
    for i, v in enumerate(nodes):
        f = egonet_features(g, v)
        nbrs = g.network.neighbors(v)
        assert f.degree == len(nbrs) == bulk.values[i, col["degree"]]
        assert f.good_degree == sum(labels[x] is Label.GOOD for x in nbrs) == bulk.values[i, col["good_degree"]]
        assert f.bad_degree == bulk.values[i, col["bad_degree"]]
        assert f.triangle_count == bulk.values[i, col["triangles"]]
        assert 0.0 <= f.transitivity <= 1.0
        clique = f.degree >= 2 and all(b in g.network.neighbors(a) for a, b in itertools.combinations(nbrs, 2))
        assert (f.transitivity == 1.0) == clique
        assert f.transitivity == pytest.approx(bulk.values[i, col["transitivity"]])
        rn = bulk.values[i, col["relational_neighbor"]]
        assert (math.isnan(f.relational_neighbor) and math.isnan(rn)) or f.relational_neighbor == pytest.approx(rn)


def test_path_closeness_and_betweenness():
    g = CSRGraph("abc", {("a", "b"): 1.0, ("b", "c"): 1.0})
    assert closeness(g, "b") == (1.0, 2)
    assert closeness(g, "a") == (1.5, 2)
    assert betweenness(g) == {"a": 0.0, "b": 1.0, "c": 0.0}
    k4 = CSRGraph("abcd", {e: 1.0 for e in itertools.combinations("abcd", 2)})
    assert set(betweenness(k4).values()) == {0.0}
    iso = CSRGraph("ab", {})
    avg, reach = closeness(iso, "a")
    assert math.isnan(avg) and reach == 0


def test_tree_betweenness_counts_crossing_pairs():
    rng = np.random.default_rng(11)
    for _ in range(10):
        n = int(rng.integers(2, 25))
        parent = {v: int(rng.integers(v)) for v in range(1, n)}
        edges = {(p, v): 1.0 for v, p in parent.items()}
        bc = betweenness(CSRGraph(range(n), edges))
        adj = {v: set() for v in range(n)}
        for a, b in edges:
            adj[a].add(b)
            adj[b].add(a)
        for v in range(n):
            # removing v splits the tree; pairs across different components cross v
            sizes, seen = [], {v}
            for start in adj[v]:
                stack, comp = [start], 0
                seen.add(start)
                while stack:
                    x = stack.pop()
                    comp += 1
                    for y in adj[x] - seen:
                        seen.add(y)
                        stack.append(y)
                sizes.append(comp)
            expect = (sum(sizes) ** 2 - sum(s * s for s in sizes)) / 2
            assert bc[v] == expect


def test_centrality_on_50_nodes_matches_bfs():
    rng = np.random.default_rng(12)
    edges = random_graph_edges(rng, 50, 0.06, weighted=False)
    g = CSRGraph(range(50), edges)
    ref = closeness_by_floyd(list(range(50)), edges)
    m = centrality_features(g)
    for i in range(50):
        avg, reach = ref[i]
        assert m.values[i, 1] == reach
        assert (math.isnan(avg) and math.isnan(m.values[i, 0])) or m.values[i, 0] == pytest.approx(avg, abs=1e-12)
    bc = betweenness(g)
    bref = betweenness_by_enumeration(list(range(30)), {e: w for e, w in edges.items() if max(e) < 30})
    sub = betweenness(CSRGraph(range(30), {e: w for e, w in edges.items() if max(e) < 30}))
    assert all(abs(sub[v] - bref[v]) < 1e-9 for v in range(30))
    assert m.values[:, 2].tolist() == [bc[v] for v in range(50)]


def test_pagerank_trivial_cases():
    g = CSRGraph("ab", {("a", "b"): 1.0})
    r = personalized_pagerank(g, PageRankConfig({"a": 0.5, "b": 0.5}, 0.85))
    assert r["a"] == pytest.approx(0.5, abs=1e-12) and r["b"] == pytest.approx(0.5, abs=1e-12)
    rng = np.random.default_rng(1)
    nodes = list(range(12))
    g = CSRGraph(nodes, random_graph_edges(rng, 12, 0.3))
    e = rng.random(12)
    e /= e.sum()
    restart = dict(zip(nodes, e))
    fix = 1.0 - math.fsum(v for k, v in restart.items() if k != 0)
    restart[0] = fix
    r = personalized_pagerank(g, PageRankConfig(restart, 1e-9))
    assert max(abs(r[v] - restart[v]) for v in nodes) < 1e-8


def test_pagerank_config_validation():
    with pytest.raises(ValueError):
        PageRankConfig({"a": 1.0}, alpha=1.0)
    with pytest.raises(ValueError):
        PageRankConfig({"a": 0.5, "b": 0.4})
    with pytest.raises(ValueError):
        PageRankConfig({"a": 1.5, "b": -0.5})


def test_pagerank_reports_nonconvergence():
    g = CSRGraph("abc", {("a", "b"): 1.0, ("b", "c"): 1.0})
    with pytest.raises(PageRankConvergenceError) as info:
        personalized_pagerank(g, PageRankConfig({"a": 1.0}, 0.99, tolerance=1e-15, max_iterations=3))
    assert info.value.iterations == 3 and set(info.value.scores) == set("abc")


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 20), st.floats(0.1, 0.7), st.sampled_from([0.3, 0.85, 0.95]), st.integers(0, 2**31))
def test_pagerank_sums_to_one_and_personalizes(n, p, alpha, seed):
    rng = np.random.default_rng(seed)
    nodes = list(range(n))
    g = CSRGraph(nodes, random_graph_edges(rng, n, p))
    uniform = {v: 1.0 / n for v in nodes}
    uniform[0] = 1.0 - math.fsum(1.0 / n for _ in range(n - 1))
    base = personalized_pagerank(g, PageRankConfig(uniform, alpha, 1e-13, 10_000))
    vals = np.array(list(base.scores.values()))
    assert (vals >= 0).all() and abs(math.fsum(vals) - 1) < 1e-9
    s = int(rng.integers(n))
    focused = personalized_pagerank(g, PageRankConfig({s: 1.0}, alpha, 1e-13, 10_000))
    assert focused[s] >= base[s] - 1e-12


def test_restart_from_bad_users():
    g = labeled(range(7), {}, {3: Label.BAD})
    assert restart_from_bad_users(g) == {3: 1.0}
    g = labeled(range(7), {}, {i: Label.BAD for i in range(4)})
    assert restart_from_bad_users(g) == {i: 0.25 for i in range(4)}
    with pytest.raises(ValueError):
        restart_from_bad_users(labeled(range(3), {}))
    assert restart_from_bad_users(g, exclude=[0, 1]) == {2: 0.5, 3: 0.5}


def test_restart_from_app_usage():
    one = [AppUsage("u1", "a", "x", 3.0, 2.0), AppUsage("u2", "a", "x", 1.0, 9.0)]
    nb = BipartiteNetwork(("u1", "u2"), ("a",), {("u1", "a"): 1.0, ("u2", "a"): 1.0})
    assert restart_from_app_rfm(nb, one)[("app", "a")] == 1.0
    two = [AppUsage("u1", "a", "x", 2.0, 4.0), AppUsage("u1", "b", "x", 2.0, 4.0)]
    nb = BipartiteNetwork(("u1",), ("a", "b"), {("u1", "a"): 1.0, ("u1", "b"): 1.0})
    r = restart_from_app_rfm(nb, two)
    assert r[("app", "a")] == r[("app", "b")] == 0.5 and r[("user", "u1")] == 0.0
    mixed = [AppUsage("u1", "a", "x", 6.0, 10.0), AppUsage("u2", "a", "x", 2.0, 20.0),
             AppUsage("u1", "b", "x", 4.0, 3.0), AppUsage("u2", "c", "x", 8.0, 60.0)]
    nb = BipartiteNetwork(("u1", "u2"), ("a", "b", "c"),
                          {("u1", "a"): 1.0, ("u2", "a"): 1.0, ("u1", "b"): 1.0, ("u2", "c"): 1.0})
    r = restart_from_app_rfm(nb, mixed, half_life=30.0)
    raw = {"a": 8 / 20 * math.exp(-15 / 30), "b": 4 / 20 * math.exp(-3 / 30), "c": 8 / 20 * math.exp(-60 / 30)}
    z = sum(raw.values())
    for a, v in raw.items():
        assert r[("app", a)] == pytest.approx(v / z, abs=1e-15)


def test_influence_ignores_own_label():
    rng = np.random.default_rng(5)
    nodes = list(range(40))
    edges = random_graph_edges(rng, 40, 0.15)
    labels = {v: Label.BAD if rng.random() < 0.3 else Label.GOOD for v in nodes}
    base = influence_features(labeled(nodes, edges, labels), crossfit_folds=4, seed=1)
    for u in (0, 7, 19):
        flipped = dict(labels)
        flipped[u] = Label.GOOD if labels[u] is Label.BAD else Label.BAD
        other = influence_features(labeled(nodes, edges, flipped), crossfit_folds=4, seed=1)
        assert other.values[u, 0] == base.values[u, 0]
    assert "ppr_app_rfm" not in base.columns


def test_influence_without_crossfitting():
    single = labeled("ab", {("a", "b"): 1.0}, {"a": Label.BAD})
    m = influence_features(single, crossfit_folds=1)
    assert m.values[:, 0].sum() == pytest.approx(2.0)


def test_influence_app_scores_cover_users():
    usage = [AppUsage("u1", "a", "x", 3.0, 1.0), AppUsage("u2", "a", "x", 2.0, 5.0), AppUsage("u3", "b", "x", 1.0, 1.0)]
    nb = BipartiteNetwork(("u1", "u2", "u3"), ("a", "b"), {("u1", "a"): 1.0, ("u2", "a"): 1.0, ("u3", "b"): 1.0})
    g = labeled(["u1", "u2", "u3"], {("u1", "u2"): 1.0}, {"u1": Label.BAD, "u3": Label.GOOD})
    m = influence_features(g, nb, usage)
    col = m.columns.index("ppr_app_rfm")
    assert np.isfinite(m.values[:, col]).all() and (m.values[:, col] > 0).all()
