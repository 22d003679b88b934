"""
Influence of defaulters through personalized PageRank
=====================================================

Restart the random surfer at the Bad users and see how the score decays
with distance. A cross-fitted variant keeps each user's own label out of
its score.
"""

import numpy as np

from pseudoscore import Label, PageRankConfig, personalized_pagerank
from pseudoscore.netfeat import influence_features, restart_from_bad_users
from pseudoscore.network import CSRGraph, attach_labels

# a path of eight users with a defaulter at one end
nodes = [f"p{i}" for i in range(8)]
edges = {(nodes[i], nodes[i + 1]): 1.0 for i in range(7)}
g = attach_labels(CSRGraph(nodes, edges), {"p0": Label.BAD, "p5": Label.GOOD})

restart = restart_from_bad_users(g)
for alpha in (0.5, 0.85):
    scores = personalized_pagerank(g.network, PageRankConfig(restart, alpha=alpha))
    row = " ".join(f"{scores[v]:.3f}" for v in nodes)
    print(f"alpha={alpha}: {row}  ({scores.iterations} iterations)")

# on a random graph, compare plain and cross-fitted scores for the Bad users
rng = np.random.default_rng(0)
n = 200
nodes = list(range(n))
edges = {(i, j): 1.0 for i in range(n) for j in range(i + 1, n) if rng.random() < 0.03}
labels = {v: Label.BAD if rng.random() < 0.15 else Label.GOOD for v in nodes}
g = attach_labels(CSRGraph(nodes, edges), labels)

plain = influence_features(g, crossfit_folds=1).values[:, 0]
crossfit = influence_features(g, crossfit_folds=5).values[:, 0]
bad = np.array([labels[v] is Label.BAD for v in nodes])
print("mean score of Bad users, plain:      ", plain[bad].mean().round(3))
print("mean score of Bad users, cross-fitted:", crossfit[bad].mean().round(3))
print("mean score of Good users, cross-fitted:", crossfit[~bad].mean().round(3))
