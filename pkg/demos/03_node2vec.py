"""
node2vec walks and skip-gram embeddings
=======================================

The return parameter p and in-out parameter q reshape the walk. Two
dense communities joined by one bridge end up in separate regions of the
embedding space.
"""

import numpy as np

from pseudoscore import Node2VecConfig, embed
from pseudoscore.embed import generate_walks, walk_transition_probs
from pseudoscore.network import CSRGraph

path = CSRGraph("abcd", {("a", "b"): 1.0, ("b", "c"): 1.0, ("c", "d"): 1.0})
for p, q in [(1, 1), (2, 4), (0.25, 1)]:
    probs = walk_transition_probs(path, "b", "c", Node2VecConfig(p=p, q=q))
    print(f"p={p}, q={q}: from b at c ->", {k: round(v, 3) for k, v in probs.items()})

# two 15-node cliques and a single bridge
edges = {}
for block in (range(0, 15), range(15, 30)):
    block = list(block)
    edges.update({(i, j): 1.0 for i in block for j in block if i < j})
edges[(14, 15)] = 1.0
g = CSRGraph(range(30), edges)

cfg = Node2VecConfig(dimensions=16, walks_per_node=10, walk_length=30, context_window=4, epochs=3, seed=1)
print("first walk:", generate_walks(g, cfg)[0][:12])
emb = embed(g, cfg)
print("loss per epoch:", np.round(emb.loss_history, 4))

unit = emb.matrix / np.linalg.norm(emb.matrix, axis=1, keepdims=True)
sim = unit @ unit.T
same = np.mean([sim[i, j] for i in range(30) for j in range(30) if i != j and (i < 15) == (j < 15)])
cross = np.mean([sim[i, j] for i in range(15) for j in range(15, 30)])
print(f"cosine within communities {same:.3f}, across {cross:.3f}")
