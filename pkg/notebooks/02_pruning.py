"""
Path-centric pruning on a two sentence tree
===========================================

Hard pruning keeps tokens within K hops of the paths that join the entities.
Tokens that carry the answer but hang off those paths get cut.
"""

from aggcn import depgraph as dg

tokens = (
    "The deletion mutation on exon-19 of EGFR gene was present in 16 patients , while the "
    "L858E point mutation on exon-21 was noted in 10 . "
    "All patients were treated with gefitinib and showed a partial response ."
).split()
heads = [
    3, 3, 10, 5, 3, 8, 8, 5, 10, 0, 13, 13, 10, 10, 23, 19, 19, 19, 23, 21, 19, 23, 10, 25, 23, 10,
    28, 30, 30, 0, 32, 30, 34, 30, 37, 37, 34, 30,
]
g = dg.DependencyGraph(tokens, heads, None, [(1, 26), (27, 38)])
g.validate()

# two sentences are two trees; linking their roots makes one graph
g = dg.link_sentence_roots(g)
print("root link", g.links)

pos = {t: i for i, t in enumerate(tokens, start=1)}
entities = [(pos["EGFR"],) * 2, (pos["L858E"],) * 2, (pos["gefitinib"],) * 2]

top = dg.lca(g, [s for s, _ in entities])
print("lowest common ancestor of the entities:", tokens[top - 1])

for k in (0, 1, 2, 3, dg.FULL):
    kept = dg.prune_tree(g, entities, k)
    dropped = [tokens[i - 1] for i in range(1, g.n + 1) if i not in kept]
    print(f"K={k!s:>4}: keep {len(kept):2d}/{g.n}  dropped: {' '.join(dropped)}")

# "partial response" only survives from K=2 (response) and K=3 (partial)
print(dg.dependency_path(g, pos["gefitinib"], pos["EGFR"]))

# the pruned graph the GCN baselines actually see
sub, index = dg.restrict_graph(g, dg.prune_tree(g, entities, 1), entities)
print(sub.n, "tokens after K=1;", dg.build_adjacency(sub).sum(), "nonzeros in A")
