"""
Weisfeiler-Lehman similarity between proposals
==============================================

Proposals become labelled graphs. Repeatedly relabelling each node with its
neighbours' labels and counting the results gives a sparse feature vector;
the kernel is the normalised dot product of two such vectors.
"""

import numpy as np

from prunesearch import KernelConfig, encode_graph, gram_matrix, kernel, random_proposal, wl_features
from prunesearch.benchmarks import layered

net = layered(10).network
rng = np.random.default_rng(1)
base = random_proposal(net, rng)
while True:
    try:
        g0 = encode_graph(base)
        break
    except Exception:
        base = random_proposal(net, rng)

# Feature counts: iteration 0 counts raw labels, later iterations count contexts.
f = wl_features(g0, 2)
print(len(f.counts), "distinct features,", sum(f.counts.values()), "in total")

# Changing more layers lowers similarity on average.
for k in range(5):
    vals = []
    for _ in range(100):
        changes = {}
        for lid in rng.choice(net.layer_ids, size=k, replace=False):
            opts = [a for a in net.layer(lid).options() if a != base[lid] and not a.skipped]
            changes[lid] = opts[int(rng.integers(len(opts)))]
        vals.append(kernel(g0, encode_graph(base.replace(changes))))
    print(f"{k} layers changed: mean similarity {np.mean(vals):.3f}")

# The Gram matrix is positive semi-definite.
graphs = [g0] + [encode_graph(base.replace({net.layer_ids[i]: net.layers[i].options()[1]})) for i in range(9)]
K = gram_matrix(graphs, KernelConfig(h=2))
print("smallest eigenvalue", np.linalg.eigvalsh(K).min())
