"""
The per-layer search space
==========================

Every layer picks a pruning scheme and a rate. Rates are compression
factors: at rate 5 one fifth of the weights remain, and "skip" drops the
layer from the graph altogether.
"""

import numpy as np

from prunesearch import LayerAssignment, LayerSpec, NetworkSpec, PruningProposal
from prunesearch import encode_graph, proposal_stats, random_proposal, validate

# A four-layer chain. The middle two layers may be skipped.
layers = (
    LayerSpec("stem", "conv3x3", 2_000_000_000, 40_000),
    LayerSpec("body1", "conv3x3", 4_000_000_000, 150_000, skippable=True),
    LayerSpec("body2", "conv1x1", 1_000_000_000, 60_000, skippable=True),
    LayerSpec("head", "dense", 500_000_000, 20_000),
)
net = NetworkSpec("demo", layers)

# Each layer lists its valid assignments in a fixed order.
for layer in net.layers:
    print(layer.id, len(layer.options()), "options")

# Random proposals are uniform over each layer's options.
rng = np.random.default_rng(0)
p = random_proposal(net, rng)
print(p.dumps())

# validate() explains what is wrong with a hand-written proposal.
bad = PruningProposal(net, {"stem": LayerAssignment("none", "skip"),
                            "body1": LayerAssignment("none", 2),
                            "body2": LayerAssignment("pattern", 3),
                            "head": LayerAssignment("none", 1)})
for v in validate(bad):
    print("violation:", v.layer_id, "-", v.reason)

# Remaining parameters and MACs are exact sums of cost / rate.
good = bad.replace({"stem": LayerAssignment("none", 1), "body1": LayerAssignment("filter", 2)})
params, macs = proposal_stats(good)
print(f"params {params:.0f} of {net.total_params()}, MACs {macs / 1e9:.2f}G of {net.total_macs() / 1e9:.2f}G")

# Skipped layers vanish from the labelled graph; their neighbours are joined.
g = encode_graph(good.replace({"body2": LayerAssignment("none", "skip")}))
print(g.labels)
print(g.edges)
