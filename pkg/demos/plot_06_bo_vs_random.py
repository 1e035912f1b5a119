"""
Guided search against random search
===================================

On a 20-layer synthetic problem, compare the best reward after 60
evaluations of guided Bayesian optimisation with plain random sampling.
Both start from the same random draws, so any gap comes from the guidance.
"""

import numpy as np

from prunesearch.benchmarks import compare, layered

problem = layered(20)
print("latency budget", problem.reward.latency_budget_ms, "ms")

res = compare(problem, seeds=range(5), budget=60)
for seed, (b, r) in enumerate(zip(res["bo"], res["random"])):
    print(f"seed {seed}: guided {b:7.3f}   random {r:7.3f}")
print("medians:", round(float(np.median(res["bo"])), 3), "vs", round(float(np.median(res["random"])), 3))
