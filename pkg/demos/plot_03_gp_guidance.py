"""
A GP surrogate and its gradient guidance
========================================

Fit a Gaussian process to a handful of evaluated proposals, then ask which
layers the predicted reward is least happy with. Those layers get the highest
replacement probabilities.
"""

import numpy as np

from prunesearch import Observation, evaluate_batch, fit, mean_gradient, predict
from prunesearch import expected_improvement, random_proposal, replacement_probabilities
from prunesearch.benchmarks import toy3
from prunesearch.network import format_rate

problem = toy3()
evaluator = problem.evaluator.build(problem.network)
rng = np.random.default_rng(4)

props = []
while len(props) < 12:
    p = random_proposal(problem.network, rng)
    if p not in props and not all(a.skipped for _, a in p.assignments):
        props.append(p)
results = evaluate_batch(props, evaluator, problem.reward)
obs = [Observation(p, r.accuracy, r.latency_ms, r.reward) for p, r in zip(props, results)]

model = fit(obs)
best = max(obs, key=lambda o: o.reward)
print("best observed reward", round(best.reward, 3))

# The posterior mean interpolates the data; variance is near zero there.
mean, var = predict(model, best.proposal)
print("prediction at best:", round(mean, 3), "+/-", round(var ** 0.5, 4))

# Negative gradient means the layer is holding the reward down.
grads = mean_gradient(model, best.proposal)
probs = replacement_probabilities(grads)
for lid in grads:
    a = best.proposal[lid]
    print(f"{lid:5s} {a.scheme + '/' + format_rate(a.rate):12s} grad {grads[lid]:+.3f}  p {probs[lid]:.3f}")

# Expected improvement scores an unseen candidate.
cand = random_proposal(problem.network, rng)
print("EI of a random candidate:", expected_improvement(model, cand, best.reward, 0.01 * model.reward_std))
