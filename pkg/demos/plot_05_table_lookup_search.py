"""
Searching over recorded PointPillars results
============================================

The lookup evaluator replays four recorded outcomes for the 0.24 m grid
model. With a 100 ms budget and 0.1 AP lost per millisecond over it, the
block-pruned model is the only one that is both fast and accurate.
"""

from prunesearch import run
from prunesearch.benchmarks import pointpillars_lookup
from prunesearch.report import best_block, trajectory

problem = pointpillars_lookup()
best, state = run(problem.config(seed=0, max_evaluations=16))

# Only four proposals exist, so the search stops once all are measured.
for row in trajectory(state):
    print(f"{row['proposal_id']:22s} AP {row['accuracy']:6.2f}  {row['latency_ms']:5.0f} ms  reward {row['reward']:6.2f}")

print()
print(best_block(state))
