"""Bundled problems: synthetic benchmarks and the PointPillars table fixtures."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, replace
from importlib import resources
from typing import Optional

import numpy as np

from .evaluators import LatencyModel, RewardConfig, evaluate_batch
from .network import EncodingError, LayerSpec, NetworkSpec, PruningProposal, encode_graph
from .search import EvaluatorSpec, SearchConfig, run

PENALTY = {
    "filter": {"2": 1.5, "2.5": 2.0, "3": 2.6, "5": 4.5, "7": 6.0, "10": 8.0},
    "block": {"2": 0.9, "2.5": 1.2, "3": 1.6, "5": 2.8, "7": 3.8, "10": 5.2},
    "pattern": {"2": 0.5, "2.5": 0.7, "3": 0.9, "5": 1.7, "7": 2.4, "10": 3.4},
}
LATENCY = LatencyModel(
    device_throughput=1e11,
    scheme_factors={"filter": 1.2, "block": 1.6, "pattern": 2.2},
    per_layer_overhead_ms=0.5,
)


@dataclass(frozen=True)
class Problem:
    name: str
    network: NetworkSpec
    reward: RewardConfig
    evaluator: EvaluatorSpec

    def config(self, seed: int = 0, max_evaluations: int = 60, **kw) -> SearchConfig:
        return SearchConfig(
            network=self.network,
            reward=self.reward,
            evaluator=self.evaluator,
            max_evaluations=max_evaluations,
            seed=seed,
            **kw,
        )

    def all_proposals(self) -> list[PruningProposal]:
        """Every encodable proposal; only sensible for tiny networks."""
        layers = self.network.layers
        out = []
        for combo in itertools.product(*(layer.options() for layer in layers)):
            p = PruningProposal(self.network, dict(zip(self.network.layer_ids, combo)))
            try:
                encode_graph(p)
            except EncodingError:
                continue
            out.append(p)
        return out


def _simulated(benchmark, latency=LATENCY) -> EvaluatorSpec:
    return EvaluatorSpec("simulated", {"benchmark": benchmark, "latency_model": latency.to_dict()})


def toy3() -> Problem:
    """Three layers, six options each: 216 proposals (215 encodable)."""
    kinds = [("stem", "conv3x3", 4.0e9, 0.8, 6.0), ("mid", "conv1x1", 6.0e9, 1.6, 14.0),
             ("head", "dense", 2.0e9, 0.5, 3.0)]
    layers = tuple(
        LayerSpec(lid, kind, int(macs), int(macs / 1000), skippable=True,
                  allowed_schemes=("filter", "pattern"), allowed_rates=(1, 2, 5, "skip"))
        for lid, kind, macs, _, _ in kinds
    )
    network = NetworkSpec("toy3", layers)
    benchmark = {
        "name": "toy3",
        "base_accuracy": 80.0,
        "layers": {lid: {"sensitivity": s, "skip_penalty": q} for lid, _, _, s, q in kinds},
        "penalty": PENALTY,
    }
    return Problem("toy3", network, RewardConfig(latency_budget_ms=60.0, alpha=0.2),
                   _simulated(benchmark))


def layered(n_layers: int = 20, seed: int = 0) -> Problem:
    """A chain of ``n_layers`` cost-annotated layers with random sensitivities.

    Every other layer is skippable. The latency budget is 30% of the dense
    latency, so most layers must be pruned.
    """
    rng = np.random.default_rng(seed)
    kinds = ("conv3x3", "conv1x1", "dwconv")
    layers, table = [], {}
    for i in range(n_layers):
        lid = f"l{i:02d}"
        macs = int(rng.lognormal(np.log(1.5e9), 0.6))
        layers.append(LayerSpec(lid, kinds[i % 3], macs, macs // 500, skippable=bool(i % 2)))
        table[lid] = {
            # scaled so that pruning everything hard costs about half the base accuracy
            "sensitivity": round(float(rng.uniform(0.05, 0.45)), 3),
            "skip_penalty": round(float(rng.uniform(0.5, 3.0)), 3),
        }
    network = NetworkSpec(f"layered{n_layers}", tuple(layers))
    dense = sum(LATENCY.layer_ms(layer.macs, "none") for layer in layers)
    benchmark = {"name": network.name, "base_accuracy": 80.0, "layers": table, "penalty": PENALTY}
    reward = RewardConfig(latency_budget_ms=round(0.3 * dense, 1), alpha=0.5)
    return Problem(network.name, network, reward, _simulated(benchmark))


def _data(name: str):
    return json.loads(resources.files("prunesearch.data").joinpath(name).read_text(encoding="utf-8"))


def pointpillars_lookup() -> Problem:
    """PointPillars at 0.24 m grid as one prunable layer with four recorded outcomes.

    Accuracy is the moderate-difficulty car 3D AP; latency budget 100 ms.
    """
    d = _data("pointpillars_lookup.json")
    network = NetworkSpec.from_dict(d["network"])
    return Problem(
        "pointpillars",
        network,
        RewardConfig(**d["reward"]),
        EvaluatorSpec("lookup", {"rows": d["rows"]}),
    )


def pointpillars_measurements():
    from .evaluators import Measurement

    return [Measurement(**r) for r in _data("pointpillars_measurements.json")["measurements"]]


SUITES = {
    "small": [("toy3", toy3, 60), ("layered20", layered, 60)],
    "full": [("toy3", toy3, 120), ("layered20", layered, 60), ("layered20", layered, 120),
             ("layered40", lambda: layered(40, seed=1), 120)],
}


def compare(problem: Problem, seeds, budget: int, batch_size: int = 8, pool_size: Optional[int] = None) -> dict:
    """Best reward after ``budget`` evaluations for guided BO and random search."""
    out = {"bo": [], "random": []}
    for seed in seeds:
        cfg = problem.config(seed=seed, max_evaluations=budget, batch_size=batch_size)
        if pool_size is not None:
            cfg = replace(cfg, controller=replace(cfg.controller, pool_size=pool_size))
        out["bo"].append(run(cfg)[0].reward)
        rnd = replace(cfg, init_random_evaluations=budget)
        out["random"].append(run(rnd)[0].reward)
    return out


def exhaustive_best(problem: Problem):
    """(best proposal, best reward) over every encodable proposal."""
    proposals = problem.all_proposals()
    evaluator = problem.evaluator.build(problem.network)
    results = evaluate_batch(proposals, evaluator, problem.reward)
    i = max(range(len(results)), key=lambda k: results[k].reward)
    return proposals[i], results[i].reward
