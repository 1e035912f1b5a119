"""Reward, latency and accuracy models, and the proposal evaluators.

Three evaluators share one interface, ``measure(proposals)``, returning an
``(accuracy, latency_ms)`` pair per proposal:

* ``SimulatedEvaluator`` -- synthetic accuracy surface plus a latency model.
* ``LookupEvaluator`` -- recorded measurements keyed by proposal.
* ``ExternalEvaluator`` -- a child process speaking the line-delimited JSON
  protocol (see :mod:`prunesearch.external`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .network import (
    NONE,
    SCHEMES,
    SKIP,
    NetworkSpec,
    PruningProposal,
    format_rate,
    parse_rate,
)


class EvaluationError(RuntimeError):
    """An evaluator failed; ``index`` is the position of the proposal in the batch."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message if index is None else f"proposal {index}: {message}")
        self.index = index


class CalibrationError(ValueError):
    def __init__(self, missing: Sequence[str]):
        super().__init__(f"no measurements for scheme(s): {', '.join(missing)}")
        self.missing = list(missing)


@dataclass(frozen=True)
class RewardConfig:
    latency_budget_ms: float
    alpha: float = 0.1

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not self.latency_budget_ms > 0:
            raise ValueError("latency_budget_ms must be > 0")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "latency_budget_ms": self.latency_budget_ms}


@dataclass(frozen=True)
class EvaluationResult:
    accuracy: float
    latency_ms: float
    reward: float


def reward(accuracy: float, latency_ms: float, cfg: RewardConfig) -> float:
    """Accuracy minus ``alpha`` per millisecond over the latency budget."""
    return accuracy - cfg.alpha * max(0.0, latency_ms - cfg.latency_budget_ms)


# -- latency -----------------------------------------------------------------

SCHEME_ALIASES = {"dense": NONE, "mixed": "block"}
_CHAIN = ("filter", "block", "pattern")  # fastest to slowest at equal MACs


@dataclass(frozen=True)
class LatencyModel:
    device_throughput: float  # MAC/s for dense execution
    scheme_factors: Mapping[str, float] = field(
        default_factory=lambda: {NONE: 1.0, "filter": 1.0, "block": 1.0, "pattern": 1.0}
    )
    per_layer_overhead_ms: float = 0.0

    def __post_init__(self):
        if not self.device_throughput > 0:
            raise ValueError("device_throughput must be > 0")
        if self.per_layer_overhead_ms < 0:
            raise ValueError("per_layer_overhead_ms must be >= 0")
        object.__setattr__(self, "device_throughput", float(self.device_throughput))
        object.__setattr__(self, "per_layer_overhead_ms", float(self.per_layer_overhead_ms))
        factors = {k: float(v) for k, v in self.scheme_factors.items()}
        factors.setdefault(NONE, 1.0)
        if set(factors) != set(SCHEMES) | {NONE}:
            raise ValueError("scheme_factors must cover filter, pattern, block and none")
        if any(v < 1.0 for v in factors.values()):
            raise ValueError("scheme factors must be >= 1")
        if not factors["filter"] <= factors["block"] <= factors["pattern"]:
            raise ValueError("scheme factors must satisfy filter <= block <= pattern")
        object.__setattr__(self, "scheme_factors", factors)

    def layer_ms(self, macs: float, scheme: str, layers: float = 1.0) -> float:
        return (
            macs * self.scheme_factors[scheme] / self.device_throughput * 1000.0
            + self.per_layer_overhead_ms * layers
        )

    def to_dict(self) -> dict:
        return {
            "device_throughput": self.device_throughput,
            "scheme_factors": dict(sorted(self.scheme_factors.items())),
            "per_layer_overhead_ms": self.per_layer_overhead_ms,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LatencyModel":
        return cls(**d)


def simulate_latency(proposal: PruningProposal, model: LatencyModel) -> float:
    """Summed layer latency; skipped layers cost nothing.

    A pruned layer whose sparse kernel would be slower than its dense one runs
    dense, as a compiler would choose, so raising a rate never adds latency.
    """
    total = 0.0
    for layer in proposal.network.layers:
        a = proposal[layer.id]
        if a.rate == SKIP:
            continue
        sparse = layer.macs / float(a.rate) * model.scheme_factors[a.scheme]
        total += model.layer_ms(min(sparse, float(layer.macs)), NONE)
    return total


@dataclass(frozen=True)
class Measurement:
    macs: float
    scheme: str
    measured_ms: float
    layers: int = 1
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "scheme", SCHEME_ALIASES.get(self.scheme, self.scheme))
        if self.scheme not in SCHEMES + (NONE,):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.measured_ms > 0:
            raise ValueError("measured_ms must be > 0")


def load_measurements(path) -> list[Measurement]:
    rows = json.loads(Path(path).read_text())
    if isinstance(rows, Mapping):
        rows = rows["measurements"]
    return [Measurement(**r) for r in rows]


def calibrate_latency_model(
    measurements: Sequence[Measurement],
    schemes: Optional[Sequence[str]] = None,
) -> LatencyModel:
    """Fit throughput, scheme factors and overhead by relative least squares.

    Scheme factors are fitted only for schemes that have measurements and are
    kept ordered filter <= block <= pattern. Missing factors are filled from
    their fitted neighbours in that order. The overhead is fitted only when
    dense rows at two or more distinct sizes pin it down; otherwise it is 0.
    ``schemes`` lists schemes that must be present (dense always must be).
    """
    rows = list(dict.fromkeys(measurements))
    present = {m.scheme for m in rows}
    required = {NONE} | {SCHEME_ALIASES.get(s, s) for s in (schemes or ())}
    missing = sorted(required - present)
    if missing:
        raise CalibrationError(missing)

    fitted = [s for s in _CHAIN if s in present]
    dense = [m for m in rows if m.scheme == NONE]
    fit_overhead = len({m.macs / m.layers for m in dense}) >= 2

    gmacs = np.array([m.macs / 1e9 for m in rows])
    n_layers = np.array([m.layers for m in rows], dtype=float)
    target = np.array([m.measured_ms for m in rows])

    def unpack(x):
        a = x[0]
        o = x[1] if fit_overhead else 0.0
        deltas = x[2:] if fit_overhead else x[1:]
        f, factors = 1.0, {NONE: 1.0}
        for s, d in zip(fitted, deltas):
            f += d
            factors[s] = f
        return a, o, factors

    def predict(x):
        a, o, factors = unpack(x)
        f = np.array([factors[m.scheme] for m in rows])
        return gmacs * f * a + o * n_layers

    def resid(x):
        return (predict(x) - target) / target

    a0 = float(np.median([m.measured_ms / (m.macs / 1e9) for m in dense if m.macs > 0] or [1.0]))
    x0 = [a0] + ([1.0] if fit_overhead else []) + [0.1] * len(fitted)
    sol = least_squares(
        resid, x0, bounds=(0.0, np.inf), method="trf", xtol=1e-14, ftol=1e-14, gtol=1e-14
    )
    a, o, factors = unpack(sol.x)

    for i, s in enumerate(_CHAIN):
        if s in factors:
            continue
        below = [factors[t] for t in _CHAIN[:i] if t in factors]
        above = [factors[t] for t in _CHAIN[i + 1:] if t in factors]
        if below and above:
            factors[s] = float(np.sqrt(below[-1] * above[0]))
        elif below:
            factors[s] = below[-1]
        elif above:
            factors[s] = above[0]
        else:
            factors[s] = 1.0
    return LatencyModel(device_throughput=1e12 / a, scheme_factors=factors, per_layer_overhead_ms=o)


# -- accuracy ----------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticBenchmark:
    """Additive synthetic accuracy surface.

    ``layers`` maps layer id to ``{"sensitivity": s, "skip_penalty": q}``;
    ``penalty`` maps scheme to ``{rate: value}``. Accuracy is
    ``base_accuracy - sum(s * penalty[scheme][rate])``, with skipped layers
    costing their ``skip_penalty`` instead, clamped to ``[0, 100]``.
    """

    base_accuracy: float
    layers: Mapping[str, Mapping[str, float]]
    penalty: Mapping[str, Mapping[str, float]]
    name: str = "synthetic"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "base_accuracy": self.base_accuracy,
            "layers": {k: dict(v) for k, v in self.layers.items()},
            "penalty": {s: {format_rate(parse_rate(r)): v for r, v in t.items()}
                        for s, t in self.penalty.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticBenchmark":
        return cls(
            base_accuracy=float(d["base_accuracy"]),
            layers={k: dict(v) for k, v in d["layers"].items()},
            penalty={s: {format_rate(parse_rate(r)): float(v) for r, v in t.items()}
                     for s, t in d["penalty"].items()},
            name=d.get("name", "synthetic"),
        )


def simulated_accuracy(proposal: PruningProposal, benchmark: SyntheticBenchmark) -> float:
    acc = benchmark.base_accuracy
    for layer_id, a in proposal.assignments:
        if layer_id not in benchmark.layers:
            raise KeyError(f"layer {layer_id} missing from benchmark sensitivity table")
        spec = benchmark.layers[layer_id]
        if a.rate == SKIP:
            acc -= spec.get("skip_penalty", 0.0)
        elif a.rate != 1:
            acc -= spec["sensitivity"] * benchmark.penalty[a.scheme][format_rate(a.rate)]
    return min(100.0, max(0.0, acc))


# -- evaluators --------------------------------------------------------------


class SimulatedEvaluator:
    kind = "simulated"

    def __init__(self, benchmark: SyntheticBenchmark, latency_model: LatencyModel):
        self.benchmark = benchmark
        self.latency_model = latency_model

    def measure(self, proposals: Sequence[PruningProposal]) -> list[tuple[float, float]]:
        return [
            (simulated_accuracy(p, self.benchmark), simulate_latency(p, self.latency_model))
            for p in proposals
        ]

    def close(self):
        pass


@dataclass(frozen=True)
class LookupRow:
    key: str
    proposal: PruningProposal
    accuracy: float
    latency_ms: float


class LookupEvaluator:
    """Replays recorded (accuracy, latency) measurements."""

    kind = "lookup"

    def __init__(self, rows: Sequence[LookupRow]):
        self.rows = list(rows)
        self._by_proposal = {r.proposal: r for r in self.rows}

    @classmethod
    def from_dict(cls, network: NetworkSpec, d) -> "LookupEvaluator":
        rows = d["rows"] if isinstance(d, Mapping) else d
        return cls([
            LookupRow(
                key=r["key"],
                proposal=PruningProposal.from_dict(network, r["proposal"]),
                accuracy=float(r["accuracy"]),
                latency_ms=float(r["latency_ms"]),
            )
            for r in rows
        ])

    def key_for(self, proposal: PruningProposal) -> Optional[str]:
        row = self._by_proposal.get(proposal)
        return None if row is None else row.key

    def measure(self, proposals: Sequence[PruningProposal]) -> list[tuple[float, float]]:
        out = []
        for i, p in enumerate(proposals):
            row = self._by_proposal.get(p)
            if row is None:
                raise EvaluationError(f"no recorded measurement for {p.dumps()}", i)
            out.append((row.accuracy, row.latency_ms))
        return out

    def close(self):
        pass


def evaluate_batch(
    proposals: Sequence[PruningProposal], evaluator, reward_cfg: RewardConfig
) -> list[EvaluationResult]:
    """Measure ``proposals`` and attach rewards, preserving order."""
    measured = evaluator.measure(list(proposals))
    if len(measured) != len(proposals):
        raise EvaluationError(f"evaluator returned {len(measured)} results for {len(proposals)} proposals")
    return [
        EvaluationResult(float(acc), float(lat), reward(float(acc), float(lat), reward_cfg))
        for acc, lat in measured
    ]
