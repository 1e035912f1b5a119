"""The search loop: bootstrap, then fit / guide / pool / select / evaluate.

State is written to disk after every evaluated batch, so an interrupted run
can be resumed and will produce the same history as an uninterrupted one.
Every iteration draws from its own generator seeded by ``(seed, iteration,
attempt)``, which is what makes resumption exact.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import gp
from .controller import ControllerConfig, generate_pool, replacement_probabilities
from .evaluators import (
    EvaluationError,
    LatencyModel,
    LookupEvaluator,
    RewardConfig,
    SimulatedEvaluator,
    SyntheticBenchmark,
    evaluate_batch,
    reward,
)
from .external import DEFAULT_TIMEOUT_S, ExternalEvaluator
from .network import EncodingError, NetworkSpec, PruningProposal, encode_graph, random_proposal
from .wl import KernelConfig

log = logging.getLogger(__name__)

STATE_FORMAT = 1
MAX_POOL_ATTEMPTS = 5
EVALUATOR_KINDS = ("simulated", "lookup", "external")


class StateError(RuntimeError):
    """A state file is missing, corrupt or inconsistent."""


class ConfigMismatchError(StateError):
    """A resume was attempted with a config other than the stored run's."""


@dataclass(frozen=True)
class EvaluatorSpec:
    """Evaluator kind plus its inline, JSON-ready settings.

    * simulated: ``{"benchmark": {...}, "latency_model": {...}}``
    * lookup: ``{"rows": [{"key", "proposal", "accuracy", "latency_ms"}, ...]}``
    * external: ``{"command": [...], "timeout": seconds, "cwd": dir or null}``
    """

    kind: str
    settings: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EVALUATOR_KINDS:
            raise ValueError(f"unknown evaluator kind {self.kind!r}")

    def build(self, network: NetworkSpec):
        s = self.settings
        if self.kind == "simulated":
            return SimulatedEvaluator(
                SyntheticBenchmark.from_dict(s["benchmark"]),
                LatencyModel.from_dict(s["latency_model"]),
            )
        if self.kind == "lookup":
            return LookupEvaluator.from_dict(network, s)
        return ExternalEvaluator(s["command"], s.get("timeout", DEFAULT_TIMEOUT_S), s.get("cwd"))

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.settings}


@dataclass(frozen=True)
class SearchConfig:
    network: NetworkSpec
    reward: RewardConfig
    evaluator: EvaluatorSpec
    max_evaluations: int
    batch_size: int = 8
    init_random_evaluations: Optional[int] = None  # None -> 2 * batch_size
    seed: int = 0
    kernel: KernelConfig = KernelConfig()
    noise: float = 1e-6
    controller: ControllerConfig = ControllerConfig()
    xi: float = 0.01  # standardized reward units

    def __post_init__(self):
        if self.init_random_evaluations is None:
            object.__setattr__(self, "init_random_evaluations", 2 * self.batch_size)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.init_random_evaluations < 1:
            raise ValueError("init_random_evaluations must be >= 1")
        if self.max_evaluations < self.init_random_evaluations:
            raise ValueError("max_evaluations must be >= init_random_evaluations")
        if self.xi < 0:
            raise ValueError("xi must be >= 0")

    def to_dict(self) -> dict:
        return {
            "network": self.network.to_dict(),
            "reward": self.reward.to_dict(),
            "kernel": {**self.kernel.to_dict(), "noise": self.noise},
            "controller": self.controller.to_dict(),
            "search": {
                "batch_size": self.batch_size,
                "max_evaluations": self.max_evaluations,
                "init_random_evaluations": self.init_random_evaluations,
                "seed": self.seed,
                "xi": self.xi,
            },
            "evaluator": self.evaluator.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SearchConfig":
        kernel = dict(d.get("kernel", {}))
        noise = kernel.pop("noise", 1e-6)
        ev = dict(d["evaluator"])
        kind = ev.pop("kind")
        return cls(
            network=NetworkSpec.from_dict(d["network"]),
            reward=RewardConfig(**d["reward"]),
            evaluator=EvaluatorSpec(kind, ev),
            kernel=KernelConfig(**kernel),
            noise=noise,
            controller=ControllerConfig(**d.get("controller", {})),
            **d["search"],
        )

    def fingerprint(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class SearchState:
    config: SearchConfig
    observations: list = field(default_factory=list)
    iteration: int = 0
    exhausted: bool = False
    guidance: list = field(default_factory=list)

    @property
    def best_index(self) -> Optional[int]:
        best = None
        for i, o in enumerate(self.observations):
            if best is None or o.reward > self.observations[best].reward:
                best = i
        return best

    @property
    def best(self) -> Optional[gp.Observation]:
        i = self.best_index
        return None if i is None else self.observations[i]

    @property
    def complete(self) -> bool:
        return self.exhausted or len(self.observations) >= self.config.max_evaluations

    def to_dict(self) -> dict:
        return {
            "format": STATE_FORMAT,
            "fingerprint": self.config.fingerprint(),
            "config": self.config.to_dict(),
            "rng": {"seed": self.config.seed, "next_iteration": self.iteration + 1},
            "iteration": self.iteration,
            "exhausted": self.exhausted,
            "observations": [
                {
                    "proposal": o.proposal.to_dict(),
                    "accuracy": o.accuracy,
                    "latency_ms": o.latency_ms,
                    "reward": o.reward,
                }
                for o in self.observations
            ],
            "guidance": self.guidance,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def save(self, path) -> None:
        """Write atomically: temp file in the same directory, then rename."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(self.dumps())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def from_dict(cls, d: Mapping) -> "SearchState":
        if d.get("format") != STATE_FORMAT:
            raise StateError(f"unsupported state format {d.get('format')!r}")
        config = SearchConfig.from_dict(d["config"])
        if config.fingerprint() != d["fingerprint"]:
            raise StateError("state fingerprint does not match its embedded config")
        obs = []
        for i, row in enumerate(d["observations"]):
            o = gp.Observation(
                proposal=PruningProposal.from_dict(config.network, row["proposal"]),
                accuracy=float(row["accuracy"]),
                latency_ms=float(row["latency_ms"]),
                reward=float(row["reward"]),
            )
            if o.reward != reward(o.accuracy, o.latency_ms, config.reward):
                raise StateError(f"observation {i}: stored reward disagrees with the reward config")
            obs.append(o)
        return cls(
            config=config,
            observations=obs,
            iteration=int(d["iteration"]),
            exhausted=bool(d["exhausted"]),
            guidance=list(d.get("guidance", [])),
        )

    @classmethod
    def load(cls, path) -> "SearchState":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls.from_dict(d)
        except StateError:
            raise
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise StateError(f"cannot read state {path}: {e}") from e


def select_batch(
    pool: Sequence[PruningProposal],
    scores: Sequence[float],
    batch_size: int,
    observed,
) -> list[PruningProposal]:
    """Top ``batch_size`` by score, skipping observed and repeated proposals.

    Ties keep pool order.
    """
    order = sorted(range(len(pool)), key=lambda i: -scores[i])
    taken, out = set(observed), []
    for i in order:
        if len(out) == batch_size:
            break
        if pool[i] in taken:
            continue
        taken.add(pool[i])
        out.append(pool[i])
    return out


def _encodable(p: PruningProposal) -> bool:
    try:
        encode_graph(p)
    except EncodingError:
        return False
    return True


def _bootstrap_proposals(config: SearchConfig, n: int) -> list[PruningProposal]:
    rng = np.random.default_rng([config.seed, 0])
    out, seen = [], set()
    for _ in range(1000 * n):
        if len(out) == n:
            break
        p = random_proposal(config.network, rng)
        if p in seen or not _encodable(p):
            continue
        seen.add(p)
        out.append(p)
    return out


def _fit(state: SearchState) -> gp.SurrogateModel:
    cfg = state.config
    try:
        return gp.fit(state.observations, cfg.kernel, cfg.noise)
    except gp.ModelFitError as e:
        log.warning("GP fit failed (%s); retrying with escalated jitter", e)
        return gp.fit(state.observations, cfg.kernel, max(cfg.noise * 100, gp.JITTER_LADDER[1]))


def _commit(state: SearchState, batch, results) -> None:
    for p, r in zip(batch, results):
        state.observations.append(gp.Observation(p, r.accuracy, r.latency_ms, r.reward))


def step(state: SearchState, evaluator) -> bool:
    """Run one iteration in place; return False once the search is complete."""
    cfg = state.config
    if state.complete:
        return False
    remaining = cfg.max_evaluations - len(state.observations)

    if not state.observations:
        batch = _bootstrap_proposals(cfg, min(cfg.init_random_evaluations, remaining))
        if not batch:
            state.exhausted = True
            return False
        _commit(state, batch, evaluate_batch(batch, evaluator, cfg.reward))
        state.iteration = 0
        if len(batch) < cfg.init_random_evaluations:
            log.warning("search space exhausted during bootstrap")
            state.exhausted = True
        return not state.complete

    it = state.iteration + 1
    model = _fit(state)
    best_i = state.best_index
    best = state.observations[best_i]
    probs = replacement_probabilities(gp.mean_gradient(model, best.proposal))
    observed = {o.proposal for o in state.observations}

    batch = []
    for attempt in range(MAX_POOL_ATTEMPTS):
        rng = np.random.default_rng([cfg.seed, it, attempt])
        pool = generate_pool(best.proposal, probs, cfg.network, cfg.controller, rng)
        mean, var = gp.predict_many(model, [encode_graph(p) for p in pool])
        ei = gp.ei_from_moments(mean, var, best.reward, cfg.xi * model.reward_std)
        batch = select_batch(pool, ei, min(cfg.batch_size, remaining), observed)
        if batch:
            break
        log.info("iteration %d: pool held only observed proposals, regenerating (attempt %d)", it, attempt + 1)
    if not batch:
        log.warning("iteration %d: no unobserved proposals found; stopping", it)
        state.exhausted = True
        return False

    results = evaluate_batch(batch, evaluator, cfg.reward)
    _commit(state, batch, results)
    state.iteration = it
    state.guidance.append({"iteration": it, "reference": best_i, "probabilities": probs})
    return not state.complete


def _drive(state: SearchState, evaluator, state_path) -> SearchState:
    try:
        while not state.complete:
            try:
                more = step(state, evaluator)
            except EvaluationError:
                if state_path is not None:
                    state.save(state_path)
                raise
            if state_path is not None:
                state.save(state_path)
            if not more:
                break
    finally:
        evaluator.close()
    return state


def run(config: SearchConfig, state_path=None, evaluator=None) -> tuple[gp.Observation, SearchState]:
    """Run a search from scratch.

    On an evaluator failure the state up to the last completed batch is
    already on disk and the ``EvaluationError`` propagates; call
    :func:`resume` to continue.
    """
    state = SearchState(config)
    if evaluator is None:
        evaluator = config.evaluator.build(config.network)
    _drive(state, evaluator, state_path)
    return state.best, state


def resume(state_path, config: Optional[SearchConfig] = None, evaluator=None) -> tuple[gp.Observation, SearchState]:
    """Continue the run stored at ``state_path``.

    ``config``, when given, must match the stored fingerprint.
    """
    state = SearchState.load(state_path)
    if config is not None and config.fingerprint() != state.config.fingerprint():
        raise ConfigMismatchError("config fingerprint differs from the stored run; refusing to resume")
    if state.complete:
        return state.best, state
    if evaluator is None:
        evaluator = state.config.evaluator.build(state.config.network)
    _drive(state, evaluator, state_path)
    return state.best, state
