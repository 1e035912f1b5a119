"""Replacement probabilities and guided mutation of the best proposal."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from scipy.special import expit

from .network import (
    EncodingError,
    NetworkSpec,
    PruningProposal,
    encode_graph,
    random_proposal,
)

log = logging.getLogger(__name__)

MAX_REDRAWS = 10


@dataclass(frozen=True)
class ControllerConfig:
    pool_size: int = 200
    random_fraction: float = 0.1
    # None means "number of nodes in the reference proposal"
    per_node_replace_scale: Optional[float] = None

    def __post_init__(self):
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        if not 0.0 <= self.random_fraction <= 1.0:
            raise ValueError("random_fraction must lie in [0, 1]")
        if self.per_node_replace_scale is not None and not self.per_node_replace_scale > 0:
            raise ValueError("per_node_replace_scale must be > 0")

    def to_dict(self) -> dict:
        return {
            "pool_size": self.pool_size,
            "random_fraction": self.random_fraction,
            "per_node_replace_scale": self.per_node_replace_scale,
        }


def replacement_probabilities(gradients: Mapping[str, float]) -> dict[str, float]:
    """Normalized ``sigmoid(-g)`` per layer: the more negative, the likelier to change."""
    if not gradients:
        raise ValueError("no gradients")
    ids = list(gradients)
    p = expit(-np.array([gradients[i] for i in ids], dtype=float))
    p = p / p.sum()
    return {i: float(v) for i, v in zip(ids, p)}


def _donors(probs: Mapping[str, float]) -> list[str]:
    # sorted() is stable, so ties go to the earlier layer
    return sorted(probs, key=probs.__getitem__)[:2]


def mutate(
    best: PruningProposal,
    probs: Mapping[str, float],
    cfg: ControllerConfig,
    rng: np.random.Generator,
) -> PruningProposal:
    """Resample layers of ``best`` according to ``probs``.

    Each node flips with probability ``min(1, c * p)``. A flipped node copies
    the assignment of one of the two lowest-probability layers, if that
    assignment is valid for it and differs from its current one; otherwise it
    draws from its own remaining options.
    """
    network = best.network
    ids = list(probs)
    c = cfg.per_node_replace_scale or len(ids)
    donor_values = [best[d] for d in _donors(probs)]

    p = np.array([probs[i] for i in ids])
    flips = rng.random(len(ids)) < np.minimum(1.0, c * p)
    if not flips.any():
        # only layers with an alternative option can be forced
        w = p * np.array([len(network.layer(i).options()) > 1 for i in ids])
        if w.sum() > 0:
            flips[int(rng.choice(len(ids), p=w / w.sum()))] = True

    changes = {}
    for layer_id, flip in zip(ids, flips):
        if not flip:
            continue
        current = best[layer_id]
        options = [a for a in network.layer(layer_id).options() if a != current]
        if not options:
            continue
        candidates = [a for a in donor_values if a in options] or options
        changes[layer_id] = candidates[int(rng.integers(len(candidates)))]
    return best.replace(changes)


def _encodable(p: PruningProposal) -> bool:
    try:
        encode_graph(p)
    except EncodingError:
        return False
    return True


def generate_pool(
    best: Optional[PruningProposal],
    probs: Optional[Mapping[str, float]],
    network: NetworkSpec,
    cfg: ControllerConfig,
    rng: np.random.Generator,
) -> list[PruningProposal]:
    """Candidate pool: a random share plus mutations of ``best``.

    With no guidance yet (``probs`` is None) the whole pool is random. Each
    candidate is redrawn up to ``MAX_REDRAWS`` times to avoid duplicates; a
    duplicate surviving that is admitted with a warning. Proposals that cannot
    be encoded (e.g. everything skipped) are never admitted.
    """
    if probs is None or best is None:
        n_random = cfg.pool_size
    else:
        n_random = math.ceil(cfg.random_fraction * cfg.pool_size)

    seen = set() if best is None else {best}
    pool = []
    dupes = dropped = 0
    for slot in range(cfg.pool_size):
        def draw():
            if slot < n_random:
                return random_proposal(network, rng)
            return mutate(best, probs, cfg, rng)

        cand = None
        for _ in range(MAX_REDRAWS + 1):
            p = draw()
            if not _encodable(p):
                continue
            cand = p
            if p not in seen:
                break
        else:
            if cand is None:
                dropped += 1
                continue
            dupes += 1
        seen.add(cand)
        pool.append(cand)
    if dupes:
        log.warning("pool: admitted %d duplicates after %d redraws each", dupes, MAX_REDRAWS)
    if dropped:
        log.warning("pool: dropped %d slots with no encodable proposal", dropped)
    return pool
