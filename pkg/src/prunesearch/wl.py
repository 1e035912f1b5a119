"""Weisfeiler-Lehman subtree features and graph kernels over proposal graphs."""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .network import ProposalGraph


@dataclass(frozen=True)
class KernelConfig:
    h: int = 2
    normalize: bool = True
    signal_variance: float = 1.0

    def __post_init__(self):
        if self.h < 0:
            raise ValueError("h must be >= 0")
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be > 0")

    def to_dict(self) -> dict:
        return {"h": self.h, "normalize": self.normalize, "signal_variance": self.signal_variance}


@dataclass(frozen=True)
class WlFeatureMap:
    """Counts of WL labels over iterations ``0..h``.

    Keys are ``"<iteration>|<label>"``: the raw node label at iteration 0, a
    digest of the refined label afterwards. ``node_keys[i]`` lists the key node
    ``i`` carries at each iteration.
    """

    counts: dict[str, int]
    h: int
    node_keys: tuple[tuple[str, ...], ...] = field(default=(), compare=False, repr=False)

    def squared_norm(self) -> int:
        return sum(c * c for c in self.counts.values())

    def dot(self, other: "WlFeatureMap") -> int:
        a, b = (self.counts, other.counts)
        if len(a) > len(b):
            a, b = b, a
        return sum(c * b[k] for k, c in a.items() if k in b)

    def dumps(self) -> str:
        return json.dumps({"h": self.h, "counts": self.counts}, sort_keys=True)


def _refine(key: str, neighbor_keys: list[str], iteration: int) -> str:
    text = key + "(" + ",".join(sorted(neighbor_keys)) + ")"
    digest = hashlib.sha1(text.encode("utf-8")).hexdigest()[:16]
    return f"{iteration}|{digest}"


def wl_features(g: ProposalGraph, h: int) -> WlFeatureMap:
    adj = g.neighbors()
    current = [f"0|{label}" for label in g.labels]
    per_node = [[k] for k in current]
    for it in range(1, h + 1):
        current = [
            _refine(current[i], [current[j] for j in adj[i]], it) for i in range(len(current))
        ]
        for i, k in enumerate(current):
            per_node[i].append(k)
    counts = Counter(k for keys in per_node for k in keys)
    return WlFeatureMap(
        counts=dict(sorted(counts.items())),
        h=h,
        node_keys=tuple(tuple(keys) for keys in per_node),
    )


def kernel_from_features(f1: WlFeatureMap, f2: WlFeatureMap, cfg: KernelConfig) -> float:
    if not f1.counts or not f2.counts:
        raise ValueError("kernel undefined for an empty graph")
    raw = float(f1.dot(f2))
    if cfg.normalize:
        raw /= math.sqrt(f1.squared_norm() * f2.squared_norm())
    return cfg.signal_variance * raw


def kernel(g1: ProposalGraph, g2: ProposalGraph, cfg: KernelConfig = KernelConfig()) -> float:
    if len(g1) == 0 or len(g2) == 0:
        raise ValueError("kernel undefined for an empty graph")
    return kernel_from_features(wl_features(g1, cfg.h), wl_features(g2, cfg.h), cfg)


def gram_matrix(graphs, cfg: KernelConfig = KernelConfig()) -> np.ndarray:
    feats = [wl_features(g, cfg.h) for g in graphs]
    return gram_from_features(feats, cfg)


def gram_from_features(feats: list[WlFeatureMap], cfg: KernelConfig) -> np.ndarray:
    n = len(feats)
    K = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            K[i, j] = K[j, i] = kernel_from_features(feats[i], feats[j], cfg)
    return K
