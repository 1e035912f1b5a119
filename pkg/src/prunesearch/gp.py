"""Gaussian-process surrogate over proposal graphs.

The GP works on WL feature maps. Rewards are standardized before solving, and
all public outputs (means, variances, gradients) are in reward units.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .network import ProposalGraph, PruningProposal, encode_graph
from .wl import KernelConfig, WlFeatureMap, gram_from_features, wl_features

log = logging.getLogger(__name__)

JITTER_LADDER = (1e-6, 1e-4, 1e-2)
RESIDUAL_TOL = 1e-8


class ModelFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class Observation:
    proposal: PruningProposal
    accuracy: float
    latency_ms: float
    reward: float


@dataclass
class SurrogateModel:
    kernel_cfg: KernelConfig
    noise_variance: float
    train_graphs: list[ProposalGraph]
    train_features: list[WlFeatureMap]
    train_rewards_standardized: np.ndarray
    reward_mean: float
    reward_std: float
    weights: np.ndarray
    _vocab: dict = field(repr=False, default=None)
    _phi: np.ndarray = field(repr=False, default=None)
    _norms: np.ndarray = field(repr=False, default=None)
    _chol: tuple = field(repr=False, default=None)

    def __len__(self) -> int:
        return len(self.train_graphs)


def fit(
    observations: Sequence[Observation],
    cfg: KernelConfig = KernelConfig(),
    noise: float = 1e-6,
) -> SurrogateModel:
    """Fit the GP on ``observations``, escalating jitter if factorization fails."""
    if not observations:
        raise ModelFitError("need at least one observation")
    graphs = [encode_graph(o.proposal) for o in observations]
    return fit_graphs(graphs, [o.reward for o in observations], cfg, noise)


def fit_graphs(
    graphs: Sequence[ProposalGraph],
    rewards: Sequence[float],
    cfg: KernelConfig = KernelConfig(),
    noise: float = 1e-6,
) -> SurrogateModel:
    if len(graphs) == 0 or len(graphs) != len(rewards):
        raise ModelFitError("need one reward per graph and at least one graph")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    y_raw = np.asarray(rewards, dtype=float)
    if not np.all(np.isfinite(y_raw)):
        raise ModelFitError("rewards must be finite")
    mean = float(y_raw.mean())
    std = float(y_raw.std())
    if not std > 0:
        std = 1.0
    y = (y_raw - mean) / std

    feats = [wl_features(g, cfg.h) for g in graphs]
    K = gram_from_features(feats, cfg)
    n = len(y)

    ladder = [noise] + [j for j in JITTER_LADDER if j > noise]
    for jitter in ladder:
        A = K + jitter * np.eye(n)
        try:
            chol = linalg.cho_factor(A, lower=True)
        except linalg.LinAlgError:
            log.debug("cholesky failed at jitter %g", jitter)
            continue
        w = linalg.cho_solve(chol, y)
        resid = np.linalg.norm(A @ w - y)
        scale = np.linalg.norm(y)
        if not np.all(np.isfinite(w)) or resid > RESIDUAL_TOL * max(scale, 1.0):
            log.debug("residual %.3g too large at jitter %g", resid, jitter)
            continue
        if jitter != noise:
            log.warning("GP fit needed jitter %g (requested %g)", jitter, noise)
        break
    else:
        raise ModelFitError(f"factorization failed up to jitter {ladder[-1]:g}")

    vocab = {}
    for f in feats:
        for k in f.counts:
            vocab.setdefault(k, len(vocab))
    phi = np.zeros((n, len(vocab)))
    for i, f in enumerate(feats):
        for k, c in f.counts.items():
            phi[i, vocab[k]] = c
    return SurrogateModel(
        kernel_cfg=cfg,
        noise_variance=jitter,
        train_graphs=list(graphs),
        train_features=feats,
        train_rewards_standardized=y,
        reward_mean=mean,
        reward_std=std,
        weights=w,
        _vocab=vocab,
        _phi=phi,
        _norms=np.sqrt((phi**2).sum(axis=1)),
        _chol=chol,
    )


def _project(model: SurrogateModel, counts: Mapping[str, float]) -> tuple[np.ndarray, float]:
    """Query counts restricted to the training vocabulary, plus the full norm."""
    q = np.zeros(len(model._vocab))
    sq = 0.0
    for k, c in counts.items():
        sq += c * c
        idx = model._vocab.get(k)
        if idx is not None:
            q[idx] = c
    return q, math.sqrt(sq)


def _cross(model: SurrogateModel, Q: np.ndarray, qnorm: np.ndarray) -> np.ndarray:
    cfg = model.kernel_cfg
    k = Q @ model._phi.T
    if cfg.normalize:
        k = k / np.outer(qnorm, model._norms)
    return cfg.signal_variance * k


def _predict_projected(model, Q, qnorm):
    cfg = model.kernel_cfg
    if np.any(qnorm == 0):
        raise ValueError("cannot predict for an empty graph")
    k = _cross(model, Q, qnorm)
    mean_s = k @ model.weights
    prior = np.full(len(qnorm), cfg.signal_variance) if cfg.normalize else cfg.signal_variance * qnorm**2
    v = linalg.solve_triangular(model._chol[0], k.T, lower=True)
    var_s = prior - (v * v).sum(axis=0)
    if np.any(var_s < -1e-8):
        log.warning("negative predictive variance %.3g clamped to 0", var_s.min())
    var_s = np.maximum(var_s, 0.0)
    return mean_s * model.reward_std + model.reward_mean, var_s * model.reward_std**2


def predict_features(model: SurrogateModel, counts: Mapping[str, float]) -> tuple[float, float]:
    """Predict from a (possibly real-valued) WL count map."""
    q, qn = _project(model, counts)
    m, v = _predict_projected(model, q[None, :], np.array([qn]))
    return float(m[0]), float(v[0])


def predict(model: SurrogateModel, proposal: PruningProposal) -> tuple[float, float]:
    """Predictive (mean, variance) of the reward of ``proposal``."""
    f = wl_features(encode_graph(proposal), model.kernel_cfg.h)
    return predict_features(model, f.counts)


def predict_many(model: SurrogateModel, graphs: Sequence[ProposalGraph]) -> tuple[np.ndarray, np.ndarray]:
    if not graphs:
        return np.empty(0), np.empty(0)
    rows = [_project(model, wl_features(g, model.kernel_cfg.h).counts) for g in graphs]
    Q = np.vstack([r[0] for r in rows])
    qnorm = np.array([r[1] for r in rows])
    return _predict_projected(model, Q, qnorm)


def ei_from_moments(mean, variance, best_reward: float, xi: float = 0.0):
    """Expected improvement (maximization) from predictive moments."""
    mean = np.asarray(mean, dtype=float)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    gap = mean - best_reward - xi
    out = np.maximum(gap, 0.0)
    ok = sigma >= 1e-12
    if np.any(ok):
        z = gap[ok] / sigma[ok]
        out[ok] = gap[ok] * norm.cdf(z) + sigma[ok] * norm.pdf(z)
    # rounding in the closed form can dip a hair below zero
    return np.maximum(out, 0.0)


def expected_improvement(
    model: SurrogateModel, proposal: PruningProposal, best_reward: float, xi: float = 0.0
) -> float:
    if xi < 0:
        raise ValueError("xi must be >= 0")
    m, v = predict(model, proposal)
    return float(ei_from_moments(np.array([m]), np.array([v]), best_reward, xi)[0])


def feature_gradient(model: SurrogateModel, counts: Mapping[str, float]) -> dict[str, float]:
    """d(mean)/d(count) for every key in ``counts``, counts treated as reals."""
    cfg = model.kernel_cfg
    q, qn = _project(model, counts)
    w = model.weights
    if cfg.normalize:
        dots = model._phi @ q
        coef = w / (qn * model._norms)  # weight on each training vector
        lin = coef @ model._phi
        shrink = float((w * dots / model._norms).sum()) / qn**3
    else:
        lin = w @ model._phi
        shrink = 0.0
    scale = cfg.signal_variance * model.reward_std
    out = {}
    for k, c in counts.items():
        idx = model._vocab.get(k)
        g = (lin[idx] if idx is not None else 0.0) - shrink * c
        out[k] = float(scale * g)
    return out


def mean_gradient(model: SurrogateModel, proposal: PruningProposal) -> dict[str, float]:
    """Per-layer gradient of the predictive mean.

    A node's gradient is the sum of the feature gradients of the keys that
    node itself carries at each WL iteration. Skipped layers get no entry.
    """
    g = encode_graph(proposal)
    f = wl_features(g, model.kernel_cfg.h)
    fg = feature_gradient(model, f.counts)
    return {
        layer_id: float(sum(fg[k] for k in keys))
        for layer_id, keys in zip(g.layer_ids, f.node_keys)
    }
