"""Softmax-family losses over dot-product logits, with analytical gradients.

Every loss takes a ``B x K`` logits matrix and returns ``(loss, grad)`` where
``grad`` is d(loss)/d(logits). All reductions are batch means.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOSS_KINDS = ("triplet_softmax", "weighted", "focal")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "triplet_softmax"
    gamma_vilhub: float = 0.0
    gamma_focal: float = 2.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.gamma_vilhub < 0 or self.gamma_focal < 0:
            raise ValueError("loss scales must be nonnegative")


def log_softmax_rows(Z):
    Z = np.asarray(Z, dtype=np.float64)
    shifted = Z - Z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_rows(Z):
    Z = np.asarray(Z, dtype=np.float64)
    e = np.exp(Z - Z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _check_targets(Z, targets):
    t = np.asarray(targets)
    if t.ndim != 1 or t.shape[0] != Z.shape[0]:
        raise ValueError("targets must be a vector with one index per row")
    if np.any(t < 0) or np.any(t >= Z.shape[1]):
        raise ValueError("target index out of range")
    return t.astype(np.int64)


def triplet_softmax_loss(Z, targets, weights=None):
    """Mean of ``-w[t] * log p[t]``; unweighted when ``weights`` is None."""
    Z = np.asarray(Z, dtype=np.float64)
    t = _check_targets(Z, targets)
    B = Z.shape[0]
    rows = np.arange(B)
    logp = log_softmax_rows(Z)
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)[t]
    loss = float(np.mean(-w * logp[rows, t]))
    grad = np.exp(logp)
    grad[rows, t] -= 1.0
    grad *= (w / B)[:, None]
    return loss, grad


def _check_soft(Z, T):
    T = np.asarray(T, dtype=np.float64)
    if T.shape != Z.shape:
        raise ValueError(f"soft targets shape {T.shape} does not match logits {Z.shape}")
    if np.any(T < 0) or np.any(np.abs(T.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("each soft-target row must be a probability distribution")
    return T


def soft_target_loss(Z, soft_targets, weights=None):
    """Mean over rows of ``-sum_k w_k t_k log p_k``."""
    Z = np.asarray(Z, dtype=np.float64)
    T = _check_soft(Z, soft_targets)
    B = Z.shape[0]
    logp = log_softmax_rows(Z)
    wt = T if weights is None else T * np.asarray(weights, dtype=np.float64)[None, :]
    loss = float(np.mean(-(wt * logp).sum(axis=1)))
    grad = (np.exp(logp) * wt.sum(axis=1, keepdims=True) - wt) / B
    return loss, grad


def _focal_terms(logp, gamma):
    """Per-entry focal value ``-(1-p)^g log p`` and ``p * d/dp`` of it."""
    p = np.exp(logp)
    q = -np.expm1(logp)  # 1 - p without cancellation
    if gamma == 0.0:
        return -logp, -np.ones_like(p)
    mod = q ** gamma
    value = -mod * logp
    with np.errstate(divide="ignore", invalid="ignore"):
        lead = np.where(q > 0.0, gamma * q ** (gamma - 1.0) * p * logp, 0.0)
    return value, lead - mod


def focal_loss(Z, targets, gamma_focal=2.0, weights=None):
    """Mean of ``-w[t] (1 - p_t)^gamma log p_t``.

    ``targets`` may be class indices or soft rows; soft rows weight the
    per-class focal terms.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if np.asarray(targets).ndim == 2:
        T = _check_soft(Z, targets)
    else:
        t = _check_targets(Z, targets)
        T = np.zeros_like(Z)
        T[np.arange(Z.shape[0]), t] = 1.0
    if gamma_focal < 0:
        raise ValueError("focal gamma must be nonnegative")
    B = Z.shape[0]
    logp = log_softmax_rows(Z)
    value, a = _focal_terms(logp, float(gamma_focal))
    wt = T if weights is None else T * np.asarray(weights, dtype=np.float64)[None, :]
    loss = float(np.mean((wt * value).sum(axis=1)))
    c = wt * a
    grad = (c - np.exp(logp) * c.sum(axis=1, keepdims=True)) / B
    return loss, grad


def vilhub_value(P) -> float:
    """Hubness penalty straight from a (B, K) matrix of row probabilities."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] < 1:
        raise ValueError("expected a non-empty (B, K) probability matrix")
    # averaging P - 1/K (not P) keeps uniform rows at exactly zero
    dev = (P - 1.0 / P.shape[1]).mean(axis=0)
    return float(np.sum(dev * dev))


def vilhub_loss(Z):
    """Squared distance of the batch-mean softmax from the uniform distribution."""
    Z = np.asarray(Z, dtype=np.float64)
    B, K = Z.shape
    if B < 1:
        raise ValueError("empty batch")
    P = softmax_rows(Z)
    dev = (P - 1.0 / K).mean(axis=0)
    loss = vilhub_value(P)
    g = 2.0 * dev / B
    grad = P * (g[None, :] - (P @ g)[:, None])
    return loss, grad


def base_loss(Z, targets, config: LossConfig, weights=None):
    soft = np.asarray(targets).ndim == 2
    if config.kind == "focal":
        return focal_loss(Z, targets, config.gamma_focal, weights)
    if config.kind == "weighted" and weights is None:
        raise ValueError("weighted loss needs class weights")
    w = weights if config.kind == "weighted" else None
    if soft:
        return soft_target_loss(Z, targets, w)
    return triplet_softmax_loss(Z, targets, w)


def loss_components(Z, targets, config: LossConfig, weights=None):
    """Return ``(base, vilhub, grad)`` where grad is that of ``base + gamma * vilhub``."""
    base, grad = base_loss(Z, targets, config, weights)
    hub, hub_grad = vilhub_loss(Z)
    if config.gamma_vilhub > 0.0:
        grad = grad + config.gamma_vilhub * hub_grad
    return base, hub, grad


def combined_loss(Z, targets, config: LossConfig, weights=None):
    base, hub, grad = loss_components(Z, targets, config, weights)
    return base + config.gamma_vilhub * hub, grad
