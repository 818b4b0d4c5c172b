"""Mask-weighted voting losses for keypoint, axis, affinity and label heads.

Every loss is ``f_vote`` applied to a per-seed term. Each ``loss_*`` has a
matching ``loss_*_grad`` returning the analytic gradient with respect to the
prediction array (same shape as the prediction). Seeds whose mask weight is
zero are dropped before summation, so their values never reach the result.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import EmptyMask

INNER_MODES = ("signed", "abs", "squared")


@dataclass(frozen=True)
class AxisGroundTruth:
    n_star: np.ndarray
    endpoint_offsets_star: np.ndarray  # (n, 2, 3)
    keypoint_offsets_star: np.ndarray  # (n, 3)

    def __post_init__(self):
        n = np.asarray(self.n_star, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("n_star must be a unit vector")


def _weights(mask) -> tuple[np.ndarray, np.ndarray]:
    m = np.asarray(mask, dtype=float)
    if np.any(m < 0) or np.any(m > 1):
        raise ValueError("mask weights must lie in [0, 1]")
    keep = m > 0
    total = m[keep].sum()
    if total <= 0:
        raise EmptyMask("no seed carries positive mask weight")
    return keep, m / total


def f_vote(per_seed_loss, mask) -> float:
    """Mask-weighted mean of a per-seed loss, sum(l*M) / sum(M)."""
    loss = np.asarray(per_seed_loss, dtype=float)
    m = np.asarray(mask, dtype=float)
    if loss.shape != m.shape:
        raise ValueError(f"loss shape {loss.shape} != mask shape {m.shape}")
    keep, _ = _weights(m)
    return float(np.sum(loss[keep] * m[keep]) / np.sum(m[keep]))


def _vote_grad(per_seed_grad: np.ndarray, mask) -> np.ndarray:
    keep, w = _weights(mask)
    g = np.zeros_like(per_seed_grad, dtype=float)
    shape = (-1,) + (1,) * (per_seed_grad.ndim - 1)
    g[keep] = per_seed_grad[keep] * w[keep].reshape(shape)
    return g


def _safe_unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, norm, out=np.zeros_like(v), where=norm > 0)


# per-seed terms: each returns (values (n,), d value / d pred (pred shape))

def _keypoint_terms(pred, truth):
    diff = np.asarray(pred, float) - np.asarray(truth, float)
    return np.abs(diff).sum(axis=-1), np.sign(diff)


def _endpoint_terms(pred, truth):
    diff = np.asarray(pred, float) - np.asarray(truth, float)
    return np.abs(diff).sum(axis=(-2, -1)), np.sign(diff)


def _axis_terms(pred, truth, n_star):
    n = np.asarray(n_star, float)
    diff = np.asarray(pred, float) - np.asarray(truth, float)
    c = np.cross(diff, n)
    norms = np.linalg.norm(c, axis=-1)
    # d|d x n| / dd = n x (d x n) / |d x n|
    g = np.cross(n, _safe_unit(c))
    return norms.sum(axis=-1), g


def _direction_terms(pred, n_star):
    p = np.asarray(pred, float)
    n = np.asarray(n_star, float)
    vals = 1.0 - (p[:, 1] - p[:, 0]) @ n
    g = np.zeros_like(p)
    g[:, 0] = n
    g[:, 1] = -n
    return vals, g


def _norm_terms(pred, target):
    diff = np.asarray(pred, float) - np.asarray(target, float)
    return np.linalg.norm(diff, axis=-1), _safe_unit(diff)


def _inner_terms(pred, n_star, mode):
    if mode not in INNER_MODES:
        raise ValueError(f"inner mode must be one of {INNER_MODES}")
    n = np.asarray(n_star, float)
    dot = np.asarray(pred, float) @ n
    if mode == "signed":
        return dot, np.broadcast_to(n, (len(dot), 3)).copy()
    if mode == "abs":
        return np.abs(dot), np.sign(dot)[:, None] * n
    return dot**2, 2.0 * dot[:, None] * n


def _label_terms(logits, labels):
    l = np.asarray(logits, float)
    y = np.asarray(labels, float)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be binary")
    vals = np.maximum(l, 0.0) - l * y + np.log1p(np.exp(-np.abs(l)))
    return vals, expit(l) - y


def loss_keypoint(pred, truth, mask) -> float:
    """L1 offset loss summed over x, y, z."""
    return f_vote(_keypoint_terms(pred, truth)[0], mask)


def loss_keypoint_grad(pred, truth, mask) -> np.ndarray:
    return _vote_grad(_keypoint_terms(pred, truth)[1], mask)


def loss_endpoint(pred, truth, mask) -> float:
    """L1 loss over both endpoint channels; pred and truth are (n, 2, 3)."""
    return f_vote(_endpoint_terms(pred, truth)[0], mask)


def loss_endpoint_grad(pred, truth, mask) -> np.ndarray:
    return _vote_grad(_endpoint_terms(pred, truth)[1], mask)


def loss_axis(pred, truth, n_star, mask) -> float:
    """Distance of voter errors from the true axis line, summed over both endpoints."""
    return f_vote(_axis_terms(pred, truth, n_star)[0], mask)


def loss_axis_grad(pred, truth, n_star, mask) -> np.ndarray:
    return _vote_grad(_axis_terms(pred, truth, n_star)[1], mask)


def loss_direction(pred, n_star, mask) -> float:
    """1 - (t2 - t1) . n* per seed; pred is (n, 2, 3)."""
    return f_vote(_direction_terms(pred, n_star)[0], mask)


def loss_direction_grad(pred, n_star, mask) -> np.ndarray:
    return _vote_grad(_direction_terms(pred, n_star)[1], mask)


def loss_paf(pred, p_star, mask) -> float:
    p = np.asarray(p_star, float)
    if abs(np.linalg.norm(p) - 1.0) > 1e-9:
        raise ValueError("p_star must be a unit vector")
    return f_vote(_norm_terms(pred, p)[0], mask)


def loss_paf_grad(pred, p_star, mask) -> np.ndarray:
    return _vote_grad(_norm_terms(pred, p_star)[1], mask)


def loss_vector(pred, n_star, mask) -> float:
    return f_vote(_norm_terms(pred, n_star)[0], mask)


def loss_vector_grad(pred, n_star, mask) -> np.ndarray:
    return _vote_grad(_norm_terms(pred, n_star)[1], mask)


def loss_inner(pred, n_star, mask, mode: str = "signed") -> float:
    """Offset component along the axis.

    ``mode="signed"`` is the raw dot product and can go negative; ``"abs"``
    and ``"squared"`` are the non-negative alternatives.
    """
    return f_vote(_inner_terms(pred, n_star, mode)[0], mask)


def loss_inner_grad(pred, n_star, mask, mode: str = "signed") -> np.ndarray:
    return _vote_grad(_inner_terms(pred, n_star, mode)[1], mask)


def loss_label(logits, labels, mask) -> float:
    """Binary cross entropy with logits in the overflow-safe form."""
    return f_vote(_label_terms(logits, labels)[0], mask)


def loss_label_grad(logits, labels, mask) -> np.ndarray:
    return _vote_grad(_label_terms(logits, labels)[1], mask)


def numeric_gradient(fn: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of one array."""
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def gradient_relative_error(analytic, numeric) -> float:
    """||a - n|| / max(||a||, ||n||); 0 when both vanish."""
    a = np.asarray(analytic, float).ravel()
    n = np.asarray(numeric, float).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)
