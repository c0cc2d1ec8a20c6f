"""Softmax regression kernel: the one numerically tested trainer shared by
the stacking model and the linear estimator primitive.

Training is full-batch gradient descent from a zero coefficient matrix
with a fixed step size, so results are a deterministic function of the
inputs and the gradient can be checked against finite differences.
"""

from __future__ import annotations

import numpy as np


class DivergedError(RuntimeError):
    """Training loss became non-finite (step size too large)."""


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for numerical stability."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def one_hot(y: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(y), n_classes))
    out[np.arange(len(y)), y] = 1.0
    return out


def loss_and_gradient(
    theta: np.ndarray, features: np.ndarray, y: np.ndarray, l2_lambda: float
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy plus (l2/2)*||theta||^2, and its gradient in theta."""
    n = len(features)
    probs = softmax(features @ theta.T)
    p_true = probs[np.arange(n), y]
    ce = float(-np.mean(np.log(np.clip(p_true, 1e-300, None))))
    loss = ce + 0.5 * l2_lambda * float(np.sum(theta * theta))
    grad = (probs - one_hot(y, theta.shape[0])).T @ features / n + l2_lambda * theta
    return loss, grad


def train_softmax(
    features: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    l2_lambda: float = 1e-3,
    epochs: int = 500,
    step: float = 0.1,
) -> tuple[np.ndarray, float]:
    """Gradient-descend a (C, F) coefficient matrix from zero.

    Returns (theta, final training loss).  Raises DivergedError if the
    loss ever becomes non-finite.
    """
    features = np.asarray(features, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    theta = np.zeros((n_classes, features.shape[1]))
    loss, _ = loss_and_gradient(theta, features, y, l2_lambda)
    for _ in range(epochs):
        loss, grad = loss_and_gradient(theta, features, y, l2_lambda)
        if not np.isfinite(loss):
            raise DivergedError(f"training loss diverged (step={step})")
        theta = theta - step * grad
    final_loss, _ = loss_and_gradient(theta, features, y, l2_lambda)
    if not np.isfinite(final_loss):
        raise DivergedError(f"training loss diverged (step={step})")
    return theta, final_loss


def predict_proba(theta: np.ndarray, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.shape[1] != theta.shape[1]:
        raise ValueError(
            f"feature dimension {features.shape[1]} does not match "
            f"coefficients ({theta.shape[1]})"
        )
    return softmax(features @ theta.T)
