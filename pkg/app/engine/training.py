"""
Ridge-regression gradients and model updates.

Loss over m rows: (1/2m)||X beta - Y||_F^2 + (lambda/2)||beta||_F^2.
Gradients exclude the regularizer; it is applied in update_model.
All accumulation is float64 regardless of the stored feature dtype.
"""

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from app.core.errors import DomainError, TrainingError
from app.engine.coding import CompositeParity
from app.schemas.simulation import TrainingHyperparams


@dataclass(frozen=True)
class ModelState:
    beta: np.ndarray  # q x c
    epoch: int = 0
    step_in_epoch: int = 0

    @classmethod
    def zeros(cls, q: int, c: int) -> "ModelState":
        return cls(beta=np.zeros((q, c), dtype=np.float64))


def _residual_product(features: np.ndarray, labels: np.ndarray, beta: np.ndarray) -> np.ndarray:
    x = features.astype(np.float64, copy=False)
    residual = x @ beta - labels.astype(np.float64, copy=False)
    return x.T @ residual


def local_gradient(features: np.ndarray, labels: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """(1/l) X^T (X beta - Y) over one client's rows."""
    rows = features.shape[0]
    if rows < 1:
        raise DomainError("local gradient needs at least one row")
    return _residual_product(features, labels, beta) / rows


def full_gradient(features: np.ndarray, labels: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """(1/m) X^T (X beta - Y) over the whole global batch."""
    return local_gradient(features, labels, beta)


def coded_gradient(parity: CompositeParity, beta: np.ndarray) -> np.ndarray:
    """Unnormalized X_c^T (X_c beta - Y_c) over the composite parity."""
    return _residual_product(parity.coded_features, parity.coded_labels, beta)


def weighted_gradient(
    features: np.ndarray, labels: np.ndarray, weights: np.ndarray, beta: np.ndarray
) -> np.ndarray:
    """sum_k w_k^2 x_k^T (x_k beta - y_k): the coded gradient with G^T G = I."""
    x = features.astype(np.float64, copy=False)
    residual = x @ beta - labels.astype(np.float64, copy=False)
    return x.T @ (residual * (weights.astype(np.float64) ** 2)[:, None])


def combine(
    coded: np.ndarray,
    returned: Sequence[tuple[int, np.ndarray]],
    m: int,
) -> np.ndarray:
    """(1/m)(coded + sum of load * client gradient over returned clients)."""
    if m < 1:
        raise DomainError(f"m must be positive, got {m}")
    total = np.array(coded, dtype=np.float64, copy=True)
    for load, grad in returned:
        total += load * grad
    return total / m


def lr_schedule(epoch: int, hyper: TrainingHyperparams) -> float:
    if epoch < 0:
        raise DomainError(f"epoch must be non-negative, got {epoch}")
    decays = sum(1 for e in hyper.decay_epochs if e <= epoch)
    return hyper.lr0 * hyper.decay**decays


def update_model(
    state: ModelState, gradient: np.ndarray, hyper: TrainingHyperparams
) -> ModelState:
    """beta <- beta - lr(epoch) * (g + lambda * beta)."""
    if not np.all(np.isfinite(gradient)):
        raise TrainingError(
            f"non-finite gradient at epoch {state.epoch}, step {state.step_in_epoch}"
        )
    lr = lr_schedule(state.epoch, hyper)
    beta = state.beta - lr * (gradient + hyper.lambda_ * state.beta)
    if not np.all(np.isfinite(beta)):
        raise TrainingError(f"model diverged at epoch {state.epoch}, step {state.step_in_epoch}")
    return replace(state, beta=beta)


def ridge_loss(
    features: np.ndarray, labels: np.ndarray, beta: np.ndarray, lambda_: float
) -> float:
    x = features.astype(np.float64, copy=False)
    residual = x @ beta - labels.astype(np.float64, copy=False)
    m = x.shape[0]
    return float(0.5 * np.sum(residual**2) / m + 0.5 * lambda_ * np.sum(beta**2))


def argmax_accuracy(beta: np.ndarray, features: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax prediction matches the argmax label."""
    scores = features.astype(np.float64, copy=False) @ beta
    hits = np.argmax(scores, axis=1) == np.argmax(labels, axis=1)
    return float(np.mean(hits))
