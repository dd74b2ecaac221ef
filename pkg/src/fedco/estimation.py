"""Online estimation of bound and system parameters.

Client side: curvature/continuity constants from global-vs-local model
pairs, per-sample gradient variance from the buffer, compute speed from
measured step times.  Server side: data-weighted averages, gradient
divergence, the batch-loss proxy for the current optimality gap, and
remaining-budget tracking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import models as md

DENOM_FLOOR = 1e-12
C_FLOOR = 1e-12
M_SUBSAMPLE_CAP = 512


@dataclass
class ClientEstimates:
    c: float
    rho: float
    beta: float
    M: float
    batch_loss_at_global: float
    batch_gradient_at_global: np.ndarray
    stale: bool = False  # warm values reused after a degenerate round


@dataclass
class GlobalEstimates:
    rho: float
    beta: float
    c: float
    delta: float
    delta_per_client: np.ndarray
    Fhat: float


def estimate_client_params(
    w_global: np.ndarray,
    w_local: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    m: md.LossModel,
) -> tuple[float, float, float] | None:
    """(c_i, rho_i, beta_i) from one batch at the two model points.

    Returns None when a denominator degenerates (identical models or
    near-zero loss); the caller keeps the previous round's values.
    """
    dw = np.linalg.norm(w_local - w_global)
    loss_g = md.batch_loss(w_global, X, y, m)
    grad_g = md.batch_gradient(w_global, X, y, m)
    if dw < DENOM_FLOOR or loss_g < DENOM_FLOOR:
        return None
    loss_l = md.batch_loss(w_local, X, y, m)
    grad_l = md.batch_gradient(w_local, X, y, m)
    c_i = float(grad_g @ grad_g) / (2.0 * loss_g)
    rho_i = abs(loss_l - loss_g) / dw**2
    beta_i = float(np.linalg.norm(grad_l - grad_g)) / dw
    return c_i, rho_i, beta_i


def estimate_M(
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    m: md.LossModel,
    rng: np.random.Generator,
    cap: int = M_SUBSAMPLE_CAP,
) -> float:
    """Empirical per-sample gradient variance mean ||g_j - mean g||^2 over a
    uniformly subsampled slice of the buffer (at most ``cap`` samples)."""
    n = len(X)
    if n == 0:
        raise ValueError("buffer must be nonempty")
    if n == 1:
        return 0.0
    if n > cap:
        rows = rng.choice(n, size=cap, replace=False)
        X, y = X[rows], y[rows]
        n = cap
    grads = np.stack([md.sample_gradient(w, X[j], int(y[j]), m) for j in range(n)])
    center = grads.mean(axis=0)
    return float(np.mean(np.sum((grads - center) ** 2, axis=1)))


def estimate_divergence(
    gradients: list[np.ndarray], weights: np.ndarray
) -> tuple[np.ndarray, float]:
    """Per-client ||g_i - g|| and their data-weighted average, with
    g = sum(D_i g_i) / sum(D_i); all gradients taken at one model point."""
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum()
    g_bar = np.zeros_like(gradients[0])
    for gi, di in zip(gradients, weights):
        g_bar += di * gi
    g_bar /= total
    per = np.array([float(np.linalg.norm(gi - g_bar)) for gi in gradients])
    delta = float((weights * per).sum() / total)
    return per, delta


def aggregate_global_params(
    rhos: np.ndarray, betas: np.ndarray, cs: np.ndarray, weights: np.ndarray
) -> tuple[float, float, float]:
    """Data-weighted averages; c clamped into (0, min(beta, 2*rho)]."""
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum()
    rho = float((weights * rhos).sum() / total)
    beta = float((weights * betas).sum() / total)
    c = float((weights * cs).sum() / total)
    c = max(min(c, beta, 2.0 * rho), C_FLOOR)
    return rho, beta, c


def estimate_Fhat(batch_losses: np.ndarray, weights: np.ndarray) -> float:
    """Data-weighted mean of round-start batch losses (loss proxy)."""
    weights = np.asarray(weights, dtype=np.float64)
    return float((weights * np.asarray(batch_losses)).sum() / weights.sum())


def refresh_M_policy(current_loss: float, previous_loss: float, eps: float = 0.05) -> bool:
    """Re-estimate M_i only when the batch loss rose by strictly more than eps."""
    return current_loss - previous_loss > eps


class SmoothedScalar:
    """Exponential smoothing with factor 0.5; the first update passes through."""

    def __init__(self, factor: float = 0.5):
        self.factor = factor
        self.value: float | None = None

    def update(self, x: float) -> float:
        if self.value is None:
            self.value = float(x)
        else:
            self.value = self.factor * self.value + (1.0 - self.factor) * float(x)
        return self.value


@dataclass
class BudgetTracker:
    """Remaining time/cost budgets, charged per completed round."""

    theta: float
    R: float
    spent_time: float = 0.0
    spent_cost: float = 0.0
    _times: list[float] = field(default_factory=list)
    _costs: list[float] = field(default_factory=list)

    def charge(self, wall_time: float, cost: float) -> None:
        self._times.append(wall_time)
        self._costs.append(cost)
        self.spent_time = math.fsum(self._times)
        self.spent_cost = math.fsum(self._costs)

    @property
    def theta_c(self) -> float:
        return self.theta - self.spent_time

    @property
    def R_c(self) -> float:
        return self.R - self.spent_cost


def round_wall_time(tau: int, s: np.ndarray, p: np.ndarray, t_u: np.ndarray) -> float:
    """max_i (tau * s_i / p_i + t_u_i) under the nominal time model."""
    return float(np.max(tau * np.asarray(s) / np.asarray(p) + np.asarray(t_u)))


def round_cost(tau: int, s: np.ndarray, a: float, b: float) -> float:
    """a * tau * sum(s_i) + b."""
    return a * tau * float(np.sum(s)) + b
