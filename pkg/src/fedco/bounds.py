"""Convergence-bound evaluators used as optimization objectives.

The training-error bound is driven by a contraction factor q = 1 - eta*c*mu,
a per-round gradient-variance term scaled by sum(M_i D_i^2 / s_i), and a
local-bias term rho * h(tau)^2 where

    h(tau) = (delta/beta) * ((eta*beta + 1)^tau - 1) - eta*delta*tau.

Three evaluators share these pieces: the cumulative K-round bound, its
per-round marginal form with a data-freshness shift, and the online
approximation that replaces the unknown optimality gap with a measured
batch-loss proxy.  Everything here is a stateless pure function; the
variance reduction uses ``math.fsum`` so that mathematically tied batch
allocations evaluate to identical floats regardless of client order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

ETA_CLAMP_NOTE = "eta clamped to mu/(beta*mu_G^2)"


@dataclass(frozen=True)
class AssumptionParams:
    """Constants of the smoothness / PL / divergence assumptions.

    rho: quadratic-continuity constant (> 0)
    beta: smoothness constant (> 0)
    c: PL constant (0 < c <= beta and c <= 2*rho)
    delta: weighted gradient-divergence (>= 0, zero for i.i.d. clients)
    eta: learning rate, clamped into (0, mu/(beta*mu_G^2)]
    mu, mu_G: moment constants, both 1 under unbiased batch gradients
    """

    rho: float
    beta: float
    c: float
    delta: float
    eta: float
    mu: float = 1.0
    mu_G: float = 1.0
    notes: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.rho <= 0 or self.beta <= 0 or self.c <= 0:
            raise ParameterError("rho, beta, c must be positive")
        if self.delta < 0:
            raise ParameterError("delta must be nonnegative")
        if self.eta <= 0 or self.mu <= 0 or self.mu_G <= 0:
            raise ParameterError("eta, mu, mu_G must be positive")
        cap = self.mu / (self.beta * self.mu_G**2)
        if self.eta > cap:
            object.__setattr__(self, "eta", cap)
            object.__setattr__(self, "notes", self.notes + (ETA_CLAMP_NOTE,))


@dataclass(frozen=True)
class DataStats:
    """Per-client gradient-variance bounds M_i and data counts D_i (or D_i^k)."""

    M: np.ndarray
    D: np.ndarray

    def __post_init__(self) -> None:
        M = np.asarray(self.M, dtype=np.float64)
        D = np.asarray(self.D, dtype=np.float64)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "D", D)
        if M.shape != D.shape or M.ndim != 1 or M.size == 0:
            raise ParameterError("M and D must be matching nonempty vectors")
        if np.any(M < 0):
            raise ParameterError("variance bounds M_i must be nonnegative")
        if np.any(D < 1):
            raise ParameterError("data counts D_i must be at least 1")

    @property
    def total(self) -> float:
        return math.fsum(self.D.tolist())


def contraction_q(params: AssumptionParams) -> float:
    """Per-step contraction factor 1 - eta*c*mu, required to lie in (0, 1)."""
    q = 1.0 - params.eta * params.c * params.mu
    if not (0.0 < q < 1.0):
        raise ParameterError(f"contraction factor q={q} outside (0,1); reduce eta*c*mu")
    return q


def local_bias_h(tau: float, params: AssumptionParams) -> float:
    """Drift bound between federated and centralized trajectories over tau steps."""
    if tau < 1:
        raise ValueError("tau must be at least 1")
    d, b, e = params.delta, params.beta, params.eta
    return (d / b) * ((e * b + 1.0) ** tau - 1.0) - e * d * tau


def _local_bias_h_prime(tau: float, params: AssumptionParams) -> float:
    d, b, e = params.delta, params.beta, params.eta
    return (d / b) * (e * b + 1.0) ** tau * math.log(e * b + 1.0) - e * d


def variance_term(tau: float, s: np.ndarray, params: AssumptionParams, stats: DataStats) -> float:
    """beta*eta^2*(1-q^tau) / (2*D^2*(1-q)) * sum_i M_i D_i^2 / s_i."""
    q = contraction_q(params)
    s = np.asarray(s, dtype=np.float64)
    if np.any(s < 1):
        raise ValueError("batch sizes must be at least 1")
    inner = math.fsum((stats.M * stats.D**2 / s).tolist())
    dtot = stats.total
    return params.beta * params.eta**2 * (1.0 - q**tau) / (2.0 * dtot**2 * (1.0 - q)) * inner


def cumulative_bound(
    K: int,
    tau: int,
    s: np.ndarray,
    params: AssumptionParams,
    stats: DataStats,
    G0: float,
) -> float:
    """Expected-error bound after K rounds of tau local steps each."""
    if K < 1 or tau < 1:
        raise ValueError("K and tau must be at least 1")
    if G0 < 0:
        raise ValueError("initial gap G0 must be nonnegative")
    q = contraction_q(params)
    amplifier = (1.0 - q**K) / (1.0 - q)
    body = variance_term(tau, s, params, stats) + params.rho * local_bias_h(tau, params) ** 2
    return q ** (K * tau) * G0 + amplifier * body


def marginal_bound(
    tau_k: int,
    s_k: np.ndarray,
    params: AssumptionParams,
    stats_k: DataStats,
    prev_gap: float,
    psi_k: float,
) -> float:
    """One-round error bound with the data-freshness shift psi_k."""
    if tau_k < 1:
        raise ValueError("tau must be at least 1")
    q = contraction_q(params)
    body = variance_term(tau_k, s_k, params, stats_k)
    bias = params.rho * local_bias_h(tau_k, params) ** 2
    return q**tau_k * (prev_gap + psi_k) + body + bias


def approx_marginal_bound(
    tau_k: int,
    s_k: np.ndarray,
    params: AssumptionParams,
    stats_k: DataStats,
    Fhat: float,
) -> float:
    """Online objective: the marginal bound with the measured loss proxy Fhat."""
    if Fhat < 0:
        warnings.warn("negative loss proxy Fhat clamped to 0", RuntimeWarning, stacklevel=2)
        Fhat = 0.0
    return marginal_bound(tau_k, s_k, params, stats_k, prev_gap=Fhat, psi_k=0.0)


@dataclass(frozen=True)
class BoundObjective:
    """Shared (tau, s) -> bound evaluator handed to the solvers.

    ``horizon`` selects the cumulative K-round form (with ``gap`` = initial
    optimality gap); ``horizon=None`` selects the online marginal form (with
    ``gap`` = measured loss proxy).  The brute-force enumerator and the exact
    allocator both evaluate instances of this class, so their objective
    values are comparable with zero tolerance.
    """

    params: AssumptionParams
    stats: DataStats
    gap: float
    horizon: int | None = None

    def value(self, tau: int, s: np.ndarray) -> float:
        if self.horizon is None:
            return approx_marginal_bound(tau, s, self.params, self.stats, self.gap)
        return cumulative_bound(self.horizon, tau, s, self.params, self.stats, self.gap)

    def value_many(self, tau: int, S: np.ndarray) -> np.ndarray:
        """Vectorized evaluation over rows of S (screening only; exact
        comparisons re-evaluate winners through :meth:`value`)."""
        q = contraction_q(self.params)
        p = self.params
        st = self.stats
        inner = ((st.M * st.D**2)[None, :] / S).sum(axis=1)
        dtot = st.total
        var = p.beta * p.eta**2 * (1.0 - q**tau) / (2.0 * dtot**2 * (1.0 - q)) * inner
        bias = p.rho * local_bias_h(tau, p) ** 2
        gap = max(self.gap, 0.0)
        if self.horizon is None:
            return q**tau * gap + var + bias
        amplifier = (1.0 - q**self.horizon) / (1.0 - q)
        return q ** (self.horizon * tau) * gap + amplifier * (var + bias)
