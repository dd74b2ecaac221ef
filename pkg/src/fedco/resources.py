"""Budgets, client system profiles, and feasibility reporting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounds import DataStats
from .errors import ParameterError


@dataclass(frozen=True)
class Budget:
    """Joint cost/time budget for K aggregation rounds.

    R: total cost budget, charged K*(a*tau*s_tot + b) over a run
    theta: completion-time budget in seconds
    a: cost per processed sample
    b: cost per aggregation round
    K: rounds the budget must cover
    """

    R: float
    theta: float
    a: float
    b: float
    K: int

    def __post_init__(self) -> None:
        if self.a <= 0 or self.b < 0:
            raise ParameterError("cost coefficients must satisfy a > 0, b >= 0")
        if self.K < 1:
            raise ParameterError("budget horizon K must be at least 1")


@dataclass(frozen=True)
class ClientProfile:
    """System/data descriptors of one client.

    p: compute speed in samples/second (batch step time = s/p)
    t_u: communication seconds per round
    D: data count (stream count D_i^k when streaming)
    M: gradient-variance bound
    B: buffer capacity, caps the batch when set
    t_c: constant per-step compute time (GPU mode); overrides s/p when set
    """

    p: float
    t_u: float
    D: int
    M: float
    B: int | None = None
    t_c: float | None = None

    def __post_init__(self) -> None:
        if self.p <= 0:
            raise ParameterError("compute speed p must be positive")
        if self.t_u < 0:
            raise ParameterError("communication time t_u must be nonnegative")
        if self.D < 1:
            raise ParameterError("data count D must be at least 1")
        if self.M < 0:
            raise ParameterError("variance bound M must be nonnegative")
        if self.B is not None and self.B < 1:
            raise ParameterError("buffer capacity B must be at least 1")


def stats_from_profiles(profiles: list[ClientProfile]) -> DataStats:
    return DataStats(
        M=np.array([c.M for c in profiles], dtype=np.float64),
        D=np.array([c.D for c in profiles], dtype=np.float64),
    )


def data_caps(profiles: list[ClientProfile]) -> np.ndarray:
    """Per-client hard batch cap min(D_i, B_i)."""
    return np.array(
        [c.D if c.B is None else min(c.D, c.B) for c in profiles], dtype=np.int64
    )


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    violations: tuple[str, ...]
    time_slack: float
    cost_slack: float


def feasibility_check(budget: Budget, profiles: list[ClientProfile]) -> FeasibilityReport:
    """Strict preconditions: theta > K * max t_u and R > K * b."""
    violations: list[str] = []
    worst_comm = max(c.t_u for c in profiles)
    time_slack = budget.theta - budget.K * worst_comm
    cost_slack = budget.R - budget.K * budget.b
    if time_slack <= 0:
        for i, c in enumerate(profiles):
            if budget.theta - budget.K * c.t_u <= 0:
                violations.append(
                    f"client {i}: theta={budget.theta} <= K*t_u={budget.K * c.t_u}"
                )
    if cost_slack <= 0:
        violations.append(f"cost: R={budget.R} <= K*b={budget.K * budget.b}")
    return FeasibilityReport(
        feasible=not violations,
        violations=tuple(violations),
        time_slack=time_slack,
        cost_slack=cost_slack,
    )
