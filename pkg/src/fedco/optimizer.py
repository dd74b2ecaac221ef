"""Joint batch-size / aggregation-frequency solvers.

Four routes to a round plan:

* :func:`uniform_closed_form` — one shared batch size; the bound as a
  function of tau admits an analytic derivative, so tau comes from bisection
  and s from the binding budget cap.
* :func:`coopt_fl` — heterogeneous batch sizes.  Per tau: allocate
  proportionally to sqrt(M_i)*D_i (the Cauchy-Schwarz equality point),
  freeze clients that hit their deadline/data caps, re-allocate the
  remainder among the rest, then spend leftover integer units greedily on
  the largest marginal gain M_i*D_i^2/(s_i*(s_i+1)).
* :func:`gpu_closed_form` — constant per-step compute time, which turns the
  deadline into a cap on tau and leaves the proportional split exact.
* :func:`brute_force_opt` — exhaustive enumeration on small instances; the
  independent oracle the others are checked against.

All routes evaluate candidate plans through one shared
:class:`~fedco.bounds.BoundObjective`, so objective values across solvers
are directly comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import AssumptionParams, BoundObjective, contraction_q, local_bias_h, _local_bias_h_prime
from .errors import FeasibilityError, GuardError
from .resources import Budget, ClientProfile, FeasibilityReport, data_caps, feasibility_check, stats_from_profiles

__all__ = [
    "AllocationResult",
    "uniform_closed_form",
    "coopt_fl",
    "gpu_closed_form",
    "brute_force_opt",
    "feasibility_check",
    "FeasibilityReport",
    "f_tau",
    "uniform_s_star",
]

BIND_COST = "cost-bound"
BIND_TIME = "time-bound"
BIND_DATA = "data-bound"

_ROOT_TOL = 1e-6


@dataclass(frozen=True)
class AllocationResult:
    tau: int
    s: np.ndarray
    objective_value: float
    binding: tuple[str, ...]
    cost_slack_units: int = 0
    passes: int = 0
    greedy_steps: int = 0


def _time_cap(c: ClientProfile, budget: Budget, tau: int) -> int:
    cap = c.p * (budget.theta / (budget.K * tau) - c.t_u / tau)
    if cap >= 2**60:
        return 2**60
    return int(math.floor(cap + 1e-12))


def _spend_per_round(budget: Budget) -> float:
    """Per-round sample spend (R - K*b) / K implied by K(a*tau*s_tot + b) <= R."""
    return (budget.R - budget.K * budget.b) / budget.K


def uniform_s_star(tau: float, budget: Budget, profiles: list[ClientProfile]) -> float:
    """Real-valued optimal uniform batch size at tau: the tightest of the
    cost cap, the slowest client's deadline cap, and the data cap."""
    n = len(profiles)
    cost_cap = _spend_per_round(budget) / (budget.a * tau * n)
    time_cap = min(c.p * (budget.theta - budget.K * c.t_u) / (budget.K * tau) for c in profiles)
    return min(cost_cap, time_cap, float(data_caps(profiles).min()))


def f_tau(
    tau: float,
    budget: Budget,
    profiles: list[ClientProfile],
    params: AssumptionParams,
    G0: float,
) -> float:
    """Bound after K rounds with the optimal uniform batch size substituted.

    Evaluated with the real-valued s*(tau); flooring happens only in the
    final decision of :func:`uniform_closed_form`.
    """
    rep = feasibility_check(budget, profiles)
    if not rep.feasible:
        raise FeasibilityError("; ".join(rep.violations))
    s = uniform_s_star(tau, budget, profiles)
    if s < 1.0:
        raise FeasibilityError(f"uniform batch below 1 at tau={tau}")
    stats = stats_from_profiles(profiles)
    q = contraction_q(params)
    inner = math.fsum((stats.M * stats.D**2).tolist()) / s
    var = params.beta * params.eta**2 * (1.0 - q**tau) / (2.0 * stats.total**2 * (1.0 - q)) * inner
    amplifier = (1.0 - q**budget.K) / (1.0 - q)
    return q ** (budget.K * tau) * G0 + amplifier * (var + params.rho * local_bias_h(tau, params) ** 2)


def _f_tau_derivative(
    tau: float,
    budget: Budget,
    profiles: list[ClientProfile],
    params: AssumptionParams,
    G0: float,
) -> float:
    stats = stats_from_profiles(profiles)
    q = contraction_q(params)
    lq = math.log(q)
    n = len(profiles)
    cost_cap = _spend_per_round(budget) / budget.a
    time_cap = min(c.p * (budget.theta - budget.K * c.t_u) / budget.K for c in profiles)
    cap = min(cost_cap, time_cap)  # s*(tau) = cap/tau until the data cap bites
    min_d = float(data_caps(profiles).min())
    amplifier = (1.0 - q**budget.K) / (1.0 - q)
    vcoef = (
        params.beta
        * params.eta**2
        * math.fsum((stats.M * stats.D**2).tolist())
        / (2.0 * stats.total**2 * (1.0 - q))
    )
    if cap / tau < min_d:
        dvar = vcoef / cap * ((1.0 - q**tau) - tau * q**tau * lq)
    else:
        dvar = -vcoef / min_d * q**tau * lq
    h = local_bias_h(tau, params)
    dh = _local_bias_h_prime(tau, params)
    return (
        G0 * budget.K * lq * q ** (budget.K * tau)
        + amplifier * (dvar + 2.0 * params.rho * h * dh)
    )


def _bisect_root(fn, lo: float, hi: float, tol: float = _ROOT_TOL) -> float:
    flo, fhi = fn(lo), fn(hi)
    if flo >= 0.0:
        return lo
    if fhi <= 0.0:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if fn(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _uniform_binding(tau: int, budget: Budget, profiles: list[ClientProfile]) -> str:
    n = len(profiles)
    cost = _spend_per_round(budget) / (budget.a * tau * n)
    time = min(c.p * (budget.theta - budget.K * c.t_u) / (budget.K * tau) for c in profiles)
    mind = float(data_caps(profiles).min())
    tightest = min(cost, time, mind)
    if tightest == time:
        return BIND_TIME
    if tightest == mind:
        return BIND_DATA
    return BIND_COST


def uniform_closed_form(
    budget: Budget,
    profiles: list[ClientProfile],
    params: AssumptionParams,
    G0: float,
    tau_max: int,
) -> AllocationResult:
    """Co-optimal (tau, uniform s): stationary point of f by bisection on the
    analytic derivative, integer tau as the better of floor/ceil, and
    s = floor(s*(tau)).  Falls back to an integer scan outside the convexity
    window tau < 2/log(1/q)."""
    rep = feasibility_check(budget, profiles)
    if not rep.feasible:
        raise FeasibilityError("; ".join(rep.violations))
    if uniform_s_star(1.0, budget, profiles) < 1.0:
        raise FeasibilityError("budgets too tight for a unit batch at tau=1")
    q = contraction_q(params)
    tau_hi = tau_max
    while tau_hi > 1 and uniform_s_star(float(tau_hi), budget, profiles) < 1.0:
        tau_hi -= 1

    window = 2.0 / math.log(1.0 / q)
    if tau_hi < window:
        tau_hat = _bisect_root(
            lambda t: _f_tau_derivative(t, budget, profiles, params, G0), 1.0, float(tau_hi)
        )
        cand = sorted({int(math.floor(tau_hat)), int(math.ceil(tau_hat))})
        cand = [t for t in cand if 1 <= t <= tau_hi]
    else:
        cand = list(range(1, tau_hi + 1))

    best_tau, best_val = None, math.inf
    for t in cand:
        v = f_tau(float(t), budget, profiles, params, G0)
        if v < best_val:
            best_tau, best_val = t, v
    assert best_tau is not None
    s_int = int(math.floor(uniform_s_star(float(best_tau), budget, profiles)))
    s_int = max(1, min(s_int, int(data_caps(profiles).min())))
    s_vec = np.full(len(profiles), s_int, dtype=np.int64)
    stats = stats_from_profiles(profiles)
    obj = BoundObjective(params=params, stats=stats, gap=G0, horizon=budget.K)
    return AllocationResult(
        tau=best_tau,
        s=s_vec,
        objective_value=obj.value(best_tau, s_vec),
        binding=tuple(_uniform_binding(best_tau, budget, profiles) for _ in profiles),
    )


def gpu_closed_form(
    budget: Budget,
    profiles: list[ClientProfile],
    params: AssumptionParams,
    G0: float,
    tau_max: int,
) -> AllocationResult:
    """Constant-compute-time variant: the deadline caps tau instead of s,
    and the proportional sqrt(M_i)*D_i split is exact."""
    if any(c.t_c is None for c in profiles):
        raise FeasibilityError("gpu mode needs a constant per-step time t_c for every client")
    rep = feasibility_check(budget, profiles)
    if not rep.feasible:
        raise FeasibilityError("; ".join(rep.violations))
    stats = stats_from_profiles(profiles)
    q = contraction_q(params)
    spend = _spend_per_round(budget)
    weights = np.sqrt(stats.M) * stats.D
    wsum = float(weights.sum())

    tau_time = min((budget.theta - budget.K * c.t_u) / (budget.K * c.t_c) for c in profiles)
    tau_time = int(math.floor(tau_time + 1e-12))
    if tau_time < 1:
        raise FeasibilityError("deadline excludes even one local step per round")
    n = len(profiles)
    tau_hi = min(tau_max, max(1, int(math.floor(spend / (budget.a * n)))))

    def f_gpu(t: float) -> float:
        inner = wsum**2 * budget.a * t / spend if wsum > 0 else 0.0
        var = params.beta * params.eta**2 * (1.0 - q**t) / (2.0 * stats.total**2 * (1.0 - q)) * inner
        amp = (1.0 - q**budget.K) / (1.0 - q)
        return q ** (budget.K * t) * G0 + amp * (var + params.rho * local_bias_h(t, params) ** 2)

    def df_gpu(t: float) -> float:
        lq = math.log(q)
        amp = (1.0 - q**budget.K) / (1.0 - q)
        vc = (
            params.beta * params.eta**2 * wsum**2 * budget.a
            / (2.0 * stats.total**2 * (1.0 - q) * spend)
        )
        dvar = vc * ((1.0 - q**t) - t * q**t * lq)
        h = local_bias_h(t, params)
        return G0 * budget.K * lq * q ** (budget.K * t) + amp * (
            dvar + 2.0 * params.rho * h * _local_bias_h_prime(t, params)
        )

    window = 2.0 / math.log(1.0 / q)
    if tau_hi < window:
        tau_hat = _bisect_root(df_gpu, 1.0, float(tau_hi))
        cand = sorted({int(math.floor(tau_hat)), int(math.ceil(tau_hat))})
        cand = [t for t in cand if 1 <= t <= tau_hi]
    else:
        cand = list(range(1, tau_hi + 1))
    tau_f = min(cand, key=lambda t: (f_gpu(float(t)), t))
    tau_star = min(tau_f, tau_time, tau_max)

    s_tot = spend / (budget.a * tau_star)
    caps = data_caps(profiles)
    if wsum > 0:
        shares = np.floor(s_tot * weights / wsum).astype(np.int64)
    else:
        shares = np.full(n, int(s_tot // n), dtype=np.int64)
    s_vec = np.clip(shares, 1, caps)
    binding = []
    for i in range(n):
        if shares[i] >= caps[i]:
            binding.append(BIND_DATA)
        elif tau_star == tau_time and tau_time < tau_f:
            binding.append(BIND_TIME)
        else:
            binding.append(BIND_COST)
    obj = BoundObjective(params=params, stats=stats, gap=G0, horizon=budget.K)
    return AllocationResult(
        tau=tau_star,
        s=s_vec,
        objective_value=obj.value(tau_star, s_vec),
        binding=tuple(binding),
    )


def _marginal_gain(M: float, D: float, s: int) -> float:
    return M * D * D / (s * (s + 1.0))


def _allocate_for_tau(
    tau: int,
    profiles: list[ClientProfile],
    budget: Budget,
    stats_M: np.ndarray,
    stats_D: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, int, int, int] | None:
    """One CoOptFL allocation pass for a fixed tau.

    Returns (s, time_caps, slack_units, passes, greedy_steps) or None when
    this tau admits no feasible batch vector.
    """
    n = len(profiles)
    time_caps = np.array([_time_cap(c, budget, tau) for c in profiles], dtype=np.int64)
    caps = np.minimum(time_caps, data_caps(profiles))
    if caps.min() < 1:
        return None
    s_tot = int(math.floor(_spend_per_round(budget) / (budget.a * tau) + 1e-12))
    if s_tot < n:
        return None
    total_cap = int(caps.sum())
    target = min(s_tot, total_cap)
    slack = max(0, s_tot - total_cap)

    weight = np.sqrt(stats_M) * stats_D
    s = np.zeros(n, dtype=np.int64)
    active = list(range(n))
    s_r = float(s_tot)
    passes = 0
    changed = True
    while changed and active:
        changed = False
        passes += 1
        for i in list(active):
            denom = float(weight[active].sum())
            share = int(math.floor(s_r * weight[i] / denom)) if denom > 0 else 0
            s[i] = share
            if share >= caps[i]:
                s[i] = caps[i]
                s_r -= float(caps[i])
                active.remove(i)
                changed = True

    for i in active:
        if s[i] < 1:
            s[i] = 1
    total = int(s.sum())

    while total > target:
        # minimum-batch bumps can overshoot; shave the cheapest units, frozen
        # clients included (their caps are upper bounds, not pins)
        cand = [i for i in range(n) if s[i] > 1]
        drop = min(cand, key=lambda i: (_marginal_gain(stats_M[i], stats_D[i], int(s[i]) - 1), i))
        s[drop] -= 1
        total -= 1

    greedy = 0
    open_set = [i for i in active if s[i] < caps[i]]
    while total < target and open_set:
        pick = max(open_set, key=lambda i: (_marginal_gain(stats_M[i], stats_D[i], int(s[i])), -i))
        s[pick] += 1
        total += 1
        greedy += 1
        if s[pick] >= caps[pick]:
            open_set.remove(pick)

    # The floored proportional start can overshoot a client by one unit
    # relative to the integer optimum (marginal-gain equalization sits near
    # proportional - 1/2).  Single-unit transfers restore exact optimality:
    # for a separable convex objective, a point with no improving transfer
    # is a global minimum.
    while True:
        best_move, best_delta = None, 0.0
        for i in range(n):
            if s[i] <= 1:
                continue
            loss = _marginal_gain(stats_M[i], stats_D[i], int(s[i]) - 1)
            for j in range(n):
                if j == i or s[j] >= caps[j]:
                    continue
                # gains are pure functions of (client, s), so a cycle would
                # telescope to zero total delta; accepting delta > 0 cannot loop
                delta = _marginal_gain(stats_M[j], stats_D[j], int(s[j])) - loss
                if delta > best_delta:
                    best_move, best_delta = (i, j), delta
        if best_move is None:
            break
        i, j = best_move
        s[i] -= 1
        s[j] += 1
        greedy += 1
    return s, time_caps, slack, passes, greedy


def coopt_fl(
    objective: BoundObjective,
    profiles: list[ClientProfile],
    budget: Budget,
    tau_max: int,
) -> AllocationResult:
    """Exact heterogeneous batch allocation for each tau in [1, tau_max],
    returning the (tau, s) with the smallest objective (ties to smaller tau)."""
    stats_M = np.array([c.M for c in profiles], dtype=np.float64)
    stats_D = np.array([c.D for c in profiles], dtype=np.float64)
    best: AllocationResult | None = None
    for tau in range(1, tau_max + 1):
        out = _allocate_for_tau(tau, profiles, budget, stats_M, stats_D)
        if out is None:
            continue
        s, time_caps, slack, passes, greedy = out
        val = objective.value(tau, s)
        if best is None or val < best.objective_value:
            dcaps = data_caps(profiles)
            binding = tuple(
                BIND_TIME if s[i] == time_caps[i] else (BIND_DATA if s[i] == dcaps[i] else BIND_COST)
                for i in range(len(profiles))
            )
            best = AllocationResult(
                tau=tau,
                s=s.copy(),
                objective_value=val,
                binding=binding,
                cost_slack_units=slack,
                passes=passes,
                greedy_steps=greedy,
            )
    if best is None:
        raise FeasibilityError("no tau in [1, tau_max] admits a feasible batch vector")
    return best


_GRID_CACHE: dict[tuple[int, int], np.ndarray] = {}
_BRUTE_N_MAX = 4
_BRUTE_S_MAX = 48


def _simplex_grid(n: int, smax: int) -> np.ndarray:
    """All integer vectors with 1 <= s_i and sum <= smax, in lexicographic
    order (so the first minimal row is also the lex-smallest)."""
    key = (n, smax)
    grid = _GRID_CACHE.get(key)
    if grid is None:
        axes = [np.arange(1, smax - n + 2, dtype=np.int64)] * n
        mesh = np.meshgrid(*axes, indexing="ij")
        flat = np.stack([m.reshape(-1) for m in mesh], axis=1)
        grid = flat[flat.sum(axis=1) <= smax]
        _GRID_CACHE[key] = grid
    return grid


def brute_force_opt(
    objective: BoundObjective,
    profiles: list[ClientProfile],
    budget: Budget,
    tau_max: int,
    s_cap: int = 40,
) -> AllocationResult:
    """Exhaustive minimum of the objective over feasible integer (tau, s).

    Oracle for the other solvers; refuses instances beyond the guard
    (N <= 4, total batch <= s_cap <= 48).  Ties break to smaller tau, then
    lexicographically smaller s.
    """
    n = len(profiles)
    if n > _BRUTE_N_MAX or s_cap > _BRUTE_S_MAX:
        raise GuardError(f"brute force limited to N<={_BRUTE_N_MAX}, s_cap<={_BRUTE_S_MAX}")
    dcaps = data_caps(profiles)
    best: AllocationResult | None = None
    for tau in range(1, tau_max + 1):
        time_caps = np.array([_time_cap(c, budget, tau) for c in profiles], dtype=np.int64)
        caps = np.minimum(time_caps, dcaps)
        if caps.min() < 1:
            continue
        s_tot = int(math.floor(_spend_per_round(budget) / (budget.a * tau) + 1e-12))
        if s_tot < n:
            continue
        reach = min(s_tot, int(caps.sum()))
        if reach > s_cap:
            raise GuardError(f"feasible batch total {reach} exceeds guard {s_cap}")
        grid = _simplex_grid(n, s_cap)
        mask = (grid.sum(axis=1) <= s_tot) & np.all(grid <= caps, axis=1)
        rows = grid[mask]
        if rows.shape[0] == 0:
            continue
        v = objective.value_many(tau, rows.astype(np.float64))
        vmin = float(v.min())
        tol = 1e-9 * (1.0 + abs(vmin))
        near = np.flatnonzero(v <= vmin + tol)
        exact_best, exact_row = math.inf, None
        for i in near:
            ev = objective.value(tau, rows[i])
            if ev < exact_best:
                exact_best, exact_row = ev, rows[i]
        assert exact_row is not None
        if best is None or exact_best < best.objective_value:
            binding = tuple(
                BIND_TIME
                if exact_row[i] == time_caps[i]
                else (BIND_DATA if exact_row[i] == dcaps[i] else BIND_COST)
                for i in range(n)
            )
            best = AllocationResult(
                tau=tau,
                s=np.array(exact_row, dtype=np.int64),
                objective_value=exact_best,
                binding=binding,
            )
    if best is None:
        raise FeasibilityError("empty feasible set")
    return best
