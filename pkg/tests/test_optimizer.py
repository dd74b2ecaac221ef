import math

import numpy as np
import pytest

from fedco.bounds import AssumptionParams, BoundObjective, DataStats, cumulative_bound
from fedco.errors import FeasibilityError, GuardError
from fedco.optimizer import (
    brute_force_opt,
    coopt_fl,
    f_tau,
    feasibility_check,
    gpu_closed_form,
    uniform_closed_form,
    uniform_s_star,
)
from fedco.resources import Budget, ClientProfile


def params(**kw):
    base = dict(rho=1.0, beta=2.0, c=1.0, delta=0.2, eta=0.01)
    base.update(kw)
    return AssumptionParams(**base)


def make_profiles(M, D, p=None, t_u=None, B=None):
    n = len(M)
    p = p or [1000.0] * n
    t_u = t_u or [0.0] * n
    return [
        ClientProfile(p=p[i], t_u=t_u[i], D=D[i], M=M[i], B=None if B is None else B[i])
        for i in range(n)
    ]


def budget_for_stot(s_tot, K=5, a=0.001, b=0.5, theta=1e9):
    # R sized so that floor((R - K*b)/(a*K)) == s_tot at tau = 1
    return Budget(R=K * (a * s_tot + b), theta=theta, a=a, b=b, K=K)


def objective_for(profiles, prm, G0=5.0, K=5):
    stats = DataStats(
        M=np.array([c.M for c in profiles], dtype=float),
        D=np.array([c.D for c in profiles], dtype=float),
    )
    return BoundObjective(params=prm, stats=stats, gap=G0, horizon=K)


class TestFeasibilityCheck:
    def test_boundary_deadline_infeasible(self):
        profiles = make_profiles([1.0], [10], t_u=[2.0])
        rep = feasibility_check(Budget(R=100, theta=10.0, a=0.001, b=1, K=5), profiles)
        assert not rep.feasible  # theta == K * t_u exactly

    def test_boundary_cost_infeasible(self):
        profiles = make_profiles([1.0], [10])
        rep = feasibility_check(Budget(R=5.0, theta=100, a=0.001, b=1, K=5), profiles)
        assert not rep.feasible

    def test_generous_budget_reports_slack(self):
        profiles = make_profiles([1.0, 2.0], [10, 20], t_u=[1.0, 2.0])
        rep = feasibility_check(Budget(R=100, theta=100, a=0.001, b=1, K=5), profiles)
        assert rep.feasible
        assert rep.time_slack == pytest.approx(90.0)
        assert rep.cost_slack == pytest.approx(95.0)


class TestUniformClosedForm:
    def test_s_star_example_values(self):
        # cost branch (R-Kb)/(a*tau*N*K) = 9000, slowest-client deadline
        # branch p*(theta-K*t_u)/(K*tau) = 40; deadline binds
        profiles = make_profiles([1.0] * 5, [100000] * 5, p=[10.0] * 5, t_u=[2.0] * 5)
        budget = Budget(R=1000.0, theta=100.0, a=0.001, b=10.0, K=10)
        assert uniform_s_star(2, budget, profiles) == pytest.approx(40.0)

    def test_loose_budget_clamps_to_data(self):
        profiles = make_profiles([1.0, 1.0], [30, 50])
        budget = Budget(R=1e9, theta=1e9, a=0.001, b=0.5, K=5)
        assert uniform_s_star(1, budget, profiles) == 30.0
        res = uniform_closed_form(budget, profiles, params(), G0=5.0, tau_max=4)
        assert np.all(res.s <= 30)

    def test_cost_binding_floor(self):
        profiles = make_profiles([1.0] * 3, [10000] * 3)
        K, a, b = 5, 0.001, 0.5
        budget = Budget(R=K * (a * 100.5 + b), theta=1e9, a=a, b=b, K=K)
        res = uniform_closed_form(budget, profiles, params(), G0=5.0, tau_max=1)
        assert res.tau == 1
        assert res.s[0] == int(100.5 // 3)

    def test_matches_grid_oracle_with_floor_slack(self):
        rng = np.random.default_rng(77)
        for _ in range(30):
            n = int(rng.integers(1, 5))
            profiles = make_profiles(
                M=rng.uniform(0.1, 3.0, n).tolist(),
                D=rng.integers(10, 80, n).tolist(),
                p=rng.uniform(2.0, 30.0, n).tolist(),
                t_u=rng.uniform(0.0, 2.0, n).tolist(),
            )
            K = int(rng.integers(2, 8))
            a, b = 0.002, 0.5
            worst = max(c.t_u for c in profiles)
            budget = Budget(
                R=K * (a * rng.uniform(20, 200) + b),
                theta=K * (worst + rng.uniform(1.0, 20.0)),
                a=a,
                b=b,
                K=K,
            )
            prm = params(delta=float(rng.uniform(0, 1)))
            G0 = float(rng.uniform(0.5, 10.0))
            tau_max = int(rng.integers(1, 7))
            try:
                res = uniform_closed_form(budget, profiles, prm, G0, tau_max)
            except FeasibilityError:
                continue
            stats = DataStats(
                M=np.array([c.M for c in profiles]), D=np.array([float(c.D) for c in profiles])
            )
            # integer grid oracle over (tau, uniform s)
            best_val, best_pt = math.inf, None
            for tau in range(1, tau_max + 1):
                smax = int(math.floor(uniform_s_star(tau, budget, profiles) + 1e-12))
                for s in range(1, max(smax, 0) + 1):
                    v = cumulative_bound(K, tau, np.full(n, s), prm, stats, G0)
                    if v < best_val:
                        best_val, best_pt = v, (tau, s)
            assert best_pt is not None
            # sandwich: relaxed f <= grid best <= integer decision <= grid-best neighbor
            relaxed = f_tau(res.tau, budget, profiles, prm, G0)
            assert relaxed <= best_val * (1 + 1e-12)
            assert best_val <= res.objective_value * (1 + 1e-12)
            tg, sg = best_pt
            neighbor = cumulative_bound(K, tg, np.full(n, max(1, sg - 1)), prm, stats, G0)
            assert res.objective_value <= neighbor * (1 + 1e-12)

    def test_tau_star_shrinks_to_one_with_horizon(self):
        # per-round budgets held fixed (R, theta proportional to K)
        profiles = make_profiles([3.0] * 4, [2000] * 4, p=[50.0] * 4, t_u=[0.5] * 4)
        prm = params(eta=0.005, c=1.0, beta=2.0, delta=0.05, rho=1.0)
        taus = []
        for K in (5, 100, 2000):
            budget = Budget(R=K * (0.0005 * 32 + 0.4), theta=K * 12.0, a=0.0005, b=0.4, K=K)
            res = uniform_closed_form(budget, profiles, prm, G0=2.0, tau_max=8)
            taus.append(res.tau)
        assert all(b <= a for a, b in zip(taus, taus[1:]))
        assert taus[0] > 1
        assert taus[-1] == 1

    def test_infeasible_rejected(self):
        profiles = make_profiles([1.0], [10], t_u=[2.0])
        with pytest.raises(FeasibilityError):
            uniform_closed_form(
                Budget(R=100, theta=10.0, a=0.001, b=1, K=5), profiles, params(), 1.0, 4
            )


class TestCoOptFL:
    def test_symmetric_split(self):
        profiles = make_profiles([1.0] * 3, [10] * 3)
        budget = budget_for_stot(30)
        res = coopt_fl(objective_for(profiles, params()), profiles, budget, tau_max=1)
        assert list(res.s) == [10, 10, 10]

    def test_cauchy_proportional(self):
        # sqrt(M)*D = [10, 20] -> s = [10, 20]
        profiles = make_profiles([1.0, 4.0], [10, 10], B=[30, 30])
        # D is also the data cap; lift it via the variance weights instead
        profiles = make_profiles([1.0, 4.0], [10, 10])
        budget = budget_for_stot(30)
        obj = objective_for(profiles, params())
        res = coopt_fl(obj, profiles, budget, tau_max=1)
        assert list(res.s) == [10, 10]  # data caps D_i = 10 bind here
        # with roomy data counts the pure proportional split appears
        profiles = make_profiles([1.0, 4.0], [100, 100])
        weights_ratio_preserved = coopt_fl(
            objective_for(profiles, params()), profiles, budget_for_stot(30), tau_max=1
        )
        s = weights_ratio_preserved.s
        assert s[1] == pytest.approx(2 * s[0], abs=1)
        assert s.sum() == 30

    def test_time_capped_client_reallocates(self):
        # client 2 deadline-capped at 15; remainder flows to client 1
        profiles = [
            ClientProfile(p=1000.0, t_u=0.0, D=100, M=1.0),
            ClientProfile(p=15.0, t_u=0.0, D=100, M=4.0),
        ]
        K, a, b = 5, 0.001, 0.5
        budget = Budget(R=K * (a * 30 + b), theta=K * 1.0, a=a, b=b, K=K)
        obj = objective_for(profiles, params())
        res = coopt_fl(obj, profiles, budget, tau_max=1)
        assert list(res.s) == [15, 15]
        assert res.binding[1] == "time-bound"
        ref = brute_force_opt(obj, profiles, budget, tau_max=1)
        assert res.objective_value == ref.objective_value

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(99)
        checked = 0
        while checked < 60:
            n = int(rng.integers(1, 5))
            profiles = make_profiles(
                M=rng.uniform(0.0, 4.0, n).tolist(),
                D=rng.integers(2, 60, n).tolist(),
                p=rng.uniform(0.5, 20.0, n).tolist(),
                t_u=rng.uniform(0.0, 3.0, n).tolist(),
            )
            K = int(rng.integers(1, 8))
            a, b = float(rng.uniform(0.001, 0.01)), float(rng.uniform(0.1, 2.0))
            worst = max(c.t_u for c in profiles)
            budget = Budget(
                R=K * (a * float(rng.integers(n, 41)) + b),
                theta=K * (worst + float(rng.uniform(0.5, 30.0))),
                a=a,
                b=b,
                K=K,
            )
            obj = objective_for(profiles, params(delta=float(rng.uniform(0, 1))), K=K)
            tau_max = int(rng.integers(1, 5))
            try:
                got = coopt_fl(obj, profiles, budget, tau_max)
            except FeasibilityError:
                continue
            want = brute_force_opt(obj, profiles, budget, tau_max)
            assert got.objective_value == want.objective_value
            checked += 1

    def test_constraints_hold(self):
        rng = np.random.default_rng(5)
        for _ in range(40):
            n = int(rng.integers(1, 5))
            profiles = make_profiles(
                M=rng.uniform(0.1, 4.0, n).tolist(),
                D=rng.integers(2, 60, n).tolist(),
                p=rng.uniform(0.5, 20.0, n).tolist(),
                t_u=rng.uniform(0.0, 3.0, n).tolist(),
            )
            K = int(rng.integers(1, 8))
            a, b = 0.002, 0.5
            worst = max(c.t_u for c in profiles)
            budget = Budget(
                R=K * (a * float(rng.integers(n, 80)) + b),
                theta=K * (worst + float(rng.uniform(0.5, 30.0))),
                a=a,
                b=b,
                K=K,
            )
            try:
                res = coopt_fl(objective_for(profiles, params(), K=K), profiles, budget, 4)
            except FeasibilityError:
                continue
            tau, s = res.tau, res.s
            assert budget.K * (budget.a * tau * s.sum() + budget.b) <= budget.R + 1e-9
            for i, c in enumerate(profiles):
                assert budget.K * (tau * s[i] / c.p + c.t_u) <= budget.theta + 1e-9
                assert 1 <= s[i] <= c.D

    def test_proportionality_within_one_unit_without_caps(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            n = int(rng.integers(2, 5))
            M = rng.uniform(0.2, 4.0, n)
            profiles = make_profiles(M=M.tolist(), D=rng.integers(50, 90, n).tolist())
            s_tot = int(rng.integers(10, 41))
            budget = budget_for_stot(s_tot)
            res = coopt_fl(objective_for(profiles, params()), profiles, budget, tau_max=1)
            w = np.sqrt(M) * np.array([c.D for c in profiles])
            prop = s_tot * w / w.sum()
            assert np.all(np.abs(res.s - prop) <= 1.0 + 1e-9)

    def test_variance_scaling_leaves_argmin_unchanged(self):
        profiles = make_profiles([0.5, 2.0, 1.0], [40, 25, 60])
        budget = budget_for_stot(35)
        res1 = coopt_fl(objective_for(profiles, params()), profiles, budget, tau_max=3)
        scaled = make_profiles([2.0, 8.0, 4.0], [40, 25, 60])
        res2 = coopt_fl(objective_for(scaled, params()), scaled, budget, tau_max=3)
        assert res1.tau == res2.tau
        assert np.array_equal(res1.s, res2.s)

    def test_operation_counters_bounded(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(2, 5))
            profiles = make_profiles(
                M=rng.uniform(0.1, 4.0, n).tolist(), D=rng.integers(10, 80, n).tolist()
            )
            s_tot = int(rng.integers(n, 41))
            res = coopt_fl(
                objective_for(profiles, params()), profiles, budget_for_stot(s_tot), tau_max=3
            )
            assert res.passes <= n + 1
            assert res.greedy_steps <= s_tot + n * n

    def test_per_client_infeasible_tau_skipped(self):
        # at tau=2 the slow client cannot fit one sample; tau=1 can
        profiles = [
            ClientProfile(p=100.0, t_u=0.0, D=50, M=1.0),
            ClientProfile(p=0.9, t_u=0.0, D=50, M=1.0),
        ]
        K = 1
        budget = Budget(R=K * (0.001 * 20 + 0.5), theta=1.2, a=0.001, b=0.5, K=K)
        res = coopt_fl(objective_for(profiles, params(), K=K), profiles, budget, tau_max=4)
        assert res.tau == 1

    def test_all_tau_infeasible_raises(self):
        profiles = [ClientProfile(p=0.1, t_u=0.0, D=50, M=1.0)]
        budget = Budget(R=100.0, theta=1.0, a=0.001, b=0.5, K=2)
        with pytest.raises(FeasibilityError):
            coopt_fl(objective_for(profiles, params(), K=2), profiles, budget, tau_max=3)


class TestGpuClosedForm:
    def mk(self, M, D, t_c, t_u=None):
        n = len(M)
        t_u = t_u or [0.0] * n
        return [
            ClientProfile(p=1000.0, t_u=t_u[i], D=D[i], M=M[i], t_c=t_c[i]) for i in range(n)
        ]

    def test_equal_clients_uniform_split(self):
        profiles = self.mk([1.0] * 4, [500] * 4, [0.1] * 4)
        budget = Budget(R=5 * (0.001 * 40 + 0.5), theta=1e6, a=0.001, b=0.5, K=5)
        res = gpu_closed_form(budget, profiles, params(), G0=5.0, tau_max=3)
        assert len(set(res.s.tolist())) == 1

    def test_tight_deadline_caps_tau(self):
        profiles = self.mk([1.0] * 2, [500] * 2, [1.0] * 2, t_u=[0.5] * 2)
        K = 4
        # f would prefer larger tau (big G0, small K), but theta allows only 1
        budget = Budget(R=K * (0.001 * 60 + 0.5), theta=K * (0.5 + 1.9), a=0.001, b=0.5, K=K)
        res = gpu_closed_form(budget, profiles, params(delta=0.0), G0=100.0, tau_max=6)
        assert res.tau == 1

    def test_single_client_reduces_to_uniform_structure(self):
        profiles = self.mk([2.0], [400], [0.01])
        budget = Budget(R=3 * (0.001 * 50 + 0.5), theta=1e6, a=0.001, b=0.5, K=3)
        res = gpu_closed_form(budget, profiles, params(), G0=5.0, tau_max=4)
        spend_per_round = (budget.R - budget.K * budget.b) / budget.K
        assert res.s[0] == int(spend_per_round / (budget.a * res.tau))

    def test_missing_tc_rejected(self):
        profiles = make_profiles([1.0], [10])
        with pytest.raises(FeasibilityError):
            gpu_closed_form(
                Budget(R=100, theta=100, a=0.001, b=0.5, K=2), profiles, params(), 1.0, 2
            )


class TestBruteForce:
    def test_single_feasible_point(self):
        profiles = make_profiles([1.0, 1.0], [1, 1])
        budget = budget_for_stot(2, K=1)
        res = brute_force_opt(objective_for(profiles, params(), K=1), profiles, budget, 1)
        assert list(res.s) == [1, 1]

    def test_empty_feasible_set(self):
        profiles = make_profiles([1.0, 1.0], [5, 5])
        budget = Budget(R=1.0 * (0.001 * 1 + 0.5), theta=1e9, a=0.001, b=0.5, K=1)
        with pytest.raises(FeasibilityError):
            brute_force_opt(objective_for(profiles, params(), K=1), profiles, budget, 2)

    def test_guard_on_large_instances(self):
        profiles = make_profiles([1.0] * 5, [10] * 5)
        with pytest.raises(GuardError):
            brute_force_opt(
                objective_for(profiles, params()), profiles, budget_for_stot(20), 1
            )
        profiles = make_profiles([1.0], [1000])
        with pytest.raises(GuardError):
            brute_force_opt(
                objective_for(profiles, params()), profiles, budget_for_stot(200), 1
            )

    def test_tie_breaks_lexicographic(self):
        # two identical clients: (14,16) and (16,14) tie; lex-smaller wins
        profiles = make_profiles([1.0, 1.0], [50, 50])
        budget = budget_for_stot(30, K=1)
        res = brute_force_opt(objective_for(profiles, params(), K=1), profiles, budget, 1)
        assert list(res.s) == [15, 15]
