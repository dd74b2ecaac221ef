"""Federated training loop over simulated heterogeneous clients.

One round: broadcast the plan and global model; clients estimate curvature
constants against their previous batch (from round 2 on), sync, fold stream
arrivals into their buffers, run tau local steps on fresh uniform batches,
and upload models plus measurements; the server aggregates by stream count,
charges realized time/cost, refreshes global estimates, and plans the next
round with the configured controller.

Timing is virtual: per-round compute/communication times come from the
client profiles (optionally perturbed by a seeded lognormal noise model),
never from the host clock, so runs are exactly reproducible.  A round is
executed only after a pre-check that its realized cost and wall time fit
the remaining budgets, which keeps the final totals strictly inside R and
theta.  Per-client RNG streams are derived from the master seed by client
index, so results do not depend on the order clients are stepped in.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import data as dt
from . import estimation as est
from . import models as md
from .bounds import AssumptionParams, BoundObjective, DataStats
from .errors import ConfigError, EmptyBufferError, FeasibilityError, ParameterError
from .optimizer import coopt_fl
from .resources import Budget, ClientProfile

DYNAMITE = "dynamite"
FEDAVG = "fedavg"
DYNAMIC_TAU = "dynamic_tau"
NO_STRAGGLER = "no_straggler"
UNIFORM_STATIC = "uniform_static"

CONTROLLER_KINDS = (DYNAMITE, FEDAVG, DYNAMIC_TAU, NO_STRAGGLER, UNIFORM_STATIC)

METRIC_COLUMNS = (
    "round",
    "sim_time_s",
    "cum_cost",
    "tau",
    "mean_batch",
    "min_batch",
    "max_batch",
    "train_loss",
    "test_acc",
    "theta_c",
    "R_c",
    "est_rho",
    "est_beta",
    "est_c",
    "est_delta",
)


@dataclass(frozen=True)
class ControllerSpec:
    """Which planner drives (tau_k, s_k) and its fixed parameters."""

    kind: str = FEDAVG
    tau: int = 2
    s: int = 32
    tau_max: int = 8

    def __post_init__(self) -> None:
        if self.kind not in CONTROLLER_KINDS:
            raise ConfigError(f"unknown controller {self.kind!r}")
        if self.tau < 1 or self.s < 1 or self.tau_max < 1:
            raise ConfigError("controller tau/s/tau_max must be positive")


@dataclass(frozen=True)
class NoiseSpec:
    """Lognormal multipliers on compute and communication times."""

    enabled: bool = False
    sigma: float = 0.1


@dataclass(frozen=True)
class RoundPlan:
    tau: int
    s: np.ndarray


@dataclass
class RoundOutcome:
    round_index: int
    wall_time: float
    cost: float
    train_loss: float
    test_acc: float
    tau: int
    executed_s: np.ndarray
    batch_losses: np.ndarray
    shortfalls: int


class ClientSim:
    """One simulated device: buffer, stream, local model, measurements."""

    def __init__(
        self,
        index: int,
        model: md.LossModel,
        eta: float,
        p_true: float,
        t_u_true: float,
        buffer: dt.Buffer,
        policy: str,
        stream: dt.ClientStream | None,
        seed_seq: np.random.SeedSequence,
        noise: NoiseSpec,
    ):
        self.index = index
        self.model = model
        self.eta = eta
        self.p_true = p_true
        self.t_u_true = t_u_true
        self.buffer = buffer
        self.policy = policy
        self.stream = stream
        batch_ss, stream_ss, noise_ss, mest_ss = seed_seq.spawn(4)
        self.batch_rng = np.random.default_rng(batch_ss)
        self.stream_rng = np.random.default_rng(stream_ss)
        self.noise_rng = np.random.default_rng(noise_ss)
        self.mest_rng = np.random.default_rng(mest_ss)
        self.noise = noise

        self.w = md.init_model(model, buffer.X.shape[1])
        self._pending_times = (1.0, 1.0)
        self.last_batch: tuple[np.ndarray, np.ndarray] | None = None
        self.last_batch_loss_at_global: float | None = None
        self.M = 0.0
        self.warm_params: tuple[float, float, float] | None = None
        self.p_smooth = est.SmoothedScalar()
        self.t_u_smooth = est.SmoothedScalar()
        if self.buffer.size > 0:
            X, y = self.buffer.contents()
            self.M = est.estimate_M(X, y, self.w, model, self.mest_rng)

    def _noise_factor(self) -> float:
        # one draw per call; drawn even when disabled to keep streams aligned
        z = self.noise_rng.normal()
        if not self.noise.enabled:
            return 1.0
        return float(np.exp(self.noise.sigma * z))

    def draw_round_times(self, plan_s: int, tau: int) -> tuple[float, float]:
        """Realized (compute_total, comm) seconds for this round's plan.

        Drawn before execution so the engine can pre-check budget fit; the
        compute part scales linearly if the executed batch is smaller.
        """
        xi_c = self._noise_factor()
        xi_u = self._noise_factor()
        compute = tau * plan_s / self.p_true * xi_c
        comm = self.t_u_true * xi_u
        self._pending_times = (xi_c, xi_u)
        return compute, comm

    def run_round(self, k: int, w_global: np.ndarray, plan: RoundPlan) -> dict:
        """Client-side protocol for round k; returns the upload report."""
        s_plan = int(plan.s[self.index])
        report: dict = {"index": self.index}

        # parameter estimation against the fresh global model (round >= 2)
        if self.last_batch is not None:
            Xb, yb = self.last_batch
            out = est.estimate_client_params(w_global, self.w, Xb, yb, self.model)
            if out is not None:
                self.warm_params = out
                report["stale"] = False
            else:
                report["stale"] = True
            if self.warm_params is not None:
                c_i, rho_i, beta_i = self.warm_params
                report["params"] = (c_i, rho_i, beta_i)
                report["loss_at_global"] = md.batch_loss(w_global, Xb, yb, self.model)
                report["grad_at_global"] = md.batch_gradient(w_global, Xb, yb, self.model)
                self.last_batch_loss_at_global = report["loss_at_global"]

        # sync, stream arrivals, buffer policy
        self.w = w_global.copy()
        if self.stream is not None:
            arrivals = self.stream.arrivals_for_round(k)
            dt.apply_policy(self.policy, self.buffer, arrivals, self.stream_rng)
        report["D_k"] = self.buffer.count

        # tau local steps on fresh uniform batches
        xi_c, xi_u = self._pending_times
        if self.buffer.size == 0:
            report["executed_s"] = 0
            report["shortfall"] = True
            report["batch_loss"] = math.nan
            compute_total = 0.0
        else:
            idx = dt.draw_batch_indices(self.buffer, s_plan, plan.tau, self.batch_rng)
            bufX, bufy = self.buffer.contents()
            self.w = md.run_local_steps(self.w, bufX, bufy, idx, self.eta, self.model)
            s_eff = idx.shape[1]
            report["executed_s"] = s_eff
            report["shortfall"] = s_eff < s_plan
            last_rows = idx[-1]
            Xb, yb = bufX[last_rows].copy(), bufy[last_rows].copy()
            new_loss_at_global = md.batch_loss(w_global, Xb, yb, self.model)
            report["batch_loss"] = new_loss_at_global
            # distribution-shift check: same reference point w_global for
            # this round's batch and the previous one
            if self.last_batch_loss_at_global is not None and est.refresh_M_policy(
                new_loss_at_global, self.last_batch_loss_at_global
            ):
                allX, ally = self.buffer.contents()
                self.M = est.estimate_M(allX, ally, w_global, self.model, self.mest_rng)
            self.last_batch = (Xb, yb)
            compute_total = plan.tau * s_eff / self.p_true * xi_c

        comm = self.t_u_true * xi_u
        report["compute_time"] = compute_total
        report["comm_time"] = comm
        if report["executed_s"] > 0:
            step_time = compute_total / plan.tau
            report["p_measured"] = self.p_smooth.update(report["executed_s"] / step_time)
        else:
            report["p_measured"] = self.p_smooth.value
        report["t_u_measured"] = self.t_u_smooth.update(comm)
        report["M"] = self.M
        report["w"] = self.w
        report["buffer_size"] = self.buffer.size
        return report

    def buffer_loss(self, w: np.ndarray) -> float:
        if self.buffer.size == 0:
            return math.nan
        X, y = self.buffer.contents()
        return md.batch_loss(w, X, y, self.model)


@dataclass
class _ServerState:
    """Latest global estimates, valid once every client reported twice."""

    rho: float = math.nan
    beta: float = math.nan
    c: float = math.nan
    delta: float = math.nan
    Fhat: float = math.nan
    M: np.ndarray | None = None
    p: np.ndarray | None = None
    t_u: np.ndarray | None = None
    ready: bool = False


class Engine:
    """Runs rounds until K is reached or the next plan cannot fit the budget."""

    def __init__(
        self,
        clients: list[ClientSim],
        model: md.LossModel,
        eta: float,
        budget: Budget,
        controller: ControllerSpec,
        test_set: dt.Dataset,
        eval_stride: int = 1,
        client_order: str = "forward",
    ):
        if not clients:
            raise ConfigError("need at least one client")
        self.clients = clients
        self.model = model
        self.eta = eta
        self.budget = budget
        self.controller = controller
        self.test_set = test_set
        self.eval_stride = max(1, eval_stride)
        self.client_order = client_order
        dim = clients[0].buffer.X.shape[1]
        self.w_global = md.init_model(model, dim)
        self.tracker = est.BudgetTracker(theta=budget.theta, R=budget.R)
        self.state = _ServerState()
        self.outcomes: list[RoundOutcome] = []
        self.plans: list[RoundPlan] = []
        self._last_eval: tuple[float, float] | None = None

    # ----- planning -----------------------------------------------------

    def _default_plan(self, k: int) -> RoundPlan:
        # adaptive controllers bootstrap with tau=1 until estimates exist
        tau = 1 if self.controller.kind in (DYNAMITE, DYNAMIC_TAU) else self.controller.tau
        s = np.array(
            [min(self.controller.s, max(1, c.buffer.size)) for c in self.clients],
            dtype=np.int64,
        )
        return RoundPlan(tau=tau, s=s)

    def _profiles_from_estimates(self) -> list[ClientProfile]:
        st = self.state
        out = []
        for i, c in enumerate(self.clients):
            out.append(
                ClientProfile(
                    p=float(st.p[i]),
                    t_u=float(st.t_u[i]),
                    D=max(1, c.buffer.count),
                    M=float(st.M[i]),
                    B=max(1, c.buffer.size),
                )
            )
        return out

    def _remaining_budget(self, k_done: int) -> Budget | None:
        k_rem = self.budget.K - k_done
        if k_rem < 1:
            return None
        return Budget(
            R=self.tracker.R_c,
            theta=self.tracker.theta_c,
            a=self.budget.a,
            b=self.budget.b,
            K=k_rem,
        )

    def _params_from_estimates(self) -> AssumptionParams:
        st = self.state
        return AssumptionParams(
            rho=st.rho, beta=st.beta, c=st.c, delta=st.delta, eta=self.eta
        )

    def plan_next_round(self, k_done: int) -> RoundPlan | None:
        """Plan round k_done + 1, or None to stop (budget infeasible)."""
        kind = self.controller.kind
        nxt = k_done + 1
        if kind in (FEDAVG, UNIFORM_STATIC):
            return self._default_plan(nxt)
        if kind == NO_STRAGGLER:
            return self._no_straggler_plan()
        if not self.state.ready:
            return self._default_plan(nxt)
        rem = self._remaining_budget(k_done)
        if rem is None:
            return None
        try:
            params = self._params_from_estimates()
            stats = DataStats(M=np.maximum(self.state.M, 0.0), D=np.array(
                [float(max(1, c.buffer.count)) for c in self.clients]))
            objective = BoundObjective(
                params=params, stats=stats, gap=max(self.state.Fhat, 0.0), horizon=None
            )
            if kind == DYNAMITE:
                res = coopt_fl(objective, self._profiles_from_estimates(), rem, self.controller.tau_max)
                return RoundPlan(tau=res.tau, s=res.s)
            return self._dynamic_tau_plan(objective, rem)
        except FeasibilityError:
            return None
        except ParameterError:
            warnings.warn("estimate-driven plan rejected; keeping previous plan", RuntimeWarning)
            return self.plans[-1] if self.plans else self._default_plan(nxt)

    def _dynamic_tau_plan(self, objective: BoundObjective, rem: Budget) -> RoundPlan | None:
        s = np.array(
            [min(self.controller.s, max(1, c.buffer.size)) for c in self.clients],
            dtype=np.int64,
        )
        best_tau, best_val = None, math.inf
        for tau in range(1, self.controller.tau_max + 1):
            cost = rem.K * (rem.a * tau * float(s.sum()) + rem.b)
            if cost > rem.R:
                continue
            times = [
                rem.K * (tau * int(s[i]) / self.state.p[i] + self.state.t_u[i])
                for i in range(len(self.clients))
            ]
            if max(times) > rem.theta:
                continue
            val = objective.value(tau, s)
            if val < best_val:
                best_tau, best_val = tau, val
        if best_tau is None:
            return None
        return RoundPlan(tau=best_tau, s=s)

    def _no_straggler_plan(self) -> RoundPlan:
        """Batch sizes proportional to true compute speeds, sum preserved."""
        n = len(self.clients)
        s_tot = self.controller.s * n
        p = np.array([c.p_true for c in self.clients])
        raw = s_tot * p / p.sum()
        base = np.floor(raw).astype(np.int64)
        base = np.maximum(base, 1)
        rem = s_tot - int(base.sum())
        if rem > 0:
            order = np.argsort(-(raw - np.floor(raw)), kind="stable")
            for j in range(rem):
                base[order[j % n]] += 1
        elif rem < 0:
            order = np.argsort(raw - np.floor(raw), kind="stable")
            j = 0
            while rem < 0 and j < 10 * n:
                i = order[j % n]
                if base[i] > 1:
                    base[i] -= 1
                    rem += 1
                j += 1
        return RoundPlan(tau=self.controller.tau, s=base)

    # ----- execution ----------------------------------------------------

    def _execution_order(self, k: int) -> list[int]:
        n = len(self.clients)
        if self.client_order == "reverse":
            return list(range(n - 1, -1, -1))
        if self.client_order == "shuffled":
            return np.random.default_rng(k).permutation(n).tolist()
        return list(range(n))

    def _precheck(self, plan: RoundPlan) -> tuple[bool, list[tuple[float, float]]]:
        """Draw this round's realized times and test fit against remaining
        budgets; batch shortfalls only shrink the realized numbers."""
        times = [
            c.draw_round_times(int(plan.s[i]), plan.tau) for i, c in enumerate(self.clients)
        ]
        wall = max(compute + comm for compute, comm in times)
        cost = est.round_cost(plan.tau, plan.s, self.budget.a, self.budget.b)
        fits = cost <= self.tracker.R_c and wall <= self.tracker.theta_c
        return fits, times

    def run_round(self, k: int, plan: RoundPlan) -> RoundOutcome:
        # counts before this round's arrivals weigh the uploaded estimates,
        # which were measured on the previous round's batches
        prev_counts = np.array([float(max(1, c.buffer.count)) for c in self.clients])
        reports: list[dict | None] = [None] * len(self.clients)
        for i in self._execution_order(k):
            reports[i] = self.clients[i].run_round(k, self.w_global, plan)
        reps: list[dict] = reports  # type: ignore[assignment]

        weights = [float(r["D_k"]) for r in reps]
        live = [i for i, w in enumerate(weights) if w > 0]
        if live:  # clients that never received data carry zero weight
            self.w_global = md.aggregate([reps[i]["w"] for i in live], [weights[i] for i in live])

        executed = np.array([int(r["executed_s"]) for r in reps], dtype=np.int64)
        wall = max(r["compute_time"] + r["comm_time"] for r in reps)
        cost = est.round_cost(plan.tau, executed, self.budget.a, self.budget.b)
        self.tracker.charge(wall, cost)

        self._update_estimates(reps, prev_counts)

        losses = np.array([c.buffer_loss(self.w_global) for c in self.clients])
        live = ~np.isnan(losses)
        wsum = np.array(weights)[live].sum()
        train_loss = float((np.array(weights)[live] * losses[live]).sum() / wsum) if wsum else math.nan

        if (k - 1) % self.eval_stride == 0 or self._last_eval is None:
            self._last_eval = md.evaluate(self.w_global, self.test_set.X, self.test_set.y, self.model)
        test_loss, test_acc = self._last_eval

        outcome = RoundOutcome(
            round_index=k,
            wall_time=wall,
            cost=cost,
            train_loss=train_loss,
            test_acc=test_acc,
            tau=plan.tau,
            executed_s=executed,
            batch_losses=np.array([r["batch_loss"] for r in reps]),
            shortfalls=sum(bool(r["shortfall"]) for r in reps),
        )
        self.outcomes.append(outcome)
        self.plans.append(RoundPlan(tau=plan.tau, s=executed))
        return outcome

    def _update_estimates(self, reps: list[dict], prev_counts: np.ndarray) -> None:
        if not all("params" in r for r in reps):
            return
        cs = np.array([r["params"][0] for r in reps])
        rhos = np.array([r["params"][1] for r in reps])
        betas = np.array([r["params"][2] for r in reps])
        rho, beta, c = est.aggregate_global_params(rhos, betas, cs, prev_counts)
        grads = [r["grad_at_global"] for r in reps]
        _, delta = est.estimate_divergence(grads, prev_counts)
        losses = np.array([r["loss_at_global"] for r in reps])
        d_now = np.array([float(max(1, r["D_k"])) for r in reps])
        st = self.state
        st.rho, st.beta, st.c, st.delta = rho, beta, c, delta
        st.Fhat = est.estimate_Fhat(losses, d_now)
        st.M = np.array([float(r["M"]) for r in reps])
        st.p = np.array([float(r["p_measured"]) for r in reps])
        st.t_u = np.array([float(r["t_u_measured"]) for r in reps])
        st.ready = True

    def run(self) -> list[dict]:
        """Execute rounds, returning one metrics row per executed round."""
        rows: list[dict] = []
        k = 0
        plan = self.plan_next_round(0) if self.budget.K >= 1 else None
        while k < self.budget.K and plan is not None:
            fits, _ = self._precheck(plan)
            if not fits:
                break
            k += 1
            out = self.run_round(k, plan)
            rows.append(self._metrics_row(out))
            plan = self.plan_next_round(k) if k < self.budget.K else None
        return rows

    def _metrics_row(self, out: RoundOutcome) -> dict:
        st = self.state
        ex = out.executed_s
        return {
            "round": out.round_index,
            "sim_time_s": self.tracker.spent_time,
            "cum_cost": self.tracker.spent_cost,
            "tau": out.tau,
            "mean_batch": float(ex.mean()),
            "min_batch": int(ex.min()),
            "max_batch": int(ex.max()),
            "train_loss": out.train_loss,
            "test_acc": out.test_acc,
            "theta_c": self.tracker.theta_c,
            "R_c": self.tracker.R_c,
            "est_rho": st.rho,
            "est_beta": st.beta,
            "est_c": st.c,
            "est_delta": st.delta,
        }


def metrics_to_csv(rows: list[dict]) -> str:
    """Render metrics rows with a stable 17-significant-digit format."""
    lines = [",".join(METRIC_COLUMNS)]
    for row in rows:
        cells = []
        for col in METRIC_COLUMNS:
            v = row[col]
            if isinstance(v, float):
                cells.append(format(v, ".17g"))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
