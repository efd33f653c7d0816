"""Bandit-feedback control: scalar costs only, no gradient access.

The controller executes each queried policy for exactly one disturbance
window (2H+1 steps) and reports the window's final cost to a pluggable
zeroth-order optimizer; system identification and disturbance estimation
run every step regardless. The repeat-and-average rule makes the
optimizer robust to noise that is subgaussian plus a small adversarial
component: each new point is queried s = ceil(4 sigma^2 / gamma_acc^2
ln n) times with sigma = sqrt(c+1) max(sigma_zeta, sigma_xi), and only
the average is trusted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controllers import RunAudit, Segment
from .costs import CostOracle
from .estimation import (DisturbanceLog, RidgeState, SystemEstimate,
                         estimate_disturbance, lambda_schedule, ridge_solve,
                         ridge_update)
from .lds import LinearSystem, rollout
from .policy import PolicyClassSpec, flatten, project_to_class, unflatten
from .rng import OPTIMIZER, substream


def robust_repeat_count(sigma_zeta: float, sigma_xi: float, c: float,
                        gamma_acc: float, n: int) -> int:
    """Repeats per fresh query point: ceil(4 sigma^2 / gamma_acc^2 ln n)."""
    if gamma_acc <= 0:
        raise ValueError("gamma_acc must be positive")
    sigma = math.sqrt(c + 1.0) * max(sigma_zeta, sigma_xi)
    return max(1, int(math.ceil(4.0 * sigma ** 2 / gamma_acc ** 2
                                * math.log(max(n, 2)))))


def robust_value_oracle(query_fn, sigma_zeta: float, sigma_xi: float,
                        c: float, gamma_acc: float, n: int) -> float:
    """Mean of s repeated queries; the averaging absorbs both noise kinds.

    The subgaussian part concentrates by Azuma; an adversarial part with
    sum of squares at most sigma_xi^2 contributes at most
    sigma_xi / sqrt(s) <= gamma_acc / 2 by Cauchy-Schwarz.
    """
    s = robust_repeat_count(sigma_zeta, sigma_xi, c, gamma_acc, n)
    total = 0.0
    for _ in range(s):
        total += float(query_fn())
    return total / s


class ZeroOrderOptimizer:
    """Reference optimizer: projected two-point descent with averaging.

    Each iteration picks a random direction, queries the two symmetric
    probe points s times each (the repeat rule above), forms a
    directional gradient estimate from the averaged responses, and takes
    a projected step. query() hands out one point per call and returns
    None once the budget is spent; report() feeds responses back.
    """

    def __init__(self, spec: PolicyClassSpec, n_budget: int,
                 sigma_zeta: float = 1.0, sigma_xi: float = 1.0,
                 c: float = 2.0, gamma_acc: float = 0.25,
                 probe_radius: float = 0.25, step0: float | None = None,
                 seed: int = 0):
        self.spec = spec
        self.n_budget = int(n_budget)
        self.s = robust_repeat_count(sigma_zeta, sigma_xi, c, gamma_acc,
                                     max(n_budget, 2))
        self.rng = substream(seed, OPTIMIZER)
        self.dim = spec.dim
        self.x = np.zeros(self.dim)
        self.step0 = (spec.flat_radius / 4.0 if step0 is None else step0)
        self.probe_radius = probe_radius
        self.k = 0
        self.n_switches = 0
        self.n_queries = 0
        self._phase = 0          # 0: fresh direction needed, else mid-plan
        self._dir = None
        self._plus = []
        self._minus = []
        self._point = None
        self._history = []

    def _project(self, flat):
        return flatten(project_to_class(unflatten(flat, self.spec), self.spec))

    def _new_direction(self) -> None:
        v = self.rng.standard_normal(self.dim)
        self._dir = v / np.linalg.norm(v)
        self._plus, self._minus = [], []
        self.k += 1

    def query(self):
        if self.n_queries >= self.n_budget:
            return None
        if self._dir is None:
            self._new_direction()
        done = len(self._plus) + len(self._minus)
        sign = 1.0 if done < self.s else -1.0
        point = self._project(self.x + sign * self.probe_radius * self._dir)
        if self._point is None or not np.array_equal(point, self._point):
            self.n_switches += 1
        self._point = point
        self.n_queries += 1
        return point.copy()

    def report(self, value: float) -> None:
        if len(self._plus) < self.s:
            self._plus.append(float(value))
        else:
            self._minus.append(float(value))
        if len(self._minus) == self.s:
            avg_p = float(np.mean(self._plus))
            avg_m = float(np.mean(self._minus))
            g = (avg_p - avg_m) / (2.0 * self.probe_radius) * self.dim
            step = self.step0 / math.sqrt(self.k)
            self.x = self._project(self.x - step * g * self._dir)
            self._history.append(self.x.copy())
            self._dir = None

    def best_point(self) -> np.ndarray:
        """Average of the last half of the iterates (stable readout)."""
        if not self._history:
            return self.x.copy()
        tail = self._history[len(self._history) // 2:]
        return self._project(np.mean(tail, axis=0))


class ConstantQueryOptimizer:
    """Always queries the same policy; used for unbiasedness checks."""

    def __init__(self, point):
        self.point = np.asarray(point, dtype=float)
        self.reports: list[float] = []
        self.n_switches = 0

    def query(self):
        return self.point.copy()

    def report(self, value: float) -> None:
        self.reports.append(float(value))


@dataclass
class BanditConfig:
    H: int
    G: float = 2.0
    lambda_scale: float = 1e-3


class BanditController:
    """Algorithm driver: one cost report to the optimizer per 2H+1 steps.

    The report carries c(x_t, u_t) for the window's last step, observed
    through the rollout's prev_cost channel one step later; the freshly
    queried policy takes over from the following step, so each query is
    executed for exactly one full window.
    """

    def __init__(self, d_x: int, d_u: int, kappa: float, gamma: float,
                 beta: float, optimizer, cfg: BanditConfig, A0, B0,
                 seed: int):
        self.spec = PolicyClassSpec(H=cfg.H, G=cfg.G, d_x=d_x, d_u=d_u)
        self.optimizer = optimizer
        lam = lambda_schedule(self.spec, kappa, beta, gamma, cfg.lambda_scale)
        prior = np.concatenate([np.asarray(A0, dtype=float),
                                np.asarray(B0, dtype=float)], axis=1)
        self.ridge = RidgeState(d_x + d_u, d_x, lam=lam, prior=prior)
        self.est = SystemEstimate(A_hat=np.asarray(A0, dtype=float).copy(),
                                  B_hat=np.asarray(B0, dtype=float).copy())
        self.wlog = DisturbanceLog(d_x)
        self.audit = RunAudit(kind="policy")
        self.window = 2 * cfg.H + 1
        self.t = 0
        self._phase = 0
        self._pending = None
        self._report_next = False
        self._truncated = False
        self._policy_flat = self._ask()
        self.audit.segments.append(Segment(start=0, end=None, kind="policy",
                                           point=self._policy_flat.copy(),
                                           epoch=1))

    def _ask(self) -> np.ndarray:
        point = self.optimizer.query()
        if point is None:
            if not self._truncated:
                self._truncated = True
                self.audit.events.append(
                    "optimizer budget exhausted; keeping last policy")
            return getattr(self, "_policy_flat",
                           flatten(unflatten(np.zeros(self.spec.dim), self.spec)))
        return np.asarray(point, dtype=float)

    def observe(self, x, prev_cost=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._pending is not None:
            xp, up = self._pending
            ridge_update(self.ridge, np.concatenate([xp, up]), x)
            self.est = ridge_solve(self.ridge)
            self.wlog.record(estimate_disturbance(x, self.est, xp, up))
        if self._report_next and prev_cost is not None:
            self.optimizer.report(prev_cost)
            self._report_next = False
            new_flat = self._ask()
            if not np.array_equal(new_flat, self._policy_flat):
                self.audit.segments[-1].end = self.t
                self.audit.segments.append(
                    Segment(start=self.t, end=None, kind="policy",
                            point=new_flat.copy(), epoch=1))
            self._policy_flat = new_flat

        self._phase += 1
        if self._phase == self.window:
            self._report_next = True   # cost of this step arrives next call
            self._phase = 0

        policy = unflatten(self._policy_flat, self.spec)
        u = policy.control(self.wlog.window(self.spec.H))
        self._pending = (x.copy(), u.copy())
        self.t += 1
        return u


def run_bandit(sys: LinearSystem, cost: CostOracle, optimizer,
               cfg: BanditConfig, seed: int, T: int, A0=None, B0=None,
               noise_kind: str = "standard-gaussian", deadline=None):
    """Bandit-feedback run; the controller sees only scalar costs.

    Initial estimates default to the stacked zero matrix, matching a
    caller that skipped warmup on a stable system.
    """
    from .lds import DisturbanceSource

    if A0 is None:
        A0 = np.zeros((sys.d_x, sys.d_x))
    if B0 is None:
        B0 = np.zeros((sys.d_x, sys.d_u))
    noise = DisturbanceSource(noise_kind, seed=seed, d_x=sys.d_x)
    ctrl = BanditController(sys.d_x, sys.d_u, sys.kappa, sys.gamma, sys.beta,
                            optimizer, cfg, A0, B0, seed)
    traj = rollout(sys, ctrl, noise, T, cost=cost, deadline=deadline)
    audit = ctrl.audit
    audit.close(T)
    audit.w_hat = ctrl.wlog.as_array()
    audit.extras["n_switches"] = getattr(optimizer, "n_switches", None)
    audit.extras["window"] = ctrl.window
    return traj, audit
