"""Gradient-perturbation baseline: online gradient descent over policies.

Assumes B is known and a stabilizing K is given. Each step re-estimates
A by unregularized least squares (a 1e-8 ridge for solvability only),
reads the newest disturbance residual, plays u = K x + policy(residual
window), and takes one projected gradient step on the reconstructed cost.
The reconstruction view is exact up to the truncated closed-loop power:
rebuilding the window's disturbances under the current estimate
reproduces the observed state to within (A_hat + B K)^{H+1} x_{t-H-1},
which the per-step audit records as (residual, bound) pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controllers import RunAudit, Segment
from .costs import CostOracle
from .estimation import (IllConditionedError, RidgeState, ridge_solve,
                         ridge_update)
from .lds import LinearSystem, rollout
from .policy import DfcPolicy, PolicyClassSpec, flatten, project_to_class


@dataclass
class GpcConfig:
    H: int
    G: float = 2.0
    eta: float = 0.05
    ls_lag: int | None = None   # transitions enter the LS after this delay
    record_sim_check: bool = True


class GpcController:
    """OGD over disturbance-feedback parameters with estimated A.

    The policy gradient is the cost subgradient pulled back through the
    closed-loop response coefficients (A_hat + B K)^i B and the stored
    disturbance residuals.
    """

    def __init__(self, d_x: int, d_u: int, B, K, cost: CostOracle,
                 cfg: GpcConfig):
        self.cfg = cfg
        self.cost = cost
        self.B = np.asarray(B, dtype=float)
        self.K = np.asarray(K, dtype=float)
        self.d_x, self.d_u = d_x, d_u
        self.spec = PolicyClassSpec(H=cfg.H, G=cfg.G, d_x=d_x, d_u=d_u)
        self.M = DfcPolicy.zero(self.spec)
        self.ridge = RidgeState(d_x, d_x, lam=1e-8)
        self.A_hat = np.zeros((d_x, d_x))
        self.lag = cfg.H if cfg.ls_lag is None else cfg.ls_lag
        self._lagged: list[tuple[np.ndarray, np.ndarray]] = []
        self.x_hist: list[np.ndarray] = []
        self.u_hist: list[np.ndarray] = []
        self.w_hat: list[np.ndarray] = []   # w_hat[t] estimated at its step
        self.sim_residuals: list[tuple[float, float]] = []
        self.audit = RunAudit(kind="policy")
        self.t = 0

    def _w(self, idx: int) -> np.ndarray:
        """w_hat for 1-based step idx; zero out of range."""
        if idx < 1 or idx > len(self.w_hat):
            return np.zeros(self.d_x)
        return self.w_hat[idx - 1]

    def _closed_loop_powers(self) -> np.ndarray:
        H = self.spec.H
        Acl = self.A_hat + self.B @ self.K
        P = np.empty((H + 2, self.d_x, self.d_x))
        P[0] = np.eye(self.d_x)
        for i in range(1, H + 2):
            P[i] = P[i - 1] @ Acl
        return P

    def _gradient(self, P: np.ndarray, t: int) -> np.ndarray:
        """d/dM of the reconstructed cost at the current policy."""
        H = self.spec.H
        PB = P[:H + 1] @ self.B                       # (H+1, d_x, d_u)
        # proxy pair at the current policy, all window slots sharing M
        v = np.zeros((H + 1, self.d_u))              # v[i] = v_{t-1-i}(M)
        for i in range(H + 1):
            win = np.stack([self._w(t - 1 - i - j) for j in range(H)]) \
                if H else np.zeros((0, self.d_x))
            v[i] = self.M.control(win)
        x_hat = np.zeros(self.d_x)
        for i in range(H + 1):
            x_hat += P[i] @ (self.B @ v[i] + self._w(t - i))
        v_now = self.M.control(np.stack([self._w(t - j) for j in range(H)]))
        u_hat = self.K @ x_hat + v_now
        g = np.asarray(self.cost.subgradient(x_hat, u_hat), dtype=float)
        g_x, g_u = g[:self.d_x], g[self.d_x:]
        g_eff = g_x + self.K.T @ g_u
        grad = np.zeros((H, self.d_u, self.d_x))
        for j in range(H):
            acc = np.zeros((self.d_u, self.d_x))
            for i in range(H + 1):
                acc += np.outer(PB[i].T @ g_eff, self._w(t - 1 - i - j))
            grad[j] = acc + np.outer(g_u, self._w(t - j))
        return grad

    def _sim_check(self, P: np.ndarray, t: int, u_t: np.ndarray,
                   c_now: float) -> None:
        """Reconstruct x_t from the current estimate; record the identity
        residual against the truncation bound."""
        H = self.spec.H
        if t <= H + 1:
            return
        w_tilde = {}
        for tau in range(t - H, t + 1):
            # recompute the window's residuals under the CURRENT A_hat
            x_tau = self.x_hist[tau - 1]
            x_prev = self.x_hist[tau - 2]
            u_prev = self.u_hist[tau - 2]
            w_tilde[tau] = x_tau - self.A_hat @ x_prev - self.B @ u_prev
        x_trunc = np.zeros(self.d_x)
        for i in range(H + 1):
            s = t - 1 - i
            v_real = (self.u_hist[s - 1] - self.K @ self.x_hist[s - 1]
                      if s >= 1 else np.zeros(self.d_u))
            w_term = w_tilde.get(t - i, np.zeros(self.d_x))
            x_trunc += P[i] @ (self.B @ v_real + w_term)
        x_back = self.x_hist[t - H - 2]
        resid = abs(c_now - float(self.cost.value(x_trunc, u_t)))
        bound = (self.cost.lipschitz
                 * float(np.linalg.norm(P[H + 1], 2))
                 * float(np.linalg.norm(x_back)))
        self.sim_residuals.append((resid, bound))

    def observe(self, x, prev_cost=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self.x_hist.append(x.copy())
        t = self.t + 1   # 1-based step index

        if t >= 2:
            x_prev, u_prev = self.x_hist[t - 2], self.u_hist[t - 2]
            self._lagged.append((x_prev.copy(),
                                 x.copy() - self.B @ u_prev))
            if len(self._lagged) > self.lag:
                reg_x, target = self._lagged.pop(0)
                ridge_update(self.ridge, reg_x, target)
            try:
                if self.ridge.t >= self.d_x:
                    self.A_hat = ridge_solve(self.ridge).A_hat
            except IllConditionedError:
                pass   # keep the zero prior until identifiable
            self.w_hat.append(x - self.A_hat @ x_prev - self.B @ u_prev)
        else:
            self.w_hat.append(np.zeros(self.d_x))

        P = self._closed_loop_powers()
        win = np.stack([self._w(t - j) for j in range(self.spec.H)])
        u = self.K @ x + self.M.control(win)
        self.u_hist.append(u.copy())

        if self.cfg.record_sim_check:
            c_now = float(self.cost.value(x, u))
            self._sim_check(P, t, u, c_now)

        grad = self._gradient(P, t)
        stepped = DfcPolicy(self.M.blocks - self.cfg.eta * grad)
        self.M = project_to_class(stepped, self.spec)
        self.audit.segments.append(
            Segment(start=self.t, end=self.t + 1, kind="policy",
                    point=flatten(self.M), epoch=1))
        self.t += 1
        return u


def run_gpc_baseline(sys: LinearSystem, K, cost: CostOracle, cfg: GpcConfig,
                     seed: int, T: int, noise_kind: str = "standard-gaussian",
                     deadline=None):
    """OGD baseline with known B and stabilizing K.

    The closed loop A + B K must be certifiably stable; the harness
    should check that before calling.
    """
    from .lds import DisturbanceSource

    noise = DisturbanceSource(noise_kind, seed=seed, d_x=sys.d_x)
    ctrl = GpcController(sys.d_x, sys.d_u, sys.B, K, cost, cfg)
    traj = rollout(sys, ctrl, noise, T, cost=cost, deadline=deadline)
    audit = ctrl.audit
    audit.close(T)
    audit.extras["sim_residuals"] = ctrl.sim_residuals
    audit.w_hat = np.stack(ctrl.w_hat) if ctrl.w_hat else None
    return traj, audit
