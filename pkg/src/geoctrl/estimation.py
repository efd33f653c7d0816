"""Regularized least-squares system identification and disturbance tracking.

The running sufficient statistics V = sum z z^T + lambda I and
S = sum x' z^T support a per-step solve for the system estimate; a
Cholesky factor of V is maintained by rank-one updates and rebuilt from
scratch every 512 updates to bound drift. Disturbance estimates are the
one-step residuals under the newest estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky

from .lds import LinearSystem, rollout
from .rng import CONTROL, substream

_REFRESH_EVERY = 512


class IllConditionedError(RuntimeError):
    pass


@dataclass(frozen=True)
class SystemEstimate:
    """Snapshot (A_hat, B_hat); immutable and safe to share."""

    A_hat: np.ndarray
    B_hat: np.ndarray
    delta_norm_bound: float | None = None

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.A_hat, self.B_hat], axis=1)


class RidgeState:
    """Single-owner accumulator for the regression (A B) z ~ x_next.

    ``p`` is the regressor dimension (d_x + d_u for full system
    identification, but any p works: the warmup-case regression uses
    z = u alone). ``prior`` is the stacked matrix the solution shrinks
    toward with weight ``lam``.
    """

    def __init__(self, p: int, d_x: int, lam: float, prior=None,
                 split: int | None = None):
        if lam <= 0:
            raise ValueError("lambda must be positive")
        self.p = p
        self.d_x = d_x
        # Column split of the solution into (A_hat | B_hat). Defaults to
        # d_x (full system identification); the warmup-case regression on
        # controls alone passes split=0 so everything lands in B_hat.
        self.split = min(d_x, p) if split is None else split
        self.lam = float(lam)
        self.prior = (np.zeros((d_x, p)) if prior is None
                      else np.asarray(prior, dtype=float).copy())
        if self.prior.shape != (d_x, p):
            raise ValueError(f"prior must be ({d_x}, {p})")
        self.V = self.lam * np.eye(p)
        self.S = np.zeros((d_x, p))
        self.t = 0
        self._chol = cholesky(self.V, lower=True)
        self._since_refresh = 0

    def copy(self) -> "RidgeState":
        out = RidgeState(self.p, self.d_x, self.lam, self.prior, self.split)
        out.V = self.V.copy()
        out.S = self.S.copy()
        out.t = self.t
        out._chol = self._chol.copy()
        out._since_refresh = self._since_refresh
        return out


def _chol_rank_one_update(L: np.ndarray, x: np.ndarray) -> None:
    """In-place lower-triangular update of L L^T += x x^T."""
    x = x.copy()
    n = L.shape[0]
    for k in range(n):
        r = math.hypot(L[k, k], x[k])
        c = r / L[k, k]
        s = x[k] / L[k, k]
        L[k, k] = r
        if k + 1 < n:
            L[k + 1:, k] = (L[k + 1:, k] + s * x[k + 1:]) / c
            x[k + 1:] = c * x[k + 1:] - s * L[k + 1:, k]


def ridge_update(state: RidgeState, z, x_next) -> RidgeState:
    """Absorb one transition; O(p^2) per step."""
    z = np.asarray(z, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    if z.shape != (state.p,) or x_next.shape != (state.d_x,):
        raise ValueError(f"expected shapes ({state.p},), ({state.d_x},); "
                         f"got {z.shape}, {x_next.shape}")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(x_next))):
        raise ValueError("non-finite transition passed to ridge_update")
    state.V += np.outer(z, z)
    state.S += np.outer(x_next, z)
    state.t += 1
    state._since_refresh += 1
    if state._since_refresh >= _REFRESH_EVERY:
        state._chol = cholesky(state.V, lower=True)
        state._since_refresh = 0
    else:
        _chol_rank_one_update(state._chol, z)
    return state


def ridge_solve(state: RidgeState) -> SystemEstimate:
    """Closed-form minimizer (S + lambda prior) V^{-1}, split into (A, B).

    Raises IllConditionedError when the factor certifies cond(V) > 1e12.
    Pure function of the state: solving twice gives identical output.
    """
    diag = np.diag(state._chol)
    if (diag.max() / diag.min()) ** 2 > 1e12:
        raise IllConditionedError(
            "V condition number exceeds 1e12; increase lambda")
    rhs = (state.S + state.lam * state.prior).T
    theta = cho_solve((state._chol, True), rhs).T
    return SystemEstimate(A_hat=theta[:, :state.split].copy(),
                          B_hat=theta[:, state.split:].copy())


def lambda_schedule(spec, kappa: float, beta: float, gamma: float,
                    scale: float) -> float:
    """Regularizer scale^1 * kappa^4 beta^2 gamma^-5 G^2 * d_x d_u (d_x+d_u)^3.

    ``scale`` is the desk-size knob standing in for the polylogarithmic
    factor the asymptotic analysis hides.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    d_x, d_u = spec.d_x, spec.d_u
    return (scale * kappa ** 4 * beta ** 2 * gamma ** -5 * spec.G ** 2
            * d_x * d_u * (d_x + d_u) ** 3)


def estimate_disturbance(x_next, est: SystemEstimate, x, u) -> np.ndarray:
    """Residual x_next - A_hat x - B_hat u; equals w + (true - est) z."""
    return (np.asarray(x_next, dtype=float)
            - est.A_hat @ np.asarray(x, dtype=float)
            - est.B_hat @ np.asarray(u, dtype=float))


class DisturbanceLog:
    """Disturbance estimates indexed by timestep; zero for t <= 0."""

    def __init__(self, d_x: int):
        self.d_x = d_x
        self._w = []

    def record(self, w_hat) -> None:
        self._w.append(np.asarray(w_hat, dtype=float))

    def __len__(self) -> int:
        return len(self._w)

    def window(self, H: int) -> np.ndarray:
        """Last H estimates, newest first: row i is w_hat_{t-1-i}."""
        out = np.zeros((H, self.d_x))
        n = len(self._w)
        for i in range(min(H, n)):
            out[i] = self._w[n - 1 - i]
        return out

    def as_array(self) -> np.ndarray:
        if not self._w:
            return np.zeros((0, self.d_x))
        return np.stack(self._w)


def delta_v_norm(est: SystemEstimate, sys: LinearSystem, V: np.ndarray) -> float:
    """Harness diagnostic ||Delta^T||_V = sqrt(tr(Delta V Delta^T))."""
    delta = est.stacked() - np.concatenate([sys.A, sys.B], axis=1)
    return float(np.sqrt(np.trace(delta @ V @ delta.T)))


class _GaussianProbe:
    def __init__(self, d_u: int, rng):
        self.d_u = d_u
        self.rng = rng

    def observe(self, x, prev_cost):
        return self.rng.standard_normal(self.d_u)


def warmup_explore(sys: LinearSystem, noise, T0: int, regularizer: float | None = None,
                   seed: int = 0, x1=None, cost=None, deadline=None):
    """Pure exploration with u_t ~ N(0, I), then one regularized solve.

    Returns (A0, B0, trajectory). The regularizer defaults to
    (kappa^2 + beta)^-2, small enough that the estimate is essentially
    unpenalized once T0 transitions have been absorbed.
    """
    if T0 < 1:
        raise ValueError("T0 must be >= 1")
    if regularizer is None:
        regularizer = (sys.kappa ** 2 + sys.beta) ** -2
    controller = _GaussianProbe(sys.d_u, substream(seed, CONTROL, "warmup"))
    traj = rollout(sys, controller, noise, T0, x1=x1, cost=cost,
                   deadline=deadline)
    p = sys.d_x + sys.d_u
    state = RidgeState(p, sys.d_x, lam=regularizer)
    for t in range(T0):
        z = np.concatenate([traj.states[t], traj.controls[t]])
        ridge_update(state, z, traj.states[t + 1])
    est = ridge_solve(state)
    return est.A_hat, est.B_hat, traj
