"""Convex cost oracles over state/control pairs.

Every oracle exposes a batched ``value`` and ``subgradient`` over the
stacked vector z = (x; u) and carries its Lipschitz constant. The three
named families (smoothed-l1, huber, quadratic-clipped) are all convex and
1-Lipschitz, so regret numbers are comparable across them. An optional
``target`` shifts the minimizer away from the origin, and ``u_weight``
sets how much the control enters the cost (0 gives a state-only cost).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CostOracle:
    """value(x, u) -> cost; subgradient(x, u) -> d/dz cost, z = (x; u).

    Both callables accept single vectors or batches (leading axis).
    """

    value: callable
    subgradient: callable
    lipschitz: float = 1.0
    name: str = "custom"
    params: dict = None


def _stack(x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
        u = u[None, :]
    z = np.concatenate([x, u], axis=1)
    return z, single


def _weighted(z, d_x, u_weight, target):
    y = z - target[None, :]
    y[:, d_x:] *= u_weight
    return y


def _family(d_x: int, d_u: int, name: str, value_r, grad_scale_r,
            u_weight: float, target, params: dict) -> CostOracle:
    """Radial family: cost = h(||W(z - target)||) with h' <= 1.

    value_r maps radii to costs, grad_scale_r maps radii to h'(r)/r (the
    factor multiplying the weighted residual in the gradient).
    """
    if target is None:
        target = np.zeros(d_x + d_u)
    target = np.asarray(target, dtype=float)
    if target.shape != (d_x + d_u,):
        raise ValueError(f"target must have shape ({d_x + d_u},)")
    if not (0.0 <= u_weight <= 1.0):
        raise ValueError("u_weight must lie in [0, 1] to keep the cost 1-Lipschitz")

    def value(x, u):
        z, single = _stack(x, u)
        y = _weighted(z, d_x, u_weight, target)
        r = np.linalg.norm(y, axis=1)
        v = value_r(r)
        return float(v[0]) if single else v

    def subgradient(x, u):
        z, single = _stack(x, u)
        y = _weighted(z, d_x, u_weight, target)
        r = np.linalg.norm(y, axis=1)
        g = y * grad_scale_r(r)[:, None]
        g[:, d_x:] *= u_weight
        return g[0] if single else g

    return CostOracle(value=value, subgradient=subgradient, lipschitz=1.0,
                      name=name, params=params)


def smoothed_l1(d_x: int, d_u: int, delta: float = 0.25, u_weight: float = 0.5,
                target=None) -> CostOracle:
    """Smooth norm cost sqrt(||.||^2 + delta^2) - delta; C^inf, 1-Lipschitz."""
    if delta <= 0:
        raise ValueError("delta must be positive")

    def value_r(r):
        return np.sqrt(r * r + delta * delta) - delta

    def grad_scale_r(r):
        return 1.0 / np.sqrt(r * r + delta * delta)

    return _family(d_x, d_u, "smoothed-l1", value_r, grad_scale_r, u_weight,
                   target, {"delta": delta, "u_weight": u_weight})


def huber(d_x: int, d_u: int, delta: float = 1.0, u_weight: float = 0.5,
          target=None) -> CostOracle:
    """Huber cost of the norm: quadratic inside radius delta, linear outside."""
    if delta <= 0:
        raise ValueError("delta must be positive")

    def value_r(r):
        return np.where(r <= delta, 0.5 * r * r / delta, r - 0.5 * delta)

    def grad_scale_r(r):
        safe = np.maximum(r, 1e-300)
        return np.where(r <= delta, 1.0 / delta, 1.0 / safe)

    return _family(d_x, d_u, "huber", value_r, grad_scale_r, u_weight,
                   target, {"delta": delta, "u_weight": u_weight})


def quadratic_clipped(d_x: int, d_u: int, radius: float = 2.0,
                      u_weight: float = 0.5, target=None) -> CostOracle:
    """Quadratic bowl whose slope is clipped at 1 beyond ``radius``.

    Identical in form to huber but parameterized by the clip radius, with
    curvature 1/radius inside; models a quadratic cost made 1-Lipschitz.
    """
    return _family(
        d_x, d_u, "quadratic-clipped",
        lambda r: np.where(r <= radius, 0.5 * r * r / radius, r - 0.5 * radius),
        lambda r: np.where(r <= radius, 1.0 / radius, 1.0 / np.maximum(r, 1e-300)),
        u_weight, target, {"radius": radius, "u_weight": u_weight})


_FAMILIES = {
    "smoothed-l1": smoothed_l1,
    "huber": huber,
    "quadratic-clipped": quadratic_clipped,
}


def make_cost(family: str, d_x: int, d_u: int, **params) -> CostOracle:
    if family not in _FAMILIES:
        raise ValueError(f"unknown cost family {family!r}; "
                         f"choose from {sorted(_FAMILIES)}")
    return _FAMILIES[family](d_x, d_u, **params)


def convexity_gap(oracle: CostOracle, z1, z2, theta: float, d_x: int) -> float:
    """value(theta z1 + (1-theta) z2) - [theta value(z1) + (1-theta) value(z2)].

    Nonpositive (up to 1e-9) for convex oracles; used by property tests.
    """
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    zm = theta * z1 + (1.0 - theta) * z2
    v = oracle.value(zm[:d_x], zm[d_x:])
    v1 = oracle.value(z1[:d_x], z1[d_x:])
    v2 = oracle.value(z2[:d_x], z2[d_x:])
    return float(v - (theta * v1 + (1.0 - theta) * v2))
