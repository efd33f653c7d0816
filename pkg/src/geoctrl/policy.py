"""Disturbance-feedback controller algebra.

A policy is a tuple of H matrices M^[0..H-1]; the control it plays is a
linear read-out of the trailing disturbance window. The state under a
fixed policy is (up to a geometrically small remainder) a linear map of
the last 2H+1 disturbances with coefficients affine in the policy, which
makes the long-run average cost convex in the policy. This module builds
those response coefficients, the time-independent surrogate state/control
pair, the Monte-Carlo surrogate cost with its exact chain-rule gradient,
and the policy covariance that measures how informative executing a
policy is for system identification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import MC_SHOCKS, substream


@dataclass(frozen=True)
class PolicyClassSpec:
    """Shape and norm budget of the policy class.

    Policies keep sum_i ||M^[i]||_2 <= G. H is the disturbance-window
    length; flattened policies live in dimension d = H * d_u * d_x.
    """

    H: int
    G: float
    d_x: int
    d_u: int

    def __post_init__(self):
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if self.G < 0:
            raise ValueError("G must be nonnegative")

    @property
    def dim(self) -> int:
        return self.H * self.d_u * self.d_x

    @property
    def flat_radius(self) -> float:
        # ||M||_F <= sqrt(rank) ||M||_2 per block and sum a_i^2 <= (sum a_i)^2.
        return self.G * math.sqrt(min(self.d_x, self.d_u))


def default_memory(gamma: float, T: int, d_x: int, d_u: int,
                   hp_exponent: float = 2.0, c_H: float = 2.0) -> int:
    """Window length that makes the truncated tail negligible at horizon T."""
    return int(math.ceil(c_H / gamma * math.log(T * (d_x + d_u) * hp_exponent)))


@dataclass(frozen=True)
class DfcPolicy:
    """Policy M = (M^[0], ..., M^[H-1]), blocks shaped (H, d_u, d_x)."""

    blocks: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.blocks, dtype=float)
        if b.ndim != 3:
            raise ValueError("blocks must be (H, d_u, d_x)")
        object.__setattr__(self, "blocks", b)

    @property
    def H(self) -> int:
        return self.blocks.shape[0]

    @property
    def d_u(self) -> int:
        return self.blocks.shape[1]

    @property
    def d_x(self) -> int:
        return self.blocks.shape[2]

    def budget(self) -> float:
        """sum_i ||M^[i]||_2, the class-membership norm."""
        return float(sum(np.linalg.norm(b, 2) for b in self.blocks))

    def in_class(self, spec: PolicyClassSpec, tol: float = 1e-9) -> bool:
        return (self.blocks.shape == (spec.H, spec.d_u, spec.d_x)
                and self.budget() <= spec.G + tol)

    @staticmethod
    def zero(spec: PolicyClassSpec) -> "DfcPolicy":
        return DfcPolicy(np.zeros((spec.H, spec.d_u, spec.d_x)))

    def control(self, disturbance_window: np.ndarray) -> np.ndarray:
        """u = sum_i M^[i] w[i] for a window w[0]=w_{t-1}, ..., w[H-1]=w_{t-H}."""
        return np.einsum("muy,my->u", self.blocks, disturbance_window)

    def to_dict(self) -> dict:
        return {"H": self.H, "d_x": self.d_x, "d_u": self.d_u,
                "blocks": [b.flatten().tolist() for b in self.blocks]}

    @staticmethod
    def from_dict(doc: dict) -> "DfcPolicy":
        H, d_x, d_u = int(doc["H"]), int(doc["d_x"]), int(doc["d_u"])
        blocks = np.asarray(doc["blocks"], dtype=float).reshape(H, d_u, d_x)
        return DfcPolicy(blocks)


def flatten(policy: DfcPolicy) -> np.ndarray:
    """Row-major (block, row, col) vector of dimension H * d_u * d_x."""
    return policy.blocks.reshape(-1).copy()


def unflatten(vec, spec: PolicyClassSpec) -> DfcPolicy:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (spec.dim,):
        raise ValueError(f"expected length {spec.dim}, got {vec.shape}")
    return DfcPolicy(vec.reshape(spec.H, spec.d_u, spec.d_x).copy())


def _matrix_powers(A: np.ndarray, k: int) -> np.ndarray:
    """Stack [I, A, A^2, ..., A^k]."""
    d = A.shape[0]
    out = np.empty((k + 1, d, d))
    out[0] = np.eye(d)
    for i in range(1, k + 1):
        out[i] = out[i - 1] @ A
    return out


def response_matrices(policy: DfcPolicy, A, B) -> np.ndarray:
    """Coefficients R_0..R_{2H} writing the state as a map of past noise.

    Under a fixed policy, x_{t+1} = A^{H+1} x_{t-H} + sum_i R_i w_{t-i}
    with R_i = A^i [i<=H] + sum_j A^j B M^[i-j-1] [1 <= i-j <= H]. Each
    R_i is affine in the policy blocks.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    H, d_u, d_x = policy.blocks.shape
    if A.shape != (d_x, d_x) or B.shape != (d_x, d_u):
        raise ValueError("A/B dimensions do not match the policy")
    powsA = _matrix_powers(A, H)
    powsAB = powsA @ B  # (H+1, d_x, d_u)
    R = np.zeros((2 * H + 1, d_x, d_x))
    for i in range(2 * H + 1):
        if i <= H:
            R[i] += powsA[i]
        lo, hi = max(0, i - H), min(H, i - 1)
        for j in range(lo, hi + 1):
            R[i] += powsAB[j] @ policy.blocks[i - j - 1]
    return R


def surrogate_pair(policy: DfcPolicy, A, B, shocks) -> tuple[np.ndarray, np.ndarray]:
    """Time-independent (state, control) draw for one shock sequence.

    ``shocks`` holds 2H+1 vectors of dimension d_x; with standard-normal
    shocks the pair is distributed as the stationary state/control of the
    executed policy up to the geometric truncation tail.
    """
    shocks = np.asarray(shocks, dtype=float)
    H = policy.H
    if shocks.shape != (2 * H + 1, policy.d_x):
        raise ValueError(f"shocks must be ({2 * H + 1}, {policy.d_x})")
    R = response_matrices(policy, A, B)
    x = np.einsum("ixy,iy->x", R, shocks)
    u = np.einsum("muy,my->u", policy.blocks, shocks[:H])
    return x, u


def _draw_shocks(n: int, H: int, d_x: int, seed: int) -> np.ndarray:
    rng = substream(seed, MC_SHOCKS)
    return rng.standard_normal((n, 2 * H + 1, d_x))


def surrogate_cost(policy: DfcPolicy, A, B, cost, n_samples: int = 4096,
                   seed: int = 0, shocks=None):
    """Monte-Carlo estimate of the stationary cost and its policy gradient.

    Returns (value, stderr, grad) with grad shaped like the policy blocks.
    The gradient pulls the cost subgradient back through the affine maps:
    the contribution of one shock sequence to d/dM^[m] is
    sum_j (A^j B)^T g_x shocks[m+j+1]^T + g_u shocks[m]^T. Same seed,
    same output; pass explicit ``shocks`` to share draws across policies.
    """
    if shocks is None:
        if n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        shocks = _draw_shocks(n_samples, policy.H, policy.d_x, seed)
    shocks = np.asarray(shocks, dtype=float)
    n = shocks.shape[0]
    H, d_u, d_x = policy.blocks.shape

    R = response_matrices(policy, A, B)
    x = np.einsum("ixy,niy->nx", R, shocks)
    u = np.einsum("muy,nmy->nu", policy.blocks, shocks[:, :H])

    vals = np.asarray(cost.value(x, u), dtype=float)
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise FloatingPointError(f"non-finite cost at sample {bad}")
    value = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    g = np.asarray(cost.subgradient(x, u), dtype=float)
    g_x, g_u = g[:, :d_x], g[:, d_x:]
    powsAB = _matrix_powers(np.asarray(A, dtype=float), H) @ np.asarray(B, dtype=float)
    s = np.einsum("jxu,nx->nju", powsAB, g_x)  # (n, H+1, d_u)
    idx = np.arange(H)[:, None] + np.arange(H + 1)[None, :] + 1  # (H, H+1)
    grad = np.einsum("nju,nmjy->muy", s, shocks[:, idx]) / n
    grad += np.einsum("nu,nmy->muy", g_u, shocks[:, :H]) / n
    return value, stderr, grad


@dataclass(frozen=True)
class PolicyCovariance:
    """Sigma = T T^T for the stacked surrogate pair z = (x; u).

    T is the (d_x + d_u) x ((2H+1) d_x) block matrix mapping the shock
    sequence to z; Sigma is its second moment under standard-normal
    shocks.
    """

    Sigma: np.ndarray
    T_matrix: np.ndarray


def policy_covariance(policy: DfcPolicy, A, B) -> PolicyCovariance:
    H, d_u, d_x = policy.blocks.shape
    R = response_matrices(policy, A, B)
    width = (2 * H + 1) * d_x
    T = np.zeros((d_x + d_u, width))
    for i in range(2 * H + 1):
        T[:d_x, i * d_x:(i + 1) * d_x] = R[i]
    for m in range(H):
        T[d_x:, m * d_x:(m + 1) * d_x] = policy.blocks[m]
    Sigma = T @ T.T
    return PolicyCovariance(Sigma=Sigma, T_matrix=T)


def surrogate_affine_maps(spec: PolicyClassSpec, A, B, shocks):
    """Factor the surrogate state as base + xmap @ flat(policy), per sample.

    Returns (base, xmap) with base (n, d_x) and xmap (n, d_x, dim). The
    control part needs no map: u_k = blocks . shocks[k, :H]. Built once
    per frozen shock set, this makes repeated policy evaluations cheap.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    shocks = np.asarray(shocks, dtype=float)
    H, d_x, d_u = spec.H, spec.d_x, spec.d_u
    n = shocks.shape[0]
    if shocks.shape[1:] != (2 * H + 1, d_x):
        raise ValueError("shock shape does not match the class spec")
    powsA = _matrix_powers(A, H)
    powsAB = powsA @ B
    base = np.einsum("ixy,niy->nx", powsA, shocks[:, :H + 1])
    idx = np.arange(H)[:, None] + np.arange(H + 1)[None, :] + 1
    xmap = np.einsum("jxu,nmjy->nxmuy", powsAB, shocks[:, idx])
    return base, xmap.reshape(n, d_x, spec.dim)


def project_to_class(policy: DfcPolicy, spec: PolicyClassSpec) -> DfcPolicy:
    """Clip each block's singular values at a common cap chosen by bisection.

    The cap tau is set so sum_i min(sigma_max_i, tau) = G, which maps any
    policy into the class while preserving every block's singular
    directions. Policies already inside are returned unchanged.
    """
    blocks = policy.blocks
    svds = [np.linalg.svd(b, full_matrices=False) for b in blocks]
    tops = np.array([s[1][0] if s[1].size else 0.0 for s in svds])
    if tops.sum() <= spec.G + 1e-12:
        return policy

    lo, hi = 0.0, float(tops.max())
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if np.minimum(tops, mid).sum() > spec.G:
            hi = mid
        else:
            lo = mid
    tau = 0.5 * (lo + hi)
    clipped = np.empty_like(blocks)
    for i, (U, S, Vt) in enumerate(svds):
        clipped[i] = (U * np.minimum(S, tau)) @ Vt
    return DfcPolicy(clipped)
