"""Linear dynamical system x_{t+1} = A x_t + B u_t + w_t.

Holds the hidden system with its stability metadata, quantitative
stability certificates, the disturbance source, and the seeded rollout
loop that drives every controller. Controllers only ever see the
observable history (states, their own controls, realized costs); the
disturbances stay inside the rollout.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .rng import DISTURBANCE, substream


class DimensionError(ValueError):
    pass


class RolloutError(RuntimeError):
    """Controller produced an unusable control during a rollout."""


@dataclass(frozen=True)
class StabilityCertificate:
    """Witness of a (kappa, gamma) strong-stability decomposition.

    A = Q @ Lambda @ Q^{-1} with ||Lambda|| <= 1 - gamma and
    ||Q||, ||Q^{-1}|| <= kappa. Q and Lambda may be complex when A has
    complex eigenvalues; the reconstruction is real to tolerance.
    """

    Q: np.ndarray
    Lambda: np.ndarray
    kappa: float
    gamma: float

    def __bool__(self) -> bool:
        return True


@dataclass(frozen=True)
class StabilityFailure:
    """Names the inequality that blocked certification."""

    reason: str

    def __bool__(self) -> bool:
        return False


def check_strong_stability(A, kappa: float, gamma: float):
    """Try to certify A as (kappa, gamma)-strongly stable.

    Strategy: dense eigendecomposition A = Q diag(lam) Q^{-1}, with the
    eigenbasis rescaled by the scalar that balances ||Q|| and ||Q^{-1}||
    (the best achievable pair from a fixed basis). Returns a
    StabilityCertificate on success, a falsy StabilityFailure naming the
    failed inequality otherwise. Never raises on defective input.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"A must be square, got shape {A.shape}")
    d = A.shape[0]
    if d == 0:
        raise DimensionError("A must be nonempty")

    try:
        lam, Q = np.linalg.eig(A)
    except np.linalg.LinAlgError:
        return StabilityFailure("eigendecomposition did not converge")

    radius = float(np.max(np.abs(lam))) if d else 0.0
    if radius > 1.0 - gamma + 1e-12:
        return StabilityFailure(
            f"spectral radius {radius:.6g} exceeds 1 - gamma = {1.0 - gamma:.6g}"
        )

    # Near-defective A shows up as an ill-conditioned eigenbasis.
    sv = np.linalg.svd(Q, compute_uv=False)
    if sv[-1] <= 1e-13 * sv[0]:
        return StabilityFailure(
            "no certificate found; eigenbasis numerically singular "
            "(A may be defective) -- try larger kappa"
        )
    Qinv = np.linalg.inv(Q)

    # Balance ||Q|| and ||Q^{-1}|| with a scalar: both become sqrt(cond Q).
    nq = float(np.linalg.norm(Q, 2))
    nqi = float(np.linalg.norm(Qinv, 2))
    s = np.sqrt(nqi / nq)
    Q = Q * s
    Qinv = Qinv / s
    balanced = float(np.sqrt(nq * nqi))
    if balanced > kappa * (1.0 + 1e-12):
        return StabilityFailure(
            f"balanced basis norm {balanced:.6g} exceeds kappa = {kappa:.6g}; "
            "try larger kappa"
        )

    recon = Q @ np.diag(lam) @ Qinv
    scale = np.linalg.norm(A)
    scale = scale if scale > 0.0 else 1.0
    rel = float(np.linalg.norm(recon.real - A) / scale)
    if rel > 1e-8 or np.linalg.norm(recon.imag) > 1e-8 * scale:
        return StabilityFailure(
            f"reconstruction residual {rel:.3g} above tolerance 1e-8 "
            "(A may be defective); try larger kappa"
        )

    if np.allclose(lam.imag, 0.0) and np.allclose(Q.imag, 0.0):
        lam, Q, Qinv = lam.real, Q.real, Qinv.real
    return StabilityCertificate(Q=Q, Lambda=np.diag(lam), kappa=float(kappa),
                                gamma=float(gamma))


def spectral_power_bound(cert: StabilityCertificate, i: int) -> float:
    """Upper bound kappa^2 (1-gamma)^i on ||A^i||."""
    if i < 0:
        raise ValueError("power index must be nonnegative")
    return cert.kappa ** 2 * (1.0 - cert.gamma) ** i


@dataclass(frozen=True)
class LinearSystem:
    """Hidden dynamics (A, B) with stability metadata.

    kappa >= 1 and gamma in (0, 1) certify A (see check_strong_stability)
    unless ``unstable=True``, in which case a stabilizing wrapper is
    required before any controller runs. beta bounds ||B||.
    """

    A: np.ndarray
    B: np.ndarray
    kappa: float
    gamma: float
    beta: float
    unstable: bool = False

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise DimensionError(f"B shape {B.shape} does not match A {A.shape}")
        if self.kappa < 1.0:
            raise ValueError("kappa must be >= 1")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")
        if np.linalg.norm(B, 2) > self.beta * (1.0 + 1e-9):
            raise ValueError("||B|| exceeds beta")
        if not self.unstable:
            cert = check_strong_stability(A, self.kappa, self.gamma)
            if not cert:
                raise ValueError(
                    f"A failed ({self.kappa}, {self.gamma}) certification: "
                    f"{cert.reason}; pass unstable=True to defer to a wrapper"
                )

    @property
    def d_x(self) -> int:
        return self.A.shape[0]

    @property
    def d_u(self) -> int:
        return self.B.shape[1]

    def to_dict(self) -> dict:
        return {
            "A": self.A.flatten().tolist(),
            "B": self.B.flatten().tolist(),
            "d_x": self.d_x,
            "d_u": self.d_u,
            "kappa": self.kappa,
            "gamma": self.gamma,
            "beta": self.beta,
            "unstable": self.unstable,
        }

    @staticmethod
    def from_dict(doc: dict) -> "LinearSystem":
        d_x, d_u = int(doc["d_x"]), int(doc["d_u"])
        A = np.asarray(doc["A"], dtype=float).reshape(d_x, d_x)
        B = np.asarray(doc["B"], dtype=float).reshape(d_x, d_u)
        return LinearSystem(A=A, B=B, kappa=float(doc["kappa"]),
                            gamma=float(doc["gamma"]), beta=float(doc["beta"]),
                            unstable=bool(doc.get("unstable", False)))


@dataclass(frozen=True)
class DisturbanceSource:
    """I.i.d. mean-zero disturbance stream, one substream per run.

    kind "standard-gaussian" draws N(0, I); "bounded-custom" draws
    uniform on [-sqrt(3), sqrt(3)]^d (unit variance, bounded support).
    ``scale`` multiplies every draw and exists for low-noise ablations.
    """

    kind: str
    seed: int
    d_x: int
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("standard-gaussian", "bounded-custom"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")

    def stream(self):
        return substream(self.seed, DISTURBANCE)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "standard-gaussian":
            w = rng.standard_normal(self.d_x)
        else:
            w = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=self.d_x)
        return self.scale * w


@dataclass
class Trajectory:
    """Realized run: states x_1..x_{T+1}, controls, disturbances, costs."""

    states: np.ndarray        # (T+1, d_x)
    controls: np.ndarray      # (T, d_u)
    disturbances: np.ndarray  # (T, d_x)
    costs: np.ndarray         # (T,)

    @property
    def T(self) -> int:
        return self.controls.shape[0]


def simulate_step(sys: LinearSystem, x, u, w) -> np.ndarray:
    """One exact affine update A x + B u + w."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != (sys.d_x,) or u.shape != (sys.d_u,) or w.shape != (sys.d_x,):
        raise DimensionError(
            f"expected shapes ({sys.d_x},), ({sys.d_u},), ({sys.d_x},); "
            f"got {x.shape}, {u.shape}, {w.shape}"
        )
    return sys.A @ x + sys.B @ u + w


def rollout(sys: LinearSystem, controller, noise: DisturbanceSource, T: int,
            x1=None, cost=None, deadline=None, rng=None) -> Trajectory:
    """Run ``controller`` for T steps and record the trajectory.

    The controller is an object with ``observe(x, prev_cost) -> u`` (or a
    bare callable with that signature). It sees only x_t and the cost
    realized at t-1; x_{t+1}, and hence w_t, arrive one call later, so a
    controller can never read the disturbance of the step it is acting
    in. Costs are evaluated at the true (x_t, u_t) when a cost oracle is
    given. Same seed, same controller => bit-identical trajectories.

    ``deadline`` is an optional time.monotonic() bound checked
    periodically, used by the harness wall-clock guard. Pass ``rng`` to
    continue an existing disturbance stream across phased runs.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    if noise.d_x != sys.d_x:
        raise DimensionError("disturbance dimension does not match system")
    step = controller.observe if hasattr(controller, "observe") else controller

    if rng is None:
        rng = noise.stream()
    d_x, d_u = sys.d_x, sys.d_u
    states = np.zeros((T + 1, d_x))
    controls = np.zeros((T, d_u))
    disturbances = np.zeros((T, d_x))
    costs = np.zeros(T)

    x = np.zeros(d_x) if x1 is None else np.asarray(x1, dtype=float).copy()
    if x.shape != (d_x,):
        raise DimensionError(f"x1 must have shape ({d_x},)")
    states[0] = x
    prev_cost = None
    for t in range(T):
        if deadline is not None and (t & 1023) == 0 and time.monotonic() > deadline:
            raise RolloutError(f"wall-clock budget exhausted at step {t + 1}")
        u = np.asarray(step(x.copy(), prev_cost), dtype=float).reshape(-1)
        if u.shape != (d_u,) or not np.all(np.isfinite(u)):
            raise RolloutError(f"controller returned bad control at t={t + 1}: {u!r}")
        w = noise.draw(rng)
        c = float(cost.value(x, u)) if cost is not None else 0.0
        if cost is not None and not np.isfinite(c):
            raise RolloutError(f"non-finite cost at t={t + 1}")
        x_next = sys.A @ x + sys.B @ u + w
        controls[t] = u
        disturbances[t] = w
        costs[t] = c
        states[t + 1] = x_next
        x = x_next
        prev_cost = c
    return Trajectory(states=states, controls=controls,
                      disturbances=disturbances, costs=costs)


def random_system(d_x: int, d_u: int, kappa: float, gamma: float, beta: float,
                  seed: int) -> LinearSystem:
    """Draw a system certified (kappa, gamma)-strongly stable with margin.

    Eigenvalues are real, separated, with moduli <= 0.9 (1 - gamma); the
    eigenbasis condition number stays at (0.8 kappa)^2 so the certificate
    passes with room for estimation error. ||B|| is set to 0.9 beta.
    """
    rng = substream(seed, "system-gen")
    span = 0.9 * (1.0 - gamma)
    lam = np.linspace(-span, span, d_x)
    lam = lam + rng.uniform(-0.02, 0.02, size=d_x) * span
    lam = np.clip(lam, -span, span)

    c = max(1.0, 0.8 * kappa)
    U, _ = np.linalg.qr(rng.standard_normal((d_x, d_x)))
    V, _ = np.linalg.qr(rng.standard_normal((d_x, d_x)))
    if d_x == 1:
        sv = np.array([1.0])
    else:
        sv = np.geomspace(1.0 / c, c, d_x)
    Q = U @ np.diag(sv) @ V.T
    A = Q @ np.diag(lam) @ np.linalg.inv(Q)

    B = rng.standard_normal((d_x, d_u))
    B *= 0.9 * beta / max(np.linalg.norm(B, 2), 1e-12)
    return LinearSystem(A=A, B=B, kappa=kappa, gamma=gamma, beta=beta)
