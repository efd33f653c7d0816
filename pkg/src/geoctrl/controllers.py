"""Online controllers and regret accounting.

The main controller explores with adaptively rebuilt barycentric
spanners over a shrinking policy region: each epoch plays the spanner
anchor d times longer than the other elements, re-estimates the system
from every transition, and eliminates policies whose frozen-seed
surrogate cost exceeds the epoch minimum by 3 * epsilon_r. The
no-dynamics variant runs the same loop in control space. Baselines
(explore-then-commit here; bandit-feedback and gradient-perturbation in
their own modules) share the rollout interface: observe(x, prev_cost)
returns the control, and nothing else crosses the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .costs import CostOracle
from .estimation import (DisturbanceLog, RidgeState, SystemEstimate,
                         estimate_disturbance, lambda_schedule, ridge_solve,
                         ridge_update, warmup_explore)
from .geometry import (ConvexRegion, ControlBallBase, DegenerateRegionError,
                       FrozenControlCost, FrozenPolicyCost, OptimizeError,
                       PolicyBudgetBase, SublevelConstraint,
                       barycentric_spanner, membership, region_minimize)
from .lds import LinearSystem, Trajectory, rollout
from .policy import (DfcPolicy, PolicyClassSpec, flatten, unflatten)
from .rng import CONTROL, REGION, substream


# ---------------------------------------------------------------------------
# Epoch schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpochSchedule:
    """Doubling-accuracy epoch plan: epsilon_r = 2^-r, lengths ~ eps^-2.

    scale_T is the desk-size stand-in for the polylogarithmic factor in
    the per-element execution length kappa^4 gamma^-3 eps^-2 d_x d_u
    (d_x + d_u)^2; lengths never drop below ``min_len`` (two disturbance
    windows) so surrogate statistics are well defined.
    """

    scale_T: float
    kappa: float
    gamma: float
    d_x: int
    d_u: int
    min_len: int

    def epsilon(self, r: int) -> float:
        return 2.0 ** (-r)

    def length(self, r: int) -> int:
        n = self.d_x + self.d_u
        raw = (self.scale_T * self.kappa ** 4 * self.gamma ** -3
               * self.epsilon(r) ** -2 * self.d_x * self.d_u * n * n)
        return max(int(math.ceil(raw)), self.min_len)


@dataclass(frozen=True)
class ControlEpochSchedule:
    """No-dynamics variant: lengths ~ eps^-2 n^2 (n + beta^2), n = d_u."""

    scale_T: float
    beta: float
    d_u: int
    min_len: int = 2

    def epsilon(self, r: int) -> float:
        return 2.0 ** (-r)

    def length(self, r: int) -> int:
        n = self.d_u
        raw = (self.scale_T * self.epsilon(r) ** -2 * n * n
               * (n + self.beta ** 2))
        return max(int(math.ceil(raw)), self.min_len)


# ---------------------------------------------------------------------------
# Audit record and regret ledger
# ---------------------------------------------------------------------------

@dataclass
class Segment:
    """Maximal run of steps played under one decision point."""

    start: int            # 0-based step index, inclusive
    end: int              # exclusive
    kind: str             # "policy" | "control" | "explore"
    point: np.ndarray | None
    epoch: int
    label: str = ""


@dataclass
class EpochRecord:
    r: int
    t_start: int
    t_end: int | None
    epsilon: float
    spanner_logdet: float | None = None
    spanner_calls: int | None = None
    region_min_value: float | None = None
    threshold: float | None = None
    witness: list | None = None
    estimate: tuple | None = None   # (A_hat, B_hat) frozen at epoch end
    V: np.ndarray | None = None     # regressor Gram at epoch end
    delta_v_norm: float | None = None   # harness diagnostic ||Delta^T||_V

    def to_dict(self) -> dict:
        doc = {k: v for k, v in self.__dict__.items()
               if k not in ("estimate", "V")}
        if self.estimate is not None:
            A_hat, B_hat = self.estimate
            doc["A_hat"] = None if A_hat is None else np.asarray(A_hat).tolist()
            doc["B_hat"] = np.asarray(B_hat).tolist()
        return doc


@dataclass
class RunAudit:
    """Controller-side record stream consumed by the harness."""

    kind: str                         # comparator space: "policy" | "control"
    segments: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    events: list = field(default_factory=list)
    w_hat: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def close(self, T: int) -> None:
        """Clamp open segments to the realized horizon."""
        self.segments = [s for s in self.segments if s.start < T]
        for s in self.segments:
            if s.end is None or s.end > T:
                s.end = T

    def step_epochs(self, T: int) -> np.ndarray:
        out = np.zeros(T, dtype=int)
        for s in self.segments:
            out[s.start:s.end] = s.epoch
        return out

    def switch_flags(self, T: int) -> np.ndarray:
        out = np.zeros(T, dtype=int)
        for s in self.segments:
            if s.start < T:
                out[s.start] = 1
        if T > 0:
            out[0] = 1
        return out


@dataclass
class RegretLedger:
    """Realized and surrogate regret with Monte-Carlo error bars.

    R_T subtracts T times the comparator's long-run average cost from the
    realized cost sum; the average-regret variant replaces each step's
    realized cost with the surrogate cost of the policy played then.
    Explore steps have no policy; their realized cost stands in for the
    surrogate there (flagged in ``notes``).
    """

    realized: np.ndarray
    surrogate: np.ndarray
    surrogate_se: np.ndarray
    comparator_value: float
    comparator_se: float
    comparator_point: np.ndarray | None
    epoch_id: np.ndarray
    switch_flag: np.ndarray
    surrogate_comparator_value: float | None = None
    surrogate_comparator_se: float = 0.0
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if self.surrogate_comparator_value is None:
            self.surrogate_comparator_value = self.comparator_value
            self.surrogate_comparator_se = self.comparator_se

    @property
    def T(self) -> int:
        return len(self.realized)

    @property
    def R_T(self) -> float:
        return float(self.realized.sum() - self.T * self.comparator_value)

    @property
    def R_T_se(self) -> float:
        return float(self.T * self.comparator_se)

    @property
    def R_T_avg(self) -> float:
        # segment values and the comparator share one frozen sample, so
        # this difference is a common-random-number estimate
        return float(self.surrogate.sum()
                     - self.T * self.surrogate_comparator_value)

    @property
    def R_T_avg_se(self) -> float:
        seg = float(np.sqrt(np.sum(self.surrogate_se ** 2)))
        return float(math.hypot(seg, self.T * self.surrogate_comparator_se))

    def cumulative_regret(self) -> np.ndarray:
        return np.cumsum(self.realized - self.comparator_value)

    def cumulative_avg_regret(self) -> np.ndarray:
        return np.cumsum(self.surrogate - self.surrogate_comparator_value)


# ---------------------------------------------------------------------------
# Geometric exploration controller
# ---------------------------------------------------------------------------

@dataclass
class GeometricConfig:
    """Desk-scale knobs for the geometric controller.

    scale_T and lambda_scale stand in for the analysis' polylogarithmic
    constants; n_mc is the frozen sample count used by region membership
    and elimination thresholds (common random numbers within an epoch).
    """

    H: int
    G: float = 2.0
    scale_T: float = 0.02
    lambda_scale: float = 1e-3
    n_mc: int = 384
    spanner_C: float = 2.0
    rel_accuracy: float = 1.01
    solve_stride: int = 1
    max_epochs: int = 40


class GeometricController:
    """Spanner-exploration phased-elimination controller.

    Needs only system metadata (dimensions and stability constants) plus
    initial estimates; it never touches the true matrices or
    disturbances. Controls are read out of estimated disturbances, which
    are refreshed from the newest least-squares solve every step.
    """

    def __init__(self, d_x: int, d_u: int, kappa: float, gamma: float,
                 beta: float, cost: CostOracle, cfg: GeometricConfig,
                 A0, B0, seed: int):
        self.cfg = cfg
        self.cost = cost
        self.seed = int(seed)
        self.spec = PolicyClassSpec(H=cfg.H, G=cfg.G, d_x=d_x, d_u=d_u)
        self.kappa, self.gamma, self.beta = kappa, gamma, beta

        lam = lambda_schedule(self.spec, kappa, beta, gamma, cfg.lambda_scale)
        prior = np.concatenate([np.asarray(A0, dtype=float),
                                np.asarray(B0, dtype=float)], axis=1)
        self.ridge = RidgeState(d_x + d_u, d_x, lam=lam, prior=prior)
        self.est = SystemEstimate(A_hat=np.asarray(A0, dtype=float).copy(),
                                  B_hat=np.asarray(B0, dtype=float).copy())
        self.wlog = DisturbanceLog(d_x)
        self.schedule = EpochSchedule(scale_T=cfg.scale_T, kappa=kappa,
                                      gamma=gamma, d_x=d_x, d_u=d_u,
                                      min_len=2 * cfg.H + 2)
        self.region = ConvexRegion(PolicyBudgetBase(self.spec))
        self.audit = RunAudit(kind="policy")
        self.audit.extras["lambda"] = lam

        self.t = 0                      # steps taken (0-based count)
        self.r = 0                      # current epoch
        self._plan: list[tuple[np.ndarray, int]] = []
        self._plan_pos = 0
        self._steps_left = 0
        self._pending = None            # (x, u) awaiting next state
        self._frozen = False            # spanner failure => play witness
        self._current_flat = flatten(DfcPolicy.zero(self.spec))
        self._epoch_rec: EpochRecord | None = None

    # -- epoch machinery ---------------------------------------------------

    def _epoch_seed(self, r: int) -> int:
        return int(substream(self.seed, REGION, r).integers(2 ** 62))

    def _finalize_epoch(self) -> None:
        """Freeze the epoch-end estimate, eliminate, record the audit row."""
        rec = self._epoch_rec
        rec.t_end = self.t
        eps = self.schedule.epsilon(self.r)
        model = FrozenPolicyCost(self.spec, self.est.A_hat, self.est.B_hat,
                                 self.cost, seed=self._epoch_seed(self.r),
                                 n_samples=self.cfg.n_mc)
        notes: list = []
        point, value = region_minimize(
            self.region, lambda f: model.value_grad(f)[::2],
            tol_min=eps / 4.0, audit=notes)
        ref_vals = model.sample_values(point)
        # Margin: 3 paired-difference standard errors at the epoch's own
        # exploratory points, the representative boundary scale.
        probes = [p for p, _ in self._plan]
        margin = 3.0 * max((model.diff_stderr(np.asarray(p), ref_vals)
                            for p in probes), default=0.0)
        self.region.shrink(
            SublevelConstraint(model=model, threshold=3.0 * eps, margin=margin,
                               epsilon_r=eps, ref_point=point,
                               ref_vals=ref_vals, label=f"epoch-{self.r}"),
            witness=point)
        rec.region_min_value = value
        rec.threshold = value + 3.0 * eps
        rec.witness = point.tolist()
        rec.estimate = (self.est.A_hat.copy(), self.est.B_hat.copy())
        rec.V = self.ridge.V.copy()
        self.audit.events.extend(notes)
        self._epoch_rec = None

    def _start_epoch(self) -> None:
        self.r += 1
        if self.r > self.cfg.max_epochs:
            self._freeze("epoch cap reached; playing region witness")
            return
        eps = self.schedule.epsilon(self.r)
        rec = EpochRecord(r=self.r, t_start=self.t, t_end=None, epsilon=eps)
        try:
            spanner = barycentric_spanner(self.region, C=self.cfg.spanner_C,
                                          rel_accuracy=self.cfg.rel_accuracy)
        except (DegenerateRegionError, OptimizeError) as exc:
            self.audit.epochs.append(rec)
            self._epoch_rec = rec
            self._freeze(f"spanner failure in epoch {self.r}: {exc}")
            return
        rec.spanner_logdet = spanner.logdet
        rec.spanner_calls = spanner.oracle_calls
        self.audit.epochs.append(rec)
        self._epoch_rec = rec
        d = self.spec.dim
        T_r = self.schedule.length(self.r)
        plan = [(spanner.points[0], d * T_r)]
        plan += [(spanner.points[j], T_r) for j in range(1, d + 1)]
        self._plan = plan
        self._plan_pos = 0
        self._steps_left = plan[0][1]
        self._switch_to(plan[0][0])

    def _freeze(self, message: str) -> None:
        self._frozen = True
        self.audit.events.append(message)
        self._switch_to(self.region.witness.copy())

    def _switch_to(self, flat: np.ndarray) -> None:
        if self.audit.segments:
            self.audit.segments[-1].end = self.t
        self._current_flat = np.asarray(flat, dtype=float).copy()
        self.audit.segments.append(
            Segment(start=self.t, end=None, kind="policy",
                    point=self._current_flat.copy(), epoch=self.r))

    # -- step interface ------------------------------------------------------

    def observe(self, x, prev_cost=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._pending is not None:
            xp, up = self._pending
            ridge_update(self.ridge, np.concatenate([xp, up]), x)
            if self.ridge.t % self.cfg.solve_stride == 0:
                self.est = ridge_solve(self.ridge)
            self.wlog.record(estimate_disturbance(x, self.est, xp, up))

        if not self._frozen and self._steps_left == 0:
            if self._plan_pos + 1 < len(self._plan):
                self._plan_pos += 1
                point, steps = self._plan[self._plan_pos]
                self._steps_left = steps
                self._switch_to(point)
            else:
                # Epoch exhausted: the last transition above is already in
                # the ridge, so the frozen estimate is the epoch-end one.
                if self._epoch_rec is not None:
                    self._finalize_epoch()
                self._start_epoch()
        if not self._frozen:
            self._steps_left -= 1

        policy = unflatten(self._current_flat, self.spec)
        u = policy.control(self.wlog.window(self.spec.H))
        self._pending = (x.copy(), u.copy())
        self.t += 1
        return u


def run_geometric(sys: LinearSystem, cost: CostOracle, cfg: GeometricConfig,
                  seed: int, T: int, A0=None, B0=None,
                  warmup_T0: int | None = None, noise_kind: str = "standard-gaussian",
                  noise_scale: float = 1.0, deadline=None):
    """Run the geometric controller, with warmup exploration if needed.

    Returns (trajectory, audit). When initial estimates are not supplied,
    a pure-exploration prefix of warmup_T0 steps (default: the ridge
    regularizer lambda) is consumed from the same horizon and recorded as
    an explore segment.
    """
    from .lds import DisturbanceSource

    noise = DisturbanceSource(noise_kind, seed=seed, d_x=sys.d_x,
                              scale=noise_scale)
    rng = noise.stream()
    audit = RunAudit(kind="policy")
    pieces = []
    t0 = 0
    x1 = None
    if A0 is None or B0 is None:
        spec = PolicyClassSpec(H=cfg.H, G=cfg.G, d_x=sys.d_x, d_u=sys.d_u)
        lam = lambda_schedule(spec, sys.kappa, sys.beta, sys.gamma,
                              cfg.lambda_scale)
        T0 = min(int(math.ceil(lam)) if warmup_T0 is None else warmup_T0, T)
        A0, B0, wtraj = _warmup_with_rng(sys, noise, rng, T0, cost, deadline)
        pieces.append(wtraj)
        audit.segments.append(Segment(start=0, end=T0, kind="explore",
                                      point=None, epoch=0, label="warmup"))
        audit.extras["warmup_T0"] = T0
        t0 = T0
        x1 = wtraj.states[-1]

    ctrl = GeometricController(sys.d_x, sys.d_u, sys.kappa, sys.gamma,
                               sys.beta, cost, cfg, A0, B0, seed)
    if T - t0 > 0:
        traj = rollout(sys, ctrl, noise, T - t0, x1=x1, cost=cost,
                       deadline=deadline, rng=rng)
        pieces.append(traj)
    inner = ctrl.audit
    inner.close(T - t0)
    for s in inner.segments:
        audit.segments.append(Segment(start=s.start + t0, end=s.end + t0,
                                      kind=s.kind, point=s.point,
                                      epoch=s.epoch, label=s.label))
    for e in inner.epochs:
        e.t_start += t0
        if e.t_end is not None:
            e.t_end += t0
    audit.epochs = inner.epochs
    audit.events = inner.events
    audit.extras.update(inner.extras)
    audit.w_hat = ctrl.wlog.as_array()
    audit.extras["final_estimate"] = {
        "A_hat": ctrl.est.A_hat.tolist(), "B_hat": ctrl.est.B_hat.tolist()}
    if audit.epochs and audit.epochs[-1].t_end is None:
        audit.events.append("horizon ended mid-epoch (final epoch truncated)")
    full = _concat_trajectories(pieces)
    audit.close(T)
    return full, audit


def _warmup_with_rng(sys, noise, rng, T0, cost, deadline):
    """warmup_explore, but drawing disturbances from a live stream."""
    from .estimation import _GaussianProbe  # same probe controller

    controller = _GaussianProbe(sys.d_u, substream(noise.seed, CONTROL, "warmup"))
    traj = rollout(sys, controller, noise, T0, cost=cost, deadline=deadline,
                   rng=rng)
    reg = (sys.kappa ** 2 + sys.beta) ** -2
    state = RidgeState(sys.d_x + sys.d_u, sys.d_x, lam=reg)
    for t in range(T0):
        z = np.concatenate([traj.states[t], traj.controls[t]])
        ridge_update(state, z, traj.states[t + 1])
    est = ridge_solve(state)
    return est.A_hat, est.B_hat, traj


def _concat_trajectories(pieces: list[Trajectory]) -> Trajectory:
    if len(pieces) == 1:
        return pieces[0]
    states = np.concatenate([pieces[0].states]
                            + [p.states[1:] for p in pieces[1:]])
    return Trajectory(
        states=states,
        controls=np.concatenate([p.controls for p in pieces]),
        disturbances=np.concatenate([p.disturbances for p in pieces]),
        costs=np.concatenate([p.costs for p in pieces]),
    )


# ---------------------------------------------------------------------------
# No-dynamics variant (hidden linear transform of the control)
# ---------------------------------------------------------------------------

@dataclass
class WarmupCaseConfig:
    U: float = 2.0
    scale_T: float = 1.0
    n_mc: int = 512
    spanner_C: float = 2.0
    rel_accuracy: float = 1.01
    max_epochs: int = 40
    oracle_estimate: np.ndarray | None = None   # ablation hook: inject B


class WarmupCaseController:
    """Phased elimination over constant controls when the state has no
    memory (A = 0): x_{t+1} = B u_t + w_t.

    Spanner elements of the control region are each held for T_r steps;
    B is re-estimated after every epoch from all past transitions with a
    unit ridge, and controls whose estimated average cost exceeds the
    epoch minimum by 3 eps_r are eliminated.
    """

    def __init__(self, d_x: int, d_u: int, beta: float, cost: CostOracle,
                 cfg: WarmupCaseConfig, seed: int):
        self.cfg = cfg
        self.cost = cost
        self.seed = int(seed)
        self.d_x, self.d_u = d_x, d_u
        self.ridge = RidgeState(d_u, d_x, lam=1.0, split=0)
        self.region = ConvexRegion(ControlBallBase(d_u, cfg.U))
        self.schedule = ControlEpochSchedule(scale_T=cfg.scale_T, beta=beta,
                                             d_u=d_u)
        self.audit = RunAudit(kind="control")
        self.t = 0
        self.r = 0
        self._plan = []
        self._plan_pos = 0
        self._steps_left = 0
        self._pending = None
        self._frozen = False
        self._current = np.zeros(d_u)
        self._epoch_rec: EpochRecord | None = None

    def _epoch_seed(self, r: int) -> int:
        return int(substream(self.seed, REGION, r).integers(2 ** 62))

    def _finalize_epoch(self) -> None:
        rec = self._epoch_rec
        rec.t_end = self.t
        eps = self.schedule.epsilon(self.r)
        B_hat = (self.cfg.oracle_estimate if self.cfg.oracle_estimate is not None
                 else ridge_solve(self.ridge).B_hat)
        model = FrozenControlCost(B_hat, self.cost,
                                  seed=self._epoch_seed(self.r),
                                  n_samples=self.cfg.n_mc, d_x=self.d_x)
        notes: list = []
        point, value = region_minimize(
            self.region, lambda u: model.value_grad(u)[::2],
            tol_min=eps / 4.0, audit=notes)
        ref_vals = model.sample_values(point)
        probes = [p for p, _ in self._plan]
        margin = 3.0 * max((model.diff_stderr(np.asarray(p), ref_vals)
                            for p in probes), default=0.0)
        self.region.shrink(
            SublevelConstraint(model=model, threshold=3.0 * eps, margin=margin,
                               epsilon_r=eps, ref_point=point,
                               ref_vals=ref_vals, label=f"epoch-{self.r}"),
            witness=point)
        rec.region_min_value = value
        rec.threshold = value + 3.0 * eps
        rec.witness = point.tolist()
        rec.estimate = (None, B_hat.copy())
        self.audit.events.extend(notes)
        self._epoch_rec = None

    def _start_epoch(self) -> None:
        self.r += 1
        if self.r > self.cfg.max_epochs:
            self._freeze("epoch cap reached; playing region witness")
            return
        eps = self.schedule.epsilon(self.r)
        rec = EpochRecord(r=self.r, t_start=self.t, t_end=None, epsilon=eps)
        try:
            spanner = barycentric_spanner(self.region, C=self.cfg.spanner_C,
                                          rel_accuracy=self.cfg.rel_accuracy,
                                          affine=False)
        except (DegenerateRegionError, OptimizeError) as exc:
            self.audit.epochs.append(rec)
            self._epoch_rec = rec
            self._freeze(f"spanner failure in epoch {self.r}: {exc}")
            return
        rec.spanner_logdet = spanner.logdet
        rec.spanner_calls = spanner.oracle_calls
        self.audit.epochs.append(rec)
        self._epoch_rec = rec
        T_r = self.schedule.length(self.r)
        self._plan = [(p, T_r) for p in spanner.points]
        self._plan_pos = 0
        self._steps_left = T_r
        self._switch_to(self._plan[0][0])

    def _freeze(self, message: str) -> None:
        self._frozen = True
        self.audit.events.append(message)
        self._switch_to(self.region.witness.copy())

    def _switch_to(self, u: np.ndarray) -> None:
        if self.audit.segments:
            self.audit.segments[-1].end = self.t
        self._current = np.asarray(u, dtype=float).copy()
        self.audit.segments.append(
            Segment(start=self.t, end=None, kind="control",
                    point=self._current.copy(), epoch=self.r))

    def observe(self, x, prev_cost=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._pending is not None:
            _, up = self._pending
            ridge_update(self.ridge, up, x)   # regressor is the control alone
        if not self._frozen and self._steps_left == 0:
            if self._plan_pos + 1 < len(self._plan):
                self._plan_pos += 1
                point, steps = self._plan[self._plan_pos]
                self._steps_left = steps
                self._switch_to(point)
            else:
                if self._epoch_rec is not None:
                    self._finalize_epoch()
                self._start_epoch()
        if not self._frozen:
            self._steps_left -= 1
        u = self._current.copy()
        self._pending = (x.copy(), u.copy())
        self.t += 1
        return u


def run_warmup_case(sys: LinearSystem, cost: CostOracle, cfg: WarmupCaseConfig,
                    seed: int, T: int, noise_kind: str = "standard-gaussian",
                    deadline=None):
    """No-dynamics geometric exploration; requires A = 0."""
    from .lds import DisturbanceSource

    if np.any(sys.A != 0.0):
        raise ValueError("the no-dynamics controller requires A = 0")
    noise = DisturbanceSource(noise_kind, seed=seed, d_x=sys.d_x)
    ctrl = WarmupCaseController(sys.d_x, sys.d_u, sys.beta, cost, cfg, seed)
    traj = rollout(sys, ctrl, noise, T, cost=cost, deadline=deadline)
    audit = ctrl.audit
    audit.close(T)
    if audit.epochs and audit.epochs[-1].t_end is None:
        audit.events.append("horizon ended mid-epoch (final epoch truncated)")
    return traj, audit


# ---------------------------------------------------------------------------
# Explore-then-commit baseline
# ---------------------------------------------------------------------------

class EtcController:
    """Random exploration, one estimate, then the greedy policy forever.

    After committing, disturbance estimates come from the fixed
    certainty-equivalent estimate; the system is never re-identified.
    """

    def __init__(self, d_x: int, d_u: int, kappa: float, gamma: float,
                 beta: float, cost: CostOracle, explore_len: int,
                 spec: PolicyClassSpec, n_mc: int, seed: int):
        self.d_x, self.d_u = d_x, d_u
        self.cost = cost
        self.explore_len = int(explore_len)
        self.spec = spec
        self.n_mc = n_mc
        self.seed = int(seed)
        reg = (kappa ** 2 + beta) ** -2
        self.ridge = RidgeState(d_x + d_u, d_x, lam=reg)
        self.est: SystemEstimate | None = None
        self.wlog = DisturbanceLog(d_x)
        self.policy: DfcPolicy | None = None
        self.audit = RunAudit(kind="policy")
        self._rng = substream(seed, CONTROL, "etc")
        self._pending = None
        self.t = 0
        self.audit.segments.append(Segment(start=0, end=None, kind="explore",
                                           point=None, epoch=0,
                                           label="explore"))

    def _commit(self) -> None:
        self.est = ridge_solve(self.ridge)
        model = FrozenPolicyCost(self.spec, self.est.A_hat, self.est.B_hat,
                                 self.cost,
                                 seed=int(substream(self.seed, REGION,
                                                    "etc").integers(2 ** 62)),
                                 n_samples=self.n_mc)
        region = ConvexRegion(PolicyBudgetBase(self.spec))
        point, value = region_minimize(region,
                                       lambda f: model.value_grad(f)[::2],
                                       tol_min=1e-3)
        self.policy = unflatten(point, self.spec)
        self.audit.segments[-1].end = self.t
        self.audit.segments.append(Segment(start=self.t, end=None,
                                           kind="policy", point=point.copy(),
                                           epoch=1, label="commit"))
        self.audit.extras["committed_value"] = value

    def observe(self, x, prev_cost=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._pending is not None:
            xp, up = self._pending
            if self.est is None:
                ridge_update(self.ridge, np.concatenate([xp, up]), x)
            else:
                self.wlog.record(estimate_disturbance(x, self.est, xp, up))
        if self.t == self.explore_len and self.est is None:
            self._commit()
        if self.est is None:
            u = self._rng.standard_normal(self.d_u)
        else:
            u = self.policy.control(self.wlog.window(self.spec.H))
        self._pending = (x.copy(), u.copy())
        self.t += 1
        return u


def run_etc_baseline(sys: LinearSystem, cost: CostOracle, explore_len: int,
                     T: int, seed: int, H: int, G: float = 2.0,
                     n_mc: int = 384, noise_kind: str = "standard-gaussian",
                     deadline=None):
    from .lds import DisturbanceSource

    if explore_len >= T:
        explore_len = T  # pure exploration; never commits
    spec = PolicyClassSpec(H=H, G=G, d_x=sys.d_x, d_u=sys.d_u)
    noise = DisturbanceSource(noise_kind, seed=seed, d_x=sys.d_x)
    ctrl = EtcController(sys.d_x, sys.d_u, sys.kappa, sys.gamma, sys.beta,
                         cost, explore_len, spec, n_mc, seed)
    traj = rollout(sys, ctrl, noise, T, cost=cost, deadline=deadline)
    audit = ctrl.audit
    audit.w_hat = ctrl.wlog.as_array()
    audit.close(T)
    return traj, audit


# ---------------------------------------------------------------------------
# Stabilizing wrapper for unstable systems
# ---------------------------------------------------------------------------

def inflated_budget(G_unst: float, kappa: float, gamma: float) -> float:
    """Norm budget the inner controller needs once a stabilizer runs."""
    return G_unst + kappa ** 3 / gamma


class StabilizedController:
    """Adds K0 x to an inner controller's output; aborts on blowup."""

    def __init__(self, K0, inner, blowup_threshold: float,
                 effective_G: float | None = None):
        self.K0 = np.asarray(K0, dtype=float)
        self.inner = inner
        self.blowup_threshold = float(blowup_threshold)
        self.audit = getattr(inner, "audit", None)
        if self.audit is not None and effective_G is not None:
            self.audit.extras["effective_G"] = effective_G

    def observe(self, x, prev_cost=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.linalg.norm(x) > self.blowup_threshold:
            from .lds import RolloutError
            raise RolloutError(
                f"state norm {np.linalg.norm(x):.3g} exceeded blowup "
                f"threshold {self.blowup_threshold:.3g}; closed loop unstable")
        step = (self.inner.observe if hasattr(self.inner, "observe")
                else self.inner)
        return self.K0 @ x + step(x, prev_cost)


def stabilize_wrapper(K0, inner, kappa: float, gamma: float,
                      G_unst: float | None = None,
                      blowup_threshold: float = 1e6) -> StabilizedController:
    effective = (inflated_budget(G_unst, kappa, gamma)
                 if G_unst is not None else None)
    return StabilizedController(K0, inner, blowup_threshold, effective)


# ---------------------------------------------------------------------------
# Regret accounting (harness side; uses the true system)
# ---------------------------------------------------------------------------

@dataclass
class Comparator:
    """Best fixed policy/control against the true system.

    ``value`` re-evaluates the minimizer on a large independent sample
    (realized regret subtracts T times this number, so its Monte-Carlo
    error must be far below per-step regret); ``surrogate_value`` is the
    same point on the small common-random-number model used for segment
    evaluations, keeping the average-regret differences noise-cancelled.
    """

    point: np.ndarray
    value: float
    se: float
    model: object
    surrogate_value: float
    surrogate_se: float


def comparator_minimum(sys: LinearSystem, cost: CostOracle, kind: str,
                       spec: PolicyClassSpec | None = None,
                       U: float | None = None, n_samples: int = 8192,
                       seed: int = 0, iters: int = 600,
                       value_samples: int = 1 << 18) -> Comparator:
    """Frozen-seed surrogate minimization over the base class, with a
    high-precision value re-read at the minimizer."""
    if kind == "policy":
        model = FrozenPolicyCost(spec, sys.A, sys.B, cost, seed=seed,
                                 n_samples=n_samples)
        region = ConvexRegion(PolicyBudgetBase(spec))
    elif kind == "control":
        model = FrozenControlCost(sys.B, cost, seed=seed, n_samples=n_samples,
                                  d_x=sys.d_x)
        region = ConvexRegion(ControlBallBase(sys.d_u, U))
    else:
        raise ValueError(f"unknown comparator kind {kind!r}")
    point, value = region_minimize(region,
                                   lambda f: model.value_grad(f)[::2],
                                   tol_min=1e-3, iters=iters)
    s_value, s_se = model.value(point)
    if kind == "policy":
        big = FrozenPolicyCost(spec, sys.A, sys.B, cost, seed=seed + 1,
                               n_samples=value_samples)
    else:
        big = FrozenControlCost(sys.B, cost, seed=seed + 1,
                                n_samples=value_samples, d_x=sys.d_x)
    hi_value, hi_se = big.value(point)
    return Comparator(point=np.asarray(point, dtype=float), value=hi_value,
                      se=hi_se, model=model, surrogate_value=s_value,
                      surrogate_se=s_se)


def compute_regret(traj: Trajectory, sys: LinearSystem, cost: CostOracle,
                   audit: RunAudit, spec: PolicyClassSpec | None = None,
                   U: float | None = None, n_samples: int = 8192,
                   seed: int = 0, comparator=None,
                   surrogate_stride: int = 1) -> RegretLedger:
    """Assemble the regret ledger for a finished run.

    The comparator value is the frozen-seed surrogate minimum over the
    base class against the true system; per-segment surrogate values use
    the same frozen draws, so segment-vs-comparator differences are
    common-random-number estimates. Pass ``comparator`` (from
    comparator_minimum) to share one minimization across runs.
    ``surrogate_stride`` > 1 evaluates only every k-th distinct segment
    (holding the last value in between) for controllers that switch every
    step; the approximation is flagged in the ledger notes.
    """
    T = traj.T
    notes: list = []
    if comparator is None:
        comparator = comparator_minimum(sys, cost, audit.kind, spec=spec, U=U,
                                        n_samples=n_samples, seed=seed)
    model = comparator.model

    surrogate = np.zeros(T)
    surrogate_se = np.zeros(T)
    cache: dict[bytes, tuple[float, float]] = {}
    if surrogate_stride > 1:
        notes.append(f"surrogate values sampled every {surrogate_stride} "
                     "segments (held in between)")
    held: tuple[float, float] | None = None
    for i, s in enumerate(audit.segments):
        if s.start >= T:
            continue
        end = min(s.end if s.end is not None else T, T)
        if s.point is None:
            surrogate[s.start:end] = traj.costs[s.start:end]
            if "explore steps use realized cost as surrogate" not in notes:
                notes.append("explore steps use realized cost as surrogate")
            continue
        if surrogate_stride > 1 and i % surrogate_stride and held is not None:
            v, se = held
        else:
            key = np.asarray(s.point).tobytes()
            if key not in cache:
                cache[key] = model.value(np.asarray(s.point, dtype=float))
            v, se = cache[key]
            held = (v, se)
        surrogate[s.start:end] = v
        surrogate_se[s.start:end] = se

    return RegretLedger(
        realized=traj.costs.copy(),
        surrogate=surrogate,
        surrogate_se=surrogate_se,
        comparator_value=comparator.value,
        comparator_se=comparator.se,
        comparator_point=comparator.point.copy(),
        epoch_id=audit.step_epochs(T),
        switch_flag=audit.switch_flags(T),
        surrogate_comparator_value=comparator.surrogate_value,
        surrogate_comparator_se=comparator.surrogate_se,
        notes=notes,
    )


def play_policy_with_true_disturbances(sys: LinearSystem, policy: DfcPolicy,
                                       noise, T: int, cost: CostOracle | None = None,
                                       x1=None) -> Trajectory:
    """Diagnostic oracle run: execute a fixed policy on the true
    disturbances (never available to a real controller)."""
    rng = noise.stream()
    d_x = sys.d_x
    H = policy.H
    states = np.zeros((T + 1, d_x))
    controls = np.zeros((T, sys.d_u))
    dist = np.zeros((T, d_x))
    costs = np.zeros(T)
    x = np.zeros(d_x) if x1 is None else np.asarray(x1, dtype=float).copy()
    states[0] = x
    for t in range(T):
        window = np.zeros((H, d_x))
        for i in range(min(H, t)):
            window[i] = dist[t - 1 - i]
        u = policy.control(window)
        w = noise.draw(rng)
        if cost is not None:
            costs[t] = float(cost.value(x, u))
        x = sys.A @ x + sys.B @ u + w
        controls[t] = u
        dist[t] = w
        states[t + 1] = x
    return Trajectory(states=states, controls=controls, disturbances=dist,
                      costs=costs)
