"""Convex policy regions, separation oracles, and spanner construction.

A region is a base norm-budget class intersected with frozen sublevel
constraints accumulated by elimination. Freezing the Monte-Carlo shock
draws per constraint makes membership a deterministic test, so the
region is an honest set: the separation oracle, the cutting-plane linear
optimizer, the determinant-swap spanner construction, and the projected
subgradient minimizer below all agree about who belongs to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .costs import CostOracle
from .policy import (PolicyClassSpec, project_to_class,
                     surrogate_affine_maps, unflatten)
from .rng import MC_SHOCKS, substream


class DegenerateRegionError(RuntimeError):
    pass


class OptimizeError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Frozen Monte-Carlo cost models (deterministic given their seed)
# ---------------------------------------------------------------------------

class FrozenPolicyCost:
    """Surrogate policy cost under fixed shocks, factored for cheap reuse.

    The surrogate state is affine in the flattened policy, so we
    precompute per-sample maps once and evaluate any policy with one
    matrix-vector product. Evaluations agree with ``surrogate_cost`` run
    on the same shock array.
    """

    def __init__(self, spec: PolicyClassSpec, A, B, cost: CostOracle,
                 seed: int, n_samples: int):
        if n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        self.spec = spec
        self.A = np.asarray(A, dtype=float).copy()
        self.B = np.asarray(B, dtype=float).copy()
        self.cost = cost
        self.seed = int(seed)
        self.n_samples = int(n_samples)
        n, H, d_x = n_samples, spec.H, spec.d_x
        shocks = substream(seed, MC_SHOCKS).standard_normal((n, 2 * H + 1, d_x))
        self._shock_head = shocks[:, :H].copy()
        # (n, H*d_x) layout so u = head2 @ W with W the (m, y) x u rearrangement
        self._head2 = np.ascontiguousarray(self._shock_head.reshape(n, H * d_x))
        base, xmap = surrogate_affine_maps(spec, A, B, shocks)
        self._base = base
        self._xmap2 = np.ascontiguousarray(xmap.reshape(n * d_x, spec.dim))

    @property
    def dim(self) -> int:
        return self.spec.dim

    def _pair(self, flat):
        n, H, d_x, d_u = (self.n_samples, self.spec.H, self.spec.d_x,
                          self.spec.d_u)
        x = self._base + (self._xmap2 @ flat).reshape(n, d_x)
        W = flat.reshape(H, d_u, d_x).transpose(0, 2, 1).reshape(H * d_x, d_u)
        u = self._head2 @ W
        return x, u

    def _grad(self, g):
        n, H, d_x, d_u = (self.n_samples, self.spec.H, self.spec.d_x,
                          self.spec.d_u)
        grad = (self._xmap2.T @ g[:, :d_x].reshape(-1)) / n
        gu = (self._head2.T @ g[:, d_x:]) / n  # (H*d_x, d_u)
        grad += gu.reshape(H, d_x, d_u).transpose(0, 2, 1).reshape(-1)
        return grad

    def value(self, flat) -> tuple[float, float]:
        flat = np.asarray(flat, dtype=float)
        x, u = self._pair(flat)
        vals = np.asarray(self.cost.value(x, u), dtype=float)
        n = vals.shape[0]
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))

    def value_grad(self, flat):
        flat = np.asarray(flat, dtype=float)
        x, u = self._pair(flat)
        vals = np.asarray(self.cost.value(x, u), dtype=float)
        n = vals.shape[0]
        g = np.asarray(self.cost.subgradient(x, u), dtype=float)
        return (float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n)),
                self._grad(g))

    def sample_values(self, flat) -> np.ndarray:
        """Per-sample costs under the frozen shocks (for paired tests)."""
        flat = np.asarray(flat, dtype=float)
        x, u = self._pair(flat)
        return np.asarray(self.cost.value(x, u), dtype=float)

    def separate_eval(self, flat, cap: float, ref_vals=None):
        """(value, grad-or-None): one pair build, grad only past the cap.

        With ``ref_vals`` the value is the paired difference against a
        reference point's per-sample costs; shared shocks cancel most of
        the Monte-Carlo noise in the comparison.
        """
        flat = np.asarray(flat, dtype=float)
        x, u = self._pair(flat)
        vals = np.asarray(self.cost.value(x, u), dtype=float)
        if ref_vals is not None:
            vals = vals - ref_vals
        value = float(vals.mean())
        if value <= cap:
            return value, None
        g = np.asarray(self.cost.subgradient(x, u), dtype=float)
        return value, self._grad(g)

    def diff_stderr(self, flat, ref_vals) -> float:
        d = self.sample_values(flat) - ref_vals
        return float(d.std(ddof=1) / math.sqrt(len(d)))


class FrozenControlCost:
    """Expected cost of a constant control under fixed disturbances.

    Models E_w c(B_hat u + w, u) with frozen draws of w; the no-dynamics
    analogue of FrozenPolicyCost, with the control itself as the point.
    """

    def __init__(self, B_hat, cost: CostOracle, seed: int, n_samples: int,
                 d_x: int | None = None):
        self.B_hat = np.asarray(B_hat, dtype=float).copy()
        self.cost = cost
        self.seed = int(seed)
        self.n_samples = int(n_samples)
        d_x = self.B_hat.shape[0] if d_x is None else d_x
        self._w = substream(seed, MC_SHOCKS).standard_normal((n_samples, d_x))

    @property
    def dim(self) -> int:
        return self.B_hat.shape[1]

    def value(self, u) -> tuple[float, float]:
        u = np.asarray(u, dtype=float)
        x = self._w + (self.B_hat @ u)[None, :]
        uu = np.broadcast_to(u, (x.shape[0], u.shape[0]))
        vals = np.asarray(self.cost.value(x, uu), dtype=float)
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))

    def value_grad(self, u):
        u = np.asarray(u, dtype=float)
        x = self._w + (self.B_hat @ u)[None, :]
        n = x.shape[0]
        uu = np.broadcast_to(u, (n, u.shape[0]))
        vals = np.asarray(self.cost.value(x, uu), dtype=float)
        g = np.asarray(self.cost.subgradient(x, uu), dtype=float)
        d_x = self.B_hat.shape[0]
        grad = self.B_hat.T @ g[:, :d_x].mean(axis=0) + g[:, d_x:].mean(axis=0)
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n)), grad

    def sample_values(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        x = self._w + (self.B_hat @ u)[None, :]
        uu = np.broadcast_to(u, (x.shape[0], u.shape[0]))
        return np.asarray(self.cost.value(x, uu), dtype=float)

    def separate_eval(self, u, cap: float, ref_vals=None):
        u = np.asarray(u, dtype=float)
        x = self._w + (self.B_hat @ u)[None, :]
        n = x.shape[0]
        uu = np.broadcast_to(u, (n, u.shape[0]))
        vals = np.asarray(self.cost.value(x, uu), dtype=float)
        if ref_vals is not None:
            vals = vals - ref_vals
        value = float(vals.mean())
        if value <= cap:
            return value, None
        g = np.asarray(self.cost.subgradient(x, uu), dtype=float)
        d_x = self.B_hat.shape[0]
        grad = self.B_hat.T @ g[:, :d_x].mean(axis=0) + g[:, d_x:].mean(axis=0)
        return value, grad

    def diff_stderr(self, u, ref_vals) -> float:
        d = self.sample_values(u) - ref_vals
        return float(d.std(ddof=1) / math.sqrt(len(d)))


# ---------------------------------------------------------------------------
# Regions
# ---------------------------------------------------------------------------

class PolicyBudgetBase:
    """Base class {M : sum_i ||M^[i]||_2 <= G} over flattened policies."""

    def __init__(self, spec: PolicyClassSpec):
        self.spec = spec

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def radius(self) -> float:
        return max(self.spec.flat_radius, 1e-12)

    def norm(self, flat) -> float:
        blocks = flat.reshape(self.spec.H, self.spec.d_u, self.spec.d_x)
        return float(sum(np.linalg.norm(b, 2) for b in blocks))

    def separate(self, flat, tol: float = 1e-9):
        spec = self.spec
        blocks = flat.reshape(spec.H, spec.d_u, spec.d_x)
        total = 0.0
        g_blocks = np.zeros_like(blocks)
        for i, b in enumerate(blocks):
            U, S, Vt = np.linalg.svd(b, full_matrices=False)
            total += S[0] if S.size else 0.0
            if S.size:
                g_blocks[i] = np.outer(U[:, 0], Vt[0])
        if total <= spec.G + tol:
            return None
        g = g_blocks.reshape(-1)
        return g, float(g @ flat - (total - spec.G))

    def project(self, flat) -> np.ndarray:
        spec = self.spec
        policy = unflatten(np.asarray(flat, dtype=float), spec)
        return project_to_class(policy, spec).blocks.reshape(-1)

    def describe(self) -> dict:
        return {"kind": "policy-budget", "H": self.spec.H, "G": self.spec.G,
                "d_x": self.spec.d_x, "d_u": self.spec.d_u}


class ControlBallBase:
    """Base class {u : ||u|| <= U} for the no-dynamics setting."""

    def __init__(self, d_u: int, U: float):
        self.d_u = d_u
        self.U = float(U)

    @property
    def dim(self) -> int:
        return self.d_u

    @property
    def radius(self) -> float:
        return max(self.U, 1e-12)

    def separate(self, u, tol: float = 1e-9):
        r = float(np.linalg.norm(u))
        if r <= self.U + tol:
            return None
        g = u / r
        return g, float(g @ u - (r - self.U))

    def project(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        r = np.linalg.norm(u)
        return u if r <= self.U else u * (self.U / r)

    def describe(self) -> dict:
        return {"kind": "control-ball", "d_u": self.d_u, "U": self.U}


@dataclass
class SublevelConstraint:
    """Frozen-seed elimination constraint.

    Absolute form (ref_vals None): value(point) <= threshold + margin.
    Paired form: mean over shared shocks of
    [cost(point) - cost(reference)] <= threshold + margin. The paired
    form is what elimination uses: with common random numbers the
    Monte-Carlo noise of the comparison shrinks with the gap itself, so
    late-epoch thresholds are not drowned by a fixed noise floor.
    ``margin`` is three standard errors of the tested quantity, frozen at
    construction so the member set stays deterministic and convex.
    """

    model: object
    threshold: float
    margin: float
    epsilon_r: float
    ref_point: np.ndarray | None = None
    ref_vals: np.ndarray | None = None
    label: str = ""

    @property
    def cap(self) -> float:
        return self.threshold + self.margin

    def excess(self, point):
        """(amount above cap, grad-or-None); amount <= 0 means satisfied."""
        value, grad = self.model.separate_eval(point, self.cap,
                                               ref_vals=self.ref_vals)
        return value - self.cap, grad

    def separate(self, point):
        exceed, grad = self.excess(point)
        if grad is None:
            return None
        return grad, float(grad @ point - exceed)

    def describe(self) -> dict:
        return {"threshold": self.threshold, "margin": self.margin,
                "epsilon_r": self.epsilon_r, "label": self.label,
                "paired": self.ref_vals is not None,
                "mc_seed": getattr(self.model, "seed", None),
                "n_samples": getattr(self.model, "n_samples", None)}


class ConvexRegion:
    """Base class intersected with accumulated sublevel constraints.

    Non-emptiness is witnessed by ``witness``, kept up to date with the
    latest region minimizer. Immutable apart from shrink(), which
    returns nothing but appends one constraint (the region only ever
    gets smaller).
    """

    def __init__(self, base, witness=None):
        self.base = base
        self.constraints: list[SublevelConstraint] = []
        self.witness = (np.zeros(base.dim) if witness is None
                        else np.asarray(witness, dtype=float).copy())

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def radius(self) -> float:
        return self.base.radius

    def shrink(self, constraint: SublevelConstraint, witness) -> None:
        self.constraints.append(constraint)
        self.witness = np.asarray(witness, dtype=float).copy()

    def describe(self) -> dict:
        return {"base": self.base.describe(),
                "constraints": [c.describe() for c in self.constraints],
                "witness": self.witness.tolist()}


def separation_oracle(region: ConvexRegion, point):
    """None when the point is a member, else (g, b) with <g, x> <= b on
    the region and <g, point> > b."""
    point = np.asarray(point, dtype=float)
    if not np.all(np.isfinite(point)):
        raise ValueError("separation oracle queried at a non-finite point")
    hit = region.base.separate(point)
    if hit is not None:
        return hit
    for c in region.constraints:
        hit = c.separate(point)
        if hit is not None:
            return hit
    return None


def membership(region: ConvexRegion, point) -> bool:
    return separation_oracle(region, point) is None


# ---------------------------------------------------------------------------
# Linear optimization by central-cut ellipsoid
# ---------------------------------------------------------------------------

def _linopt_1d(region, c, n_bisect: int = 60):
    w = region.witness.copy()
    s = 1.0 if c[0] >= 0 else -1.0
    lo = w[0]
    hi = w[0] + s * 2.0 * region.radius
    if membership(region, np.array([hi])):
        return np.array([hi]), float(c[0] * hi)
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        if membership(region, np.array([mid])):
            lo = mid
        else:
            hi = mid
    return np.array([lo]), float(c[0] * lo)


def linear_optimize(region: ConvexRegion, direction, rel_accuracy: float = 1.01,
                    c_iter: float = 6.0, eps_ball: float | None = None,
                    shift: float = 0.0):
    """Maximize <direction, x> over the region via central-cut ellipsoid.

    Returns a feasible (argmax, value) whose value is within the
    multiplicative ``rel_accuracy`` of the optimum (for positive optima;
    an absolute floor covers values near zero). Infeasible centers are
    cut with the separating hyperplane, feasible ones with the objective.
    ``shift`` recenters the value used in the stopping tests: spanner
    construction optimizes over a translated set, and the accuracy has to
    hold for <direction, x> - <direction, anchor>, not the raw value.
    """
    c = np.asarray(direction, dtype=float)
    n = region.dim
    if c.shape != (n,):
        raise ValueError(f"direction must have shape ({n},)")
    if rel_accuracy < 1.01:
        raise ValueError("rel_accuracy below 1.01 is not supported")
    cn = float(np.linalg.norm(c))
    if cn == 0.0:
        return region.witness.copy(), 0.0
    if n == 1:
        return _linopt_1d(region, c)

    R = region.radius
    if eps_ball is None:
        eps_ball = 1e-6 * R
    max_iter = int(c_iter * n * n * math.log(max(R / eps_ball, 2.0))) + 16
    abs_tol = 1e-7 * cn * R

    # Start at the witness with a diameter-sized ball: the search is then
    # equivariant under translation of the region (witness included).
    z = region.witness.copy()
    P = (2.05 * R) ** 2 * np.eye(n)
    best_x = region.witness.copy()
    best_v = float(c @ best_x)
    found = membership(region, best_x)

    for _ in range(max_iter):
        width = float(np.sqrt(max(c @ P @ c, 0.0)))
        ub = float(c @ z) + width
        tb = best_v - shift
        if found and (ub - best_v <= abs_tol
                      or (tb > 0 and ub - shift <= tb * rel_accuracy)):
            break
        hit = separation_oracle(region, z)
        if hit is None:
            found = True
            v = float(c @ z)
            if v > best_v:
                best_v, best_x = v, z.copy()
            g = -c
        else:
            g = hit[0]
        Pg = P @ g
        denom2 = float(g @ Pg)
        if denom2 <= 1e-28 * max(float(g @ g), 1e-300):
            break
        denom = math.sqrt(denom2)
        z = z - Pg / ((n + 1.0) * denom)
        P = (n * n / (n * n - 1.0)) * (P - (2.0 / (n + 1.0)) * np.outer(Pg, Pg) / denom2)
        P = 0.5 * (P + P.T)

    if not found:
        raise OptimizeError("region may be empty or too thin")
    return best_x, best_v


# ---------------------------------------------------------------------------
# Barycentric spanner (determinant-swap construction)
# ---------------------------------------------------------------------------

@dataclass
class SpannerSet:
    """Spanner points with the translated basis used to span the region.

    For the affine construction, points[0] is the anchor v0 and
    basis column i is points[i+1] - v0; the linear construction has no
    anchor and points are the basis columns themselves.
    """

    points: np.ndarray      # (d+1, dim) affine, (d, dim) linear
    C: float
    basis: np.ndarray       # (dim, d) columns v_i - v_0 (or v_i)
    affine: bool
    logdet: float
    oracle_calls: int

    @property
    def anchor(self) -> np.ndarray | None:
        return self.points[0] if self.affine else None

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "C": self.C,
                "affine": self.affine, "logdet": self.logdet,
                "oracle_calls": self.oracle_calls}


def spanner_coefficients(spanner: SpannerSet, point) -> np.ndarray:
    """Coefficients lambda with point = v0 + sum_i lambda_i (v_i - v0)."""
    point = np.asarray(point, dtype=float)
    rhs = point - spanner.points[0] if spanner.affine else point
    lam = np.linalg.solve(spanner.basis, rhs)
    resid = float(np.linalg.norm(spanner.basis @ lam - rhs))
    if resid > 1e-8 * max(1.0, float(np.linalg.norm(rhs))):
        raise OptimizeError(f"coefficient solve residual {resid:.3g} too large")
    return lam


def barycentric_spanner(region: ConvexRegion, C: float = 2.0,
                        rel_accuracy: float = 1.01, c_span: float = 8.0,
                        affine: bool = True) -> SpannerSet:
    """C-approximate barycentric spanner via determinant swaps.

    Builds a basis of region points column by column, each maximizing
    |det| along the cofactor direction of its slot, then swaps any
    column that improves |det| by a factor > C until none does. Oracle
    calls are counted and asserted against the c_span * d^2 log_C d
    budget. The affine variant anchors at the region witness and spans
    the translated set.
    """
    if C <= 1.0:
        raise ValueError("C must exceed 1")
    d = region.dim
    v0 = region.witness.copy() if affine else np.zeros(d)
    calls = 0
    budget = int(c_span * d * d * (1.0 + math.log(max(d, 2)) / math.log(C))) + 8

    def best_abs(direction):
        nonlocal calls
        off = float(direction @ v0)
        x_hi, v_hi = linear_optimize(region, direction, rel_accuracy, shift=off)
        x_lo, v_lo = linear_optimize(region, -direction, rel_accuracy, shift=-off)
        calls += 2
        if calls > budget:
            raise OptimizeError(
                f"spanner oracle budget exceeded ({calls} > {budget})")
        m_hi, m_lo = v_hi - off, (-v_lo) - off
        if abs(m_hi) >= abs(m_lo):
            return x_hi - v0, m_hi
        return x_lo - v0, m_lo

    basis = np.eye(d)
    scale = max(region.radius, 1.0)
    for i in range(d):
        direction = np.linalg.solve(basis.T, np.eye(d)[i])
        nrm = np.linalg.norm(direction)
        if not np.isfinite(nrm) or nrm == 0.0:
            raise DegenerateRegionError("region not full-dimensional")
        y, val = best_abs(direction / nrm)
        if abs(val) <= 1e-9 * scale:
            raise DegenerateRegionError("region not full-dimensional")
        basis[:, i] = y

    improved = True
    while improved:
        improved = False
        for i in range(d):
            direction = np.linalg.solve(basis.T, np.eye(d)[i])
            y, val = best_abs(direction)
            # det ratio after replacing column i equals <direction, y>
            if abs(val) > C * (1.0 + 1e-9):
                basis[:, i] = y
                improved = True
                break

    sign, logdet = np.linalg.slogdet(basis)
    if sign == 0:
        raise DegenerateRegionError("region not full-dimensional")
    pts = [v0 + basis[:, i] for i in range(d)]
    points = np.stack([v0] + pts) if affine else np.stack(pts)
    return SpannerSet(points=points, C=float(C), basis=basis, affine=affine,
                      logdet=float(logdet), oracle_calls=calls)


# ---------------------------------------------------------------------------
# Region minimization (projected subgradient with averaging)
# ---------------------------------------------------------------------------

def region_minimize(region: ConvexRegion, objective, tol_min: float = 1e-3,
                    iters: int = 300, step_scales=(0.5, 1.0, 2.0),
                    penalty: float = 25.0, audit: list | None = None):
    """Minimize a convex (value, grad) callback over the region.

    Three restarts from the region witness, each a monotone projected
    gradient descent with Armijo backtracking on the exact-penalty
    objective (sublevel constraints contribute penalty * excess with
    their frozen gradients; the base class is enforced by projection).
    Each restart finishes with a short decaying-step subgradient polish
    whose averaged iterate is kept when it helps, which covers the
    nonsmooth corner cases backtracking can stall on. Returns the best
    feasible (point, value); restart values spreading beyond
    10 * tol_min is recorded as a warning in ``audit``.
    """
    start = region.witness.copy()
    project = region.base.project

    def penalized(x):
        val, grad = objective(x)
        total = val
        g = np.asarray(grad, dtype=float).copy()
        feasible = True
        for c in region.constraints:
            exceed, cg = c.excess(x)
            if cg is not None:
                feasible = False
                total += penalty * exceed
                g += penalty * cg
        return float(val), float(total), g, feasible

    results = []
    for scale in step_scales:
        x = start.copy()
        val, fx, g, feas = penalized(x)
        best_x, best_v = (x.copy(), val) if feas else (None, np.inf)
        step = scale * max(region.radius / 10.0, 1e-8)
        for _ in range(iters):
            cand = project(x - step * g)
            move = cand - x
            move_norm = float(np.linalg.norm(move))
            if move_norm <= 1e-14:
                break
            vc, fc, gc, fc_feas = penalized(cand)
            if fc <= fx - 1e-4 * move_norm * move_norm / step:
                x, fx, g = cand, fc, gc
                if fc_feas and vc < best_v:
                    best_v, best_x = vc, cand.copy()
                step *= 1.3
            else:
                step *= 0.5
                if step < 1e-12 * region.radius:
                    break
        # nonsmooth polish: averaged subgradient steps around the incumbent
        polish = max(iters // 4, 8)
        px = x.copy()
        avg = np.zeros_like(px)
        pstep = max(4.0 * tol_min, 1e-3 * region.radius)
        for k in range(1, polish + 1):
            _, _, pg, _ = penalized(px)
            px = project(px - (pstep / math.sqrt(k)) * pg)
            avg += px
        xa = avg / polish
        if membership(region, xa):
            va = float(objective(xa)[0])
            if va < best_v:
                best_v, best_x = va, xa
        if best_x is None:
            best_x, best_v = start.copy(), float(objective(start)[0])
        results.append((best_v, best_x))

    results.sort(key=lambda r: r[0])
    spread = results[-1][0] - results[0][0]
    if spread > 10.0 * tol_min and audit is not None:
        audit.append(f"region_minimize restarts disagree by {spread:.3g} "
                     f"(tol_min={tol_min:.3g}); using best")
    best_v, best_x = results[0]
    return best_x, float(best_v)


# ---------------------------------------------------------------------------
# Test/audit helper: approximately uniform interior points
# ---------------------------------------------------------------------------

def region_sample(region: ConvexRegion, n: int, rng, mix_steps: int = 8,
                  edge: float = 0.98) -> np.ndarray:
    """Hit-and-run samples from the region interior (membership-driven)."""
    d = region.dim
    x = region.witness.copy()
    out = np.empty((n, d))
    for k in range(n):
        for _ in range(mix_steps):
            u = rng.standard_normal(d)
            u /= np.linalg.norm(u)
            lo, hi = 0.0, 2.0 * region.radius
            if not membership(region, x + hi * u):
                for _ in range(40):
                    mid = 0.5 * (lo + hi)
                    if membership(region, x + mid * u):
                        lo = mid
                    else:
                        hi = mid
                reach_pos = lo
            else:
                reach_pos = hi
            lo, hi = 0.0, 2.0 * region.radius
            if not membership(region, x - hi * u):
                for _ in range(40):
                    mid = 0.5 * (lo + hi)
                    if membership(region, x - mid * u):
                        lo = mid
                    else:
                        hi = mid
                reach_neg = lo
            else:
                reach_neg = hi
            t = rng.uniform(-edge * reach_neg, edge * reach_pos)
            x = x + t * u
        out[k] = x
    return out
