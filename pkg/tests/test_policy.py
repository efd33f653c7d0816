import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoctrl.controllers import play_policy_with_true_disturbances
from geoctrl.costs import CostOracle, smoothed_l1
from geoctrl.lds import DisturbanceSource, random_system
from geoctrl.policy import (DfcPolicy, PolicyClassSpec, default_memory,
                            flatten, policy_covariance, project_to_class,
                            response_matrices, surrogate_cost, surrogate_pair,
                            unflatten)


def rand_policy(spec, rng, scale=0.2) -> DfcPolicy:
    return DfcPolicy(scale * rng.standard_normal((spec.H, spec.d_u, spec.d_x)))


# ---------------------------------------------------------------------------
# Response matrices
# ---------------------------------------------------------------------------

def test_response_zero_policy_is_matrix_powers():
    spec = PolicyClassSpec(H=3, G=1.0, d_x=2, d_u=2)
    A = np.array([[0.4, 0.1], [0.0, 0.3]])
    R = response_matrices(DfcPolicy.zero(spec), A, np.eye(2))
    P = np.eye(2)
    for i in range(7):
        if i <= 3:
            assert np.allclose(R[i], P), i
            P = P @ A
        else:
            assert np.allclose(R[i], 0.0), i


def test_response_no_dynamics():
    rng = np.random.default_rng(0)
    spec = PolicyClassSpec(H=2, G=1.0, d_x=2, d_u=2)
    pol = rand_policy(spec, rng)
    B = rng.standard_normal((2, 2))
    R = response_matrices(pol, np.zeros((2, 2)), B)
    assert np.allclose(R[0], np.eye(2))
    assert np.allclose(R[1], B @ pol.blocks[0])
    assert np.allclose(R[2], B @ pol.blocks[1])
    assert np.allclose(R[3:], 0.0)


def test_response_scalar_example_matches_unrolling_oracle():
    # a=0.5, b=1, H=2, M=(0.3, 0.2); expected coefficients from symbolic
    # unrolling of x_{t+1} = a x_t + b u_t + w_t with u_t = m0 w_{t-1} + m1 w_{t-2}
    pol = DfcPolicy(np.array([[[0.3]], [[0.2]]]))
    R = response_matrices(pol, np.array([[0.5]]), np.array([[1.0]])).ravel()
    assert np.allclose(R, [1.0, 0.8, 0.6, 0.175, 0.05])

    # brute-force unrolling oracle on a random disturbance draw
    rng = np.random.default_rng(1)
    w = rng.standard_normal(40)
    x = np.zeros(41)
    for t in range(40):
        u = (0.3 * w[t - 1] if t >= 1 else 0.0) + (0.2 * w[t - 2] if t >= 2 else 0.0)
        x[t + 1] = 0.5 * x[t] + u + w[t]
    t = 30
    pred = 0.5 ** 3 * x[t - 2] + sum(R[i] * w[t - i] for i in range(5))
    assert x[t + 1] == pytest.approx(pred, abs=1e-12)


def test_response_affine_in_policy():
    rng = np.random.default_rng(2)
    spec = PolicyClassSpec(H=3, G=1.0, d_x=2, d_u=2)
    A = 0.3 * rng.standard_normal((2, 2))
    B = rng.standard_normal((2, 2))
    p1, p2 = rand_policy(spec, rng), rand_policy(spec, rng)
    for alpha in (0.0, 0.3, 1.0, -0.5):
        mix = DfcPolicy(alpha * p1.blocks + (1 - alpha) * p2.blocks)
        lhs = response_matrices(mix, A, B)
        rhs = (alpha * response_matrices(p1, A, B)
               + (1 - alpha) * response_matrices(p2, A, B))
        assert np.allclose(lhs, rhs, atol=1e-12)


def test_exact_unrolling_identity_against_execution():
    """x_{t+1} equals A^{H+1} x_{t-H} + sum_i R_i w_{t-i} along a real run."""
    for seed in range(3):
        rng = np.random.default_rng(seed)
        sys_ = random_system(3, 2, kappa=1.8, gamma=0.4, beta=1.5, seed=seed)
        spec = PolicyClassSpec(H=4, G=1.5, d_x=3, d_u=2)
        pol = rand_policy(spec, rng)
        noise = DisturbanceSource("standard-gaussian", seed=seed + 50, d_x=3)
        traj = play_policy_with_true_disturbances(sys_, pol, noise, T=40)
        R = response_matrices(pol, sys_.A, sys_.B)
        AH1 = np.linalg.matrix_power(sys_.A, spec.H + 1)
        for t in range(2 * spec.H + 1, 40):
            w_win = np.stack([traj.disturbances[t - i] for i in range(2 * spec.H + 1)])
            pred = AH1 @ traj.states[t - spec.H] + np.einsum(
                "ixy,iy->x", R, w_win)
            assert np.max(np.abs(traj.states[t + 1] - pred)) < 1e-10


# ---------------------------------------------------------------------------
# Surrogate pair and cost
# ---------------------------------------------------------------------------

def test_surrogate_pair_trivials():
    spec = PolicyClassSpec(H=2, G=1.0, d_x=2, d_u=2)
    rng = np.random.default_rng(3)
    A = 0.4 * rng.standard_normal((2, 2))
    B = rng.standard_normal((2, 2))
    pol = rand_policy(spec, rng)
    x, u = surrogate_pair(pol, A, B, np.zeros((5, 2)))
    assert np.allclose(x, 0) and np.allclose(u, 0)

    shocks = rng.standard_normal((5, 2))
    x, u = surrogate_pair(DfcPolicy.zero(spec), A, B, shocks)
    assert np.allclose(u, 0)
    powsum = sum(np.linalg.matrix_power(A, i) @ shocks[i] for i in range(3))
    assert np.allclose(x, powsum)

    with pytest.raises(ValueError):
        surrogate_pair(pol, A, B, np.zeros((4, 2)))


def test_surrogate_pair_matches_rollout_window():
    """(x_t - A^{H+1} x_{t-H-1}, u_t) from a true-disturbance execution is
    the surrogate pair evaluated at that window."""
    rng = np.random.default_rng(4)
    sys_ = random_system(2, 2, kappa=1.6, gamma=0.5, beta=1.5, seed=11)
    spec = PolicyClassSpec(H=3, G=1.5, d_x=2, d_u=2)
    pol = rand_policy(spec, rng)
    noise = DisturbanceSource("standard-gaussian", seed=12, d_x=2)
    T = 3 * spec.H + 2
    traj = play_policy_with_true_disturbances(sys_, pol, noise, T=T)
    t = T - 1  # 0-based; x_t is traj.states[t]
    window = np.stack([traj.disturbances[t - 1 - i]
                       for i in range(2 * spec.H + 1)])
    x_s, u_s = surrogate_pair(pol, sys_.A, sys_.B, window)
    AH1 = np.linalg.matrix_power(sys_.A, spec.H + 1)
    assert np.allclose(x_s, traj.states[t] - AH1 @ traj.states[t - spec.H - 1],
                       atol=1e-12)
    assert np.allclose(u_s, traj.controls[t], atol=1e-12)


def test_surrogate_cost_zero_cost():
    spec = PolicyClassSpec(H=2, G=1.0, d_x=2, d_u=2)
    zero = CostOracle(value=lambda x, u: np.zeros(np.atleast_2d(x).shape[0]),
                      subgradient=lambda x, u: np.zeros(
                          (np.atleast_2d(x).shape[0], 4)))
    pol = rand_policy(spec, np.random.default_rng(5))
    v, se, g = surrogate_cost(pol, 0.3 * np.eye(2), np.eye(2), zero,
                              n_samples=64, seed=0)
    assert v == 0.0 and se == 0.0 and np.allclose(g, 0.0)


def test_surrogate_cost_linear_zero_mean():
    spec = PolicyClassSpec(H=2, G=1.0, d_x=2, d_u=2)
    c_x = np.array([1.0, -2.0])
    lin = CostOracle(
        value=lambda x, u: np.atleast_2d(x) @ c_x,
        subgradient=lambda x, u: np.hstack([
            np.tile(c_x, (np.atleast_2d(x).shape[0], 1)),
            np.zeros((np.atleast_2d(x).shape[0], 2))]))
    pol = rand_policy(spec, np.random.default_rng(6))
    v, se, _ = surrogate_cost(pol, 0.3 * np.eye(2), np.eye(2), lin,
                              n_samples=4096, seed=1)
    assert abs(v) <= 4.0 * se


def test_surrogate_cost_gradient_finite_differences():
    rng = np.random.default_rng(7)
    spec = PolicyClassSpec(H=3, G=2.0, d_x=2, d_u=2)
    A = 0.35 * rng.standard_normal((2, 2))
    B = 0.5 * rng.standard_normal((2, 2))
    cost = smoothed_l1(2, 2, delta=0.3)
    pol = rand_policy(spec, rng)
    shocks = np.random.default_rng(8).standard_normal((2048, 7, 2))
    _, _, g = surrogate_cost(pol, A, B, cost, shocks=shocks)
    eps = 1e-5
    worst = 0.0
    for idx in np.ndindex(g.shape):
        bp, bm = pol.blocks.copy(), pol.blocks.copy()
        bp[idx] += eps
        bm[idx] -= eps
        vp, _, _ = surrogate_cost(DfcPolicy(bp), A, B, cost, shocks=shocks)
        vm, _, _ = surrogate_cost(DfcPolicy(bm), A, B, cost, shocks=shocks)
        worst = max(worst, abs((vp - vm) / (2 * eps) - g[idx]))
    assert worst <= 1e-4


def test_surrogate_cost_deterministic():
    spec = PolicyClassSpec(H=2, G=1.0, d_x=2, d_u=2)
    pol = rand_policy(spec, np.random.default_rng(9))
    cost = smoothed_l1(2, 2)
    a = surrogate_cost(pol, 0.2 * np.eye(2), np.eye(2), cost, 512, seed=3)
    b = surrogate_cost(pol, 0.2 * np.eye(2), np.eye(2), cost, 512, seed=3)
    assert a[0] == b[0] and a[1] == b[1] and np.array_equal(a[2], b[2])


def test_surrogate_convexity_in_policy():
    rng = np.random.default_rng(10)
    spec = PolicyClassSpec(H=2, G=2.0, d_x=2, d_u=2)
    A = 0.4 * rng.standard_normal((2, 2))
    B = rng.standard_normal((2, 2))
    cost = smoothed_l1(2, 2, delta=0.25)
    shocks = np.random.default_rng(11).standard_normal((2048, 5, 2))
    for _ in range(10):
        p1, p2 = rand_policy(spec, rng, 0.4), rand_policy(spec, rng, 0.4)
        th = float(rng.uniform())
        mix = DfcPolicy(th * p1.blocks + (1 - th) * p2.blocks)
        vm, sm, _ = surrogate_cost(mix, A, B, cost, shocks=shocks)
        v1, s1, _ = surrogate_cost(p1, A, B, cost, shocks=shocks)
        v2, s2, _ = surrogate_cost(p2, A, B, cost, shocks=shocks)
        assert vm <= th * v1 + (1 - th) * v2 + 5.0 * (sm + s1 + s2)


# ---------------------------------------------------------------------------
# Covariance
# ---------------------------------------------------------------------------

def test_covariance_trivial_block():
    spec = PolicyClassSpec(H=2, G=1.0, d_x=2, d_u=2)
    cov = policy_covariance(DfcPolicy.zero(spec), np.zeros((2, 2)), np.eye(2))
    expect = np.zeros((4, 4))
    expect[:2, :2] = np.eye(2)
    assert np.allclose(cov.Sigma, expect)


def test_covariance_scalar_hand_example():
    m = 0.7
    cov = policy_covariance(DfcPolicy(np.array([[[m]]])), np.array([[0.0]]),
                            np.array([[1.0]]))
    assert np.allclose(cov.Sigma, [[1 + m * m, m], [m, m * m]])


def test_covariance_is_psd_and_factorized():
    rng = np.random.default_rng(12)
    spec = PolicyClassSpec(H=3, G=2.0, d_x=2, d_u=2)
    pol = rand_policy(spec, rng)
    A = 0.4 * rng.standard_normal((2, 2))
    B = rng.standard_normal((2, 2))
    cov = policy_covariance(pol, A, B)
    assert np.allclose(cov.Sigma, cov.T_matrix @ cov.T_matrix.T)
    assert np.linalg.eigvalsh(cov.Sigma).min() >= -1e-9


def test_covariance_monte_carlo():
    rng = np.random.default_rng(13)
    spec = PolicyClassSpec(H=2, G=2.0, d_x=2, d_u=2)
    pol = rand_policy(spec, rng, 0.5)
    A = 0.4 * rng.standard_normal((2, 2))
    B = rng.standard_normal((2, 2))
    Sigma = policy_covariance(pol, A, B).Sigma
    n = 100_000
    sh = np.random.default_rng(14).standard_normal((n, 5, 2))
    R = response_matrices(pol, A, B)
    xs = np.einsum("ixy,niy->nx", R, sh)
    us = np.einsum("muy,nmy->nu", pol.blocks, sh[:, :2])
    Z = np.concatenate([xs, us], axis=1)
    emp = Z.T @ Z / n
    # per-entry stderr of a Gaussian sample covariance
    se = np.sqrt((np.outer(np.diag(Sigma), np.diag(Sigma)) + Sigma ** 2) / n)
    assert np.all(np.abs(emp - Sigma) <= 5.0 * se + 1e-12)


# ---------------------------------------------------------------------------
# Flatten / unflatten / projection
# ---------------------------------------------------------------------------

def test_flatten_round_trip_and_linearity():
    spec = PolicyClassSpec(H=3, G=2.0, d_x=2, d_u=3)
    rng = np.random.default_rng(15)
    p1, p2 = rand_policy(spec, rng), rand_policy(spec, rng)
    assert np.array_equal(unflatten(flatten(p1), spec).blocks, p1.blocks)
    assert np.array_equal(flatten(DfcPolicy.zero(spec)), np.zeros(spec.dim))
    assert np.allclose(flatten(DfcPolicy(p1.blocks + p2.blocks)),
                       flatten(p1) + flatten(p2))
    with pytest.raises(ValueError):
        unflatten(np.zeros(spec.dim + 1), spec)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=8, max_size=8))
def test_flatten_bijective_property(vals):
    spec = PolicyClassSpec(H=2, G=2.0, d_x=2, d_u=2)
    vec = np.asarray(vals)
    assert np.array_equal(flatten(unflatten(vec, spec)), vec)


def test_projection_onto_class():
    spec = PolicyClassSpec(H=3, G=1.0, d_x=2, d_u=2)
    rng = np.random.default_rng(16)
    inside = rand_policy(spec, rng, 0.05)
    assert project_to_class(inside, spec) is inside

    outside = rand_policy(spec, rng, 3.0)
    proj = project_to_class(outside, spec)
    assert proj.budget() <= spec.G + 1e-9
    # directions preserved: each clipped block is the original singular
    # frame with capped singular values
    for b_old, b_new in zip(outside.blocks, proj.blocks):
        U1, S1, V1t = np.linalg.svd(b_old, full_matrices=False)
        S2 = np.linalg.svd(b_new, compute_uv=False)
        tau = S2.max()
        assert np.allclose(b_new, (U1 * np.minimum(S1, tau)) @ V1t, atol=1e-9)
    # idempotent
    again = project_to_class(proj, spec)
    assert np.allclose(again.blocks, proj.blocks)


def test_default_memory_formula():
    H = default_memory(gamma=0.5, T=10_000, d_x=2, d_u=2, hp_exponent=2.0,
                       c_H=2.0)
    assert H == int(np.ceil(2.0 / 0.5 * np.log(10_000 * 4 * 2.0)))


def test_policy_serialization():
    spec = PolicyClassSpec(H=2, G=1.0, d_x=3, d_u=2)
    pol = rand_policy(spec, np.random.default_rng(17))
    back = DfcPolicy.from_dict(pol.to_dict())
    assert np.array_equal(back.blocks, pol.blocks)
