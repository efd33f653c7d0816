import numpy as np
import pytest

from geoctrl.bandit import (BanditConfig, ConstantQueryOptimizer,
                            ZeroOrderOptimizer, robust_repeat_count,
                            robust_value_oracle, run_bandit)
from geoctrl.geometry import ConvexRegion, PolicyBudgetBase, region_minimize
from geoctrl.policy import DfcPolicy, PolicyClassSpec, flatten, surrogate_cost


def test_repeat_count_formula():
    # s = ceil(4 sigma^2 / gamma^2 ln n), sigma = sqrt(c+1) max(zeta, xi)
    s = robust_repeat_count(1.0, 1.0, 2.0, 0.5, 10 ** 4)
    sigma2 = 3.0
    assert s == int(np.ceil(4 * sigma2 / 0.25 * np.log(10 ** 4)))
    with pytest.raises(ValueError):
        robust_repeat_count(1.0, 1.0, 2.0, 0.0, 10)


def test_oracle_exact_under_zero_noise():
    calls = []

    def q():
        calls.append(1)
        return 3.25

    out = robust_value_oracle(q, sigma_zeta=0.5, sigma_xi=0.0, c=2.0,
                              gamma_acc=0.25, n=1000)
    assert out == 3.25
    assert len(calls) == robust_repeat_count(0.5, 0.0, 2.0, 0.25, 1000)


def test_oracle_subgaussian_tail():
    """Empirical failure rate of |avg - truth| > gamma_acc under pure
    subgaussian noise stays at the Azuma level (zero observed here)."""
    rng = np.random.default_rng(0)
    gamma_acc, n = 0.5, 10 ** 4
    s = robust_repeat_count(1.0, 0.0, 2.0, gamma_acc, n)
    fails = 0
    for _ in range(300):
        draws = iter(rng.standard_normal(s))
        avg = robust_value_oracle(lambda: 1.0 + next(draws), 1.0, 0.0, 2.0,
                                  gamma_acc, n)
        fails += abs(avg - 1.0) > gamma_acc
    assert fails == 0


def test_oracle_adversarial_budget_bound():
    """Adversarial corruption with sum of squares <= sigma_xi^2 moves the
    average by at most sigma_xi / sqrt(s) <= gamma_acc / 2."""
    gamma_acc, n, sigma_xi = 0.4, 10 ** 4, 1.0
    s = robust_repeat_count(0.0, sigma_xi, 2.0, gamma_acc, n)
    # worst case: equal spread, total square budget saturated
    xi = sigma_xi / np.sqrt(s)
    draws = iter([2.0 + xi] * s)
    avg = robust_value_oracle(lambda: next(draws), 0.0, sigma_xi, 2.0,
                              gamma_acc, n)
    assert abs(avg - 2.0) <= gamma_acc / 2.0 + 1e-12


def test_bandit_report_cadence(desk_system, desk_cost):
    """Exactly one report per 2H+1 executed steps."""
    spec = PolicyClassSpec(H=3, G=1.5, d_x=2, d_u=2)
    opt = ConstantQueryOptimizer(flatten(DfcPolicy.zero(spec)))
    T = 700
    traj, audit = run_bandit(desk_system, desk_cost, opt,
                             BanditConfig(H=3, G=1.5), seed=3, T=T)
    window = 2 * 3 + 1
    assert len(opt.reports) == (T - 1) // window
    assert audit.extras["window"] == window


def test_bandit_constant_query_unbiased(desk_system, desk_cost):
    """Reported costs of a constant query average to the stationary
    surrogate value of that policy."""
    spec = PolicyClassSpec(H=3, G=1.5, d_x=2, d_u=2)
    opt = ConstantQueryOptimizer(flatten(DfcPolicy.zero(spec)))
    traj, audit = run_bandit(desk_system, desk_cost, opt,
                             BanditConfig(H=3, G=1.5), seed=5, T=8192)
    reports = np.asarray(opt.reports)
    v, se, _ = surrogate_cost(DfcPolicy.zero(spec), desk_system.A,
                              desk_system.B, desk_cost, n_samples=30_000,
                              seed=77)
    se_rep = reports.std(ddof=1) / np.sqrt(len(reports))
    assert abs(reports.mean() - v) <= 4.0 * float(np.hypot(se_rep, se))


def test_bandit_budget_truncation_flagged(desk_system, desk_cost):
    spec = PolicyClassSpec(H=2, G=1.5, d_x=2, d_u=2)

    class TinyBudget(ConstantQueryOptimizer):
        def __init__(self, point):
            super().__init__(point)
            self.left = 2

        def query(self):
            if self.left == 0:
                return None
            self.left -= 1
            return self.point.copy()

    opt = TinyBudget(flatten(DfcPolicy.zero(spec)))
    traj, audit = run_bandit(desk_system, desk_cost, opt,
                             BanditConfig(H=2, G=1.5), seed=1, T=200)
    assert any("budget exhausted" in e for e in audit.events)
    assert traj.T == 200   # keeps playing the last policy


def test_zeroth_order_matches_full_information():
    """On a noiseless strongly convex objective the reference optimizer's
    readout closes most of the gap the full-information minimizer finds."""
    spec = PolicyClassSpec(H=1, G=2.0, d_x=2, d_u=2)
    target = np.array([0.4, -0.3, 0.2, 0.5])

    def f(flat):
        return float(np.sum((flat - target) ** 2))

    region = ConvexRegion(PolicyBudgetBase(spec))
    x_full, v_full = region_minimize(
        region, lambda x: (f(x), 2.0 * (x - target)), tol_min=1e-5, iters=800)

    zo = ZeroOrderOptimizer(spec, n_budget=6000, sigma_zeta=0.02, sigma_xi=0.0,
                            gamma_acc=0.05, probe_radius=0.1, seed=4)
    rng = np.random.default_rng(9)
    while True:
        q = zo.query()
        if q is None:
            break
        zo.report(f(q) + 0.02 * rng.standard_normal())
    gap_start = f(np.zeros(4)) - v_full
    gap_final = f(zo.best_point()) - v_full
    assert gap_final <= 0.1 * gap_start
    assert zo.n_switches >= 1


def test_switch_count_logged(desk_system, desk_cost):
    spec = PolicyClassSpec(H=2, G=1.5, d_x=2, d_u=2)
    T = 2000
    n_budget = T // (2 * 2 + 2)
    zo = ZeroOrderOptimizer(spec, n_budget, seed=2)
    traj, audit = run_bandit(desk_system, desk_cost, zo,
                             BanditConfig(H=2, G=1.5), seed=2, T=T)
    assert audit.extras["n_switches"] is not None
    assert 0 < audit.extras["n_switches"] <= n_budget
