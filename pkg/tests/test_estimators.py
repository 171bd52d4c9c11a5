import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import intercept_only_root, outcomes_for, random_dataset
from pdemee.core import Constant, MrtDataset, compute_weights
from pdemee.errors import ConfigError, NonConvergenceError, NumericError, SingularJacobianError
from pdemee.estimators import (EstimatorSpec, Kind, SolverConfig, _Problem, estimating_function,
                               fit, jacobian, newton_solve)


def one_point(a, y, p=0.5):
    return MrtDataset(delta=1, availability=np.ones((1, 1)), treatment=np.full((1, 1), float(a)),
                      rand_prob=np.full((1, 1), p), sub_outcome=np.array([[0.0, float(y)]]),
                      moderators=np.ones((1, 1, 1)), controls=np.ones((1, 1, 1)))


def ee(data, alpha, beta, kind=Kind.PD_EMEE, numerator=None, **kw):
    spec = EstimatorSpec(kind=kind, numerator=numerator, **kw)
    out = outcomes_for(data)
    w = compute_weights(data, out, numerator, k=spec.k)
    return estimating_function(data, out, w, spec, alpha, beta), (out, w, spec)


def test_zero_residual_gives_zero_u():
    u, _ = ee(one_point(1, 1), [0.0], [0.0], numerator=Constant(0.5))
    assert np.array_equal(u, [0.0, 0.0])


def test_hand_arithmetic_u():
    u, _ = ee(one_point(1, 0), [0.0], [0.0], numerator=Constant(0.5))
    assert np.allclose(u, [-1.0, -0.5], atol=1e-15)


def test_annihilated_row_contributes_nothing():
    # delta=2, no event right after t, treated at t+1: weight 0 at decision 0
    def data(a0):
        return MrtDataset(delta=2, availability=np.ones((1, 2)), treatment=np.array([[a0, 1.0]]),
                          rand_prob=np.full((1, 2), 0.5), sub_outcome=np.array([[0, 0, 1, 0.0]]),
                          moderators=np.ones((1, 2, 1)), controls=np.ones((1, 2, 1)))
    u1, _ = ee(data(1.0), [0.1], [0.2], numerator=Constant(0.5))
    u0, _ = ee(data(0.0), [0.1], [0.2], numerator=Constant(0.5))
    # only decision 1 contributes, and it is identical in both
    assert np.allclose(u1, u0, atol=1e-15)


def test_hand_jacobian_one_point():
    data = one_point(1, 1)
    _, (out, w, spec) = ee(data, [0.0], [0.0], numerator=Constant(0.5))
    a, b = 0.3, -0.2
    jac = jacobian(data, out, w, spec, [a], [b])
    expect = np.array([[-math.exp(a), -math.exp(-b)], [-0.5 * math.exp(a), -0.5 * math.exp(-b)]])
    assert np.allclose(jac, expect, rtol=1e-14)


def test_zero_outcomes_g_block_is_model_term():
    data = random_dataset(seed=4)
    data = data.__class__(**{**{f: getattr(data, f) for f in data.__dataclass_fields__},
                             "sub_outcome": np.zeros_like(data.sub_outcome)})
    spec = EstimatorSpec(control_cols=(0, 1))
    out = outcomes_for(data)
    w = compute_weights(data, out)
    alpha, beta = np.array([-1.0, 0.3]), np.array([0.4])
    u = estimating_function(data, out, w, spec, alpha, beta)
    g = data.controls[..., [0, 1]]
    row = data.availability * w.m * w.w_pd * -np.exp(g @ alpha)
    assert np.allclose(u[:2], np.einsum("nt,ntk->k", row, g) / data.n, rtol=1e-12)


def test_nonfinite_names_location(small_data):
    out = outcomes_for(small_data)
    w = compute_weights(small_data, out)
    with pytest.raises(NumericError, match="individual"):
        estimating_function(small_data, out, w, EstimatorSpec(), [np.nan], [0.0])


@pytest.mark.parametrize("seed", range(3))
def test_fd_jacobian_small(seed):
    data = random_dataset(n=5, T=4, delta=2, seed=seed)
    spec = EstimatorSpec(moderator_cols=(0, 1), control_cols=(0, 1))
    out = outcomes_for(data)
    w = compute_weights(data, out)
    a, b = np.array([-0.8, 0.1]), np.array([0.2, -0.3])
    an = jacobian(data, out, w, spec, a, b, mode="analytic")
    fd = jacobian(data, out, w, spec, a, b, mode="finite-difference", h=1e-6)
    assert np.allclose(an, fd, rtol=0, atol=1e-5)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), delta=st.integers(1, 4), n=st.integers(2, 8),
       T=st.integers(1, 6), alpha=st.lists(st.floats(-2, 0), min_size=2, max_size=2),
       beta=st.lists(st.floats(-1, 1), min_size=2, max_size=2))
def test_fd_jacobian_property(seed, delta, n, T, alpha, beta):
    data = random_dataset(n=n, T=T, delta=delta, seed=seed)
    spec = EstimatorSpec(moderator_cols=(0, 1), control_cols=(0, 1))
    out = outcomes_for(data)
    w = compute_weights(data, out, Constant(0.5))
    an = jacobian(data, out, w, spec, alpha, beta, mode="analytic")
    fd = jacobian(data, out, w, spec, alpha, beta, mode="finite-difference", h=1e-6)
    assert np.allclose(an, fd, rtol=0, atol=1e-5)


# solver

def test_root_satisfies_tolerance(small_data):
    spec = EstimatorSpec(moderator_cols=(0, 1), control_cols=(0, 1))
    res = fit(small_data, outcomes_for(small_data), spec)
    out = outcomes_for(small_data)
    w = compute_weights(small_data, out)
    u = estimating_function(small_data, out, w, spec, res.alpha_hat, res.beta_hat)
    assert np.max(np.abs(u)) <= spec.solver.tol
    assert res.diagnostics["converged"]


def test_fit_matches_brute_force_root():
    # n=3, T=2, delta=2 with rational probabilities
    A = np.array([[1, 0], [0, 1], [0, 0]], float)
    P = np.array([[0.5, 0.25], [0.5, 0.75], [0.25, 0.5]])
    sub = np.array([[0, 0, 1, 1], [0, 1, 0, 1], [0, 1, 1, 0]], float)
    data = MrtDataset(delta=2, availability=np.ones((3, 2)), treatment=A, rand_prob=P,
                      sub_outcome=sub, moderators=np.ones((3, 2, 1)), controls=np.ones((3, 2, 1)))
    rows = []
    for i in range(3):
        for t in range(2):
            y = max(sub[i, t + 1], sub[i, t + 2])
            w = 1.0
            # factor for decision t+1 while no event has been seen in the interval after t
            if t + 1 < 2 and sub[i, t + 1] == 0:
                w = (A[i, t + 1] == 0) / (1 - P[i, t + 1])
            rows.append((A[i, t], y, P[i, t], w))
    alpha, beta = intercept_only_root(rows, 0.5)
    res = fit(data, outcomes_for(data), EstimatorSpec(numerator=Constant(0.5)))
    assert res.beta_hat[0] == pytest.approx(beta, abs=1e-6)
    assert res.alpha_hat[0] == pytest.approx(alpha, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_delta_one_equivalence(seed):
    data = random_dataset(n=30, T=6, delta=1, seed=seed)
    out = outcomes_for(data)
    pd = fit(data, out, EstimatorSpec(Kind.PD_EMEE, moderator_cols=(0, 1), control_cols=(0, 1)))
    em = fit(data, out, EstimatorSpec(Kind.EMEE, moderator_cols=(0, 1), control_cols=(0, 1)))
    assert np.max(np.abs(pd.beta_hat - em.beta_hat)) <= 1e-10


def test_full_horizon_reference_regime_equals_pd(small_data):
    out = outcomes_for(small_data)
    pd = fit(small_data, out, EstimatorSpec(Kind.PD_EMEE))
    kk = fit(small_data, out, EstimatorSpec(Kind.REF_REGIME, k=small_data.delta - 1))
    assert np.array_equal(pd.beta_hat, kk.beta_hat)


def test_permutation_invariance():
    data = random_dataset(n=40, T=6, seed=9)
    out = outcomes_for(data)
    spec = EstimatorSpec(moderator_cols=(0, 1), control_cols=(0, 1))
    base = fit(data, out, spec)
    perm = np.random.default_rng(0).permutation(data.n)
    pdata = data.subset(perm)
    other = fit(pdata, outcomes_for(pdata), spec)
    assert np.allclose(base.theta, other.theta, rtol=0, atol=1e-12)
    assert np.allclose(base.vcov, other.vcov, rtol=1e-9, atol=1e-15)


def test_perturbed_starts_reach_same_root(small_data):
    spec = EstimatorSpec(moderator_cols=(0, 1), control_cols=(0, 1))
    out = outcomes_for(small_data)
    w = compute_weights(small_data, out)
    prob = _Problem(small_data, out, w, spec)
    base = fit(small_data, out, spec).theta

    def evaluate(theta):
        u, jac, _, c = prob.evaluate(theta)
        return u.sum(axis=0) / prob.n, jac / prob.n, c
    rng = np.random.default_rng(2)
    for _ in range(5):
        theta, *_ = newton_solve(evaluate, base + rng.normal(scale=0.2, size=base.size),
                                 spec.solver)
        assert np.allclose(theta, base, atol=1e-8)


def test_nonconvergence_carries_state(small_data):
    spec = EstimatorSpec(solver=SolverConfig(max_iter=1, tol=1e-14))
    with pytest.raises(NonConvergenceError) as info:
        fit(small_data, outcomes_for(small_data), spec)
    assert info.value.theta is not None and info.value.residual_norm > 0


def test_singular_jacobian(small_data):
    with pytest.raises(SingularJacobianError):
        fit(small_data, outcomes_for(small_data), EstimatorSpec(control_cols=(0, 0)))


def test_spec_validation(small_data):
    with pytest.raises(ConfigError):
        EstimatorSpec(moderator_cols=(1,))
    with pytest.raises(ConfigError):
        EstimatorSpec(Kind.REF_REGIME)
    with pytest.raises(ConfigError):
        EstimatorSpec(Kind.REF_REGIME, k=small_data.delta).check(small_data)
    with pytest.raises(ConfigError):
        SolverConfig(tol=0)


def test_fit_result_invariants(small_data):
    res = fit(small_data, outcomes_for(small_data),
              EstimatorSpec(moderator_cols=(0, 1), control_cols=(0, 1)))
    assert np.allclose(res.vcov, res.vcov.T, atol=1e-12)
    assert np.linalg.eigvalsh(res.vcov).min() >= -1e-8
    assert np.allclose(res.se_beta, np.sqrt(np.diag(res.vcov)[res.q:]))
    assert np.all((res.ci_beta[:, 0] <= res.beta_hat) & (res.beta_hat <= res.ci_beta[:, 1]))
    assert res.beta_names == ("intercept", "z1")
