import itertools

import numpy as np
import pytest

from conftest import outcomes_for, random_dataset
from pdemee.core import (NO_HIT, Constant, EmpiricalMean, LogisticOnS, MrtDataset, RandProb,
                         build_proximal_outcomes, build_proximal_outcomes_generalized,
                         compute_weights, cumulative_window_outcome, default_numerator)
from pdemee.errors import DataError, PositivityError, StructuralError


def single_row(a, sub, p=0.6, delta=3, avail=None):
    """One individual; ``sub`` lists sub-outcome columns 0..T+delta-1."""
    T = len(a)
    avail = np.ones(T) if avail is None else np.asarray(avail, float)
    prob = np.where(avail == 1, p, 0.0)
    return MrtDataset(delta=delta, availability=avail[None], treatment=np.asarray(a, float)[None],
                      rand_prob=prob[None], sub_outcome=np.asarray(sub, float)[None],
                      moderators=np.ones((1, T, 1)), controls=np.ones((1, T, 1)))


# proximal outcomes

def test_maximum_property_example():
    # decision 0 window = columns 1..3 = (0, 1, 0)
    out = build_proximal_outcomes(np.array([[0, 0, 1, 0]]), 3)
    assert out.y[0, 0] == 1 and out.first_hit[0, 0] == 2


def test_all_zero_window_has_no_hit():
    for delta in (1, 2, 5):
        out = build_proximal_outcomes(np.zeros((2, 3 + delta)), delta)
        assert np.all(out.y == 0) and np.all(out.first_hit == NO_HIT)


def test_delta_one_single_term():
    out = build_proximal_outcomes(np.array([[0, 1]]), 1)
    assert out.y[0, 0] == 1 and out.first_hit[0, 0] == 1


def test_too_few_columns_is_structural():
    with pytest.raises(StructuralError):
        build_proximal_outcomes(np.zeros((1, 4)), 3, T=2)


def test_y_matches_window_max_randomly():
    rng = np.random.default_rng(1)
    sub = (rng.random((30, 14)) < 0.3).astype(float)
    out = build_proximal_outcomes(sub, 4)
    for i, t in itertools.product(range(30), range(10)):
        window = sub[i, t + 1: t + 5]
        assert out.y[i, t] == window.max()
        if window.max():
            assert out.first_hit[i, t] == 1 + int(np.argmax(window))
        else:
            assert out.first_hit[i, t] == NO_HIT


def test_generalized_examples():
    out = build_proximal_outcomes_generalized(np.array([[[0, 1, 1]], [[0, 0, 0]]]))
    assert out.y[0, 0] == 1 and out.first_hit[0, 0] == 2
    assert out.y[1, 0] == 0 and out.first_hit[1, 0] == NO_HIT


def test_generalized_rejects_non_monotone():
    with pytest.raises(DataError):
        build_proximal_outcomes_generalized(np.array([[[1, 0, 1]]]))


@pytest.mark.parametrize("delta", [1, 2, 3, 4])
def test_generalized_equals_instantaneous_exhaustively(delta):
    # every binary sequence of sub-outcomes over a T=2 horizon
    T = 2
    seqs = np.array(list(itertools.product((0.0, 1.0), repeat=T + delta)))
    direct = build_proximal_outcomes(seqs, delta)
    general = build_proximal_outcomes_generalized(cumulative_window_outcome(seqs, delta))
    assert np.array_equal(direct.y, general.y)
    assert np.array_equal(direct.first_hit, general.first_hit)


# dataset validation

def test_treated_while_unavailable_rejected():
    with pytest.raises(DataError):
        single_row([1, 0, 0], [0] * 6, avail=[0, 1, 1])


def test_positivity_violation_rejected():
    with pytest.raises(PositivityError):
        single_row([0, 0, 0], [0] * 6, p=1.0)


def test_missing_follow_up_columns_rejected():
    with pytest.raises(StructuralError):
        single_row([0, 0, 0], [0] * 5)


def test_intercept_column_required():
    with pytest.raises(DataError):
        MrtDataset(delta=1, availability=np.ones((1, 2)), treatment=np.zeros((1, 2)),
                   rand_prob=np.full((1, 2), 0.5), sub_outcome=np.zeros((1, 3)),
                   moderators=np.full((1, 2, 1), 2.0), controls=np.ones((1, 2, 1)))


def test_dataset_is_immutable(small_data):
    with pytest.raises(ValueError):
        small_data.treatment[0, 0] = 1


# weights: worked examples at p = 0.6

def test_example_event_then_treatment():
    # A_t=1, no treatment at t+1, event in the interval after t+1, treated at t+2
    data = single_row([1, 0, 1], [0, 0, 1, 0, 0, 0])
    w = compute_weights(data, outcomes_for(data), Constant(0.6))
    assert w.w_pd[0, 0] == pytest.approx(2.5, abs=1e-12)
    assert w.w_full[0, 0] == 0.0


def test_example_no_treatment_no_event():
    data = single_row([0, 0, 0], [0] * 6)
    w = compute_weights(data, outcomes_for(data), Constant(0.6))
    assert w.w_pd[0, 0] == pytest.approx(6.25, abs=1e-12)
    assert w.w_full[0, 0] == pytest.approx(6.25, abs=1e-12)


def test_treatment_before_event_zeroes_both():
    data = single_row([0, 1, 0], [0, 0, 1, 0, 0, 0])
    w = compute_weights(data, outcomes_for(data), Constant(0.6))
    assert w.w_pd[0, 0] == 0.0 and w.w_full[0, 0] == 0.0


def test_delta_one_weights_are_one(small_data):
    data = random_dataset(delta=1, seed=3)
    w = compute_weights(data, outcomes_for(data))
    assert np.all(w.w_pd == 1) and np.all(w.w_full == 1)


def test_reference_regime_limits(small_data):
    out = outcomes_for(small_data)
    w0 = compute_weights(small_data, out, k=0)
    assert np.all(w0.w_k == 1) and np.all(w0.w_full_k == 1)
    wd = compute_weights(small_data, out, k=small_data.delta - 1)
    assert np.array_equal(wd.w_k, wd.w_pd)


def test_unavailable_factor_is_one():
    data = single_row([0, 0, 0], [0] * 6, avail=[1, 0, 1])
    w = compute_weights(data, outcomes_for(data), Constant(0.6))
    assert w.w_pd[0, 0] == pytest.approx(2.5)


def test_factors_past_horizon_are_one():
    data = single_row([0, 0, 0], [0] * 6)
    w = compute_weights(data, outcomes_for(data), Constant(0.6))
    # decision 2 has no later decisions within the trial
    assert w.w_pd[0, 2] == 1.0 and w.w_pd[0, 1] == pytest.approx(2.5)


def test_rand_prob_numerator_gives_unit_m(small_data):
    w = compute_weights(small_data, outcomes_for(small_data), RandProb())
    on = small_data.availability == 1
    assert np.allclose(w.m[on], 1.0, rtol=0, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_weight_invariants(seed):
    data = random_dataset(n=40, T=10, delta=4, seed=seed, ragged=True)
    out = outcomes_for(data)
    w = compute_weights(data, out)
    assert np.all(w.w_pd >= 0) and np.all(w.w_full >= 0) and np.all(w.m > 0)
    fh = out.first_hit
    same = (fh == NO_HIT) | (fh >= data.delta)
    assert np.allclose(w.w_pd[same], w.w_full[same])
    pos = w.w_full > 0
    assert np.all(w.w_pd[pos] <= w.w_full[pos] + 1e-12)
    # W' = 0 but W > 0 exactly when the first treatment in the window follows the event
    for i, t in zip(*np.nonzero((w.w_full == 0) & (w.w_pd > 0))):
        treated = [s for s in range(1, data.delta)
                   if t + s < data.lengths[i] and data.treatment[i, t + s] == 1]
        assert fh[i, t] != NO_HIT and treated[0] >= fh[i, t]


def test_numerator_policies(small_data):
    const = compute_weights(random_dataset(constant_p=0.3), outcomes_for(random_dataset(constant_p=0.3)))
    assert isinstance(const.numerator, Constant) and const.numerator.value == pytest.approx(0.3)
    assert isinstance(default_numerator(small_data), LogisticOnS)
    on = small_data.availability == 1
    em = EmpiricalMean().predict(small_data)
    assert np.allclose(em, small_data.treatment[on].mean())
    # an intercept-only logistic fit reproduces the pooled mean
    lo = LogisticOnS().predict(small_data, moderator_cols=[0])
    assert np.allclose(lo, small_data.treatment[on].mean(), atol=1e-10)
