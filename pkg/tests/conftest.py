import math

import numpy as np
import pytest

from pdemee.core import MrtDataset, build_proximal_outcomes


def random_dataset(n=20, T=8, delta=3, seed=0, p_avail=0.8, n_features=2, ragged=False,
                   constant_p=None):
    """Small random dataset with unavailable points, varying probabilities and Z features."""
    rng = np.random.default_rng(seed)
    lengths = rng.integers(max(1, T // 2), T + 1, size=n) if ragged else np.full(n, T)
    inside = np.arange(T)[None, :] < lengths[:, None]
    avail = ((rng.random((n, T)) < p_avail) & inside).astype(float)
    prob = rng.uniform(0.2, 0.8, size=(n, T)) if constant_p is None else np.full((n, T), constant_p)
    prob = np.where(avail == 1, prob, 0.0)
    a = ((rng.random((n, T)) < prob) & (avail == 1)).astype(float)
    sub = (rng.random((n, T + delta)) < 0.3).astype(float)
    tail = np.arange(T + delta)[None, :] >= (lengths + delta)[:, None]
    sub[tail] = 0
    z = rng.normal(size=(n, T, n_features - 1))
    feats = np.concatenate([np.ones((n, T, 1)), z], axis=2)
    names = ("intercept",) + tuple(f"z{j}" for j in range(1, n_features))
    return MrtDataset(delta=delta, availability=avail, treatment=a, rand_prob=prob,
                      sub_outcome=sub, moderators=feats, controls=feats, lengths=lengths,
                      moderator_names=names, control_names=names)


def outcomes_for(data):
    return build_proximal_outcomes(data.sub_outcome, data.delta, lengths=data.lengths)


@pytest.fixture
def small_data():
    return random_dataset()


def intercept_only_root(rows, p_tilde):
    """Grid scan plus bisection on beta with alpha profiled out in closed form.

    ``rows`` holds (A, Y, p, weight W) with intercept-only g and S.  The
    alpha equation gives exp(alpha) = sum(w e^{-A b} Y) / sum(w).
    """
    def weights_(r, b):
        return r[3] * ((p_tilde / r[2]) if r[0] else ((1 - p_tilde) / (1 - r[2])))

    def u_beta(b):
        den = sum(weights_(r, b) for r in rows)
        ea = sum(weights_(r, b) * math.exp(-r[0] * b) * r[1] for r in rows) / den
        return sum(weights_(r, b) * math.exp(-r[0] * b) * (r[1] - ea * math.exp(r[0] * b))
                   * (r[0] - p_tilde) for r in rows), ea

    grid = np.linspace(-5, 5, 2001)
    vals = [u_beta(b)[0] for b in grid]
    j = next(k for k in range(len(grid) - 1) if vals[k] * vals[k + 1] <= 0)
    lo, hi = grid[j], grid[j + 1]
    for _ in range(200):
        mid = (lo + hi) / 2
        if u_beta(lo)[0] * u_beta(mid)[0] <= 0:
            hi = mid
        else:
            lo = mid
    b = (lo + hi) / 2
    return math.log(u_beta(b)[1]), b


ACCEPTANCE_LOG = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LOG:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LOG:
            terminalreporter.write_line(line)
