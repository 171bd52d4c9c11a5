"""Simulation generative model and its closed-form oracles.

Z_t in {0, 1, 2} is drawn i.i.d. with probabilities proportional to
``(gamma^{-1/(2 delta)}, 1, gamma^{1/(2 delta)})``; treatment is
Bernoulli(p_a); the sub-outcome after decision ``t`` depends only on
``(Z_t, A_t)``.  The model is built so that the log relative risk of the
proximal outcome under "treat at t, then no treatment" is ``0.1 + 0.2 Z_t``
for every delta and p_a.
"""
from dataclasses import dataclass

import numpy as np

from .core import MrtDataset
from .errors import ConfigError

Z_VALUES = np.array([0.0, 1.0, 2.0])
EFFECT_INTERCEPT = 0.1
EFFECT_SLOPE = 0.2


def replication_rng(seed, replication):
    """Independent generator for one replication (same stream for any worker count)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(replication),)))


@dataclass(frozen=True)
class GenerativeConfig:
    n: int = 100
    T: int = 100
    delta: int = 3
    p_a: float = 0.2
    seed: int = 0
    gamma: float = 0.5

    def __post_init__(self):
        if self.n < 1 or self.T < 1 or self.delta < 1:
            raise ConfigError("n, T and delta must be positive integers")
        if not 0 < self.p_a < 1:
            raise ConfigError(f"p_a must lie in (0, 1), got {self.p_a}")
        if not 0 < self.gamma < 1:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        for name, probs in (("P(R=0 | A=0)", self.prob_no_event(0)),
                            ("P(R=0 | A=1)", self.prob_no_event(1))):
            if not np.all((probs > 0) & (probs < 1)):
                raise ConfigError(f"{name} = {probs} leaves (0, 1) for delta={self.delta}, "
                                  f"gamma={self.gamma}")

    @property
    def C(self):
        g, d = self.gamma, self.delta
        return g ** (-1 / (2 * d)) + g ** (1 / (2 * d)) + 1

    def z_probs(self):
        g, d = self.gamma, self.delta
        return np.array([g ** (-1 / (2 * d)), 1.0, g ** (1 / (2 * d))]) / self.C

    def prob_no_event(self, a, z=Z_VALUES):
        """P(sub-outcome = 0 | A_t = a, Z_t = z)."""
        g, d = self.gamma, self.delta
        z = np.asarray(z, dtype=np.float64)
        phi0 = g ** ((1.5 - 0.5 * z) / d)
        if a == 0:
            return phi0
        carry = (3 / self.C * g ** (1 / d)) ** (d - 1)
        return (1 - (1 - phi0 * carry) * np.exp(EFFECT_INTERCEPT + EFFECT_SLOPE * z)) / carry

    def with_(self, **changes):
        values = {f: getattr(self, f) for f in ("n", "T", "delta", "p_a", "seed", "gamma")}
        values.update(changes)
        return GenerativeConfig(**values)


def generate_trial(config, replication=0, rng=None):
    """Simulate one trial.

    Moderators and controls both carry the columns ``(1, Z_t)``.
    """
    rng = replication_rng(config.seed, replication) if rng is None else rng
    n, T, d = config.n, config.T, config.delta
    z = rng.choice(3, size=(n, T), p=config.z_probs()).astype(np.float64)
    a = (rng.random((n, T)) < config.p_a).astype(np.float64)
    p0 = config.prob_no_event(0)
    p1 = config.prob_no_event(1)
    zi = z.astype(np.int64)
    no_event = np.where(a == 1, p1[zi], p0[zi])
    r_after = (rng.random((n, T)) >= no_event).astype(np.float64)
    sub = np.zeros((n, T + d))
    sub[:, 1: T + 1] = r_after   # later follow-up slots stay 0
    feats = np.stack([np.ones((n, T)), z], axis=2)
    return MrtDataset(
        delta=d, availability=np.ones((n, T)), treatment=a, rand_prob=np.full((n, T), config.p_a),
        sub_outcome=sub, moderators=feats, controls=feats,
        moderator_names=("intercept", "Z"), control_names=("intercept", "Z"))


def true_conditional_mean(z, a, config):
    """E[Y_t(treat a at t, then none) | Z_t = z] for decisions away from the horizon."""
    g, d, C = config.gamma, config.delta, config.C
    z = np.asarray(z, dtype=np.float64)
    base = 1 - g ** ((d + 0.5 - 0.5 * z) / d) * (3 / C) ** (d - 1)
    return base * np.exp(a * (EFFECT_INTERCEPT + EFFECT_SLOPE * z))


def true_marginal_beta0(config):
    """Marginal log relative risk (moderator S = 1) implied by the model."""
    pz = config.z_probs()
    m1 = pz @ true_conditional_mean(Z_VALUES, 1, config)
    m0 = pz @ true_conditional_mean(Z_VALUES, 0, config)
    return float(np.log(m1 / m0))


def true_parameters(config, moderated=False):
    if moderated:
        return np.array([EFFECT_INTERCEPT, EFFECT_SLOPE])
    return np.array([true_marginal_beta0(config)])


def generate_simplified_trial(p, q, delta, n, seed=0, replication=0, rng=None):
    """Stripped-down setting with one focal decision point.

    The focal decision is ``t = 0``; ``delta - 1`` further decisions are
    randomized with probability ``p`` so the window weights exist, and every
    sub-outcome is an independent Bernoulli(q) draw.  The dataset therefore
    has ``T = delta`` decision points; only ``t = 0`` is meant to be analysed.
    """
    if not (0 <= p <= 1 and 0 <= q <= 1) or delta < 1 or n < 1:
        raise ConfigError("need p, q in [0, 1], delta >= 1, n >= 1")
    if not 0 < p < 1:
        raise ConfigError("p must lie in (0, 1)")
    rng = replication_rng(seed, replication) if rng is None else rng
    T = delta
    a = (rng.random((n, T)) < p).astype(np.float64)
    sub = np.zeros((n, T + delta))
    sub[:, 1:] = (rng.random((n, T + delta - 1)) < q).astype(np.float64)
    ones = np.ones((n, T, 1))
    return MrtDataset(
        delta=delta, availability=np.ones((n, T)), treatment=a, rand_prob=np.full((n, T), p),
        sub_outcome=sub, moderators=ones, controls=ones,
        moderator_names=("intercept",), control_names=("intercept",))
