"""MRT trajectories, proximal outcomes and inverse probability weights.

Layout conventions (all indices 0-based):

* decision points ``t = 0 .. T-1``; individual ``i`` has ``lengths[i] <= T``
  real decision points, the rest is padding with ``availability == 0``.
* ``sub_outcome[i, c]`` is the sub-outcome recorded at decision point ``c``,
  i.e. the event indicator for the interval *preceding* ``c``.  Column 0 is
  therefore never used, and the proximal outcome of decision ``t`` is
  ``max(sub_outcome[i, t+1 : t+delta+1])``.  ``delta`` follow-up columns past
  the last decision point are required, giving ``T + delta`` columns.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DataError, PositivityError, StructuralError

NO_HIT = kernels.NO_HIT


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True, order="C")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MrtDataset:
    """Long panel of individuals by decision points.

    Arrays are copied and made read-only on construction.  ``moderators`` and
    ``controls`` hold candidate feature columns; an estimator selects subsets
    of them by index.  Column 0 of ``moderators`` must be the intercept.
    Feature cells at padded decision points are stored as 0.
    """

    delta: int
    availability: np.ndarray
    treatment: np.ndarray
    rand_prob: np.ndarray
    sub_outcome: np.ndarray
    moderators: np.ndarray
    controls: np.ndarray
    lengths: np.ndarray = None
    moderator_names: tuple = None
    control_names: tuple = None
    ids: tuple = None

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        avail = _frozen(self.availability, np.float64)
        if avail.ndim != 2:
            raise StructuralError("availability must be an [n, T] matrix")
        n, T = avail.shape
        if n < 1 or T < 1:
            raise StructuralError("dataset needs at least one individual and one decision point")
        delta = int(self.delta)
        if delta < 1:
            raise StructuralError(f"delta must be a positive integer, got {self.delta}")
        set_("delta", delta)
        lengths = np.full(n, T, dtype=np.int64) if self.lengths is None else self.lengths
        lengths = _frozen(lengths, np.int64)
        if lengths.shape != (n,) or lengths.min() < 1 or lengths.max() > T:
            raise StructuralError("lengths must be n integers in [1, T]")
        set_("lengths", lengths)
        set_("availability", avail)
        for name in ("treatment", "rand_prob"):
            arr = _frozen(getattr(self, name), np.float64)
            if arr.shape != (n, T):
                raise StructuralError(f"{name} has shape {arr.shape}, expected {(n, T)}")
            set_(name, arr)
        sub = _frozen(self.sub_outcome, np.float64)
        if sub.ndim != 2 or sub.shape[0] != n or sub.shape[1] < T + delta:
            raise StructuralError(
                f"sub_outcome has shape {sub.shape}; need {n} rows and T + delta = {T + delta} "
                "columns (delta follow-up slots after the last decision point)")
        set_("sub_outcome", sub[:, : T + delta].copy())
        self.sub_outcome.setflags(write=False)
        padding = np.arange(T)[None, :] >= lengths[:, None]
        for name in ("moderators", "controls"):
            arr = np.array(getattr(self, name), dtype=np.float64, order="C")
            if arr.ndim == 2:
                arr = arr[..., None]
            if arr.ndim != 3 or arr.shape[:2] != (n, T) or arr.shape[2] < 1:
                raise StructuralError(f"{name} must be an [n, T, d] tensor with d >= 1")
            arr[padding] = 0.0      # canonical padding; never read by estimators
            set_(name, _frozen(arr, np.float64))
        p, q = self.moderators.shape[2], self.controls.shape[2]
        set_("moderator_names", tuple(self.moderator_names or
                                      ["intercept"] + [f"s{j}" for j in range(1, p)]))
        set_("control_names", tuple(self.control_names or [f"g{j}" for j in range(q)]))
        if len(self.moderator_names) != p or len(self.control_names) != q:
            raise StructuralError("feature name lists do not match tensor widths")
        set_("ids", tuple(self.ids) if self.ids is not None else tuple(range(1, n + 1)))
        if len(self.ids) != n:
            raise StructuralError("ids must have one entry per individual")
        self._validate()

    def _validate(self):
        inside = np.arange(self.T)[None, :] < self.lengths[:, None]
        avail, a, prob = self.availability, self.treatment, self.rand_prob
        for name, arr in (("availability", avail), ("treatment", a)):
            if not np.isin(arr, (0.0, 1.0)).all():
                raise DataError(f"{name} must be binary")
        if not np.isin(self.sub_outcome, (0.0, 1.0)).all():
            raise DataError("sub_outcome must be binary")
        if np.any(avail[~inside] != 0) or np.any(a[~inside] != 0):
            raise DataError("padding beyond an individual's horizon must be unavailable and untreated")
        bad = np.argwhere((avail == 0) & (a != 0))
        if bad.size:
            i, t = bad[0]
            raise DataError(f"individual {self.ids[i]} treated while unavailable at decision {t}")
        on = avail == 1
        bad = np.argwhere(on & ~((prob > 0) & (prob < 1)))
        if bad.size:
            i, t = bad[0]
            raise PositivityError(
                f"rand_prob={prob[i, t]} outside (0, 1) for individual {self.ids[i]} at decision {t}")
        if np.any(prob[~on] != 0):
            raise DataError("rand_prob must be 0 at unavailable decision points")
        if not np.all(np.isfinite(self.moderators)) or not np.all(np.isfinite(self.controls)):
            raise DataError("moderators/controls contain non-finite values")
        if not np.all(self.moderators[..., 0][inside] == 1.0):
            raise DataError("first moderator column must be identically 1")
        tail = np.arange(self.T + self.delta)[None, :] >= (self.lengths + self.delta)[:, None]
        if np.any(self.sub_outcome[tail] != 0):
            raise DataError("sub_outcome must be 0 beyond each individual's follow-up window")

    @property
    def n(self):
        return self.availability.shape[0]

    @property
    def T(self):
        return self.availability.shape[1]

    @property
    def p(self):
        return self.moderators.shape[2]

    @property
    def q(self):
        return self.controls.shape[2]

    def inside(self):
        """Boolean [n, T] mask of real (non-padding) decision points."""
        return np.arange(self.T)[None, :] < self.lengths[:, None]

    def subset(self, rows):
        rows = np.asarray(rows)
        return MrtDataset(
            delta=self.delta, availability=self.availability[rows], treatment=self.treatment[rows],
            rand_prob=self.rand_prob[rows], sub_outcome=self.sub_outcome[rows],
            moderators=self.moderators[rows], controls=self.controls[rows],
            lengths=self.lengths[rows], moderator_names=self.moderator_names,
            control_names=self.control_names, ids=[self.ids[r] for r in rows])

    def with_features(self, moderators=None, controls=None, moderator_names=None,
                      control_names=None):
        return MrtDataset(
            delta=self.delta, availability=self.availability, treatment=self.treatment,
            rand_prob=self.rand_prob, sub_outcome=self.sub_outcome,
            moderators=self.moderators if moderators is None else moderators,
            controls=self.controls if controls is None else controls,
            lengths=self.lengths,
            moderator_names=self.moderator_names if moderators is None else moderator_names,
            control_names=self.control_names if controls is None else control_names,
            ids=self.ids)

    def equals(self, other):
        same = (self.delta == other.delta and self.moderator_names == other.moderator_names
                and self.control_names == other.control_names and self.ids == other.ids)
        arrays = ("availability", "treatment", "rand_prob", "sub_outcome", "moderators",
                  "controls", "lengths")
        return same and all(
            getattr(self, a).shape == getattr(other, a).shape
            and np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)


@dataclass(frozen=True, eq=False)
class ProximalOutcomes:
    """``y[i, t]`` is the proximal outcome and ``first_hit[i, t]`` the first
    window offset ``u`` in ``1..delta`` at which the event is seen (``NO_HIT``
    when it never is)."""

    y: np.ndarray
    first_hit: np.ndarray
    delta: int


def build_proximal_outcomes(sub_outcome, delta, T=None, lengths=None):
    """Apply the maximum property to a sub-outcome matrix.

    Parameters
    ----------
    sub_outcome : array [n, T + delta]
        ``sub_outcome[:, c]`` is the event indicator recorded at decision ``c``.
    delta : int
        Window length in decision points.
    T : int, optional
        Number of decision points; inferred from the column count if omitted.
    lengths : array [n], optional
        Per-individual horizons; outcomes past a horizon are zeroed.
    """
    sub = np.asarray(sub_outcome, dtype=np.float64)
    delta = int(delta)
    if sub.ndim != 2 or delta < 1:
        raise StructuralError("sub_outcome must be a matrix and delta >= 1")
    if T is None:
        T = sub.shape[1] - delta
    if T < 1 or sub.shape[1] < T + delta:
        raise StructuralError(
            f"sub_outcome has {sub.shape[1]} columns; need T + delta = {T + delta}")
    if not np.isin(sub, (0.0, 1.0)).all():
        raise DataError("sub_outcome must be binary")
    n = sub.shape[0]
    first_hit = np.zeros((n, T), dtype=np.int64)
    for s in range(delta, 0, -1):
        hit = sub[:, s: s + T] == 1
        first_hit[hit] = s
    if lengths is not None:
        first_hit[np.arange(T)[None, :] >= np.asarray(lengths)[:, None]] = NO_HIT
    y = (first_hit != NO_HIT).astype(np.float64)
    first_hit.setflags(write=False)
    y.setflags(write=False)
    return ProximalOutcomes(y=y, first_hit=first_hit, delta=delta)


def build_proximal_outcomes_generalized(window_outcome):
    """Proximal outcomes from cumulative window indicators.

    ``window_outcome[i, t, s-1]`` indicates whether the event occurred between
    decision ``t`` and ``t + s``; it must be nondecreasing in ``s``.
    """
    w = np.asarray(window_outcome, dtype=np.float64)
    if w.ndim != 3 or w.shape[2] < 1:
        raise StructuralError("window_outcome must be an [n, T, delta] tensor")
    if not np.isin(w, (0.0, 1.0)).all():
        raise DataError("window_outcome must be binary")
    drops = np.argwhere(np.diff(w, axis=2) < 0)
    if drops.size:
        i, t, s = drops[0]
        raise DataError(
            f"cumulative event indicator decreases at individual {i}, decision {t}, offset {s + 2}")
    delta = w.shape[2]
    hit_any = w[..., -1] == 1
    first_hit = np.where(hit_any, np.argmax(w == 1, axis=2) + 1, NO_HIT).astype(np.int64)
    y = w[..., -1].copy()
    first_hit.setflags(write=False)
    y.setflags(write=False)
    return ProximalOutcomes(y=y, first_hit=first_hit, delta=delta)


def cumulative_window_outcome(sub_outcome, delta, T=None):
    """Convert instantaneous sub-outcomes to ``R_{t,t+s}`` indicators."""
    sub = np.asarray(sub_outcome, dtype=np.float64)
    T = sub.shape[1] - delta if T is None else T
    cols = [sub[:, s: s + T] for s in range(1, delta + 1)]
    return np.maximum.accumulate(np.stack(cols, axis=2), axis=2)


# numerator probabilities for the stabilized weight

@dataclass(frozen=True)
class Constant:
    value: float

    def predict(self, data, moderator_cols=None):
        if not 0 < self.value < 1:
            raise PositivityError(f"numerator probability {self.value} outside (0, 1)")
        return np.full((data.n, data.T), float(self.value))


@dataclass(frozen=True)
class EmpiricalMean:
    def predict(self, data, moderator_cols=None):
        on = data.availability == 1
        value = data.treatment[on].mean()
        return Constant(float(value)).predict(data)


@dataclass(frozen=True)
class LogisticOnS:
    """Pooled logistic regression of treatment on the moderators."""

    max_iter: int = 50
    tol: float = 1e-10

    def predict(self, data, moderator_cols=None):
        cols = list(range(data.p)) if moderator_cols is None else list(moderator_cols)
        S = data.moderators[..., cols]
        on = data.availability == 1
        X, a = S[on], data.treatment[on]
        coef = fit_logistic(X, a, max_iter=self.max_iter, tol=self.tol)
        return 1.0 / (1.0 + np.exp(-(S @ coef)))


@dataclass(frozen=True)
class RandProb:
    """Use the actual randomization probability (valid when it depends on S only)."""

    def predict(self, data, moderator_cols=None):
        return np.where(data.availability == 1, data.rand_prob, 0.5)


def fit_logistic(X, a, max_iter=50, tol=1e-10):
    """Newton-Raphson logistic regression; returns coefficients."""
    coef = np.zeros(X.shape[1])
    for _ in range(max_iter):
        prob = 1.0 / (1.0 + np.exp(-(X @ coef)))
        grad = X.T @ (a - prob)
        hess = (X * (prob * (1 - prob))[:, None]).T @ X
        step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        coef = coef + step
        if np.max(np.abs(step)) < tol:
            break
    return coef


def default_numerator(data):
    """Constant when the randomization probability is constant, else logistic on S."""
    vals = np.unique(data.rand_prob[data.availability == 1])
    if vals.size == 1:
        return Constant(float(vals[0]))
    return LogisticOnS()


@dataclass(frozen=True, eq=False)
class WeightSet:
    """All weight matrices for one dataset.

    ``w_k`` / ``w_full_k`` are the per-decision and full products truncated
    at window offset ``k``; with ``k = delta - 1`` they equal ``w_pd`` /
    ``w_full``.
    """

    m: np.ndarray
    w_pd: np.ndarray
    w_full: np.ndarray
    w_k: np.ndarray
    w_full_k: np.ndarray
    ptilde: np.ndarray
    k: int
    numerator: object = field(default=None)


def stabilized_weight(treatment, rand_prob, ptilde, availability):
    on = availability == 1
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(treatment == 1, ptilde / rand_prob, (1 - ptilde) / (1 - rand_prob))
    return np.where(on, m, 1.0)


def compute_weights(data, outcomes, numerator=None, k=None, moderator_cols=None):
    """Stabilized, per-decision, full and reference-regime weights.

    Parameters
    ----------
    data : MrtDataset
    outcomes : ProximalOutcomes
        Built from ``data``.
    numerator : policy or None
        ``Constant``, ``EmpiricalMean``, ``LogisticOnS`` or ``RandProb``;
        ``default_numerator(data)`` when None.
    k : int, optional
        Reference-regime horizon in ``[0, delta - 1]``; defaults to ``delta - 1``.
    moderator_cols : sequence of int, optional
        Columns of S used by ``LogisticOnS``.
    """
    delta = data.delta
    if outcomes.first_hit.shape != (data.n, data.T) or outcomes.delta != delta:
        raise StructuralError("outcomes were not built from this dataset")
    k = delta - 1 if k is None else int(k)
    if not 0 <= k <= delta - 1:
        raise StructuralError(f"k must lie in [0, {delta - 1}], got {k}")
    numerator = default_numerator(data) if numerator is None else numerator
    ptilde = np.asarray(numerator.predict(data, moderator_cols), dtype=np.float64)
    m = stabilized_weight(data.treatment, data.rand_prob, ptilde, data.availability)

    args = (data.treatment, data.rand_prob, data.availability, outcomes.first_hit, data.lengths)
    w_pd = kernels.window_weights(*args, delta - 1, True)
    w_full = kernels.window_weights(*args, delta - 1, False)
    if k == delta - 1:
        w_k, w_full_k = w_pd, w_full
    else:
        w_k = kernels.window_weights(*args, k, True)
        w_full_k = kernels.window_weights(*args, k, False)
    for name, w in (("per-decision", w_pd), ("full", w_full)):
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            i, t = np.argwhere(~np.isfinite(w) | (w < 0))[0]
            raise PositivityError(f"{name} weight non-finite at individual {data.ids[i]}, decision {t}")
    for arr in (m, w_pd, w_full, w_k, w_full_k, ptilde):
        arr.setflags(write=False)
    return WeightSet(m=m, w_pd=w_pd, w_full=w_full, w_k=w_k, w_full_k=w_full_k,
                     ptilde=ptilde, k=k, numerator=numerator)
