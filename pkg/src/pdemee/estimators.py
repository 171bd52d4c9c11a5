"""pd-EMEE, EMEE and reference-regime estimators.

The estimating function for individual ``i`` is

    U_i = sum_t I_it exp(-A_it S_it'b) (Y_it - exp(g_it'a + A_it S_it'b)) M_it W_it
          [g_it ; (A_it - pt_it) S_it]

and the estimate solves ``mean_i U_i = 0`` by damped Newton iteration on the
stacked ``(alpha, beta)`` system.  The estimators differ only in ``W_it``.
"""
from dataclasses import dataclass, field
from enum import Enum
import warnings

import numpy as np

from . import kernels
from .core import compute_weights
from .errors import (ConfigError, DataError, NonConvergenceError, NumericError,
                     SingularJacobianError)
from .inference import InferenceConfig, degrees_of_freedom, infer, intervals, two_sided_p


class NumericWarning(UserWarning):
    pass


class Kind(str, Enum):
    PD_EMEE = "pd-emee"
    EMEE = "emee"
    REF_REGIME = "ref-regime"            # per-decision product truncated at k
    REF_REGIME_EMEE = "ref-regime-emee"  # full product truncated at k


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 100
    step_damping: float = 1.0
    max_halvings: int = 30
    jacobian: str = "analytic"
    fd_step: float = 1e-6

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError("solver tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("solver max_iter must be >= 1")
        if not 0 < self.step_damping <= 1:
            raise ConfigError("step_damping must lie in (0, 1]")
        if self.jacobian not in ("analytic", "finite-difference"):
            raise ConfigError(f"unknown jacobian mode {self.jacobian!r}")


@dataclass(frozen=True)
class EstimatorSpec:
    """Which estimator to fit and on which features.

    ``moderator_cols`` / ``control_cols`` index the dataset's moderator and
    control tensors; moderator column 0 (the intercept) must be included.
    """

    kind: Kind = Kind.PD_EMEE
    moderator_cols: tuple = (0,)
    control_cols: tuple = (0,)
    numerator: object = None
    k: int = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    label: str = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "moderator_cols", tuple(int(c) for c in self.moderator_cols))
        object.__setattr__(self, "control_cols", tuple(int(c) for c in self.control_cols))
        if not self.moderator_cols or 0 not in self.moderator_cols:
            raise ConfigError("moderator set must be nonempty and include the intercept column 0")
        if not self.control_cols:
            raise ConfigError("control set must be nonempty")
        if self.kind in (Kind.REF_REGIME, Kind.REF_REGIME_EMEE) and self.k is None:
            raise ConfigError("reference-regime estimators need k")

    @property
    def name(self):
        if self.label:
            return self.label
        if self.kind in (Kind.REF_REGIME, Kind.REF_REGIME_EMEE):
            return f"{self.kind.value}(k={self.k})"
        return self.kind.value

    def check(self, data):
        if max(self.moderator_cols) >= data.p or min(self.moderator_cols) < 0:
            raise ConfigError("moderator column index out of range")
        if max(self.control_cols) >= data.q or min(self.control_cols) < 0:
            raise ConfigError("control column index out of range")
        if self.k is not None and not 0 <= self.k <= data.delta - 1:
            raise ConfigError(f"k must lie in [0, {data.delta - 1}], got {self.k}")


@dataclass(frozen=True, eq=False)
class FitResult:
    alpha_hat: np.ndarray
    beta_hat: np.ndarray
    vcov: np.ndarray
    se_beta: np.ndarray
    ci_beta: np.ndarray
    p_values: np.ndarray
    diagnostics: dict
    vcov_unadj: np.ndarray
    vcov_adj: np.ndarray
    n: int
    alpha_names: tuple
    beta_names: tuple
    estimator: str
    eta: float = 0.05

    @property
    def p(self):
        return self.beta_hat.size

    @property
    def q(self):
        return self.alpha_hat.size

    @property
    def theta(self):
        return np.concatenate([self.alpha_hat, self.beta_hat])

    def beta_interval(self, adjusted=True, eta=None):
        """SE and CI for beta.

        ``adjusted=False``: plain sandwich with normal critical value.
        ``adjusted=True``: leverage-corrected sandwich with t(n - p - q).
        """
        eta = self.eta if eta is None else eta
        q = self.q
        if adjusted:
            return intervals(self.beta_hat, self.vcov_adj[q:, q:], eta, self.n - self.p - q)
        return intervals(self.beta_hat, self.vcov_unadj[q:, q:], eta, None)


def weight_for(kind, weights):
    kind = Kind(kind)
    if kind is Kind.PD_EMEE:
        return weights.w_pd
    if kind is Kind.EMEE:
        return weights.w_full
    if kind is Kind.REF_REGIME:
        return weights.w_k
    return weights.w_full_k


class _Problem:
    """Arrays for one (dataset, spec) pair, prepared once per fit."""

    def __init__(self, data, outcomes, weights, spec):
        spec.check(data)
        if weights.k != (data.delta - 1 if spec.k is None else spec.k):
            raise ConfigError("weights were built with a different k than the spec")
        self.data = data
        self.G = np.ascontiguousarray(data.controls[..., list(spec.control_cols)])
        self.S = np.ascontiguousarray(data.moderators[..., list(spec.moderator_cols)])
        self.A = data.treatment
        self.Y = np.ascontiguousarray(outcomes.y, dtype=np.float64)
        self.ptilde = weights.ptilde
        self.row_weight = np.ascontiguousarray(
            data.availability * weights.m * weight_for(spec.kind, weights))
        self.q = self.G.shape[2]
        self.p = self.S.shape[2]
        self.n = data.n

    def split(self, theta):
        return theta[: self.q], theta[self.q:]

    def evaluate(self, theta, want_jacobian=True, want_leverage=False):
        alpha, beta = self.split(np.asarray(theta, dtype=np.float64))
        u_ind, jac, cross, n_clamped = kernels.ee_accumulate(
            self.G, self.S, self.A, self.Y, self.ptilde, self.row_weight, alpha, beta,
            want_jacobian=want_jacobian, want_leverage=want_leverage)
        if not np.all(np.isfinite(u_ind)):
            self._raise_nonfinite(theta)
        return u_ind, jac, cross, n_clamped

    def mean_u(self, theta):
        return self.evaluate(theta, want_jacobian=False)[0].sum(axis=0) / self.n

    def mean_jacobian(self, theta, mode="analytic", h=1e-6):
        if mode == "analytic":
            return self.evaluate(theta)[1] / self.n
        theta = np.asarray(theta, dtype=np.float64)
        k = theta.size
        jac = np.empty((k, k))
        for j in range(k):
            e = np.zeros(k)
            e[j] = h
            jac[:, j] = (self.mean_u(theta + e) - self.mean_u(theta - e)) / (2 * h)
        return jac

    def _raise_nonfinite(self, theta):
        alpha, beta = self.split(np.asarray(theta, dtype=np.float64))
        with np.errstate(all="ignore"):
            lin = self.G @ alpha + self.A * (self.S @ beta)
            bad = ~np.isfinite(lin) | ~np.isfinite(self.Y) | ~np.isfinite(self.row_weight)
        bad &= self.row_weight != 0
        if bad.any():
            i, t = np.argwhere(bad)[0]
            raise NumericError(
                f"non-finite estimating-function term at individual {self.data.ids[i]}, decision {t}")
        raise NumericError("non-finite estimating function")


def _resolve_weights(data, outcomes, spec, weights):
    if weights is None:
        weights = compute_weights(data, outcomes, spec.numerator, k=spec.k,
                                  moderator_cols=spec.moderator_cols)
    return weights


def estimating_function(data, outcomes, weights, spec, alpha, beta):
    """Averaged stacked estimating function ``(1/n) sum_i U_i``."""
    prob = _Problem(data, outcomes, weights, spec)
    return prob.mean_u(np.concatenate([np.atleast_1d(alpha), np.atleast_1d(beta)]))


def per_individual_estimating_function(data, outcomes, weights, spec, alpha, beta):
    prob = _Problem(data, outcomes, weights, spec)
    theta = np.concatenate([np.atleast_1d(alpha), np.atleast_1d(beta)])
    return prob.evaluate(theta, want_jacobian=False)[0]


def jacobian(data, outcomes, weights, spec, alpha, beta, mode=None, h=None):
    """Derivative of the averaged estimating function w.r.t. ``(alpha, beta)``."""
    prob = _Problem(data, outcomes, weights, spec)
    theta = np.concatenate([np.atleast_1d(alpha), np.atleast_1d(beta)])
    mode = mode or spec.solver.jacobian
    return prob.mean_jacobian(theta, mode, spec.solver.fd_step if h is None else h)


def _check_arms(data):
    on = data.availability == 1
    arms = data.treatment[on]
    if arms.size == 0 or arms.min() == arms.max():
        raise DataError("need available decision points in both treatment arms")


def newton_solve(evaluate, theta0, solver):
    """Damped Newton iteration on a stacked estimating equation.

    ``evaluate(theta)`` returns ``(mean_U, mean_jacobian, n_clamped)``.
    Returns ``(theta, mean_U, iterations, n_clamped)``.
    """
    theta = np.asarray(theta0, dtype=np.float64).copy()
    u, jac, clamped = evaluate(theta)
    norm = np.max(np.abs(u))
    total_clamped = clamped
    it = 0
    while norm > solver.tol:
        if it >= solver.max_iter:
            raise NonConvergenceError(
                f"no root after {it} iterations (|U|={norm:.3g})",
                theta=theta, residual_norm=norm, iterations=it)
        it += 1
        try:
            step = np.linalg.solve(jac, u)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError("singular Jacobian during Newton step") from exc
        if not np.all(np.isfinite(step)):
            raise SingularJacobianError("singular Jacobian during Newton step")
        scale = solver.step_damping
        for _ in range(solver.max_halvings + 1):
            cand = theta - scale * step
            u_c, jac_c, clamped = evaluate(cand)
            norm_c = np.max(np.abs(u_c))
            if norm_c < norm:
                break
            scale /= 2
        else:
            raise NonConvergenceError(
                f"step halving failed to decrease |U| (|U|={norm:.3g})",
                theta=theta, residual_norm=norm, iterations=it)
        total_clamped += clamped
        theta, u, jac, norm = cand, u_c, jac_c, norm_c
    return theta, u, it, total_clamped


def fit(data, outcomes, spec=None, weights=None):
    """Solve the estimating equation and attach sandwich inference."""
    spec = spec or EstimatorSpec()
    _check_arms(data)
    weights = _resolve_weights(data, outcomes, spec, weights)
    prob = _Problem(data, outcomes, weights, spec)
    n, solver = prob.n, spec.solver

    def evaluate(theta):
        u_ind, jac, _, clamped = prob.evaluate(theta, want_jacobian=solver.jacobian == "analytic")
        if solver.jacobian != "analytic":
            jac = prob.mean_jacobian(theta, "finite-difference", solver.fd_step) * n
        return u_ind.sum(axis=0) / n, jac / n, clamped

    theta0 = np.zeros(prob.q + prob.p)
    theta, u, iters, clamped = newton_solve(evaluate, theta0, solver)
    if clamped:
        warnings.warn(f"linear predictor clamped to +/-{kernels.LINPRED_BOUND} on "
                      f"{clamped} row evaluations", NumericWarning, stacklevel=2)
    u_ind, jac, cross, _ = prob.evaluate(theta, want_jacobian=True, want_leverage=True)
    return _assemble(theta, u, u_ind, jac / n, cross, prob.q, prob.p, n, iters, clamped,
                     data, spec)


def _assemble(theta, u_mean, u_ind, mean_jac, cross, q, p, n, iters, clamped, data,
              spec, extra=None):
    config = spec.inference
    inf = infer(u_ind, mean_jac, cross, p, q, config)
    alpha, beta = theta[:q], theta[q:]
    vb = inf.vcov[q:, q:]
    se, ci = intervals(beta, vb, config.eta, inf.df)
    pvals, degenerate = two_sided_p(beta, se, inf.df)
    diagnostics = {
        "iterations": iters,
        "final_residual_norm": float(np.max(np.abs(u_mean))),
        "converged": True,
        "df_used": inf.df,
        "leverage_failures": inf.leverage_failures,
        "clamped_rows": clamped,
        "degenerate": degenerate.tolist(),
    }
    if extra:
        diagnostics.update(extra)
    return FitResult(
        alpha_hat=alpha, beta_hat=beta, vcov=inf.vcov, se_beta=se, ci_beta=ci, p_values=pvals,
        diagnostics=diagnostics, vcov_unadj=inf.vcov_unadj, vcov_adj=inf.vcov_adj, n=n,
        alpha_names=tuple(data.control_names[c] for c in spec.control_cols),
        beta_names=tuple(data.moderator_names[c] for c in spec.moderator_cols),
        estimator=spec.name, eta=config.eta)


__all__ = ["Kind", "SolverConfig", "EstimatorSpec", "FitResult", "estimating_function",
           "per_individual_estimating_function", "jacobian", "fit", "newton_solve",
           "degrees_of_freedom"]
