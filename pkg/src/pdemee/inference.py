"""Sandwich variance, small-sample corrections, intervals and p-values.

Leverage correction
-------------------
Write each individual's stacked estimating function as ``U_i = B_i^T e_i``
where ``e_i`` is the vector of per-decision residuals and ``B_i`` the matrix
of per-decision multipliers.  With ``D_i`` the derivative of the fitted mean
vector with respect to the parameters, the leverage is

    H_ii = D_i (sum_j B_j^T D_j)^{-1} B_i^T

and the corrected score is ``B_i^T (I - H_ii)^{-1} e_i``.  Only the ``k x k``
cross-products ``G_i = B_i^T D_i`` are needed because of the push-through
identity ``B^T (I - D M B^T)^{-1} = (I - G M)^{-1} B^T`` with
``M = (sum_j G_j)^{-1}``.  Under working independence this is the usual
Mancl-DeRouen hat matrix.
"""
from dataclasses import dataclass
import warnings

import numpy as np
from scipy import stats

from .errors import ConfigError, SingularJacobianError

P_VALUE_FLOOR = 1e-300
COND_WARN = 1e10


class InferenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class InferenceConfig:
    eta: float = 0.05
    residual_correction: bool = True
    t_critical: bool = True
    df_override: int = None

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ConfigError(f"eta must lie in (0, 1), got {self.eta}")
        if self.df_override is not None and self.df_override < 1:
            raise ConfigError("df_override must be a positive integer")


def _invert(mat, what="Jacobian"):
    mat = np.asarray(mat, dtype=np.float64)
    try:
        cond = np.linalg.cond(mat)
    except np.linalg.LinAlgError as exc:
        raise SingularJacobianError(f"{what} is singular") from exc
    if not np.isfinite(cond):
        raise SingularJacobianError(f"{what} is singular")
    if cond > COND_WARN:
        warnings.warn(f"{what} condition number {cond:.3g} exceeds {COND_WARN:.0e}",
                      InferenceWarning, stacklevel=3)
    try:
        return np.linalg.inv(mat)
    except np.linalg.LinAlgError as exc:
        raise SingularJacobianError(f"{what} is singular") from exc


def sandwich_vcov(per_individual_U, mean_jacobian):
    """Covariance of the stacked estimate, ``bread^-1 meat bread^-T / n``."""
    U = np.asarray(per_individual_U, dtype=np.float64)
    n = U.shape[0]
    bread_inv = _invert(mean_jacobian)
    meat = U.T @ U / n
    vcov = bread_inv @ meat @ bread_inv.T / n
    return (vcov + vcov.T) / 2


def leverage_adjusted_scores(per_individual_U, cross):
    """Scores with residuals pre-multiplied by ``(I - H_ii)^{-1}``.

    Returns the adjusted ``[n, k]`` scores and the number of individuals for
    which ``I - H_ii`` was not invertible (their score is left unadjusted).
    """
    U = np.asarray(per_individual_U, dtype=np.float64)
    cross = np.asarray(cross, dtype=np.float64)
    n, k = U.shape
    M = _invert(cross.sum(axis=0), what="leverage normalizer")
    eye = np.eye(k)
    A = eye[None, :, :] - cross @ M
    adjusted = U.copy()
    failed = 0
    try:
        adjusted = np.linalg.solve(A, U[..., None])[..., 0]
        ok = np.all(np.isfinite(adjusted), axis=1) & (np.linalg.cond(A) < 1e12)
    except np.linalg.LinAlgError:
        ok = np.zeros(n, dtype=bool)
        for i in range(n):
            try:
                adjusted[i] = np.linalg.solve(A[i], U[i])
                ok[i] = np.all(np.isfinite(adjusted[i])) and np.linalg.cond(A[i]) < 1e12
            except np.linalg.LinAlgError:
                pass
    if not np.all(ok):
        failed = int(np.count_nonzero(~ok))
        adjusted[~ok] = U[~ok]
    return adjusted, failed


def leverage_matrix(B_i, D_i, sum_cross):
    """Explicit ``T_i x T_i`` leverage (reference implementation for checks)."""
    return D_i @ np.linalg.solve(sum_cross, B_i.T)


def degrees_of_freedom(n, p, q, config):
    if config.df_override is not None:
        return int(config.df_override)
    df = n - p - q
    if config.t_critical and df < 1:
        raise ConfigError(f"n - p - q = {df} < 1; t critical values need df >= 1")
    return df


def critical_value(eta, df=None):
    """Two-sided critical value; normal when ``df`` is None."""
    if df is None:
        return float(stats.norm.ppf(1 - eta / 2))
    return float(stats.t.ppf(1 - eta / 2, df))


def two_sided_p(estimate, se, df=None):
    """Returns (p_value, degenerate)."""
    estimate = np.asarray(estimate, dtype=np.float64)
    se = np.asarray(se, dtype=np.float64)
    p = np.empty_like(estimate)
    degenerate = se <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(estimate) / se
    dist = stats.norm if df is None else stats.t(df)
    ok = ~degenerate
    p[ok] = 2 * dist.sf(z[ok])
    p[degenerate] = np.where(estimate[degenerate] == 0, 1.0, 0.0)
    p = np.maximum(p, P_VALUE_FLOOR)
    return p, degenerate


@dataclass(frozen=True, eq=False)
class InferenceResult:
    vcov: np.ndarray
    vcov_unadj: np.ndarray
    vcov_adj: np.ndarray
    df: int
    leverage_failures: int


def infer(U_ind, mean_jacobian, cross, p, q, config=None):
    """Unadjusted and leverage-corrected covariances for a fitted model."""
    config = config or InferenceConfig()
    n = U_ind.shape[0]
    vcov_unadj = sandwich_vcov(U_ind, mean_jacobian)
    failures = 0
    if cross is not None:
        U_adj, failures = leverage_adjusted_scores(U_ind, cross)
        vcov_adj = sandwich_vcov(U_adj, mean_jacobian)
    else:
        vcov_adj = vcov_unadj
    df = degrees_of_freedom(n, p, q, config) if config.t_critical else None
    vcov = vcov_adj if config.residual_correction else vcov_unadj
    return InferenceResult(vcov=vcov, vcov_unadj=vcov_unadj, vcov_adj=vcov_adj, df=df,
                           leverage_failures=failures)


def beta_block(vcov, q):
    return vcov[q:, q:]


def intervals(beta, vcov_beta, eta=0.05, df=None):
    se = np.sqrt(np.clip(np.diag(vcov_beta), 0, None))
    crit = critical_value(eta, df)
    return se, np.column_stack([beta - crit * se, beta + crit * se])


def summarize(fit, config=None):
    """Per-coefficient table: list of dicts with estimate, SE, CI and p-value."""
    config = config or InferenceConfig()
    vcov = fit.vcov_adj if config.residual_correction else fit.vcov_unadj
    vb = beta_block(vcov, fit.q)
    df = degrees_of_freedom(fit.n, fit.p, fit.q, config) if config.t_critical else None
    se, ci = intervals(fit.beta_hat, vb, config.eta, df)
    pvals, degenerate = two_sided_p(fit.beta_hat, se, df)
    rows = []
    for j, name in enumerate(fit.beta_names):
        rows.append({
            "term": name,
            "estimate": float(fit.beta_hat[j]),
            "se": float(se[j]),
            "ci_low": float(ci[j, 0]),
            "ci_high": float(ci[j, 1]),
            "p_value": float(pvals[j]),
            "degenerate": bool(degenerate[j]),
            "reference": "t" if df is not None else "normal",
            "df": df,
        })
    return rows
