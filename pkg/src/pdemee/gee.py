"""Log-link GEE comparators (independent and exchangeable working correlation).

Mean model ``mu_t = exp(g_t'a + A_t S_t'b)`` with binary working variance
``mu_t (1 - mu_t)``.  Only available decision points enter.  Both variants are
solved by Fisher scoring; the exchangeable correlation is re-estimated from
Pearson residuals at every iterate.
"""
from dataclasses import dataclass, field
import warnings

import numpy as np

from .errors import ConfigError, NumericError
from .estimators import NumericWarning, SolverConfig, _assemble, _check_arms, newton_solve
from .inference import InferenceConfig

MU_CEILING = 1 - 1e-6


@dataclass(frozen=True)
class GeeSpec:
    correlation: str = "independent"
    moderator_cols: tuple = (0,)
    control_cols: tuple = (0,)
    solver: SolverConfig = field(default_factory=SolverConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    label: str = None

    def __post_init__(self):
        if self.correlation not in ("independent", "exchangeable"):
            raise ConfigError(f"unknown working correlation {self.correlation!r}")
        object.__setattr__(self, "moderator_cols", tuple(int(c) for c in self.moderator_cols))
        object.__setattr__(self, "control_cols", tuple(int(c) for c in self.control_cols))
        if not self.moderator_cols or 0 not in self.moderator_cols:
            raise ConfigError("moderator set must be nonempty and include the intercept column 0")

    @property
    def name(self):
        if self.label:
            return self.label
        return "gee-ind" if self.correlation == "independent" else "gee-exch"


class _GeeProblem:
    def __init__(self, data, outcomes, spec):
        self.G = data.controls[..., list(spec.control_cols)]
        self.S = data.moderators[..., list(spec.moderator_cols)]
        self.A = data.treatment
        self.Y = np.asarray(outcomes.y, dtype=np.float64)
        self.mask = (data.availability == 1).astype(np.float64)
        self.m = self.mask.sum(axis=1)
        self.X = np.concatenate([self.G, self.A[..., None] * self.S], axis=2)
        self.q, self.p = self.G.shape[2], self.S.shape[2]
        self.n = data.n
        self.exchangeable = spec.correlation == "exchangeable"
        self.rho = 0.0

    def parts(self, theta):
        eta = np.clip(self.X @ theta, -30, 30)
        mu = np.exp(eta)
        clamped = int(np.count_nonzero((mu > MU_CEILING) & (self.mask > 0)))
        mu = np.minimum(mu, MU_CEILING)
        sd = np.sqrt(mu * (1 - mu))
        e = (self.Y - mu) / sd * self.mask
        h = (mu / sd * self.mask)[..., None] * self.X
        return mu, e, h, clamped

    def estimate_rho(self, e):
        k = self.q + self.p
        N = self.m.sum()
        phi = (e ** 2).sum() / max(N - k, 1)
        pairs = 0.5 * ((e.sum(axis=1) ** 2) - (e ** 2).sum(axis=1)).sum()
        n_pairs = 0.5 * (self.m * (self.m - 1)).sum() - k
        if n_pairs <= 0 or phi <= 0:
            return 0.0
        lower = -1.0 / max(self.m.max() - 1, 1) + 1e-6
        return float(np.clip(pairs / (n_pairs * phi), lower, 0.999))

    def evaluate(self, theta):
        """Per-individual scores and Fisher information, ``(u_ind, info_ind, clamped)``."""
        mu, e, h, clamped = self.parts(theta)
        if self.exchangeable:
            self.rho = rho = self.estimate_rho(e)
            c = rho / (1 - rho + self.m * rho)
            h_sum = h.sum(axis=1)
            e_sum = e.sum(axis=1)
            u_ind = (np.einsum("ntk,nt->nk", h, e) - (c * e_sum)[:, None] * h_sum) / (1 - rho)
            info = (np.einsum("ntk,ntl->nkl", h, h)
                    - c[:, None, None] * np.einsum("nk,nl->nkl", h_sum, h_sum)) / (1 - rho)
        else:
            u_ind = np.einsum("ntk,nt->nk", h, e)
            info = np.einsum("ntk,ntl->nkl", h, h)
        if not (np.all(np.isfinite(u_ind)) and np.all(np.isfinite(info))):
            raise NumericError("non-finite GEE estimating function")
        return u_ind, info, clamped


def gee_estimating_function(data, outcomes, spec, theta):
    """Averaged GEE estimating function at ``theta`` (rho re-estimated there)."""
    prob = _GeeProblem(data, outcomes, spec)
    return prob.evaluate(np.asarray(theta, dtype=np.float64))[0].mean(axis=0)


def fit_gee(data, outcomes, spec=None):
    spec = spec or GeeSpec()
    _check_arms(data)
    prob = _GeeProblem(data, outcomes, spec)
    n = prob.n

    def evaluate(theta):
        u_ind, info, clamped = prob.evaluate(theta)
        return u_ind.sum(axis=0) / n, -info.sum(axis=0) / n, clamped

    theta0 = np.zeros(prob.q + prob.p)
    on = prob.mask > 0
    ybar = prob.Y[on].mean()
    if 0 in spec.control_cols and 0 < ybar < 1:
        # start inside the unit interval: intercept at log(mean Y)
        intercept = list(spec.control_cols).index(0)
        if np.allclose(prob.G[..., intercept][on], 1.0):
            theta0[intercept] = np.log(ybar)
    theta, u, iters, clamped = newton_solve(evaluate, theta0, spec.solver)
    u_ind, info, final_clamped = prob.evaluate(theta)
    if final_clamped:
        raise NumericError(f"fitted mean at or above 1 on {final_clamped} rows at the root")
    if clamped:
        warnings.warn(f"GEE fitted mean clamped below 1 on {clamped} row evaluations",
                      NumericWarning, stacklevel=2)
    mean_jac = -info.sum(axis=0) / n
    return _assemble(theta, u, u_ind, mean_jac, info, prob.q, prob.p, n, iters, clamped,
                     data, spec, extra={"rho": prob.rho if prob.exchangeable else 0.0})
