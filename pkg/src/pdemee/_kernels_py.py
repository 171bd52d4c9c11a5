"""Pure numpy implementations of the hot kernels.

These are the reference semantics; ``_kernels.pyx`` must agree with them to
floating-point round-off.  All arrays are dense ``[n, T]`` panels padded past
each individual's horizon with ``availability == 0``.
"""
import numpy as np

NO_HIT = 0
LINPRED_BOUND = 30.0


def window_weights(treatment, rand_prob, availability, first_hit, lengths,
                   horizon, per_decision):
    """Product of no-treatment inverse probability factors over a window.

    For decision ``t`` the factor for ``j = t + s`` (``1 <= s <= horizon``)
    is ``1(A_j = 0) / (1 - p_j)``.  With ``per_decision`` the factor is kept
    only while no sub-outcome has fired yet (``s < first_hit``).  Decision
    points that are unavailable or past the individual's horizon contribute 1.
    """
    n, T = treatment.shape
    out = np.ones((n, T), dtype=np.float64)
    if horizon <= 0:
        return out
    tt = np.arange(T)
    lengths = np.asarray(lengths)
    for s in range(1, horizon + 1):
        j = tt + s
        inside = j < T
        factor = np.ones((n, T), dtype=np.float64)
        jj = j[inside]
        a_j = treatment[:, jj]
        p_j = rand_prob[:, jj]
        live = (availability[:, jj] > 0) & (jj[None, :] < lengths[:, None])
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(a_j > 0, 0.0, 1.0 / (1.0 - p_j))
        factor[:, inside] = np.where(live, f, 1.0)
        if per_decision:
            keep = (first_hit == NO_HIT) | (s < first_hit)
            factor = np.where(keep, factor, 1.0)
        out *= factor
    return out


def ee_accumulate(controls, moderators, treatment, outcome, ptilde, weight,
                  alpha, beta, want_jacobian=True, want_leverage=False):
    """Per-individual estimating functions plus summed Jacobian.

    Parameters
    ----------
    controls : ndarray [n, T, q]
    moderators : ndarray [n, T, p]
    treatment, outcome, ptilde : ndarray [n, T]
    weight : ndarray [n, T]
        Row multiplier ``I * M * W`` (zero rows drop out).
    alpha, beta : ndarray [q], [p]

    Returns
    -------
    u_ind : ndarray [n, q + p]
        ``U_i(alpha, beta)`` for each individual (not averaged).
    jac : ndarray [q + p, q + p] or None
        ``sum_i dU_i / d(alpha, beta)``.
    cross : ndarray [n, q + p, q + p] or None
        ``B_i^T D_i`` used by the leverage correction.
    n_clamped : int
        Number of rows where a linear predictor hit the overflow guard.
    """
    lin0 = controls @ alpha
    eff = treatment * (moderators @ beta)
    total = lin0 + eff
    n_clamped = int(np.count_nonzero(
        (weight != 0) & ((np.abs(total) > LINPRED_BOUND) | (np.abs(eff) > LINPRED_BOUND)
                         | (np.abs(lin0) > LINPRED_BOUND))))
    lin0 = np.clip(lin0, -LINPRED_BOUND, LINPRED_BOUND)
    eff = np.clip(eff, -LINPRED_BOUND, LINPRED_BOUND)
    total = np.clip(total, -LINPRED_BOUND, LINPRED_BOUND)

    mu = np.exp(total)
    blip = np.exp(-eff)
    resid = outcome - mu
    centred = (treatment - ptilde)[..., None] * moderators
    x = np.concatenate([controls, centred], axis=2)
    coef = weight * blip * resid
    u_ind = np.einsum("nt,ntk->nk", coef, x)

    jac = None
    if want_jacobian:
        e0 = np.exp(lin0)
        deriv = np.concatenate(
            [-(e0[..., None] * controls),
             -((treatment * outcome * blip)[..., None] * moderators)],
            axis=2,
        )
        jac = np.einsum("ntk,ntl->kl", weight[..., None] * x, deriv)

    cross = None
    if want_leverage:
        b = (weight * blip)[..., None] * x
        d = mu[..., None] * np.concatenate(
            [controls, treatment[..., None] * moderators], axis=2)
        cross = np.einsum("ntk,ntl->nkl", b, d)
    return u_ind, jac, cross, n_clamped
