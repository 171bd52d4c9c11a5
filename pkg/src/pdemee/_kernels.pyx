# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_kernels_py``.

Same signatures and semantics; inputs must be C-contiguous float64 (first_hit
and lengths int64).  The fused loop in ``ee_accumulate`` avoids the
``[n, T, k]`` temporaries the numpy version allocates on every Newton step.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs

cnp.import_array()

cdef double LINPRED_BOUND = 30.0


cdef inline double _clip(double v) noexcept nogil:
    if v > LINPRED_BOUND:
        return LINPRED_BOUND
    if v < -LINPRED_BOUND:
        return -LINPRED_BOUND
    return v


def window_weights(const double[:, ::1] treatment, const double[:, ::1] rand_prob,
                   const double[:, ::1] availability, const long long[:, ::1] first_hit,
                   const long long[::1] lengths, int horizon, bint per_decision):
    cdef Py_ssize_t n = treatment.shape[0], T = treatment.shape[1]
    out_arr = np.ones((n, T), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, t, j
    cdef int s
    cdef long long fh, Ti
    cdef double w
    if horizon <= 0:
        return out_arr
    with nogil:
        for i in range(n):
            Ti = lengths[i]
            for t in range(T):
                w = 1.0
                fh = first_hit[i, t]
                for s in range(1, horizon + 1):
                    if per_decision and fh != 0 and s >= fh:
                        break
                    j = t + s
                    if j >= T or j >= Ti or availability[i, j] <= 0:
                        continue
                    if treatment[i, j] > 0:
                        w = 0.0
                        break
                    w = w / (1.0 - rand_prob[i, j])
                out[i, t] = w
    return out_arr


def ee_accumulate(const double[:, :, ::1] controls, const double[:, :, ::1] moderators,
                  const double[:, ::1] treatment, const double[:, ::1] outcome,
                  const double[:, ::1] ptilde, const double[:, ::1] weight,
                  const double[::1] alpha, const double[::1] beta,
                  bint want_jacobian=True, bint want_leverage=False):
    cdef Py_ssize_t n = treatment.shape[0], T = treatment.shape[1]
    cdef Py_ssize_t q = controls.shape[2], p = moderators.shape[2]
    cdef Py_ssize_t k = q + p
    cdef Py_ssize_t i, t, a, b
    cdef double lin0, eff, total, mu, blip, resid, coef, wt, at, e0, yb, cen
    cdef long n_clamped = 0

    u_arr = np.zeros((n, k), dtype=np.float64)
    cdef double[:, ::1] u = u_arr
    jac_arr = np.zeros((k, k), dtype=np.float64)
    cdef double[:, ::1] jac = jac_arr
    cross_arr = np.zeros((n if want_leverage else 0, k, k), dtype=np.float64)
    cdef double[:, :, ::1] cross = cross_arr
    xbuf_arr = np.empty(k, dtype=np.float64)
    dbuf_arr = np.empty(k, dtype=np.float64)
    lbuf_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] x = xbuf_arr
    cdef double[::1] d = dbuf_arr
    cdef double[::1] lev = lbuf_arr

    with nogil:
        for i in range(n):
            for t in range(T):
                wt = weight[i, t]
                if wt == 0.0:
                    continue
                at = treatment[i, t]
                lin0 = 0.0
                for a in range(q):
                    lin0 = lin0 + controls[i, t, a] * alpha[a]
                eff = 0.0
                if at != 0.0:
                    for a in range(p):
                        eff = eff + moderators[i, t, a] * beta[a]
                    eff = eff * at
                total = lin0 + eff
                if fabs(lin0) > LINPRED_BOUND or fabs(eff) > LINPRED_BOUND or fabs(total) > LINPRED_BOUND:
                    n_clamped += 1
                lin0 = _clip(lin0)
                eff = _clip(eff)
                total = _clip(total)
                mu = exp(total)
                blip = exp(-eff)
                resid = outcome[i, t] - mu
                coef = wt * blip * resid
                cen = at - ptilde[i, t]
                for a in range(q):
                    x[a] = controls[i, t, a]
                for a in range(p):
                    x[q + a] = cen * moderators[i, t, a]
                for a in range(k):
                    u[i, a] += coef * x[a]
                if want_jacobian:
                    e0 = exp(lin0)
                    yb = at * outcome[i, t] * blip
                    for a in range(q):
                        d[a] = -e0 * controls[i, t, a]
                    for a in range(p):
                        d[q + a] = -yb * moderators[i, t, a]
                    for a in range(k):
                        for b in range(k):
                            jac[a, b] += wt * x[a] * d[b]
                if want_leverage:
                    for a in range(q):
                        lev[a] = mu * controls[i, t, a]
                    for a in range(p):
                        lev[q + a] = mu * at * moderators[i, t, a]
                    for a in range(k):
                        for b in range(k):
                            cross[i, a, b] += wt * blip * x[a] * lev[b]
    return (u_arr, jac_arr if want_jacobian else None,
            cross_arr if want_leverage else None, int(n_clamped))
