"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy fallback
is used.  Set ``PDEMEE_BACKEND=python`` to force the fallback (e.g. to compare
the two in tests or benchmarks).
"""
import os

import numpy as np

from . import _kernels_py

NO_HIT = _kernels_py.NO_HIT
LINPRED_BOUND = _kernels_py.LINPRED_BOUND

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled


def available_backends():
    return sorted(_BACKENDS)


def _default_backend():
    forced = os.environ.get("PDEMEE_BACKEND", "").strip().lower()
    if forced:
        if forced not in _BACKENDS:
            raise ImportError(
                f"PDEMEE_BACKEND={forced!r} requested but only {available_backends()} are available")
        return forced
    return "cython" if "cython" in _BACKENDS else "python"


BACKEND = _default_backend()


def get_backend(name=None):
    return _BACKENDS[name or BACKEND]


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def window_weights(treatment, rand_prob, availability, first_hit, lengths, horizon,
                   per_decision, backend=None):
    mod = get_backend(backend)
    return mod.window_weights(
        _f64(treatment), _f64(rand_prob), _f64(availability),
        np.ascontiguousarray(first_hit, dtype=np.int64),
        np.ascontiguousarray(lengths, dtype=np.int64),
        int(horizon), bool(per_decision))


def ee_accumulate(controls, moderators, treatment, outcome, ptilde, weight, alpha, beta,
                  want_jacobian=True, want_leverage=False, backend=None):
    mod = get_backend(backend)
    return mod.ee_accumulate(
        _f64(controls), _f64(moderators), _f64(treatment), _f64(outcome), _f64(ptilde),
        _f64(weight), _f64(alpha), _f64(beta), want_jacobian, want_leverage)
