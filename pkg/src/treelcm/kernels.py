"""Backend dispatch for the hot augmentation kernels.

The compiled extension is preferred; the pure-Python mirror is used when the
extension is missing or when ``TREELCM_KERNELS=python`` is set.  Both
backends consume the generator's uniform stream identically, so chains are
reproducible across backends, not just within one.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("TREELCM_KERNELS", "").lower() == "python":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"


def backend():
    """Name of the active kernel backend: 'compiled' or 'python'."""
    return BACKEND


def polya_gamma(psi, rng, b=2):
    """Elementwise PG(b, psi) draws for b in {1, 2}."""
    psi = np.ascontiguousarray(psi, dtype=np.float64)
    return _impl.polya_gamma(psi, rng, b)


def truncated_normal(mu, sd, positive, rng):
    """Elementwise one-sided truncated normal draws.

    positive[i] nonzero restricts to (0, inf), otherwise to (-inf, 0].
    """
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    sd = np.ascontiguousarray(sd, dtype=np.float64)
    positive = np.ascontiguousarray(positive, dtype=np.uint8)
    return _impl.truncated_normal(mu, sd, positive, rng)


def augmented_sweep(y, loc, w, s, rng):
    """In-place (w, s) refresh for all response entries, row-major order."""
    return _impl.augmented_sweep(y, loc, w, s, rng)
