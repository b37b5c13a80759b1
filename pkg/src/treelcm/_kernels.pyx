# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled inner-loop samplers for the Gibbs augmentation step.

Exact Polya-Gamma PG(1, psi) draws use the alternating-series rejection
sampler on the tilted Jacobi representation (PG(1, psi) = J*(1, psi/2) / 4);
PG(2, psi) is the sum of two independent PG(1, psi) draws.  One-sided
truncated normals use naive rejection near the bulk and exponential
rejection in the tail.

Every routine draws raw uniforms from the bit generator underlying a
``numpy.random.Generator`` and derives all other variates from them
(Box-Muller normals, inverse-CDF exponentials).  ``treelcm._kernels_py``
implements the same algorithms with the same consumption order, so the two
backends produce bit-identical streams from the same seed.
"""

from libc.math cimport M_PI, cos, erfc, exp, fabs, log, pow, sqrt

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from numpy.random cimport bitgen_t

cnp.import_array()

# Truncation point splitting the Jacobi-series sampler into its
# inverse-Gaussian body and exponential tail.
cdef double JACOBI_SPLIT = 0.64
# Standardized bound beyond which naive truncated-normal rejection is
# replaced by exponential tail rejection.
cdef double TAIL_SWITCH = 0.45


cdef inline bitgen_t *_bitgen(object generator) except NULL:
    capsule = generator.bit_generator.capsule
    return <bitgen_t *> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef inline double _uniform(bitgen_t *rng) noexcept nogil:
    return rng.next_double(rng.state)


cdef inline double _open_uniform(bitgen_t *rng) noexcept nogil:
    # 1 - u lies in (0, 1], keeping log() finite.
    return 1.0 - rng.next_double(rng.state)


cdef inline double _exponential(bitgen_t *rng) noexcept nogil:
    return -log(_open_uniform(rng))


cdef inline double _gauss(bitgen_t *rng) noexcept nogil:
    # Box-Muller, cosine branch only: two uniforms per normal, fixed order.
    cdef double u1 = _open_uniform(rng)
    cdef double u2 = _uniform(rng)
    return sqrt(-2.0 * log(u1)) * cos(2.0 * M_PI * u2)


cdef inline double _norm_cdf(double x) noexcept nogil:
    return 0.5 * erfc(-x / sqrt(2.0))


cdef inline double _jacobi_coef(int n, double x) noexcept nogil:
    # n-th term of the alternating series for the J*(1, .) density.
    cdef double h = n + 0.5
    cdef double y
    if x > JACOBI_SPLIT:
        return M_PI * h * exp(-h * h * M_PI * M_PI * x / 2.0)
    y = 2.0 / (M_PI * x)
    return y * sqrt(y) * M_PI * h * exp(-2.0 * h * h / x)


cdef double _trunc_invgauss(bitgen_t *rng, double z, double t) noexcept nogil:
    # Inverse-Gaussian(mu=1/z, lambda=1) restricted to (0, t]; z >= 0.
    cdef double e1, e2, x, alpha, mu, y
    if z < 1.0 / t:
        # mu > t: sample the right-truncated body by double-exponential rejection.
        while True:
            while True:
                e1 = _exponential(rng)
                e2 = _exponential(rng)
                if e1 * e1 <= 2.0 * e2 / t:
                    break
            x = t / ((1.0 + t * e1) * (1.0 + t * e1))
            alpha = exp(-0.5 * z * z * x)
            if _uniform(rng) <= alpha:
                return x
    else:
        mu = 1.0 / z
        while True:
            y = _gauss(rng)
            y = y * y
            x = mu + 0.5 * mu * mu * y - 0.5 * mu * sqrt(4.0 * mu * y + (mu * y) * (mu * y))
            if _uniform(rng) > mu / (mu + x):
                x = mu * mu / x
            if x <= t:
                return x


cdef double _pg1_core(bitgen_t *rng, double z, double rate, double tail_share) noexcept nogil:
    # One J*(1, z)/4 draw given the precomputed mixture constants.
    cdef double t = JACOBI_SPLIT
    cdef double x, series, bound
    cdef int n
    while True:
        if _uniform(rng) < tail_share:
            x = t + _exponential(rng) / rate
        else:
            x = _trunc_invgauss(rng, z, t)
        series = _jacobi_coef(0, x)
        bound = _uniform(rng) * series
        n = 0
        while True:
            n += 1
            if n % 2 == 1:
                series -= _jacobi_coef(n, x)
                if bound <= series:
                    return x / 4.0
            else:
                series += _jacobi_coef(n, x)
                if bound > series:
                    break


cdef inline double _pg_tail_share(double z, double rate) noexcept nogil:
    cdef double t = JACOBI_SPLIT
    cdef double mass_tail = (M_PI / (2.0 * rate)) * exp(-rate * t)
    cdef double mass_body = 2.0 * exp(-z) * (
        _norm_cdf((t * z - 1.0) / sqrt(t)) + exp(2.0 * z) * _norm_cdf(-(t * z + 1.0) / sqrt(t))
    )
    return mass_tail / (mass_tail + mass_body)


cdef double _pg1(bitgen_t *rng, double psi) noexcept nogil:
    # Exact PG(1, psi) draw; symmetric in psi.
    cdef double z = fabs(psi) * 0.5
    cdef double rate = M_PI * M_PI / 8.0 + z * z / 2.0
    return _pg1_core(rng, z, rate, _pg_tail_share(z, rate))


cdef double _pg2(bitgen_t *rng, double psi) noexcept nogil:
    # PG(2, psi) as the sum of two PG(1, psi) draws sharing the setup.
    cdef double z = fabs(psi) * 0.5
    cdef double rate = M_PI * M_PI / 8.0 + z * z / 2.0
    cdef double tail_share = _pg_tail_share(z, rate)
    return _pg1_core(rng, z, rate, tail_share) + _pg1_core(rng, z, rate, tail_share)


cdef double _tn_lower(bitgen_t *rng, double a) noexcept nogil:
    # Standard normal conditioned on [a, inf).
    cdef double x, alpha, rho
    if a <= TAIL_SWITCH:
        while True:
            x = _gauss(rng)
            if x >= a:
                return x
    alpha = 0.5 * (a + sqrt(a * a + 4.0))
    while True:
        x = a + _exponential(rng) / alpha
        rho = exp(-0.5 * (x - alpha) * (x - alpha))
        if _uniform(rng) <= rho:
            return x


def polya_gamma(double[::1] psi, object generator, int b=2):
    """Draw PG(b, psi[i]) for each element; b must be 1 or 2."""
    if b != 1 and b != 2:
        raise ValueError("only shape parameters 1 and 2 are supported")
    cdef bitgen_t *rng = _bitgen(generator)
    cdef Py_ssize_t n = psi.shape[0], i
    out = np.empty(n)
    cdef double[::1] res = out
    with nogil:
        for i in range(n):
            if b == 1:
                res[i] = _pg1(rng, psi[i])
            else:
                res[i] = _pg2(rng, psi[i])
    return out


def truncated_normal(double[::1] mu, double[::1] sd, cnp.uint8_t[::1] positive,
                     object generator):
    """One-sided truncated normal draws.

    Element i is N(mu[i], sd[i]^2) restricted to (0, inf) when positive[i]
    is nonzero, and to (-inf, 0] otherwise.
    """
    cdef bitgen_t *rng = _bitgen(generator)
    cdef Py_ssize_t n = mu.shape[0], i
    out = np.empty(n)
    cdef double[::1] res = out
    with nogil:
        for i in range(n):
            if positive[i]:
                res[i] = mu[i] + sd[i] * _tn_lower(rng, -mu[i] / sd[i])
            else:
                res[i] = mu[i] - sd[i] * _tn_lower(rng, mu[i] / sd[i])
    return out


def augmented_sweep(cnp.uint8_t[:, ::1] y, double[:, ::1] loc,
                    double[:, ::1] w, double[:, ::1] s, object generator):
    """One full pass of the (w, s) augmentation updates, in place.

    Visits entries row-major.  For each (i, j): w is drawn from
    N(loc[i,j], 1/s[i,j]) truncated to the side dictated by y[i,j], then s
    from PG(2, w - loc[i,j]).
    """
    cdef bitgen_t *rng = _bitgen(generator)
    cdef Py_ssize_t nrow = y.shape[0], ncol = y.shape[1], i, j
    cdef double m, sdev, wij
    with nogil:
        for i in range(nrow):
            for j in range(ncol):
                m = loc[i, j]
                sdev = 1.0 / sqrt(s[i, j])
                if y[i, j]:
                    wij = m + sdev * _tn_lower(rng, -m / sdev)
                else:
                    wij = m - sdev * _tn_lower(rng, m / sdev)
                w[i, j] = wij
                s[i, j] = _pg2(rng, wij - m)
