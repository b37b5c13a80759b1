"""Pure-Python fallback for the augmentation kernels.

Mirrors ``treelcm._kernels`` operation for operation: the same rejection
algorithms consuming uniforms from the generator in the same order, so both
backends emit bit-identical draws from the same seed.  Roughly two orders of
magnitude slower than the compiled extension; selected automatically only
when the extension is unavailable (see ``treelcm.kernels``).
"""

import math

import numpy as np

JACOBI_SPLIT = 0.64
TAIL_SWITCH = 0.45


def _open_uniform(rng):
    # 1 - u lies in (0, 1], keeping log() finite.
    return 1.0 - rng.random()


def _exponential(rng):
    return -math.log(_open_uniform(rng))


def _gauss(rng):
    # Box-Muller, cosine branch only: two uniforms per normal, fixed order.
    u1 = _open_uniform(rng)
    u2 = rng.random()
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def _norm_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _jacobi_coef(n, x):
    h = n + 0.5
    if x > JACOBI_SPLIT:
        return math.pi * h * math.exp(-h * h * math.pi * math.pi * x / 2.0)
    y = 2.0 / (math.pi * x)
    return y * math.sqrt(y) * math.pi * h * math.exp(-2.0 * h * h / x)


def _trunc_invgauss(rng, z, t):
    # Inverse-Gaussian(mu=1/z, lambda=1) restricted to (0, t]; z >= 0.
    if z < 1.0 / t:
        while True:
            while True:
                e1 = _exponential(rng)
                e2 = _exponential(rng)
                if e1 * e1 <= 2.0 * e2 / t:
                    break
            x = t / ((1.0 + t * e1) * (1.0 + t * e1))
            if rng.random() <= math.exp(-0.5 * z * z * x):
                return x
    else:
        mu = 1.0 / z
        while True:
            y = _gauss(rng)
            y = y * y
            x = mu + 0.5 * mu * mu * y - 0.5 * mu * math.sqrt(4.0 * mu * y + (mu * y) * (mu * y))
            if rng.random() > mu / (mu + x):
                x = mu * mu / x
            if x <= t:
                return x


def _pg1(rng, psi):
    # Exact PG(1, psi) draw; symmetric in psi.
    z = abs(psi) * 0.5
    t = JACOBI_SPLIT
    rate = math.pi * math.pi / 8.0 + z * z / 2.0
    mass_tail = (math.pi / (2.0 * rate)) * math.exp(-rate * t)
    mass_body = 2.0 * math.exp(-z) * (
        _norm_cdf((t * z - 1.0) / math.sqrt(t))
        + math.exp(2.0 * z) * _norm_cdf(-(t * z + 1.0) / math.sqrt(t))
    )
    while True:
        if rng.random() < mass_tail / (mass_tail + mass_body):
            x = t + _exponential(rng) / rate
        else:
            x = _trunc_invgauss(rng, z, t)
        series = _jacobi_coef(0, x)
        bound = rng.random() * series
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


def _tn_lower(rng, a):
    # Standard normal conditioned on [a, inf).
    if a <= TAIL_SWITCH:
        while True:
            x = _gauss(rng)
            if x >= a:
                return x
    alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        x = a + _exponential(rng) / alpha
        if rng.random() <= math.exp(-0.5 * (x - alpha) * (x - alpha)):
            return x


def polya_gamma(psi, generator, b=2):
    """Draw PG(b, psi[i]) for each element; b must be 1 or 2."""
    if b not in (1, 2):
        raise ValueError("only shape parameters 1 and 2 are supported")
    psi = np.ascontiguousarray(psi, dtype=np.float64)
    out = np.empty(psi.shape[0])
    for i, value in enumerate(psi):
        if b == 1:
            out[i] = _pg1(generator, value)
        else:
            out[i] = _pg1(generator, value) + _pg1(generator, value)
    return out


def truncated_normal(mu, sd, positive, generator):
    """One-sided truncated normal draws; see the compiled twin for semantics."""
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    sd = np.ascontiguousarray(sd, dtype=np.float64)
    positive = np.ascontiguousarray(positive, dtype=np.uint8)
    out = np.empty(mu.shape[0])
    for i in range(mu.shape[0]):
        if positive[i]:
            out[i] = mu[i] + sd[i] * _tn_lower(generator, -mu[i] / sd[i])
        else:
            out[i] = mu[i] - sd[i] * _tn_lower(generator, mu[i] / sd[i])
    return out


def augmented_sweep(y, loc, w, s, generator):
    """Row-major in-place pass of the (w, s) augmentation updates."""
    nrow, ncol = y.shape
    for i in range(nrow):
        for j in range(ncol):
            m = loc[i, j]
            sdev = 1.0 / math.sqrt(s[i, j])
            if y[i, j]:
                wij = m + sdev * _tn_lower(generator, -m / sdev)
            else:
                wij = m - sdev * _tn_lower(generator, m / sdev)
            w[i, j] = wij
            s[i, j] = _pg1(generator, wij - m) + _pg1(generator, wij - m)
