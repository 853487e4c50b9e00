"""Independent reference computations used by the unit and acceptance tests.

Nothing here imports the package's numerics; each oracle recomputes its
quantity from first principles (quadrature, arbitrary-precision sums,
explicit loops, finite differences).
"""

import math
import warnings

import mpmath
import numpy as np
from scipy import integrate


def _gauss(x, mean, var):
    return math.exp(-((x - mean) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)


def _moments_1d(mu0, half_tau0, r, half_phi, center):
    """``int w(x) (x - c)^k dx`` for ``k = 0, 1, 2`` and ``w = N(x; mu0, t) N(r; x, p)``, by quadrature."""
    sd = math.sqrt(max(half_tau0, half_phi))
    lo = min(mu0, r) - 40 * sd
    hi = max(mu0, r) + 40 * sd
    pts = sorted({mu0, r})

    c1 = 1.0 / (2 * half_tau0)
    c2 = 1.0 / (2 * half_phi)
    norm = 1.0 / (2 * math.pi * math.sqrt(half_tau0 * half_phi))
    exp = math.exp

    def w0(x):
        return norm * exp(-c1 * (x - mu0) ** 2 - c2 * (r - x) ** 2)

    out = []
    for k in range(3):
        f = w0 if k == 0 else (lambda x, k=k: w0(x) * (x - center) ** k)
        with warnings.catch_warnings():
            # a roundoff notice only: epsrel=1e-12 sits at double precision for peaked integrands
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err = integrate.quad(f, lo, hi, points=pts, epsabs=0.0, epsrel=1e-12, limit=200)
        if not err <= 1e-9 * abs(val) + 1e-300:
            raise ArithmeticError(f"quadrature did not converge: {val} +- {err}")
        out.append(val)
    return out


def bg_posterior_quadrature(r, phi, a, mu0, tau0):
    """Posterior mean, variance and nonzero probability of ``x`` given ``r = x + CN(0, phi)``
    under the prior ``(1 - a) delta(x) + a CN(x; mu0, tau0)``.

    The circular complex Gaussians factor into independent real and imaginary
    parts with variance ``phi / 2`` and ``tau0 / 2``, so each complex integral
    is a product of one-dimensional quadratures.  The slab moments are taken
    about ``r`` and combined with the spike by exact mixture algebra.
    """
    r, mu0 = complex(r), complex(mu0)
    I0r, I1r, I2r = _moments_1d(mu0.real, tau0 / 2, r.real, phi / 2, r.real)
    I0i, I1i, I2i = _moments_1d(mu0.imag, tau0 / 2, r.imag, phi / 2, r.imag)
    S0 = I0r * I0i
    slab_offset = complex(I1r / I0r, I1i / I0i)
    slab_mean = r + slab_offset
    slab_var = (I2r / I0r - (I1r / I0r) ** 2) + (I2i / I0i - (I1i / I0i) ** 2)
    spike = (1 - a) * _gauss(r.real, 0.0, phi / 2) * _gauss(r.imag, 0.0, phi / 2)
    pi = a * S0 / (spike + a * S0)
    mean = pi * slab_mean
    var = pi * slab_var + pi * (1 - pi) * abs(slab_mean) ** 2
    return mean, var, pi


def count_posterior_finite_sum(r, phi, a, ka_prior, dps=50):
    """Posterior mean/variance of an integer count under ``(1-a) delta_0 + a/K sum_s delta_s``.

    Evaluated as an explicit normalized sum over ``s = 0..K`` with the full
    complex likelihood ``CN(r; s, phi)``, in arbitrary precision so no weight
    underflows.
    """
    with mpmath.workdps(dps):
        r = mpmath.mpc(complex(r))
        phi = mpmath.mpf(phi)
        a = mpmath.mpf(a)
        w = []
        for s in range(ka_prior + 1):
            prior = (1 - a) if s == 0 else a / ka_prior
            w.append(prior * mpmath.exp(-abs(r - s) ** 2 / phi) / (mpmath.pi * phi))
        Z = mpmath.fsum(w)
        m1 = mpmath.fsum(s * ws for s, ws in enumerate(w)) / Z
        m2 = mpmath.fsum(s * s * ws for s, ws in enumerate(w)) / Z
        return float(m1), float(m2 - m1**2), float(1 - w[0] / Z)


def decouple_transcription(Y, P, x_hat, v_hat, V_prev, Z_prev, sigma2, tau):
    """Element-by-element factor/variable node updates for one block, with damping."""
    L, N = P.shape
    M = Y.shape[1]
    V = np.zeros((L, M))
    Z = np.zeros((L, M), dtype=complex)
    for l in range(L):
        for m in range(M):
            v_new = sum(abs(P[l, n]) ** 2 * v_hat[n, m] for n in range(N))
            z_new = sum(P[l, n] * x_hat[n, m] for n in range(N))
            z_new -= v_new * (Y[l, m] - Z_prev[l, m]) / (sigma2 + V_prev[l, m])
            V[l, m] = tau * V_prev[l, m] + (1 - tau) * v_new
            Z[l, m] = tau * Z_prev[l, m] + (1 - tau) * z_new
    phi = np.zeros((N, M))
    r = np.zeros((N, M), dtype=complex)
    for n in range(N):
        for m in range(M):
            phi[n, m] = 1.0 / sum(abs(P[l, n]) ** 2 / (sigma2 + V[l, m]) for l in range(L))
            corr = sum(np.conj(P[l, n]) * (Y[l, m] - Z[l, m]) / (sigma2 + V[l, m]) for l in range(L))
            r[n, m] = x_hat[n, m] + phi[n, m] * corr
    return V, Z, phi, r


def noise_var_transcription(Y, Z, V, sigma2):
    L, M = Y.shape
    total = 0.0
    for l in range(L):
        for m in range(M):
            total += abs(Y[l, m] - Z[l, m]) ** 2 / (1 + V[l, m] / sigma2) ** 2
            total += sigma2 * V[l, m] / (V[l, m] + sigma2)
    return total / (L * M)


def central_difference(f, w, h=1e-6):
    g = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def random_posterior_params(rng):
    """A draw of ``(r, phi, a, mu0, tau0)`` covering low and high SNR."""
    phi = 10 ** rng.uniform(-2, 1)
    tau0 = 10 ** rng.uniform(-2, 1)
    a = rng.uniform(0.01, 0.99)
    mu0 = complex(rng.normal(0, 1), rng.normal(0, 1))
    # r from the prior predictive: slab draws around mu0, spike draws around 0
    centre, spread = (mu0, tau0 + phi) if rng.uniform() < a else (0.0, phi)
    r = centre + math.sqrt(spread / 2) * complex(rng.normal(), rng.normal())
    return r, phi, a, mu0, tau0
