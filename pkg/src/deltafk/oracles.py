"""Closed forms for standard Brownian motion (``sigma2 = 1``).

They come from elementary identities independent of the Fourier and
contour machinery: the residue evaluation of ``psi_lam``, the law of local
time at 0 (``L(t, 0)`` has the law of ``|B_t|``), and the reflection
principle for the joint law of position and local time.  Used as reference
values by the ``verify`` suite and the tests.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr
from scipy.integrate import quad


def psi_brownian(lam, x):
    """``psi_lam(x) = exp(-sqrt(2 lam) |x|) / sqrt(2 lam)`` (principal square root)."""
    r = np.sqrt(2.0 * np.asarray(lam, dtype=complex))
    val = np.exp(-r * np.abs(np.asarray(x, dtype=float))) / r
    return val.real if np.all(np.isreal(lam)) else val


def nu_brownian(mu: float) -> float:
    return 0.5 * mu * mu


def heat_brownian(t: float, z):
    z = np.asarray(z, dtype=float)
    return np.exp(-z * z / (2.0 * t)) / math.sqrt(2.0 * math.pi * t)


def Z_brownian(mu: float, t: float, x: float = 0.0, a: float = 0.0) -> float:
    """``E exp(mu L(t, x - a))``.

    At ``x = a`` this is ``2 exp(mu^2 t / 2) Phi(mu sqrt t)``; otherwise the
    first passage to ``a`` is integrated out numerically.
    """
    d = abs(x - a)
    if d == 0:
        return 2.0 * math.exp(0.5 * mu * mu * t) * ndtr(mu * math.sqrt(t))
    return _Z_by_quadrature(mu, t, d)


def _Z_by_quadrature(mu: float, t: float, d: float) -> float:
    # first-passage density of level d, then the x = a formula for the remaining time
    def integrand(tau):
        dens = d / math.sqrt(2.0 * math.pi * tau**3) * math.exp(-d * d / (2.0 * tau))
        rem = t - tau
        return dens * 2.0 * math.exp(0.5 * mu * mu * rem) * ndtr(mu * math.sqrt(rem))

    hit, _ = quad(integrand, 0.0, t, epsabs=1e-14, epsrel=1e-13, limit=200)
    miss = 1.0 - 2.0 * ndtr(-d / math.sqrt(t))
    return miss + hit


def p_mu_brownian(mu: float, t: float, x, y, a: float = 0.0):
    """Kernel of ``exp(t A_mu)``:
    ``N(x - y; t) + mu exp(mu^2 t / 2 - mu z) Phi((mu t - z) / sqrt t)``, ``z = |x-a| + |y-a|``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.abs(x - a) + np.abs(y - a)
    s = math.sqrt(t)
    return heat_brownian(t, x - y) + mu * np.exp(0.5 * mu * mu * t - mu * z) * ndtr((mu * t - z) / s)


def pi_brownian(mu: float, x, a: float = 0.0):
    """Invariant density ``mu exp(-2 mu |x - a|)``."""
    return mu * np.exp(-2.0 * mu * np.abs(np.asarray(x, dtype=float) - a))


def abs_gaussian_mean(t: float) -> float:
    """``E |B_t| = sqrt(2 t / pi)``, also ``E L(t, 0)``."""
    return math.sqrt(2.0 * t / math.pi)
