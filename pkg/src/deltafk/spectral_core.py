"""Fourier-side numerics for the free process.

``psi_lam(x) = (1/2pi) int e^{-ipx} / (Psi(p) + lam) dp`` is the profile of
the free resolvent kernel; at ``lam = nu`` it is the eigenfunction of the
delta-perturbed generator.  This module evaluates it, solves for ``nu``,
computes norms and inner products of the profiles, the free heat kernel,
and the grid actions of the generator and of the free resolvent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import (
    BracketFailure,
    InvalidLambda,
    InvalidMu,
    QuadratureDivergence,
    SpectrumTooHeavy,
    ValidationError,
)
from .grids import Atom, Grid, SampledFunction, Spectrum, merge_atoms
from .levy_models import LevyModel
from .quadrature import (
    DEFAULT_QCFG,
    CosineRule,
    QuadratureConfig,
    algebraic_tail,
    graded_breaks,
    heat_integral,
    heat_small_p,
    large_distance_terms,
    panel_nodes,
    resolvent_product_integral,
    resolvent_small_p,
    tail_integral,
)


@dataclass(frozen=True)
class PsiValue:
    """A quadrature result with its estimated absolute error."""

    value: complex
    est_error: float


def check_lambda(lam) -> complex:
    lam = complex(lam)
    if not (math.isfinite(lam.real) and math.isfinite(lam.imag)):
        raise InvalidLambda("lambda must be finite")
    if lam.imag == 0 and lam.real <= 0:
        raise InvalidLambda(f"lambda={lam.real} lies on the spectrum (-inf, 0]")
    return lam


def psi_eval(model: LevyModel, lam, x: float, cfg: QuadratureConfig = DEFAULT_QCFG) -> PsiValue:
    """``psi_lam(x)`` with adaptive panel order.

    The panel order is doubled until two successive values agree to
    ``rel_tol`` (relative to the value, or absolutely when the value is
    tiny).
    """
    lam = check_lambda(lam)
    mag = abs(lam)
    prev = None
    order = cfg.order
    for _ in range(cfg.max_doublings + 1):
        rule = CosineRule(model, [x], mag, mag, cfg, order=order)
        val, err = rule.psi([lam], with_error=True)
        v, e = complex(val[0, 0]), float(err[0, 0])
        if prev is not None:
            delta = abs(v - prev)
            if delta <= cfg.rel_tol * max(abs(v), 1e-3):
                return PsiValue(v, delta + 1e-15 * abs(v))
        elif e <= 0.1 * cfg.rel_tol * max(abs(v), 1e-3):
            # half-order estimate already certifies the result
            return PsiValue(v, e)
        prev = v
        order *= 2
    raise QuadratureDivergence(f"psi_eval did not reach rel_tol={cfg.rel_tol} at lam={lam}, x={x}")


def F_of_nu(model: LevyModel, nu: float, cfg: QuadratureConfig = DEFAULT_QCFG) -> float:
    """``F(nu) = psi_nu(0)``: positive and strictly decreasing in ``nu``."""
    if not nu > 0:
        raise InvalidLambda("nu must be positive")
    return psi_eval(model, nu, 0.0, cfg).value.real


def nu_solve(model: LevyModel, mu: float, cfg: QuadratureConfig = DEFAULT_QCFG) -> float:
    """The unique ``nu > 0`` with ``mu * F(nu) = 1``.

    ``F`` decreases from ``+inf`` to 0, so a sign change of
    ``log(mu F(nu))`` is bracketed on a logarithmic ``nu`` scale and refined
    with Brent's method.
    """
    if not (mu > 0 and math.isfinite(mu)):
        raise InvalidMu("mu must be positive and finite")

    def h(s):
        return math.log(mu * F_of_nu(model, math.exp(s), cfg))

    lo, hi = math.log(1e-6), math.log(1e6)
    hlo, hhi = h(lo), h(hi)
    while hlo < 0 and lo > math.log(1e-12):
        lo -= math.log(10.0)
        hlo = h(lo)
    while hhi > 0 and hi < math.log(1e12):
        hi += math.log(10.0)
        hhi = h(hi)
    if not (hlo > 0 > hhi):
        raise BracketFailure("no sign change of mu*F(nu) - 1 within [1e-12, 1e12]")
    s = brentq(h, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=200)
    nu = math.exp(s)
    resid = abs(mu * F_of_nu(model, nu, cfg) - 1.0)
    if resid > 10 * cfg.rel_tol:
        raise BracketFailure(f"root residual {resid:.3g} above 10*rel_tol")
    return nu


def stable_nu_closed_form(alpha: float, B: float, mu: float, integral: float) -> float:
    """``nu`` for the stable process given ``I = int_0^inf dtheta/(theta^alpha + 1)``."""
    return B ** (1.0 / (1.0 - alpha)) * (mu * integral / math.pi) ** (alpha / (alpha - 1.0))


def profile_points(model: LevyModel, lam_scale: float, order: int = 16, ratio: float = 1.4,
                   decay: float = 1e-3):
    """Gauss-Legendre nodes on ``[0, Y]`` adapted to ``psi_lam``-like profiles.

    Panels are graded towards 0 (cusp of the stable profile) and grow
    geometrically.  Beyond ``Y`` the profile is described by its far-field
    series: ``Psi(1/Y) = decay * lam_scale`` makes the algebraic series
    converge fast, and a Gaussian component (decaying like
    ``exp(-sqrt(2 lam / sigma2) y)``) is pushed below ``e^-40``.
    """
    knee = model.psi_inverse(lam_scale)
    Y = 1.0 / model.psi_inverse(decay * lam_scale)
    c2 = sum(c for c, e in model.terms if e == 2.0)
    if c2 > 0:
        Y = max(Y, 40.0 * math.sqrt(c2 / lam_scale))
    breaks = graded_breaks(1.0 / knee, Y, ratio, 1e-12 / knee)
    z, w = panel_nodes(breaks, order)
    return z, w, Y


def psi_l1_estimate(model: LevyModel, nu: float, cfg: QuadratureConfig = DEFAULT_QCFG) -> PsiValue:
    """``int psi_nu(x) dx`` by spatial quadrature with an analytic far-field tail."""
    if not nu > 0:
        raise InvalidLambda("nu must be positive")
    vals = {}
    for order in (cfg.order, cfg.order // 2):
        z, w, Y = profile_points(model, nu, order)
        rule = CosineRule(model, z, nu, nu, cfg)
        vals[order] = 2.0 * float(w @ rule.psi([nu])[:, 0].real)
    terms = large_distance_terms(resolvent_small_p(model, nu, 14.0))
    tail = 2.0 * tail_integral(terms, Y)
    tail_err = 2.0 * abs(tail_integral(terms[-1:], Y)) if terms else 0.0
    val = vals[cfg.order] + float(np.real(tail))
    return PsiValue(val, abs(vals[cfg.order] - vals[cfg.order // 2]) + tail_err + 1e-14 * abs(val))


def psi_l1_norm(model: LevyModel, nu: float, cfg: QuadratureConfig = DEFAULT_QCFG) -> float:
    """``||psi_nu||_1``; equals ``1/nu`` since the profile is positive."""
    return psi_l1_estimate(model, nu, cfg).value


def psi_inner_product(model: LevyModel, nu: float, lam, cfg: QuadratureConfig = DEFAULT_QCFG) -> complex:
    """``(psi_nu, psi_{conj lam}) = (1/2pi) int dp / ((Psi + nu)(Psi + lam))``."""
    if not nu > 0:
        raise InvalidLambda("nu must be positive")
    lam = check_lambda(lam)
    val, _ = resolvent_product_integral(model, nu, [lam], cfg)
    return complex(val[0])


def p0_estimate(model: LevyModel, t: float, z, cfg: QuadratureConfig = DEFAULT_QCFG):
    if not t > 0:
        raise ValidationError("t must be positive")
    return heat_integral(model, t, z, cfg)


def p0_kernel(model: LevyModel, t: float, x: float, y: float, cfg: QuadratureConfig = DEFAULT_QCFG) -> float:
    """Free transition density ``p0(t, x, y)``; depends on ``x - y`` only."""
    val, _ = p0_estimate(model, t, [x - y], cfg)
    return float(val[0])


def p0_far_field(model: LevyModel, t: float):
    """Algebraic far-field terms of ``p0(t, .)`` (empty for pure Brownian motion)."""
    return large_distance_terms(heat_small_p(model, t, 14.0))


def p0_mass(model: LevyModel, t: float, cfg: QuadratureConfig = DEFAULT_QCFG) -> float:
    """``int p0(t, 0, y) dy`` by spatial quadrature with an analytic far-field tail."""
    z, w, Y = profile_points(model, 1.0 / t, cfg.order)
    val, _ = p0_estimate(model, t, z, cfg)
    return 2.0 * float(w @ val) + 2.0 * float(np.real(tail_integral(p0_far_field(model, t), Y)))


# -- grid operators -----------------------------------------------------------


NOISE_FLOOR = 1e-11


def _tail_test(grid: Grid, spectrum, what: str, rel: float = 1e-7, base=None):
    """Raise unless the top decile of frequencies carries a negligible share of ``|spectrum|``.

    Modes where ``|base|`` (the spectrum before weighting) sits below
    ``NOISE_FLOOR`` times its peak are rounding noise, not missing resolution,
    and are left out of the share.
    """
    a = np.abs(spectrum)
    p = np.abs(grid.p)
    if base is not None:
        b = np.abs(base)
        a = np.where(b > NOISE_FLOOR * b.max(), a, 0.0)
    total = a.sum()
    if total > 0 and a[p >= 0.9 * p.max()].sum() > rel * total:
        raise SpectrumTooHeavy(f"{what} is not resolved by the grid (heavy spectral tail)")


def generator_apply(model: LevyModel, f_hat: Spectrum, cfg: QuadratureConfig = DEFAULT_QCFG) -> SampledFunction:
    """``A f``: inverse transform of ``-Psi(p) f_hat(p)``.

    Atoms are handled exactly: ``-Psi e^{ipc}/(Psi + lam) = -e^{ipc} + lam e^{ipc}/(Psi + lam)``.
    """
    p = f_hat.grid.p
    smooth = -model.psi(p) * f_hat.values
    _tail_test(f_hat.grid, smooth, "Psi * f_hat", base=f_hat.values)
    atoms = []
    for a in f_hat.atoms:
        if a.kind == "delta":
            raise SpectrumTooHeavy("the generator of a point mass is not a function")
        atoms.append(Atom("delta", -a.coef, a.center))
        atoms.append(Atom("psi", a.coef * a.lam, a.center, a.lam))
    return Spectrum(f_hat.grid, smooth, tuple(atoms)).to_function()


def spectral_divide(model: LevyModel, lam, f: SampledFunction) -> SampledFunction:
    """``(A - lam)^{-1} f`` by pointwise division of the grid spectrum (reference route)."""
    lam = check_lambda(lam)
    grid = f.grid
    shat = grid.forward(f.values)
    out = -shat / (model.psi(grid.p) + lam)
    return SampledFunction(grid, grid.inverse(out), _resolve_atoms(lam, f.atoms))


def _resolve_atoms(lam, atoms):
    """Free resolvent of atoms in closed form.

    ``-psi_lam * psi_k = -(psi_lam - psi_k)/(k - lam)`` and
    ``-psi_lam * delta = -psi_lam``.
    """
    out = []
    for a in atoms:
        if a.kind == "delta":
            out.append(Atom("psi", -a.coef, a.center, lam))
            continue
        if abs(a.lam - lam) < 1e-12 * max(1.0, abs(lam)):
            raise ValidationError("resolvent of psi_lam at the same lam is not an atom")
        c = a.coef / (a.lam - lam)
        out.append(Atom("psi", -c, a.center, lam))
        out.append(Atom("psi", c, a.center, a.lam))
    return merge_atoms(out)


def kink_corrected_convolution(model: LevyModel, lam, grid: Grid, values, cfg: QuadratureConfig = DEFAULT_QCFG):
    """``int psi_lam(x - y) s(y) dy`` on the grid for a smooth ``s``.

    Trapezoid sums with the difference table ``psi_lam(k h)``.  The kink or
    cusp of ``psi_lam`` at 0 spoils the trapezoid rule only through the
    diagonal term, so ``s(x) E_h`` is subtracted, where
    ``E_h = h sum_k psi_lam(k h) - 1/lam`` is the same rule's error on
    ``int psi_lam = 1/lam``.
    """
    lam = check_lambda(lam)
    n = grid.n
    h = grid.h
    # one difference table serves the convolution and the diagonal correction
    m = n
    k = np.arange(m + 1)
    rule = CosineRule(model, h * k, abs(lam), abs(lam), cfg)
    tab = rule.psi([lam])[:, 0]
    far = tail_integral(large_distance_terms(resolvent_small_p(model, lam)), m * h)
    trap = h * (tab[0] + 2.0 * np.sum(tab[1:m]) + tab[m])
    E_h = trap - (1.0 / lam - 2.0 * far)
    kern = np.concatenate([tab[n - 1:0:-1], tab[: n]])
    L = 2 * n - 1
    nfft = 1 << int(np.ceil(np.log2(L + n)))
    conv = np.fft.ifft(np.fft.fft(kern, nfft) * np.fft.fft(np.asarray(values, dtype=complex), nfft))
    conv = conv[n - 1: 2 * n - 1]
    return h * conv - E_h * np.asarray(values)


def resolvent_free_apply(model: LevyModel, lam, f: SampledFunction,
                         cfg: QuadratureConfig = DEFAULT_QCFG) -> SampledFunction:
    """``(A - lam)^{-1} f = -int psi_lam(x - y) f(y) dy``.

    The smooth part is convolved in real space (:func:`kink_corrected_convolution`);
    atoms are resolved in closed form.
    """
    lam = check_lambda(lam)
    vals = -kink_corrected_convolution(model, lam, f.grid, f.values, cfg)
    return SampledFunction(f.grid, vals, _resolve_atoms(lam, f.atoms))


def resolvent_multiplier_apply(model: LevyModel, lam, u: SampledFunction) -> SampledFunction:
    """``(A - lam) u`` via the Fourier multiplier ``-Psi - lam``."""
    lam = check_lambda(lam)
    out = generator_apply(model, u.spectrum(model))
    return SampledFunction(u.grid, out.values - lam * u.values,
                           merge_atoms(out.atoms + tuple(a for a in u.scaled(-lam).atoms), 1e-300))


def lemma21_bound_check(model: LevyModel, u: SampledFunction, beta: float, kappa: float,
                        cfg: QuadratureConfig = DEFAULT_QCFG):
    """Pointwise bound ``max|u|^2 <= C_{beta,kappa} (||(-A)^beta u||^2 + kappa ||u||^2)``.

    ``C_{beta,kappa} = (1/2pi) int dp / (kappa + Psi^{2 beta})``.  Norms are
    computed on the Fourier side (Plancherel); atoms contribute exactly,
    including their spectra beyond the grid band.

    Returns
    -------
    (lhs, rhs) : tuple of float
    """
    if beta < 0.5 or kappa <= 0:
        raise ValidationError("need beta >= 1/2 and kappa > 0")
    if u.deltas:
        raise SpectrumTooHeavy("point masses have no finite weighted norm")
    grid = u.grid
    e0 = model.leading_term()[1]
    if any(a.kind == "psi" for a in u.atoms) and 2 * beta * e0 - 2 * e0 >= -1:
        raise SpectrumTooHeavy(
            "Psi^(2 beta) |u_hat|^2 is not integrable for this beta (atoms decay too slowly)"
        )
    spec = u.spectrum(model)
    full = spec.full(model)
    _tail_test(grid, spec.values, "smooth part of u")
    psi_p = model.psi(grid.p)
    weight = kappa + psi_p ** (2 * beta)
    band = float(np.sum(weight * np.abs(full) ** 2) * grid.dp / (2 * np.pi))
    # atoms beyond the band edge
    P = float(np.max(np.abs(grid.p)))
    tail = 0.0
    psi_atoms = [a for a in u.atoms if a.kind == "psi"]
    if psi_atoms:
        if len({a.center for a in psi_atoms}) > 1:
            raise ValidationError("atoms at several centers are not supported here")

        def h(p):
            s = sum(a.coef / (model.psi(p) + a.lam) for a in psi_atoms)
            return (kappa + model.psi(p) ** (2 * beta)) * np.abs(s) ** 2

        q = 2 * e0 - 2 * beta * e0
        val, _ = algebraic_tail(h, P, q)
        tail = float(val) / np.pi
    norm = band + tail

    def c_int(p):
        return 1.0 / (kappa + model.psi(p) ** (2 * beta))

    knee = model.psi_inverse(kappa ** (1.0 / (2 * beta)))
    breaks = graded_breaks(knee, 12 * knee, 1.35, 1e-13 * knee)
    pn, wn = panel_nodes(breaks, cfg.order)
    cval = float(wn @ c_int(pn))
    ctail, _ = algebraic_tail(c_int, 12 * knee, 2 * beta * e0)
    C = (cval + float(ctail)) / np.pi
    if psi_atoms:
        samples = u.sample(model, cfg)
    else:
        samples = u.values
    lhs = float(np.max(np.abs(samples)) ** 2)
    return lhs, C * norm
