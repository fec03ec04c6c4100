"""The delta-perturbed generator ``A_mu = A + mu delta(x - a)``.

Its spectrum is ``(-inf, 0]`` plus the single eigenvalue ``nu > 0`` solving
``mu psi_nu(0) = 1``, with eigenfunction ``psi_nu(x - a)``.  The resolvent is
the free resolvent plus a rank-one correction, and the semigroup kernel is

    p_mu(t, x, y) = p0(t, x - y)
                    + e^{nu t} psi_nu(x - a) psi_nu(y - a) / ||psi_nu||^2
                    + (1/2 pi i) int_Gamma e^{lam t} psi_lam(x - a) psi_lam(y - a)
                                            / ((lam - nu) D(lam)) dlam

with ``D(lam) = (psi_nu, psi_{conj lam})``.  ``Gamma`` is any contour
separating ``nu`` (on its right) from ``(-inf, 0]`` (on its left).  The
vertical line ``Re lam = gamma`` is the textbook choice, but along it the
integrand decays only like ``1/|lam|`` when ``x = y = a``; the default here
is a left-opening hyperbola through ``gamma`` on which ``e^{lam t}`` decays
exponentially, so the trapezoid rule converges geometrically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    ConfigError,
    ContourTailTooFat,
    InvalidMu,
    LambdaAtEigenvalue,
    ValidationError,
)
from .grids import Atom, SampledFunction, Spectrum, merge_atoms
from .levy_models import LevyModel
from .quadrature import DEFAULT_QCFG, CosineRule, QuadratureConfig, heat_integral, resolvent_product_integral
from .spectral_core import (
    check_lambda,
    kink_corrected_convolution,
    nu_solve,
    psi_eval,
    psi_inner_product,
    psi_l1_norm,
    resolvent_free_apply,
)

EIGEN_GUARD = 1e-6
# points per distance band in kernel tables
BAND = 512


@dataclass(frozen=True)
class KernelValue:
    """A kernel evaluation with its estimated absolute error."""

    value: float
    est_error: float

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class DeltaPotential:
    """Strength ``mu`` and location ``a`` of the point attraction, with solved constants."""

    mu: float
    a: float
    nu: float
    psi_nu_at_0: float
    l2_norm_sq: float
    l1_norm: float
    model: LevyModel = field(repr=False, compare=False, default=None)

    @classmethod
    def solve(cls, model: LevyModel, mu: float, a: float = 0.0,
              cfg: QuadratureConfig = DEFAULT_QCFG) -> "DeltaPotential":
        if not (mu > 0 and math.isfinite(mu)):
            raise InvalidMu("mu must be positive and finite")
        if not math.isfinite(a):
            raise ValidationError("a must be finite")
        nu = nu_solve(model, mu, cfg)
        f0 = psi_eval(model, nu, 0.0, cfg).value.real
        l2 = psi_inner_product(model, nu, nu, cfg).real
        l1 = psi_l1_norm(model, nu, cfg)
        return cls(float(mu), float(a), nu, f0, l2, l1, model)

    def check_model(self, model: LevyModel):
        if self.model is not None and model != self.model:
            raise ValidationError("potential was solved for a different model")

    def psi_nu(self, x, cfg: QuadratureConfig = DEFAULT_QCFG):
        """``psi_nu(x - a)`` on an array of points."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        zs, inv = np.unique(np.abs(x - self.a), return_inverse=True)
        out = np.empty(zs.size)
        for lo in range(0, zs.size, BAND):
            rule = CosineRule(self.model, zs[lo:lo + BAND], self.nu, self.nu, cfg)
            out[lo:lo + BAND] = rule.psi([self.nu])[:, 0].real
        return out[inv.ravel()].reshape(x.shape)


@dataclass(frozen=True)
class ContourConfig:
    """Discretization of the inversion contour.

    Parameters
    ----------
    gamma : float, optional
        Abscissa where the contour crosses the real axis; must lie in
        ``(0, nu)``.  Defaults to ``nu / 2``.
    s_max : float, optional
        Truncation of the contour parameter.  Chosen from ``tail_tol`` when
        omitted.
    n_nodes : int, optional
        Trapezoid nodes on ``[0, s_max]``.  When omitted the node count is
        doubled from 32 until the sum converges to ``rel_tol``.
    tail_tol : float
        Bound on the integrand magnitude at the truncation point.
    rel_tol : float
        Convergence target of node doubling.
    shape : {"hyperbola", "line"}
        ``"line"`` is the vertical Bromwich line ``gamma + i s``.
    opening : float
        Hyperbola scale relative to ``gamma``.
    max_nodes : int
        Cap on the node count.
    """

    gamma: Optional[float] = None
    s_max: Optional[float] = None
    n_nodes: Optional[int] = None
    tail_tol: float = 1e-12
    rel_tol: float = 1e-10
    shape: str = "hyperbola"
    opening: float = 1.0
    max_nodes: int = 4096

    def __post_init__(self):
        if self.shape not in ("hyperbola", "line"):
            raise ConfigError(f"unknown contour shape {self.shape!r}")
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.s_max is not None and not self.s_max > 0:
            raise ConfigError("s_max must be positive")
        if self.n_nodes is not None and self.n_nodes < 2:
            raise ConfigError("n_nodes must be at least 2")
        if not (self.tail_tol > 0 and self.rel_tol > 0 and self.opening > 0):
            raise ConfigError("tolerances and opening must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ContourConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad contour config: {exc}") from None


DEFAULT_CCFG = ContourConfig()


# -- contour machinery --------------------------------------------------------


class Contour:
    """Parametrized contour ``lam(s)`` with its derivative, for one time ``t``."""

    def __init__(self, pot: DeltaPotential, t: float, ccfg: ContourConfig):
        nu = pot.nu
        gamma = ccfg.gamma if ccfg.gamma is not None else 0.5 * nu
        if not (0 < gamma < nu):
            raise ConfigError(f"gamma={gamma} outside (0, nu={nu})")
        self.gamma = gamma
        self.shape = ccfg.shape
        self.rho = ccfg.opening * gamma
        self.t = t
        if ccfg.s_max is not None:
            self.s_max = ccfg.s_max
        elif self.shape == "hyperbola":
            # Re lam(s_max) * t = log(tail_tol) - margin
            target = gamma - (math.log(ccfg.tail_tol) - 4.0) / t
            self.s_max = math.acosh(1.0 + target / self.rho)
        else:
            self.s_max = 400.0 / t

    def lam(self, s):
        s = np.asarray(s, dtype=float)
        if self.shape == "line":
            return self.gamma + 1j * s
        return self.gamma + self.rho * (1.0 - np.cosh(s)) + 1j * self.rho * np.sinh(s)

    def dlam(self, s):
        s = np.asarray(s, dtype=float)
        if self.shape == "line":
            return 1j * np.ones_like(s)
        return -self.rho * np.sinh(s) + 1j * self.rho * np.cosh(s)


def _distance_rule(model, zs, contour: Contour, nu, qcfg):
    lam_max = float(np.max(np.abs(contour.lam(np.array([0.0, contour.s_max])))))
    lam_max = max(lam_max, nu)
    lam_min = min(contour.gamma, nu) * 0.5
    return CosineRule(model, zs, lam_max, lam_min, qcfg)


def contour_integral(pot: DeltaPotential, model: LevyModel, t: float, zs, combine,
                     qcfg: QuadratureConfig, ccfg: ContourConfig, symmetric: bool = True):
    """``(1/2 pi i) int e^{lam t} [combine] dlam / ((lam - nu) D(lam))`` by the trapezoid rule.

    ``combine(table, fac, lam)`` receives the ``psi_lam(zs)`` table for a
    batch of nodes and the per-node complex factors (trapezoid weight times
    ``dlam/ds e^{lam t} / ((lam - nu) D(lam))``) and returns the partial sum.
    The node count is doubled until successive sums agree to ``rel_tol``;
    with a fixed ``n_nodes`` the last doubling serves as error estimate.

    With ``symmetric`` the Schwarz reflection ``conj(F(lam)) = F(conj lam)``
    halves the work and the result is real by construction; otherwise the
    whole contour is summed and the (numerically small) imaginary part is
    returned for inspection.

    Returns
    -------
    value, est_error, info : ndarray, ndarray, dict
    """
    nu = pot.nu
    contour = Contour(pot, t, ccfg)
    for _ in range(8):
        rule = _distance_rule(model, zs, contour, nu, qcfg)

        def node_sum(s, w):
            acc = 0.0
            for lo in range(0, len(s), 64):
                ss = s[lo:lo + 64]
                lam = contour.lam(ss)
                D, _ = resolvent_product_integral(model, nu, lam, qcfg)
                fac = w[lo:lo + 64] * contour.dlam(ss) * np.exp(lam * t) / ((lam - nu) * D)
                acc = acc + combine(rule.psi(lam), fac, lam)
            return acc

        s_max = contour.s_max
        # size of the integrand beyond s_max, integrated over the remaining tail
        end = np.abs(node_sum(np.array([s_max]), np.ones(1)))
        if contour.shape == "hyperbola":
            tail = end / (contour.rho * t * math.sinh(s_max))
        else:
            tail = end * s_max
        if np.max(tail) <= ccfg.tail_tol or ccfg.s_max is not None:
            break
        contour.s_max = s_max + 0.5 if contour.shape == "hyperbola" else 2.0 * s_max
    if np.max(tail) > ccfg.tail_tol:
        raise ContourTailTooFat(
            f"contour tail {np.max(tail):.3g} above tail_tol at s_max={contour.s_max:.4g}"
        )

    n = max(2, (ccfg.n_nodes or 64) // 2)
    h = s_max / n
    k = np.arange(-n if not symmetric else 0, n + 1)
    s = h * k
    w = np.ones(s.size)
    w[-1] = 0.5
    w[0] = 0.5
    S = h * node_sum(s, w)
    while True:
        mids = s[:-1] + 0.5 * h
        S_new = 0.5 * S + 0.5 * h * node_sum(mids, np.ones(mids.size))
        # only the imaginary part is meaningful on the half contour
        delta = np.abs((S_new - S).imag if symmetric else S_new - S)
        s = np.sort(np.concatenate([s, mids]))
        h *= 0.5
        S = S_new
        scale = max(float(np.max(np.abs(S.imag if symmetric else S))), 1.0)
        if ccfg.n_nodes is not None or np.max(delta) <= ccfg.rel_tol * scale:
            break
        if s.size > ccfg.max_nodes:
            raise ContourTailTooFat(
                f"contour sum not converged with {s.size} nodes (change {np.max(delta):.3g})"
            )
    if symmetric:
        value = S.imag / math.pi
        err = (delta + tail) / math.pi
    else:
        value = S / (2j * math.pi)
        err = (delta + tail) / (2 * math.pi)
    info = {"nodes": int(s.size), "s_max": float(s_max), "gamma": contour.gamma, "rule": rule}
    return value, err, info


def _split(points, a):
    u = np.atleast_1d(np.asarray(points, dtype=float)) - a
    zs, inv = np.unique(np.abs(u), return_inverse=True)
    return zs, inv.ravel()


def contour_kernel_term(pot, model, t, xs, ys, qcfg=DEFAULT_QCFG, ccfg=DEFAULT_CCFG, symmetric=True):
    """Contour part of ``p_mu(t, x, y)`` on the grid ``xs x ys``."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    zs, inv = _split(np.concatenate([xs, ys]), pot.a)
    ix, iy = inv[: xs.size], inv[xs.size:]

    def combine(tab, fac, lam):
        return (tab[ix] * fac[None, :]) @ tab[iy].T

    return contour_integral(pot, model, t, zs, combine, qcfg, ccfg, symmetric)


def z_mu_tail_vector(pot, model, t, xs, qcfg=DEFAULT_QCFG, ccfg=DEFAULT_CCFG, symmetric=True):
    """Contour part ``z_mu(t, x)`` of ``Z_mu(t, x)`` for an array of starting points.

    Uses ``int psi_lam(x' - a) dx' = 1/lam`` so only one profile per node
    is needed.
    """
    zs, inv = _split(xs, pot.a)

    def combine(tab, fac, lam):
        return tab[inv] @ (fac / lam)

    return contour_integral(pot, model, t, zs, combine, qcfg, ccfg, symmetric)


# -- public operations ----------------------------------------------------------


def _banded(fn, pts, a, axis):
    """Apply ``fn`` to bands of ``pts`` sorted by distance to ``a`` and reassemble.

    A quadrature rule serving every distance at once must resolve both the
    largest oscillation frequency and the smallest distance; bands keep
    each rule (and its node table) small.
    """
    order = np.argsort(np.abs(pts - a), kind="stable")
    vals, errs = [], []
    for lo in range(0, pts.size, BAND):
        v, e = fn(pts[order[lo:lo + BAND]])
        vals.append(v)
        errs.append(e)
    v = np.concatenate(vals, axis=axis)
    e = np.concatenate(errs, axis=axis)
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    return np.take(v, inv, axis=axis), np.take(e, inv, axis=axis)


def _check_t(t):
    if not (t > 0 and math.isfinite(t)):
        raise ValidationError("t must be positive (the kernel at t = 0 is a delta function)")


def p0_matrix(model, t, xs, ys, qcfg=DEFAULT_QCFG, chunk: int = 4096):
    """``p0(t, x - y)`` on the grid ``xs x ys`` and its error estimate."""
    d = np.subtract.outer(np.atleast_1d(xs), np.atleast_1d(ys))
    zs, inv = np.unique(np.abs(d).round(14), return_inverse=True)
    vals = np.empty(zs.size)
    errs = np.empty(zs.size)
    for lo in range(0, zs.size, chunk):
        v, e = heat_integral(model, t, zs[lo:lo + chunk], qcfg)
        vals[lo:lo + chunk] = v
        errs[lo:lo + chunk] = e
    return vals[inv].reshape(d.shape), errs[inv].reshape(d.shape)


def p_mu_matrix(pot: DeltaPotential, model: LevyModel, t: float, xs, ys,
                qcfg: QuadratureConfig = DEFAULT_QCFG, ccfg: ContourConfig = DEFAULT_CCFG):
    """``p_mu(t, x, y)`` on the grid ``xs x ys``; returns ``(values, est_errors)``."""
    pot.check_model(model)
    _check_t(t)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    if ys.size > BAND and ys.size >= xs.size:
        return _banded(lambda part: p_mu_matrix(pot, model, t, xs, part, qcfg, ccfg), ys, pot.a, 1)
    if xs.size > BAND:
        return _banded(lambda part: p_mu_matrix(pot, model, t, part, ys, qcfg, ccfg), xs, pot.a, 0)
    free, free_err = p0_matrix(model, t, xs, ys, qcfg)
    cont, cont_err, info = contour_kernel_term(pot, model, t, xs, ys, qcfg, ccfg)
    rule = info["rule"]
    zs, inv = _split(np.concatenate([xs, ys]), pot.a)
    pn, pn_err = rule.psi([pot.nu], with_error=True)
    pn = pn[:, 0].real[inv]
    pn_err = pn_err[:, 0][inv]
    px, py = pn[: xs.size], pn[xs.size:]
    gx, gy = pn_err[: xs.size], pn_err[xs.size:]
    growth = math.exp(pot.nu * t) / pot.l2_norm_sq
    rank_one = growth * np.outer(px, py)
    rank_err = growth * (np.outer(gx, np.abs(py)) + np.outer(np.abs(px), gy))
    return free + rank_one + cont, free_err + rank_err + cont_err


def p_mu_kernel(pot: DeltaPotential, model: LevyModel, t: float, x: float, y: float,
                qcfg: QuadratureConfig = DEFAULT_QCFG, ccfg: ContourConfig = DEFAULT_CCFG) -> KernelValue:
    """Semigroup kernel ``p_mu(t, x, y)`` of the delta-perturbed generator."""
    v, e = p_mu_matrix(pot, model, t, [x], [y], qcfg, ccfg)
    return KernelValue(float(v[0, 0]), float(e[0, 0]))


def z_mu_tail(pot: DeltaPotential, model: LevyModel, t: float, x: float,
              qcfg: QuadratureConfig = DEFAULT_QCFG, ccfg: ContourConfig = DEFAULT_CCFG) -> KernelValue:
    """``z_mu(t, x)``: the contour part of ``int p_mu(t, x, y) dy``."""
    pot.check_model(model)
    _check_t(t)
    v, e, _ = z_mu_tail_vector(pot, model, t, [x], qcfg, ccfg)
    return KernelValue(float(v[0]), float(e[0]))


def Z_mu_vector(pot: DeltaPotential, model: LevyModel, t: float, xs,
                qcfg: QuadratureConfig = DEFAULT_QCFG, ccfg: ContourConfig = DEFAULT_CCFG):
    """``Z_mu(t, x) = 1 + e^{nu t} psi_nu(x - a) / (nu ||psi_nu||^2) + z_mu(t, x)``."""
    pot.check_model(model)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if t == 0:
        return np.ones(xs.shape), np.zeros(xs.shape)
    _check_t(t)
    if xs.size > BAND:
        return _banded(lambda part: Z_mu_vector(pot, model, t, part, qcfg, ccfg), xs, pot.a, 0)
    tail, tail_err, info = z_mu_tail_vector(pot, model, t, xs, qcfg, ccfg)
    zs, inv = _split(xs, pot.a)
    pn, pn_err = info["rule"].psi([pot.nu], with_error=True)
    growth = math.exp(pot.nu * t) / (pot.nu * pot.l2_norm_sq)
    val = 1.0 + growth * pn[:, 0].real[inv] + tail
    return val, tail_err + growth * pn_err[:, 0][inv]


def Z_mu(pot: DeltaPotential, model: LevyModel, t: float, x: float,
         qcfg: QuadratureConfig = DEFAULT_QCFG, ccfg: ContourConfig = DEFAULT_CCFG) -> KernelValue:
    """``Z_mu(t, x) = E exp(mu L(t, x - a))``; equals 1 at ``t = 0``."""
    if t < 0:
        raise ValidationError("t must be nonnegative")
    v, e = Z_mu_vector(pot, model, t, [x], qcfg, ccfg)
    return KernelValue(float(v[0]), float(e[0]))


def rho_mu_matrix(pot, model, t, xs, ys, qcfg=DEFAULT_QCFG, ccfg=DEFAULT_CCFG):
    """h-transformed density ``e^{-nu t} p_mu(t,x,y) psi_nu(y-a) / psi_nu(x-a)`` on a grid."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    p, perr = p_mu_matrix(pot, model, t, xs, ys, qcfg, ccfg)
    hx = pot.psi_nu(xs, qcfg)
    hy = pot.psi_nu(ys, qcfg)
    fac = math.exp(-pot.nu * t) * np.outer(1.0 / hx, hy)
    return fac * p, fac * perr


def rho_mu(pot: DeltaPotential, model: LevyModel, t: float, x: float, y: float,
           qcfg: QuadratureConfig = DEFAULT_QCFG, ccfg: ContourConfig = DEFAULT_CCFG) -> KernelValue:
    """Transition density of the process attracted to ``a`` (Doob transform by ``psi_nu``)."""
    v, e = rho_mu_matrix(pot, model, t, [x], [y], qcfg, ccfg)
    return KernelValue(float(v[0, 0]), float(e[0, 0]))


def pi_nu_density(pot: DeltaPotential, x, cfg: QuadratureConfig = DEFAULT_QCFG):
    """Invariant density ``psi_nu(x - a)^2 / ||psi_nu||_2^2``."""
    x_arr = np.asarray(x, dtype=float)
    val = pot.psi_nu(x_arr, cfg) ** 2 / pot.l2_norm_sq
    return float(val[0]) if x_arr.ndim == 0 else val


def endpoint_tv_bound(pot: DeltaPotential, model: LevyModel, T: float, x: float,
                      qcfg: QuadratureConfig = DEFAULT_QCFG, ccfg: ContourConfig = DEFAULT_CCFG) -> float:
    """``2 (1 + z_mu(T, x)) / Z_mu(T, x)``, the closed-form L1 bound as usually quoted.

    Note that ``z_mu`` can be negative (it is for Brownian motion), in which
    case this expression is not an upper bound for the L1 distance; see
    :func:`endpoint_l1_bound` for a bound that keeps the absolute values.
    """
    _check_t(T)
    Zv, _ = Z_mu_vector(pot, model, T, [x], qcfg, ccfg)
    z, _, _ = z_mu_tail_vector(pot, model, T, [x], qcfg, ccfg)
    return float(2.0 * (1.0 + z[0]) / Zv[0])


def endpoint_l1_bound(pot: DeltaPotential, model: LevyModel, T: float, x: float, ys, weights,
                      qcfg: QuadratureConfig = DEFAULT_QCFG, ccfg: ContourConfig = DEFAULT_CCFG) -> float:
    """Triangle-inequality bound ``(1 + int |C(T,x,y)| dy + |1 + z_mu|) / Z_mu``.

    ``C`` is the contour part of the kernel; its absolute integral is taken
    with the caller's spatial rule ``(ys, weights)``.  Subtracting the limit
    density leaves ``p0 + C - nu psi_nu (1 + z_mu)``, whose three pieces have
    L1 norms ``1``, ``int |C|`` and ``|1 + z_mu|``.
    """
    _check_t(T)
    Zv, _ = Z_mu_vector(pot, model, T, [x], qcfg, ccfg)
    z, _, _ = z_mu_tail_vector(pot, model, T, [x], qcfg, ccfg)
    C, _, _ = contour_kernel_term(pot, model, T, [x], ys, qcfg, ccfg)
    absC = float(np.abs(C[0]) @ np.asarray(weights))
    return float((1.0 + absC + abs(1.0 + z[0])) / Zv[0])


# -- resolvent ------------------------------------------------------------------


def delta_generator_apply_spectrum(pot: DeltaPotential, model: LevyModel, u: SampledFunction,
                                   cfg: QuadratureConfig = DEFAULT_QCFG) -> Spectrum:
    """``-Psi(p) u_hat(p) + mu u(a) e^{ipa}`` with atoms kept exact."""
    pot.check_model(model)
    from .spectral_core import _tail_test

    grid = u.grid
    shat = grid.forward(u.values)
    smooth = -model.psi(grid.p) * shat
    _tail_test(grid, smooth, "Psi * u_hat", base=shat)
    atoms = [Atom("delta", pot.mu * u.value_at(model, pot.a, cfg), pot.a)]
    for a in u.atoms:
        if a.kind == "delta":
            raise ValidationError("u carries a point mass; A_mu u is undefined")
        atoms.append(Atom("delta", -a.coef, a.center))
        atoms.append(Atom("psi", a.coef * a.lam, a.center, a.lam))
    merged = merge_atoms(atoms)
    # cancellation of the point masses is exact in theory; drop roundoff residue
    scale = max([abs(a.coef) for a in atoms] + [1.0])
    merged = tuple(a for a in merged if not (a.kind == "delta" and abs(a.coef) < 1e-12 * scale))
    return Spectrum(grid, smooth, merged)


def perturbed_multiplier_apply(pot, model, lam, u: SampledFunction, cfg=DEFAULT_QCFG) -> SampledFunction:
    """``(A_mu - lam) u`` evaluated through the spectrum."""
    lam = check_lambda(lam)
    spec = delta_generator_apply_spectrum(pot, model, u, cfg)
    atoms = spec.atoms + tuple(Atom(a.kind, -lam * a.coef, a.center, a.lam) for a in u.atoms)
    out = Spectrum(spec.grid, spec.values - lam * spec.grid.forward(u.values), atoms)
    f = out.to_function()
    scale = max([abs(a.coef) for a in atoms] + [1.0])
    return SampledFunction(f.grid, f.values, tuple(a for a in f.atoms if abs(a.coef) > 1e-12 * scale))


def _pairing(pot, model, lam, f: SampledFunction, cfg):
    """``(f, psi_{conj lam}(. - a)) = int f(y) psi_lam(y - a) dy``."""
    grid = f.grid
    conv = kink_corrected_convolution(model, lam, grid, f.values, cfg)
    total = SampledFunction(grid, conv).smooth_at(pot.a)
    for at in f.atoms:
        if at.kind == "delta":
            total += at.coef * psi_eval(model, lam, at.center - pot.a, cfg).value
        elif at.center == pot.a:
            val, _ = resolvent_product_integral(model, at.lam, [lam], cfg)
            total += at.coef * complex(val[0])
        else:
            if abs(at.lam - lam) < 1e-9 * abs(lam):
                raise ValidationError("pairing of psi_lam atoms at distinct centers needs distinct lam")
            d = at.center - pot.a
            total += at.coef * (psi_eval(model, lam, d, cfg).value - psi_eval(model, at.lam, d, cfg).value) / (at.lam - lam)
    return total


def _check_off_spectrum(pot, lam):
    lam = check_lambda(lam)
    if abs(lam - pot.nu) < EIGEN_GUARD:
        raise LambdaAtEigenvalue(f"lambda={lam} is within {EIGEN_GUARD} of the eigenvalue nu={pot.nu}")
    return lam


def resolvent_mu_apply(pot: DeltaPotential, model: LevyModel, lam, f: SampledFunction,
                       cfg: QuadratureConfig = DEFAULT_QCFG) -> SampledFunction:
    """``(A_mu - lam)^{-1} f = (A - lam)^{-1} f + c psi_lam(. - a)``.

    ``c = (f, psi_{conj lam}(. - a)) / ((nu - lam) (psi_nu, psi_{conj lam}))``.
    """
    pot.check_model(model)
    lam = _check_off_spectrum(pot, lam)
    free = resolvent_free_apply(model, lam, f, cfg)
    D = psi_inner_product(model, pot.nu, lam, cfg)
    c = _pairing(pot, model, lam, f, cfg) / ((pot.nu - lam) * D)
    atoms = merge_atoms(free.atoms + (Atom("psi", c, pot.a, lam),))
    scale = max([abs(a.coef) for a in atoms] + [1.0])
    atoms = tuple(a for a in atoms if abs(a.coef) > 1e-13 * scale)
    return SampledFunction(f.grid, free.values, atoms)


def resolvent_mu_kernel(pot: DeltaPotential, model: LevyModel, lam, x: float, y: float,
                        cfg: QuadratureConfig = DEFAULT_QCFG) -> complex:
    """``r_mu(lam, x, y) = -psi_lam(x - y) + psi_lam(x - a) psi_lam(y - a) / ((nu - lam) D(lam))``."""
    pot.check_model(model)
    lam = _check_off_spectrum(pot, lam)
    zs = np.abs([x - y, x - pot.a, y - pot.a])
    rule = CosineRule(model, zs, max(abs(lam), pot.nu), min(abs(lam), pot.nu), cfg)
    tab = rule.psi([lam])[:, 0]
    D = psi_inner_product(model, pot.nu, lam, cfg)
    return complex(-tab[0] + tab[1] * tab[2] / ((pot.nu - lam) * D))


def resolvent_mu_kernel_matrix(pot, model, lam, xs, ys, cfg=DEFAULT_QCFG):
    """``r_mu(lam, x, y)`` on a grid."""
    lam = _check_off_spectrum(pot, lam)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    d = np.abs(np.subtract.outer(xs, ys)).round(14)
    zs_d, inv_d = np.unique(d, return_inverse=True)
    za, inv_a = _split(np.concatenate([xs, ys]), pot.a)
    zs = np.concatenate([zs_d, za])
    rule = CosineRule(model, zs, max(abs(lam), pot.nu), min(abs(lam), pot.nu), cfg)
    tab = rule.psi([lam])[:, 0]
    free = tab[: zs_d.size][inv_d.ravel()].reshape(d.shape)
    pa = tab[zs_d.size:][inv_a]
    px, py = pa[: xs.size], pa[xs.size:]
    D = psi_inner_product(model, pot.nu, lam, cfg)
    return -free + np.outer(px, py) / ((pot.nu - lam) * D)
