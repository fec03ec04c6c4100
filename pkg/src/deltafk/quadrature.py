"""Quadrature engine for Fourier integrals of symmetric Lévy symbols.

Every spectral quantity in the package reduces to one of

    (1/pi) int_0^inf cos(p z) g(p) dp          (oscillatory, z > 0)
    (1/pi) int_0^inf g(p) dp                   (z = 0)

with ``g`` built from ``1 / (Psi(p) + lam)`` and ``exp(-t Psi(p))``.  The
integrals are split at a cutoff ``P``:

* ``[0, P]``: composite Gauss-Legendre panels.  Panels are graded
  geometrically towards ``p = 0`` (where ``|p|**alpha`` has a cusp) and
  around the knee ``Psi(p) ~ |lam|``, and are never wider than one period of
  ``cos(p z)``.
* ``[P, inf)`` with ``z > 0``: an asymptotic integration-by-parts expansion
  whose derivatives of ``g`` are exact.  ``P`` is chosen per ``z`` so that
  ``P z >= K`` and the expansion converges fast.
* ``[P, inf)`` with ``z = 0``: the algebraic change of variables
  ``p = P s**(-1/(q-1))`` maps the tail to ``(0, 1]`` where the integrand is
  bounded; it is then integrated with graded panels.

Error estimates come from comparing the panel rule with its half-order
sibling on the same panels, plus the magnitude of the last retained
integration-by-parts term.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

from .errors import QuadratureDivergence
from .levy_models import LevyModel


@lru_cache(maxsize=None)
def gauss_legendre(n: int):
    """Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def panel_nodes(breaks, order: int):
    """Nodes and weights of composite Gauss-Legendre over consecutive ``breaks``."""
    breaks = np.asarray(breaks, dtype=float)
    x, w = gauss_legendre(order)
    lo = breaks[:-1, None]
    half = 0.5 * np.diff(breaks)[:, None]
    nodes = lo + half * (x[None, :] + 1.0)
    weights = half * w[None, :]
    return nodes.ravel(), weights.ravel()


def graded_breaks(lo: float, hi: float, ratio: float, floor: float):
    """Breakpoints ``0, floor, ..., hi`` growing geometrically from ``floor``.

    The first panel ``[0, floor]`` absorbs the region below ``floor``; the
    remaining breakpoints between ``floor`` and ``lo`` grow by ``ratio`` and
    the stretch ``[lo, hi]`` is split with the same ratio.
    """
    pts = [0.0]
    p = floor
    while p < hi:
        pts.append(p)
        p *= ratio
    pts.append(hi)
    return np.unique(np.asarray(pts))


def limit_width(breaks, width: float):
    """Subdivide panels so none is wider than ``width``."""
    out = [breaks[0]]
    for a, b in zip(breaks[:-1], breaks[1:]):
        k = max(1, int(np.ceil((b - a) / width - 1e-12)))
        out.extend(a + (b - a) * np.arange(1, k + 1) / k)
    return np.asarray(out)


def spatial_rule(centers, scale: float, half_width: float, order: int = 16,
                 ratio: float = 1.5, floor: float = 1e-10, max_width: float = None):
    """Composite Gauss-Legendre rule on a finite stretch of the line.

    Panels are graded geometrically towards every point of ``centers`` (where
    integrands have kinks or cusps), starting at ``floor * scale`` and growing
    by ``ratio`` out to ``half_width``.  The domain is
    ``[min(centers) - half_width, max(centers) + half_width]``.
    """
    centers = np.unique(np.asarray(centers, dtype=float))
    lo, hi = centers[0] - half_width, centers[-1] + half_width
    one_side = graded_breaks(scale, half_width, ratio, floor * scale)[1:]
    pts = [lo, hi]
    for c in centers:
        pts.extend([c, *(c + one_side), *(c - one_side)])
    pts = np.unique(np.clip(np.asarray(pts), lo, hi))
    if max_width is not None:
        pts = limit_width(pts, max_width)
    return panel_nodes(pts, order)


@dataclass(frozen=True)
class QuadratureConfig:
    """Controls for the frequency-side quadrature.

    Parameters
    ----------
    p_max : float
        Lower bound for the end of the explicitly integrated frequency
        range.  The engine raises it to a safe multiple of the knee
        ``Psi^{-1}(|lam|)`` when needed.
    n_nodes : int
        Minimum number of explicit quadrature nodes.
    tail_tol : float
        Largest admissible estimate of the neglected tail remainder.
    rel_tol : float
        Target relative accuracy of adaptive refinement.
    order : int
        Gauss-Legendre points per panel.
    knee_factor : float
        Explicit range extends to at least ``knee_factor`` knees.
    osc_k : float
        Minimum ``P z`` before the oscillatory tail expansion is used.
    max_doublings : int
        Panel-order doublings allowed in adaptive scalar evaluation.
    """

    p_max: float = 1.0
    n_nodes: int = 64
    tail_tol: float = 1e-11
    rel_tol: float = 1e-10
    order: int = 16
    knee_factor: float = 12.0
    osc_k: float = 100.0
    max_doublings: int = 3

    def __post_init__(self):
        from .errors import ConfigError

        if not (self.p_max > 0):
            raise ConfigError("p_max must be positive")
        if self.n_nodes < 64:
            raise ConfigError("n_nodes must be at least 64")
        if not (self.tail_tol > 0 and self.rel_tol > 0):
            raise ConfigError("tolerances must be positive")
        if self.order < 4 or self.order % 2:
            raise ConfigError("order must be an even integer >= 4")

    @classmethod
    def from_dict(cls, d: dict) -> "QuadratureConfig":
        from .errors import ConfigError

        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad quadrature config: {exc}") from None


DEFAULT_QCFG = QuadratureConfig()

# ratio between the largest explicit oscillatory cutoff and P_A
CUSP_SPAN = 1e8


def _has_cusp(model: LevyModel) -> bool:
    return any(abs(e - round(e)) > 1e-12 or round(e) % 2 for _, e in model.terms)


def resolvent_derivatives(model: LevyModel, p: float, lam, n: int):
    """Derivatives ``g^{(k)}(p)``, k = 0..n, of ``g = 1/(Psi + lam)`` at ``p > 0``.

    From ``g (Psi + lam) = 1`` and Leibniz' rule,
    ``g^{(k)} = -(1/(Psi+lam)) sum_{j<k} C(k, j) g^{(j)} Psi^{(k-j)}``.
    ``lam`` may be an array; the result has shape ``(n + 1,) + lam.shape``.
    """
    lam = np.asarray(lam, dtype=complex)
    dpsi = [float(model.psi(p))] + [float(model.psi_derivative(p, k)) for k in range(1, n + 1)]
    den = dpsi[0] + lam
    out = np.empty((n + 1,) + lam.shape, dtype=complex)
    out[0] = 1.0 / den
    for k in range(1, n + 1):
        acc = np.zeros(lam.shape, dtype=complex)
        for j in range(k):
            acc += comb(k, j) * out[j] * dpsi[k - j]
        out[k] = -acc / den
    return out


def oscillatory_tail(derivs, P: float, z: float, tol: float):
    """``int_P^inf cos(p z) g(p) dp`` from derivatives of ``g`` at ``P``.

    Uses ``int_P^inf e^{i p z} g = -e^{i P z} sum_k (-1)^k g^{(k)}(P) / (i z)^{k+1}``
    for both signs of ``z``; the series is asymptotic in ``1/(P z)`` and is
    stopped at its smallest term.  Returns ``(value, remainder_estimate)``.
    """
    n = derivs.shape[0]
    val = np.zeros(derivs.shape[1:], dtype=complex)
    err = np.full(derivs.shape[1:], np.inf)
    plus = np.zeros_like(val)
    minus = np.zeros_like(val)
    prev = np.full(derivs.shape[1:], np.inf)
    active = np.ones(derivs.shape[1:], dtype=bool)
    for k in range(n):
        tp = -((-1) ** k) * derivs[k] / (1j * z) ** (k + 1)
        tm = -((-1) ** k) * derivs[k] / (-1j * z) ** (k + 1)
        size = np.abs(derivs[k]) / z ** (k + 1)
        grow = size > prev
        active &= ~grow
        plus = np.where(active, plus + tp, plus)
        minus = np.where(active, minus + tm, minus)
        err = np.where(active, size, err)
        prev = np.where(active, size, prev)
        if not active.any() or np.all(size < tol * 1e-3):
            break
    val = 0.5 * (np.exp(1j * P * z) * plus + np.exp(-1j * P * z) * minus)
    return val, err


def algebraic_tail(h, P: float, q: float, order: int = 16, depth: int = 44):
    """``int_P^inf h(p) dp`` for ``h`` decaying like ``p**(-q)`` with ``q > 1``.

    Substitutes ``p = P s**(-1/(q-1))``; the transformed integrand is bounded
    on ``(0, 1]`` with at most algebraic cusps at ``s = 0``, which are
    resolved by dyadic grading.  ``h`` maps a 1-d array of ``p`` to an array
    whose leading axis matches.  Returns ``(value, error_estimate)``.
    """
    r = 1.0 / (q - 1.0)
    breaks = np.concatenate([[0.0], 2.0 ** -np.arange(depth, -1, -1)])

    def rule(n):
        s, w = panel_nodes(breaks, n)
        p = P * s ** (-r)
        jac = P * r * s ** (-r - 1.0)
        vals = h(p)
        wj = (w * jac).reshape((-1,) + (1,) * (np.ndim(vals) - 1))
        return np.sum(wj * vals, axis=0)

    fine = rule(order)
    coarse = rule(order // 2)
    return fine, np.abs(fine - coarse)


class CosineRule:
    """Vectorized evaluator of ``(1/pi) int_0^inf cos(p z) g_lam(p) dp``.

    Built once for a set of distances ``z`` and an upper bound on ``|lam|``;
    then :meth:`psi` returns the whole ``(n_z, n_lam)`` table of
    ``psi_lam(z)`` for any batch of ``lam`` below the bound.

    Parameters
    ----------
    model : LevyModel
    z : array_like
        Distances (absolute values are used).
    lam_bound : float
        Upper bound on ``|lam|`` for all later evaluations.
    lam_floor : float
        Lower bound on ``|lam|``; sets the finest frequency scale.
    cfg : QuadratureConfig
    """

    def __init__(self, model: LevyModel, z, lam_bound: float, lam_floor: float,
                 cfg: QuadratureConfig = DEFAULT_QCFG, order: int | None = None):
        self.model = model
        self.cfg = cfg
        self.order = order or cfg.order
        z = np.abs(np.asarray(z, dtype=float)).ravel()
        lam_bound = max(float(lam_bound), float(lam_floor))
        knee_hi = model.psi_inverse(lam_bound)
        knee_lo = model.psi_inverse(lam_floor)
        self.P_A = max(cfg.p_max, cfg.knee_factor * knee_hi)
        # below z_floor the oscillatory range would be astronomically long;
        # such distances use the leading cusp law between 0 and z_floor
        self.z_requested = z
        self.z_floor = cfg.osc_k / (CUSP_SPAN * self.P_A)
        self.tiny = (z > 0) & (z < self.z_floor)
        if self.tiny.any():
            z = np.concatenate([np.where(self.tiny, self.z_floor, z), [0.0]])
        self.z = z
        zpos = self.z[self.z > 0]
        zmax = zpos.max() if zpos.size else 0.0
        zmin = zpos.min() if zpos.size else np.inf

        floor = knee_lo * (1e-13 if _has_cusp(model) else 1e-3)
        breaks = graded_breaks(knee_lo, self.P_A, 1.5 if _has_cusp(model) else 1.35, floor)
        # the finest part of the grading needs no extra panels beyond a couple of decades
        if zmax > 0:
            breaks = limit_width(breaks, 2.0 * np.pi / zmax)
        while (len(breaks) - 1) * self.order < cfg.n_nodes:
            breaks = np.sort(np.concatenate([breaks, 0.5 * (breaks[1:] + breaks[:-1])]))
        region2 = [self.P_A]
        if zpos.size:
            p_end = max(self.P_A, cfg.osc_k / zmin)
            ratio = 1.0 + 2.0 * np.pi / cfg.osc_k
            while region2[-1] < p_end:
                region2.append(region2[-1] * ratio)
        self.breaks = np.concatenate([breaks, np.asarray(region2[1:])])
        self.n_explicit = len(breaks)

        # per-z cutoff: smallest breakpoint >= max(P_A, K/z)
        cut = np.empty(self.z.shape)
        idx = np.empty(self.z.shape, dtype=int)
        for i, zi in enumerate(self.z):
            target = self.P_A if zi == 0 else max(self.P_A, cfg.osc_k / zi)
            j = int(np.searchsorted(self.breaks, target * (1 - 1e-12)))
            j = min(j, len(self.breaks) - 1)
            idx[i] = j
            cut[i] = self.breaks[j]
        self.cut = cut
        self.cut_index = idx
        self._build_weights()

    def _build_weights(self):
        n_panels = len(self.breaks) - 1
        self.mats = {}
        for n in (self.order, self.order // 2):
            p, w = panel_nodes(self.breaks, n)
            panel = np.repeat(np.arange(n_panels), n)
            live = panel[None, :] < self.cut_index[:, None]
            W = np.where(live, w[None, :] * np.cos(np.outer(self.z, p)), 0.0)
            self.mats[n] = (p, W)
        self.nodes = self.mats[self.order][0]

    def g_matrix(self, p, lam):
        return 1.0 / (self.model.psi(p)[:, None] + np.asarray(lam, dtype=complex)[None, :])

    def psi(self, lam, with_error: bool = False):
        """Table ``psi_lam(z)`` of shape ``(n_z, n_lam)``.

        With ``with_error`` the half-order rule is evaluated too and an
        ``(values, error_estimate)`` pair is returned.
        """
        lam = np.atleast_1d(np.asarray(lam, dtype=complex))
        out = self._rows(lam, with_error)
        if not self.tiny.any():
            return out
        val, err = out if with_error else (out, None)
        at0, val = val[-1], val[:-1]
        e0 = self.model.leading_term()[1]
        s = (self.z_requested[self.tiny] / self.z_floor) ** (e0 - 1.0)
        val[self.tiny] = at0 + (val[self.tiny] - at0) * s[:, None]
        if not with_error:
            return val
        err0, err = err[-1], err[:-1]
        err[self.tiny] = np.maximum(err[self.tiny], err0)
        return val, err

    def _rows(self, lam, with_error):
        p, W = self.mats[self.order]
        fine = W @ self.g_matrix(p, lam)
        tail, tail_err = self._tails(lam)
        if np.any(tail_err / np.pi > self.cfg.tail_tol):
            raise QuadratureDivergence(
                f"tail remainder {np.max(tail_err) / np.pi:.3g} above tail_tol {self.cfg.tail_tol:.3g}"
            )
        val = (fine + tail) / np.pi
        if not with_error:
            return val
        pc, Wc = self.mats[self.order // 2]
        coarse = Wc @ self.g_matrix(pc, lam)
        err = (np.abs(fine - coarse) + tail_err) / np.pi + 1e-15 * np.abs(val)
        return val, err

    def _tails(self, lam):
        tail = np.zeros((self.z.size, lam.size), dtype=complex)
        err = np.zeros((self.z.size, lam.size))
        zero = self.z == 0
        if zero.any():
            q = self.model.leading_term()[1]
            model = self.model

            def h(p):
                return 1.0 / (model.psi(p)[:, None] + lam[None, :])

            v, e = algebraic_tail(h, self.P_A, q)
            tail[zero] = v
            err[zero] = e
        for P in np.unique(self.cut[~zero]):
            rows = np.nonzero((self.cut == P) & ~zero)[0]
            derivs = resolvent_derivatives(self.model, P, lam, 14)
            for i in rows:
                v, e = oscillatory_tail(derivs, P, self.z[i], self.cfg.tail_tol)
                tail[i] = v
                err[i] = e
        return tail, err


def psi_table(model: LevyModel, z, lam, cfg: QuadratureConfig = DEFAULT_QCFG, with_error=False,
              band: int = 512):
    """Convenience wrapper: ``psi_lam(z)`` table for arrays ``z`` and ``lam``.

    Distances are processed in bands of ``band`` sorted values, which keeps
    each rule's node table small.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=complex))
    mags = np.abs(lam)
    zs, inv = np.unique(np.abs(np.asarray(z, dtype=float)).ravel(), return_inverse=True)
    vals = np.empty((zs.size, lam.size), dtype=complex)
    errs = np.empty((zs.size, lam.size))
    for lo in range(0, zs.size, band):
        rule = CosineRule(model, zs[lo:lo + band], mags.max(), max(mags.min(), 1e-300), cfg)
        out = rule.psi(lam, with_error=True)
        vals[lo:lo + band], errs[lo:lo + band] = out
    inv = inv.ravel()
    return (vals[inv], errs[inv]) if with_error else vals[inv]


def resolvent_product_integral(model: LevyModel, kappa, lam, cfg: QuadratureConfig = DEFAULT_QCFG):
    """``(1/pi) int_0^inf dp / ((Psi + kappa)(Psi + lam))`` for arrays ``lam``.

    ``kappa`` is a scalar.  Returns ``(value, error_estimate)`` arrays.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=complex))
    kappa = complex(kappa)
    mags = np.concatenate([np.abs(lam), [abs(kappa)]])
    knee_hi = model.psi_inverse(mags.max())
    knee_lo = model.psi_inverse(max(mags.min(), 1e-300))
    P = max(cfg.p_max, cfg.knee_factor * knee_hi)
    floor = knee_lo * (1e-13 if _has_cusp(model) else 1e-3)
    breaks = graded_breaks(knee_lo, P, 1.5 if _has_cusp(model) else 1.35, floor)

    def h(p):
        ps = model.psi(p)[:, None]
        return 1.0 / ((ps + kappa) * (ps + lam[None, :]))

    vals = {}
    for n in (cfg.order, cfg.order // 2):
        p, w = panel_nodes(breaks, n)
        vals[n] = w @ h(p)
    q = 2.0 * model.leading_term()[1]
    tail, tail_err = algebraic_tail(h, P, q)
    val = (vals[cfg.order] + tail) / np.pi
    err = (np.abs(vals[cfg.order] - vals[cfg.order // 2]) + tail_err) / np.pi
    return val, err


def heat_integral(model: LevyModel, t: float, z, cfg: QuadratureConfig = DEFAULT_QCFG,
                  cutoff: float = 40.0):
    """``(1/pi) int_0^inf cos(p z) exp(-t Psi(p)) dp`` for an array of ``z``.

    The integrand is below ``exp(-cutoff)`` beyond ``Psi^{-1}(cutoff / t)``,
    so the integral is truncated there.  Returns ``(value, error_estimate)``.
    """
    z = np.abs(np.atleast_1d(np.asarray(z, dtype=float)))
    P = model.psi_inverse(cutoff / t)
    knee = model.psi_inverse(1.0 / t)
    floor = knee * (1e-13 if _has_cusp(model) else 1e-3)
    breaks = graded_breaks(knee, P, 1.5 if _has_cusp(model) else 1.35, floor)
    zmax = z.max() if z.size else 0.0
    if zmax > 0:
        breaks = limit_width(breaks, 2.0 * np.pi / zmax)
    vals = {}
    for n in (cfg.order, cfg.order // 2):
        p, w = panel_nodes(breaks, n)
        vals[n] = np.cos(np.outer(z, p)) @ (w * np.exp(-t * model.psi(p)))
    # remainder bound: int_P^inf exp(-t Psi) dp <= exp(-cutoff) * P / (t Psi'(P) P / Psi(P))
    e0 = model.leading_term()[1]
    tail_bound = np.exp(-cutoff) * P / (cutoff * e0)
    val = vals[cfg.order] / np.pi
    err = (np.abs(vals[cfg.order] - vals[cfg.order // 2]) + tail_bound) / np.pi
    return val, err


def small_p_series(model: LevyModel, base, power: int, max_exponent: float, sign: float = -1.0):
    """Small-``p`` expansion of ``sum_k base_k Psi(p)**k`` as ``{exponent: coef}``.

    ``base`` is a callable ``k -> coefficient`` (possibly complex arrays);
    terms ``p**e`` with ``e > max_exponent`` are dropped.  Only the
    expansion of powers of ``Psi`` is produced; ``power`` caps ``k``.
    """
    terms = model.terms
    out = {0.0: base(0)}
    cur = {0.0: 1.0}
    for k in range(1, power + 1):
        nxt = {}
        for e1, c1 in cur.items():
            for c, e in terms:
                e2 = round(e1 + e, 12)
                if e2 <= max_exponent:
                    nxt[e2] = nxt.get(e2, 0.0) + c1 * c
        cur = nxt
        if not cur:
            break
        bk = base(k)
        for e, c in cur.items():
            out[e] = out.get(e, 0.0) + bk * c
    return out


def resolvent_small_p(model: LevyModel, lam, max_exponent: float = 8.0):
    """``1/(lam + Psi) = (1/lam) sum_k (-Psi/lam)**k`` expanded in powers of ``p``."""
    lam = np.asarray(lam, dtype=complex)
    e_min = min(e for _, e in model.terms)
    power = int(np.ceil(max_exponent / e_min)) + 1
    return small_p_series(model, lambda k: (-1.0) ** k / lam ** (k + 1), power, max_exponent)


def heat_small_p(model: LevyModel, t: float, max_exponent: float = 8.0):
    """``exp(-t Psi) = sum_k (-t Psi)**k / k!`` expanded in powers of ``p``."""
    from math import factorial

    e_min = min(e for _, e in model.terms)
    power = int(np.ceil(max_exponent / e_min)) + 1
    return small_p_series(model, lambda k: (-t) ** k / factorial(k), power, max_exponent)


def large_distance_terms(series: dict):
    """Leading large-``y`` behaviour of ``(1/pi) int_0^inf cos(p y) g(p) dp``.

    Each non-analytic term ``c p**e`` of the small-``p`` expansion of ``g``
    contributes ``-c Gamma(1+e) sin(pi e / 2) / (pi y**(1+e))``; even integer
    powers contribute nothing at any algebraic order.  Returns a list of
    ``(decay_power, coefficient)`` pairs meaning ``coefficient * y**(-decay_power)``.
    """
    from scipy.special import gamma as gamma_fn

    out = []
    for e, c in sorted(series.items()):
        if e <= 0 or (abs(e - round(e)) < 1e-12 and round(e) % 2 == 0):
            continue
        coef = -c * gamma_fn(1.0 + e) * np.sin(np.pi * e / 2.0) / np.pi
        out.append((1.0 + e, coef))
    return out


def tail_integral(terms, Y: float):
    """``int_Y^inf sum coef * y**(-power) dy`` for terms from :func:`large_distance_terms`."""
    total = 0.0
    for power, coef in terms:
        total = total + coef * Y ** (1.0 - power) / (power - 1.0)
    return total
