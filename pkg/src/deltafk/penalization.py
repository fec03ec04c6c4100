"""Path measures penalized by local time at ``a``.

``Q_{T,x}`` reweights the free path law on ``[0, T]`` by
``exp(mu L(T, x - a)) / Z_mu(T, x)``.  Its finite-dimensional densities are
products of ``p_mu`` kernels closed by ``Z_mu(T - t_n, x_n)``.  As ``T`` grows
the law converges to that of the h-transformed process ``zeta`` with
transition density ``rho_mu`` and invariant density ``pi_nu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .delta_semigroup import (
    DEFAULT_CCFG,
    ContourConfig,
    DeltaPotential,
    Z_mu,
    Z_mu_vector,
    p_mu_matrix,
    rho_mu_matrix,
)
from .errors import DegenerateWeights, GridTooNarrow, ValidationError
from .grids import Grid
from .levy_models import LevyModel
from .pathsim import MCEstimate, Moments, PathConfig, _plan, block_rng, run_paths
from .quadrature import DEFAULT_QCFG, QuadratureConfig, spatial_rule
from .spectral_core import profile_points

ESS_MIN = 10.0


@dataclass(frozen=True)
class PenalizedSpec:
    """Penalized law of paths started at ``x`` on the horizon ``[0, T]``."""

    pot: DeltaPotential
    model: LevyModel
    T: float
    x: float = 0.0

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValidationError("T must be positive")
        self.pot.check_model(self.model)


@dataclass(frozen=True)
class FdDensityQuery:
    """Times ``0 < t_1 < ... < t_n <= T`` and evaluation points for each time.

    Each entry of ``points`` is a number or a 1-d array; arrays produce the
    density on the tensor grid.
    """

    times: tuple
    points: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size == 0 or len(self.points) != t.size:
            raise ValidationError("need one point (or point array) per time")
        if t[0] <= 0 or np.any(np.diff(t) <= 0):
            raise ValidationError("times must be positive and strictly increasing")


@dataclass(frozen=True)
class ISEstimate(MCEstimate):
    """Self-normalized importance-sampling estimate with its effective sample size."""

    ess: float = 0.0

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["ess"] = self.ess
        return d


def q_fd_density(spec: PenalizedSpec, q: FdDensityQuery, qcfg: QuadratureConfig = DEFAULT_QCFG,
                 ccfg: ContourConfig = DEFAULT_CCFG):
    """Joint density of ``(omega(t_1), ..., omega(t_n))`` under ``Q_{T,x}``.

    Returns a float when every point is a number, otherwise an array over the
    tensor grid of the given points.
    """
    if q.times[-1] > spec.T * (1 + 1e-12):
        raise ValidationError("query times must not exceed T")
    pot, model = spec.pot, spec.model
    pts = [np.atleast_1d(np.asarray(p, dtype=float)) for p in q.points]
    scalar = all(np.ndim(p) == 0 for p in q.points)
    out, _ = p_mu_matrix(pot, model, q.times[0], [spec.x], pts[0], qcfg, ccfg)
    out = out[0]
    for k in range(1, len(pts)):
        step, _ = p_mu_matrix(pot, model, q.times[k] - q.times[k - 1], pts[k - 1], pts[k], qcfg, ccfg)
        # out has one axis per earlier coordinate; the last one couples to the new one
        out = out[..., None] * step.reshape((1,) * (out.ndim - 1) + step.shape)
    rest = spec.T - q.times[-1]
    closing, _ = Z_mu_vector(pot, model, rest if rest > 1e-14 else 0.0, pts[-1], qcfg, ccfg)
    Z0 = Z_mu(pot, model, spec.T, spec.x, qcfg, ccfg).value
    out = out * closing / Z0
    return float(out.ravel()[0]) if scalar else out


def endpoint_density(spec: PenalizedSpec, y, qcfg: QuadratureConfig = DEFAULT_QCFG,
                     ccfg: ContourConfig = DEFAULT_CCFG):
    """Density of ``omega(T)`` under ``Q_{T,x}``: ``p_mu(T, x, y) / Z_mu(T, x)``."""
    y_arr = np.asarray(y, dtype=float)
    p, _ = p_mu_matrix(spec.pot, spec.model, spec.T, [spec.x], np.atleast_1d(y_arr), qcfg, ccfg)
    Z0 = Z_mu(spec.pot, spec.model, spec.T, spec.x, qcfg, ccfg).value
    val = p[0] / Z0
    return float(val[0]) if y_arr.ndim == 0 else val


def endpoint_l1_distance(spec: PenalizedSpec, qcfg: QuadratureConfig = DEFAULT_QCFG,
                         ccfg: ContourConfig = DEFAULT_CCFG, half_width: Optional[float] = None):
    """``int |p_mu(T, x, y) / Z_mu(T, x) - nu psi_nu(y - a)| dy`` by spatial quadrature."""
    pot = spec.pot

    def gap(centers):
        z, w = _spatial(pot, centers, half_width)
        keep = (z >= min(pot.a, spec.x) - hw) & (z <= max(pot.a, spec.x) + hw)
        d = endpoint_density(spec, z[keep], qcfg, ccfg) - pot.nu * pot.psi_nu(z[keep], qcfg)
        return z[keep], w[keep], d

    hw = half_width if half_width is not None else _default_half_width(pot)
    z, _, d = gap([pot.a, spec.x])
    # the integrand has kinks where the two densities cross: make them breakpoints
    k = np.nonzero(np.sign(d[1:]) * np.sign(d[:-1]) < 0)[0]
    roots = z[k] - d[k] * (z[k + 1] - z[k]) / (d[k + 1] - d[k])
    if roots.size:
        z, w, d = gap(np.concatenate([[pot.a, spec.x], roots]))
    else:
        _, w, _ = gap([pot.a, spec.x])
    return float(np.abs(d) @ w)


def _default_half_width(pot: DeltaPotential) -> float:
    _, _, Y = profile_points(pot.model, pot.nu)
    return min(Y, 400.0)


def _spatial(pot: DeltaPotential, centers, half_width=None):
    model = pot.model
    if half_width is None:
        half_width = _default_half_width(pot)
    scale = 1.0 / model.psi_inverse(pot.nu)
    floor = 1e-10 if model.has_jumps else 1e-6
    return spatial_rule(centers, scale, half_width, floor=floor, max_width=scale)


# -- importance sampling ------------------------------------------------------------


@dataclass(frozen=True)
class Coordinate:
    """``f(omega(t_index))`` for a vectorized ``f``."""

    f: Callable
    index: int = 0

    def __call__(self, omega):
        return self.f(omega[:, self.index])


@dataclass(frozen=True)
class _ISPayload:
    """Columns ``g w_T, w_T`` for each penalization horizon ``T``.

    ``g_idx`` selects the path coordinates passed to ``g``; ``w_idx`` the
    record column holding ``L(T)`` for each horizon.
    """

    g: Callable
    x: float
    mu: float
    g_idx: tuple
    w_idx: tuple

    def __call__(self, xi, L, disc):
        omega = self.x - xi[:, list(self.g_idx)]
        gv = np.asarray(self.g(omega), dtype=float)
        cols = []
        for j in self.w_idx:
            w = np.exp(self.mu * L[:, j])
            cols.extend([gv * w, w])
        return np.stack(cols, axis=1)


def _is_estimates(mom: Moments, n_T: int):
    out = []
    for k in range(n_T):
        est = mom.ratio(2 * k, 2 * k + 1)
        sw = mom.sums[2 * k + 1]
        ess = float(sw * sw / mom.outer[2 * k + 1, 2 * k + 1])
        out.append(ISEstimate(est.mean, est.stderr, est.n, est.seed, ess))
    return out


def _q_estimates(pot, model, x, g, times, horizons, cfg, n, seed, check_ess=True):
    times = [float(t) for t in times]
    horizons = sorted(float(T) for T in horizons)
    grid_times = sorted(set(times) | set(horizons))
    plan = _plan(model, cfg, x - pot.a, times=grid_times, t_end=horizons[-1])
    payload = _ISPayload(
        g, float(x), float(pot.mu),
        tuple(grid_times.index(t) for t in times),
        tuple(grid_times.index(T) for T in horizons),
    )
    mom = run_paths(plan, payload, n, seed, cfg.block_size, cfg.workers)
    ests = _is_estimates(mom, len(horizons))
    if check_ess:
        for T, e in zip(horizons, ests):
            if e.ess < ESS_MIN:
                raise DegenerateWeights(f"effective sample size {e.ess:.3g} at T={T}; shrink T or raise n")
    return horizons, ests


def q_expectation_mc(spec: PenalizedSpec, g: Callable, times: Sequence[float], cfg: PathConfig,
                     n: int, seed: int) -> ISEstimate:
    """``E_Q g(omega(t_1), ..., omega(t_n))`` by self-normalized importance sampling.

    Paths are drawn from the free law and weighted by
    ``exp(mu L(T, x - a))``.  ``g`` receives an ``(m, len(times))`` array.
    """
    if any(t <= 0 or t > spec.T for t in times):
        raise ValidationError("times must lie in (0, T]")
    _, ests = _q_estimates(spec.pot, spec.model, spec.x, g, times, [spec.T], cfg, n, seed)
    return ests[0]


def rho_expectation(pot: DeltaPotential, g: Callable, t: float, x: float,
                    qcfg: QuadratureConfig = DEFAULT_QCFG, ccfg: ContourConfig = DEFAULT_CCFG,
                    half_width: Optional[float] = None) -> float:
    """``int g(y) rho_mu(t, x, y) dy`` by spatial quadrature."""
    z, w = _spatial(pot, [pot.a, x], half_width)
    r, _ = rho_mu_matrix(pot, pot.model, t, [x], z, qcfg, ccfg)
    return float((r[0] * g(z)) @ w)


def q_expectation_exact(spec: PenalizedSpec, g: Callable, t: float,
                        qcfg: QuadratureConfig = DEFAULT_QCFG, ccfg: ContourConfig = DEFAULT_CCFG,
                        half_width: Optional[float] = None) -> float:
    """``E_Q g(omega(t))`` from the one-time density by spatial quadrature."""
    z, w = _spatial(spec.pot, [spec.pot.a, spec.x], half_width)
    dens = q_fd_density(spec, FdDensityQuery((t,), (z,)), qcfg, ccfg)
    return float((dens * g(z)) @ w)


@dataclass(frozen=True)
class WeakRow:
    T: float
    estimate: ISEstimate
    exact: float
    target: float
    deviation: float


def weak_convergence_check(specs: Sequence[PenalizedSpec], t: float, g: Callable, cfg: PathConfig,
                           n: int, seed: int, qcfg: QuadratureConfig = DEFAULT_QCFG,
                           ccfg: ContourConfig = DEFAULT_CCFG):
    """``E_{Q_T} g(omega(t))`` for increasing ``T`` against the limit ``int g rho_mu(t, x, .)``.

    All horizons share one set of simulated paths.  Each row also carries
    the same expectation from the finite-dimensional density (``exact``).
    """
    if not specs:
        raise ValidationError("need at least one horizon")
    base = specs[0]
    for s in specs:
        if s.pot != base.pot or s.x != base.x or s.model != base.model:
            raise ValidationError("horizons must share potential, model and start")
        if not t < s.T:
            raise ValidationError("event time must precede every horizon")
    pot, model, x = base.pot, base.model, base.x
    horizons, ests = _q_estimates(pot, model, x, Coordinate(g, 0), [t], [s.T for s in specs],
                                  cfg, n, seed)
    target = rho_expectation(pot, g, t, x, qcfg, ccfg)
    rows = []
    for T, est in zip(horizons, ests):
        exact = q_expectation_exact(PenalizedSpec(pot, model, T, x), g, t, qcfg, ccfg)
        rows.append(WeakRow(T, est, exact, target, abs(est.mean - target)))
    return rows


# -- the h-transformed process --------------------------------------------------------


def default_zeta_grid(pot: DeltaPotential, n_cells: int = 512, width: float = 8.0) -> Grid:
    """Cells covering ``a +- width / sqrt(nu)`` scaled by the model's diffusivity."""
    hw = width * pot.model.diffusivity_proxy() / math.sqrt(pot.nu)
    return Grid(pot.a - hw, 2 * hw / n_cells, n_cells + 1)


class ZetaTable:
    """Tabulated ``rho_mu(dt, x, y)`` for sampling ``zeta`` by CDF inversion.

    Rows are tabulated at ``row_factor`` times the resolution of the ``y``
    grid; a start between two rows draws from the linear interpolation of
    the two rows (a two-component mixture).  Within a ``y`` cell the
    density is taken constant, i.e. the CDF is linear.
    """

    def __init__(self, pot: DeltaPotential, dt: float, grid: Grid, row_factor: int = 4,
                 qcfg: QuadratureConfig = DEFAULT_QCFG, ccfg: ContourConfig = DEFAULT_CCFG):
        if not dt > 0:
            raise ValidationError("dt must be positive")
        self.pot, self.dt, self.grid = pot, float(dt), grid
        ys = grid.x
        xs = np.linspace(ys[0], ys[-1], row_factor * (grid.n - 1) + 1)
        rho, _ = rho_mu_matrix(pot, pot.model, dt, xs, ys, qcfg, ccfg)
        rho = np.maximum(rho, 0.0)
        cell = 0.5 * (rho[:, 1:] + rho[:, :-1]) * grid.h
        self.xs = xs
        self.mass = cell.sum(axis=1)
        self.cdf = np.concatenate([np.zeros((xs.size, 1)), np.cumsum(cell, axis=1)], axis=1)
        self.mean = (cell @ (0.5 * (ys[1:] + ys[:-1])))

    def row_weights(self, x: float):
        if not (self.xs[0] <= x <= self.xs[-1]):
            raise GridTooNarrow(f"state {x} outside the tabulated range")
        u = (x - self.xs[0]) / (self.xs[1] - self.xs[0])
        i = min(int(u), self.xs.size - 2)
        th = u - i
        return i, th

    def captured_mass(self, x: float) -> float:
        i, th = self.row_weights(x)
        return float((1 - th) * self.mass[i] + th * self.mass[i + 1])

    def row_mean(self, x: float) -> float:
        """Mean of the tabulated transition law from ``x``."""
        i, th = self.row_weights(x)
        return float(((1 - th) * self.mean[i] + th * self.mean[i + 1]) / self.captured_mass(x))

    def cell_transition_matrix(self) -> np.ndarray:
        """Probabilities of moving between ``y`` cells, starting at cell midpoints."""
        mids = 0.5 * (self.grid.x[1:] + self.grid.x[:-1])
        probs = np.diff(self.cdf, axis=1) / self.cdf[:, -1:]
        out = np.empty((mids.size, mids.size))
        for j, m in enumerate(mids):
            i, th = self.row_weights(m)
            out[j] = (1 - th) * probs[i] + th * probs[i + 1]
        return out

    def frequency_stderr(self, edges, n_steps: int) -> np.ndarray:
        """Standard errors of the bin frequencies of a stationary chain of ``n_steps`` states.

        Uses the asymptotic variance ``Var_pi f + 2 sum_{m >= 1} Cov_pi(f(X_0), f(X_m))``
        of each bin indicator ``f`` for the chain on cells, with the
        autocovariance sum obtained from the Poisson equation of the cell
        transition matrix.
        """
        M = self.cell_transition_matrix()
        n = M.shape[0]
        A = np.eye(n) - M.T
        A[-1] = 1.0
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        pi = np.linalg.solve(A, rhs)
        # share of each cell inside each bin
        g = self.grid.x
        edges = np.asarray(edges, dtype=float)
        lo = np.maximum(g[:-1, None], edges[None, :-1])
        hi = np.minimum(g[1:, None], edges[None, 1:])
        F = np.clip(hi - lo, 0.0, None) / self.grid.h
        p = pi @ F
        Fc = F - p
        G = np.linalg.solve(np.eye(n) - M + np.outer(np.ones(n), pi), Fc)
        var = p * (1 - p) + 2.0 * (pi @ (Fc * (G - Fc)))
        return np.sqrt(np.maximum(var, 0.0) / n_steps)

    def step(self, x: float, rng: np.random.Generator) -> float:
        if self.captured_mass(x) < 1.0 - 1e-3:
            raise GridTooNarrow(f"grid captures only {self.captured_mass(x):.6f} of the transition mass from {x}")
        i, th = self.row_weights(x)
        row = i + 1 if rng.random() < th else i
        cdf = self.cdf[row]
        v = rng.random() * cdf[-1]
        j = int(np.searchsorted(cdf, v, side="right")) - 1
        j = min(max(j, 0), self.grid.n - 2)
        frac = (v - cdf[j]) / (cdf[j + 1] - cdf[j]) if cdf[j + 1] > cdf[j] else 0.5
        return float(self.grid.x0 + self.grid.h * (j + frac))


@lru_cache(maxsize=8)
def zeta_table(pot: DeltaPotential, dt: float, grid: Grid, qcfg: QuadratureConfig = DEFAULT_QCFG,
               ccfg: ContourConfig = DEFAULT_CCFG) -> ZetaTable:
    return ZetaTable(pot, dt, grid, qcfg=qcfg, ccfg=ccfg)


def zeta_step(pot: DeltaPotential, model: LevyModel, x_cur: float, dt: float, grid: Optional[Grid],
              qcfg: QuadratureConfig, ccfg: ContourConfig, rng: np.random.Generator) -> float:
    """One transition of ``zeta`` over ``dt`` from ``x_cur``; tables are cached per ``(dt, grid)``."""
    pot.check_model(model)
    grid = grid or default_zeta_grid(pot)
    return zeta_table(pot, float(dt), grid, qcfg, ccfg).step(x_cur, rng)


def zeta_chain(pot: DeltaPotential, x0: float, dt: float, n_steps: int, seed: int,
               grid: Optional[Grid] = None, burn_in: int = 0,
               qcfg: QuadratureConfig = DEFAULT_QCFG, ccfg: ContourConfig = DEFAULT_CCFG):
    """States of a ``zeta`` chain after ``burn_in`` discarded steps."""
    grid = grid or default_zeta_grid(pot)
    table = zeta_table(pot, float(dt), grid, qcfg, ccfg)
    rng = block_rng(seed, 0)
    x = float(x0)
    out = np.empty(n_steps)
    for k in range(burn_in + n_steps):
        x = table.step(x, rng)
        if k >= burn_in:
            out[k - burn_in] = x
    return out


@dataclass(frozen=True)
class HistogramCheck:
    edges: np.ndarray
    freq: np.ndarray
    stderr: np.ndarray
    expected: np.ndarray

    @property
    def z_scores(self):
        return (self.freq - self.expected) / np.maximum(self.stderr, 1e-300)

    def passes(self, n_se: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.freq - self.expected) <= n_se * self.stderr))


def batch_means_stderr(indicators: np.ndarray, n_batches: int = 50) -> np.ndarray:
    """Standard error of column means of a correlated chain by batch means."""
    m = indicators.shape[0] // n_batches
    b = indicators[: m * n_batches].reshape(n_batches, m, -1).mean(axis=1)
    return b.std(axis=0, ddof=1) / math.sqrt(n_batches)


def stationary_histogram(pot: DeltaPotential, chain: np.ndarray, edges,
                         qcfg: QuadratureConfig = DEFAULT_QCFG, dt: Optional[float] = None,
                         grid: Optional[Grid] = None, ccfg: ContourConfig = DEFAULT_CCFG) -> HistogramCheck:
    """Bin frequencies of a chain against the ``pi_nu`` probabilities of the bins.

    With ``dt`` (and the ``grid`` the chain was run on) the standard errors
    come from the transition table of the chain
    (:meth:`ZetaTable.frequency_stderr`); otherwise from batch means.  Batch
    means underestimate the error of sparsely visited bins.
    """
    edges = np.asarray(edges, dtype=float)
    idx = np.searchsorted(edges, chain, side="right") - 1
    ind = np.zeros((chain.size, edges.size - 1))
    ok = (idx >= 0) & (idx < edges.size - 1)
    ind[np.nonzero(ok)[0], idx[ok]] = 1.0
    freq = ind.mean(axis=0)
    if dt is None:
        se = batch_means_stderr(ind)
    else:
        table = zeta_table(pot, float(dt), grid or default_zeta_grid(pot), qcfg, ccfg)
        se = table.frequency_stderr(edges, chain.size)
    # every edge is a breakpoint, so each panel lies inside one bin
    span = edges[-1] - edges[0]
    z, w = spatial_rule(np.concatenate([edges, [pot.a]]), np.min(np.diff(edges)), span, floor=1e-8)
    keep = (z > edges[0]) & (z < edges[-1])
    z, w = z[keep], w[keep]
    dens = pot.psi_nu(z, qcfg) ** 2 / pot.l2_norm_sq
    expected = np.bincount(np.searchsorted(edges, z) - 1, weights=w * dens, minlength=edges.size - 1)
    return HistogramCheck(edges, freq, se, expected[: edges.size - 1])
