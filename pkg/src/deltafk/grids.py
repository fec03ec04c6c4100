"""Uniform spatial grids, sampled functions and their spectra.

Fourier convention throughout: ``f_hat(p) = int e^{i p x} f(x) dx`` and
``f(x) = (1/2pi) int e^{-i p x} f_hat(p) dp``.

Functions that matter here are often smooth apart from a kink or cusp at a
known point (``psi_lam(x - c)``) or carry a point mass (``delta(x - c)``).
Sampling those on a grid and transforming them would smear the singularity
across the whole spectrum, so :class:`SampledFunction` and
:class:`Spectrum` keep such pieces as exact *atoms* whose transforms are
known in closed form, and only the smooth remainder lives on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Grid:
    """``n`` equispaced points ``x0, x0 + h, ...``."""

    x0: float
    h: float
    n: int

    @classmethod
    def symmetric(cls, half_width: float, n: int, center: float = 0.0) -> "Grid":
        """Grid on ``[center - half_width, center + half_width)`` with ``n`` points."""
        if n < 8 or half_width <= 0:
            raise ValidationError("grid needs n >= 8 and positive extent")
        h = 2.0 * half_width / n
        return cls(center - half_width, h, n)

    @property
    def x(self):
        return self.x0 + self.h * np.arange(self.n)

    @property
    def p(self):
        """Frequencies matching :func:`numpy.fft.fft` ordering."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h)

    @property
    def dp(self):
        return 2.0 * np.pi / (self.n * self.h)

    def forward(self, values):
        """Samples of ``f_hat(p)`` from samples of ``f`` (trapezoid on the period)."""
        return self.h * np.exp(1j * self.p * self.x0) * self.n * np.fft.ifft(values)

    def inverse(self, spectrum):
        """Samples of ``f(x)`` from samples of ``f_hat(p)``."""
        return np.fft.fft(np.exp(-1j * self.p * self.x0) * spectrum) / (self.n * self.h)

    def index_of(self, point: float) -> int:
        k = (point - self.x0) / self.h
        j = int(round(k))
        if abs(k - j) > 1e-9 or not (0 <= j < self.n):
            raise ValidationError(f"point {point} is not a node of the grid")
        return j


@dataclass(frozen=True)
class Atom:
    """``coef * psi_lam(x - center)`` (kind "psi") or ``coef * delta(x - center)`` (kind "delta")."""

    kind: str
    coef: complex
    center: float
    lam: complex = 0j

    def spectrum(self, model, p):
        phase = self.coef * np.exp(1j * p * self.center)
        if self.kind == "delta":
            return phase * np.ones_like(p)
        return phase / (model.psi(p) + self.lam)


def merge_atoms(atoms, tol: float = 0.0):
    """Combine atoms of identical kind, center and ``lam``; drop zero coefficients."""
    acc = {}
    for a in atoms:
        key = (a.kind, a.center, complex(a.lam))
        acc[key] = acc.get(key, 0j) + complex(a.coef)
    return tuple(
        Atom(kind, c, center, lam)
        for (kind, center, lam), c in acc.items()
        if abs(c) > tol
    )


@dataclass(frozen=True)
class SampledFunction:
    """A function on a grid: smooth samples ``values`` plus exact ``atoms``."""

    grid: Grid
    values: np.ndarray
    atoms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if np.shape(self.values) != (self.grid.n,):
            raise ValidationError("values do not match the grid")

    @property
    def deltas(self):
        return tuple(a for a in self.atoms if a.kind == "delta")

    def scaled(self, c) -> "SampledFunction":
        return SampledFunction(
            self.grid, c * self.values, tuple(replace(a, coef=c * a.coef) for a in self.atoms)
        )

    def spectrum(self, model) -> "Spectrum":
        return Spectrum(self.grid, self.grid.forward(self.values), self.atoms)

    def smooth_at(self, point: float) -> complex:
        """Trigonometric interpolant of the smooth part at ``point``."""
        shat = self.grid.forward(self.values)
        return complex(np.sum(np.exp(-1j * self.grid.p * point) * shat) * self.grid.dp / (2 * np.pi))

    def sample(self, model, cfg=None):
        """Full samples: smooth part plus every ``psi`` atom evaluated on the grid.

        Delta atoms have no pointwise value and raise.
        """
        from .quadrature import DEFAULT_QCFG, psi_table

        cfg = cfg or DEFAULT_QCFG
        if self.deltas:
            raise ValidationError("function carries point masses; it has no samples")
        out = np.asarray(self.values, dtype=complex).copy()
        for a in self.atoms:
            tab = psi_table(model, self.grid.x - a.center, [a.lam], cfg)[:, 0]
            out += a.coef * tab
        return out

    def value_at(self, model, point: float, cfg=None) -> complex:
        from .quadrature import DEFAULT_QCFG, psi_table

        cfg = cfg or DEFAULT_QCFG
        val = self.smooth_at(point)
        for a in self.atoms:
            if a.kind == "delta":
                raise ValidationError("function carries point masses; it has no pointwise value")
            val += a.coef * psi_table(model, [point - a.center], [a.lam], cfg)[0, 0]
        return val


@dataclass(frozen=True)
class Spectrum:
    """Spectrum on the grid's frequencies plus exact atoms."""

    grid: Grid
    values: np.ndarray
    atoms: tuple = field(default_factory=tuple)

    def to_function(self) -> SampledFunction:
        return SampledFunction(self.grid, self.grid.inverse(self.values), merge_atoms(self.atoms))

    def full(self, model):
        """Total spectrum sampled on the grid's frequencies."""
        out = np.asarray(self.values, dtype=complex).copy()
        for a in self.atoms:
            out += a.spectrum(model, self.grid.p)
        return out
