"""Symmetric Lévy processes with local time.

Three families are supported: Brownian motion, the symmetric alpha-stable
process with ``alpha`` in (1, 2], and the independent sum of the two.  All of
them have a power-law characteristic exponent

    Psi(p) = sigma2 * p**2 / 2 + B * |p|**alpha,

which is what the Fourier-side numerics rely on (analytic tails, analytic
derivatives, a closed-form Lévy density for the jump part).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import InvalidModel

KINDS = ("brownian", "stable", "mixed")


def _falling(e: float, k: int) -> float:
    out = 1.0
    for j in range(k):
        out *= e - j
    return out


@dataclass(frozen=True)
class LevyModel:
    """A symmetric Lévy process identified by its characteristic exponent.

    Use the :meth:`brownian`, :meth:`stable` and :meth:`mixed` constructors;
    the raw dataclass constructor validates the same invariants.
    """

    kind: str
    sigma2: float = 0.0
    alpha: float = 2.0
    B: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidModel(f"unknown model kind {self.kind!r}")
        if not all(math.isfinite(v) for v in (self.sigma2, self.alpha, self.B)):
            raise InvalidModel("model parameters must be finite")
        if self.kind == "brownian":
            if self.sigma2 <= 0:
                raise InvalidModel("brownian model needs sigma2 > 0")
            if self.B != 0:
                raise InvalidModel("brownian model has no jump part (B must be 0)")
            return
        if not (1.0 < self.alpha <= 2.0):
            # alpha <= 1 violates the local-time condition: int dp / (1 + |p|^alpha) diverges
            raise InvalidModel(
                f"alpha={self.alpha} outside (1, 2]; local time does not exist for alpha <= 1"
            )
        if self.kind == "stable":
            if self.B <= 0:
                raise InvalidModel("stable model needs B > 0")
            if self.sigma2 != 0:
                raise InvalidModel("stable model has no Gaussian part (sigma2 must be 0)")
        else:
            if self.sigma2 < 0 or self.B < 0 or self.sigma2 + self.B <= 0:
                raise InvalidModel("mixed model needs sigma2 >= 0, B >= 0, sigma2 + B > 0")

    @classmethod
    def brownian(cls, sigma2: float = 1.0) -> "LevyModel":
        return cls("brownian", sigma2=float(sigma2))

    @classmethod
    def stable(cls, alpha: float, B: float = 1.0) -> "LevyModel":
        return cls("stable", alpha=float(alpha), B=float(B))

    @classmethod
    def mixed(cls, sigma2: float, alpha: float, B: float) -> "LevyModel":
        return cls("mixed", sigma2=float(sigma2), alpha=float(alpha), B=float(B))

    @classmethod
    def from_dict(cls, d: dict) -> "LevyModel":
        """Build a model from its config form ``{"kind", "sigma2", "alpha", "B"}``."""
        allowed = {"kind", "sigma2", "alpha", "B"}
        extra = set(d) - allowed
        if extra:
            raise InvalidModel(f"unknown model keys: {sorted(extra)}")
        kind = d.get("kind")
        if kind == "brownian":
            return cls.brownian(d.get("sigma2", 1.0))
        if kind == "stable":
            return cls.stable(d.get("alpha", 1.5), d.get("B", 1.0))
        if kind == "mixed":
            return cls.mixed(d.get("sigma2", 1.0), d.get("alpha", 1.5), d.get("B", 1.0))
        raise InvalidModel(f"unknown model kind {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "brownian":
            return {"kind": "brownian", "sigma2": self.sigma2}
        if self.kind == "stable":
            return {"kind": "stable", "alpha": self.alpha, "B": self.B}
        return {"kind": "mixed", "sigma2": self.sigma2, "alpha": self.alpha, "B": self.B}

    # -- exponent -----------------------------------------------------------

    @property
    def terms(self) -> tuple:
        """Nonzero ``(coefficient, exponent)`` pairs of Psi, largest exponent first."""
        out = []
        if self.sigma2 > 0:
            out.append((0.5 * self.sigma2, 2.0))
        if self.B > 0:
            out.append((self.B, self.alpha))
        out.sort(key=lambda ce: -ce[1])
        return tuple(out)

    @property
    def has_jumps(self) -> bool:
        return self.B > 0 and self.alpha < 2.0

    def psi(self, p):
        """Characteristic exponent Psi(p); vectorized, even, nonnegative."""
        ap = np.abs(np.asarray(p, dtype=float))
        out = np.zeros_like(ap)
        for c, e in self.terms:
            out = out + c * ap**e
        return out if out.ndim else float(out)

    def psi_derivative(self, p, k: int):
        """k-th derivative of Psi at p > 0."""
        p = np.asarray(p, dtype=float)
        out = np.zeros_like(p)
        for c, e in self.terms:
            out = out + c * _falling(e, k) * p ** (e - k)
        return out

    def psi_inverse(self, v: float) -> float:
        """The p >= 0 with Psi(p) = v (Psi is increasing on [0, inf))."""
        if v <= 0:
            return 0.0
        terms = self.terms
        if len(terms) == 1:
            c, e = terms[0]
            return (v / c) ** (1.0 / e)
        # Psi is a sum of increasing powers; Newton on log p from the larger root estimate
        p = min((v / c) ** (1.0 / e) for c, e in terms)
        for _ in range(100):
            f = float(self.psi(p)) - v
            df = float(self.psi_derivative(p, 1))
            step = f / df
            p_new = max(p - step, 0.5 * p)
            if abs(p_new - p) <= 1e-15 * p:
                p = p_new
                break
            p = p_new
        return p

    def leading_term(self) -> tuple:
        """(coefficient, exponent) dominating Psi as |p| -> inf."""
        return self.terms[0]

    def jump_density_coefficient(self) -> float:
        """C in the Lévy density C / |y|**(1 + alpha) of the stable part (0 if none)."""
        if not self.has_jumps:
            return 0.0
        a = self.alpha
        return self.B * float(gamma_fn(1.0 + a)) * math.sin(math.pi * a / 2.0) / math.pi

    def diffusivity_proxy(self) -> float:
        """sqrt(Psi(1)); sets the default local-time window scale."""
        return math.sqrt(float(self.psi(1.0)))

    # -- sampling -------------------------------------------------------------

    def sample_increment(self, dt: float, rng: np.random.Generator, size=None):
        """Exact draw(s) of xi(dt).

        Gaussian part: N(0, sigma2 * dt).  Stable part: Chambers-Mallows-Stuck
        with beta = 0, scaled by (B * dt)**(1/alpha).
        """
        if dt <= 0:
            raise ValueError("dt must be positive")
        out = np.zeros(size) if size is not None else 0.0
        if self.sigma2 > 0:
            out = out + math.sqrt(self.sigma2 * dt) * rng.standard_normal(size)
        if self.B > 0:
            scale = (self.B * dt) ** (1.0 / self.alpha)
            out = out + scale * standard_symmetric_stable(self.alpha, rng, size)
        return out


def standard_symmetric_stable(alpha: float, rng: np.random.Generator, size=None):
    """Symmetric alpha-stable draws with characteristic function exp(-|p|**alpha)."""
    v = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, size)
    w = rng.standard_exponential(size)
    if alpha == 2.0:
        return 2.0 * np.sin(v) * np.sqrt(w)
    cv = np.cos(v)
    return (
        np.sin(alpha * v)
        / cv ** (1.0 / alpha)
        * (np.cos(v - alpha * v) / w) ** ((1.0 - alpha) / alpha)
    )


def char_exponent(model: LevyModel, p):
    return model.psi(p)


def local_time_exists(model: LevyModel) -> bool:
    """Whether int dp / (1 + Psi(p)) < inf, decided from the exponent's growth.

    The integral converges iff the leading exponent exceeds 1.
    """
    return max(e for _, e in model.terms) > 1.0


def exponent_admits_local_time(alpha: Optional[float] = None, sigma2: float = 0.0) -> bool:
    """Same test for raw parameters (lets callers probe ranges the constructor rejects)."""
    if sigma2 > 0:
        return True
    return alpha is not None and alpha > 1.0


def sample_increment(model: LevyModel, dt: float, rng: np.random.Generator, size=None):
    return model.sample_increment(dt, rng, size)
