"""Closed-form initial profiles with analytic tail integrals.

Transport by an affine map only needs three things from the transported
profile: point values, ``int_r^inf phi`` and ``int_r^inf x phi``.  The classes
here provide all three in closed form for the families used as initial data
(power laws with an optional log-periodic modulation, exponential sums) and for
sums and self-similar rescalings of them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .params import SelfSimilarProfile

__all__ = [
    "Profile",
    "PowerLawProfile",
    "ExponentialProfile",
    "SumProfile",
    "ScaledProfile",
    "GridProfile",
    "SelfSimilarAdapter",
]


class Profile(Protocol):
    def __call__(self, x: np.ndarray | float) -> np.ndarray: ...

    def tail_mass(self, r: np.ndarray | float) -> np.ndarray: ...

    def tail_moment(self, r: np.ndarray | float) -> np.ndarray: ...


def shifted_moment(profile: Profile, r: np.ndarray | float) -> np.ndarray:
    """``nu(r) = int_r^inf (x - r) phi(x) dx``."""
    return profile.tail_moment(r) - np.asarray(r, dtype=float) * profile.tail_mass(r)


@dataclass(frozen=True)
class PowerLawProfile:
    """``a * cos(phase + kappa*ln(1 + g*y)) * (1 + g*y)^(-p)`` for ``g > 0``.

    With ``kappa = phase = 0`` this is a plain power law.  The modulation keeps
    the values inside ``[-a, a]`` times the envelope and still integrates in
    closed form.
    """

    amplitude: float
    gamma: float
    exponent: float
    kappa: float = 0.0
    phase: float = 0.0

    def __post_init__(self) -> None:
        if self.gamma <= 0:
            raise ValueError("power-law profiles need gamma > 0")
        if self.exponent <= 2:
            raise ValueError("exponent must exceed 2 for a finite first moment")

    def _u(self, y):
        return 1.0 + self.gamma * np.asarray(y, dtype=float)

    def __call__(self, y):
        u = self._u(y)
        env = self.amplitude * u ** (-self.exponent)
        if self.kappa == 0.0 and self.phase == 0.0:
            return env
        return env * np.cos(self.phase + self.kappa * np.log(u))

    def _prim(self, u, q):
        # int_u^inf v^(-q) cos(phase + kappa ln v) dv with q > 1
        z = 1.0 - q + 1j * self.kappa
        return -np.real(np.exp(1j * self.phase) * u**z / z)

    def tail_mass(self, r):
        u = self._u(r)
        return self.amplitude * self._prim(u, self.exponent) / self.gamma

    def tail_moment(self, r):
        u = self._u(r)
        p = self.exponent
        return (
            self.amplitude
            * (self._prim(u, p - 1.0) - self._prim(u, p))
            / self.gamma**2
        )


@dataclass(frozen=True)
class ExponentialProfile:
    """``sum_k a_k exp(-lam_k * x)`` with all ``lam_k > 0``."""

    amplitudes: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.amplitudes) != len(self.rates):
            raise ValueError("amplitudes and rates must have equal length")
        if any(lam <= 0 for lam in self.rates):
            raise ValueError("rates must be positive")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for a, lam in zip(self.amplitudes, self.rates):
            out = out + a * np.exp(-lam * x)
        return out

    def tail_mass(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for a, lam in zip(self.amplitudes, self.rates):
            out = out + a * np.exp(-lam * r) / lam
        return out

    def tail_moment(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for a, lam in zip(self.amplitudes, self.rates):
            out = out + a * np.exp(-lam * r) * (r / lam + 1.0 / lam**2)
        return out


@dataclass(frozen=True)
class SelfSimilarAdapter:
    """Expose a :class:`SelfSimilarProfile` through the profile interface."""

    profile: SelfSimilarProfile

    def __call__(self, y):
        return self.profile(y)

    def second_derivative(self, y):
        return self.profile.second_derivative(y)

    def tail_mass(self, r):
        return self.profile.tail_mass(r)

    def tail_moment(self, r):
        return self.profile.tail_moment(r)


@dataclass(frozen=True)
class SumProfile:
    parts: tuple

    def __call__(self, x):
        return sum(p(x) for p in self.parts)

    def tail_mass(self, r):
        return sum(p.tail_mass(r) for p in self.parts)

    def tail_moment(self, r):
        return sum(p.tail_moment(r) for p in self.parts)


@dataclass(frozen=True)
class ScaledProfile:
    """Physical-variable view ``phi(x) = t^(-3/2) Phi(x/t)`` of a rescaled profile."""

    base: object
    t: float

    def __call__(self, x):
        return self.t**-1.5 * self.base(np.asarray(x, dtype=float) / self.t)

    def second_derivative(self, x):
        return self.t**-3.5 * self.base.second_derivative(np.asarray(x, dtype=float) / self.t)

    def tail_mass(self, r):
        return self.t**-0.5 * self.base.tail_mass(np.asarray(r, dtype=float) / self.t)

    def tail_moment(self, r):
        return self.t**0.5 * self.base.tail_moment(np.asarray(r, dtype=float) / self.t)


class GridProfile:
    """Monotone cubic interpolant of gridded samples with quadrature tails.

    Values beyond the last node are zero.  Tail integrals are exact integrals
    of the interpolant.
    """

    def __init__(self, nodes: Sequence[float], values: Sequence[float]):
        nodes = np.asarray(nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        self._interp = PchipInterpolator(nodes, values, extrapolate=False)
        self._x = nodes
        self._mass = self._interp.antiderivative()
        xv = PchipInterpolator(nodes, nodes * values, extrapolate=False)
        self._mom = xv.antiderivative()
        self._x0, self._x1 = nodes[0], nodes[-1]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self._interp(np.clip(x, self._x0, None))
        return np.where(x > self._x1, 0.0, np.nan_to_num(out))

    def _tail(self, F, r):
        r = np.clip(np.asarray(r, dtype=float), self._x0, self._x1)
        return F(self._x1) - F(r)

    def tail_mass(self, r):
        return self._tail(self._mass, r)

    def tail_moment(self, r):
        return self._tail(self._mom, r)
