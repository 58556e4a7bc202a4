"""Reduced-model constants and the explicit self-similar steady states.

The reduced pore-density problem depends on two constants, the feedback
strength ``beta`` and the boundary value ``mu``.  The long-time behaviour is
organised by a one-parameter family of steady states of the rescaled equation

    (1 + gamma*y) F' + (gamma + 1/2) F = 0,

selected by the branch parameter ``gamma``.  Every other constant (tail
exponent, first moment, amplitude) is derived from ``(beta, gamma)`` so that
inconsistent triples cannot be built.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelParams",
    "SelfSimilarProfile",
    "derive_profile",
    "eval_Fs",
    "fs_residual",
    "power_tail_mass",
    "power_tail_moment",
]


def _check_gamma(gamma: float) -> None:
    if not math.isfinite(gamma):
        raise ValueError("gamma must be finite")
    if gamma >= 0.5:
        raise ValueError(f"gamma must be < 1/2, got {gamma}")
    if gamma == -0.5:
        raise ValueError(
            "gamma = -1/2 gives a measure-valued steady state and is not supported"
        )


@dataclass(frozen=True)
class ModelParams:
    """Constants of the reduced problem plus the selected steady-state branch.

    Parameters
    ----------
    beta:
        Strength of the mean-field drift feedback, ``beta > 0``.
    mu:
        Dirichlet value of the density at ``x = 0``, ``mu > 0``.
    gamma:
        Branch parameter of the self-similar family, ``gamma < 1/2`` and
        ``gamma != -1/2``.
    """

    beta: float = 3.0
    mu: float = 1.0
    gamma: float = 0.25

    def __post_init__(self) -> None:
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise ValueError(f"mu must be positive, got {self.mu}")
        _check_gamma(self.gamma)

    @property
    def profile(self) -> "SelfSimilarProfile":
        return derive_profile(self)


def power_tail_mass(gamma: float, p: float, r: np.ndarray | float) -> np.ndarray:
    """Return ``int_r^end (1 + gamma*y)^(-p) dy``.

    ``end`` is infinity for ``gamma > 0`` and ``-1/gamma`` for ``gamma < 0``.
    Valid when the integral converges (``p > 1`` resp. ``p < 1``).
    """
    u = np.maximum(1.0 + gamma * np.asarray(r, dtype=float), 0.0)
    with np.errstate(divide="ignore"):
        return u ** (1.0 - p) / (gamma * (p - 1.0))


def power_tail_moment(gamma: float, p: float, r: np.ndarray | float) -> np.ndarray:
    """Return ``int_r^end y (1 + gamma*y)^(-p) dy`` (see :func:`power_tail_mass`)."""
    u = np.maximum(1.0 + gamma * np.asarray(r, dtype=float), 0.0)
    with np.errstate(divide="ignore"):
        return (u ** (2.0 - p) / (p - 2.0) - u ** (1.0 - p) / (p - 1.0)) / gamma**2


@dataclass(frozen=True)
class SelfSimilarProfile:
    """Explicit steady state ``F_s`` of the rescaled equation.

    ``F_s(y) = c_s (1 + gamma*y)^(-theta)`` for ``gamma != 0`` (restricted to
    ``y < -1/gamma`` when ``gamma < 0``) and ``c_s exp(-y/2)`` for ``gamma = 0``.

    Attributes
    ----------
    gamma, theta, N_s, c_s:
        Branch parameter, tail exponent (``inf`` for ``gamma = 0``), first
        moment and amplitude.
    """

    gamma: float
    theta: float
    N_s: float
    c_s: float
    beta: float = field(default=float("nan"), compare=False)

    @property
    def support_end(self) -> float:
        """Right end of the support (``inf`` unless ``gamma < 0``)."""
        return -1.0 / self.gamma if self.gamma < 0 else math.inf

    def __call__(self, y: np.ndarray | float) -> np.ndarray:
        return eval_Fs(self, y)

    def derivative(self, y: np.ndarray | float) -> np.ndarray:
        """Analytic ``dF_s/dy`` on the interior of the support."""
        y = np.asarray(y, dtype=float)
        g = self.gamma
        if g == 0.0:
            return -0.5 * self.c_s * np.exp(-0.5 * y)
        u = 1.0 + g * y
        inside = u > 0
        out = np.zeros_like(u)
        out[inside] = -self.theta * g * self.c_s * u[inside] ** (-self.theta - 1.0)
        return out

    def second_derivative(self, y: np.ndarray | float) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        g = self.gamma
        if g == 0.0:
            return 0.25 * self.c_s * np.exp(-0.5 * y)
        u = 1.0 + g * y
        inside = u > 0
        out = np.zeros_like(u)
        th = self.theta
        out[inside] = th * (th + 1.0) * g * g * self.c_s * u[inside] ** (-th - 2.0)
        return out

    def tail_mass(self, r: np.ndarray | float) -> np.ndarray:
        """``int_r^inf F_s dy``."""
        r = np.asarray(r, dtype=float)
        if self.gamma == 0.0:
            return 2.0 * self.c_s * np.exp(-0.5 * r)
        out = self.c_s * power_tail_mass(self.gamma, self.theta, r)
        return np.where(r >= self.support_end, 0.0, out)

    def tail_moment(self, r: np.ndarray | float) -> np.ndarray:
        """``int_r^inf y F_s dy``."""
        r = np.asarray(r, dtype=float)
        if self.gamma == 0.0:
            return self.c_s * np.exp(-0.5 * r) * (2.0 * r + 4.0)
        out = self.c_s * power_tail_moment(self.gamma, self.theta, r)
        return np.where(r >= self.support_end, 0.0, out)

    def shifted_moment(self, r: np.ndarray | float) -> np.ndarray:
        """``nu(r) = int_r^inf (y - r) F_s dy``."""
        return self.tail_moment(r) - np.asarray(r, dtype=float) * self.tail_mass(r)

    def amplitude_forms(self) -> tuple[float, float, float]:
        """The three equivalent expressions for ``c_s`` (``gamma != 0``)."""
        g, th, N = self.gamma, self.theta, self.N_s
        return (
            (1.0 - 2.0 * g) * N / 4.0,
            (th - 2.0) * g * N / 2.0,
            N * g * g * (th - 1.0) * (th - 2.0),
        )


def derive_profile(params: ModelParams) -> SelfSimilarProfile:
    """Build the steady state selected by ``params.gamma``.

    Examples
    --------
    >>> p = derive_profile(ModelParams(beta=3.0, gamma=0.25))
    >>> (p.theta, p.N_s, p.c_s)
    (3.0, 2.0, 0.25)
    """
    g = params.gamma
    _check_gamma(g)
    if g == 0.0:
        c_s = math.sqrt(params.beta) / 4.0
        return SelfSimilarProfile(g, math.inf, 4.0 * c_s, c_s, params.beta)
    N_s = math.sqrt(params.beta / (1.0 - g))
    theta = 1.0 + 1.0 / (2.0 * g)
    c_s = (1.0 - 2.0 * g) / 4.0 * N_s
    return SelfSimilarProfile(g, theta, N_s, c_s, params.beta)


def eval_Fs(profile: SelfSimilarProfile, y: np.ndarray | float) -> np.ndarray:
    """Evaluate ``F_s`` at ``y >= 0``; zero outside the support."""
    y = np.asarray(y, dtype=float)
    g = profile.gamma
    if g == 0.0:
        return profile.c_s * np.exp(-0.5 * y)
    u = 1.0 + g * y
    inside = u > 0
    out = np.zeros(np.shape(u))
    out[inside] = profile.c_s * u[inside] ** (-profile.theta)
    return out if out.ndim else float(out)


def fs_residual(profile: SelfSimilarProfile, y: np.ndarray | float) -> np.ndarray:
    """Return ``(1 + gamma*y) F_s'(y) + (gamma + 1/2) F_s(y)``."""
    y = np.asarray(y, dtype=float)
    g = profile.gamma
    return (1.0 + g * y) * profile.derivative(y) + (g + 0.5) * eval_Fs(profile, y)
