"""Scalar mean-field machinery.

Expansion of the nonlocal coefficient around the self-similar moment,

    1/(1 + n_f^2) = 1/n_s^2 - 2 n_g/n_s^3 - h(n_g, t),

its rescaled counterpart ``H``, the coefficient perturbations ``j`` and ``J``,
the nonlinear Volterra equation for the moment perturbation ``N_G``, the
two-dimensional linear system that controls its decay, and log-linear rate
fits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .params import ModelParams, SelfSimilarProfile, derive_profile
from .profiles import shifted_moment

__all__ = [
    "DenominatorError",
    "PerturbationTrace",
    "eval_h_hyperbolic",
    "eval_H",
    "eval_j",
    "eval_J",
    "eval_h_parabolic",
    "eval_j_parabolic",
    "xy_matrix",
    "integrate_xy_system",
    "XYResult",
    "solve_NG_volterra",
    "VolterraResult",
    "fit_decay_rate",
    "DecayFit",
    "log_tau_grid",
]


class DenominatorError(ArithmeticError):
    """The expansion denominator is not positive (moment perturbation too negative)."""


def _guard(den: float) -> float:
    if not den > 0:
        raise DenominatorError(f"non-positive denominator {den}")
    return den


def eval_h_hyperbolic(n_g: float, params: ModelParams, t: float) -> float:
    """``h(n_g, t)`` with ``n_s = N_s t^(1/2)``."""
    n_s = derive_profile(params).N_s * math.sqrt(t)
    A = 1.0 + 2.0 * n_g * n_s + n_g * n_g
    den = _guard(n_s**4 * (1.0 + A / n_s**2))
    return (1.0 + n_g * n_g - 2.0 * n_g / n_s * A) / den


def eval_H(N_G: float, params: ModelParams, tau: float) -> float:
    """Rescaled ``H(N_G, tau) = t h(n_g, t)``."""
    N_s = derive_profile(params).N_s
    e = math.exp(-tau)
    A = e + 2.0 * N_s * N_G + N_G * N_G
    den = _guard(N_s**4 * (1.0 + A / N_s**2))
    return (e + N_G * N_G - 2.0 * N_G / N_s * A) / den


def eval_j(n_g: float, params: ModelParams, t: float) -> float:
    """``j = 2 beta n_g / n_s^3 + beta h``."""
    n_s = derive_profile(params).N_s * math.sqrt(t)
    return 2.0 * params.beta * n_g / n_s**3 + params.beta * eval_h_hyperbolic(n_g, params, t)


def eval_J(N_G: float, params: ModelParams, tau: float) -> float:
    """``J = 2 beta N_G / N_s^3 + beta H = t j``."""
    N_s = derive_profile(params).N_s
    return 2.0 * params.beta * N_G / N_s**3 + params.beta * eval_H(N_G, params, tau)


def eval_h_parabolic(
    n_g: float,
    params: ModelParams,
    t: float,
    n_bl: float | None = None,
    *,
    doubled_ns: bool = False,
) -> float:
    """Parabolic ``h`` with ``n_f = n_s + n_g + n_bl``.

    ``n_bl`` defaults to the boundary-layer moment ``mu - c_s t^(-3/2)``.  The
    numerator carries ``2 n_bl (n_g + n_s)``, which makes
    ``1/n_s^2 - 1/(1 + n_f^2) = 2 n_g/n_s^3 + h`` an identity.  With
    ``doubled_ns=True`` the cross term is ``2 n_bl (n_g + 2 n_s)`` instead; that
    variant does not satisfy the identity and exists for comparison only.
    """
    prof = derive_profile(params)
    if n_bl is None:
        n_bl = params.mu - prof.c_s * t**-1.5
    n_s = prof.N_s * math.sqrt(t)
    n_f = n_s + n_g + n_bl
    A = 1.0 + n_f * n_f - n_s * n_s
    cross = 2.0 * n_bl * (n_g + (2.0 if doubled_ns else 1.0) * n_s)
    num = 1.0 + n_g * n_g + n_bl * n_bl + cross - 2.0 * n_g / n_s * A
    return num / _guard(n_s**4 * (1.0 + A / n_s**2))


def eval_j_parabolic(n_g: float, params: ModelParams, t: float, n_bl: float | None = None) -> float:
    n_s = derive_profile(params).N_s * math.sqrt(t)
    return 2.0 * params.beta * n_g / n_s**3 + params.beta * eval_h_parabolic(n_g, params, t, n_bl)


@dataclass
class PerturbationTrace:
    """Samples of the moment perturbation and coefficient perturbations.

    For the hyperbolic variant ``n_bl`` is zero.  ``H = t h`` and ``J = t j``.
    """

    t: np.ndarray
    n_g: np.ndarray
    params: ModelParams
    variant: str = "hyperbolic"
    n_bl: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.variant not in ("hyperbolic", "parabolic"):
            raise ValueError(f"unknown variant {self.variant!r}")
        self.t = np.asarray(self.t, dtype=float)
        self.n_g = np.asarray(self.n_g, dtype=float)
        if self.n_bl is None:
            if self.variant == "parabolic":
                c_s = derive_profile(self.params).c_s
                self.n_bl = self.params.mu - c_s * self.t**-1.5
            else:
                self.n_bl = np.zeros_like(self.t)

    @property
    def tau(self) -> np.ndarray:
        return np.log(self.t)

    @property
    def n_s(self) -> np.ndarray:
        return derive_profile(self.params).N_s * np.sqrt(self.t)

    @property
    def N_G(self) -> np.ndarray:
        return self.n_g / np.sqrt(self.t)

    @property
    def h(self) -> np.ndarray:
        if self.variant == "hyperbolic":
            return np.array([eval_h_hyperbolic(a, self.params, t) for a, t in zip(self.n_g, self.t)])
        return np.array(
            [eval_h_parabolic(a, self.params, t, b) for a, t, b in zip(self.n_g, self.t, self.n_bl)]
        )

    @property
    def j(self) -> np.ndarray:
        return 2.0 * self.params.beta * self.n_g / self.n_s**3 + self.params.beta * self.h

    @property
    def H(self) -> np.ndarray:
        if self.variant == "hyperbolic":
            return np.array([eval_H(a, self.params, s) for a, s in zip(self.N_G, self.tau)])
        return self.t * self.h

    @property
    def J(self) -> np.ndarray:
        N_s = derive_profile(self.params).N_s
        return 2.0 * self.params.beta * self.N_G / N_s**3 + self.params.beta * self.H


# ---------------------------------------------------------------- X-Y system


def xy_matrix(gamma: float) -> np.ndarray:
    """Homogeneous matrix of the ``(X, Y)`` system."""
    g = gamma
    a = (1.0 - g) / g
    b = (1.0 - g) * (1.0 - 2.0 * g) / g
    return np.array([[-a, b], [-a, b - g]])


def xy_eigenpairs(gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigenvalues ``(-(1-gamma), -1)`` and eigenvectors (columns)."""
    g = gamma
    return (
        np.array([-(1.0 - g), -1.0]),
        np.array([[1.0 - 2.0 * g, 1.0 - g], [1.0 - g, 1.0]]),
    )


@dataclass
class XYResult:
    tau: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    N: np.ndarray
    delta1_max: float
    delta1_bound: float


def _as_func(f) -> Callable[[float], float]:
    if f is None:
        return lambda s: 0.0
    if callable(f):
        return f
    return lambda s, c=float(f): c


def integrate_xy_system(
    gamma: float,
    tau0: float,
    tau_end: float,
    *,
    delta1=None,
    delta2=None,
    H=None,
    eta: float | None = None,
    dtau: float = 0.01,
) -> XYResult:
    """Classical RK4 for the forced ``(X, Y)`` system from ``X = Y = 0``.

    Parameters
    ----------
    delta1, delta2, H:
        Forcing functions of ``tau`` (callables or constants; default zero).
    eta:
        Target decay rate in ``(0, 1 - gamma)``.  When given, ``|delta1|`` is
        checked against ``gamma^3 (1 - gamma - eta)/16`` on the step nodes.

    Raises
    ------
    ValueError
        If ``eta`` is out of range or ``delta1`` exceeds the admissible bound.
    """
    g = gamma
    if not 0 < g < 0.5:
        raise ValueError("the X-Y system needs gamma in (0, 1/2)")
    d1, d2, hf = _as_func(delta1), _as_func(delta2), _as_func(H)
    n = max(1, int(math.ceil((tau_end - tau0) / dtau)))
    tau = np.linspace(tau0, tau_end, n + 1)
    bound = math.nan
    d1_vals = np.abs([d1(s) for s in tau])
    if eta is not None:
        if not 0 < eta < 1 - g:
            raise ValueError(f"eta must lie in (0, {1 - g}), got {eta}")
        bound = g**3 * (1 - g - eta) / 16.0
        if np.max(d1_vals) > bound:
            raise ValueError(
                f"|delta1| = {np.max(d1_vals):.3g} exceeds the admissible bound {bound:.3g}"
            )
    A = xy_matrix(g)
    a = (1.0 - g) / g

    def rhs(s: float, z: np.ndarray) -> np.ndarray:
        D1, f = d1(s), d2(s) + hf(s)
        X, Y = z
        return A @ z + np.array([f * (1 + D1) - a * D1 * (X - (1 - 2 * g) * Y), f])

    Z = np.zeros((n + 1, 2))
    h = tau[1] - tau[0]
    for k in range(n):
        s, z = tau[k], Z[k]
        k1 = rhs(s, z)
        k2 = rhs(s + h / 2, z + h / 2 * k1)
        k3 = rhs(s + h / 2, z + h / 2 * k2)
        k4 = rhs(s + h, z + h * k3)
        Z[k + 1] = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    X, Y = Z[:, 0], Z[:, 1]
    N = -a * X + a * (1 - 2 * g) * Y + np.array([d2(s) for s in tau])
    return XYResult(tau, X, Y, N, float(np.max(d1_vals)), bound)


# ----------------------------------------------------------------- Volterra


def log_tau_grid(tau0: float, tau_end: float, first: float = 1e-4, dmax: float = 0.05) -> np.ndarray:
    """Steps growing geometrically from ``first`` up to ``dmax``."""
    steps = []
    s, h = 0.0, first
    span = tau_end - tau0
    while s < span - 1e-14:
        h = min(h, dmax, span - s)
        steps.append(h)
        s += h
        h *= 1.15
    return tau0 + np.concatenate(([0.0], np.cumsum(steps)))


@dataclass
class VolterraResult:
    tau: np.ndarray
    N_G: np.ndarray
    J: np.ndarray
    M: np.ndarray
    Mp: np.ndarray
    data_term: np.ndarray
    delta1: np.ndarray
    sweeps: np.ndarray


def _exp_increment(Ia: np.ndarray, Ib: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``int exp(I)`` over an interval where ``I`` is linear from Ia to Ib."""
    d = Ib - Ia
    small = np.abs(d) < 1e-8
    safe = np.where(small, 1.0, d)
    ratio = np.where(small, 1.0 + 0.5 * d, np.expm1(safe) / safe)
    return h * np.exp(Ia) * ratio


def solve_NG_volterra(
    params: ModelParams,
    data,
    tau0: float,
    tau_end: float,
    *,
    variant: str = "hyperbolic",
    tau: np.ndarray | None = None,
    picard_tol: float = 1e-13,
    picard_max: int = 50,
    include_H: bool = True,
) -> VolterraResult:
    """Solve the self-consistent integral equation for ``N_G``.

    ``N_G(tau) = e^((tau-tau0)/2) nu_0(M)/M'
                 + int_tau0^tau J(r) K(tau, r) dr``

    with ``K(tau, r) = -e^((tau-r)/2) M1(M(tau,r)) / M'(tau,r)`` the moment of the
    transported ``d/dy(y F_s)``, ``M1`` the tail moment of ``F_s`` and
    ``(M, M')`` the rescaled characteristics of the drift ``gamma + J``.  Both
    the kernel and the data term depend on ``N_G`` through ``J``; every step
    is closed by Picard iteration on the new value.

    Parameters
    ----------
    data:
        Profile of ``G_0 + G^_0`` in rescaled variables (``tail_mass`` and
        ``tail_moment`` needed); ``None`` means zero data.
    variant:
        ``"hyperbolic"`` uses ``H``; ``"parabolic"`` replaces it with the
        boundary-layer-aware ``t h`` and keeps the transport kernel.
    tau:
        Time nodes; defaults to :func:`log_tau_grid`.
    include_H:
        Keep the nonlinear remainder ``H`` in ``J``; ``False`` leaves the
        linear part ``2 beta N_G / N_s^3`` only (zero data then gives zero).

    Raises
    ------
    RuntimeError
        If a step needs more than ``picard_max`` sweeps.
    """
    if variant not in ("hyperbolic", "parabolic"):
        raise ValueError(f"unknown variant {variant!r}")
    prof = derive_profile(params)
    N_s, beta = prof.N_s, params.beta
    g = params.gamma
    taus = log_tau_grid(tau0, tau_end) if tau is None else np.asarray(tau, dtype=float)
    n = taus.size

    if not include_H:
        def J_of(N: float, s: float) -> float:
            return 2.0 * beta * N / N_s**3
    elif variant == "hyperbolic":
        def J_of(N: float, s: float) -> float:
            return eval_J(N, params, s)
    else:
        def J_of(N: float, s: float) -> float:
            t = math.exp(s)
            return t * eval_j_parabolic(N * math.sqrt(t), params, t)

    def nu0(M: float) -> float:
        return 0.0 if data is None else float(shifted_moment(data, M))

    N = np.zeros(n)
    J = np.zeros(n)
    I = np.zeros(n)
    E = np.zeros(n)
    Ms = np.zeros(n)
    Mps = np.ones(n)
    D = np.zeros(n)
    sweeps = np.zeros(n, dtype=int)
    N[0] = nu0(0.0)
    D[0] = N[0]
    J[0] = J_of(N[0], taus[0])
    h = np.diff(taus)
    for i in range(1, n):
        hi = h[i - 1]
        guess = N[i - 1]
        k_prev = taus[:i]
        w = np.zeros(i + 1)
        w[:i] += 0.5 * h[:i]
        w[1:i + 1] += 0.5 * h[:i]
        for it in range(1, picard_max + 1):
            Ji = J_of(guess, taus[i])
            Ii = I[i - 1] + 0.5 * hi * ((g + J[i - 1]) + (g + Ji))
            Ei = E[i - 1] + float(_exp_increment(np.array(I[i - 1]), np.array(Ii), np.array(hi)))
            # kernel against earlier nodes k < i and the diagonal node
            Mp_k = np.exp(Ii - I[:i])
            M_k = np.exp(-I[:i]) * (Ei - E[:i])
            K = -np.exp(0.5 * (taus[i] - k_prev)) * prof.tail_moment(M_k) / Mp_k
            K_ii = -float(prof.tail_moment(0.0))
            Mi, Mpi = Ei, math.exp(Ii)
            Di = math.exp(0.5 * (taus[i] - taus[0])) * nu0(Mi) / Mpi
            new = Di + float(np.dot(w[:i], J[:i] * K)) + w[i] * Ji * K_ii
            if not math.isfinite(new):
                raise FloatingPointError(f"N_G became non-finite at tau={taus[i]}")
            done = abs(new - guess) <= picard_tol * max(1.0, abs(new))
            guess = new
            if done:
                break
        else:
            raise RuntimeError(f"Picard iteration did not converge at tau={taus[i]}")
        N[i], J[i], I[i], E[i] = guess, J_of(guess, taus[i]), Ii, Ei
        Ms[i], Mps[i], D[i], sweeps[i] = Mi, Mpi, Di, it
    # measured kernel deviation from the J = 0 closed form, against tau0
    s = taus - taus[0]
    closed = 1.0 - (1.0 - 2.0 * g) * np.exp(-g * s)
    K0 = -np.exp(0.5 * s) * prof.tail_moment(Ms) / Mps
    delta1 = K0 * (2.0 * beta / N_s**3) / (-(1.0 - g) / g) - closed
    return VolterraResult(taus, N, J, Ms, Mps, D, delta1, sweeps)


# -------------------------------------------------------------- rate fitting


@dataclass
class DecayFit:
    rate: float
    amplitude: float
    r2: float
    sign_changes: list[float] = field(default_factory=list)
    n_samples: int = 0


def fit_decay_rate(
    tau: Sequence[float],
    values: Sequence[float],
    window: tuple[float, float] | None = None,
    *,
    floor: float = 0.0,
) -> DecayFit:
    """Least-squares fit of ``log|N| = log(amplitude) - rate * tau``.

    Samples with ``|N| <= floor`` are dropped, and so is every segment that
    ends at a sign change (the fit starts after the last one in the window).

    Raises
    ------
    ValueError
        If fewer than 10 usable samples remain.
    """
    tau = np.asarray(tau, dtype=float)
    v = np.asarray(values, dtype=float)
    sel = np.ones(tau.size, dtype=bool)
    if window is not None:
        sel &= (tau >= window[0]) & (tau <= window[1])
    tw, vw = tau[sel], v[sel]
    sgn = np.sign(vw)
    flips = np.flatnonzero(sgn[1:] * sgn[:-1] < 0)
    changes = [float(0.5 * (tw[k] + tw[k + 1])) for k in flips]
    keep = np.abs(vw) > floor
    if flips.size:
        keep &= np.arange(tw.size) > flips[-1]
    tw, vw = tw[keep], vw[keep]
    if tw.size < 10:
        raise ValueError(f"degenerate window: {tw.size} usable samples (need >= 10)")
    y = np.log(np.abs(vw))
    slope, icpt = np.polyfit(tw, y, 1)
    pred = slope * tw + icpt
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(-slope), float(math.exp(icpt)), r2, changes, int(tw.size))
