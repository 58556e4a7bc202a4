"""Transport limit: exact affine characteristics and the mean-field solver.

For a drift coefficient that is affine in ``x`` the transport problem

    df/dt = d/dx((1 - a(t) x) f)

is solved exactly by ``f(x, t) = m'(t) f0(m'(t) x + m(t))`` with
``dm'/dt = -a m'`` and ``dm/dt = m'``.  Near the self-similar state
``a = (1 - gamma)/t - j(t)``.  The mean-field problem closes the loop through
``a = beta / (1 + n_f^2)`` where ``n_f = nu_0(m) / m'`` is available in closed
form from the tail integrals of the initial profile.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .grids import DensityField, RadialGrid, PHYSICAL
from .params import ModelParams, SelfSimilarProfile, derive_profile
from .profiles import GridProfile, Profile, shifted_moment

__all__ = [
    "CharacteristicsMap",
    "MeanFieldTrace",
    "TransportedProfile",
    "build_map",
    "apply_T",
    "moment_of_T_dxfs",
    "kernel_delta1",
    "solve_transport",
    "upwind_fv_transport",
    "profile_limit_diagnostics",
    "as_profile",
]


@dataclass
class MeanFieldTrace:
    """Time series of the first moment ``n_f(t)``."""

    t: np.ndarray
    n_f: np.ndarray

    @property
    def tau(self) -> np.ndarray:
        return np.log(self.t)

    @property
    def N_F(self) -> np.ndarray:
        return self.n_f / np.sqrt(self.t)

    def N_G(self, N_s: float) -> np.ndarray:
        return self.N_F - N_s


@dataclass
class CharacteristicsMap:
    """Samples of ``(m(t, t0), m'(t, t0))``.

    ``evaluate`` returns exact values at any ``t`` in range when the map was
    built from an ODE solution; otherwise only the sample times are available.
    """

    t0: float
    times: np.ndarray
    m: np.ndarray
    mp: np.ndarray
    j_trace: Callable[[float], float] | None = None
    _dense: Callable | None = field(default=None, repr=False)

    def at(self, t: float) -> tuple[float, float]:
        """Return ``(m(t, t0), m'(t, t0))``."""
        if t == self.t0:
            return 0.0, 1.0
        if self._dense is not None:
            lo, hi = self.times[0], self.times[-1]
            if not lo - 1e-12 * hi <= t <= hi * (1 + 1e-12):
                raise ValueError(f"t={t} outside map range [{lo}, {hi}]")
            return self._dense(t)
        k = np.flatnonzero(np.isclose(self.times, t, rtol=1e-13, atol=0.0))
        if k.size == 0:
            raise ValueError(f"t={t} is not a sample time of this map")
        return float(self.m[k[0]]), float(self.mp[k[0]])

    def between(self, t: float, r: float) -> tuple[float, float]:
        """Return ``(m(t, r), m'(t, r))`` for ``t0 <= r <= t``."""
        m_t, mp_t = self.at(t)
        m_r, mp_r = self.at(r)
        return (m_t - m_r) / mp_r, mp_t / mp_r

    def selfsim(self, t: float) -> tuple[float, float]:
        """Rescaled pair ``(M, M') = (m/t0, m' t/t0)``."""
        m, mp = self.at(t)
        return m / self.t0, mp * t / self.t0


def build_map(
    j_trace: Callable[[float], float] | float,
    params: ModelParams,
    t0: float,
    t_end: float,
    *,
    n_samples: int = 201,
    rtol: float = 1e-12,
) -> CharacteristicsMap:
    """Integrate ``m' = (t/t0)^-(1-gamma) exp(int j)`` and ``m = int m'``.

    Parameters
    ----------
    j_trace:
        Coefficient perturbation ``j(t)`` (callable or constant).
    """
    if t0 < 1:
        raise ValueError("t0 must be >= 1")
    if t_end < t0:
        raise ValueError("t_end must be >= t0")
    jf = (lambda t: float(j_trace)) if np.isscalar(j_trace) else j_trace
    probe = np.linspace(t0, t_end, 17)
    if not np.all(np.isfinite([jf(s) for s in probe])):
        raise ValueError("j_trace has non-finite samples")
    g = params.gamma

    def rhs(t, z):
        jv = jf(t)
        if not math.isfinite(jv):
            raise ValueError(f"non-finite j at t={t}")
        return [jv, (t / t0) ** (g - 1.0) * math.exp(z[0])]

    times = np.geomspace(t0, t_end, n_samples) if t_end > t0 else np.array([t0])
    if t_end == t0:
        return CharacteristicsMap(t0, times, np.zeros(1), np.ones(1), jf)
    sol = solve_ivp(rhs, (t0, t_end), [0.0, 0.0], method="DOP853", rtol=rtol,
                    atol=1e-14, dense_output=True)
    if not sol.success:
        raise RuntimeError(sol.message)

    def dense(t: float) -> tuple[float, float]:
        z = sol.sol(t)
        return float(z[1]), float((t / t0) ** (g - 1.0) * math.exp(z[0]))

    vals = np.array([dense(t) for t in times])
    vals[0] = (0.0, 1.0)
    return CharacteristicsMap(t0, times, vals[:, 0], vals[:, 1], jf, dense)


@dataclass(frozen=True)
class TransportedProfile:
    """``x -> mp * base(mp*x + m)`` with exact tail integrals."""

    base: object
    m: float
    mp: float

    def __call__(self, x):
        return self.mp * self.base(self.mp * np.asarray(x, dtype=float) + self.m)

    def tail_mass(self, r):
        return self.base.tail_mass(self.mp * np.asarray(r, dtype=float) + self.m)

    def tail_moment(self, r):
        R = self.mp * np.asarray(r, dtype=float) + self.m
        return (self.base.tail_moment(R) - self.m * self.base.tail_mass(R)) / self.mp

    def first_moment(self) -> float:
        """``int_0^inf x T phi dx = nu_phi(m) / m'``."""
        return float(shifted_moment(self.base, self.m)) / self.mp


def as_profile(phi0) -> object:
    """Wrap a gridded field as an interpolating profile; pass profiles through."""
    if isinstance(phi0, DensityField):
        return GridProfile(
            np.concatenate(([0.0], phi0.grid.centers, [phi0.grid.x_max])),
            np.concatenate(([phi0.values[0]], phi0.values, [phi0.values[-1]])),
        )
    return phi0


def apply_T(
    cmap: CharacteristicsMap,
    phi0,
    t: float,
    grid: RadialGrid | None = None,
) -> DensityField | TransportedProfile:
    """Push ``phi0`` forward to time ``t``.

    Gridded input returns a field on the same (or the given) grid, evaluated
    through a monotone cubic interpolant.  Profile input without a grid
    returns the exact :class:`TransportedProfile`.
    """
    m, mp = cmap.at(t)
    tp = TransportedProfile(as_profile(phi0), m, mp)
    if grid is None and not isinstance(phi0, DensityField):
        return tp
    grid = grid if grid is not None else phi0.grid
    signed = isinstance(phi0, DensityField) and phi0.signed
    return DensityField(grid, tp(grid.centers), PHYSICAL, t, signed)


def moment_of_T_dxfs(
    params: ModelParams,
    t: float,
    r: float,
    cmap: CharacteristicsMap,
) -> float:
    """``(2 beta / N_s^3) int x T(t,r) d/dx(x f_s(x,r)) dx`` from the exact map.

    Integrating by parts gives ``-r^(1/2) M1(m/r) / m'`` for the unscaled
    moment, with ``M1(z) = int_z^inf y F_s dy``.
    """
    if t < r:
        raise ValueError("need t >= r")
    prof = derive_profile(params)
    m, mp = cmap.between(t, r)
    raw = -math.sqrt(r) * float(prof.tail_moment(m / r)) / mp
    return 2.0 * params.beta / prof.N_s**3 * raw


def kernel_closed_form(params: ModelParams, t: float, r: float) -> float:
    """``-(1-gamma)/gamma t^(1/2) (1 - (1-2gamma)(t/r)^-gamma)``."""
    g = params.gamma
    return -(1 - g) / g * math.sqrt(t) * (1 - (1 - 2 * g) * (t / r) ** (-g))


def kernel_delta1(params: ModelParams, t: float, r: float, cmap: CharacteristicsMap) -> float:
    """Deviation ``delta_1`` of the computed kernel from its ``j = 0`` form."""
    g = params.gamma
    val = moment_of_T_dxfs(params, t, r, cmap)
    return val / (-(1 - g) / g * math.sqrt(t)) - 1 + (1 - 2 * g) * (t / r) ** (-g)


@dataclass
class TransportResult:
    trace: MeanFieldTrace
    m: np.ndarray
    mp: np.ndarray
    profile0: object
    snapshots: list[DensityField]
    picard_sweeps: np.ndarray

    def profile_at(self, k: int) -> TransportedProfile:
        return TransportedProfile(self.profile0, float(self.m[k]), float(self.mp[k]))


def solve_transport(
    f0,
    params: ModelParams,
    t0: float,
    t_end: float,
    *,
    dt_rel: float = 0.05,
    dt_max: float = math.inf,
    picard_tol: float = 1e-10,
    picard_max: int = 5,
    dn_tol: float = math.inf,
    j_trace: Callable[[float], float] | None = None,
    snapshot_times: Sequence[float] = (),
    snapshot_grid: Callable[[float], RadialGrid] | RadialGrid | None = None,
) -> TransportResult:
    """Mean-field transport with the coefficient frozen per step.

    On ``[t_k, t_k+1]`` the drift ``1 - a x`` uses a constant ``a`` (the
    trapezoid average of ``beta/(1+n_f^2)`` at both ends), applied through the
    exact affine map.  Picard sweeps re-evaluate the end value until ``n_f``
    changes by less than ``picard_tol``.  Steps are halved while the relative
    change of ``n_f`` over a step exceeds ``dn_tol``.

    With ``j_trace`` the coefficient is prescribed, ``a = (1-gamma)/t - j``,
    and the map comes from :func:`build_map`.

    Returns
    -------
    TransportResult
        Mean-field trace, composite map samples and requested snapshots.
    """
    if t0 < 1:
        raise ValueError("t0 must be >= 1")
    prof0 = as_profile(f0)
    beta = params.beta
    snaps_t = sorted(float(s) for s in snapshot_times)

    def nf(m: float, mp: float) -> float:
        return float(shifted_moment(prof0, m)) / mp

    def a_of(n: float) -> float:
        return beta / (1.0 + n * n)

    ts, ms, mps, sweeps = [t0], [0.0], [1.0], [0]
    if j_trace is not None:
        cmap = build_map(j_trace, params, t0, t_end)
        grid_t = np.unique(np.concatenate([cmap.times, snaps_t]))
        for t in grid_t[1:]:
            m, mp = cmap.at(float(t))
            ts.append(float(t))
            ms.append(m)
            mps.append(mp)
            sweeps.append(0)
    else:
        t, m, mp = t0, 0.0, 1.0
        n_cur = nf(m, mp)
        pending = list(snaps_t)
        while t < t_end * (1 - 1e-14):
            dt = min(dt_rel * t, dt_max, t_end - t)
            if pending and pending[0] > t:
                dt = min(dt, pending[0] - t)
            while True:
                a0 = a_of(n_cur)
                a = a0
                n_new = n_cur
                k = 0
                for k in range(1, picard_max + 1):
                    e = math.exp(-a * dt)
                    mp_new = mp * e
                    m_new = m + mp * (-math.expm1(-a * dt)) / a if a > 0 else m + mp * dt
                    n_prev = n_new
                    n_new = nf(m_new, mp_new)
                    if not math.isfinite(n_new):
                        raise FloatingPointError(f"n_f became non-finite at t={t + dt}")
                    a = 0.5 * (a0 + a_of(n_new))
                    if abs(n_new - n_prev) <= picard_tol * max(1.0, abs(n_new)):
                        break
                rel = abs(n_new - n_cur) / max(abs(n_cur), 1e-300)
                if rel <= dn_tol or dt <= 1e-8 * t:
                    break
                dt *= 0.5
            t, m, mp, n_cur = t + dt, m_new, mp_new, n_new
            ts.append(t)
            ms.append(m)
            mps.append(mp)
            sweeps.append(k)
            if pending and abs(pending[0] - t) <= 1e-12 * t:
                pending.pop(0)
    ts_a, ms_a, mps_a = np.array(ts), np.array(ms), np.array(mps)
    n_f = np.array([nf(m, mp) for m, mp in zip(ms_a, mps_a)])
    snapshots = []
    for s in snaps_t:
        k = int(np.argmin(np.abs(ts_a - s)))
        tp = TransportedProfile(prof0, float(ms_a[k]), float(mps_a[k]))
        if snapshot_grid is None:
            continue
        grid = snapshot_grid(ts_a[k]) if callable(snapshot_grid) else snapshot_grid
        snapshots.append(DensityField(grid, np.maximum(tp(grid.centers), 0.0), PHYSICAL, float(ts_a[k])))
    return TransportResult(MeanFieldTrace(ts_a, n_f), ms_a, mps_a, prof0, snapshots,
                           np.array(sweeps))


def upwind_fv_transport(
    f0: DensityField,
    a_trace: Callable[[float], float],
    t0: float,
    t_end: float,
    *,
    cfl: float = 0.9,
    dt: float | None = None,
    inflow: float = 0.0,
    snapshot_times: Sequence[float] = (),
) -> list[DensityField]:
    """First-order upwind finite volumes for ``df/dt + d/dx(u f) = 0``.

    The velocity is ``u = a(t) x - 1``.  Faces with outgoing velocity at the
    domain ends are outflow; incoming faces take the value ``inflow``.  The
    step is ``dt`` if given, else the largest one with Courant number ``cfl``.

    Raises
    ------
    ValueError
        If the Courant number exceeds 0.9.
    """
    if cfl > 0.9:
        raise ValueError(f"CFL number {cfl} exceeds 0.9")
    grid = f0.grid
    e, h = grid.edges, grid.widths
    f = f0.values.astype(float).copy()
    t = t0
    out = []
    pending = sorted(float(s) for s in snapshot_times) + [t_end]
    hmin = h.min()
    while pending:
        target = pending.pop(0)
        while t < target * (1 - 1e-14):
            u = a_trace(t) * e - 1.0
            umax = np.max(np.abs(u))
            step_cfl = cfl * hmin / max(umax, 1e-300)
            step = step_cfl if dt is None else dt
            if dt is not None and dt * np.max(np.abs(u)[:-1] / h) > 0.9 * (1 + 1e-12):
                raise ValueError("time step violates CFL <= 0.9")
            step = min(step, target - t)
            fl = np.concatenate(([inflow], f))
            fr = np.concatenate((f, [inflow]))
            flux = np.where(u > 0, u * fl, u * fr)
            f = f - step / h * (flux[1:] - flux[:-1])
            t += step
        out.append(DensityField(grid, f.copy(), PHYSICAL, t, signed=True))
    return out


def profile_limit_diagnostics(
    phi0,
    cmap: CharacteristicsMap,
    times: Sequence[float],
    profile: SelfSimilarProfile,
    *,
    y_max: float = 10.0,
    n_points: int = 2001,
) -> list[dict]:
    """Track the rescaled push-forward of a self-similar profile ``Phi``.

    ``phi0`` is in rescaled variables at log-time ``tau0 = ln t0``.  For each
    ``t`` the rescaled map is ``M = m/t0``, ``M' = m' t/t0`` and
    ``T~Phi(y) = e^((tau-tau0)/2) M' Phi(M' y + M)``.

    Returns
    -------
    list of dict
        Rows with ``tau, M, Mp, ratio, nu, sup_error``.
    """
    y = np.linspace(0.0, y_max, n_points)
    fs = profile(y)
    rows = []
    t0 = cmap.t0
    for t in times:
        M, Mp = cmap.selfsim(float(t))
        s = math.log(t / t0)
        F = math.exp(0.5 * s) * Mp * phi0(Mp * y + M)
        rows.append(
            dict(
                tau=math.log(t),
                M=M,
                Mp=Mp,
                ratio=Mp / M if M > 0 else math.nan,
                nu=float(shifted_moment(phi0, M)),
                sup_error=float(np.max(np.abs(F - fs))),
            )
        )
    return rows
