"""Unreduced pore model: Smoluchowski equation in the pore radius coupled to
the transmembrane-potential balance.

    dn/dt = D d/dr(dn/dr + dW/dr n) + s(r)(a0 exp(-W_pore) - n)
    C_m dV/dt + S_m V + 2 sigma_c V int r n dr = (sigma_c/L)(V_ext - V)

with ``W = W_pore - Ctilde_m r^2 V^2`` and ``k_B T = 1``.  The pore energy is a
C1 piecewise cubic: a barrier of height ``E*`` at ``r*``, a local well near
``r0`` and linear growth with slope ``2 pi sigma_l`` beyond.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.linalg import eig_banded, solve_banded

from .grids import DensityField, RadialGrid, PHYSICAL
from .parabolic import ParabolicRunConfig, bernoulli, solve_parabolic
from .params import ModelParams

__all__ = [
    "PoreEnergy",
    "FullModelParams",
    "FullModelResult",
    "quasi_static_vm",
    "solve_full_model",
    "interior_relaxation_time",
    "reduction_report",
]


def _hermite(r, r_a, r_b, w_a, w_b, d_a, d_b):
    h = r_b - r_a
    s = (r - r_a) / h
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * w_a + h10 * h * d_a + h01 * w_b + h11 * h * d_b


def _hermite_slope(r, r_a, r_b, w_a, w_b, d_a, d_b):
    h = r_b - r_a
    s = (r - r_a) / h
    return (
        (6 * s**2 - 6 * s) * w_a / h
        + (3 * s**2 - 4 * s + 1) * d_a
        + (-6 * s**2 + 6 * s) * w_b / h
        + (3 * s**2 - 2 * s) * d_b
    )


@dataclass(frozen=True)
class PoreEnergy:
    """C1 piecewise-cubic pore energy.

    ``W(0) = W'(0) = 0``; cubic rise to the barrier ``(r*, E*)`` with zero
    slope; cubic descent to ``(r0, E0)`` arriving with slope
    ``2 pi sigma_l``; linear ``E0 + 2 pi sigma_l (r - r0)`` beyond.
    Matching the slope at ``r0`` puts the well minimum slightly inside ``r0``.
    """

    Estar: float = 4.0
    E0: float = 1.0
    rstar: float = 0.3
    r0: float = 1.0
    sigma_l: float = 1.0 / (20.0 * math.pi)

    def __post_init__(self) -> None:
        if not 0 < self.rstar < self.r0:
            raise ValueError("need 0 < r* < r0")
        if not self.E0 < self.Estar:
            raise ValueError("need E0 < E*")
        if self.sigma_l <= 0:
            raise ValueError("sigma_l must be positive")

    @property
    def slope(self) -> float:
        return 2.0 * math.pi * self.sigma_l

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        k = self.slope
        inner = _hermite(r, 0.0, self.rstar, 0.0, self.Estar, 0.0, 0.0)
        mid = _hermite(r, self.rstar, self.r0, self.Estar, self.E0, 0.0, k)
        outer = self.E0 + k * (r - self.r0)
        return np.where(r <= self.rstar, inner, np.where(r <= self.r0, mid, outer))

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        k = self.slope
        inner = _hermite_slope(r, 0.0, self.rstar, 0.0, self.Estar, 0.0, 0.0)
        mid = _hermite_slope(r, self.rstar, self.r0, self.Estar, self.E0, 0.0, k)
        return np.where(r <= self.rstar, inner, np.where(r <= self.r0, mid, k + 0.0 * r))


@dataclass(frozen=True)
class FullModelParams:
    """Physical constants of the full model (``k_B T = 1``).

    ``Vext`` is a constant or a callable of time.  ``source_amplitude`` scales
    the formation window ``s(r) = c (1 - (r/r*)^2)^2`` on ``[0, r*]``.
    """

    D: float = 1.0
    kBT: float = 1.0
    a0: float = 1.0
    sigma_c: float = 1.0
    S_m: float = 0.1
    C_m: float = 1e-3
    Ctilde_m: float = 0.02
    L: float = 1.0
    Vext: float | Callable[[float], float] = 1.0
    energy: PoreEnergy = field(default_factory=PoreEnergy)
    source_amplitude: float = 1.0

    def __post_init__(self) -> None:
        if self.kBT != 1.0:
            raise ValueError("energies are measured in units of k_B T; set kBT = 1")
        for name in ("D", "a0", "sigma_c", "L"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.S_m < 0 or self.C_m < 0 or self.Ctilde_m < 0:
            raise ValueError("S_m, C_m and Ctilde_m must be nonnegative")
        if not self.rplus > self.energy.r0:
            raise ValueError("need rplus = 1/(2 pi sigma_l) > r0")

    @property
    def rplus(self) -> float:
        return 1.0 / (2.0 * math.pi * self.energy.sigma_l)

    @property
    def Tstar(self) -> float:
        return math.exp(self.energy.Estar / self.kBT) / self.D

    @property
    def a1(self) -> float:
        """``2 L int_0^r0 r a0 exp(-W_pore) dr``."""
        e = self.energy
        val, _ = quad(lambda r: r * math.exp(-float(e(r))), 0.0, e.r0, epsabs=1e-14, epsrel=1e-13,
                      points=[e.rstar], limit=200)
        return 2.0 * self.L * self.a0 * val

    @property
    def denominator(self) -> float:
        return self.L * self.S_m / self.sigma_c + 1.0 + self.a1

    @property
    def beta_eff(self) -> float:
        return 2.0 * self.rplus**2 * self.Ctilde_m / self.denominator**2

    @property
    def mu_eff(self) -> float:
        return 2.0 * self.L * self.rplus**2 / self.denominator * self.a0 * math.exp(-self.energy.E0)

    def vext(self, t: float) -> float:
        return float(self.Vext(t)) if callable(self.Vext) else float(self.Vext)

    def source(self, r):
        r = np.asarray(r, dtype=float)
        s = np.clip(1.0 - (r / self.energy.rstar) ** 2, 0.0, None)
        return self.source_amplitude * s * s

    def equilibrium(self, r):
        return self.a0 * np.exp(-self.energy(r))


def quasi_static_vm(params: FullModelParams, vext: float, pore_integral: float) -> float:
    """``V_ext / (L S_m/sigma_c + 1 + 2 L int r n dr)``."""
    return vext / (params.L * params.S_m / params.sigma_c + 1.0 + 2.0 * params.L * pore_integral)


@dataclass
class FullModelResult:
    t: np.ndarray
    Vm: np.ndarray
    pore_integral: np.ndarray
    snapshots: list[DensityField]
    final: DensityField
    max_flux: np.ndarray


class _PotentialOperator:
    """Fitted fluxes ``D (dn/dr + dW/dr n)`` on a radial grid, no flux at both ends."""

    def __init__(self, grid: RadialGrid, D: float):
        self.grid = grid
        self.D = D
        c = grid.centers
        self.d = np.diff(c)
        self.h = grid.widths

    def bands(self, W: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        P = np.diff(W)
        g = self.D / self.d
        Bp, Bm = bernoulli(P), bernoulli(-P)
        n = W.size
        up = np.zeros(n)
        lo = np.zeros(n)
        diag = np.zeros(n)
        # interior face k between cells k, k+1: flux = g (Bm n_(k+1) - Bp n_k)
        up[:-1] = g * Bm / self.h[:-1]
        diag[:-1] -= g * Bp / self.h[:-1]
        lo[1:] = g * Bp / self.h[1:]
        diag[1:] -= g * Bm / self.h[1:]
        return lo, diag, up

    def fluxes(self, n: np.ndarray, W: np.ndarray) -> np.ndarray:
        P = np.diff(W)
        return self.D / self.d * (bernoulli(-P) * n[1:] - bernoulli(P) * n[:-1])


def solve_full_model(
    params: FullModelParams,
    n_init: DensityField,
    Vm_init: float,
    t_end: float,
    *,
    dt: float = 1e-3,
    t_start: float = 0.0,
    snapshot_times: Sequence[float] = (),
) -> FullModelResult:
    """Operator-split time stepping of the full model.

    Each step (1) solves the drift-diffusion part implicitly with fitted fluxes
    for the potential ``W_pore - Ctilde_m r^2 V_m^2``, (2) relaxes towards
    ``a0 exp(-W_pore)`` exactly on the formation window and (3) updates ``V_m``
    implicitly with the new ``int r n dr``.

    Raises
    ------
    FloatingPointError
        If the state stops being finite; the message suggests a smaller ``dt``.
    """
    if np.min(n_init.values) < 0:
        raise ValueError("n_init must be nonnegative")
    grid = n_init.grid
    r, h = grid.centers, grid.widths
    op = _PotentialOperator(grid, params.D)
    Wp = params.energy(r)
    eq = params.a0 * np.exp(-Wp)
    s = params.source(r)
    n = n_init.values.astype(float).copy()
    V = float(Vm_init)
    t = t_start
    moment = lambda v: float(np.dot(r * h, v))
    ts, Vs, Is, fluxmax = [t], [V], [moment(n)], [float(np.max(np.abs(op.fluxes(n, Wp - params.Ctilde_m * r**2 * V**2))))]
    snaps = []
    pending = sorted(float(x) for x in snapshot_times)
    nsteps = int(math.ceil((t_end - t_start) / dt - 1e-9))
    for k in range(nsteps):
        step = min(dt, t_end - t)
        W = Wp - params.Ctilde_m * r**2 * V**2
        lo, diag, up = op.bands(W)
        ab = np.zeros((3, n.size))
        ab[0, 1:] = -step * up[:-1]
        ab[1] = 1.0 - step * diag
        ab[2, :-1] = -step * lo[1:]
        n = solve_banded((1, 1), ab, n, check_finite=False)
        n = eq + (n - eq) * np.exp(-s * step)
        I = moment(n)
        vx = params.vext(t + step)
        sc, L = params.sigma_c, params.L
        V = (params.C_m * V / step + sc * vx / L) / (params.C_m / step + params.S_m + 2 * sc * I + sc / L)
        t += step
        if not (np.all(np.isfinite(n)) and math.isfinite(V)):
            raise FloatingPointError(f"state became non-finite at t={t}; try dt < {step / 2:g}")
        ts.append(t)
        Vs.append(V)
        Is.append(I)
        fluxmax.append(float(np.max(np.abs(op.fluxes(n, W)))))
        if pending and t >= pending[0] - 1e-12:
            snaps.append(DensityField(grid, n.copy(), PHYSICAL, t))
            pending.pop(0)
    final = DensityField(grid, np.maximum(n, 0.0), PHYSICAL, t)
    return FullModelResult(np.array(ts), np.array(Vs), np.array(Is), snaps, final, np.array(fluxmax))


def interior_relaxation_time(params: FullModelParams, n_cells: int = 400) -> float:
    """Inverse spectral gap of the interior operator on ``[0, r0]``.

    The interior operator is the Smoluchowski generator with reflecting ends
    plus the relaxation ``-s(r) n``, written in symmetric form through the
    weight ``exp(W_pore)``.
    """
    e = params.energy
    grid = RadialGrid.uniform(e.r0, n_cells)
    op = _PotentialOperator(grid, params.D)
    W = e(grid.centers)
    lo, diag, up = op.bands(W)
    diag = diag - params.source(grid.centers)
    # similarity transform with sqrt(h e^W) makes the generator symmetric
    w = np.sqrt(grid.widths * np.exp(W))
    off = up[:-1] * w[:-1] / w[1:]
    ab = np.zeros((2, diag.size))
    ab[0, 1:] = off
    ab[1] = diag
    vals = eig_banded(ab, lower=False, eigvals_only=True)
    slowest = float(np.max(vals))
    if slowest >= -1e-10 * float(np.max(np.abs(vals))):
        raise ValueError("interior operator has no spectral gap (zero source?)")
    return -1.0 / slowest


def reduction_report(
    params: FullModelParams,
    *,
    n_cells: int = 1500,
    r_max_factor: float = 30.0,
    relaxation_times: float = 3.0,
    exterior_s_end: float = 0.5,
    dt_interior: float | None = None,
) -> dict:
    """Compare the full model with its reduced description.

    Returns ``beta_eff``, ``mu_eff``, ``a1``, the interior relaxation time, the
    sup relative interior deviation from ``a0 exp(-W_pore)`` after
    ``relaxation_times`` interior times (interior started at half the
    equilibrium, exterior at equilibrium),
    and the relative deviation of the rescaled exterior first moment from the
    reduced problem over ``s in [0, exterior_s_end]``.  ``vm_trace`` holds
    ``(t, V_m, int r n dr)`` of the interior run.

    Raises
    ------
    ValueError
        If ``rplus / r0 < 5``.
    """
    e = params.energy
    sep = params.rplus / e.r0
    if sep < 5:
        raise ValueError(f"scale separation rplus/r0 = {sep:.3g} < 5")
    r_max = e.r0 + r_max_factor * params.rplus
    grid = RadialGrid.stretched(r_max, n_cells, e.r0 / 200.0)
    r = grid.centers
    eq = params.equilibrium(r)
    tau_in = interior_relaxation_time(params)
    dt = dt_interior or tau_in / 200.0
    vx0 = params.vext(0.0)
    inside = r <= e.r0
    # deplete the interior only; the exterior starts at equilibrium
    n0 = np.where(inside, 0.5 * eq, eq)
    V0 = quasi_static_vm(params, vx0, float(np.dot(r * grid.widths, n0)))
    run = solve_full_model(params, DensityField(grid, n0), V0, relaxation_times * tau_in, dt=dt)
    interior_error = float(np.max(np.abs(run.final.values[inside] / eq[inside] - 1.0)))

    # exterior: start from equilibrium, compare first moments in rescaled units
    rp = params.rplus
    s_end = exterior_s_end
    t_end = s_end * rp**2 / params.D
    dt_ext = t_end / 400.0
    V_eq = quasi_static_vm(params, vx0, float(np.dot(r * grid.widths, eq)))
    snap_t = np.linspace(0.0, t_end, 11)[1:]
    full = solve_full_model(params, DensityField(grid, eq.copy()), V_eq, t_end, dt=dt_ext,
                            snapshot_times=snap_t)
    scale = 2.0 * params.L * rp**2 / params.denominator
    outside = r >= e.r0
    x = (r[outside] - e.r0) / rp

    def ext_moment(nv: np.ndarray) -> float:
        f = scale * nv[outside]
        return float(np.sum(x * f * grid.widths[outside] / rp))

    full_m = np.array([ext_moment(sn.values) for sn in full.snapshots])
    red_params = ModelParams(beta=params.beta_eff * vx0**2 if vx0 else 1e-300, mu=params.mu_eff, gamma=0.25)
    xg = RadialGrid.stretched(r_max_factor, 1200, 0.01)
    f0 = DensityField.sample(xg, lambda xx: params.mu_eff * np.exp(-xx), time=1.0)
    s_snaps = 1.0 + snap_t * params.D / rp**2
    cfg = ParabolicRunConfig(xg, 1.0, 1.0 + s_end, dt_rel=1e-3, dt_max=s_end / 400.0,
                             tail="none", snapshot_times=tuple(s_snaps))
    red = solve_parabolic(f0, red_params, cfg, drift_scale=1.0 if vx0 else 0.0)
    red_m = np.interp(s_snaps, red.trace.t, red.trace.n_f)
    exterior_error = float(np.max(np.abs(full_m - red_m) / np.abs(red_m)))
    return {
        "a1": params.a1,
        "beta_eff": params.beta_eff,
        "mu_eff": params.mu_eff,
        "rplus_over_r0": sep,
        "interior_relaxation_time": tau_in,
        "interior_error": interior_error,
        "exterior_profile_error": exterior_error,
        "final_vm": float(run.Vm[-1]),
        "vm_trace": (run.t, run.Vm, run.pore_integral),
    }
