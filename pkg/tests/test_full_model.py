from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from poresim import DensityField, RadialGrid
from poresim.full_model import (
    FullModelParams,
    PoreEnergy,
    interior_relaxation_time,
    quasi_static_vm,
    reduction_report,
    solve_full_model,
)

E = PoreEnergy()
FP = FullModelParams()


def test_energy_landmarks_and_smoothness():
    assert float(E(0.0)) == 0.0 and float(E.derivative(0.0)) == 0.0
    assert float(E(E.rstar)) == pytest.approx(E.Estar)
    assert float(E(E.r0)) == pytest.approx(E.E0)
    assert float(E.derivative(E.rstar)) == pytest.approx(0.0, abs=1e-12)
    for r in (E.rstar, E.r0):
        lo, hi = r - 1e-9, r + 1e-9
        assert float(E(hi)) == pytest.approx(float(E(lo)), abs=1e-7)
        assert float(E.derivative(hi)) == pytest.approx(float(E.derivative(lo)), abs=1e-6)
    r = np.linspace(E.r0, 5, 20)
    assert np.allclose(E.derivative(r), 2 * math.pi * E.sigma_l)


def test_energy_derivative_matches_differences():
    r = np.linspace(0.01, 3.0, 200)
    h = 1e-6
    fd = (E(r + h) - E(r - h)) / (2 * h)
    assert np.allclose(E.derivative(r), fd, atol=1e-6)


def test_energy_rejects_bad_shape():
    with pytest.raises(ValueError):
        PoreEnergy(rstar=1.5, r0=1.0)
    with pytest.raises(ValueError):
        PoreEnergy(E0=5.0, Estar=4.0)


def test_params_validation():
    with pytest.raises(ValueError):
        FullModelParams(kBT=2.0)
    with pytest.raises(ValueError):
        FullModelParams(D=0.0)
    with pytest.raises(ValueError):
        FullModelParams(energy=PoreEnergy(sigma_l=1.0))


def test_effective_constants_rederived():
    val, _ = quad(lambda r: r * math.exp(-float(E(r))), 0, E.r0, points=[E.rstar], epsabs=1e-14, epsrel=1e-13)
    a1 = 2 * FP.L * FP.a0 * val
    den = FP.L * FP.S_m / FP.sigma_c + 1 + a1
    rp = 1 / (2 * math.pi * E.sigma_l)
    assert rp == pytest.approx(10.0)
    assert FP.a1 == pytest.approx(a1, rel=1e-12)
    assert FP.beta_eff == pytest.approx(2 * rp**2 * FP.Ctilde_m / den**2, rel=1e-12)
    assert FP.mu_eff == pytest.approx(2 * FP.L * rp**2 / den * FP.a0 * math.exp(-E.E0), rel=1e-12)


def test_source_window():
    r = np.array([0.0, 0.15, 0.3, 0.5])
    s = FP.source(r)
    assert s[0] == 1.0 and s[2] == 0.0 and s[3] == 0.0
    assert s[1] == pytest.approx(0.75**2)


GRID = RadialGrid.stretched(30.0, 300, 0.01)


def test_detailed_balance():
    p = FullModelParams(Vext=0.0)
    eq = p.equilibrium(GRID.centers)
    res = solve_full_model(p, DensityField(GRID, eq.copy()), 0.0, 0.01, dt=1e-2)
    assert res.max_flux[-1] < 1e-10
    assert np.allclose(res.final.values, eq, rtol=1e-10)


def test_quasi_static_vm_with_zero_capacitance():
    p = FullModelParams(C_m=0.0, Vext=1.0)
    n0 = DensityField(GRID, p.equilibrium(GRID.centers))
    res = solve_full_model(p, n0, 0.0, 0.05, dt=1e-2)
    for V, I in zip(res.Vm[1:], res.pore_integral[1:]):
        assert V == pytest.approx(quasi_static_vm(p, 1.0, I), rel=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 100.0), st.floats(0.01, 10.0))
def test_quasi_static_vm_decreases_with_pore_integral(I, dI):
    assert quasi_static_vm(FP, 1.0, I + dI) < quasi_static_vm(FP, 1.0, I)


def test_nonnegativity_and_rejection():
    p = FullModelParams(Vext=2.0)
    n0 = np.zeros(GRID.n_cells)
    n0[GRID.centers < 2] = 1.0
    res = solve_full_model(p, DensityField(GRID, n0), 0.5, 0.5, dt=1e-2, snapshot_times=[0.25])
    assert np.min(res.final.values) >= 0
    assert len(res.snapshots) == 1
    with pytest.raises(ValueError):
        bad = DensityField(GRID, -np.ones(GRID.n_cells), signed=True)
        solve_full_model(p, bad, 0.0, 0.1)


def test_interior_relaxation_time_scales_with_source():
    tau1 = interior_relaxation_time(FP)
    tau2 = interior_relaxation_time(FullModelParams(source_amplitude=4.0))
    assert 0 < tau2 < tau1
    with pytest.raises(ValueError):
        interior_relaxation_time(FullModelParams(source_amplitude=0.0))


def test_interior_faster_than_exterior():
    tau_in = interior_relaxation_time(FP)
    assert tau_in < FP.rplus**2 / FP.D / 10


def test_reduction_rejects_small_separation():
    p = FullModelParams(energy=PoreEnergy(sigma_l=1 / (2 * math.pi * 3.0)))
    with pytest.raises(ValueError, match="scale separation"):
        reduction_report(p)


def test_reduction_report_interior_relaxes():
    rep = reduction_report(FP, n_cells=800)
    assert rep["interior_error"] < 0.05
    assert rep["rplus_over_r0"] == pytest.approx(10.0)
    assert np.isfinite(rep["exterior_profile_error"])


def test_reduction_without_potential_is_pure_drift():
    rep = reduction_report(FullModelParams(Vext=0.0), n_cells=800)
    assert rep["exterior_profile_error"] < 0.05
    assert rep["final_vm"] == 0.0
