from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poresim import DensityField, ModelParams, RadialGrid, derive_profile
from poresim.profiles import ExponentialProfile, ScaledProfile, SelfSimilarAdapter, shifted_moment
from poresim.transport import (
    TransportedProfile,
    apply_T,
    build_map,
    kernel_closed_form,
    moment_of_T_dxfs,
    profile_limit_diagnostics,
    solve_transport,
    upwind_fv_transport,
)

P = ModelParams(beta=3.0, mu=1.0, gamma=0.25)
PROF = derive_profile(P)
EXP = ExponentialProfile((1.0,), (1.0,))


def test_map_closed_form_without_perturbation():
    cmap = build_map(0.0, P, 1.0, 16.0)
    m, mp = cmap.at(16.0)
    assert mp == pytest.approx(0.125, rel=1e-12)
    assert m == pytest.approx(4.0, rel=1e-10)
    assert cmap.at(1.0) == (0.0, 1.0)


def test_map_rejects_bad_input():
    with pytest.raises(ValueError):
        build_map(lambda t: math.nan, P, 1.0, 4.0)
    with pytest.raises(ValueError):
        build_map(0.0, P, 0.5, 4.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(min_value=1.0, max_value=50.0), st.sampled_from([-1.0, 1.0]))
def test_map_sandwich_under_decaying_perturbation(t0, sign):
    c_j, eta = 0.1, 0.25
    j = lambda t: sign * c_j * t0**eta * t ** (-1 - eta)
    cmap = build_map(j, P, t0, 100 * t0)
    for t in np.geomspace(t0, 100 * t0, 9):
        m, mp = cmap.at(float(t))
        ratio = mp / (t / t0) ** -(1 - P.gamma)
        assert math.exp(-0.4) <= ratio <= math.exp(0.4)
    ms = cmap.m
    assert np.all(np.diff(ms) > 0) and np.all(cmap.mp > 0)


def test_push_forward_of_exponential():
    cmap = build_map(0.0, P, 1.0, 16.0)
    tp = apply_T(cmap, EXP, 16.0)
    assert float(tp(0.0)) == pytest.approx(math.exp(-4) / 8, rel=1e-10)
    assert float(tp(0.0)) == pytest.approx(0.0022895, abs=1e-7)
    x = np.linspace(0, 5, 11)
    assert np.allclose(apply_T(cmap, EXP, 1.0)(x), np.exp(-x))


def test_mass_weight_identity():
    cmap = build_map(0.0, P, 1.0, 9.0)
    m, mp = cmap.at(9.0)
    grid = RadialGrid.uniform(400.0, 400000)
    field = apply_T(cmap, EXP, 9.0, grid)
    direct = float(np.sum(grid.centers * field.values * grid.widths))
    formula = (EXP.tail_moment(m) - m * EXP.tail_mass(m)) / mp
    assert direct == pytest.approx(float(formula), rel=1e-8)
    assert TransportedProfile(EXP, m, mp).first_moment() == pytest.approx(float(formula), rel=1e-14)


def test_kernel_moment_closed_form():
    cmap = build_map(0.0, P, 1.0, 16.0)
    assert moment_of_T_dxfs(P, 16.0, 1.0, cmap) == pytest.approx(-9.0, abs=1e-8)
    assert moment_of_T_dxfs(P, 1.0, 1.0, cmap) == pytest.approx(-1.5, abs=1e-12)
    with pytest.raises(ValueError):
        moment_of_T_dxfs(P, 1.0, 2.0, cmap)


def test_kernel_large_time_ratio():
    cmap = build_map(0.0, P, 1.0, 1e8)
    t = 1e8
    ratio = moment_of_T_dxfs(P, t, 1.0, cmap) / (-(1 - P.gamma) / P.gamma * math.sqrt(t))
    assert ratio == pytest.approx(1.0, abs=0.02)
    assert kernel_closed_form(P, t, 1.0) / (-(1 - P.gamma) / P.gamma * math.sqrt(t)) == pytest.approx(ratio, rel=1e-6)


def test_upwind_converges_to_exact_map():
    cmap = build_map(0.0, P, 1.0, 4.0)
    gaps = []
    for n in (2048, 4096):
        grid = RadialGrid.uniform(40.0, n)
        fv = upwind_fv_transport(DensityField.sample(grid, EXP), lambda t: 0.75 / t, 1.0, 4.0)[-1]
        gaps.append(float(np.sum(np.abs(fv.values - apply_T(cmap, EXP, 4.0, grid).values) * grid.widths)))
    assert gaps[1] < 5e-3
    assert 1.6 <= gaps[0] / gaps[1] <= 2.4


def test_upwind_rejects_large_courant_number():
    grid = RadialGrid.uniform(10.0, 100)
    with pytest.raises(ValueError):
        upwind_fv_transport(DensityField.sample(grid, EXP), lambda t: 0.0, 1.0, 2.0, cfl=1.0)
    with pytest.raises(ValueError):
        upwind_fv_transport(DensityField.sample(grid, EXP), lambda t: 0.0, 1.0, 2.0, dt=0.2)


def test_upwind_constant_state_and_outflux():
    grid = RadialGrid.uniform(10.0, 100)
    const = DensityField(grid, np.full(100, 2.0))
    out = upwind_fv_transport(const, lambda t: 0.0, 1.0, 3.0, inflow=2.0)[-1]
    assert np.allclose(out.values, 2.0)
    # one step: the mass change is the outflux through x = 0 at unit speed
    f0 = DensityField.sample(grid, EXP)
    dt = 0.05
    f1 = upwind_fv_transport(f0, lambda t: 0.0, 1.0, 1.0 + dt, dt=dt)[-1]
    dm = np.sum((f1.values - f0.values) * grid.widths)
    assert dm == pytest.approx(-dt * f0.values[0], rel=1e-12)


def test_transport_keeps_selfsimilar_profile():
    t0 = 1e4
    f0 = ScaledProfile(SelfSimilarAdapter(PROF), t0)
    res = solve_transport(f0, P, t0, t0 * math.exp(5.0))
    assert np.max(np.abs(res.trace.N_F / PROF.N_s - 1)) < 0.02


def test_transport_of_zero_data():
    zero = ExponentialProfile((0.0,), (1.0,))
    res = solve_transport(zero, P, 1.0, 10.0)
    assert np.all(res.trace.n_f == 0.0)


def test_frozen_mode_matches_exact_map():
    j = lambda t: 0.01 / t**1.5
    cmap = build_map(j, P, 2.0, 50.0)
    res = solve_transport(EXP, P, 2.0, 50.0, j_trace=j, snapshot_times=[10.0, 50.0])
    for k, t in enumerate(res.trace.t):
        m, mp = cmap.at(float(t))
        assert res.m[k] == m and res.mp[k] == mp
    assert res.trace.n_f[-1] == pytest.approx(float(shifted_moment(EXP, cmap.at(50.0)[0])) / cmap.at(50.0)[1],
                                              rel=1e-14)


def test_picard_transport_is_second_order_in_time():
    t0 = 100.0
    f0 = ScaledProfile(SelfSimilarAdapter(PROF), t0)
    ref = solve_transport(f0, P, t0, 2 * t0, dt_rel=0.0025).trace.n_f[-1]
    e1 = abs(solve_transport(f0, P, t0, 2 * t0, dt_rel=0.02).trace.n_f[-1] - ref)
    e2 = abs(solve_transport(f0, P, t0, 2 * t0, dt_rel=0.01).trace.n_f[-1] - ref)
    assert e1 / e2 > 3.0


def test_profile_limit_diagnostics():
    nu = [r * float(shifted_moment(SelfSimilarAdapter(PROF), r)) for r in (1e2, 1e3, 1e4)]
    assert abs(nu[-1] - 8.0) < abs(nu[0] - 8.0)
    assert nu[-1] == pytest.approx(8.0, rel=1e-3)
    t0 = 1.0
    cmap = build_map(0.0, P, t0, 1e6)
    rows = profile_limit_diagnostics(SelfSimilarAdapter(PROF), cmap, [1e4, 1e6], PROF)
    assert rows[-1]["ratio"] == pytest.approx(0.25, abs=0.01)
    assert max(r["sup_error"] for r in rows) < 1e-12
