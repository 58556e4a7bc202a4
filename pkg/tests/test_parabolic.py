from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poresim import DensityField, ModelParams, RadialGrid, derive_profile
from poresim.grids import truncation_length
from poresim.parabolic import (
    BoundaryLayer,
    DriftDiffusionOperator,
    ParabolicRunConfig,
    barrier_ratio,
    barrier_shape,
    compute_Rbl,
    solve_frozen_S,
    solve_frozen_gap,
    solve_parabolic,
    subtract_layers,
)
from poresim.profiles import ExponentialProfile, ScaledProfile, SelfSimilarAdapter

P = ModelParams(beta=3.0, mu=1.0, gamma=0.25)
PROF = derive_profile(P)


def _fs(t):
    return lambda x: t**-1.5 * PROF(np.asarray(x) / t)


@pytest.mark.parametrize("flux", ["sg", "hybrid"])
def test_operator_conserves_mass_and_annihilates_equilibrium(flux):
    grid = RadialGrid.stretched(30.0, 300, 0.05)
    op = DriftDiffusionOperator(grid, 1.0, flux=flux)
    f = np.exp(-grid.centers) * (1 + 0.1 * np.sin(grid.centers))
    lf = op.apply(f, 0.0)
    flx = op.fluxes(f, 0.0)
    # interior divergence telescopes to the boundary fluxes
    assert np.sum(lf * grid.widths) == pytest.approx(flx[-1] - flx[0], abs=1e-12)


def test_stationary_boundary_keeps_dirichlet_value_and_moment():
    t0, t1 = 100.0, 100.0 * math.e
    grid = RadialGrid.stretched(truncation_length(P.gamma, t1, 1e-6), 3000, 0.02)
    f0 = DensityField.sample(grid, lambda x: P.mu * np.exp(-x) + _fs(t0)(x), time=t0)
    res = solve_parabolic(f0, P, ParabolicRunConfig(grid, t0, t1, dt_rel=0.01, flux="hybrid"))
    assert np.all(res.boundary_values == P.mu)
    layer = BoundaryLayer.from_params(P)
    ref = np.array([layer.n_bl(t) + PROF.N_s * math.sqrt(t) for t in res.trace.t])
    assert np.max(np.abs(res.trace.n_f / ref - 1)) < 0.05


def test_zero_solution():
    grid = RadialGrid.uniform(20.0, 200)
    f0 = DensityField(grid, np.zeros(200), time=1.0)
    res = solve_parabolic(f0, P, ParabolicRunConfig(grid, 1.0, 5.0, tail="none", boundary_value=0.0))
    assert np.all(res.final.values == 0.0)


def test_pure_diffusion_mass_decreases():
    grid = RadialGrid.uniform(40.0, 400)
    f0 = DensityField.sample(grid, lambda x: x * np.exp(-x), time=1.0)
    cfg = ParabolicRunConfig(grid, 1.0, 10.0, tail="none", scheme="euler", boundary_value=0.0)
    res = solve_parabolic(f0, P, cfg, drift_scale=0.0)
    assert np.all(np.diff(res.mass) < 0)
    assert np.all(res.final.values >= 0)


def test_config_validation():
    grid = RadialGrid.uniform(1.0, 32)
    with pytest.raises(ValueError):
        ParabolicRunConfig(grid, 0.5, 2.0)
    with pytest.raises(ValueError):
        ParabolicRunConfig(grid, 2.0, 1.0)
    with pytest.raises(ValueError):
        ParabolicRunConfig(grid, 1.0, 2.0, picard_max=0)
    with pytest.raises(ValueError):
        ParabolicRunConfig(grid, 1.0, 2.0, closure="bogus")


GRID_S = RadialGrid.stretched(60.0, 400, 0.05)
PHI1 = DensityField.sample(GRID_S, lambda x: x * np.exp(-x), time=2.0, signed=True)
PHI2 = DensityField.sample(GRID_S, lambda x: np.sin(x) * np.exp(-0.5 * x), time=2.0, signed=True)


@settings(max_examples=10, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_frozen_map_is_linear(a, b):
    j = lambda t: 0.01 / t
    combo = PHI1.with_values(a * PHI1.values + b * PHI2.values)
    s1 = solve_frozen_S(PHI1, j, P, 2.0, 20.0)[-1].values
    s2 = solve_frozen_S(PHI2, j, P, 2.0, 20.0)[-1].values
    sc = solve_frozen_S(combo, j, P, 2.0, 20.0)[-1].values
    ref = a * s1 + b * s2
    assert np.max(np.abs(sc - ref)) <= 1e-10 * max(np.max(np.abs(ref)), 1e-300) + 1e-300


def test_frozen_map_of_zero_is_zero():
    zero = PHI1.with_values(np.zeros(GRID_S.n_cells))
    assert np.all(solve_frozen_S(zero, 0.0, P, 2.0, 10.0)[-1].values == 0.0)


def test_boundary_layer_evaluators():
    layer = BoundaryLayer.from_params(P)
    assert layer.c_s == pytest.approx(PROF.c_s)
    t = 4.0
    assert layer.n_bl(t) == pytest.approx(P.mu - PROF.c_s / 8)
    assert layer.f_bl(0.0, t) == pytest.approx(layer.n_bl(t))
    x = np.linspace(0, 5, 6)
    assert np.allclose(layer.refined(x, t), 3 * x * x / (2 * PROF.N_s**2 * t) * np.exp(-x))
    thr = layer.positivity_threshold
    assert thr == pytest.approx((PROF.c_s / P.mu) ** (2 / 3))
    assert layer.n_bl(thr * 1.01) > 0 and layer.n_bl(thr * 0.99) < 0


def test_subtract_layers():
    t = 50.0
    grid = RadialGrid.stretched(500.0, 500, 0.05)
    layer = BoundaryLayer.from_params(P)
    fs = _fs(t)(grid.centers)
    fbl = layer.f_bl(grid.centers, t)
    g = subtract_layers(DensityField(grid, fs + fbl, time=t), layer, P)
    assert np.max(np.abs(g.values)) < 1e-14
    g2 = subtract_layers(DensityField(grid, fbl, time=t), layer, P)
    assert np.allclose(g2.values, -fs, rtol=1e-13, atol=1e-16)
    # the layers carry the boundary value: g(0) vanishes
    full = layer.f_bl(0.0, t) + _fs(t)(0.0)
    assert full == pytest.approx(P.mu, abs=1e-12)


def test_boundary_forcing_reference_value():
    r = float(compute_Rbl(P, 0.0, 1.0, 0.0))
    assert r == pytest.approx(0.5625, abs=1e-12)
    assert PROF.N_s**2 == pytest.approx(4.0)
    with pytest.raises(ValueError):
        compute_Rbl(P, 0.0, 1.0, 0.0, form="other")


def test_boundary_forcing_decay_bound_is_stable():
    x = np.linspace(0, 40, 401)
    consts = []
    for t in (10.0, 100.0, 1000.0):
        r = compute_Rbl(P, 0.0, t, x, form="consistent")
        consts.append(np.max(np.abs(r) * t * np.exp(x / 2)))
    # for the consistent form the bound constant settles with t
    assert max(consts) / min(consts) < 2.0


def test_barrier_rejects_lambda():
    grid = RadialGrid.stretched(100.0, 100, 0.05)
    for lam in (1.4, 2.0):
        with pytest.raises(ValueError):
            barrier_ratio(SelfSimilarAdapter(PROF), 0.0, P, lam, [1.0, 2.0], grid, 1.0)


def test_barrier_ratio_is_zero_at_start_and_bounded():
    t0 = 10.0
    grid = RadialGrid.stretched(truncation_length(P.gamma, 100 * t0, 1e-5), 2000, 0.02)
    phi0 = ScaledProfile(SelfSimilarAdapter(PROF), t0)
    times = list(t0 * np.geomspace(1, 100, 11))
    out = barrier_ratio(phi0, 0.0, P, 1.75, times, grid, t0, x_window=20.0, fit_from=10 * t0)
    assert out["ratio"][0] == 0.0
    assert np.all(np.isfinite(out["ratio"]))
    assert out["slope"] <= 0.05


def test_exponential_data_stays_below_exponential_envelope():
    t0 = 5.0
    grid = RadialGrid.stretched(400.0, 3000, 0.02)
    phi = DensityField.sample(grid, lambda x: np.exp(-x / 2) - np.exp(-x), time=t0, signed=True)
    times = [2 * t0, 5 * t0, 20 * t0]
    snaps = solve_frozen_S(phi, 0.0, P, t0, times[-1], dt_rel=0.01, flux="hybrid", snapshot_times=times)
    theta = PROF.theta
    x = grid.centers
    consts = []
    for s in snaps:
        t = s.time
        rest = np.abs(s.values) - (t / t0) ** -1.5 * np.exp(-x / 2)
        env = t**-2 * (t / t0) ** -1.5 * (1 + P.gamma * x / t) ** (-5 * theta)
        consts.append(max(float(np.max(rest / env)), 0.0))
    assert max(consts) < 1e3


def test_gap_solver_agrees_with_direct_difference():
    t0, t1 = 4.0, 16.0
    phi = ExponentialProfile((1.0, -1.0), (0.5, 1.0))
    grid = RadialGrid.stretched(200.0, 4000, 0.005)
    from poresim.transport import TransportedProfile, build_map

    cmap = build_map(0.0, P, t0, t1)
    field0 = DensityField.sample(grid, phi, time=t0, signed=True)
    S = solve_frozen_S(field0, 0.0, P, t0, t1, dt_rel=0.002, flux="hybrid")[-1]
    m, mp = cmap.at(t1)
    direct = S.values - TransportedProfile(phi, m, mp)(grid.centers)
    snap = solve_frozen_gap(phi, 0.0, P, t0, t1, z_max=200.0 * mp, n_nodes=4000,
                            dt_rel=0.002, snapshot_times=[t1])[-1]
    gap = np.interp(grid.centers, snap.x, snap.gap)
    sel = grid.centers < 20
    scale = np.max(np.abs(direct[sel]))
    assert np.max(np.abs(gap[sel] - direct[sel])) < 0.05 * scale


def test_barrier_shape_positive():
    x = np.linspace(0, 100, 50)
    assert np.all(barrier_shape(x, 10.0, 0.25, 1.75) > 0)
