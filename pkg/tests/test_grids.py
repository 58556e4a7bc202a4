from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from poresim import DensityField, ModelParams, RadialGrid, derive_profile, first_moment, from_selfsim, to_selfsim
from poresim.grids import read_field_csv, truncation_length, write_field_csv

PROF = derive_profile(ModelParams(beta=3.0, gamma=0.25))


def fs_moment_error(grid: RadialGrid) -> float:
    field = DensityField.sample(grid, PROF, variables="selfsim")
    n = first_moment(field, tail_moment=float(PROF.tail_moment(grid.x_max)))
    return abs(n - PROF.N_s)


def test_grid_invariants():
    with pytest.raises(ValueError):
        RadialGrid(np.linspace(0, 1, 10))
    with pytest.raises(ValueError):
        RadialGrid(np.linspace(0.1, 1, 40))
    with pytest.raises(ValueError):
        RadialGrid(np.r_[0.0, np.linspace(0.5, 0.1, 30)])


def test_geometric_ratio_one_is_uniform():
    g = RadialGrid.geometric(10.0, 20, ratio=1.0)
    assert np.allclose(g.widths, 0.5)


@given(st.floats(min_value=1e-3, max_value=0.1), st.integers(min_value=64, max_value=2048))
def test_stretched_grid_hits_requested_widths(first, n):
    g = RadialGrid.stretched(1e5, n, first)
    assert g.x_max == 1e5
    assert np.all(np.diff(g.edges) > 0)
    if first * n < 1e5:
        assert g.widths[0] == pytest.approx(first, rel=1e-6)


def test_default_grid_caps_last_cell():
    g = RadialGrid.default(1e4, 4096)
    assert g.widths[-1] <= 0.02 * g.x_max
    with pytest.raises(ValueError):
        RadialGrid.default(1e4, 20)


def test_selfsimilar_moment_on_stretched_grid():
    assert fs_moment_error(RadialGrid.stretched(1e4, 4096, 0.01)) < 1e-6


def test_moment_of_zero_and_exponential():
    g = RadialGrid.uniform(60.0, 200000)
    assert first_moment(DensityField(g, np.zeros(g.n_cells))) == 0.0
    assert first_moment(DensityField.sample(g, lambda x: np.exp(-x))) == pytest.approx(1.0, abs=1e-8)


def test_midpoint_rule_is_second_order():
    g = RadialGrid.stretched(1e4, 1024, 0.04)
    e1, e2 = fs_moment_error(g), fs_moment_error(g.refined())
    assert e1 / e2 >= 3.5


def test_power_tail_extension():
    g = RadialGrid.stretched(1e3, 4096, 0.01)
    field = DensityField.sample(g, PROF, variables="selfsim")
    n = first_moment(field, tail_exponent=PROF.theta, tail_gamma=PROF.gamma)
    assert n == pytest.approx(PROF.N_s, rel=1e-5)


def test_selfsimilar_profile_is_fixed_by_rescaling():
    t = 16.0
    g = RadialGrid.stretched(1e5, 512, 0.05)
    f = DensityField.sample(g, lambda x: t**-1.5 * PROF(x / t), time=t)
    F = to_selfsim(f)
    assert F.time == pytest.approx(math.log(t))
    assert np.max(np.abs(F.values - PROF(F.grid.centers))) <= 1e-12


def test_rescaling_identity_and_constants():
    g = RadialGrid.uniform(10.0, 32)
    c = DensityField(g, np.full(g.n_cells, 3.0), time=1.0)
    F1 = to_selfsim(c)
    assert np.array_equal(F1.values, c.values) and np.array_equal(F1.grid.edges, g.edges)
    F = to_selfsim(c, 4.0)
    assert np.allclose(F.values, 8.0 * 3.0)
    with pytest.raises(ValueError):
        to_selfsim(c, 0.0)
    with pytest.raises(ValueError):
        from_selfsim(c)


@given(st.floats(min_value=1.0, max_value=1e6))
def test_round_trip(t):
    g = RadialGrid.stretched(1e3, 64, 0.1)
    f = DensityField.sample(g, lambda x: np.exp(-x / 7.0), time=t)
    back = from_selfsim(to_selfsim(f))
    assert np.allclose(back.values, f.values, rtol=1e-14, atol=0)
    assert np.allclose(back.grid.edges, g.edges, rtol=1e-14, atol=0)


@given(st.floats(min_value=1.0, max_value=1e4))
def test_moment_scaling(t):
    g = RadialGrid.stretched(1e3 * t, 512, 0.05)
    f = DensityField.sample(g, lambda x: np.exp(-x / t), time=t)
    n_f = first_moment(f)
    N_F = first_moment(to_selfsim(f))
    assert n_f == pytest.approx(N_F * math.sqrt(t), rel=1e-12)


def test_unsigned_fields_reject_negative_values():
    g = RadialGrid.uniform(1.0, 16)
    v = np.ones(16)
    v[3] = -0.5
    with pytest.raises(ValueError):
        DensityField(g, v)
    assert DensityField(g, v, signed=True).values[3] == -0.5


def test_csv_round_trip(tmp_path):
    g = RadialGrid.stretched(100.0, 40, 0.1)
    f = DensityField.sample(g, lambda x: np.exp(-x) / 3.0, variables="selfsim", time=2.5)
    path = tmp_path / "f.csv"
    write_field_csv(f, path)
    assert path.read_text().startswith("# variables=selfsim time=2.5\n")
    back = read_field_csv(path)
    assert back.variables == "selfsim" and back.time == 2.5
    assert np.allclose(back.values, f.values, rtol=1e-14)
    assert np.allclose(back.grid.edges, g.edges, rtol=1e-14)


def test_truncation_length_bounds_tail_moment():
    t_end = 1e3
    x_max = truncation_length(0.25, t_end, tol=1e-7)
    frac = PROF.tail_moment(x_max / t_end) / PROF.N_s
    assert 0 < frac <= 1e-7
