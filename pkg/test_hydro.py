import numpy as np
import pytest

import hydro
from errors import DomainError, InfeasibleProfileError
from hydro import FourierProfile


def random_profile(rng, modes, a0=0.4, amplitude=0.05):
    return FourierProfile(a0, tuple(rng.uniform(-amplitude, amplitude, size=modes)))


def test_flat_profile_keeps_flat_bed(params):
    profile = FourierProfile.flat(0.4, params.grid.M)
    field = hydro.flow_field(profile, params.flow, params.grid)
    np.testing.assert_allclose(field.h, 0.4, rtol=0, atol=1e-15)
    np.testing.assert_allclose(field.zb, params.flow.zb0, rtol=0, atol=1e-14)
    np.testing.assert_allclose(field.u, 0.1, rtol=1e-15)
    assert field.subcritical
    assert field.max_froude == pytest.approx(0.1 / np.sqrt(9.81 * 0.4), rel=1e-14)


def test_bernoulli_is_constant(params, rng):
    profile = random_profile(rng, params.grid.M)
    field = hydro.flow_field(profile, params.flow, params.grid)
    head = field.bernoulli(params.flow.g)
    np.testing.assert_allclose(head, field.M0, rtol=1e-12, atol=1e-13)
    assert field.zb[0] == pytest.approx(params.flow.zb0, abs=1e-14)


def test_height_matches_series(params, rng):
    profile = random_profile(rng, 3)
    x = params.grid.nodes()
    expected = profile.a0 + sum(a * np.sin(2 * (m + 1) * np.pi * x / params.grid.L) for m, a in enumerate(profile.a))
    np.testing.assert_allclose(hydro.eval_height(profile, params.grid), expected, rtol=1e-13, atol=1e-15)


def test_lap_ends_sit_at_mean_height(params, rng):
    h = hydro.eval_height(random_profile(rng, params.grid.M), params.grid)
    assert h[0] == 0.4
    assert h[-1] == 0.4


def test_dry_node_is_infeasible(params):
    profile = FourierProfile(0.01, (0.05,))
    with pytest.raises(InfeasibleProfileError) as info:
        hydro.eval_height(profile, params.grid)
    assert info.value.height <= 0
    assert 0 < info.value.node < params.grid.Nx


def test_non_positive_mean_height_is_rejected():
    with pytest.raises(DomainError):
        FourierProfile(0.0)


def test_height_floor_combines_both_limits(params):
    floor = hydro.height_floor(params.flow, params.limits)
    critical = (0.04 / (0.98 * np.sqrt(9.81))) ** (2 / 3)
    assert floor == pytest.approx(critical, rel=1e-14)
    assert floor == pytest.approx(0.0554, abs=5e-4)
    # Froude number at the floor is exactly the margin limit.
    assert 0.04 / floor / np.sqrt(9.81 * floor) == pytest.approx(0.98, rel=1e-12)


def test_layer_depths_two_ways_agree(params, rng):
    field = hydro.flow_field(random_profile(rng, params.grid.M), params.flow, params.grid)
    np.testing.assert_allclose(
        hydro.layer_depths(field, params.grid.Nz),
        hydro.trajectory_depths(field, params.grid.Nz),
        rtol=1e-12,
        atol=1e-14,
    )


def test_layers_stay_ordered_and_inside_the_water(params, rng):
    field = hydro.flow_field(random_profile(rng, params.grid.M), params.flow, params.grid)
    depths = hydro.layer_depths(field, params.grid.Nz)
    assert np.all(np.diff(depths, axis=0) < 0)
    assert np.all(depths < field.eta)
    assert np.all(depths > field.zb)


def test_layer_depth_single_node(params):
    profile = FourierProfile.flat(0.4, params.grid.M)
    # Flat bed: eta = 0, layer 1 midpoint at a0 / (2 Nz) below the surface.
    assert hydro.layer_depth(profile, params.flow, params.grid, 1, node=0) == pytest.approx(-0.4 / 14, abs=1e-15)
    with pytest.raises(DomainError):
        hydro.layer_depth(profile, params.flow, params.grid, 8)


def test_flow_partials_match_finite_differences(small_params, rng):
    grid = small_params.grid
    profile = random_profile(rng, grid.M)
    partials = hydro.flow_partials(profile, small_params.flow, grid)
    step = 1e-7
    for m in range(grid.M + 1):
        up = profile.coefficients.copy()
        down = profile.coefficients.copy()
        up[m] += step
        down[m] -= step
        f_up = hydro.flow_field(FourierProfile(up[0], tuple(up[1:])), small_params.flow, grid)
        f_down = hydro.flow_field(FourierProfile(down[0], tuple(down[1:])), small_params.flow, grid)
        np.testing.assert_allclose(partials.dh[:, m], (f_up.h - f_down.h) / (2 * step), atol=1e-7)
        np.testing.assert_allclose(partials.du[:, m], (f_up.u - f_down.u) / (2 * step), rtol=1e-6, atol=1e-9)


def test_volume_matches_trapezoid_integral_of_height(params, rng):
    profile = random_profile(rng, params.grid.M)
    h = hydro.eval_height(profile, params.grid)
    integral = float(params.grid.trapezoid_weights() @ h)
    assert integral == pytest.approx(profile.volume(params.grid.L), rel=1e-12)
    assert profile.volume(params.grid.L) == pytest.approx(0.4 * 100.0, rel=1e-15)


def test_discharge_is_conserved_on_a_bumpy_bed(params, rng):
    field = hydro.flow_field(random_profile(rng, params.grid.M), params.flow, params.grid)
    assert np.ptp(field.h) > 1e-3
    np.testing.assert_allclose(field.u * field.h, params.flow.Q0, rtol=1e-14)
