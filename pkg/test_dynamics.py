import dataclasses

import numpy as np
import pytest

import dynamics
import hydro
import photic
from dynamics import AffineLapMap, Permutation
from errors import PermutationError
from hydro import FourierProfile


def constant_lap(a, b, length, dx, layers=1):
    nodes = int(round(length / dx)) + 1
    return dynamics.lap_map_from_rates(np.full((layers, nodes), a), np.full((layers, nodes), b), length / (nodes - 1))


def fields_for(params, rng, amplitude=0.05):
    grid = params.grid
    profile = FourierProfile(0.4, tuple(rng.uniform(-amplitude, amplitude, size=grid.M)))
    field = hydro.flow_field(profile, params.flow, grid)
    lights = photic.light_field(field, params.light, grid.Nz, photic.extinction_fixed_volume(0.4, params.light))
    return field, lights


# Permutations
# ---


def test_parse_and_cycles():
    perm = Permutation.parse("2-4-6-7-5-3-1")
    assert perm.label == "2-4-6-7-5-3-1"
    assert perm.cycle_notation() == "(1 2 4 7)(3 6)(5)"
    assert perm.order() == 4
    assert not perm.is_identity()
    assert perm == Permutation.from_images([2, 4, 6, 7, 5, 3, 1])
    assert len({perm, Permutation.parse("2-4-6-7-5-3-1")}) == 1


def test_inverse_and_matrix():
    perm = Permutation.parse("3-1-4-2")
    P = perm.matrix()
    assert P[0, 2] == 1.0
    np.testing.assert_array_equal(P @ perm.inverse.matrix(), np.eye(4))
    values = np.arange(4.0)
    np.testing.assert_array_equal(P @ values, values[perm.array])


@pytest.mark.parametrize("text", ["1-1-2", "a-b", "0-1", "", "1-3"])
def test_bad_permutations(text):
    with pytest.raises(PermutationError):
        Permutation.parse(text)


def test_all_permutations_are_lexicographic():
    perms = list(dynamics.all_permutations(3))
    assert [p.label for p in perms] == ["1-2-3", "1-3-2", "2-1-3", "2-3-1", "3-1-2", "3-2-1"]
    assert perms[0].is_identity()
    assert Permutation.identity(1).order() == 1


# Heun lap map
# ---


def test_heun_matches_exponential_solution():
    a, b, length = 0.0877, 0.0197, 100.0
    lap = constant_lap(a, b, length, 0.01)
    decay = np.exp(-a * length)
    assert lap.A[0] == pytest.approx(decay, rel=1e-5)
    assert lap.b[0] == pytest.approx(b / a * (1.0 - decay), rel=1e-5)


def test_heun_is_second_order():
    a, b, length = 0.1, 0.05, 10.0
    exact = b / a * (1.0 - np.exp(-a * length))
    errors = [abs(constant_lap(a, b, length, dx).b[0] - exact) for dx in (0.04, 0.02, 0.01)]
    assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.1)
    assert errors[1] / errors[2] == pytest.approx(4.0, rel=0.1)


def test_zero_dynamics_is_the_identity_map():
    lap = constant_lap(0.0, 0.0, 1.0, 0.01, layers=3)
    np.testing.assert_array_equal(lap.A, 1.0)
    np.testing.assert_array_equal(lap.b, 0.0)


def test_propagate_starts_from_the_given_state():
    lap = constant_lap(0.1, 0.05, 1.0, 0.01, layers=2)
    states = lap.propagate([0.2, 0.7])
    np.testing.assert_allclose(states[:, 0], [0.2, 0.7])
    np.testing.assert_allclose(states[:, -1], lap.A * [0.2, 0.7] + lap.b)


# Periodic state
# ---


def test_identity_on_flat_bed_is_steady_state(params):
    grid = params.grid
    field = hydro.flow_field(FourierProfile.flat(0.4, grid.M), params.flow, grid)
    lights = photic.light_field(field, params.light, grid.Nz, photic.extinction_fixed_volume(0.4, params.light))
    lap = dynamics.lap_map(lights, field, params.han, grid)
    state = dynamics.solve_periodic(Permutation.identity(grid.Nz), lap)
    r = photic.rates(lights.intensity, params.han)
    np.testing.assert_allclose(state.field, r.beta / r.alpha, rtol=1e-12)


def test_dark_pond_recovers_fully():
    lap = constant_lap(0.5, 0.0, 1.0, 0.01, layers=4)
    state = dynamics.solve_periodic(Permutation.parse("2-3-4-1"), lap)
    np.testing.assert_array_equal(state.field, 0.0)


def test_periodic_condition_holds(small_params, rng):
    field, lights = fields_for(small_params, rng)
    lap = dynamics.lap_map(lights, field, small_params.han, small_params.grid)
    perm = Permutation.parse("3-1-2")
    state = dynamics.solve_periodic(perm, lap)
    assert state.residual < 1e-14
    np.testing.assert_allclose(state.field[perm.array, -1], state.c0, atol=1e-14)
    assert state.field.min() >= 0.0
    assert state.field.max() <= 1.0


@pytest.mark.parametrize("label", ["1-2-3", "2-1-3", "3-1-2", "3-2-1"])
def test_periodic_state_is_the_limit_of_many_laps(params, rng, label):
    long_params = params.with_overrides(L=10.0, Nz=3, M=2)
    field, lights = fields_for(long_params, rng)
    lap = dynamics.lap_map(lights, field, long_params.han, long_params.grid)
    perm = Permutation.parse(label)
    state = dynamics.solve_periodic(perm, lap)
    brute = dynamics.multi_lap_simulate(perm, lap, 200, np.zeros(3))
    np.testing.assert_allclose(brute, state.c0, atol=1e-12)


def test_periodic_state_is_a_fixed_point(small_params, rng):
    field, lights = fields_for(small_params, rng)
    lap = dynamics.lap_map(lights, field, small_params.han, small_params.grid)
    perm = Permutation.parse("2-3-1")
    state = dynamics.solve_periodic(perm, lap)
    after = dynamics.multi_lap_simulate(perm, lap, perm.order(), state.c0)
    np.testing.assert_allclose(after, state.c0, atol=1e-13)


def test_lap_count_must_be_positive():
    lap = constant_lap(0.1, 0.05, 1.0, 0.01)
    with pytest.raises(ValueError):
        dynamics.multi_lap_simulate(Permutation.identity(1), lap, 0, [0.0])


# Adjoint
# ---


def test_adjoint_vanishes_without_growth_yield(small_params, rng):
    field, lights = fields_for(small_params, rng)
    han = dataclasses.replace(small_params.han, k=0.0)
    adjoint = dynamics.solve_adjoint(Permutation.parse("2-1-3"), lights, field, han, small_params.grid)
    np.testing.assert_array_equal(adjoint.field, 0.0)


@pytest.mark.parametrize("label", ["1-2-3", "3-1-2", "1-3-2"])
def test_adjoint_is_dual_to_the_state_sensitivity(small_params, rng, label):
    grid = small_params.grid
    field, lights = fields_for(small_params, rng)
    lap = dynamics.lap_map(lights, field, small_params.han, grid)
    perm = Permutation.parse(label)
    adjoint = dynamics.solve_adjoint(perm, lights, field, small_params.han, grid, lap=lap)
    assert adjoint.residual < 1e-14

    # The state responds linearly to a change of the step offsets.
    delta = rng.uniform(0.0, 1e-6, size=lap.step_offset.shape)
    response = AffineLapMap(
        step_mult=lap.step_mult,
        step_offset=delta,
        decay=lap.decay,
        forced=dynamics._forward_sweep(lap.step_mult, delta),
        step=lap.step,
    )
    dC = dynamics.solve_periodic(perm, response).field
    source = dynamics.adjoint_source(lights, field, small_params.han, grid)
    assert np.sum(source * dC) == pytest.approx(np.sum(adjoint.field[:, 1:] * delta), rel=1e-10)


def test_adjoint_scales_with_volume_factor(small_params, rng):
    field, lights = fields_for(small_params, rng)
    perm = Permutation.parse("3-2-1")
    base = dynamics.solve_adjoint(perm, lights, field, small_params.han, small_params.grid)
    scaled = dynamics.solve_adjoint(perm, lights, field, small_params.han, small_params.grid, volume_factor=2.5)
    np.testing.assert_allclose(scaled.field, 2.5 * base.field, rtol=1e-13)
