import math

import numpy as np
import pytest

from branchlab.loglaplace import (
    GridSpec,
    GridTooCoarse,
    StepTooLarge,
    age_average,
    constant_oracle,
    default_grid,
    integrate_against,
    semigroup_apply,
    solution_csv,
    solve_u,
)
from branchlab.superprocess import Intensity

ONE = lambda a, x: np.ones(np.broadcast_shapes(np.shape(a), np.shape(x)))
GAUSS = lambda a, x: np.exp(-np.asarray(x, dtype=float) ** 2) * np.ones_like(np.asarray(a, dtype=float))


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(1.0, -1.0, 64, 1e-2, 1.0)
    with pytest.raises(ValueError):
        GridSpec(-1.0, 1.0, 8, 1e-2, 1.0)
    with pytest.raises(ValueError):
        GridSpec(-1.0, 1.0, 64, 3e-3, 1.0)  # dt does not divide T
    g = GridSpec(-1.0, 1.0, 64, 1e-2, 1.0)
    assert g.n_steps == 100
    assert g.refined().n_steps == 200


def test_constant_oracle_values():
    assert constant_oracle(1.0, 1.0, 1.0) == 0.5
    assert constant_oracle(0.0, 1.0, 5.0) == 0.0
    assert constant_oracle(2.0, 1.0, 0.0) == 2.0


def test_age_average_constant_exact():
    grid = default_grid(1.0, 1.0, 1.0, nx=64, dt=0.25)
    avg = age_average(ONE, 1.0, grid)
    assert np.allclose(avg, 1.0, atol=1e-12)


def test_age_average_exponential_closed_form():
    grid = default_grid(1.0, 1.0, 1.0, nx=64, dt=0.25)
    f = lambda a, x: np.exp(-np.asarray(a)) * np.ones_like(np.asarray(x, dtype=float))
    avg = age_average(f, 1.0, grid)
    assert np.allclose(avg, 0.5, atol=1e-9)


def test_semigroup_identity_at_zero():
    grid = default_grid(1.0, 1.0, 1.0)
    g = np.sin(grid.xs)
    assert np.array_equal(semigroup_apply(g, 0.0, 1.0, 1.0, grid), g)


def test_semigroup_preserves_constants():
    grid = default_grid(1.0, 1.0, 1.0)
    g = np.full(grid.nx, 0.7)
    out = semigroup_apply(g, 0.5, 1.0, 1.0, grid)
    assert np.allclose(out, 0.7, atol=1e-12)


def test_semigroup_gaussian_closed_form():
    grid = default_grid(1.0, 1.0, 1.0)
    xs = grid.xs
    v0 = 1.0
    g = np.exp(-(xs**2) / (2 * v0)) / math.sqrt(2 * math.pi * v0)
    out = semigroup_apply(g, 0.5, 1.0, 1.0, grid)
    v1 = 1.5
    target = np.exp(-(xs**2) / (2 * v1)) / math.sqrt(2 * math.pi * v1)
    mid = np.abs(xs) < 3
    assert np.max(np.abs(out[mid] - target[mid]) / target[mid]) < 1e-6


def test_semigroup_property():
    grid = default_grid(1.0, 1.0, 1.0)
    g = np.exp(-(grid.xs**2) / 2)
    ab = semigroup_apply(semigroup_apply(g, 0.3, 1.0, 1.0, grid), 0.2, 1.0, 1.0, grid)
    direct = semigroup_apply(g, 0.5, 1.0, 1.0, grid)
    assert np.max(np.abs(ab - direct)) < 1e-6


def test_grid_too_coarse():
    grid = GridSpec(-10.0, 10.0, 32, 1e-4, 1.0)
    with pytest.raises(GridTooCoarse):
        semigroup_apply(np.zeros(32), 1e-4, 1.0, 1.0, grid)


def test_step_too_large():
    grid = GridSpec(-5.0, 5.0, 256, 0.5, 1.0)
    with pytest.raises(StepTooLarge):
        solve_u(lambda a, x: 3.0 * ONE(a, x), 1.0, 1.0, grid)


def test_riccati_oracle():
    grid = default_grid(1.0, 1.0, 1.0)
    sol = solve_u(ONE, 1.0, 1.0, grid)
    assert np.max(np.abs(sol.final() - 0.5)) < 1e-4
    # interior times too
    k = grid.n_steps // 2
    assert np.max(np.abs(sol.values[k] - constant_oracle(1.0, 1.0, 0.5))) < 1e-4


def test_zero_function():
    grid = default_grid(1.0, 1.0, 0.5, nx=128, dt=0.05)
    sol = solve_u(lambda a, x: np.zeros(np.broadcast_shapes(np.shape(a), np.shape(x))), 1.0, 1.0, grid)
    assert np.all(sol.values == 0.0)


def test_lambda_zero_heat_flow():
    grid = default_grid(1.0, 1.0, 0.5)
    sol = solve_u(GAUSS, 0.0, 1.0, grid)
    direct = semigroup_apply(age_average(GAUSS, 1.0, grid), 0.5, 1.0, 1.0, grid)
    assert np.max(np.abs(sol.final() - direct)) < 1e-9


def test_positivity_and_bound():
    grid = default_grid(1.0, 1.0, 1.0)
    sol = solve_u(GAUSS, 1.0, 1.0, grid)
    assert np.all(sol.values >= 0.0)
    assert np.all(sol.values <= sol.values[0].max() * (1 + 1e-12) + 1e-15)


def test_monotonicity_in_f():
    grid = default_grid(1.0, 1.0, 0.5, nx=512, dt=2e-3)
    lo = solve_u(GAUSS, 1.0, 1.0, grid).final()
    hi = solve_u(lambda a, x: GAUSS(a, x) + 0.3 * ONE(a, x), 1.0, 1.0, grid).final()
    assert np.all(hi >= lo - 1e-10)


def test_self_convergence():
    nu = Intensity()
    grid = default_grid(1.0, 1.0, 0.5)
    base = integrate_against(solve_u(GAUSS, 1.0, 1.0, grid).final(), grid, nu)
    ref = grid.refined()
    fine = integrate_against(solve_u(GAUSS, 1.0, 1.0, ref).final(), ref, nu)
    assert abs(fine - base) < 1e-3 * abs(base)


def test_integrate_against_point_mass():
    # linear interpolation at x=0 is exact for values linear in x
    grid = default_grid(1.0, 1.0, 1.0, nx=64, dt=0.25)
    vals = np.full(grid.nx, 1.5)
    nu = Intensity(total_mass=2.0, spatial="point")
    assert integrate_against(vals, grid, nu) == pytest.approx(3.0)


def test_solution_csv_header_and_size():
    grid = GridSpec(-2.0, 2.0, 16, 0.25, 0.5)
    sol = solve_u(ONE, 1.0, 1.0, grid)
    text = solution_csv(sol, stride=1)
    lines = text.strip().split("\n")
    assert lines[0] == "t,x,u"
    assert len(lines) == 1 + grid.nx * (grid.n_steps + 1)
