import math

import numpy as np
import pytest
from scipy import stats

from psfuse.errors import ConfigurationError, InputError
from psfuse.matern import MaternParams, sample_spde
from psfuse.mesh import AreaGrid, build_structured_mesh, grid_centres, project_points
from psfuse.simulate import (
    TABLE1,
    UNIT_SQUARE,
    ScenarioConfig,
    load_dataset,
    observe_areas,
    observe_points,
    read_meta,
    sample_preferential_points,
    simulate_scenario,
    write_dataset,
)


def test_table1_wiring():
    assert TABLE1 == {1: (0.1, 800.0, 0.0), 2: (0.2, 200.0, 0.0), 3: (0.4, 50.0, 0.0),
                      4: (0.1, 800.0, 1.0), 5: (0.2, 200.0, 1.0), 6: (0.4, 50.0, 1.0)}
    for k, (rho, theta, gamma) in TABLE1.items():
        c = ScenarioConfig.from_table1(k)
        assert math.isclose(c.matern.theta_micro, theta, rel_tol=1e-9)
        assert c.preferential == (gamma != 0)
    with pytest.raises(ConfigurationError):
        ScenarioConfig.from_table1(7)
    with pytest.raises(ConfigurationError):
        ScenarioConfig(range_rho=0.2, theta_micro=300.0)
    with pytest.raises(ConfigurationError):
        ScenarioConfig(n_areas=9)


def test_scenario_is_deterministic_and_replicates_differ():
    c = ScenarioConfig.from_table1(5, n_areas=4, seed=11)
    a, b = simulate_scenario(c, 2), simulate_scenario(c, 2)
    assert np.array_equal(a.point_xy, b.point_xy)
    assert np.array_equal(a.point_values, b.point_values)
    assert np.array_equal(a.area_values, b.area_values)
    assert np.array_equal(a.truth.grid_values, b.truth.grid_values)
    other = simulate_scenario(c, 3)
    assert not np.array_equal(a.point_xy, other.point_xy)
    assert a.n_points == 100 and a.n_areas == 4
    assert a.truth.grid_xy.shape == (2500, 2)


def test_non_preferential_flag():
    d = simulate_scenario(ScenarioConfig.from_table1(2, n_areas=0))
    assert d.meta["sampling"] == "non-preferential" and d.meta["preferential"] is False
    assert d.n_areas == 0 and d.areas is None


def test_points_inside_domain_and_exact_count(unit_mesh):
    f = sample_spde(unit_mesh.fem(), MaternParams(1, 0.3), 0)
    for gamma in (0.0, 1.0, -2.0):
        xy = sample_preferential_points(f, unit_mesh, gamma, 0.05, 137, 4, UNIT_SQUARE)
        assert xy.shape == (137, 2)
        assert (xy >= 0).all() and (xy <= 1).all()
    with pytest.raises(ConfigurationError):
        sample_preferential_points(f, unit_mesh, 1.0, 0.0, 0, 1)


def test_alpha_does_not_change_the_sample(unit_mesh):
    f = sample_spde(unit_mesh.fem(), MaternParams(1, 0.3), 0)
    a = sample_preferential_points(f, unit_mesh, 1.0, 0.05, 50, 9, UNIT_SQUARE)
    b = sample_preferential_points(f, unit_mesh, 1.0, 3.0, 50, 9, UNIT_SQUARE)
    assert np.array_equal(a, b)


def test_preferential_points_sit_on_high_field_values():
    m = build_structured_mesh(UNIT_SQUARE, 0.05, 0.2)
    f = sample_spde(m.fem(), MaternParams(1, 0.2), 5)
    pref = sample_preferential_points(f, m, 2.0, 0.0, 400, 1, UNIT_SQUARE)
    unif = sample_preferential_points(f, m, 0.0, 0.0, 400, 1, UNIT_SQUARE)
    fp = project_points(m, pref).A @ f
    fu = project_points(m, unif).A @ f
    assert stats.mannwhitneyu(fp, fu, alternative="greater").pvalue < 1e-6


def test_tilted_density_matches_exp_gamma_field():
    # counts per 4x4 cell against the integral of exp(gamma * phi) on a fine grid
    m = build_structured_mesh(UNIT_SQUARE, 0.1, 0.2)
    f = sample_spde(m.fem(), MaternParams(1, 0.4), 2)
    xy = sample_preferential_points(f, m, 1.0, 0.0, 20000, 3, UNIT_SQUARE)
    g = AreaGrid(4, 4, UNIT_SQUARE)
    fine = grid_centres(UNIT_SQUARE, 200)
    w = np.exp(project_points(m, fine).A @ f)
    p = np.bincount(g.assign(fine), w, minlength=16)
    p /= p.sum()
    obs = np.bincount(g.assign(xy), minlength=16)
    assert stats.chisquare(obs, p * len(xy)).pvalue > 1e-3


def test_point_noise_variance(unit_mesh):
    f = np.zeros(unit_mesh.n_nodes)
    xy = np.random.default_rng(0).uniform(size=(20000, 2))
    y = observe_points(f, unit_mesh, xy, 0.3, 10.0, 1)
    assert abs(y.mean() - 0.3) < 0.01
    assert abs(y.var() - 0.1) < 0.005


def test_constant_field_areas(unit_mesh):
    g = AreaGrid(5, 5, UNIT_SQUARE)
    f = np.full(unit_mesh.n_nodes, 1.7)
    y = observe_areas(f, unit_mesh, g, 0.5, 1e12, 0)
    assert np.allclose(y, 2.2, atol=1e-5)


def test_area_values_match_fine_quadrature():
    # equal-weight node averages against a 200x200 quadrature of the interpolated field
    # boundary nodes go to the lower cell, so the error is first order in the edge length
    m = build_structured_mesh(UNIT_SQUARE, 0.005, 0.2)
    f = sample_spde(m.fem(), MaternParams(1, 0.2), 8)
    g = AreaGrid(5, 5, UNIT_SQUARE)
    y = observe_areas(f, m, g, 0.0, 1e12, 0)
    fine = grid_centres(UNIT_SQUARE, 200)
    lab = g.assign(fine)
    exact = np.bincount(lab, project_points(m, fine).A @ f) / np.bincount(lab)
    assert np.sqrt(np.mean((y - exact) ** 2)) < 0.02 * f.std()


def test_linear_field_area_error_shrinks_under_refinement():
    g = AreaGrid(2, 2, UNIT_SQUARE)
    errs = []
    for edge in (0.1, 0.05, 0.025):
        m = build_structured_mesh(UNIT_SQUARE, edge, 0.2)
        f = 1 + 2 * m.nodes[:, 0] - 3 * m.nodes[:, 1]
        y = observe_areas(f, m, g, 0.0, 1e12, 0)
        c = grid_centres(UNIT_SQUARE, 2)
        errs.append(np.sqrt(np.mean((y - (1 + 2 * c[:, 0] - 3 * c[:, 1])) ** 2)))
    assert errs[0] > 0
    assert errs[0] / errs[1] >= 2 - 1e-9 and errs[1] / errs[2] >= 2 - 1e-9


def test_dataset_file_round_trip(tmp_path):
    d = simulate_scenario(ScenarioConfig.from_table1(5, n_areas=25), 1)
    write_dataset(tmp_path, d)
    back = load_dataset(tmp_path / "points.csv", tmp_path / "areas.csv", tmp_path / "areas_geom.txt")
    assert np.allclose(back.point_xy, d.point_xy, rtol=0, atol=1e-12)
    assert np.allclose(back.point_values, d.point_values, rtol=0, atol=1e-12)
    assert np.allclose(back.area_values, d.area_values, rtol=0, atol=1e-12)
    assert isinstance(back.areas, AreaGrid) and len(back.areas) == 25
    assert read_meta(tmp_path)["replicate"] == 1
    assert (tmp_path / "truth.csv").exists()


def test_area_values_without_geometry_rejected(tmp_path):
    d = simulate_scenario(ScenarioConfig.from_table1(5, n_areas=4))
    write_dataset(tmp_path, d)
    with pytest.raises(InputError):
        load_dataset(tmp_path / "points.csv", tmp_path / "areas.csv")


def test_subgrid_areas_average_the_interpolated_field():
    m = build_structured_mesh(UNIT_SQUARE, 0.07, 0.2)
    f = sample_spde(m.fem(), MaternParams(1, 0.2), 3)
    g = AreaGrid(10, 10, UNIT_SQUARE)
    y = observe_areas(f, m, g, 0.5, 1e12, 0, subgrid=20)
    fine = grid_centres(UNIT_SQUARE, 200)
    exact = np.bincount(g.assign(fine), project_points(m, fine).A @ f) / 400
    assert np.allclose(y, 0.5 + exact, atol=1e-5)
    with pytest.raises(ConfigurationError):
        observe_areas(f, m, [(0, 0, 1, 1)], 0, 10, 0, subgrid=4)


def test_simulated_areas_use_exact_cell_averages():
    d = simulate_scenario(ScenarioConfig.from_table1(5, n_areas=100, tau_B=1e12), 0)
    fine = grid_centres(UNIT_SQUARE, 200)
    exact = np.bincount(d.areas.assign(fine), project_points(d.truth.mesh, fine).A @ d.truth.field) / 400
    assert np.allclose(d.area_values, exact, atol=1e-5)
