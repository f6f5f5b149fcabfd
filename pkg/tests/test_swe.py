import numpy as np
import pytest

from pdo.errors import ConfigurationError, SimulationError
from pdo.grid import Grid
from pdo.sim.swe import (
    Boundary,
    IcFamily,
    SweConfig,
    SweInitParams,
    SweOrigIcParams,
    swe_init_initial,
    swe_orig_initial,
    swe_solve,
)
from pdo.util import derive_rng

PERIODIC_GRID = Grid(64, 64, -0.5, 0.5, 0.0, 0.128)
BUMP_GRID = Grid(64, 64, -2.5, 2.5, 0.0, 1.28)


class TestPeriodicInitial:
    def test_zero_coefficients_degenerate_to_flat(self):
        params = SweOrigIcParams(np.zeros(7), np.zeros(7))
        h, hu = swe_orig_initial(params, PERIODIC_GRID)
        assert np.all(h == 1.0)
        assert np.all(hu == 0.0)

    def test_single_harmonic_closed_form(self):
        lambdas = np.zeros(7)
        lambdas[4] = 1.0  # k = +1
        params = SweOrigIcParams(lambdas, np.zeros(7))
        h, _ = swe_orig_initial(params, PERIODIC_GRID)
        x = PERIODIC_GRID.x_nodes()
        assert np.allclose(h, 1.0 + (np.cos(2 * np.pi * x) + 1.0) / 2.0, atol=1e-12)
        assert h.min() == pytest.approx(1.0, abs=1e-12)
        assert h.max() == pytest.approx(2.0, abs=1e-12)

    def test_random_params_span_unit_band(self):
        for seed in range(10):
            params = SweOrigIcParams.sample(derive_rng(seed, 0))
            h, _ = swe_orig_initial(params, PERIODIC_GRID)
            assert h.min() == pytest.approx(1.0, abs=1e-6)
            assert h.max() == pytest.approx(2.0, abs=1e-6)


class TestBumpInitial:
    def test_peak_value_at_center(self):
        # Odd cell count puts a cell center exactly at x = 0.
        grid = Grid(65, 64, -2.5, 2.5, 0.0, 1.28)
        params = SweInitParams(h_in=1.2, epsilon=0.05, x0=0.0, sigma=2.0, hu0=0.0)
        h, hu = swe_init_initial(params, grid)
        center = np.argmin(np.abs(grid.x_centers()))
        assert grid.x_centers()[center] == pytest.approx(0.0, abs=1e-12)
        assert h[center] == pytest.approx(1.25, abs=1e-12)
        assert np.all(hu == 0.0)

    def test_formula_oracle_at_range_corner(self):
        params = SweInitParams(h_in=1.2, epsilon=0.05, x0=-1.0, sigma=0.2, hu0=-2.2)
        h, hu = swe_init_initial(params, BUMP_GRID)
        x = BUMP_GRID.x_centers()
        expected = 1.2 + 0.05 * np.exp(-((x + 1.0) ** 2) / (2 * 0.2**2))
        assert np.allclose(h, expected, rtol=0, atol=1e-12)
        assert np.allclose(hu, -2.2)

    def test_zero_momentum_means_zero_velocity(self):
        params = SweInitParams(h_in=2.0, epsilon=0.5, x0=0.5, sigma=1.0, hu0=0.0)
        h, hu = swe_init_initial(params, BUMP_GRID)
        assert np.all(hu / h == 0.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(h_in=1.0, epsilon=0.5, x0=0.0, sigma=1.0, hu0=0.0),
            dict(h_in=2.0, epsilon=1.5, x0=0.0, sigma=1.0, hu0=0.0),
            dict(h_in=2.0, epsilon=0.5, x0=2.0, sigma=1.0, hu0=0.0),
            dict(h_in=2.0, epsilon=0.5, x0=0.0, sigma=0.1, hu0=0.0),
            dict(h_in=2.0, epsilon=0.5, x0=0.0, sigma=1.0, hu0=3.0),
        ],
    )
    def test_out_of_range_params_rejected(self, kwargs):
        with pytest.raises(ConfigurationError):
            SweInitParams(**kwargs)


class TestSolver:
    def test_steady_state_stays_steady(self):
        h = np.ones(64)
        hu = np.zeros(64)
        field = swe_solve(SweConfig(), (h, hu), PERIODIC_GRID)
        assert np.allclose(field.channel("h"), 1.0, atol=1e-12)
        assert np.allclose(field.channel("u"), 0.0, atol=1e-12)

    def test_symmetric_dam_break_stays_symmetric(self):
        params = SweInitParams(h_in=2.0, epsilon=1.0, x0=0.0, sigma=0.5, hu0=0.0)
        config = SweConfig(boundary=Boundary.OUTFLOW, ic_family=IcFamily.DAM_BREAK)
        field = swe_solve(config, swe_init_initial(params, BUMP_GRID), BUMP_GRID)
        h = field.channel("h")
        u = field.channel("u")
        assert np.abs(h - h[:, ::-1]).max() < 1e-5
        assert np.abs(u + u[:, ::-1]).max() < 1e-5

    def test_mass_and_momentum_conservation(self):
        for seed in range(5):
            params = SweOrigIcParams.sample(derive_rng(seed, 1))
            field = swe_solve(SweConfig(), swe_orig_initial(params, PERIODIC_GRID), PERIODIC_GRID)
            h = field.channel("h").astype(np.float64)
            q = h * field.channel("u").astype(np.float64)
            mass_drift = abs(h[-1].sum() - h[0].sum()) / h[0].sum()
            mom_drift = abs(q[-1].sum() - q[0].sum()) / max(np.abs(q[-1]).sum(), 1e-12)
            assert mass_drift < 1e-6
            assert mom_drift < 1e-6

    def test_reflection_symmetry_of_trajectories(self):
        params = SweOrigIcParams.sample(derive_rng(11, 0))
        h0, hu0 = swe_orig_initial(params, PERIODIC_GRID)
        base = swe_solve(SweConfig(), (h0, hu0), PERIODIC_GRID)
        # Reflect the initial state about x = 0 and negate the velocity.
        n = PERIODIC_GRID.n_space
        reflect = (-np.arange(n)) % n
        mirrored = swe_solve(SweConfig(), (h0[reflect], -hu0[reflect]), PERIODIC_GRID)
        assert np.abs(base.channel("h")[:, reflect] - mirrored.channel("h")).max() < 1e-5
        assert np.abs(-base.channel("u")[:, reflect] - mirrored.channel("u")).max() < 1e-5

    def test_bit_determinism(self):
        params = SweOrigIcParams.sample(derive_rng(12, 0))
        a = swe_solve(SweConfig(), swe_orig_initial(params, PERIODIC_GRID), PERIODIC_GRID)
        b = swe_solve(SweConfig(), swe_orig_initial(params, PERIODIC_GRID), PERIODIC_GRID)
        assert np.array_equal(a.data, b.data)

    def test_invalid_cfl_rejected_before_stepping(self):
        with pytest.raises(ConfigurationError):
            SweConfig(cfl=1.5)

    def test_nonpositive_depth_rejected(self):
        h = np.ones(64)
        h[3] = 0.0
        with pytest.raises(SimulationError):
            swe_solve(SweConfig(), (h, np.zeros(64)), PERIODIC_GRID)
