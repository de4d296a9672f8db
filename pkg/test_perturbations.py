#!/usr/bin/env python3
"""
Perturbations: coverings, rearrangement potentials, size statistics and worked examples
"""
import numpy as np
import pytest

from models.errors import PreconditionError, ScenarioError
from models.field import ConstantBackground, SolenoidSet
from models.perturbation import Measure, RearrangementMap
from models.region import SquareLocator
from services.perturbation_service import PerturbationService


@pytest.fixture
def service(quad):
    return PerturbationService(quad, threads=1)


@pytest.fixture
def covering(service):
    return service.build_square_covering(0.5, 64.0)


class TestSquareCovering:
    def test_tile_sides_follow_the_growth_law(self, covering):
        for tile in covering:
            if abs(tile.center) >= 3.0:
                scale = abs(tile.center) ** 0.5
                assert 0.25 * scale <= tile.side <= 4.0 * scale

    def test_tiles_cover_without_overlap(self, covering, rng):
        r = 60.0 * np.sqrt(rng.uniform(0, 1, 300))
        w = r * np.exp(2j * np.pi * rng.uniform(0, 1, 300))
        hits = np.sum([tile.contains(w) for tile in covering], axis=0)
        assert np.all(hits == 1)
        centers, sides = PerturbationService.covering_arrays(covering)
        assert np.all(SquareLocator(centers, sides).locate(w) >= 0)

    def test_table_columns(self, covering):
        table = PerturbationService.covering_table(covering)
        assert list(table.columns) == ['center_x', 'center_y', 'side', 'layer']
        assert len(table) == len(covering)

    @pytest.mark.parametrize("tau, rmax", [(1.0, 64.0), (0.0, 64.0), (0.5, 2.0)])
    def test_invalid_arguments(self, service, tau, rmax):
        with pytest.raises(PreconditionError):
            service.build_square_covering(tau, rmax)

    def test_tile_masses(self, service, covering):
        centers, sides = PerturbationService.covering_arrays(covering)
        masses = service.tile_masses(Measure([(0.1 + 0.1j, 3.0)], [ConstantBackground(2.0)]), covering)
        expected = 2.0 * sides ** 2
        expected[np.argmin(np.abs(centers))] += 3.0
        np.testing.assert_allclose(masses, expected, rtol=1e-12)

    def test_square_to_center_respects_its_bound(self, covering, rng):
        phi = RearrangementMap.square_to_center(covering, 0.5)
        w = 50.0 * (rng.uniform(-1, 1, 200) + 1j * rng.uniform(-1, 1, 200))
        assert np.all(phi.displacement_ok(w))


class TestRearrangementMaps:
    def test_sector_rotation(self):
        phi = RearrangementMap.sector_rotate(0.0, 0.5, 1.0, 0.5)
        moved = phi(np.array([4.0 * np.exp(0.2j), 4.0 * np.exp(2.0j)]))
        assert moved[0] == pytest.approx(4.0 * np.exp(0.7j))
        assert moved[1] == pytest.approx(4.0 * np.exp(2.0j))

    def test_unknown_kind(self):
        with pytest.raises(ScenarioError):
            RearrangementMap('Shuffle')

    def test_tau_range(self):
        with pytest.raises(PreconditionError):
            RearrangementMap('Identity', tau=1.0)


class TestRearrangementPotentials:
    def test_identity_moves_nothing(self, service):
        solenoids = SolenoidSet.finite([((2, 0), 0.3), ((0, 3), 0.2)])
        values = service.rearrangement_potential_disc(solenoids, RearrangementMap.identity(), np.array([1 + 1j, -2j]))
        np.testing.assert_array_equal(values, 0.0)

    def test_single_moved_solenoid(self, service):
        solenoids = SolenoidSet.finite([((2, 0), 0.3)])
        phi = RearrangementMap.tabulated([((2, 0), (2, 0.5))])
        z = 0.7 - 1.1j
        src, img = 2.0 + 0j, 2.0 + 0.5j
        expected = 0.3 * (np.log(abs(img - z)) - np.log(abs(src - z)) + (z * (1 / img - 1 / src)).real)
        assert service.rearrangement_potential_disc(solenoids, phi, z, r0=0.4) == pytest.approx(expected, rel=1e-12)

    def test_merged_intensity_bound(self, service):
        solenoids = SolenoidSet.finite([((2, 0), 0.3), ((2, 1), 0.3)])
        phi = RearrangementMap.tabulated([((2, 0), (2, 0.5)), ((2, 1), (2, 0.5))])
        images, merged = PerturbationService.merged_images(solenoids, phi)
        assert images.size == 1 and merged[0] == pytest.approx(0.6)
        with pytest.raises(PreconditionError, match="exceeds theta0"):
            service.rearrangement_potential_disc(solenoids, phi, 0j, theta0=0.5)

    def test_image_too_close_to_another_solenoid(self, service):
        solenoids = SolenoidSet.finite([((2, 0), 0.3), ((5, 0), 0.2)])
        phi = RearrangementMap.tabulated([((2, 0), (4.5, 0))])
        with pytest.raises(PreconditionError, match="closer than r0"):
            service.rearrangement_potential_disc(solenoids, phi, 1j)
        assert np.isfinite(service.rearrangement_potential_disc(solenoids, phi, 1j, r0=0.5))

    def test_continuous_identity_moves_nothing(self, service):
        values = service.rearrangement_potential_cont(ConstantBackground(1.0), RearrangementMap.identity(), 10.0,
                                                      np.array([1 + 1j, 5.0]))
        np.testing.assert_array_equal(values, 0.0)

    def test_moved_atom_uses_the_inner_kernel(self, service):
        phi = RearrangementMap.tabulated([((3, 0), (4, 0))])
        z = 1.0 + 1.0j
        expected = np.log(abs(1 - z / 4)) - np.log(abs(1 - z / 3))
        value = service.rearrangement_potential_cont(Measure([(3 + 0j, 2.0 * np.pi)]), phi, 10.0, z)
        assert value == pytest.approx(expected, rel=1e-12)

    def test_lattice_is_rejected(self, service, lattice04):
        with pytest.raises(PreconditionError):
            service.rearrangement_potential_disc(lattice04.discrete, RearrangementMap.identity(), 0.5)


class TestMeasureStats:
    def test_constant_density(self, service):
        stats = service.measure_stats(ConstantBackground(1.0), [1.0, 2.0, 4.0])
        np.testing.assert_allclose(stats.omega, np.pi * np.array([1.0, 4.0, 16.0]), rtol=1e-8)
        assert np.max(np.abs(stats.M)) < 1e-10

    def test_single_atom(self, service):
        stats = service.measure_stats(Measure([(2 + 0j, 1.0)]), [3.0])
        assert stats.omega[0] == pytest.approx(1.0)
        assert stats.M[0] == pytest.approx(0.25)

    def test_radii_must_increase(self, service):
        with pytest.raises(PreconditionError):
            service.measure_stats(ConstantBackground(1.0), [2.0, 1.0])

    def test_area_growth_slope(self, service):
        assert service.omega_slope(ConstantBackground(1.0), [2.0, 4.0, 8.0, 16.0]) == pytest.approx(2.0, abs=1e-6)


class TestExamples:
    def test_unknown_builder(self, service):
        with pytest.raises(ScenarioError) as info:
            service.example_field('Ex9')
        assert info.value.field == 'builder'

    def test_sector_opening(self, service):
        with pytest.raises(ScenarioError):
            service.example_field('Ex2', {'theta1': 0.0, 'theta2': 4.0})

    def test_double_angle(self, service):
        example = service.example_field('Ex2', {'rmax': 16.0})
        assert len(example.field.continuous) == 3
        assert np.isfinite(example.diagnostics['M_max'])

    def test_variable_lattice(self, service):
        example = service.example_field('Ex3', {'rmax': 12.0, 'seed': 3})
        assert example.field.in_gauge()
        assert example.diagnostics['tiles'] > 0
        assert example.diagnostics['B'] == pytest.approx(2.0 * np.pi * 0.25)
        assert np.isfinite(example.diagnostics['discrepancy_ratio_max'])

    def test_variable_lattice_intensity_range(self, service):
        with pytest.raises(ScenarioError):
            service.example_field('Ex3', {'alpha0': 0.1, 'amplitude': 0.2})

    def test_wiggle(self, service):
        example = service.example_field('Ex4', {'rmax': 12.0, 'a': 0.3})
        assert example.diagnostics['mean_deviation_max'] <= 0.3 + 1e-12
        assert example.rearrangement.kind == 'SquareToCenter'


class TestGrowthFits:
    def test_power_law_slope(self):
        slope, intercept = PerturbationService.growth_fit(lambda z: 3.0 * np.abs(z) ** 1.5, [10.0, 100.0, 1000.0])
        assert slope == pytest.approx(1.5, rel=1e-10)
        assert intercept == pytest.approx(np.log(3.0), rel=1e-10)

    def test_quadratic_coefficient(self):
        coefficient = PerturbationService.quadratic_coefficient(lambda z: 0.5 * np.abs(z) ** 2 + z.real, [20.0, 200.0])
        assert coefficient == pytest.approx(0.5, rel=0.02)

    def test_vanishing_function(self):
        assert PerturbationService.growth_fit(lambda z: np.zeros(z.shape), [1.0, 2.0])[0] == 0.0
