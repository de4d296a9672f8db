#!/usr/bin/env python3
"""
Scalar potentials: closed forms, Poisson checks, mollification and grids
"""
import numpy as np
import pytest

from config import Config
from models.errors import PreconditionError, SingularityError
from models.field import ConstantBackground, FieldConfig, RadialProfile, SolenoidSet
from models.perturbation import Measure
from models.potential import Lattice, Mollifier, PeriodicMeasure, QuadratureSpec, ScalarPotential
from services.potential_service import PotentialService


@pytest.fixture
def service(quad):
    return PotentialService(quad)


class TestSolenoidPotentials:
    def test_single_solenoid_is_a_logarithm(self, service):
        solenoids = SolenoidSet.finite([((0, 0), 0.4)])
        assert service.lattice_potential(solenoids, 2.0) == pytest.approx(0.4 * np.log(2.0))

    def test_off_origin_solenoid_is_regularized(self, service):
        solenoids = SolenoidSet.finite([((2, 0), 0.4)])
        expected = 0.4 * (np.log(0.5) + 0.5 + 0.125)
        assert service.lattice_potential(solenoids, 1.0) == pytest.approx(expected, rel=1e-12)
        assert service.lattice_potential(solenoids, 0.0) == pytest.approx(0.0, abs=1e-15)

    def test_regularized_gradient(self, service):
        field = FieldConfig(SolenoidSet.finite([((0, 0), 0.4), ((2, 1), 0.3)]))
        psi = service.field_potential(field)
        z, h = 0.7 - 0.6j, 1e-6
        dx = (psi(z + h) - psi(z - h)) / (2 * h)
        dy = (psi(z + 1j * h) - psi(z - 1j * h)) / (2 * h)
        assert psi.gradient_dz(np.array([z]))[0] == pytest.approx(0.5 * (dx - 1j * dy), rel=1e-6)

    def test_evaluation_at_a_solenoid(self, service):
        solenoids = SolenoidSet.finite([((1, 1), 0.4)])
        with pytest.raises(SingularityError):
            service.lattice_potential(solenoids, (1, 1))

    def test_periodic_potential_is_singular_on_the_lattice(self, service):
        with pytest.raises(SingularityError):
            service.periodic_potential(Lattice.square(1.0), 0.4, 2 + 3j)

    def test_zero_intensity_is_rejected(self, service):
        with pytest.raises(PreconditionError):
            service.periodic_potential(Lattice.square(1.0), 0.0, 0.5)

    def test_ewald_part_is_periodic(self, service):
        lattice = Lattice.square(1.0)
        z = np.array([0.3 + 0.2j, -0.41 + 0.17j])
        base = service.ewald_rho(lattice, z)
        np.testing.assert_allclose(service.ewald_rho(lattice, z + 1), base, atol=1e-10)
        np.testing.assert_allclose(service.ewald_rho(lattice, z + 3j), base, atol=1e-10)

    def test_periodic_potential_is_harmonic_off_the_lattice(self, service):
        lattice = Lattice.square(1.0)
        psi = ScalarPotential(lambda z: service.periodic_potential(lattice, 0.4, z))
        residual = service.poisson_residual(psi, np.array([0.5 + 0.3j, 0.25 + 0.7j]), 1e-3)
        assert np.max(np.abs(residual)) < 1e-4

    def test_square_lattice_forms_agree(self, service):
        lattice = Lattice.square(1.0)
        solenoids = SolenoidSet.regular_lattice(lattice, 0.4)
        z = np.array([0.5 + 0.5j, 0.2 - 0.35j])
        np.testing.assert_allclose(service.periodic_potential(lattice, 0.4, z),
                                   service.lattice_potential(solenoids, z), atol=1e-6)

    def test_quadratic_growth_of_lattice_field(self, service, lattice04):
        psi = service.field_potential(lattice04)
        assert psi.quadratic_growth == pytest.approx(0.4 * np.pi / 2)


class TestBackgroundPotentials:
    def test_constant_field(self, service, constant_field):
        psi = service.field_potential(constant_field)
        assert psi(1 + 1j) == pytest.approx(0.5)
        assert psi.laplacian(np.array([3j]))[0] == 1.0

    def test_uniform_disk_outside_and_at_center(self, service):
        disk = RadialProfile(coef=1.0, exponent=0.0, rmax=1.0)
        assert service.log_potential_continuous(disk, 2.0) == pytest.approx(0.5 * np.log(2.0), rel=1e-7)
        assert service.log_potential_continuous(disk, 0.0) == pytest.approx(-0.25, rel=1e-6)

    def test_additive_potential_of_constant_density(self, service, constant_field):
        assert service.additive_potential(constant_field, 1.0, 2.0) == pytest.approx(1.0, rel=1e-6)

    def test_infinite_measure_needs_the_additive_form(self, service):
        with pytest.raises(PreconditionError):
            service.log_potential_continuous(ConstantBackground(1.0), 1.0)

    def test_wiggle_field_poisson_residual(self, service):
        psi = service.wiggle_field(1.0, 0.3)
        z = np.array([0.4 + 0.9j, -1.2 + 0.3j])
        residual = service.poisson_residual(psi, z, 1e-3, psi.laplacian)
        assert np.max(np.abs(residual)) < 1e-4


class TestMollification:
    def test_far_from_the_support_nothing_changes(self, service):
        chi = Mollifier(0.5)
        psi = service.field_potential(FieldConfig(SolenoidSet.finite([((0, 0), 0.4)])))
        assert service.mollify(psi, chi, 2.0) == pytest.approx(0.4 * np.log(2.0), rel=1e-7)

    def test_singular_correction_matches_closed_form(self, service):
        chi = Mollifier(0.5)
        psi = service.field_potential(FieldConfig(SolenoidSet.finite([((0, 0), 0.4)])))
        exact = service.mollified_solenoid((0, 0), 0.4, chi)
        for z in (0.1, 0.3j, 0.0):
            assert service.mollify(psi, chi, z) == pytest.approx(exact(z), abs=1e-8)

    def test_mollified_solenoid_total_mass(self):
        chi = Mollifier(0.7)
        assert chi.total_mass() == pytest.approx(1.0, rel=1e-10)


class TestSingularRemainder:
    def test_remainder_of_a_pair(self, service):
        field = FieldConfig(SolenoidSet.finite([((0, 0), 0.4), ((2, 0), 0.3)]))
        psi = service.field_potential(field)
        assert service.potential_minus_log(psi, 0j) == pytest.approx(0.0, abs=1e-6)
        expected = 0.3 * (np.log(0.95) + 0.05 + 0.00125)
        assert service.potential_minus_log(psi, 0.1) == pytest.approx(expected, abs=1e-12)

    def test_grid_marks_singular_nodes(self, service):
        psi = service.field_potential(FieldConfig(SolenoidSet.finite([((0, 0), 0.4)])))
        grid = service.potential_grid(psi, -1, 1, 3, -1, 1, 3)
        assert list(grid.columns) == ['x', 'y', 'psi', 'psi_minus_log', 'nearest_singularity_distance']
        center = grid[(grid.x == 0) & (grid.y == 0)].iloc[0]
        assert center.psi == float('-inf')
        assert center.nearest_singularity_distance == 0.0


class TestWeierstrassSigma:
    def test_leading_factor(self, service):
        lattice = Lattice.square(1.0)
        value, _ = service.weierstrass_sigma(lattice, 1e-6)
        assert abs(value / 1e-6 - 1.0) < 1e-9
        zero, log_modulus = service.weierstrass_sigma(lattice, 0.0)
        assert zero == 0 and log_modulus == float('-inf')

    def test_odd_symmetry(self, service, rng):
        lattice = Lattice.square(1.0)
        z = rng.uniform(-1.5, 1.5, 5) + 1j * rng.uniform(-1.5, 1.5, 5)
        plus, _ = service.weierstrass_sigma(lattice, z)
        minus, _ = service.weierstrass_sigma(lattice, -z)
        np.testing.assert_allclose(minus, -plus, rtol=1e-8)

    def test_log_modulus_matches_lattice_potential(self, service):
        lattice = Lattice.square(1.0)
        _, log_modulus = service.weierstrass_sigma(lattice, 0.5 + 0.25j)
        solenoids = SolenoidSet.regular_lattice(lattice, 0.5)
        assert service.lattice_potential(solenoids, 0.5 + 0.25j) == pytest.approx(0.5 * log_modulus, abs=1e-6)

    def test_square_lattice_constants(self, service):
        lattice = Lattice.square(1.0)
        nu, _ = service.lattice_constants(lattice)
        assert abs(nu) < 1e-6
        assert lattice.m == pytest.approx(np.pi / 2)

    def test_periodic_form_far_from_the_origin(self, service):
        lattice = Lattice.square(1.0)
        nu, _ = service.lattice_constants(lattice)
        z = np.array([7.3 + 4.6j, -6.2 + 5.45j])
        sigma_form = service.lattice_potential(SolenoidSet.regular_lattice(lattice, 0.5), z)
        periodic_form = service.periodic_potential(lattice, 0.5, z) + 0.5 * (nu * z ** 2).real
        np.testing.assert_allclose(periodic_form, sigma_form, atol=1e-5)


class TestQuasiPeriodic:
    def test_single_atom_is_a_shifted_periodic_potential(self, service):
        lattice = Lattice.square(1.0)
        center = 0.5 + 0.5j
        components = [(lattice, PeriodicMeasure(lattice, atoms=[(center, 2.0 * np.pi)]))]
        z = np.array([0.2 + 0.1j, 1.3 - 0.4j])
        expected = 2.0 * np.pi * service.periodic_potential(lattice, 1.0, z - center)
        np.testing.assert_allclose(service.quasi_periodic_potential(components, z), expected, rtol=1e-10)

    def test_evaluation_at_an_atom(self, service):
        lattice = Lattice.square(1.0)
        components = [(lattice, PeriodicMeasure(lattice, atoms=[(0.5 + 0.5j, 1.0)]))]
        with pytest.raises(SingularityError):
            service.quasi_periodic_potential(components, 1.5 + 0.5j)

    def test_flux_density_total(self):
        square = Lattice.square(1.0)
        wide = Lattice.square(2.0)
        components = [(square, PeriodicMeasure(square, samples=np.full((2, 2), 1.0))),
                      (wide, PeriodicMeasure(wide, samples=np.full((2, 2), -1.0)))]
        assert PotentialService.flux_density_total(components[:1]) == pytest.approx(1.0)
        assert PotentialService.flux_density_total(components) == pytest.approx(0.0, abs=1e-12)


class TestRegularizedFinitePotential:
    def test_atom_inside_the_split_disk(self, service):
        measure = Measure([(1 + 0j, 2.0 * np.pi)])
        assert service.regularized_finite_potential(measure, 3.0) == pytest.approx(np.log(2.0))

    def test_atom_outside_the_split_disk(self, service):
        measure = Measure([(10 + 0j, 2.0 * np.pi)])
        assert service.regularized_finite_potential(measure, 0.0) == pytest.approx(np.log(2.0))

    def test_infinite_mass(self, service):
        with pytest.raises(PreconditionError, match="infinite total mass"):
            service.regularized_finite_potential(ConstantBackground(1.0), 1.0)


class TestQuadratureDefaults:
    def test_resolution_comes_from_config(self, monkeypatch):
        monkeypatch.setattr(Config, 'GAUSS_ORDER', 5)
        monkeypatch.setattr(Config, 'POLAR_SECTORS', 24)
        resolution = QuadratureSpec()
        assert (resolution.order, resolution.n_theta) == (5, 24)
        assert QuadratureSpec.from_dict({'order': 12}).n_theta == 24
        assert QuadratureSpec(order=3, n_theta=16).order == 3

    def test_bad_resolution_is_rejected(self, monkeypatch):
        monkeypatch.setattr(Config, 'POLAR_SECTORS', 0)
        with pytest.raises(ValueError, match="POLAR_SECTORS"):
            Config.validate_config()
