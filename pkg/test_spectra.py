#!/usr/bin/env python3
"""
Discretized spin spectra, trial quotients and the commutation identity
"""
import numpy as np
import pytest
from scipy import sparse

from models.errors import PreconditionError
from models.field import ConstantBackground, FieldConfig, SolenoidSet, Spin
from models.potential import ScalarPotential
from models.spectrum import GaussianBump, SpectralProblem
from services.potential_service import PotentialService
from services.spectral_service import SpectralService

BESSEL_J01_SQUARED = 2.404825557695773 ** 2
BESSEL_J11_SQUARED = 3.831705970207512 ** 2


@pytest.fixture
def service(quad):
    return SpectralService(quad, threads=1)


class TestEigenSolver:
    def test_diagonal_problem(self, service):
        result = service.lowest_eigs(SpectralProblem.diagonal([2.0, 0.0, 1.0]), 3)
        np.testing.assert_allclose(result.eigenvalues, [0.0, 1.0, 2.0], atol=1e-12)
        assert result.zero_count == 1
        assert result.gap == pytest.approx(1.0)

    def test_k_must_be_positive(self, service):
        with pytest.raises(PreconditionError):
            service.lowest_eigs(SpectralProblem.diagonal([1.0]), 0)

    def test_mass_and_stiffness_must_match(self):
        with pytest.raises(ValueError):
            SpectralProblem(sparse.identity(3, format='csr'), np.ones(2))


class TestFreeDisk:
    @pytest.fixture(scope='class')
    def free_disk(self):
        service = SpectralService(threads=1)
        problem = service.assemble(ScalarPotential.zero(), Spin.DOWN, 1.0, 1.0 / 64)
        return problem, service.lowest_eigs(problem, 3)

    def test_ground_state(self, free_disk):
        _, result = free_disk
        assert result.eigenvalues[0] == pytest.approx(BESSEL_J01_SQUARED, rel=0.02)
        assert result.zero_count == 0
        assert result.gap == result.eigenvalues[0]

    def test_first_ratio(self, free_disk):
        _, result = free_disk
        ratio = result.eigenvalues[1] / result.eigenvalues[0]
        assert ratio == pytest.approx(BESSEL_J11_SQUARED / BESSEL_J01_SQUARED, rel=0.03)

    def test_residuals_are_certified(self, free_disk):
        _, result = free_disk
        assert np.all(result.residuals <= 1e-8 * np.maximum(1.0, np.abs(result.eigenvalues)))

    def test_eigenvector_grid(self, free_disk):
        problem, result = free_disk
        frame = SpectralService.eigenvector_grid(problem, result, 2)
        assert list(frame.columns) == ['x', 'y', 'abs_u0', 'abs_u1']
        assert len(frame) == problem.dimension

    def test_coarse_mesh_is_rejected(self, service):
        with pytest.raises(PreconditionError, match="domain_radius / 64"):
            service.assemble(ScalarPotential.zero(), Spin.DOWN, 1.0, 0.1)

    def test_mesh_near_solenoids(self, service):
        field = FieldConfig(SolenoidSet.finite([((0.05, 0), 0.4), ((-0.05, 0), 0.4)]))
        with pytest.raises(PreconditionError, match="r0 / 8"):
            service.field_problem(field, Spin.DOWN, 2.0, 2.0 / 64)


class TestRichardson:
    def test_second_order_sequence(self):
        sequence = [(0.1, [1.01, 3.0]), (0.05, [1.0025, 3.0])]
        assert SpectralService.richardson(sequence) == pytest.approx(1.0)
        assert SpectralService.richardson(sequence, 1) == pytest.approx(3.0)

    def test_needs_two_levels(self):
        with pytest.raises(PreconditionError):
            SpectralService.richardson([(0.1, [1.0])])


class TestMeshStudy:
    def test_free_disk_refinement(self, service):
        problem, result = service.mesh_study(ScalarPotential.zero(), Spin.DOWN, 1.0, 1.0 / 64, 2, levels=2)
        assert [h for h, _ in result.h_sequence] == [1.0 / 64, 1.0 / 128]
        assert problem.h == 1.0 / 128
        np.testing.assert_allclose(result.h_sequence[-1][1], result.eigenvalues)
        for _, values in result.h_sequence:
            assert values[0] == pytest.approx(BESSEL_J01_SQUARED, rel=0.03)
        assert SpectralService.richardson(result.h_sequence) == pytest.approx(BESSEL_J01_SQUARED, rel=0.02)

    def test_single_level(self, service):
        _, result = service.mesh_study(ScalarPotential.zero(), Spin.DOWN, 1.0, 1.0 / 64, 1, levels=1)
        assert len(result.h_sequence) == 1
        with pytest.raises(PreconditionError):
            SpectralService.richardson(result.h_sequence)


class TestRayleighBump:
    @pytest.mark.parametrize("R", [0.5, 1.0, 2.0])
    def test_scaling(self, service, R):
        assert service.rayleigh_bump(FieldConfig(), 0j, R) == pytest.approx(20.0 / 3.0 / R ** 2, rel=1e-10)

    def test_solenoids_outside_the_hole(self, service):
        field = FieldConfig(SolenoidSet.finite([((3, 0), 0.4), ((0, -2.5), 0.7)]))
        assert service.rayleigh_bump(field, (0.2, 0.1), 1.0) == pytest.approx(20.0 / 3.0, rel=1e-10)

    def test_field_outside_the_hole_is_ignored(self, service, monkeypatch):
        def unused(*args, **kwargs):
            raise AssertionError("potential evaluated")

        monkeypatch.setattr(PotentialService, 'field_potential', unused)
        outside = FieldConfig(SolenoidSet.finite([((4, 0), 0.4), ((0, 5), 0.9)]))
        assert service.rayleigh_bump(outside, 0j, 1.5) == service.rayleigh_bump(FieldConfig(), 0j, 1.5)

    def test_field_inside_the_hole(self, service, constant_field):
        with pytest.raises(PreconditionError, match="not zero on the hole"):
            service.rayleigh_bump(constant_field, 0j, 1.0)


class TestCommutation:
    def test_constant_field(self, service):
        psi = ScalarPotential.constant_field(1.0)
        difference, rhs = service.commutation_check(psi, GaussianBump(0.3 + 0.1j, 0.5, (1.0, 0.5)))
        assert rhs > 0
        assert difference == pytest.approx(rhs, rel=1e-8)

    def test_zero_field(self, service):
        difference, rhs = service.commutation_check(ScalarPotential.zero(), GaussianBump(0j, 0.5))
        assert rhs == 0.0
        assert abs(difference) < 1e-10

    def test_wiggle_field(self, service):
        psi = PotentialService.wiggle_field(1.0, 0.3)
        difference, rhs = service.commutation_check(psi, GaussianBump(0.5j, 0.4, (1.0, -0.2j)))
        assert difference == pytest.approx(rhs, rel=1e-8)

    def test_probe_on_a_solenoid(self, service):
        psi = ScalarPotential(lambda z: 0.4 * np.log(np.abs(z)), [(0j, 0.4)])
        with pytest.raises(PreconditionError, match="mollify"):
            service.commutation_check(psi, GaussianBump(0.5, 0.2))


@pytest.mark.slow
class TestLandauLevels:
    def test_constant_field_gap(self):
        service = SpectralService(threads=1)
        problem = service.assemble(ScalarPotential.constant_field(1.0), Spin.DOWN, 6.0, 6.0 / 64)
        result = service.lowest_eigs(problem, 40)
        assert result.zero_count >= 5
        assert result.gap == pytest.approx(2.0, rel=0.05)

    def test_spin_up_has_no_zero_modes(self):
        service = SpectralService(threads=1)
        field = FieldConfig(continuous=[ConstantBackground(1.0)])
        problem = service.field_problem(field, Spin.UP, 6.0, 6.0 / 64)
        result = service.lowest_eigs(problem, 4)
        assert result.zero_count == 0

    def test_refinement_at_radius_ten(self):
        service = SpectralService(threads=1)
        problem, result = service.mesh_study(ScalarPotential.constant_field(1.0), Spin.DOWN, 10.0, 1.0 / 16, 80,
                                             levels=2, zero_tol=0.05)
        assert problem.h == 1.0 / 32
        coarse = np.asarray(result.h_sequence[0][1])
        assert result.zero_count >= max(3, int(np.sum(coarse < 0.05)))
        assert 1.8 <= result.gap <= 2.2
