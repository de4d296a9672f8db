#!/usr/bin/env python3
"""
Zero modes: weighted norms, census, interpolation and deflation
"""
from math import factorial

import numpy as np
import pytest

from models.errors import PreconditionError
from models.field import FieldConfig, Gauge, SolenoidSet, Spin
from models.modes import ZeroModeCandidate
from models.potential import Lattice, ScalarPotential
from services.zero_mode_service import ZeroModeService


@pytest.fixture
def service(quad):
    return ZeroModeService(quad, threads=1)


@pytest.fixture
def gaussian():
    return ScalarPotential.constant_field(1.0)


class TestWeightedNorms:
    def test_annulus_edges(self):
        np.testing.assert_allclose(ZeroModeService.annulus_edges(4.0),
                                   [0.0, 1.0, np.sqrt(2.0), 2.0, 2.0 * np.sqrt(2.0), 4.0])

    def test_too_few_annuli(self, service, gaussian):
        with pytest.raises(PreconditionError):
            service.mode_l2(ZeroModeCandidate.monomial(gaussian, 0), Rmax=2.0)

    @pytest.mark.parametrize("degree", [0, 3])
    def test_gaussian_moments(self, service, gaussian, degree):
        cert = service.mode_l2(ZeroModeCandidate.monomial(gaussian, degree))
        assert cert.converged
        assert cert.value == pytest.approx(2.0 * np.pi * 2 ** degree * factorial(degree), rel=1e-6)

    def test_monomials_are_orthogonal_for_radial_weights(self, service, gaussian):
        modes = [ZeroModeCandidate.monomial(gaussian, k) for k in range(3)]
        gram = service.gram_matrix(modes)
        off = gram - np.diag(np.diag(gram))
        assert np.max(np.abs(off)) < 1e-8 * np.max(np.abs(np.diag(gram)))

    def test_spin_must_match_factor(self, gaussian):
        with pytest.raises(ValueError):
            ZeroModeCandidate(gaussian, [1.0], Spin.DOWN, conjugated=False)


class TestCensus:
    def test_constant_field_spin_down(self, service, gaussian):
        census = service.mode_census(gaussian, Spin.DOWN, 10)
        assert census.count == 11

    def test_constant_field_spin_up(self, service, gaussian):
        assert service.count_admissible(gaussian, Spin.UP, 10) == 0

    def test_count_ignores_an_additive_constant(self, service, gaussian):
        shifted = gaussian.plus_constant(3.7)
        assert service.count_admissible(shifted, Spin.DOWN, 10) == service.count_admissible(gaussian, Spin.DOWN, 10)
        assert service.count_admissible(shifted, Spin.UP, 10) == 0
        base = service.mode_l2(ZeroModeCandidate.monomial(gaussian, 2)).value
        moved = service.mode_l2(ZeroModeCandidate.monomial(shifted, 2)).value
        assert moved == pytest.approx(np.exp(-7.4) * base, rel=1e-9)

    def test_negative_degree(self, service, gaussian):
        with pytest.raises(PreconditionError):
            service.mode_census(gaussian, Spin.DOWN, -1)

    def test_unnormalized_singularity_is_rejected(self, service):
        psi = ScalarPotential(lambda z: 1.2 * np.log(np.abs(z)) + 0.25 * np.abs(z) ** 2, [(0j, 1.2)],
                              quadratic_growth=0.25)
        with pytest.raises(PreconditionError, match="gauge-normalize first"):
            service.mode_census(psi, Spin.DOWN, 2)

    @pytest.mark.slow
    def test_lattice_both_spins_in_max_gauge(self, service, lattice04):
        census = service.both_spin_census(lattice04, 5)
        assert (census.down_count, census.up_count) == (6, 6)

    @pytest.mark.slow
    def test_lattice_ev_gauge_has_no_up_modes(self, service):
        field = FieldConfig(SolenoidSet.regular_lattice(Lattice.square(1.0), 0.4), gauge=Gauge.EV)
        census = service.both_spin_census(field, 5)
        assert census.up_count == 0
        assert census.down_count == 6

    def test_both_spin_census_rejects_small_intensities(self, service):
        field = FieldConfig(SolenoidSet.regular_lattice(Lattice.square(1.0), 0.02))
        with pytest.raises(PreconditionError, match="intensity window"):
            service.both_spin_census(field, 2)
        wide = FieldConfig(SolenoidSet.regular_lattice(Lattice.square(1.0), 0.4))
        with pytest.raises(PreconditionError, match="intensity window"):
            service.both_spin_census(wide, 2, theta0=0.45)

    def test_both_spin_census_needs_spin_down(self, service):
        field = FieldConfig(SolenoidSet.finite([((0, 0), -0.3)]), spin=Spin.UP)
        with pytest.raises(PreconditionError):
            service.both_spin_census(field, 2)


class TestInterpolation:
    POINTS = [0.5, 1j, -1.0]

    def test_triangular_evaluation(self, service, gaussian):
        modes = service.interpolating_modes(gaussian, self.POINTS, 4)
        E = service.evaluation_matrix(modes, self.POINTS)
        np.testing.assert_allclose(np.diag(E), 1.0, atol=1e-8)
        assert np.max(np.abs(np.triu(E, 1))) < 1e-8
        for mode in modes:
            assert service.mode_l2(mode).converged

    def test_single_point_gives_the_ground_mode(self, service, gaussian):
        modes = service.interpolating_modes(gaussian, [0.3], 0)
        assert len(modes) == 1 and modes[0].degree == 0

    def test_degree_cap_below_point_count(self, service, gaussian):
        with pytest.raises(PreconditionError):
            service.interpolating_modes(gaussian, self.POINTS, 2)

    def test_repeated_points(self, service, gaussian):
        with pytest.raises(PreconditionError):
            service.interpolating_modes(gaussian, [0.5, 0.5], 3)

    def test_point_on_a_solenoid(self, service):
        psi = ScalarPotential(lambda z: 0.4 * np.log(np.abs(z - 1)) + 0.25 * np.abs(z) ** 2, [(1 + 0j, 0.4)],
                              quadratic_growth=0.25)
        with pytest.raises(PreconditionError, match="on a solenoid"):
            service.interpolating_modes(psi, [0.0, 1.0], 3)


class TestDeflation:
    @pytest.fixture
    def minus(self):
        return ScalarPotential(lambda z: 0.75 * np.log1p(np.abs(z) ** 2), description='bump')

    def test_division_drops_the_prescribed_zeros(self, service, gaussian, minus):
        modes = service.interpolating_modes(gaussian, [0.5, 1j, -1.0], 4)
        deflated = service.deflate_finite_negative(gaussian, 2.0 * np.pi * 1.5, [1j, -1.0], modes[:1], minus)
        assert deflated[0].degree == modes[0].degree - 2
        z = np.array([0.2 + 0.1j, -0.7 + 1.3j])
        expected = modes[0].factor(z) / ((np.conj(z) - np.conj(1j)) * (np.conj(z) + 1.0))
        np.testing.assert_allclose(deflated[0].factor(z), expected, rtol=1e-8)
        np.testing.assert_allclose(deflated[0].potential(z), gaussian(z) - minus(z), rtol=1e-12)

    def test_negative_flux_needs_the_minus_potential(self, service, gaussian):
        modes = service.interpolating_modes(gaussian, [0.5, 1j, -1.0], 4)
        with pytest.raises(PreconditionError, match="potential_minus"):
            service.deflate_finite_negative(gaussian, 2.0 * np.pi * 1.5, [1j, -1.0], modes[:1])

    def test_mode_must_vanish_at_the_zeros(self, service, gaussian, minus):
        modes = service.interpolating_modes(gaussian, [0.5, 1j, -1.0], 4)
        with pytest.raises(PreconditionError, match="does not vanish"):
            service.deflate_finite_negative(gaussian, 2.0 * np.pi * 1.5, [0.5, 1j], modes[:1], minus)

    def test_too_few_zeros(self, service, gaussian, minus):
        modes = service.interpolating_modes(gaussian, [0.5, 1j], 3)
        with pytest.raises(PreconditionError, match="more prescribed zeros"):
            service.deflate_finite_negative(gaussian, 2.0 * np.pi, [1j], modes[:1], minus)


class TestExports:
    def test_amplitude_grid(self, service, gaussian):
        frame = service.amplitude_grid(ZeroModeCandidate.monomial(gaussian, 0), 1.0, 3)
        assert list(frame.columns) == ['x', 'y', 'abs_psi']
        origin = frame[(frame.x == 0) & (frame.y == 0)].iloc[0]
        assert origin.abs_psi == pytest.approx(1.0)
        corner = frame[(frame.x == 1) & (frame.y == 1)].iloc[0]
        assert corner.abs_psi == pytest.approx(np.exp(-0.5))
