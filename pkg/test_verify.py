#!/usr/bin/env python3
"""
Inequality harness: empirical constants for Psi against its mollification
"""
import numpy as np
import pytest

from models.errors import PreconditionError
from models.field import FieldConfig, PeriodicDensity, SolenoidSet
from models.potential import Lattice, Mollifier, QuadratureSpec
from models.region import BoxRegion
from models.report import InequalityReport
from models.spectrum import SplineBump
from services.verification_service import VerificationService


@pytest.fixture
def service(quad):
    return VerificationService(quad, threads=1)


@pytest.fixture
def chi():
    return Mollifier(0.25)


class TestReport:
    def test_violation_flag(self):
        assert InequalityReport('x', 1, 2.0, holds_with=1.0).violated
        assert not InequalityReport('x', 1, 0.5, holds_with=1.0).violated
        assert not InequalityReport('x', 1, 5.0).violated

    def test_negative_constant(self):
        with pytest.raises(ValueError):
            InequalityReport('x', 1, -1.0)


class TestParts:
    def test_lattice_parts(self, service, lattice04):
        assert service.part_field(lattice04, 'plus').discrete.alpha == pytest.approx(0.4)
        assert service.part_field(lattice04, 'minus').discrete.is_empty

    def test_negative_background_goes_to_minus(self, service, constant_field):
        minus = service.part_field(FieldConfig(continuous=[constant_field.continuous[0].negated()]), 'minus')
        assert minus.continuous[0].density(np.array([1j]))[0] == pytest.approx(1.0)

    def test_sign_changing_background(self, service):
        mixed = PeriodicDensity(Lattice.square(1.0), np.array([[1.0, -1.0], [-1.0, 1.0]]))
        with pytest.raises(PreconditionError, match="changes sign"):
            service.part_field(FieldConfig(continuous=[mixed]), 'plus')


class TestMollifiedComparison:
    def test_constant_field_difference_is_constant(self, service, constant_field, chi):
        report = service.mollified_comparison(constant_field, chi, 'plus', BoxRegion(-2, 2, -2, 2), n_samples=16,
                                              seed=7)
        assert report.samples == 16
        assert report.spread < 1e-8
        assert report.best_constant == pytest.approx(0.25 * chi.second_moment(), rel=1e-6)

    def test_same_seed_same_samples(self, service, constant_field, chi):
        box = BoxRegion(-1, 1, -1, 1)
        first = service.mollified_comparison(constant_field, chi, 'plus', box, n_samples=4, seed=11)
        second = service.mollified_comparison(constant_field, chi, 'plus', box, n_samples=4, seed=11)
        assert first.rows == second.rows

    def test_part_with_solenoids(self, service, lattice04, chi):
        with pytest.raises(PreconditionError, match="without solenoids"):
            service.mollified_comparison(lattice04, chi, 'plus', BoxRegion(0, 1, 0, 1))

    def test_needs_a_box(self, service, constant_field, chi):
        with pytest.raises(PreconditionError):
            service.mollified_comparison(constant_field, chi, 'plus')


class TestZeroField:
    def test_entire_constant_is_one(self, service, chi):
        report = service.entire_inequality(FieldConfig(), chi, 2.0, max_degree=3)
        assert report.best_constant == pytest.approx(1.0, abs=1e-9)
        assert report.samples == 4

    def test_local_constants(self, service, chi):
        report, opposite = service.local_inequality(FieldConfig(), 0j, chi, r0=1.0)
        assert report.samples == 12
        assert 0.0 < report.best_constant <= 1.0
        assert opposite.best_constant == pytest.approx(1.0, abs=1e-9)

    def test_global_constant_at_most_one(self, service, chi):
        family = [SplineBump(0j, 0.5, f) for f in ('one', 'z', 'zbar', 'z2')]
        report = service.global_inequality(FieldConfig(), chi, family, 2.0)
        assert 0.0 < report.best_constant <= 1.0

    def test_probe_must_stay_in_the_domain(self, service, chi):
        with pytest.raises(PreconditionError, match="leaves the domain"):
            service.global_inequality(FieldConfig(), chi, [SplineBump(1.5, 0.5)], 2.0)

    def test_d1_must_contain_d0(self, service, chi):
        with pytest.raises(PreconditionError, match="D1 must contain D0"):
            service.local_inequality(FieldConfig(), 0j, chi, r0=1.0, d1_radius=0.2)


class TestConstantField:
    def test_entire_ratio_closed_form(self, service, constant_field, chi):
        report = service.entire_inequality(constant_field, chi, 2.0, max_degree=5)
        expected = np.exp(0.5 * chi.second_moment())
        for row in report.rows:
            assert row['ratio'] == pytest.approx(expected, rel=1e-6)

    def test_declared_constant_violated(self, service, constant_field, chi):
        report = service.entire_inequality(constant_field, chi, 2.0, max_degree=5, declared=0.5)
        assert report.violated
        assert report.to_dict()['violated'] is True

    def test_condition_A_is_checked(self, service, constant_field, chi):
        with pytest.raises(PreconditionError, match="Condition A"):
            service.local_inequality(constant_field, 0j, chi, r0=1.0, theta0=0.01)


class TestConstantShift:
    SHIFT = 2.5

    def shifted(self, service, monkeypatch):
        original = service.potentials.field_potential
        monkeypatch.setattr(service.potentials, 'field_potential',
                            lambda field: original(field).plus_constant(self.SHIFT))

    def test_entire_ratios_are_unchanged(self, service, constant_field, chi, monkeypatch):
        base = service.entire_inequality(constant_field, chi, 2.0, max_degree=3)
        self.shifted(service, monkeypatch)
        moved = service.entire_inequality(constant_field, chi, 2.0, max_degree=3)
        for a, b in zip(base.rows, moved.rows):
            assert b['ratio'] == pytest.approx(a['ratio'], rel=1e-9)
        assert moved.best_constant == pytest.approx(base.best_constant, rel=1e-9)

    def test_mollified_difference_is_unchanged(self, service, constant_field, chi, monkeypatch):
        box = BoxRegion(-2, 2, -2, 2)
        base = service.mollified_comparison(constant_field, chi, 'plus', box, n_samples=8, seed=3)
        self.shifted(service, monkeypatch)
        moved = service.mollified_comparison(constant_field, chi, 'plus', box, n_samples=8, seed=3)
        assert moved.best_constant == pytest.approx(base.best_constant, abs=1e-9)


@pytest.mark.slow
class TestSolenoidLattice:
    @pytest.fixture
    def coarse(self):
        return VerificationService(QuadratureSpec(tol=1e-6, order=4, n_theta=16), threads=1)

    def test_local_constant_over_r0(self, coarse, lattice04, chi):
        family = [SplineBump(0j, 0.25, f) for f in ('one', 'z')]
        for r0 in (0.5, 1.0):
            report, opposite = coarse.local_inequality(lattice04, 0j, chi, family, r0=r0)
            assert np.isfinite(report.best_constant) and report.best_constant > 0
            assert opposite.best_constant == pytest.approx(1.0, abs=1e-9)

    def test_global_constant_is_stable_under_domain_doubling(self, coarse, chi):
        field = FieldConfig(SolenoidSet.regular_lattice(Lattice.square(1.0), 0.5))
        constants = []
        for radius in (2.0, 4.0):
            family = [SplineBump(0.5 * radius, 0.5, f) for f in ('one', 'zbar')]
            constants.append(coarse.global_inequality(field, chi, family, radius).best_constant)
        assert np.all(np.isfinite(constants))
        assert constants[1] < 1.5 * constants[0]
