#!/usr/bin/env python3
"""
Field model: fluxes, structural conditions, gauge and spin bookkeeping
"""
import json

import numpy as np
import pytest

from models.errors import PreconditionError, ScenarioError
from models.field import (ConstantBackground, FieldConfig, Gauge, RadialProfile, SolenoidSet, Spin)
from models.potential import Lattice
from models.region import BoxRegion, DiskRegion
from services.field_service import FieldService


@pytest.fixture
def service(quad):
    return FieldService(quad)


class TestLocalFlux:
    def test_constant_density(self, service, constant_field):
        assert service.local_flux(constant_field, (0, 0), 2.0) == pytest.approx(4 * np.pi, rel=1e-8)

    def test_single_solenoid(self, service):
        field = FieldConfig(SolenoidSet.finite([((0, 0), 0.4)]))
        assert service.local_flux(field, (0, 0), 1.0) == pytest.approx(0.8 * np.pi)

    def test_lattice_cell(self, service):
        field = FieldConfig(SolenoidSet.regular_lattice(Lattice.square(1.0), 0.3))
        assert service.local_flux(field, (0.5, 0.5), 0.9) == pytest.approx(2.4 * np.pi)

    def test_boundary_solenoid_is_ambiguous(self, service):
        field = FieldConfig(SolenoidSet.finite([((1, 0), 0.4)]))
        with pytest.raises(PreconditionError, match="boundary-ambiguous flux"):
            service.local_flux(field, (0, 0), 1.0)

    def test_additive_over_components(self, service):
        discrete = SolenoidSet.finite([((0.2, 0.1), 0.4), ((-1.0, 0.5), 0.7)])
        background = RadialProfile(coef=1.0, exponent=0.0, rmax=1.5)
        both = FieldConfig(discrete, [background])
        total = service.local_flux(both, (0, 0), 2.0)
        parts = (service.local_flux(FieldConfig(discrete), (0, 0), 2.0)
                 + service.local_flux(FieldConfig(continuous=[background]), (0, 0), 2.0))
        assert total == pytest.approx(parts, rel=1e-8)

    def test_positive_part_monotone_in_radius(self, service):
        field = FieldConfig(SolenoidSet.finite([((0.5, 0), 0.4), ((2.5, 0), -0.3)]),
                            [ConstantBackground(1.0).restricted(DiskRegion(0j, 3.0))])
        radii = [0.7, 1.3, 2.0, 2.7, 3.4]
        values = [service.local_flux(field, (0, 0), r, 'plus') for r in radii]
        assert np.all(np.diff(values) >= -1e-10)


class TestConditions:
    def test_condition_A_holds_on_lattice(self, service):
        field = FieldConfig(SolenoidSet.regular_lattice(Lattice.square(1.0), 0.4))
        report = service.check_condition_A(field, 0.3, 0.4, BoxRegion(0, 1, 0, 1))
        assert report.holds

    def test_condition_A_fails_for_constant_field(self, service, constant_field):
        report = service.check_condition_A(constant_field, 0.3, 0.01, BoxRegion(0, 1, 0, 1))
        assert not report.holds
        assert report.witness is not None
        assert report.extremal_value == pytest.approx(0.045, rel=1e-6)

    def test_condition_A_fails_for_close_pair(self, service):
        field = FieldConfig(SolenoidSet.finite([((0, 0), 0.6), ((0.1, 0), 0.6)], r0=0.1))
        report = service.check_condition_A(field, 0.3, 0.9, BoxRegion(-0.5, 0.5, -0.5, 0.5))
        assert not report.holds
        assert report.extremal_value == pytest.approx(1.2)

    def test_condition_A_needs_a_box(self, service, constant_field):
        with pytest.raises(PreconditionError):
            service.check_condition_A(constant_field, 0.3, 0.5, None)

    def test_condition_C_constant_field(self, service, constant_field):
        box = BoxRegion(0, 0.5, 0, 0.5)
        report = service.check_condition_C(constant_field, 'plus', 1.0, np.pi / 2 + 1e-3, box)
        assert report.holds
        assert report.extremal_value == pytest.approx(np.pi / 2, rel=1e-5)
        assert not service.check_condition_C(constant_field, 'plus', 1.0, 1.5, box).holds

    def test_condition_C_zero_measure(self, service):
        report = service.check_condition_C(FieldConfig(), 'minus', 1.0, 0.0, BoxRegion(0, 1, 0, 1))
        assert report.holds
        assert report.extremal_value == 0.0

    def test_condition_C_rejects_atoms(self, service):
        field = FieldConfig(SolenoidSet.finite([((0, 0), 0.4)]))
        with pytest.raises(PreconditionError, match="continuous parts only"):
            service.check_condition_C(field, 'plus', 1.0, 10.0, BoxRegion(0, 1, 0, 1))


class TestIntensityWindow:
    def test_lattice_inside_the_window(self, service, lattice04):
        report = service.check_condition_cond4(lattice04, 0.1)
        assert report.holds
        assert report.extremal_value == pytest.approx(0.4)

    def test_small_intensity_fails(self, service):
        field = FieldConfig(SolenoidSet.finite([((0, 0), 0.5), ((3, 1), 0.97)]))
        report = service.check_condition_cond4(field, 0.05)
        assert not report.holds
        assert report.witness.to_dict() == [3.0, 1.0]
        assert report.extremal_value == pytest.approx(0.03)

    def test_ev_gauge_is_read_in_max_gauge(self, service):
        field = FieldConfig(SolenoidSet.finite([((0, 0), -0.3)]), gauge=Gauge.EV)
        assert service.check_condition_cond4(field, 0.25).extremal_value == pytest.approx(0.3)

    def test_theta0_range(self, service, lattice04):
        with pytest.raises(PreconditionError):
            service.check_condition_cond4(lattice04, 0.5)


class TestGaugeAndSpin:
    @pytest.mark.parametrize("alpha, target, expected", [
        (2.3, Gauge.MAX, 0.3),
        (-0.7, Gauge.EV, 0.3),
        (0.5, Gauge.MAX, 0.5),
    ])
    def test_gauge_normalize(self, service, alpha, target, expected):
        field = FieldConfig(SolenoidSet.finite([((0, 0), alpha)]))
        normalized = service.gauge_normalize(field, target)
        assert normalized.discrete.intensities[0] == pytest.approx(expected)
        assert normalized.in_gauge()
        again = service.gauge_normalize(normalized, target)
        np.testing.assert_array_equal(again.discrete.intensities, normalized.discrete.intensities)

    def test_integer_intensity_is_rejected(self):
        with pytest.raises(PreconditionError, match="null solenoid after reduction"):
            SolenoidSet.finite([((0, 0), 2.0)])

    def test_spin_flip_lattice(self, service):
        field = FieldConfig(SolenoidSet.regular_lattice(Lattice.square(1.0), 0.3), [ConstantBackground(1.0)])
        flipped = service.spin_flip(field)
        assert flipped.discrete.alpha == pytest.approx(-0.7)
        assert flipped.continuous[0].B == -1.0
        assert flipped.spin == Spin.UP
        assert flipped.in_gauge()

    def test_spin_flip_twice(self, service):
        field = FieldConfig(SolenoidSet.finite([((0, 0), 0.3)]), [ConstantBackground(1.0)])
        back = service.gauge_normalize(service.spin_flip(service.spin_flip(field)), Gauge.MAX)
        assert back.discrete.intensities[0] == pytest.approx(0.3)
        assert back.spin == Spin.DOWN
        assert back.continuous[0].density(np.array([0j]))[0] == pytest.approx(1.0)

    def test_spin_flip_needs_max_gauge(self, service):
        field = FieldConfig(SolenoidSet.finite([((0, 0), 0.3)]), gauge=Gauge.EV)
        with pytest.raises(PreconditionError):
            service.spin_flip(field)


class TestSolenoidSet:
    def test_separation_is_enforced(self):
        with pytest.raises(PreconditionError):
            SolenoidSet.finite([((0, 0), 0.3), ((0.05, 0), 0.3)], r0=0.1)

    def test_density_bound_is_bounded(self, service):
        field = FieldConfig(SolenoidSet.regular_lattice(Lattice.square(1.0), 0.3))
        ratios = service.density_bound(field, [10.0, 30.0, 100.0])
        assert np.all(ratios <= 4.0)

    def test_scenario_round_trip_is_lossless(self):
        field = FieldConfig(SolenoidSet.finite([((0.123456789012345, -1.5), 0.3), ((2.0, 2.0), 0.71)]),
                            [ConstantBackground(0.5)], Gauge.MAX, Spin.DOWN)
        again = FieldConfig.from_dict(json.loads(json.dumps(field.to_dict())))
        np.testing.assert_array_equal(again.discrete.locations, field.discrete.locations)
        np.testing.assert_array_equal(again.discrete.intensities, field.discrete.intensities)
        assert again.to_dict() == field.to_dict()

    def test_unknown_gauge_names_the_field(self):
        with pytest.raises(ScenarioError) as info:
            FieldConfig.from_dict({'gauge': 'Coulomb'})
        assert info.value.field == 'gauge'
