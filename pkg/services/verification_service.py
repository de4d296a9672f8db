import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import Config
from models.errors import PreconditionError
from models.field import ContinuousBackground, FieldConfig, SolenoidSet, Spin
from models.potential import Mollifier, QuadratureSpec, ScalarPotential
from models.region import BoxRegion
from models.report import InequalityReport
from models.spectrum import ProbeFunction, spline_family
from services.field_service import FieldService
from services.potential_service import PotentialService
from utils.helpers import PerformanceHelper, QuadratureHelper, ValidationHelper

logger = logging.getLogger(__name__)

COVERING_MULTIPLICITY = 4
SIGN_PROBE_RADIUS = 16.0
# probes vanish outside support_radius; the slightly larger disk keeps lattice points off its rim
PROBE_DISK_MARGIN = 1.05

Rule = Tuple[np.ndarray, np.ndarray, np.ndarray]


class VerificationService:
    """Empirical constants for the weighted inequalities comparing Psi with its mollification"""

    def __init__(self, quad: Optional[QuadratureSpec] = None, threads: Optional[int] = None):
        self.quad = quad or QuadratureSpec(tol=Config.TOL)
        self.threads = threads or Config.THREADS
        self.potentials = PotentialService(self.quad, self.threads)
        self.fields = FieldService(self.quad, self.threads)

    # signed parts of the field

    @staticmethod
    def _background_sign(bg: ContinuousBackground) -> int:
        center, radius = bg.support()
        radius = min(radius, SIGN_PROBE_RADIUS)
        x = np.linspace(-radius, radius, 65)
        values = bg.density(center + x[:, None] + 1j * x[None, :])
        if np.all(values >= 0):
            return 1 if np.any(values > 0) else 0
        if np.all(values <= 0):
            return -1
        raise PreconditionError(f"background {bg.kind} changes sign; give its parts as separate backgrounds")

    def part_field(self, field: FieldConfig, part: str) -> FieldConfig:
        """mu_plus or mu_minus as a nonnegative field (intensities and densities flipped for minus)"""
        part = part.lower()
        if part not in ('plus', 'minus'):
            raise PreconditionError(f"unknown part {part!r}")
        sign = 1.0 if part == 'plus' else -1.0
        discrete = field.discrete
        if discrete.is_lattice:
            if sign * discrete.alpha > 0:
                discrete = SolenoidSet.regular_lattice(discrete.lattice, abs(discrete.alpha), discrete.offset,
                                                       discrete.r0)
            else:
                discrete = SolenoidSet.empty()
        elif not discrete.is_empty:
            keep = sign * discrete.intensities > 0
            discrete = (SolenoidSet(discrete.locations[keep], np.abs(discrete.intensities[keep]), discrete.r0)
                        if np.any(keep) else SolenoidSet.empty())
        continuous = [bg if sign > 0 else bg.negated()
                      for bg in field.continuous if self._background_sign(bg) == int(sign)]
        return FieldConfig(discrete, continuous, field.gauge, field.spin)

    def part_potential(self, field: FieldConfig, part: str) -> ScalarPotential:
        return self.potentials.field_potential(self.part_field(field, part))

    # quadrature

    @staticmethod
    def _separation(potential: ScalarPotential) -> float:
        r0 = potential.r0
        if potential.lattice_singularities:
            r0 = min([r0] + [f.lattice.min_separation() for f in potential.lattice_singularities])
        return r0

    def _disk_rule(self, potential: ScalarPotential, center: complex, radius: float, sign: float) -> Rule:
        """Nodes, area weights and log weights 2 sign Psi on D(center, radius); singularities inside
        get Gauss-Jacobi disks blended in by a smooth partition of unity"""
        singular = potential.singularities_within(center, radius)
        sep = self._separation(potential)
        h = min(radius / 8.0, 0.5 * sep) if np.isfinite(sep) else radius / 8.0
        n_theta = max(32, self.quad.n_theta, int(np.ceil(2.0 * np.pi * radius / h)))
        pts, area = QuadratureHelper.polar_nodes(center, 0.0, radius, n_theta, self.quad.order, h)
        extra_pts, extra_area = [], []
        for lam, beta in singular:
            if sign * beta <= -1.0:
                raise PreconditionError("gauge-normalize first")
            delta = min(0.25 * sep if np.isfinite(sep) else 0.25 * radius, radius - abs(lam - center))
            if delta <= 1e-9 * radius:
                raise PreconditionError("solenoid on the boundary of an integration disk")
            area = area * (1.0 - QuadratureHelper.smooth_cutoff(np.abs(pts - lam) / delta))
            lp, la = QuadratureHelper.singular_disk_nodes(lam, delta, 2.0 * sign * beta, 2 * self.quad.order, 16)
            extra_pts.append(lp)
            extra_area.append(la * QuadratureHelper.smooth_cutoff(np.abs(lp - lam) / delta))
        keep = area > 0
        pts = np.concatenate([pts[keep]] + extra_pts)
        area = np.concatenate([area[keep]] + extra_area)
        log_w = 2.0 * sign * np.asarray(potential(pts), dtype=float)
        return pts, area, log_w

    @staticmethod
    def _integral(rule: Rule, shift: float, values: np.ndarray) -> float:
        pts, area, log_w = rule
        return float(np.sum(area * np.exp(log_w - shift) * np.abs(values) ** 2))

    @staticmethod
    def _report(name: str, rows: List[Dict], key: str, declared: Optional[float], note: str) -> InequalityReport:
        values = np.array([row[key] for row in rows]) if rows else np.zeros(1)
        worst = int(np.argmax(values))
        report = InequalityReport(name, len(rows), float(max(values[worst], 0.0)),
                                  rows[worst] if rows else {}, declared, float(np.ptp(values)), note, rows)
        if report.violated:
            logger.warning("%s: empirical constant %.6g exceeds declared %.6g", name, report.best_constant, declared)
        return report

    # mollified comparison

    def mollified_comparison(self, field: FieldConfig, chi: Mollifier, part: str = 'minus',
                             sample_box: Optional[BoxRegion] = None, n_samples: int = 64,
                             seed: Optional[int] = None, declared: Optional[float] = None) -> InequalityReport:
        """max over sampled z of |Psi_part(z) - (Psi_part * chi)(z)|"""
        if sample_box is None:
            raise PreconditionError("empty sample box")
        selected = self.part_field(field, part)
        if not selected.discrete.is_empty:
            raise PreconditionError("mollified comparison needs a part without solenoids")
        psi = self.part_potential(field, part)
        rng = np.random.default_rng(Config.SEED if seed is None else seed)
        z = (rng.uniform(sample_box.xmin, sample_box.xmax, n_samples)
             + 1j * rng.uniform(sample_box.ymin, sample_box.ymax, n_samples))
        diff = np.asarray(psi(z), dtype=float) - np.asarray(self.potentials.mollify(psi, chi, z), dtype=float)
        rows = [{'x': float(p.real), 'y': float(p.imag), 'difference': float(d), 'abs_difference': float(abs(d))}
                for p, d in zip(z, diff)]
        report = self._report(f'mollified_comparison[{part}]', rows, 'abs_difference', declared,
                              "bound depends on the mollifier radius and the Condition C data (R1, A1)")
        report.spread = float(np.ptp(diff))
        logger.info("mollified comparison (%s): max |Psi - Psi*chi| = %.6g, spread %.3g",
                    part, report.best_constant, report.spread)
        return report

    # disk inequalities

    def _check_conditions(self, field: FieldConfig, center: complex, r0: float, R: float,
                          theta0: Optional[float], A1: Optional[float]):
        box = BoxRegion(center.real - 4 * R, center.real + 4 * R, center.imag - 4 * R, center.imag + 4 * R)
        if theta0 is not None and not self.fields.check_condition_A(field, r0, theta0, box).holds:
            raise PreconditionError("Condition A fails near the center")
        if A1 is not None and not self.fields.check_condition_C(field, 'minus', R, A1, box).holds:
            raise PreconditionError("Condition C fails near the center")

    @staticmethod
    def _derivative(f: ProbeFunction, spin: Spin, z: np.ndarray) -> np.ndarray:
        return f.dz(z) if spin == Spin.DOWN else f.dzbar(z)

    def local_inequality(self, field: FieldConfig, center, chi: Mollifier,
                         test_family: Optional[Sequence[ProbeFunction]] = None, r0: Optional[float] = None,
                         d1_radius: Optional[float] = None, theta0: Optional[float] = None,
                         A1: Optional[float] = None, declared: Optional[float] = None,
                         psi: Optional[ScalarPotential] = None) -> Tuple[InequalityReport, InequalityReport]:
        """Disk inequality int_D0 w|f|^2 <= C (int_D1 w_R|f|^2 + int_D1 w_R|Df|^2) with w = exp(-2 s Psi),
        D0 = D(c, r0/2), D1 = D(c, r0 + R); plus the comparison of the opposite part on D1"""
        c = ValidationHelper.as_complex(center)
        r0 = field.discrete.r0 if r0 is None else ValidationHelper.require_positive('r0', r0)
        d1 = r0 + chi.radius if d1_radius is None else d1_radius
        if d1 < 0.5 * r0:
            raise PreconditionError("D1 must contain D0")
        self._check_conditions(field, c, r0, chi.radius, theta0, A1)
        family = list(test_family) if test_family is not None else spline_family(c)
        sign = -1.0 if field.spin == Spin.DOWN else 1.0

        psi = psi or self.potentials.field_potential(field)
        psi_R = self.potentials.mollified_potential(psi, chi)
        inner = self._disk_rule(psi, c, 0.5 * r0, sign)
        outer = self._disk_rule(psi_R, c, d1, sign)
        shift = max(np.max(inner[2]), np.max(outer[2]))

        def one(f: ProbeFunction) -> Dict:
            lhs = self._integral(inner, shift, f.value(inner[0]))
            rhs0 = self._integral(outer, shift, f.value(outer[0]))
            rhs1 = self._integral(outer, shift, self._derivative(f, field.spin, outer[0]))
            ratio = lhs / (rhs0 + rhs1) if rhs0 + rhs1 > 0 else 0.0
            return {'probe': f.to_dict(), 'lhs': lhs, 'rhs_value': rhs0, 'rhs_derivative': rhs1, 'ratio': ratio}

        rows = PerformanceHelper.ordered_map(one, family, self.threads)
        report = self._report('local_inequality', rows, 'ratio', declared,
                              f"D0 radius {0.5 * r0:g}, D1 radius {d1:g}; lower bound over {len(family)} probes")
        pm = self._opposite_part_report(field, c, chi, d1, family)
        logger.info("local inequality at %s: C >= %.6g, opposite part C2 >= %.6g", c, report.best_constant,
                    pm.best_constant)
        return report, pm

    def _opposite_part_report(self, field: FieldConfig, c: complex, chi: Mollifier, d1: float,
                              family: Sequence[ProbeFunction]) -> InequalityReport:
        """int_D1 exp(2 Psi_-,R)|f|^2 <= C2 int_D1 exp(2 Psi_-)|f|^2 (parts swap for spin Up)"""
        part, sign = ('minus', 1.0) if field.spin == Spin.DOWN else ('plus', -1.0)
        psi = self.part_potential(field, part)
        mollified = self._disk_rule(self.potentials.mollified_potential(psi, chi), c, d1, sign)
        exact = self._disk_rule(psi, c, d1, sign)
        shift = max(np.max(mollified[2]), np.max(exact[2]))

        def one(f: ProbeFunction) -> Dict:
            lhs = self._integral(mollified, shift, f.value(mollified[0]))
            rhs = self._integral(exact, shift, f.value(exact[0]))
            return {'probe': f.to_dict(), 'lhs': lhs, 'rhs': rhs, 'ratio': lhs / rhs if rhs > 0 else 0.0}

        rows = PerformanceHelper.ordered_map(one, list(family), self.threads)
        return self._report(f'opposite_part_comparison[{part}]', rows, 'ratio', None, f"D1 radius {d1:g}")

    def global_inequality(self, field: FieldConfig, chi: Mollifier, test_family: Optional[Sequence[ProbeFunction]],
                          domain_radius: float, declared: Optional[float] = None,
                          local_constant: Optional[float] = None) -> InequalityReport:
        """int w|f|^2 <= C (int w_R|f|^2 + int w_R|Df|^2) for probes supported in D(0, domain_radius)"""
        ValidationHelper.require_positive('domain_radius', domain_radius)
        if test_family is None:
            centers = [0j] + [0.5 * domain_radius * 1j ** k for k in range(4)]
            test_family = [f for c in centers for f in spline_family(c)]
        family = list(test_family)
        for f in family:
            if abs(f.center) + f.support_radius > domain_radius * (1 + 1e-12):
                raise PreconditionError("probe support leaves the domain")
        sign = -1.0 if field.spin == Spin.DOWN else 1.0
        psi = self.potentials.field_potential(field)
        psi_R = self.potentials.mollified_potential(psi, chi)

        def one(f: ProbeFunction) -> Dict:
            exact = self._disk_rule(psi, f.center, PROBE_DISK_MARGIN * f.support_radius, sign)
            mollified = self._disk_rule(psi_R, f.center, PROBE_DISK_MARGIN * f.support_radius, sign)
            shift = max(np.max(exact[2]), np.max(mollified[2]))
            lhs = self._integral(exact, shift, f.value(exact[0]))
            rhs = (self._integral(mollified, shift, f.value(mollified[0]))
                   + self._integral(mollified, shift, self._derivative(f, field.spin, mollified[0])))
            return {'probe': f.to_dict(), 'lhs': lhs, 'rhs': rhs, 'ratio': lhs / rhs if rhs > 0 else 0.0}

        rows = PerformanceHelper.ordered_map(one, family, self.threads)
        note = f"domain radius {domain_radius:g}; lower bound over {len(family)} probes"
        if local_constant is not None:
            note += f"; covering heuristic {COVERING_MULTIPLICITY} x local = {COVERING_MULTIPLICITY * local_constant:.6g}"
        report = self._report('global_inequality', rows, 'ratio', declared, note)
        logger.info("global inequality on D(0, %g): C >= %.6g", domain_radius, report.best_constant)
        return report

    def entire_inequality(self, field: FieldConfig, chi: Mollifier, domain_radius: float, max_degree: int = 5,
                          declared: Optional[float] = None) -> InequalityReport:
        """int w|f|^2 <= C int w_R|f|^2 on D(0, domain_radius) for f = conj(z)^k (spin Down) or z^k (Up),
        where the derivative term vanishes"""
        ValidationHelper.require_positive('domain_radius', domain_radius)
        sign = -1.0 if field.spin == Spin.DOWN else 1.0
        psi = self.potentials.field_potential(field)
        exact = self._disk_rule(psi, 0j, domain_radius, sign)
        mollified = self._disk_rule(self.potentials.mollified_potential(psi, chi), 0j, domain_radius, sign)
        shift = max(np.max(exact[2]), np.max(mollified[2]))

        rows = []
        for k in range(max_degree + 1):
            def f(z, k=k):
                return (np.conj(z) if field.spin == Spin.DOWN else z) ** k
            lhs = self._integral(exact, shift, f(exact[0]))
            rhs = self._integral(mollified, shift, f(mollified[0]))
            rows.append({'degree': k, 'lhs': lhs, 'rhs': rhs, 'ratio': lhs / rhs if rhs > 0 else 0.0})
        return self._report('entire_inequality', rows, 'ratio', declared,
                            f"domain radius {domain_radius:g}; monomials up to degree {max_degree}")
