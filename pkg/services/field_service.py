import logging
from typing import Callable, List, Optional, Tuple

import numpy as np

from config import Config
from models.errors import PreconditionError
from models.field import ConditionReport, FieldConfig, Gauge, Point, Spin
from models.potential import QuadratureSpec
from models.region import BoxRegion
from utils.helpers import PerformanceHelper, QuadratureHelper, ValidationHelper

logger = logging.getLogger(__name__)

PARTS = ('all', 'plus', 'minus')


class FieldService:
    """Service layer for magnetic field measures: fluxes, structural conditions, gauge and spin"""

    def __init__(self, quad: Optional[QuadratureSpec] = None, threads: Optional[int] = None):
        self.quad = quad or QuadratureSpec(tol=Config.TOL)
        self.threads = threads or Config.THREADS

    # flux

    def local_flux(self, field: FieldConfig, center, radius: float, part: str = 'all') -> float:
        """mu(D(center, radius)); part selects the positive or negative part of mu"""
        ValidationHelper.require_positive('radius', radius)
        c = ValidationHelper.as_complex(center)
        return self._atom_flux(field, c, radius, part) + self._continuous_flux(field, c, radius, part)

    def _atom_flux(self, field: FieldConfig, c: complex, radius: float, part: str) -> float:
        if field.discrete.is_empty:
            return 0.0
        pts, alphas = field.discrete.points_within(radius * (1 + 1e-9) + 1e-12, c)
        d = np.abs(pts - c)
        if np.any(np.abs(d - radius) <= 1e-12 * max(1.0, radius)):
            raise PreconditionError("boundary-ambiguous flux")
        alphas = self._signed_part(alphas[d < radius], part)
        return float(2.0 * np.pi * alphas.sum())

    @staticmethod
    def _signed_part(values: np.ndarray, part: str) -> np.ndarray:
        if part == 'plus':
            return np.maximum(values, 0.0)
        if part == 'minus':
            return np.maximum(-values, 0.0)
        return values

    def part_rule(self, field: FieldConfig, center: complex, r_in: float, r_out: float, part: str,
                  level: int = 0, graded_levels: int = 0, extra=()) -> Tuple[np.ndarray, np.ndarray]:
        """Nodes and mass weights of the selected part of the continuous measure on an annulus"""
        n_theta = self.quad.n_theta * 2 ** level
        width = (r_out - r_in) / (2 * 2 ** level)
        backgrounds = field.continuous
        if len(backgrounds) == 1:
            pts, w = backgrounds[0].polar_rule(center, r_in, r_out, n_theta, self.quad.order, width,
                                               graded_levels, extra)
            return pts, self._signed_part(w, part)
        extra = list(extra)
        for bg in backgrounds:
            extra.extend(bg.boundary_radii(center))
        pts, area = QuadratureHelper.polar_nodes(center, r_in, r_out, n_theta, self.quad.order, width,
                                                 graded_levels, extra)
        return pts, area * self._signed_part(field.continuous_density(pts), part)

    @staticmethod
    def refine(evaluate: Callable[[int], float], rel_tol: float, max_level: int, label: str) -> float:
        """Evaluate at increasing resolution until the relative change drops below rel_tol"""
        previous = evaluate(0)
        for level in range(1, max_level + 1):
            current = evaluate(level)
            if abs(current - previous) <= rel_tol * max(abs(current), 1e-12):
                logger.debug("%s converged at level %d", label, level)
                return current
            previous = current
        logger.warning("%s not converged to %.1e after %d refinements", label, rel_tol, max_level)
        return previous

    def _continuous_flux(self, field: FieldConfig, c: complex, radius: float, part: str) -> float:
        if not field.continuous:
            return 0.0
        if part == 'all' or len(field.continuous) == 1:
            total = 0.0
            for bg in field.continuous:
                exact = bg.exact_disk_mass(c, radius)
                if exact is not None:
                    # closed forms exist only for densities of constant sign
                    total += exact if part == 'all' else float(self._signed_part(np.array([exact]), part)[0])
                    continue
                single = FieldConfig(continuous=[bg])
                total += self.refine(lambda k: float(self.part_rule(single, c, 0.0, radius, part, k)[1].sum()),
                                     1e-8, self.quad.max_refine, 'local flux')
            return total
        return self.refine(lambda k: float(self.part_rule(field, c, 0.0, radius, part, k)[1].sum()),
                           1e-8, self.quad.max_refine, 'local flux')

    def flux_sweep(self, field: FieldConfig, centers: np.ndarray, radius: float, part: str = 'all') -> np.ndarray:
        """local_flux over many centers; a solenoid on a boundary nudges that radius outward"""

        def one(c):
            try:
                return self.local_flux(field, c, radius, part)
            except PreconditionError:
                return self.local_flux(field, c, radius * (1 + 1e-9), part)

        return np.array(PerformanceHelper.ordered_map(one, list(centers), self.threads))

    # structural conditions

    def _max_density(self, field: FieldConfig, pts: np.ndarray, part: str) -> float:
        if not field.continuous:
            return 0.0
        values = self._signed_part(field.continuous_density(pts), part)
        return float(np.max(values)) if values.size else 0.0

    def check_condition_A(self, field: FieldConfig, r0: float, theta0: float,
                          sample_box: Optional[BoxRegion]) -> ConditionReport:
        """Positive-part flux of every sampled disk of radius r0 stays below 2 pi theta0"""
        ValidationHelper.require_positive('r0', r0)
        if not 0 < theta0 < 1:
            raise PreconditionError("theta0 must lie in (0, 1)")
        if sample_box is None:
            raise PreconditionError("empty sample box")
        pitch = r0 / 4
        centers = sample_box.grid(pitch)
        values = self.flux_sweep(field, centers, r0, 'plus') / (2.0 * np.pi)
        worst = int(np.argmax(values))
        rho = self._max_density(field, centers, 'plus')
        correction = rho * r0 * pitch / np.sqrt(2.0)
        holds = bool(values[worst] <= theta0 + 1e-12)
        logger.info("Condition A: max flux/2pi %.6g over %d centers (theta0=%g)", values[worst], len(centers), theta0)
        return ConditionReport(holds, Point.of(centers[worst]), float(values[worst]), float(correction),
                               len(centers))

    def log_integral(self, field: FieldConfig, center: complex, R1: float, part: str) -> float:
        """Integral of |ln|z - w|| over D(z, R1) against the selected continuous part"""

        def evaluate(level: int) -> float:
            pts, w = self.part_rule(field, center, 0.0, R1, part, level,
                                    self.quad.graded_levels + 10 * level, extra=(1.0,))
            return float(np.sum(np.abs(np.log(np.abs(pts - center))) * w))

        return self.refine(evaluate, 1e-6, 3, 'log integral')

    def check_condition_C(self, field: FieldConfig, part: str, R1: float, A1: float,
                          sample_box: Optional[BoxRegion]) -> ConditionReport:
        """Sampled log-integral bound over disks of radius R1 for mu_plus or mu_minus"""
        ValidationHelper.require_positive('R1', R1)
        part = part.lower()
        if part not in ('plus', 'minus'):
            raise PreconditionError(f"unknown part {part!r}")
        if sample_box is None:
            raise PreconditionError("empty sample box")
        if not field.discrete.is_empty:
            alphas = field.discrete.intensities
            if np.any(alphas > 0 if part == 'plus' else alphas < 0):
                raise PreconditionError("Condition C applies to continuous parts only in this artifact")
        centers = sample_box.grid(R1 / 4)
        if not field.continuous:
            return ConditionReport(True, None, 0.0, 0.0, len(centers))
        values = np.array(PerformanceHelper.ordered_map(
            lambda c: self.log_integral(field, c, R1, part), list(centers), self.threads))
        worst = int(np.argmax(values))
        holds = bool(values[worst] <= A1)
        logger.info("Condition C (%s): max log-integral %.6g over %d centers (A1=%g)",
                    part, values[worst], len(centers), A1)
        return ConditionReport(holds, Point.of(centers[worst]), float(values[worst]), 0.0, len(centers))

    def check_condition_cond4(self, field: FieldConfig, theta0: float) -> ConditionReport:
        """Every solenoid intensity, read in MaxGauge, lies in (theta0, 1 - theta0)"""
        if not 0 < theta0 < 0.5:
            raise PreconditionError("theta0 must lie in (0, 1/2)")
        discrete = field.discrete
        if discrete.is_empty:
            return ConditionReport(True, None, 0.5, 0.0, 0)
        alphas = self.reduce_intensity(discrete.intensities, Gauge.MAX)
        margins = np.minimum(alphas, 1.0 - alphas)
        worst = int(np.argmin(margins))
        location = discrete.offset if discrete.is_lattice else discrete.locations[worst]
        holds = bool(margins[worst] > theta0)
        logger.info("intensity window: smallest margin %.6g (theta0=%g)", margins[worst], theta0)
        return ConditionReport(holds, Point.of(location), float(margins[worst]), 0.0, int(margins.size))

    # gauge and spin

    @staticmethod
    def reduce_intensity(alpha: np.ndarray, target: Gauge, spin: Spin = Spin.DOWN) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=float)
        if target == Gauge.EV:
            reduced = alpha - np.floor(alpha + 0.5)
        elif spin == Spin.UP:
            reduced = alpha - np.ceil(alpha)
        else:
            reduced = alpha - np.floor(alpha)
        if np.any(np.abs(reduced) < 1e-12) or np.any(np.abs(np.abs(reduced) - 1) < 1e-12):
            raise PreconditionError("null solenoid after reduction")
        return reduced

    def gauge_normalize(self, field: FieldConfig, target: Gauge) -> FieldConfig:
        """Shift every intensity by an integer into the interval of the target gauge"""
        if field.discrete.is_empty:
            return FieldConfig(field.discrete, list(field.continuous), target, field.spin)
        reduced = self.reduce_intensity(field.discrete.intensities, target, field.spin)
        return FieldConfig(field.discrete.with_intensities(reduced), list(field.continuous), target, field.spin)

    def spin_flip(self, field: FieldConfig) -> FieldConfig:
        """Configuration used for the other spin: alpha -> alpha -/+ 1, continuous part negated"""
        if field.gauge != Gauge.MAX:
            raise PreconditionError("spin_flip requires MaxGauge")
        shift = -1.0 if field.spin == Spin.DOWN else 1.0
        discrete = field.discrete
        if not discrete.is_empty:
            discrete = discrete.with_intensities(discrete.intensities + shift)
        spin = Spin.UP if field.spin == Spin.DOWN else Spin.DOWN
        return FieldConfig(discrete, [bg.negated() for bg in field.continuous], field.gauge, spin)

    def density_bound(self, field: FieldConfig, radii: List[float]) -> np.ndarray:
        """N(R)/R^2 over the given radii"""
        return np.array([field.discrete.count_within(R) / R ** 2 for R in radii])
