import logging
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from config import Config
from models.errors import PreconditionError, ScenarioError, SingularityError
from models.field import (ConstantBackground, ContinuousBackground, FieldConfig, Gauge, PeriodicDensity,
                          SolenoidSet, TileDensity)
from models.perturbation import (CoveringSquare, ExampleField, Measure, MeasureStats, RearrangementMap)
from models.potential import Lattice, QuadratureSpec
from models.region import DiskUnionRegion, SectorRegion, SquareLocator, StripRegion
from services.potential_service import PotentialService, _as_points, _unwrap
from utils.helpers import GrowthHelper, PerformanceHelper, QuadratureHelper, ValidationHelper

logger = logging.getLogger(__name__)

MeasureLike = Union[Measure, FieldConfig, ContinuousBackground]

JITTER_RETRIES = 3


def _as_measure(mu: MeasureLike) -> Measure:
    if isinstance(mu, Measure):
        return mu
    if isinstance(mu, ContinuousBackground):
        return Measure([], [mu])
    return Measure.from_field(mu)


def _log_kernel(z: np.ndarray, v: np.ndarray) -> np.ndarray:
    """ln|1 - z/v|, read as ln|z| at v = 0"""
    v = np.asarray(v, dtype=complex)
    safe = np.where(v == 0, 1.0, v)
    with np.errstate(divide='ignore'):
        return np.where(v == 0, np.log(np.abs(z)), np.log(np.abs(1.0 - z / safe)))


def _inverse(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    return np.where(v == 0, 0j, 1.0 / np.where(v == 0, 1.0, v))


class PerturbationService:
    """Service layer for perturbed fields: rearrangements, additive parts, coverings and examples"""

    def __init__(self, quad: Optional[QuadratureSpec] = None, threads: Optional[int] = None):
        self.quad = quad or QuadratureSpec(tol=Config.TOL)
        self.threads = threads or Config.THREADS
        self.potentials = PotentialService(self.quad, self.threads)

    # rearrangement of continuous measures

    def default_split_radius(self, mu: MeasureLike, phi: RearrangementMap) -> float:
        """Smallest sampled radius beyond which |Phi(w) - w| <= a|w|^tau holds"""
        measure = _as_measure(mu)
        sample = [measure.atom_locations]
        for bg in measure.continuous:
            pts, mass = self.potentials._base_rule(bg, 0, 64.0)
            sample.append(pts[mass != 0])
        return phi.threshold_radius(np.concatenate(sample))

    def rearrangement_potential_cont(self, mu: MeasureLike, phi: RearrangementMap, R: Optional[float], z,
                                     quad: Optional[QuadratureSpec] = None):
        """(1/2 pi) [int_{|w|<R} ln|1-z/Phi(w)| - ln|1-z/w| + int_{|w|>=R} (... + Re z(1/Phi(w) - 1/w))] d mu(w)

        Laplace of the result is mu* - mu, where mu* is the push-forward of mu under phi.
        """
        measure = _as_measure(mu)
        if R is None:
            R = self.default_split_radius(measure, phi)
            logger.info("rearrangement split radius %.4g", R)
        service = self.potentials if quad is None else PotentialService(quad, self.threads)
        pts, scalar = _as_points(z)
        if phi.kind == 'Identity':
            return _unwrap(np.zeros(pts.shape), scalar)

        def moved(zz, w, img):
            out = _log_kernel(zz, img) - _log_kernel(zz, w)
            far = np.abs(w) >= R
            return np.where(far, out + (zz * (_inverse(img) - _inverse(w))).real, out)

        values = np.zeros(pts.shape)
        for a, mass in measure.atoms:
            img = complex(phi.apply(np.array([a]))[0])
            if np.any(np.abs(pts - a) < 1e-14) or np.any(np.abs(pts - img) < 1e-14):
                raise SingularityError()
            if abs(a) > R and not phi.displacement_ok(np.array([a]))[0]:
                raise PreconditionError("rearrangement exceeds its displacement bound")
            values += mass / (2.0 * np.pi) * moved(pts, np.full(pts.shape, a), np.full(pts.shape, img))

        for bg in measure.continuous:
            sample, sample_mass = service._base_rule(bg, 0, 64.0 * max(float(np.max(np.abs(pts))), R, 1.0))
            sample = sample[(sample_mass != 0) & (np.abs(sample) > R)]
            if sample.size and not np.all(phi.displacement_ok(sample)):
                raise PreconditionError("rearrangement exceeds its displacement bound")
            values = values + self._jittered(service, bg, phi, moved, pts) / (2.0 * np.pi)
        return _unwrap(values, scalar)

    @staticmethod
    def _jittered(service: PotentialService, bg: ContinuousBackground, phi: RearrangementMap,
                  moved: Callable, pts: np.ndarray) -> np.ndarray:
        for attempt in range(JITTER_RETRIES + 1):
            shift = 1e-9 * attempt * np.exp(1j * attempt)

            def kernel(zz, w, shift=shift):
                w = w * (1.0 + shift)
                return moved(zz, w, phi.apply(w))

            values = service.integrate_kernel(bg, kernel, pts, 'rearrangement potential', origin_singular=True)
            if np.all(np.isfinite(values)):
                return values
            logger.debug("rearranged node hit an evaluation point, jitter attempt %d", attempt + 1)
        raise SingularityError("rearranged node coincides with the evaluation point")

    # rearrangement of solenoid sets

    @staticmethod
    def merged_images(solenoids: SolenoidSet, phi: RearrangementMap) -> Tuple[np.ndarray, np.ndarray]:
        """Image points of the solenoids with the intensities of all sources mapped onto each merged"""
        images = phi.apply(solenoids.locations)
        keys = np.round(images.real, 12) + 1j * np.round(images.imag, 12)
        unique, inverse = np.unique(keys, return_inverse=True)
        merged = np.zeros(unique.size)
        np.add.at(merged, inverse, solenoids.intensities)
        return unique, merged

    def rearrangement_potential_disc(self, solenoids: SolenoidSet, phi: RearrangementMap, z,
                                     theta0: Optional[float] = None, subtract_logs: bool = False,
                                     r0: Optional[float] = None):
        """Sum over moved solenoids of alpha [ln|lambda'-z| - ln|lambda-z| + Re z(1/lambda' - 1/lambda)]

        Sources and distinct images together must stay r0 apart (default: the r0 of the set).

        With subtract_logs the log terms of the nearest source and the nearest image are dropped,
        which leaves a function that is finite on the solenoids.
        """
        if solenoids.is_lattice:
            raise PreconditionError("rearrangement needs a finite solenoid set")
        pts, scalar = _as_points(z)
        src = solenoids.locations
        img = phi.apply(src)
        alpha = solenoids.intensities
        moving = np.abs(img - src) > 1e-12 * np.maximum(1.0, np.abs(src))
        if theta0 is not None:
            _, merged = self.merged_images(solenoids, phi)
            if np.any(np.abs(merged) > theta0):
                raise PreconditionError("merged intensity exceeds theta0")
        union = np.concatenate([src, img[moving]])
        if union.size > 1:
            keys = np.unique(np.round(union.real, 12) + 1j * np.round(union.imag, 12))
            if keys.size > 1:
                tree = cKDTree(np.column_stack([keys.real, keys.imag]))
                separation = float(tree.query(np.column_stack([keys.real, keys.imag]), k=2)[0][:, 1].min())
                logger.debug("union separation %.4g", separation)
                limit = solenoids.r0 if r0 is None else r0
                if separation < limit * (1.0 - 1e-12):
                    raise PreconditionError(
                        f"rearranged solenoids closer than r0={limit:g} (separation {separation:.4g})")
        src, img, alpha = src[moving], img[moving], alpha[moving]
        if src.size == 0:
            return _unwrap(np.zeros(pts.shape), scalar)

        def one(p: complex) -> float:
            d_src = np.abs(src - p)
            d_img = np.abs(img - p)
            log_src = np.log(np.maximum(d_src, 1e-300))
            log_img = np.log(np.maximum(d_img, 1e-300))
            if subtract_logs:
                log_src[np.argmin(d_src)] = 0.0
                log_img[np.argmin(d_img)] = 0.0
            elif d_src.min() < 1e-14 or d_img.min() < 1e-14:
                raise SingularityError()
            linear = (p * (_inverse(img) - _inverse(src))).real
            return float(np.sum(alpha * (log_img - log_src + linear)))

        values = np.array(PerformanceHelper.ordered_map(one, list(pts), self.threads))
        return _unwrap(values, scalar)

    # additive perturbations

    def additive_potential(self, mu: MeasureLike, R: float, z, quad: Optional[QuadratureSpec] = None):
        return self.potentials.additive_potential(_as_measure(mu), R, z, quad)

    @staticmethod
    def growth_fit(values_fn: Callable[[np.ndarray], np.ndarray], radii: Sequence[float],
                   n_angles: int = 64) -> Tuple[float, float]:
        return GrowthHelper.growth_fit(values_fn, radii, n_angles)

    @staticmethod
    def quadratic_coefficient(values_fn: Callable[[np.ndarray], np.ndarray], radii: Sequence[float],
                              n_angles: int = 64) -> float:
        return GrowthHelper.quadratic_coefficient(values_fn, radii, n_angles)

    # size statistics

    def _atoms_within(self, mu: MeasureLike, rmax: float) -> Measure:
        if isinstance(mu, FieldConfig) and mu.discrete.is_lattice:
            pts, alphas = mu.discrete.points_within(rmax)
            return Measure([(complex(p), 2.0 * np.pi * float(a)) for p, a in zip(pts, alphas)], list(mu.continuous))
        return _as_measure(mu)

    def measure_stats(self, mu: MeasureLike, radii: Sequence[float], r1: float = 1.0) -> MeasureStats:
        """omega(r) = |mu|(D(0, r)) and M(r) = integral over r1 <= |w| <= r of w^-2 d mu(w)"""
        radii = np.asarray(radii, dtype=float)
        if radii.size and np.any(np.diff(radii) < 0):
            raise PreconditionError("radii must be sorted ascending")
        ValidationHelper.require_positive('r1', r1)
        measure = self._atoms_within(mu, float(radii[-1]) if radii.size else 0.0)
        edges = np.unique(np.concatenate([[0.0, r1], radii]))
        n_theta = self.quad.n_theta + self.quad.n_theta % 2
        order = self.quad.order
        abs_mass = np.zeros(edges.size)
        moment = np.zeros(edges.size, dtype=complex)
        backgrounds = measure.continuous
        for k, (lo, hi) in enumerate(zip(edges[:-1], edges[1:]), start=1):
            width = (hi - lo) / 8
            graded = self.quad.graded_levels if lo == 0 else 0
            signed = []
            for bg in backgrounds:
                pts, mass = bg.polar_rule(0j, lo, hi, n_theta, order, width, graded)
                signed.append((pts, mass))
            if len(backgrounds) == 1:
                abs_mass[k] = float(np.sum(np.abs(signed[0][1])))
            elif backgrounds:
                extra = [r for bg in backgrounds for r in bg.boundary_radii(0j)]
                pts, area = QuadratureHelper.polar_nodes(0j, lo, hi, 4 * n_theta, order, width, graded, extra)
                abs_mass[k] = float(np.sum(area * np.abs(sum(bg.density(pts) for bg in backgrounds))))
            if lo >= r1:
                moment[k] = sum(np.sum(mass / pts ** 2) for pts, mass in signed if pts.size)
        locations, masses = measure.atom_locations, measure.atom_masses
        omega_at = np.cumsum(abs_mass)
        moment_at = np.cumsum(moment)
        omega, M = [], []
        for r in radii:
            k = int(np.searchsorted(edges, r))
            omega.append(omega_at[k] + float(np.sum(np.abs(masses[np.abs(locations) < r]))))
            inside = (np.abs(locations) >= r1) & (np.abs(locations) <= r)
            M.append(moment_at[k] + complex(np.sum(masses[inside] / locations[inside] ** 2)))
        return MeasureStats(radii, np.array(omega), np.array(M, dtype=complex), r1)

    def omega_slope(self, mu: MeasureLike, radii: Sequence[float]) -> float:
        """Log-log slope of omega(r); disk unions use their exact enclosed area"""
        measure = _as_measure(mu)
        if not measure.atoms and len(measure.continuous) == 1:
            bg = measure.continuous[0]
            unions = [r for r in bg.regions if isinstance(r, DiskUnionRegion)]
            if unions and isinstance(bg, ConstantBackground):
                areas = [abs(bg.B * bg.scale) * unions[0].area_within(r) for r in radii]
                return GrowthHelper.loglog_slope(radii, areas)[0]
        stats = self.measure_stats(measure, radii)
        return GrowthHelper.loglog_slope(radii, stats.omega)[0]

    # square covering

    @staticmethod
    def _ring(half: float, side: float) -> np.ndarray:
        """Centers of the ring of side-length tiles around the block [-half, half]^2"""
        n = int(round(2.0 * half / side)) + 2
        edge = half + 0.5 * side
        along = -edge + side * np.arange(n)
        inner = along[1:-1]
        return np.concatenate([along + 1j * edge, along - 1j * edge, edge + 1j * inner, -edge + 1j * inner])

    def build_square_covering(self, tau: float, Rmax: float, c: float = 0.25, C: float = 4.0) -> List[CoveringSquare]:
        """Layered tiling of the plane whose tile sides satisfy c|z|^tau <= d <= C|z|^tau"""
        if not 0 < tau < 1:
            raise PreconditionError("covering exponent tau must lie in (0, 1)")
        if Rmax < 3:
            raise PreconditionError("covering radius must be at least 3")
        tiles = [CoveringSquare(0j, 1.0, 0)]
        tiles.extend(CoveringSquare(complex(z), 1.0, 1) for z in self._ring(0.5, 1.0))
        side, count, layer = 1.0, 3, 1
        while 0.5 * count * side < Rmax:
            layer += 1
            half = 0.5 * count * side
            centers = self._ring(half, side)
            scale = np.abs(centers) ** tau
            if not np.all((c * scale <= side) & (side <= C * scale)):
                if count % 2 == 0:
                    side, count = 2.0 * side, count // 2
                else:
                    side, count = 2.0 * count * side / (count + 1), (count + 1) // 2
                logger.debug("layer %d: tile side now %.4g", layer, side)
                centers = self._ring(half, side)
            tiles.extend(CoveringSquare(complex(z), side, layer) for z in centers)
            count += 2
        logger.info("covering of D(0, %g) with %d tiles in %d layers", Rmax, len(tiles), layer + 1)
        return tiles

    @staticmethod
    def covering_table(covering: List[CoveringSquare]) -> pd.DataFrame:
        return pd.DataFrame([t.to_dict() for t in covering], columns=['center_x', 'center_y', 'side', 'layer'])

    @staticmethod
    def covering_arrays(covering: List[CoveringSquare]) -> Tuple[np.ndarray, np.ndarray]:
        return (np.array([t.center for t in covering], dtype=complex),
                np.array([t.side for t in covering], dtype=float))

    def tile_masses(self, mu: MeasureLike, covering: List[CoveringSquare], order: int = 4) -> np.ndarray:
        """mu(Q_j) for every tile: tensor Gauss rules on the tiles plus the atoms they contain"""
        measure = _as_measure(mu)
        centers, sides = self.covering_arrays(covering)
        ref, ref_w = QuadratureHelper.box_nodes(-0.5, 0.5, -0.5, 0.5, 0.5, order)
        out = np.zeros(centers.size)
        for batch in PerformanceHelper.batch_process(np.arange(centers.size), 4096):
            pts = centers[batch, None] + sides[batch, None] * ref[None, :]
            weights = sides[batch, None] ** 2 * ref_w[None, :]
            for bg in measure.continuous:
                out[batch] += np.sum(bg.density(pts) * weights, axis=1)
        if measure.atoms:
            idx = SquareLocator(centers, sides).locate(measure.atom_locations)
            inside = idx >= 0
            np.add.at(out, idx[inside], measure.atom_masses[inside])
        return out

    # worked examples

    BUILDERS = ('Ex1', 'Ex1-disks', 'Ex2', 'Ex2-four', 'Ex3', 'Ex4')

    def example_field(self, builder: str, params: Optional[Dict[str, Any]] = None) -> ExampleField:
        params = dict(params or {})
        builders = {
            'Ex1': self._strip_example,
            'Ex1-disks': self._disk_union_example,
            'Ex2': self._double_angle_example,
            'Ex2-four': self._four_angle_example,
            'Ex3': self._variable_lattice_example,
            'Ex4': self._wiggle_example,
        }
        if builder not in builders:
            raise ScenarioError(f"unknown example builder {builder!r}", 'builder')
        logger.info("building example %s", builder)
        return builders[builder](params)

    @staticmethod
    def _base(params: Dict[str, Any]) -> FieldConfig:
        return FieldConfig(continuous=[ConstantBackground(float(params.get('B0', 1.0)))])

    def _sparse_region_example(self, name: str, params: Dict[str, Any], region, radii) -> ExampleField:
        tau = float(params.get('tau', 0.5))
        B = float(params.get('B', 2.0))
        base = self._base(params)
        removed = ConstantBackground(B).restricted(region).negated()
        slope = self.omega_slope(Measure([], [removed]), radii)
        if slope > 2.0 - tau + 0.1:
            raise PreconditionError("region grows faster than r^(2-tau)")
        field_ = FieldConfig(continuous=base.continuous + [removed])
        return ExampleField(name, field_, base, Measure([], [removed]),
                            diagnostics={'omega_slope': slope, 'tau': tau})

    def _strip_example(self, params: Dict[str, Any]) -> ExampleField:
        """mu0 - B 1_Omega with Omega = {|x2| <= C (1 + |x1|)^exponent}"""
        tau = float(params.get('tau', 0.5))
        region = StripRegion(float(params.get('C', 1.0)), float(params.get('exponent', tau)))
        radii = GrowthHelper.geometric_radii(10.0, float(params.get('rmax', 1000.0)), 8)
        return self._sparse_region_example('Ex1', params, region, radii)

    def _disk_union_example(self, params: Dict[str, Any]) -> ExampleField:
        """mu0 - B 1_Omega with Omega a union of disks at 4^k of radius |c|^(1 - tau/2) / 2"""
        tau = float(params.get('tau', 0.5))
        rmax = float(params.get('rmax', 4.0 ** 6))
        centers = 4.0 ** np.arange(1, int(np.floor(np.log(rmax) / np.log(4.0))) + 1)
        if centers.size < 3:
            raise ScenarioError("rmax too small for a disk union example", 'rmax')
        disks = [(complex(c), 0.5 * c ** (1.0 - 0.5 * tau)) for c in centers]
        radii = [abs(c) + r for c, r in disks]
        return self._sparse_region_example('Ex1-disks', params, DiskUnionRegion(disks), radii)

    def _sector_example(self, name: str, params: Dict[str, Any], signed_sectors) -> ExampleField:
        base = self._base(params)
        B0 = base.continuous[0].B
        B = float(params.get('B', 1.0))
        parts = [ConstantBackground(sign * B * B0).restricted(sector) for sector, sign in signed_sectors]
        perturbation = Measure([], parts)
        radii = GrowthHelper.geometric_radii(2.0, float(params.get('rmax', 64.0)), 6)
        stats = self.measure_stats(perturbation, radii)
        field_ = FieldConfig(continuous=base.continuous + parts)
        return ExampleField(name, field_, base, perturbation, diagnostics={
            'M_max': float(np.max(np.abs(stats.M))),
            'omega_slope': GrowthHelper.loglog_slope(radii, stats.omega)[0],
        })

    def _double_angle_example(self, params: Dict[str, Any]) -> ExampleField:
        """B (1_{S+pi} - 1_S) mu0 for the thin sector S = {theta1 < arg w < theta2}"""
        t1 = float(params.get('theta1', 0.0))
        t2 = float(params.get('theta2', 0.05))
        if not 0 < t2 - t1 < np.pi:
            raise ScenarioError("sector opening must lie in (0, pi)", 'theta2')
        return self._sector_example('Ex2', params, [(SectorRegion(t1 + np.pi, t2 + np.pi), 1.0),
                                                     (SectorRegion(t1, t2), -1.0)])

    def _four_angle_example(self, params: Dict[str, Any]) -> ExampleField:
        """-B mu0 on four copies of a sector rotated by multiples of pi/2"""
        t1 = float(params.get('theta1', 0.0))
        t2 = float(params.get('theta2', 0.05))
        if not 0 < t2 - t1 < 0.5 * np.pi:
            raise ScenarioError("sector opening must lie in (0, pi/2)", 'theta2')
        turns = 0.5 * np.pi * np.arange(4)
        return self._sector_example('Ex2-four', params, [(SectorRegion(t1 + t, t2 + t), -1.0) for t in turns])

    def _variable_lattice_example(self, params: Dict[str, Any]) -> ExampleField:
        """Square lattice with intensities alpha0 + noise, split into a rearrangement to tile centers
        and additive atoms carrying each tile's flux discrepancy against B|Q|"""
        side = float(params.get('side', 1.0))
        alpha0 = float(params.get('alpha0', 0.25))
        amplitude = float(params.get('amplitude', 0.2))
        tau = float(params.get('tau', 0.5))
        eps = float(params.get('eps', 0.1))
        rmax = float(params.get('rmax', 64.0))
        if abs(alpha0) <= amplitude or not -0.5 <= alpha0 - amplitude <= alpha0 + amplitude < 0.5:
            raise ScenarioError("intensity range must avoid 0 and lie in [-1/2, 1/2)", 'amplitude')
        lattice = Lattice.square(side)
        points = lattice.points_within(rmax)
        rng = np.random.default_rng(int(params.get('seed', Config.SEED)))
        alphas = alpha0 + amplitude * rng.uniform(-1.0, 1.0, points.size)
        solenoids = SolenoidSet(points, alphas, side)
        field_ = FieldConfig(discrete=solenoids, gauge=Gauge.EV)
        B = 2.0 * np.pi * alpha0 / lattice.cell_area
        base = FieldConfig(continuous=[ConstantBackground(B)], gauge=Gauge.EV)

        covering = self.build_square_covering(tau, rmax)
        phi = RearrangementMap.square_to_center(covering, tau)
        centers, sides = self.covering_arrays(covering)
        flux = self.tile_masses(Measure.from_field(field_), covering)
        discrepancy = flux - B * sides ** 2
        additive = Measure([(complex(c), float(m)) for c, m in zip(centers, discrepancy) if m != 0.0])

        interior = (np.abs(centers) + sides / np.sqrt(2.0) <= rmax) & (np.abs(centers) > 2.0)
        bound = np.abs(centers[interior]) ** (2.0 * tau - eps)
        ratio = np.abs(discrepancy[interior]) / bound
        return ExampleField('Ex3', field_, base, additive, phi, Measure.from_field(field_), diagnostics={
            'B': B,
            'tiles': int(centers.size),
            'discrepancy_ratio_max': float(ratio.max()) if ratio.size else 0.0,
            'exponent': 2.0 * tau - eps,
        })

    def _wiggle_example(self, params: Dict[str, Any]) -> ExampleField:
        """(B + a sin x sin y) dx split into a tile-mean-free part mu1 and the tile average minus B"""
        B = float(params.get('B', 1.0))
        a = float(params.get('a', 0.3))
        tau = float(params.get('tau', 0.5))
        rmax = float(params.get('rmax', 32.0))
        n = int(params.get('samples', 32))
        grid = 2.0 * np.pi * np.arange(n) / n
        wiggle = PeriodicDensity(Lattice.square(2.0 * np.pi), a * np.outer(np.sin(grid), np.sin(grid)))
        continuous = [ConstantBackground(B), wiggle]
        field_ = FieldConfig(continuous=continuous)
        base = self._base({'B0': B})

        covering = self.build_square_covering(tau, rmax)
        centers, sides = self.covering_arrays(covering)
        means = self.tile_masses(Measure([], continuous), covering) / sides ** 2
        mean_free = Measure([], continuous + [TileDensity(centers, sides, means).negated()])
        additive = Measure([], [TileDensity(centers, sides, means - B)])
        return ExampleField('Ex4', field_, base, additive, RearrangementMap.square_to_center(covering, tau),
                            mean_free, diagnostics={
                                'tiles': int(centers.size),
                                'mean_deviation_max': float(np.max(np.abs(means - B))),
                            })
