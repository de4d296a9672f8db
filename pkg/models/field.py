from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree

from models.errors import PreconditionError, ScenarioError
from models.potential import Lattice
from models.region import Region, RegionFactory, SquareLocator
from utils.helpers import QuadratureHelper, ValidationHelper


@dataclass(frozen=True)
class Point:
    """z = re + i im"""
    re: float
    im: float

    def __post_init__(self):
        if not (np.isfinite(self.re) and np.isfinite(self.im)):
            raise PreconditionError("point coordinates must be finite")

    @property
    def z(self) -> complex:
        return complex(self.re, self.im)

    @classmethod
    def of(cls, value: Any) -> 'Point':
        z = ValidationHelper.as_complex(value)
        return cls(z.real, z.imag)

    def to_dict(self) -> List[float]:
        return [self.re, self.im]


# Region operations applied, in order, on top of a background's base density

@dataclass
class RestrictToRegion:
    region: Region

    def to_dict(self) -> Dict[str, Any]:
        return {'op': 'RestrictToRegion', 'region': self.region.to_dict()}


@dataclass
class ScaleBy:
    factor: float

    def to_dict(self) -> Dict[str, Any]:
        return {'op': 'ScaleBy', 'factor': self.factor}


def region_op_from_dict(data: Dict[str, Any]):
    op = data.get('op')
    if op == 'RestrictToRegion':
        return RestrictToRegion(RegionFactory.from_dict(data['region']))
    if op == 'ScaleBy':
        return ScaleBy(float(data['factor']))
    raise ScenarioError(f"unknown region op {op!r}", 'region_ops')


class ContinuousBackground(ABC):
    """Abstract base class for continuous magnetic densities"""

    kind: str = ''
    region_ops: list

    @abstractmethod
    def base_density(self, w: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def base_support(self) -> Tuple[complex, float]:
        """Bounding disk of the unrestricted density (radius inf when unbounded)"""
        pass

    @abstractmethod
    def base_dict(self) -> Dict[str, Any]:
        pass

    @property
    def base_is_radial(self) -> bool:
        return False

    @property
    def regions(self) -> List[Region]:
        return [op.region for op in self.region_ops if isinstance(op, RestrictToRegion)]

    @property
    def scale(self) -> float:
        out = 1.0
        for op in self.region_ops:
            if isinstance(op, ScaleBy):
                out *= op.factor
        return out

    @property
    def is_radial(self) -> bool:
        return self.base_is_radial and all(r.is_radial for r in self.regions)

    def density(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        out = self.scale * np.asarray(self.base_density(w), dtype=float)
        for region in self.regions:
            out = np.where(region.contains(w), out, 0.0)
        return out

    def __call__(self, w: np.ndarray) -> np.ndarray:
        return self.density(w)

    def support(self) -> Tuple[complex, float]:
        best = self.base_support()
        for region in self.regions:
            candidate = region.bounding_disk()
            if candidate[1] < best[1]:
                best = candidate
        return best

    @property
    def is_bounded(self) -> bool:
        return bool(np.isfinite(self.support()[1]))

    def boundary_radii(self, center: complex) -> List[float]:
        out = []
        for region in self.regions:
            out.extend(region.boundary_radii(center))
        return out

    def polar_rule(self, center: complex, r_in: float, r_out: float, n_theta: int = 64, order: int = 8,
                   panel_width: Optional[float] = None, graded_levels: int = 0,
                   extra=()) -> Tuple[np.ndarray, np.ndarray]:
        """Nodes and mass weights (density times area) on the annulus about center"""
        extra = list(extra) + self.boundary_radii(center)
        regions = self.regions
        if regions:
            pts, area = regions[0].polar_rule(center, r_in, r_out, n_theta, order, panel_width,
                                              graded_levels, extra)
        else:
            pts, area = QuadratureHelper.polar_nodes(center, r_in, r_out, n_theta, order, panel_width,
                                                     graded_levels, extra)
        return pts, area * self.density(pts)

    def exact_disk_mass(self, center: complex, radius: float) -> Optional[float]:
        """Closed-form mass of D(center, radius) when available"""
        return None

    def negated(self) -> 'ContinuousBackground':
        return self.with_ops(self.region_ops + [ScaleBy(-1.0)])

    def restricted(self, region: Region) -> 'ContinuousBackground':
        return self.with_ops(self.region_ops + [RestrictToRegion(region)])

    def scaled(self, factor: float) -> 'ContinuousBackground':
        return self.with_ops(self.region_ops + [ScaleBy(factor)])

    def with_ops(self, ops: list) -> 'ContinuousBackground':
        return replace(self, region_ops=list(ops))

    def to_dict(self) -> Dict[str, Any]:
        data = {'kind': self.kind, **self.base_dict()}
        if self.region_ops:
            data['region_ops'] = [op.to_dict() for op in self.region_ops]
        return data


@dataclass
class ConstantBackground(ContinuousBackground):
    B: float = 1.0
    region_ops: list = field(default_factory=list)
    kind: str = field(default='Constant', init=False)

    def base_density(self, w):
        return np.full(np.shape(w), float(self.B))

    def base_support(self):
        return 0j, np.inf

    @property
    def base_is_radial(self):
        return True

    def exact_disk_mass(self, center, radius):
        if not self.region_ops:
            return float(self.B) * np.pi * radius ** 2
        return None

    def negated(self):
        if not self.region_ops:
            return ConstantBackground(-self.B)
        return super().negated()

    def base_dict(self):
        return {'B': self.B}


@dataclass
class PeriodicDensity(ContinuousBackground):
    """Lattice-periodic density sampled on the cell grid s_i = i/n in lattice coordinates"""
    lattice: Lattice = None
    samples: np.ndarray = None
    region_ops: list = field(default_factory=list)
    kind: str = field(default='PeriodicDensity', init=False)

    def __post_init__(self):
        self.samples = ValidationHelper.require_finite('density samples', np.asarray(self.samples, dtype=float))
        if self.samples.ndim != 2:
            raise ScenarioError("samples must be a 2D grid", 'samples')
        n1, n2 = self.samples.shape
        padded = np.pad(self.samples, ((0, 1), (0, 1)), mode='wrap')
        self._interp = RegularGridInterpolator((np.arange(n1 + 1) / n1, np.arange(n2 + 1) / n2), padded)

    def base_density(self, w):
        s1, s2 = self.lattice.coordinates(np.asarray(w, dtype=complex))
        pts = np.stack([np.mod(s1, 1.0).ravel(), np.mod(s2, 1.0).ravel()], axis=-1)
        return self._interp(pts).reshape(np.shape(w))

    def base_support(self):
        return 0j, np.inf

    @property
    def cell_mean(self) -> float:
        """Average over one cell (exact for the bilinear interpolant)"""
        return float(self.samples.mean()) * self.scale

    @property
    def cell_flux(self) -> float:
        return self.cell_mean * self.lattice.cell_area

    def base_dict(self):
        return {'lattice': self.lattice.to_dict(), 'samples': self.samples.tolist()}


@dataclass
class RadialProfile(ContinuousBackground):
    """Radial density, either tabulated r -> value or coef r^exponent on r <= rmax"""
    radii: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    coef: float = 0.0
    exponent: float = 0.0
    rmax: float = np.inf
    region_ops: list = field(default_factory=list)
    kind: str = field(default='RadialProfile', init=False)

    def __post_init__(self):
        if self.radii is not None:
            self.radii = np.asarray(self.radii, dtype=float)
            self.values = ValidationHelper.require_finite('profile values', np.asarray(self.values, dtype=float))
            if self.radii.shape != self.values.shape or np.any(np.diff(self.radii) <= 0):
                raise ScenarioError("radii must increase and match values", 'profile')

    @property
    def tabulated(self) -> bool:
        return self.radii is not None

    def radial(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.tabulated:
            return np.interp(r, self.radii, self.values, left=self.values[0], right=0.0)
        with np.errstate(divide='ignore'):
            out = self.coef * np.maximum(r, 1e-300) ** self.exponent
        return np.where(r <= self.rmax, out, 0.0)

    def base_density(self, w):
        return self.radial(np.abs(w))

    def base_support(self):
        return 0j, float(self.radii[-1]) if self.tabulated else self.rmax

    @property
    def base_is_radial(self):
        return True

    def boundary_radii(self, center):
        out = super().boundary_radii(center)
        if center == 0:
            out.extend(self.radii.tolist() if self.tabulated else
                       ([self.rmax] if np.isfinite(self.rmax) else []))
        return out

    def exact_disk_mass(self, center, radius):
        if self.region_ops and any(not isinstance(op, ScaleBy) for op in self.region_ops):
            return None
        if center != 0 or self.tabulated or self.exponent <= -2:
            return None
        r = min(radius, self.rmax)
        p = self.exponent + 2.0
        return self.scale * 2.0 * np.pi * self.coef * r ** p / p

    def base_dict(self):
        if self.tabulated:
            return {'radii': self.radii.tolist(), 'values': self.values.tolist()}
        return {'coef': self.coef, 'exponent': self.exponent,
                'rmax': self.rmax if np.isfinite(self.rmax) else None}


@dataclass
class GridDensity(ContinuousBackground):
    """Bilinear density on a box, zero outside; samples[i, j] sits at (x_i, y_j)"""
    xmin: float = -1.0
    xmax: float = 1.0
    ymin: float = -1.0
    ymax: float = 1.0
    samples: np.ndarray = None
    region_ops: list = field(default_factory=list)
    kind: str = field(default='GridDensity', init=False)

    def __post_init__(self):
        self.samples = ValidationHelper.require_finite('density samples', np.asarray(self.samples, dtype=float))
        if self.samples.ndim != 2 or min(self.samples.shape) < 2:
            raise ScenarioError("samples must be a 2D grid of at least 2x2", 'samples')
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ScenarioError("empty bounding box", 'box')
        nx, ny = self.samples.shape
        self._interp = RegularGridInterpolator(
            (np.linspace(self.xmin, self.xmax, nx), np.linspace(self.ymin, self.ymax, ny)),
            self.samples, bounds_error=False, fill_value=0.0)

    def base_density(self, w):
        w = np.asarray(w, dtype=complex)
        pts = np.stack([w.real.ravel(), w.imag.ravel()], axis=-1)
        return self._interp(pts).reshape(w.shape)

    def base_support(self):
        center = complex(0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))
        return center, 0.5 * float(np.hypot(self.xmax - self.xmin, self.ymax - self.ymin))

    def base_dict(self):
        return {'box': [self.xmin, self.xmax, self.ymin, self.ymax], 'samples': self.samples.tolist()}


@dataclass
class TileDensity(ContinuousBackground):
    """Density constant on each square tile, zero outside the tiles"""
    centers: np.ndarray = None
    sides: np.ndarray = None
    values: np.ndarray = None
    region_ops: list = field(default_factory=list)
    kind: str = field(default='TileDensity', init=False)

    def __post_init__(self):
        self.centers = ValidationHelper.as_complex_array(self.centers).ravel()
        self.sides = np.asarray(self.sides, dtype=float).ravel()
        self.values = ValidationHelper.require_finite('tile values', np.asarray(self.values, dtype=float).ravel())
        if not (self.centers.size == self.sides.size == self.values.size):
            raise ScenarioError("tile centers, sides and values differ in length", 'tiles')
        self._locator = SquareLocator(self.centers, self.sides)

    def tile_index(self, w: np.ndarray) -> np.ndarray:
        return self._locator.locate(w)

    def base_density(self, w):
        idx = self.tile_index(w)
        return np.where(idx >= 0, self.values[np.maximum(idx, 0)], 0.0).reshape(np.shape(w))

    def base_support(self):
        return 0j, float(np.max(np.abs(self.centers) + self.sides / np.sqrt(2.0)))

    def base_dict(self):
        return {'tiles': [[c.real, c.imag, s, v] for c, s, v in zip(self.centers, self.sides, self.values)]}


class BackgroundFactory:
    """Factory for creating continuous backgrounds from scenario dictionaries"""

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> ContinuousBackground:
        kind = data.get('kind')
        ops = [region_op_from_dict(op) for op in data.get('region_ops', [])]
        try:
            if kind == 'Constant':
                return ConstantBackground(float(data['B']), ops)
            if kind == 'PeriodicDensity':
                return PeriodicDensity(Lattice.from_dict(data['lattice']), np.array(data['samples']), ops)
            if kind == 'RadialProfile':
                if 'radii' in data:
                    return RadialProfile(np.array(data['radii']), np.array(data['values']), region_ops=ops)
                rmax = data.get('rmax')
                return RadialProfile(coef=float(data['coef']), exponent=float(data['exponent']),
                                     rmax=np.inf if rmax is None else float(rmax), region_ops=ops)
            if kind == 'GridDensity':
                xmin, xmax, ymin, ymax = (float(v) for v in data['box'])
                return GridDensity(xmin, xmax, ymin, ymax, np.array(data['samples']), ops)
            if kind == 'TileDensity':
                rows = np.array(data['tiles'], dtype=float).reshape(-1, 4)
                return TileDensity(rows[:, 0] + 1j * rows[:, 1], rows[:, 2], rows[:, 3], ops)
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError(f"malformed {kind} background ({e})", 'continuous')
        raise ScenarioError(f"unknown background kind {kind!r}", 'continuous')


@dataclass
class SolenoidSet:
    """Aharonov-Bohm solenoids: a finite list, or a regular lattice of equal intensity"""
    locations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))
    intensities: np.ndarray = field(default_factory=lambda: np.zeros(0))
    r0: float = 1.0
    lattice: Optional[Lattice] = None
    offset: complex = 0j

    def __post_init__(self):
        self.locations = ValidationHelper.as_complex_array(self.locations).ravel()
        self.intensities = np.asarray(self.intensities, dtype=float).ravel()
        ValidationHelper.require_positive('r0', self.r0)
        ValidationHelper.require_finite('solenoid locations', self.locations)
        ValidationHelper.require_finite('solenoid intensities', self.intensities)
        if self.lattice is not None:
            if self.intensities.size != 1:
                raise ScenarioError("a solenoid lattice carries exactly one intensity", 'solenoids')
            if self.lattice.min_separation() < self.r0 * (1 - 1e-12):
                raise PreconditionError(f"lattice spacing below separation r0={self.r0}")
        else:
            if self.locations.size != self.intensities.size:
                raise ScenarioError("locations and intensities differ in length", 'solenoids')
            if self.locations.size > 1:
                tree = cKDTree(np.column_stack([self.locations.real, self.locations.imag]))
                if tree.query_pairs(self.r0 * (1 - 1e-12)):
                    raise PreconditionError(f"solenoids closer than separation r0={self.r0}")
        if np.any(np.abs(self.intensities - np.round(self.intensities)) < 1e-12):
            raise PreconditionError("null solenoid after reduction")

    @classmethod
    def finite(cls, solenoids: List[Tuple[Any, float]], r0: float = None) -> 'SolenoidSet':
        locations = np.array([ValidationHelper.as_complex(p) for p, _ in solenoids], dtype=complex)
        intensities = np.array([a for _, a in solenoids], dtype=float)
        if r0 is None:
            r0 = cls.natural_separation(locations)
        return cls(locations, intensities, r0)

    @classmethod
    def regular_lattice(cls, lattice: Lattice, alpha: float, offset: complex = 0j,
                        r0: float = None) -> 'SolenoidSet':
        return cls(np.zeros(0, dtype=complex), np.array([alpha]),
                   lattice.min_separation() if r0 is None else r0, lattice, complex(offset))

    @classmethod
    def empty(cls) -> 'SolenoidSet':
        return cls()

    @staticmethod
    def natural_separation(locations: np.ndarray) -> float:
        if len(locations) < 2:
            return 1.0
        tree = cKDTree(np.column_stack([locations.real, locations.imag]))
        d, _ = tree.query(tree.data, k=2)
        return float(d[:, 1].min())

    @property
    def is_lattice(self) -> bool:
        return self.lattice is not None

    @property
    def is_empty(self) -> bool:
        return not self.is_lattice and self.locations.size == 0

    @property
    def alpha(self) -> float:
        """Common intensity of a lattice"""
        return float(self.intensities[0])

    def points_within(self, radius: float, center: complex = 0j) -> Tuple[np.ndarray, np.ndarray]:
        """Locations and intensities with |lambda - center| <= radius"""
        if self.is_lattice:
            pts = self.offset + self.lattice.points_within(radius, center - self.offset)
            return pts, np.full(pts.size, self.alpha)
        keep = np.abs(self.locations - center) <= radius
        return self.locations[keep], self.intensities[keep]

    def count_within(self, radius: float) -> int:
        return int(self.points_within(radius)[0].size)

    def with_intensities(self, intensities: np.ndarray) -> 'SolenoidSet':
        """Same locations, new intensities (no validation of the target gauge)"""
        return replace(self, intensities=np.asarray(intensities, dtype=float))

    def to_dict(self) -> Dict[str, Any]:
        if self.is_lattice:
            return {'lattice': self.lattice.to_dict(), 'alpha': self.alpha,
                    'offset': [self.offset.real, self.offset.imag], 'r0': self.r0}
        return {'solenoids': [[z.real, z.imag, a] for z, a in zip(self.locations, self.intensities)],
                'r0': self.r0}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SolenoidSet':
        try:
            if 'lattice' in data:
                return cls.regular_lattice(Lattice.from_dict(data['lattice']), float(data['alpha']),
                                           ValidationHelper.as_complex(data.get('offset', [0, 0])),
                                           data.get('r0'))
            rows = data.get('solenoids', [])
            if not rows:
                return cls.empty()
            return cls.finite([((x, y), a) for x, y, a in rows], data.get('r0'))
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError(f"malformed solenoid list ({e})", 'solenoids')


class Gauge(Enum):
    MAX = 'MaxGauge'
    EV = 'EVGauge'


class Spin(Enum):
    DOWN = 'Down'
    UP = 'Up'


@dataclass
class FieldConfig:
    """Signed magnetic measure: solenoids plus continuous backgrounds, with gauge and spin"""
    discrete: SolenoidSet = field(default_factory=SolenoidSet.empty)
    continuous: List[ContinuousBackground] = field(default_factory=list)
    gauge: Gauge = Gauge.MAX
    spin: Spin = Spin.DOWN

    def intensity_interval(self) -> Tuple[float, float, bool]:
        """(low, high, low_closed) allowed by gauge and spin"""
        if self.gauge == Gauge.EV:
            return -0.5, 0.5, True
        if self.spin == Spin.UP:
            return -1.0, 0.0, False
        return 0.0, 1.0, False

    def in_gauge(self) -> bool:
        low, high, closed = self.intensity_interval()
        a = self.discrete.intensities
        above = a >= low if closed else a > low
        return bool(np.all(above & (a < high) & (a != 0)))

    def require_gauge(self) -> 'FieldConfig':
        if not self.in_gauge():
            raise PreconditionError("gauge-normalize first")
        return self

    @property
    def has_continuous(self) -> bool:
        return bool(self.continuous)

    def continuous_density(self, w: np.ndarray) -> np.ndarray:
        out = np.zeros(np.shape(w))
        for bg in self.continuous:
            out = out + bg.density(w)
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {**self.discrete.to_dict(),
                'continuous': [bg.to_dict() for bg in self.continuous],
                'gauge': self.gauge.value,
                'spin': self.spin.value}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'FieldConfig':
        try:
            gauge = Gauge(data.get('gauge', 'MaxGauge'))
        except ValueError:
            raise ScenarioError(f"unknown gauge {data.get('gauge')!r}", 'gauge')
        try:
            spin = Spin(data.get('spin', 'Down'))
        except ValueError:
            raise ScenarioError(f"unknown spin {data.get('spin')!r}", 'spin')
        return cls(SolenoidSet.from_dict(data),
                   [BackgroundFactory.from_dict(bg) for bg in data.get('continuous', [])],
                   gauge, spin)


@dataclass
class ConditionReport:
    """Outcome of a sampled structural-condition check"""
    holds: bool
    witness: Optional[Point] = None
    extremal_value: float = 0.0
    lipschitz_correction: float = 0.0
    samples: int = 0

    def __post_init__(self):
        if not self.holds and self.witness is None:
            raise ValueError("a failing report needs a witness")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'holds': self.holds,
            'witness': None if self.witness is None else self.witness.to_dict(),
            'extremal_value': self.extremal_value,
            'lipschitz_correction': self.lipschitz_correction,
            'samples': self.samples,
        }
