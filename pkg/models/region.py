from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from models.errors import ScenarioError
from utils.helpers import QuadratureHelper, ValidationHelper


class Region(ABC):
    """Abstract base class for plane regions used to restrict continuous backgrounds"""

    kind: str = ''

    @abstractmethod
    def contains(self, w: np.ndarray) -> np.ndarray:
        """Boolean mask of the points of w lying in the region"""
        pass

    @abstractmethod
    def bounding_disk(self) -> Tuple[complex, float]:
        """(center, radius) of a disk containing the region; radius is inf when unbounded"""
        pass

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        pass

    @property
    def is_radial(self) -> bool:
        """True when the region is invariant under rotations about the origin"""
        return False

    def boundary_radii(self, center: complex) -> List[float]:
        """Distances from center at which polar rays may cross the boundary"""
        return []

    def polar_rule(self, center: complex, r_in: float, r_out: float, n_theta: int, order: int = 8,
                   panel_width: Optional[float] = None, graded_levels: int = 0,
                   extra: Iterable[float] = ()) -> Tuple[np.ndarray, np.ndarray]:
        """Polar nodes on the annulus about center, weights zeroed outside the region"""
        extra = list(extra) + self.boundary_radii(center)
        pts, weights = QuadratureHelper.polar_nodes(center, r_in, r_out, n_theta, order,
                                                    panel_width, graded_levels, extra)
        keep = self.contains(pts)
        return pts[keep], weights[keep]


@dataclass
class DiskRegion(Region):
    center: complex = 0j
    radius: float = 1.0
    kind: str = field(default='Disk', init=False)

    def contains(self, w):
        return np.abs(np.asarray(w) - self.center) <= self.radius

    def bounding_disk(self):
        return self.center, self.radius

    @property
    def is_radial(self):
        return self.center == 0

    def boundary_radii(self, center):
        d = abs(center - self.center)
        return [r for r in (abs(d - self.radius), d + self.radius) if r > 0]

    def polar_rule(self, center, r_in, r_out, n_theta, order=8, panel_width=None,
                   graded_levels=0, extra=()):
        if abs(center - self.center) < 1e-14 * max(1.0, self.radius):
            r_out = min(r_out, self.radius)
            if r_out <= r_in:
                return np.zeros(0, dtype=complex), np.zeros(0)
            return QuadratureHelper.polar_nodes(center, r_in, r_out, n_theta, order,
                                                panel_width, graded_levels, extra)
        return super().polar_rule(center, r_in, r_out, n_theta, order, panel_width, graded_levels, extra)

    def to_dict(self):
        return {'kind': self.kind, 'center': [self.center.real, self.center.imag], 'radius': self.radius}


@dataclass
class AnnulusRegion(Region):
    """r_in <= |w| <= r_out about the origin"""
    r_in: float = 0.0
    r_out: float = 1.0
    kind: str = field(default='Annulus', init=False)

    def contains(self, w):
        r = np.abs(np.asarray(w))
        return (r >= self.r_in) & (r <= self.r_out)

    def bounding_disk(self):
        return 0j, self.r_out

    @property
    def is_radial(self):
        return True

    def boundary_radii(self, center):
        d = abs(center)
        return [r for r in (abs(d - self.r_in), d + self.r_in, abs(d - self.r_out), d + self.r_out) if r > 0]

    def polar_rule(self, center, r_in, r_out, n_theta, order=8, panel_width=None,
                   graded_levels=0, extra=()):
        if abs(center) < 1e-14 * max(1.0, self.r_out):
            lo, hi = max(r_in, self.r_in), min(r_out, self.r_out)
            if hi <= lo:
                return np.zeros(0, dtype=complex), np.zeros(0)
            return QuadratureHelper.polar_nodes(center, lo, hi, n_theta, order, panel_width,
                                                graded_levels if lo == r_in else 0, extra)
        return super().polar_rule(center, r_in, r_out, n_theta, order, panel_width, graded_levels, extra)

    def to_dict(self):
        return {'kind': self.kind, 'r_in': self.r_in, 'r_out': self.r_out}


@dataclass
class SectorRegion(Region):
    """theta1 < arg w < theta2 (radians, origin apex)"""
    theta1: float = 0.0
    theta2: float = 0.1
    kind: str = field(default='Sector', init=False)

    def contains(self, w):
        w = np.asarray(w)
        phase = np.mod(np.angle(w) - self.theta1, 2.0 * np.pi)
        return (phase > 0) & (phase < self.theta2 - self.theta1) & (np.abs(w) > 0)

    def bounding_disk(self):
        return 0j, np.inf

    def polar_rule(self, center, r_in, r_out, n_theta, order=8, panel_width=None,
                   graded_levels=0, extra=()):
        if center == 0:
            return QuadratureHelper.sector_nodes(self.theta1, self.theta2, r_in, r_out,
                                                 max(order, n_theta // 4), order, panel_width, extra)
        return super().polar_rule(center, r_in, r_out, n_theta, order, panel_width, graded_levels, extra)

    def to_dict(self):
        return {'kind': self.kind, 'theta1': self.theta1, 'theta2': self.theta2}


@dataclass
class StripRegion(Region):
    """|x2| <= C (1 + |x1|)^tau"""
    C: float = 1.0
    tau: float = 0.5
    kind: str = field(default='Strip', init=False)

    def contains(self, w):
        w = np.asarray(w)
        return np.abs(w.imag) <= self.C * (1.0 + np.abs(w.real)) ** self.tau

    def bounding_disk(self):
        return 0j, np.inf

    def polar_rule(self, center, r_in, r_out, n_theta, order=8, panel_width=None,
                   graded_levels=0, extra=()):
        if center != 0:
            return super().polar_rule(center, r_in, r_out, n_theta, order, panel_width, graded_levels, extra)
        # Cartesian nodes across the strip, clipped to the annulus
        width = panel_width or max(r_out - r_in, 1e-12) / 2
        n = max(2, int(np.ceil(2.0 * r_out / width)))
        x, wx = QuadratureHelper.panels(np.linspace(-r_out, r_out, n + 1), order)
        t, wt = QuadratureHelper.gauss(order)
        half = np.minimum(self.C * (1.0 + np.abs(x)) ** self.tau, np.sqrt(np.maximum(r_out ** 2 - x ** 2, 0.0)))
        pts = x[:, None] + 1j * half[:, None] * (2.0 * t - 1.0)[None, :]
        weights = wx[:, None] * 2.0 * half[:, None] * wt[None, :]
        pts, weights = pts.ravel(), weights.ravel()
        keep = (np.abs(pts) >= r_in) & (weights > 0)
        return pts[keep], weights[keep]

    def to_dict(self):
        return {'kind': self.kind, 'C': self.C, 'tau': self.tau}


@dataclass
class BoxRegion(Region):
    xmin: float = -1.0
    xmax: float = 1.0
    ymin: float = -1.0
    ymax: float = 1.0
    kind: str = field(default='Box', init=False)

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ScenarioError("empty box", 'region')

    def contains(self, w):
        w = np.asarray(w)
        return (w.real >= self.xmin) & (w.real <= self.xmax) & (w.imag >= self.ymin) & (w.imag <= self.ymax)

    @property
    def center(self) -> complex:
        return complex(0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))

    def bounding_disk(self):
        return self.center, 0.5 * float(np.hypot(self.xmax - self.xmin, self.ymax - self.ymin))

    def grid(self, pitch: float) -> np.ndarray:
        """Sample points covering the box with spacing at most pitch"""
        nx = max(1, int(np.ceil((self.xmax - self.xmin) / pitch)))
        ny = max(1, int(np.ceil((self.ymax - self.ymin) / pitch)))
        x = np.linspace(self.xmin, self.xmax, nx + 1)
        y = np.linspace(self.ymin, self.ymax, ny + 1)
        return (x[:, None] + 1j * y[None, :]).ravel()

    def to_dict(self):
        return {'kind': self.kind, 'xmin': self.xmin, 'xmax': self.xmax, 'ymin': self.ymin, 'ymax': self.ymax}


@dataclass
class DiskUnionRegion(Region):
    disks: List[Tuple[complex, float]] = field(default_factory=list)
    kind: str = field(default='DiskUnion', init=False)

    def contains(self, w):
        w = np.asarray(w)
        mask = np.zeros(w.shape, dtype=bool)
        for c, r in self.disks:
            mask |= np.abs(w - c) <= r
        return mask

    def bounding_disk(self):
        if not self.disks:
            return 0j, 0.0
        return 0j, max(abs(c) + r for c, r in self.disks)

    def boundary_radii(self, center):
        out = []
        for c, r in self.disks:
            d = abs(center - c)
            out.extend(x for x in (abs(d - r), d + r) if x > 0)
        return out

    def area_within(self, radius: float) -> float:
        """Combined area of the disks lying entirely inside D(0, radius)"""
        return float(sum(np.pi * r ** 2 for c, r in self.disks if abs(c) + r <= radius))

    def to_dict(self):
        return {'kind': self.kind, 'disks': [[c.real, c.imag, r] for c, r in self.disks]}


@dataclass
class ComplementRegion(Region):
    inner: Region = None
    kind: str = field(default='Complement', init=False)

    def contains(self, w):
        return ~self.inner.contains(w)

    def bounding_disk(self):
        return 0j, np.inf

    @property
    def is_radial(self):
        return self.inner.is_radial

    def boundary_radii(self, center):
        return self.inner.boundary_radii(center)

    def to_dict(self):
        return {'kind': self.kind, 'inner': self.inner.to_dict()}


class RegionFactory:
    """Factory for creating regions from scenario dictionaries"""

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> Region:
        kind = data.get('kind')
        try:
            if kind == 'Disk':
                return DiskRegion(ValidationHelper.as_complex(data.get('center', [0, 0])), float(data['radius']))
            if kind == 'Annulus':
                return AnnulusRegion(float(data['r_in']), float(data['r_out']))
            if kind == 'Sector':
                return SectorRegion(float(data['theta1']), float(data['theta2']))
            if kind == 'Strip':
                return StripRegion(float(data['C']), float(data['tau']))
            if kind == 'Box':
                return BoxRegion(float(data['xmin']), float(data['xmax']), float(data['ymin']), float(data['ymax']))
            if kind == 'DiskUnion':
                return DiskUnionRegion([(complex(x, y), float(r)) for x, y, r in data['disks']])
            if kind == 'Complement':
                return ComplementRegion(RegionFactory.from_dict(data['inner']))
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError(f"malformed {kind} region ({e})", 'region')
        raise ScenarioError(f"unknown region kind {kind!r}", 'region')


class SquareLocator:
    """Nearest-center lookup of the axis-parallel square containing each point"""

    def __init__(self, centers: np.ndarray, sides: np.ndarray):
        self.centers = np.asarray(centers, dtype=complex).ravel()
        self.sides = np.asarray(sides, dtype=float).ravel()
        self.tree = cKDTree(np.column_stack([self.centers.real, self.centers.imag]))

    def locate(self, w: np.ndarray) -> np.ndarray:
        """Index of a square containing each point, -1 when none does"""
        w = np.atleast_1d(np.asarray(w, dtype=complex)).ravel()
        k = min(9, self.centers.size)
        _, idx = self.tree.query(np.column_stack([w.real, w.imag]), k=k)
        idx = np.asarray(idx).reshape(w.size, k)
        out = np.full(w.size, -1)
        for j in range(k - 1, -1, -1):
            cand = idx[:, j]
            h = 0.5 * self.sides[cand]
            c = self.centers[cand]
            inside = (np.abs(w.real - c.real) <= h) & (np.abs(w.imag - c.imag) <= h)
            out = np.where(inside, cand, out)
        return out
