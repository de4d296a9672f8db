from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from config import Config
from models.errors import PreconditionError
from utils.helpers import QuadratureHelper, ValidationHelper


@dataclass(frozen=True)
class Lattice:
    """Regular lattice generated by two non-collinear periods"""
    omega1: complex
    omega2: complex

    def __post_init__(self):
        object.__setattr__(self, 'omega1', complex(self.omega1))
        object.__setattr__(self, 'omega2', complex(self.omega2))
        if not self.cell_area > 1e-14 * max(abs(self.omega1), abs(self.omega2)) ** 2:
            raise PreconditionError("lattice periods are collinear")

    @property
    def cell_area(self) -> float:
        return abs((np.conj(self.omega1) * self.omega2).imag)

    @property
    def m(self) -> float:
        """Quadratic growth coefficient pi / (2S)"""
        return np.pi / (2.0 * self.cell_area)

    @property
    def max_period(self) -> float:
        return max(abs(self.omega1), abs(self.omega2))

    @cached_property
    def _basis(self) -> np.ndarray:
        return np.array([[self.omega1.real, self.omega2.real],
                         [self.omega1.imag, self.omega2.imag]])

    @cached_property
    def _inverse(self) -> np.ndarray:
        return np.linalg.inv(self._basis)

    @cached_property
    def reciprocal(self) -> Tuple[np.ndarray, np.ndarray]:
        """Reciprocal vectors b_i with b_i . omega_j = 2 pi delta_ij"""
        b = 2.0 * np.pi * self._inverse
        return b[0], b[1]

    def coordinates(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=complex)
        s = self._inverse @ np.vstack([z.real.ravel(), z.imag.ravel()])
        return s[0].reshape(z.shape), s[1].reshape(z.shape)

    def reduce(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Split z = lambda + u with u in the centred fundamental cell"""
        s1, s2 = self.coordinates(z)
        n1, n2 = np.round(s1), np.round(s2)
        lam = n1 * self.omega1 + n2 * self.omega2
        return np.asarray(z) - lam, lam

    def points_within(self, radius: float, center: complex = 0j) -> np.ndarray:
        """All lattice points with |lambda - center| <= radius"""
        bound = radius * np.abs(self._inverse).sum(axis=1) + 1
        s1, s2 = self.coordinates(np.array([center]))
        n1 = np.arange(int(np.floor(s1[0] - bound[0])), int(np.ceil(s1[0] + bound[0])) + 1)
        n2 = np.arange(int(np.floor(s2[0] - bound[1])), int(np.ceil(s2[0] + bound[1])) + 1)
        pts = (n1[:, None] * self.omega1 + n2[None, :] * self.omega2).ravel()
        return pts[np.abs(pts - center) <= radius]

    def min_separation(self) -> float:
        near = self.points_within(2.5 * self.max_period)
        near = near[np.abs(near) > 0]
        return float(np.min(np.abs(near)))

    def to_dict(self) -> Dict[str, Any]:
        return {'omega1': [self.omega1.real, self.omega1.imag],
                'omega2': [self.omega2.real, self.omega2.imag]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Lattice':
        return cls(ValidationHelper.as_complex(data['omega1']), ValidationHelper.as_complex(data['omega2']))

    @classmethod
    def square(cls, side: float = 1.0) -> 'Lattice':
        return cls(complex(side, 0.0), complex(0.0, side))


@dataclass(frozen=True)
class QuadratureSpec:
    """Resolution knobs shared by all quadrature-based operations"""
    tol: float = 1e-8
    order: int = field(default_factory=lambda: Config.GAUSS_ORDER)
    n_theta: int = field(default_factory=lambda: Config.POLAR_SECTORS)
    graded_levels: int = 30
    panel_width: Optional[float] = None
    max_refine: int = 6
    cells: int = 64

    def refined(self) -> 'QuadratureSpec':
        return QuadratureSpec(self.tol, self.order, 2 * self.n_theta, self.graded_levels + 4,
                              None if self.panel_width is None else self.panel_width / 2,
                              self.max_refine, 2 * self.cells)

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'QuadratureSpec':
        return cls(**(data or {}))


class MollifierProfile(Enum):
    SMOOTH_BUMP = 'SmoothBump'
    DISK_AVERAGE_COMPOSED_WITH_BUMP = 'DiskAverageComposedWithBump'


def _bump(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


@dataclass(frozen=True)
class Mollifier:
    """Radial unit-mass averaging kernel chi"""
    radius: float
    profile: MollifierProfile = MollifierProfile.SMOOTH_BUMP
    R0: float = 0.0

    def __post_init__(self):
        ValidationHelper.require_positive('mollifier radius', self.radius)
        if self.profile == MollifierProfile.DISK_AVERAGE_COMPOSED_WITH_BUMP:
            ValidationHelper.require_positive('R0', self.R0)

    @property
    def support(self) -> float:
        if self.profile == MollifierProfile.DISK_AVERAGE_COMPOSED_WITH_BUMP:
            return self.radius + self.R0
        return self.radius

    @cached_property
    def _bump_norm(self) -> float:
        mass, _ = integrate.quad(lambda r: 2.0 * np.pi * r * _bump(np.array(r / self.radius)),
                                 0.0, self.radius, epsabs=1e-15, epsrel=1e-13, limit=200)
        return 1.0 / mass

    @cached_property
    def _table(self) -> Tuple[np.ndarray, np.ndarray]:
        """Tabulated radial profile of the disk-average composed with the bump"""
        R, R0 = self.radius, self.R0
        r = np.linspace(0.0, R + R0, 801)
        values = np.empty_like(r)
        for i, ri in enumerate(r):
            breaks = sorted({0.0, R, *[b for b in (abs(ri - R0), ri + R0) if 0 < b < R]})
            s, ws = QuadratureHelper.panels(breaks, 24)
            b = self._bump_norm * _bump(s / R)
            if ri == 0.0:
                L = np.where(s < R0, 2.0 * np.pi, 0.0)
            else:
                q = (ri ** 2 + s ** 2 - R0 ** 2) / (2.0 * ri * np.maximum(s, 1e-300))
                L = 2.0 * np.arccos(np.clip(q, -1.0, 1.0))
            values[i] = np.sum(ws * b * s * L) / (np.pi * R0 ** 2)
        # exact integral of 2 pi r chi for the piecewise-linear interpolant
        h = np.diff(r)
        mass = 2.0 * np.pi * np.sum(h * (r[:-1] * (2 * values[:-1] + values[1:])
                                         + r[1:] * (values[:-1] + 2 * values[1:])) / 6.0)
        return r, values / mass

    def __call__(self, w: np.ndarray) -> np.ndarray:
        return self.radial(np.abs(np.asarray(w)))

    def radial(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.profile == MollifierProfile.SMOOTH_BUMP:
            return self._bump_norm * _bump(r / self.radius)
        grid, values = self._table
        return np.interp(r, grid, values, right=0.0)

    def total_mass(self) -> float:
        if self.profile == MollifierProfile.SMOOTH_BUMP:
            mass, _ = integrate.quad(lambda r: 2.0 * np.pi * r * self.radial(np.array(r)),
                                     0.0, self.radius, epsabs=1e-15, epsrel=1e-13, limit=200)
            return mass
        r, v = self._table
        h = np.diff(r)
        return float(2.0 * np.pi * np.sum(h * (r[:-1] * (2 * v[:-1] + v[1:]) + r[1:] * (v[:-1] + 2 * v[1:])) / 6.0))

    @cached_property
    def _mass_table(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Cumulative mass M(r) and log-moment integral of ln s dM(s) on a fine grid"""
        r, wr = QuadratureHelper.radial_rule(0.0, self.support, 16, self.support / 400)
        dm = 2.0 * np.pi * r * self.radial(r) * wr
        dm /= dm.sum()
        mass = np.concatenate([[0.0], np.cumsum(dm)])
        logm = np.concatenate([[0.0], np.cumsum(dm * np.log(r))])
        grid = np.concatenate([[0.0], r])
        return grid, mass, logm

    def mass_within(self, rho: np.ndarray) -> np.ndarray:
        grid, mass, _ = self._mass_table
        return np.interp(np.asarray(rho, dtype=float), grid, mass, right=1.0)

    def log_average(self, a: np.ndarray) -> np.ndarray:
        """Integral of ln|a - w| chi(w) dw, by Newton's theorem for radial chi"""
        rho = np.abs(np.asarray(a, dtype=complex))
        grid, mass, logm = self._mass_table
        inner = np.interp(rho, grid, mass, right=1.0)
        outer_log = logm[-1] - np.interp(rho, grid, logm, right=logm[-1])
        with np.errstate(divide='ignore'):
            head = np.where(inner > 0, inner * np.log(np.maximum(rho, 1e-300)), 0.0)
        return head + outer_log

    def second_moment(self) -> float:
        """Integral of |w|^2 chi(w) dw"""
        r, wr = QuadratureHelper.radial_rule(0.0, self.support, 16, self.support / 50)
        return float(np.sum(2.0 * np.pi * r ** 3 * self.radial(r) * wr) / self.total_mass())

    def nodes(self, order: int = 12, n_theta: int = 16) -> Tuple[np.ndarray, np.ndarray]:
        """Offsets and weights (summing to one) of a polar rule for chi"""
        w, area = QuadratureHelper.polar_nodes(0j, 0.0, self.support, n_theta, order,
                                               self.support / 3)
        weights = area * self(w)
        return w, weights / weights.sum()

    def to_dict(self) -> Dict[str, Any]:
        return {'radius': self.radius, 'profile': self.profile.value, 'R0': self.R0}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Mollifier':
        return cls(float(data['radius']), MollifierProfile(data.get('profile', 'SmoothBump')),
                   float(data.get('R0', 0.0)))


Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass
class LatticeSingularities:
    """Log singularities beta ln|z - lambda| at every point of offset + lattice"""
    lattice: Lattice
    offset: complex
    coefficient: float

    def within(self, center: complex, radius: float) -> List[Tuple[complex, float]]:
        pts = self.offset + self.lattice.points_within(radius, center - self.offset)
        return [(complex(p), self.coefficient) for p in pts]

    def scaled(self, factor: float) -> 'LatticeSingularities':
        return LatticeSingularities(self.lattice, self.offset, factor * self.coefficient)


@dataclass
class ScalarPotential:
    """An evaluable solution of Laplace(Psi) = mu with its logarithmic singularities"""
    evaluator: Evaluator
    singularities: List[Tuple[complex, float]] = field(default_factory=list)
    tol: float = 1e-8
    description: str = ''
    r0: float = np.inf
    gradient_dz: Optional[Evaluator] = None
    laplacian: Optional[Evaluator] = None
    quadratic_growth: Optional[float] = None  # certified gamma in Psi >= gamma|z|^2 - C, if known
    lattice_singularities: List[LatticeSingularities] = field(default_factory=list)

    def __call__(self, z: Any) -> Any:
        scalar = np.isscalar(z) or hasattr(z, 'z') or isinstance(z, tuple)
        arr = np.atleast_1d(ValidationHelper.as_complex(z) if scalar else np.asarray(z, dtype=complex))
        values = np.asarray(self.evaluator(arr), dtype=float)
        return float(values[0]) if scalar else values

    def singularities_within(self, center: complex, radius: float) -> List[Tuple[complex, float]]:
        """Finite and lattice singularities with |lambda - center| <= radius, merged by location"""
        found: Dict[complex, float] = {}
        for lam, beta in self.singularities:
            if abs(lam - center) <= radius:
                found[complex(lam)] = found.get(complex(lam), 0.0) + beta
        for family in self.lattice_singularities:
            for lam, beta in family.within(center, radius):
                key = complex(round(lam.real, 12), round(lam.imag, 12))
                found[key] = found.get(key, 0.0) + beta
        return [(lam, beta) for lam, beta in found.items() if beta != 0.0]

    @property
    def has_singularities(self) -> bool:
        return bool(self.singularities or self.lattice_singularities)

    def singular_part(self, z: np.ndarray, radius: float = np.inf) -> np.ndarray:
        """Sum of beta ln|z - lambda| over the finite singularities within radius of z"""
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape)
        for lam, beta in self.singularities:
            d = np.abs(z - lam)
            out += np.where(d < radius, beta * np.log(np.maximum(d, 1e-300)), 0.0)
        return out

    def _combine(self, other: 'ScalarPotential', sign: float, description: str) -> 'ScalarPotential':
        def opt(a, b):
            if a is None or b is None:
                return None
            return lambda z: a(z) + sign * b(z)

        growth = None
        if self.quadratic_growth is not None and other.quadratic_growth is not None:
            growth = self.quadratic_growth + sign * other.quadratic_growth
        return ScalarPotential(
            evaluator=lambda z: self.evaluator(z) + sign * other.evaluator(z),
            singularities=list(self.singularities) + [(lam, sign * b) for lam, b in other.singularities],
            tol=self.tol + other.tol,
            description=description,
            r0=min(self.r0, other.r0),
            gradient_dz=opt(self.gradient_dz, other.gradient_dz),
            laplacian=opt(self.laplacian, other.laplacian),
            quadratic_growth=growth,
            lattice_singularities=list(self.lattice_singularities)
            + [s.scaled(sign) for s in other.lattice_singularities],
        )

    def __add__(self, other: 'ScalarPotential') -> 'ScalarPotential':
        return self._combine(other, 1.0, f"({self.description} + {other.description})")

    def __sub__(self, other: 'ScalarPotential') -> 'ScalarPotential':
        return self._combine(other, -1.0, f"({self.description} - {other.description})")

    def scaled(self, factor: float) -> 'ScalarPotential':
        return ScalarPotential(
            evaluator=lambda z: factor * self.evaluator(z),
            singularities=[(lam, factor * b) for lam, b in self.singularities],
            tol=abs(factor) * self.tol,
            description=f"{factor:g}*{self.description}",
            r0=self.r0,
            gradient_dz=None if self.gradient_dz is None else (lambda z: factor * self.gradient_dz(z)),
            laplacian=None if self.laplacian is None else (lambda z: factor * self.laplacian(z)),
            quadratic_growth=None if self.quadratic_growth is None else factor * self.quadratic_growth,
            lattice_singularities=[s.scaled(factor) for s in self.lattice_singularities],
        )

    def plus_constant(self, c: float) -> 'ScalarPotential':
        return replace(self, evaluator=lambda z: self.evaluator(z) + c,
                       description=f"{self.description}+{c:g}")

    @classmethod
    def zero(cls) -> 'ScalarPotential':
        return cls(lambda z: np.zeros(np.shape(z)), [], 0.0, 'zero',
                   gradient_dz=lambda z: np.zeros(np.shape(z), dtype=complex),
                   laplacian=lambda z: np.zeros(np.shape(z)), quadratic_growth=0.0)

    @classmethod
    def constant_field(cls, B: float) -> 'ScalarPotential':
        """Psi = B|z|^2/4, so Laplace(Psi) = B"""
        return cls(lambda z: 0.25 * B * np.abs(z) ** 2, [], 0.0, f"constant B={B:g}",
                   gradient_dz=lambda z: 0.25 * B * np.conj(z),
                   laplacian=lambda z: np.full(np.shape(z), float(B)),
                   quadratic_growth=0.25 * B)


@dataclass
class PeriodicMeasure:
    """A measure periodic with respect to its own lattice, described on one cell"""
    lattice: Lattice
    samples: Optional[np.ndarray] = None  # density at cell midpoints, lattice coordinates
    atoms: List[Tuple[complex, float]] = field(default_factory=list)  # (position in cell, mass)

    def nodes(self) -> Tuple[np.ndarray, np.ndarray]:
        """Positions and masses of the cell discretisation"""
        pos, mass = [], []
        if self.samples is not None:
            samples = np.asarray(self.samples, dtype=float)
            n1, n2 = samples.shape
            s1 = (np.arange(n1) + 0.5) / n1 - 0.5
            s2 = (np.arange(n2) + 0.5) / n2 - 0.5
            w = s1[:, None] * self.lattice.omega1 + s2[None, :] * self.lattice.omega2
            pos.append(w.ravel())
            mass.append(samples.ravel() * self.lattice.cell_area / (n1 * n2))
        if self.atoms:
            pos.append(np.array([a[0] for a in self.atoms], dtype=complex))
            mass.append(np.array([a[1] for a in self.atoms], dtype=float))
        if not pos:
            return np.zeros(0, dtype=complex), np.zeros(0)
        return np.concatenate(pos), np.concatenate(mass)

    @property
    def cell_flux(self) -> float:
        return float(self.nodes()[1].sum())

    @property
    def flux_density(self) -> float:
        """Phi / |cell|"""
        return self.cell_flux / self.lattice.cell_area
