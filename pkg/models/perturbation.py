from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from models.errors import PreconditionError, ScenarioError
from models.field import BackgroundFactory, ContinuousBackground, FieldConfig
from models.region import SquareLocator
from utils.helpers import ValidationHelper


@dataclass
class Measure:
    """Signed measure: weighted atoms plus continuous backgrounds"""
    atoms: List[Tuple[complex, float]] = field(default_factory=list)  # (location, mass)
    continuous: List[ContinuousBackground] = field(default_factory=list)

    @classmethod
    def from_field(cls, fld: FieldConfig) -> 'Measure':
        """Solenoid (lambda, alpha) becomes an atom of mass 2 pi alpha"""
        if fld.discrete.is_lattice:
            raise PreconditionError("a solenoid lattice is not a finite set of atoms")
        atoms = [(complex(z), 2.0 * np.pi * float(a))
                 for z, a in zip(fld.discrete.locations, fld.discrete.intensities)]
        return cls(atoms, list(fld.continuous))

    @property
    def atom_locations(self) -> np.ndarray:
        return np.array([a[0] for a in self.atoms], dtype=complex)

    @property
    def atom_masses(self) -> np.ndarray:
        return np.array([a[1] for a in self.atoms], dtype=float)

    @property
    def is_bounded(self) -> bool:
        return all(bg.is_bounded for bg in self.continuous)

    def negated(self) -> 'Measure':
        return Measure([(z, -m) for z, m in self.atoms], [bg.negated() for bg in self.continuous])

    def to_dict(self) -> Dict[str, Any]:
        return {'atoms': [[z.real, z.imag, m] for z, m in self.atoms],
                'continuous': [bg.to_dict() for bg in self.continuous]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Measure':
        return cls([(complex(x, y), float(m)) for x, y, m in data.get('atoms', [])],
                   [BackgroundFactory.from_dict(bg) for bg in data.get('continuous', [])])


@dataclass(frozen=True)
class CoveringSquare:
    """One tile of the layered covering of the plane"""
    center: complex
    side: float
    layer: int

    def contains(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w)
        h = 0.5 * self.side
        return (np.abs(w.real - self.center.real) <= h) & (np.abs(w.imag - self.center.imag) <= h)

    @property
    def area(self) -> float:
        return self.side ** 2

    def to_dict(self) -> Dict[str, Any]:
        return {'center_x': self.center.real, 'center_y': self.center.imag,
                'side': self.side, 'layer': self.layer}


@dataclass
class RearrangementMap:
    """Plane self-map Phi transporting a measure, with |Phi(w) - w| <= a|w|^tau"""
    kind: str = 'Identity'
    a: float = 0.0
    tau: float = 0.0
    covering: List[CoveringSquare] = field(default_factory=list)
    theta1: float = 0.0
    theta2: float = 0.0
    pairs: List[Tuple[complex, complex]] = field(default_factory=list)

    KINDS = ('Identity', 'SquareToCenter', 'SectorRotate', 'Tabulated')

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ScenarioError(f"unknown rearrangement kind {self.kind!r}", 'rearrangement')
        if not 0 <= self.tau < 1:
            raise PreconditionError("displacement exponent tau must lie in [0, 1)")
        self._locator = None
        if self.kind == 'SquareToCenter' and self.covering:
            self._locator = SquareLocator([t.center for t in self.covering], [t.side for t in self.covering])
        if self.kind == 'Tabulated' and self.pairs:
            src = np.array([p[0] for p in self.pairs], dtype=complex)
            self._sources = src
            self._images = np.array([p[1] for p in self.pairs], dtype=complex)
            self._tree = cKDTree(np.column_stack([src.real, src.imag]))

    @classmethod
    def identity(cls) -> 'RearrangementMap':
        return cls('Identity')

    @classmethod
    def square_to_center(cls, covering: List[CoveringSquare], tau: float) -> 'RearrangementMap':
        # a tile of side d <= 4|z|^tau moves a point by at most d/sqrt(2)
        return cls('SquareToCenter', a=4.0 / np.sqrt(2.0) * 2.0 ** tau, tau=tau, covering=covering)

    @classmethod
    def sector_rotate(cls, theta1: float, theta2: float, a: float, tau: float) -> 'RearrangementMap':
        return cls('SectorRotate', a=a, tau=tau, theta1=theta1, theta2=theta2)

    @classmethod
    def tabulated(cls, pairs: List[Tuple[Any, Any]], a: float = 0.0, tau: float = 0.0) -> 'RearrangementMap':
        pairs = [(ValidationHelper.as_complex(s), ValidationHelper.as_complex(t)) for s, t in pairs]
        return cls('Tabulated', a=a, tau=tau, pairs=pairs)

    def __call__(self, w: np.ndarray) -> np.ndarray:
        return self.apply(w)

    def apply(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        if self.kind == 'Identity':
            return w.copy()
        if self.kind == 'SquareToCenter':
            flat = w.ravel()
            idx = self._locator.locate(flat)
            out = np.where(idx >= 0, self._locator.centers[np.maximum(idx, 0)], flat)
            return out.reshape(w.shape)
        if self.kind == 'SectorRotate':
            # points of the sector turn by min(opening, a|w|^(tau-1)) radians
            phase = np.mod(np.angle(w) - self.theta1, 2.0 * np.pi)
            inside = (phase > 0) & (phase < self.theta2 - self.theta1)
            r = np.abs(w)
            with np.errstate(divide='ignore'):
                turn = np.minimum(self.theta2 - self.theta1, self.a * np.maximum(r, 1e-300) ** (self.tau - 1.0))
            return np.where(inside, w * np.exp(1j * turn), w)
        # Tabulated: nearest source
        flat = w.ravel()
        _, idx = self._tree.query(np.column_stack([flat.real, flat.imag]))
        return self._images[idx].reshape(w.shape)

    def displacement_ok(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        return np.abs(self.apply(w) - w) <= self.a * np.abs(w) ** self.tau * (1 + 1e-9) + 1e-12

    def threshold_radius(self, sample: np.ndarray) -> float:
        """Smallest sampled radius beyond which the displacement bound holds"""
        sample = np.asarray(sample, dtype=complex)
        bad = ~self.displacement_ok(sample)
        return float(np.max(np.abs(sample[bad]))) if np.any(bad) else 0.0

    def to_dict(self) -> Dict[str, Any]:
        data = {'kind': self.kind, 'a': self.a, 'tau': self.tau}
        if self.kind == 'SquareToCenter':
            data['covering'] = [t.to_dict() for t in self.covering]
        elif self.kind == 'SectorRotate':
            data.update(theta1=self.theta1, theta2=self.theta2)
        elif self.kind == 'Tabulated':
            data['pairs'] = [[s.real, s.imag, t.real, t.imag] for s, t in self.pairs]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RearrangementMap':
        try:
            kind = data.get('kind', 'Identity')
            covering = [CoveringSquare(complex(t['center_x'], t['center_y']), float(t['side']), int(t['layer']))
                        for t in data.get('covering', [])]
            pairs = [(complex(a, b), complex(c, d)) for a, b, c, d in data.get('pairs', [])]
            return cls(kind, float(data.get('a', 0.0)), float(data.get('tau', 0.0)), covering,
                       float(data.get('theta1', 0.0)), float(data.get('theta2', 0.0)), pairs)
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError(f"malformed rearrangement ({e})", 'rearrangement')


@dataclass
class MeasureStats:
    """Tabulated omega(r) = |mu|(D(0, r)) and M(r) = integral of w^-2 over r1 <= |w| <= r"""
    radii: np.ndarray
    omega: np.ndarray
    M: np.ndarray
    r1: float = 1.0

    def to_dict(self) -> Dict[str, Any]:
        return {'radii': self.radii, 'omega': self.omega, 'M': self.M, 'r1': self.r1}

    def to_rows(self) -> List[Dict[str, float]]:
        return [{'r': float(r), 'omega': float(o), 'M_re': float(m.real), 'M_im': float(m.imag)}
                for r, o, m in zip(self.radii, self.omega, self.M)]


@dataclass
class ExampleField:
    """A worked example: unperturbed field, perturbation pieces and diagnostics"""
    name: str
    field: FieldConfig
    base: FieldConfig
    perturbation: Measure = field(default_factory=Measure)
    rearrangement: Optional[RearrangementMap] = None
    rearranged: Optional[Measure] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'field': self.field.to_dict(),
            'base': self.base.to_dict(),
            'perturbation': self.perturbation.to_dict(),
            'rearrangement': None if self.rearrangement is None else self.rearrangement.to_dict(),
            'diagnostics': self.diagnostics,
        }
