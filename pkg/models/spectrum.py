from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.interpolate import BSpline

from models.field import Spin
from utils.helpers import ValidationHelper


@dataclass
class SpectralProblem:
    """Generalized problem stiffness u = theta mass u for one spin on a truncated disk"""
    stiffness: sparse.csr_matrix
    mass: np.ndarray  # lumped, one entry per interior node
    nodes: Optional[np.ndarray] = None  # interior node positions
    spin: Spin = Spin.DOWN
    domain_radius: float = 0.0
    h: float = 0.0
    log_weight_range: float = 0.0

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        if self.stiffness.shape != (self.mass.size, self.mass.size):
            raise ValueError("stiffness and mass differ in dimension")
        if np.any(self.mass <= 0):
            raise ValueError("mass entries must be positive")

    @property
    def dimension(self) -> int:
        return self.mass.size

    @classmethod
    def diagonal(cls, stiffness_diagonal, mass_diagonal=None) -> 'SpectralProblem':
        d = np.asarray(stiffness_diagonal, dtype=float)
        m = np.ones(d.size) if mass_diagonal is None else np.asarray(mass_diagonal, dtype=float)
        return cls(sparse.diags(d).tocsr(), m)

    def rayleigh(self, u: np.ndarray) -> float:
        u = np.asarray(u, dtype=complex)
        return float(np.real(np.vdot(u, self.stiffness @ u)) / np.real(np.vdot(u, self.mass * u)))

    def to_dict(self) -> Dict[str, Any]:
        return {'spin': self.spin.value, 'domain_radius': self.domain_radius, 'h': self.h,
                'dimension': self.dimension, 'log_weight_range': self.log_weight_range}


@dataclass
class SpectralResult:
    eigenvalues: np.ndarray
    zero_tol: float
    zero_count: int
    gap: Optional[float] = None
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bulk_fraction: np.ndarray = field(default_factory=lambda: np.zeros(0))
    h: float = 0.0
    domain_radius: float = 0.0
    h_sequence: List[Tuple[float, List[float]]] = field(default_factory=list)
    vectors: Optional[np.ndarray] = None  # columns are mass-normalized eigenvectors; not serialized

    def to_dict(self) -> Dict[str, Any]:
        return {
            'eigenvalues': self.eigenvalues,
            'zero_tol': self.zero_tol,
            'zero_count': self.zero_count,
            'gap': self.gap,
            'residuals': self.residuals,
            'h': self.h,
            'domain_radius': self.domain_radius,
            'h_sequence': [[h, list(v)] for h, v in self.h_sequence],
        }


class ProbeFunction(ABC):
    """Compactly supported (or negligibly small outside support_radius) smooth test function"""

    center: complex
    support_radius: float

    @abstractmethod
    def value(self, z: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def dz(self, z: np.ndarray) -> np.ndarray:
        """d/dz = (d/dx - i d/dy) / 2"""
        pass

    @abstractmethod
    def dzbar(self, z: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        pass


@dataclass
class GaussianBump(ProbeFunction):
    """q(z - c) exp(-|z - c|^2 / (2 sigma^2)), cut off at 8 sigma"""
    center: complex = 0j
    sigma: float = 1.0
    poly: Tuple[complex, ...] = (1.0,)

    def __post_init__(self):
        self.center = ValidationHelper.as_complex(self.center)
        ValidationHelper.require_positive('sigma', self.sigma)

    @property
    def support_radius(self) -> float:
        return 8.0 * self.sigma

    def _parts(self, z):
        d = np.asarray(z, dtype=complex) - self.center
        g = np.exp(-np.abs(d) ** 2 / (2.0 * self.sigma ** 2))
        q = np.polynomial.polynomial.polyval(d, np.asarray(self.poly, dtype=complex))
        return d, g, q

    def value(self, z):
        _, g, q = self._parts(z)
        return q * g

    def dz(self, z):
        d, g, q = self._parts(z)
        dq = np.polynomial.polynomial.polyval(d, np.polynomial.polynomial.polyder(np.asarray(self.poly, dtype=complex)))
        return (dq - q * np.conj(d) / (2.0 * self.sigma ** 2)) * g

    def dzbar(self, z):
        d, g, q = self._parts(z)
        return -q * d / (2.0 * self.sigma ** 2) * g

    def to_dict(self):
        return {'kind': 'GaussianBump', 'center': [self.center.real, self.center.imag], 'sigma': self.sigma,
                'poly': [[complex(c).real, complex(c).imag] for c in self.poly]}


_CUBIC = BSpline.basis_element(np.array([-2.0, -1.0, 0.0, 1.0, 2.0]), extrapolate=False)
_CUBIC_D = _CUBIC.derivative()

SPLINE_FACTORS = ('one', 'z', 'zbar', 'z2')


@dataclass
class SplineBump(ProbeFunction):
    """Tensor cubic B-spline bump of scale s around c times 1, (z-c), conj(z-c) or (z-c)^2"""
    center: complex = 0j
    scale: float = 1.0
    factor: str = 'one'

    def __post_init__(self):
        self.center = ValidationHelper.as_complex(self.center)
        ValidationHelper.require_positive('scale', self.scale)
        if self.factor not in SPLINE_FACTORS:
            raise ValueError(f"unknown factor {self.factor!r}")

    @property
    def support_radius(self) -> float:
        return 2.0 * np.sqrt(2.0) * self.scale

    def _bump(self, z):
        d = np.asarray(z, dtype=complex) - self.center
        x, y = d.real / self.scale, d.imag / self.scale
        bx, by = np.nan_to_num(_CUBIC(x)), np.nan_to_num(_CUBIC(y))
        dbx, dby = np.nan_to_num(_CUBIC_D(x)) / self.scale, np.nan_to_num(_CUBIC_D(y)) / self.scale
        phi = bx * by
        phi_dz = 0.5 * (dbx * by - 1j * bx * dby)
        return d, phi, phi_dz, np.conj(phi_dz)

    def _factor(self, d):
        if self.factor == 'one':
            return np.ones_like(d), np.zeros_like(d), np.zeros_like(d)
        if self.factor == 'z':
            return d, np.ones_like(d), np.zeros_like(d)
        if self.factor == 'zbar':
            return np.conj(d), np.zeros_like(d), np.ones_like(d)
        return d ** 2, 2.0 * d, np.zeros_like(d)

    def value(self, z):
        d, phi, _, _ = self._bump(z)
        return self._factor(d)[0] * phi

    def dz(self, z):
        d, phi, phi_dz, _ = self._bump(z)
        f, f_dz, _ = self._factor(d)
        return f_dz * phi + f * phi_dz

    def dzbar(self, z):
        d, phi, _, phi_dzbar = self._bump(z)
        f, _, f_dzbar = self._factor(d)
        return f_dzbar * phi + f * phi_dzbar

    def to_dict(self):
        return {'kind': 'SplineBump', 'center': [self.center.real, self.center.imag], 'scale': self.scale,
                'factor': self.factor}


def spline_family(center: complex, scales=(0.25, 0.5, 1.0)) -> List[SplineBump]:
    """The fixed twelve-member probe family: three scales times four polynomial factors"""
    return [SplineBump(center, s, f) for s in scales for f in SPLINE_FACTORS]
