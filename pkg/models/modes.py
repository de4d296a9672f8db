from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from numpy.polynomial import polynomial as P

from models.field import Gauge, Spin
from models.potential import ScalarPotential


@dataclass
class ZeroModeCandidate:
    """psi = exp(-Psi) p(conj z) for spin Down, exp(+Psi) p(z) for spin Up"""
    potential: ScalarPotential
    poly: np.ndarray
    spin: Spin = Spin.DOWN
    conjugated: bool = True

    def __post_init__(self):
        self.poly = np.atleast_1d(np.asarray(self.poly, dtype=complex))
        if self.conjugated != (self.spin == Spin.DOWN):
            raise ValueError("spin Down modes use anti-analytic factors, spin Up analytic ones")

    @classmethod
    def monomial(cls, potential: ScalarPotential, degree: int, spin: Spin = Spin.DOWN) -> 'ZeroModeCandidate':
        poly = np.zeros(degree + 1, dtype=complex)
        poly[-1] = 1.0
        return cls(potential, poly, spin, spin == Spin.DOWN)

    @property
    def weight_sign(self) -> float:
        """s in the weight exp(-2 s Psi)"""
        return 1.0 if self.spin == Spin.DOWN else -1.0

    @property
    def degree(self) -> int:
        nonzero = np.nonzero(self.poly)[0]
        return int(nonzero[-1]) if nonzero.size else 0

    def variable(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        return np.conj(z) if self.conjugated else z

    def factor(self, z: np.ndarray) -> np.ndarray:
        """The polynomial part evaluated at z (through conj z when conjugated)"""
        return P.polyval(self.variable(z), self.poly)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        return self.factor(z) * np.exp(-self.weight_sign * np.asarray(self.potential(z), dtype=float))

    def with_poly(self, poly: np.ndarray, potential: Optional[ScalarPotential] = None) -> 'ZeroModeCandidate':
        return ZeroModeCandidate(self.potential if potential is None else potential, poly, self.spin,
                                 self.conjugated)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'potential': self.potential.description,
            'poly': [[c.real, c.imag] for c in self.poly],
            'spin': self.spin.value,
            'conjugated': self.conjugated,
        }


@dataclass
class NormCertificate:
    """Squared weighted norm over dyadic annuli with the evidence for its convergence"""
    value: float
    converged: bool
    annulus_tail: List[Tuple[float, float]] = field(default_factory=list)  # (outer radius, partial integral)
    last_ratio: float = float('nan')
    tail_estimate: float = float('inf')

    def to_dict(self) -> Dict[str, Any]:
        return {
            'value': self.value,
            'converged': self.converged,
            'annulus_tail': [list(row) for row in self.annulus_tail],
            'last_ratio': self.last_ratio,
            'tail_estimate': self.tail_estimate,
        }


@dataclass
class WeightedRule:
    """Quadrature nodes on D(0, Rmax) with the log of the mode weight exp(-2 s Psi) at each node"""
    edges: np.ndarray
    nodes: List[np.ndarray]
    weights: List[np.ndarray]
    log_weight: List[np.ndarray]

    def contributions(self, values: np.ndarray) -> np.ndarray:
        """Per-annulus integral of |f|^2 times the weight, f given by values(nodes)"""
        out = []
        for pts, w, lw in zip(self.nodes, self.weights, self.log_weight):
            f = np.asarray(values(pts), dtype=complex)
            with np.errstate(divide='ignore', over='ignore', invalid='ignore'):
                integrand = np.exp(2.0 * np.log(np.abs(f)) + lw)
            out.append(float(np.sum(np.where(np.isfinite(integrand), integrand, np.inf) * w)) if pts.size else 0.0)
        return np.array(out)

    def gram(self, basis: np.ndarray) -> np.ndarray:
        """sum over nodes of conj(V_i) V_j times the weight, V the basis values per node"""
        gram = np.zeros((basis.shape[1], basis.shape[1]), dtype=complex)
        start = 0
        for pts, w, lw in zip(self.nodes, self.weights, self.log_weight):
            rows = basis[start:start + pts.size]
            start += pts.size
            scale = w * np.exp(lw)
            gram += rows.conj().T @ (rows * scale[:, None])
        return gram

    @property
    def all_nodes(self) -> np.ndarray:
        return np.concatenate(self.nodes) if self.nodes else np.zeros(0, dtype=complex)


@dataclass
class CensusEntry:
    degree: int
    converged: bool
    norm: float
    tail_ratio: float

    def to_dict(self) -> Dict[str, Any]:
        return {'degree': self.degree, 'converged': self.converged, 'norm': self.norm,
                'tail_ratio': self.tail_ratio}


@dataclass
class ModeCensus:
    """Per-degree convergence of monomial modes for one spin"""
    spin: Spin
    entries: List[CensusEntry] = field(default_factory=list)
    Rmax: float = 0.0

    @property
    def count(self) -> int:
        return sum(1 for e in self.entries if e.converged)

    def to_dict(self) -> Dict[str, Any]:
        return {'spin': self.spin.value, 'count': self.count, 'Rmax': self.Rmax,
                'entries': [e.to_dict() for e in self.entries]}


@dataclass
class BothSpinCensus:
    gauge: Gauge
    down: ModeCensus
    up: ModeCensus

    @property
    def down_count(self) -> int:
        return self.down.count

    @property
    def up_count(self) -> int:
        return self.up.count

    def to_dict(self) -> Dict[str, Any]:
        return {'gauge': self.gauge.value, 'down_count': self.down_count, 'up_count': self.up_count,
                'down': self.down.to_dict(), 'up': self.up.to_dict()}
