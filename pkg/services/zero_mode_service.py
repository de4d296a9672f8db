import logging
import threading
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.polynomial import polynomial as P
from scipy import linalg

from config import Config
from models.errors import PreconditionError, SingularityError
from models.field import FieldConfig, Gauge, Spin
from models.modes import (BothSpinCensus, CensusEntry, ModeCensus, NormCertificate, WeightedRule,
                          ZeroModeCandidate)
from models.potential import QuadratureSpec, ScalarPotential
from services.field_service import FieldService
from services.potential_service import PotentialService
from utils.helpers import PerformanceHelper, QuadratureHelper, ValidationHelper

logger = logging.getLogger(__name__)

MIN_ANNULI = 5
DIVISION_TOL = 1e-10
INTENSITY_WINDOW = 0.05


class ZeroModeService:
    """Service layer for zero modes exp(-/+ Psi) times polynomials and their weighted norms"""

    def __init__(self, quad: Optional[QuadratureSpec] = None, threads: Optional[int] = None):
        self.quad = quad or QuadratureSpec(tol=Config.TOL)
        self.threads = threads or Config.THREADS
        self._rules: Dict[tuple, Tuple[ScalarPotential, WeightedRule]] = {}
        self._lock = threading.Lock()

    # quadrature

    @staticmethod
    def annulus_edges(Rmax: float) -> np.ndarray:
        """0, 1, then radii growing by sqrt(2) up to Rmax"""
        edges = [0.0, 1.0]
        while edges[-1] * np.sqrt(2.0) < Rmax * (1 - 1e-12):
            edges.append(edges[-1] * np.sqrt(2.0))
        edges.append(Rmax)
        return np.array(edges)

    @staticmethod
    def _weight_sign(spin: Spin) -> float:
        return 1.0 if spin == Spin.DOWN else -1.0

    def weighted_rule(self, potential: ScalarPotential, spin: Spin, Rmax: float,
                      quad: Optional[QuadratureSpec] = None) -> WeightedRule:
        """Nodes on D(0, Rmax) with log weights -2 s Psi; Gauss-Jacobi disks around singularities"""
        quad = quad or self.quad
        key = (id(potential), spin, float(Rmax), quad)
        with self._lock:
            cached = self._rules.get(key)
        if cached is not None and cached[0] is potential:
            return cached[1]

        s = self._weight_sign(spin)
        edges = self.annulus_edges(Rmax)
        if edges.size - 1 < MIN_ANNULI:
            raise PreconditionError(f"Rmax={Rmax:g} samples fewer than {MIN_ANNULI} annuli")
        singular = potential.singularities_within(0j, Rmax)
        for lam, beta in singular:
            if (s > 0 and beta >= 1.0) or (s < 0 and beta <= -1.0):
                raise PreconditionError("gauge-normalize first")
        r0 = potential.r0
        if not np.isfinite(r0) and potential.lattice_singularities:
            r0 = min(f.lattice.min_separation() for f in potential.lattice_singularities)
        delta = min(0.25 * r0, 0.25) if np.isfinite(r0) else 0.25
        h = min(0.5, delta)

        nodes, weights = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            n_theta = max(quad.n_theta, int(np.ceil(2.0 * np.pi * hi / h / 4.0)) * 4)
            pts, area = QuadratureHelper.polar_nodes(0j, lo, hi, n_theta, quad.order, h)
            for lam, _ in singular:
                if lo - delta <= abs(lam) <= hi + delta:
                    area = area * (1.0 - QuadratureHelper.smooth_cutoff(np.abs(pts - lam) / delta))
            keep = area > 0
            nodes.append(pts[keep])
            weights.append(area[keep])
        for lam, beta in singular:
            k = min(int(np.searchsorted(edges, abs(lam), side='right')) - 1, edges.size - 2)
            lp, la = QuadratureHelper.singular_disk_nodes(lam, delta, -2.0 * s * beta, 2 * quad.order, 16)
            la = la * QuadratureHelper.smooth_cutoff(np.abs(lp - lam) / delta)
            nodes[k] = np.concatenate([nodes[k], lp])
            weights[k] = np.concatenate([weights[k], la])

        log_weight = PerformanceHelper.ordered_map(
            lambda pts: -2.0 * s * np.asarray(potential(pts), dtype=float) if pts.size else np.zeros(0),
            nodes, self.threads)
        rule = WeightedRule(edges, nodes, weights, log_weight)
        logger.debug("weighted rule: %d annuli, %d nodes, %d singular disks",
                     edges.size - 1, sum(p.size for p in nodes), len(singular))
        with self._lock:
            self._rules[key] = (potential, rule)
        return rule

    @staticmethod
    def certify(edges: np.ndarray, contributions: np.ndarray) -> NormCertificate:
        """Converged when the last three annuli each contribute at most half the previous one
        and the geometric tail is at most 1% of the total"""
        partial = np.cumsum(contributions)
        tail = [(float(r), float(v)) for r, v in zip(edges[1:], partial)]
        total = float(partial[-1])
        if not np.isfinite(total):
            return NormCertificate(float('inf'), False, tail)
        last = contributions[-4:]
        halving = bool(np.all(last[1:] <= 0.5 * last[:-1]))
        ratio = float(last[-1] / last[-2]) if last[-2] > 0 else 0.0
        extrapolated = float(last[-1] * ratio / (1.0 - ratio)) if ratio < 1 else float('inf')
        converged = halving and extrapolated <= 0.01 * total
        return NormCertificate(total, converged, tail, ratio, extrapolated)

    def default_rmax(self, potential: ScalarPotential, spin: Spin, max_degree: int) -> float:
        """Radius where exp(-2 gamma r^2) r^(2 max_degree + 2) has dropped below e^-40"""
        growth = potential.quadratic_growth
        gamma = abs(growth) if growth else 0.0
        if gamma <= 0:
            return 16.0
        R = 8.0
        while 2.0 * gamma * R ** 2 < 40.0 + (2 * max_degree + 2) * np.log(R) and R < 128.0:
            R *= np.sqrt(2.0)
        return float(R)

    def mode_l2(self, candidate: ZeroModeCandidate, quad: Optional[QuadratureSpec] = None,
                Rmax: Optional[float] = None) -> NormCertificate:
        """Integral of |f|^2 exp(-2 s Psi) over D(0, Rmax) with a tail-decay certificate"""
        if Rmax is None:
            Rmax = self.default_rmax(candidate.potential, candidate.spin, candidate.degree)
        rule = self.weighted_rule(candidate.potential, candidate.spin, Rmax, quad)
        return self.certify(rule.edges, rule.contributions(candidate.factor))

    def mode_census(self, potential: ScalarPotential, spin: Spin, max_degree: int,
                    quad: Optional[QuadratureSpec] = None, Rmax: Optional[float] = None) -> ModeCensus:
        if max_degree < 0:
            raise PreconditionError("max_degree must be non-negative")
        if Rmax is None:
            Rmax = self.default_rmax(potential, spin, max_degree)
        self.weighted_rule(potential, spin, Rmax, quad)

        def one(k: int) -> CensusEntry:
            cert = self.mode_l2(ZeroModeCandidate.monomial(potential, k, spin), quad, Rmax)
            return CensusEntry(k, cert.converged, cert.value, cert.last_ratio)

        entries = PerformanceHelper.ordered_map(one, range(max_degree + 1), self.threads)
        census = ModeCensus(spin, entries, Rmax)
        logger.info("%s census of %s: %d of %d monomials converge (Rmax=%.3g)",
                    spin.value, potential.description, census.count, max_degree + 1, Rmax)
        return census

    def count_admissible(self, potential: ScalarPotential, spin: Spin, max_degree: int,
                         quad: Optional[QuadratureSpec] = None, Rmax: Optional[float] = None) -> int:
        return self.mode_census(potential, spin, max_degree, quad, Rmax).count

    # interpolating families

    def gram_matrix(self, modes: Sequence[ZeroModeCandidate], quad: Optional[QuadratureSpec] = None,
                    Rmax: Optional[float] = None) -> np.ndarray:
        """Weighted inner products of the mode factors on D(0, Rmax)"""
        if not modes:
            return np.zeros((0, 0), dtype=complex)
        first = modes[0]
        if any(m.potential is not first.potential or m.spin != first.spin for m in modes):
            raise PreconditionError("modes must share potential and spin")
        if Rmax is None:
            Rmax = self.default_rmax(first.potential, first.spin, max(m.degree for m in modes))
        rule = self.weighted_rule(first.potential, first.spin, Rmax, quad)
        basis = np.column_stack([m.factor(rule.all_nodes) for m in modes])
        return rule.gram(basis)

    def interpolating_modes(self, potential: ScalarPotential, points: Sequence, degree_cap: int,
                            quad: Optional[QuadratureSpec] = None, spin: Spin = Spin.DOWN,
                            Rmax: Optional[float] = None) -> List[ZeroModeCandidate]:
        """f_k vanishing at the later points z_l (l > k), f_k(z_k) = 1, of least weighted norm"""
        pts = np.array([ValidationHelper.as_complex(p) for p in points], dtype=complex)
        n = pts.size
        if n == 0:
            raise PreconditionError("at least one interpolation point is needed")
        if n == 1:
            return [ZeroModeCandidate.monomial(potential, 0, spin)]
        if degree_cap < n:
            raise PreconditionError("degree_cap must be at least the number of points")
        if np.min(np.abs(pts[:, None] - pts[None, :]) + np.eye(n)) < 1e-12:
            raise PreconditionError("interpolation points must be distinct")
        for p in pts:
            if potential.singularities_within(p, 1e-9):
                raise PreconditionError("interpolation point on a solenoid")

        if Rmax is None:
            Rmax = self.default_rmax(potential, spin, degree_cap)
        rule = self.weighted_rule(potential, spin, Rmax, quad)
        conjugated = spin == Spin.DOWN
        variable = (lambda z: np.conj(z)) if conjugated else (lambda z: z)
        powers = np.arange(degree_cap + 1)
        gram = rule.gram(variable(rule.all_nodes)[:, None] ** powers[None, :])
        scale = 1.0 / np.sqrt(np.real(np.diag(gram)))
        gram = gram * scale[:, None] * scale[None, :]
        try:
            factor = linalg.cho_factor(gram)
        except linalg.LinAlgError:
            raise PreconditionError("weighted Gram matrix is not positive definite; lower degree_cap")
        evaluation = variable(pts)[:, None] ** powers[None, :] * scale[None, :]

        modes = []
        for k in range(n):
            A = evaluation[k:]
            if np.linalg.matrix_rank(A) < A.shape[0]:
                raise PreconditionError("interpolation constraints are rank deficient")
            b = np.zeros(A.shape[0], dtype=complex)
            b[0] = 1.0
            ginv_ah = linalg.cho_solve(factor, A.conj().T)
            lam = linalg.solve(A @ ginv_ah, b)
            coef = scale * (ginv_ah @ lam)
            modes.append(ZeroModeCandidate(potential, coef, spin, conjugated))
        return modes

    @staticmethod
    def evaluation_matrix(modes: Sequence[ZeroModeCandidate], points: Sequence) -> np.ndarray:
        """E[k, l] = f_k(z_l)"""
        pts = np.array([ValidationHelper.as_complex(p) for p in points], dtype=complex)
        return np.array([m.factor(pts) for m in modes])

    # finite negative parts

    def deflate_finite_negative(self, potential_plus: ScalarPotential, negative_flux: float, zeros: Sequence,
                                modes: Sequence[ZeroModeCandidate],
                                potential_minus: Optional[ScalarPotential] = None) -> List[ZeroModeCandidate]:
        """Divide each mode factor by prod (w - z_k) and re-target it at Psi_plus - Psi_minus

        potential_minus is required whenever negative_flux is positive.
        """
        roots = np.array([ValidationHelper.as_complex(z) for z in zeros], dtype=complex)
        if roots.size == 0 and negative_flux == 0:
            return list(modes)
        if negative_flux > 0 and potential_minus is None:
            raise PreconditionError("negative flux needs potential_minus")
        if roots.size <= negative_flux / (2.0 * np.pi):
            raise PreconditionError("need more prescribed zeros than the negative flux / 2 pi")
        target = potential_plus if potential_minus is None else potential_plus - potential_minus
        out = []
        for mode in modes:
            divisor = P.polyfromroots(np.conj(roots) if mode.conjugated else roots)
            quotient, remainder = P.polydiv(mode.poly, divisor)
            reach = max(1.0, float(np.max(np.abs(roots)))) ** max(mode.degree, 1)
            leading = float(np.max(np.abs(mode.poly))) * reach
            if np.max(np.abs(remainder)) * reach > DIVISION_TOL * leading:
                raise PreconditionError("mode does not vanish at prescribed zeros")
            out.append(ZeroModeCandidate(target, np.atleast_1d(quotient), mode.spin, mode.conjugated))
        return out

    # both spins

    def both_spin_census(self, field: FieldConfig, max_degree: int, quad: Optional[QuadratureSpec] = None,
                         Rmax: Optional[float] = None, theta0: float = INTENSITY_WINDOW) -> BothSpinCensus:
        """Spin Down census on the field; spin Up on its flip (MaxGauge) or on the same potential (EVGauge)

        Intensities must stay inside (theta0, 1 - theta0) when read in MaxGauge.
        """
        field.require_gauge()
        if field.spin != Spin.DOWN:
            raise PreconditionError("both-spin census starts from the spin Down configuration")
        window = FieldService(quad or self.quad, self.threads).check_condition_cond4(field, theta0)
        if not window.holds:
            raise PreconditionError(f"intensity window violated: distance {window.extremal_value:.4g} "
                                    f"to the nearest integer is not above theta0={theta0:g}")
        potentials = PotentialService(quad or self.quad, self.threads)
        psi = potentials.field_potential(field)
        down = self.mode_census(psi, Spin.DOWN, max_degree, quad, Rmax)
        if field.gauge == Gauge.MAX:
            flipped = FieldService(quad or self.quad, self.threads).spin_flip(field)
            up = self.mode_census(potentials.field_potential(flipped), Spin.UP, max_degree, quad, Rmax)
        else:
            # entire-function ansatz under exp(+2 Psi)
            up = self.mode_census(psi, Spin.UP, max_degree, quad, Rmax or down.Rmax)
        return BothSpinCensus(field.gauge, down, up)

    # exports

    @staticmethod
    def amplitude_grid(mode: ZeroModeCandidate, half_width: float, n: int) -> pd.DataFrame:
        """|psi| on an n x n grid over [-half_width, half_width]^2"""
        axis = np.linspace(-half_width, half_width, n)
        z = (axis[:, None] + 1j * axis[None, :]).ravel()
        try:
            psi = np.asarray(mode.potential(z), dtype=float)
        except SingularityError:
            psi = np.array([ZeroModeService._safe_value(mode.potential, p) for p in z])
        with np.errstate(divide='ignore', over='ignore', invalid='ignore'):
            log_amp = np.log(np.abs(mode.factor(z))) - mode.weight_sign * psi
        return pd.DataFrame({'x': z.real, 'y': z.imag, 'abs_psi': np.exp(log_amp)})

    @staticmethod
    def _safe_value(potential: ScalarPotential, z: complex) -> float:
        try:
            return potential(z)
        except SingularityError:
            return float('nan')
