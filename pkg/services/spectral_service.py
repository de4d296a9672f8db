import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, sparse, special
from scipy.sparse import linalg as splinalg
from scipy.spatial import Delaunay, cKDTree

from config import Config
from models.errors import ConvergenceError, PreconditionError, SingularityError
from models.field import FieldConfig, Spin
from models.potential import QuadratureSpec, ScalarPotential
from models.spectrum import ProbeFunction, SpectralProblem, SpectralResult
from services.field_service import FieldService
from services.potential_service import PotentialService
from utils.helpers import QuadratureHelper, ValidationHelper

logger = logging.getLogger(__name__)

DENSE_LIMIT = 500
BULK_RADIUS = 0.7
BULK_FRACTION = 0.5
EXP_RANGE = 1400.0


class SpectralService:
    """Service layer for the discretized Pauli forms: P1 elements on a ring mesh of the disk"""

    def __init__(self, quad: Optional[QuadratureSpec] = None, threads: Optional[int] = None):
        self.quad = quad or QuadratureSpec(tol=Config.TOL)
        self.threads = threads or Config.THREADS

    # mesh

    @staticmethod
    def ring_mesh(R: float, h: float) -> Tuple[np.ndarray, np.ndarray, int]:
        """Nodes on concentric rings (6i nodes on ring i), Delaunay triangles, and the index
        where the boundary ring starts"""
        n = max(2, int(np.ceil(R / h)))
        rho = R / n
        pts = [np.zeros(1, dtype=complex)]
        for i in range(1, n + 1):
            count = 6 * i
            theta = (np.arange(count) + 0.5 * (i % 2)) * (2.0 * np.pi / count)
            pts.append(i * rho * np.exp(1j * theta))
        nodes = np.concatenate(pts)
        triangles = Delaunay(np.column_stack([nodes.real, nodes.imag])).simplices
        return nodes, triangles, nodes.size - 6 * n

    @staticmethod
    def _orient(nodes: np.ndarray, triangles: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        p = nodes[triangles]
        area = 0.5 * np.imag(np.conj(p[:, 1] - p[:, 0]) * (p[:, 2] - p[:, 0]))
        flip = area < 0
        triangles = triangles.copy()
        triangles[flip, 1], triangles[flip, 2] = triangles[flip, 2], triangles[flip, 1].copy()
        return triangles, np.abs(area)

    @staticmethod
    def _log_values(potential: ScalarPotential, pts: np.ndarray, scale: float) -> np.ndarray:
        try:
            return np.asarray(potential(pts), dtype=float)
        except SingularityError:
            out = np.empty(pts.shape)
            for i, p in enumerate(pts):
                try:
                    out[i] = potential(p)
                except SingularityError:
                    out[i] = potential(p + 1e-9 * scale)
            return out

    def _singular_average(self, potential: ScalarPotential, s: float, shift: float, corners: np.ndarray,
                          lam: complex, beta: float, area: float) -> float:
        """Average of exp(-2 s Psi - shift) over a triangle containing the singularity lam"""
        e = -2.0 * s * beta
        gamma = 1.0 + e
        x, wx = special.roots_jacobi(12, 0.0, gamma)
        r = 0.5 * (1.0 + x)
        wr = 0.5 ** (gamma + 1.0) * wx * r ** (-e)
        t, wt = QuadratureHelper.gauss(8)
        total = 0.0
        for a, b in ((corners[0], corners[1]), (corners[1], corners[2]), (corners[2], corners[0])):
            sub = 0.5 * abs(np.imag(np.conj(a - lam) * (b - lam)))
            if sub <= 1e-14 * area:
                continue
            edge = (1.0 - t) * a + t * b
            pts = lam + r[:, None] * (edge - lam)[None, :]
            values = np.exp(-2.0 * s * self._log_values(potential, pts.ravel(), abs(b - a)) - shift)
            total += 2.0 * sub * float(np.sum(values.reshape(pts.shape) * wr[:, None] * wt[None, :]))
        return total / area

    # assembly

    def assemble(self, potential: ScalarPotential, spin: Spin, domain_radius: float, h: float) -> SpectralProblem:
        """Stiffness 4 int |D u|^2 w and lumped mass int |u|^2 w with w = exp(-2 s Psi);
        D is d/dz for spin Down and d/dzbar for spin Up, Dirichlet on the outer circle"""
        R = ValidationHelper.require_positive('domain_radius', domain_radius)
        ValidationHelper.require_positive('h', h)
        if h > R / 64.0 * (1 + 1e-12):
            raise PreconditionError("mesh width must be at most domain_radius / 64")
        r0 = potential.r0
        if not np.isfinite(r0) and potential.lattice_singularities:
            r0 = min(f.lattice.min_separation() for f in potential.lattice_singularities)
        singular = potential.singularities_within(0j, R)
        if singular and h > r0 / 8.0 * (1 + 1e-12):
            raise PreconditionError("mesh width must be at most r0 / 8 near solenoids")
        s = 1.0 if spin == Spin.DOWN else -1.0

        nodes, triangles, boundary_start = self.ring_mesh(R, h)
        triangles, area = self._orient(nodes, triangles)
        p = nodes[triangles]
        mids = 0.5 * (p + np.roll(p, -1, axis=1))
        log_w = -2.0 * s * self._log_values(potential, mids.ravel(), h).reshape(mids.shape)
        shift = float(np.max(log_w))
        span = shift - float(np.min(log_w))
        if span > EXP_RANGE:
            raise PreconditionError(f"weight exp(-2 s Psi) spans e^{span:.0f} on the domain; shrink domain_radius")
        weight = np.mean(np.exp(log_w - shift), axis=1)

        if singular:
            centroids = p.mean(axis=1)
            tree = cKDTree(np.column_stack([centroids.real, centroids.imag]))
            for lam, beta in singular:
                for t in tree.query_ball_point([lam.real, lam.imag], 2.0 * h):
                    a, b, c = p[t]
                    bary = [np.imag(np.conj(y - x) * (lam - x)) for x, y in ((a, b), (b, c), (c, a))]
                    if min(bary) >= -1e-12 * h * h:
                        weight[t] = self._singular_average(potential, s, shift, p[t], lam, beta, area[t])

        # P1 gradients: grad phi_i = i (p_k - p_j) / (2A) for the counter-clockwise corners (i, j, k)
        grad = 1j * (np.roll(p, -2, axis=1) - np.roll(p, -1, axis=1)) / (2.0 * area[:, None])
        D = 0.5 * (np.conj(grad) if spin == Spin.DOWN else grad)
        local = 4.0 * (area * weight)[:, None, None] * np.conj(D)[:, :, None] * D[:, None, :]
        rows = np.repeat(triangles, 3, axis=1).ravel()
        cols = np.tile(triangles, (1, 3)).ravel()
        stiffness = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(nodes.size, nodes.size)).tocsr()
        mass = np.zeros(nodes.size)
        np.add.at(mass, triangles.ravel(), np.repeat(area * weight / 3.0, 3))

        interior = np.arange(boundary_start)
        stiffness = stiffness[interior][:, interior]
        logger.info("assembled %s problem: R=%g h=%g, %d interior nodes", spin.value, R, h, interior.size)
        return SpectralProblem(stiffness, mass[interior], nodes[interior], spin, R, h, span)

    def field_problem(self, field: FieldConfig, spin: Spin, domain_radius: float, h: float) -> SpectralProblem:
        """Spin Down uses the field itself; spin Up is assembled from its spin flip"""
        potentials = PotentialService(self.quad, self.threads)
        if spin == Spin.UP:
            field = FieldService(self.quad, self.threads).spin_flip(field)
        return self.assemble(potentials.field_potential(field), spin, domain_radius, h)

    @staticmethod
    def interpolate(problem: SpectralProblem, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        return np.asarray(fn(problem.nodes), dtype=complex)

    # eigenvalues

    def lowest_eigs(self, prob: SpectralProblem, k: int, zero_tol: Optional[float] = None) -> SpectralResult:
        """k smallest eigenvalues of stiffness u = theta mass u, with residuals and bulk fractions"""
        if k < 1:
            raise PreconditionError("k must be positive")
        zero_tol = Config.ZERO_TOL if zero_tol is None else zero_tol
        n = prob.dimension
        k = min(k, n)
        scale = 1.0 / np.sqrt(prob.mass)
        A = sparse.diags(scale) @ prob.stiffness @ sparse.diags(scale)

        if n <= DENSE_LIMIT or k >= n - 1:
            theta, v = linalg.eigh(A.toarray(), subset_by_index=[0, k - 1])
        else:
            try:
                theta, v = splinalg.eigsh(A.tocsc(), k=k, sigma=-1e-2, which='LM', tol=0.0,
                                          maxiter=Config.MAX_ITER * n)
            except splinalg.ArpackNoConvergence as exc:
                raise ConvergenceError(f"eigsh found {len(exc.eigenvalues)} of {k} eigenvalues") from exc
            order = np.argsort(theta)
            theta, v = theta[order], v[:, order]

        residuals = np.linalg.norm(A @ v - v * theta[None, :], axis=0) / np.linalg.norm(v, axis=0)
        for t, res in zip(theta, residuals):
            if res > 1e-8 * max(1.0, abs(t)):
                raise ConvergenceError(f"eigenpair near {t:.6g} not resolved", res)

        vectors = v * scale[:, None]
        vectors /= np.sqrt(np.sum(prob.mass[:, None] * np.abs(vectors) ** 2, axis=0))[None, :]
        bulk = self._bulk_fraction(prob, vectors)
        zero_count = int(np.sum(theta < zero_tol))
        candidates = theta[(theta >= zero_tol) & (bulk >= BULK_FRACTION)]
        gap = float(candidates[0]) if candidates.size else None
        if gap is None and zero_count < k:
            logger.warning("no bulk eigenvector above zero_tol among the %d computed; raise k", k)
        logger.info("lowest eigenvalues %s (zero_count=%d gap=%s)", np.round(theta[:6], 6), zero_count, gap)
        return SpectralResult(theta, zero_tol, zero_count, gap, residuals, bulk, prob.h, prob.domain_radius,
                              vectors=vectors)

    @staticmethod
    def _bulk_fraction(prob: SpectralProblem, vectors: np.ndarray) -> np.ndarray:
        """Share of each eigenvector's weighted mass inside BULK_RADIUS times the domain radius"""
        if prob.nodes is None or prob.domain_radius <= 0:
            return np.ones(vectors.shape[1])
        inside = np.abs(prob.nodes) <= BULK_RADIUS * prob.domain_radius
        density = prob.mass[:, None] * np.abs(vectors) ** 2
        return density[inside].sum(axis=0) / density.sum(axis=0)

    def mesh_study(self, potential: ScalarPotential, spin: Spin, domain_radius: float, h: float, k: int,
                   levels: int = 2, zero_tol: Optional[float] = None) -> Tuple[SpectralProblem, SpectralResult]:
        """Solve at h, h/2, ... and return the finest problem and result, with the whole refinement record"""
        record: List[Tuple[float, List[float]]] = []
        problem, result = None, None
        for level in range(levels):
            h_level = h / 2 ** level
            problem = self.assemble(potential, spin, domain_radius, h_level)
            current = self.lowest_eigs(problem, k, zero_tol)
            record.append((h_level, [float(t) for t in current.eigenvalues]))
            if result is not None:
                if current.zero_count < result.zero_count:
                    logger.warning("zero_count dropped from %d to %d at h=%g",
                                   result.zero_count, current.zero_count, h_level)
                if result.gap and current.gap and abs(current.gap - result.gap) > 0.1 * result.gap:
                    logger.warning("gap moved from %.4g to %.4g at h=%g; resolution not yet accepted",
                                   result.gap, current.gap, h_level)
            result = current
        result.h_sequence = record
        return problem, result

    @staticmethod
    def richardson(h_sequence: Sequence[Tuple[float, Sequence[float]]], index: int = 0) -> float:
        """Second-order extrapolation of one eigenvalue from its last two refinement levels"""
        if len(h_sequence) < 2:
            raise PreconditionError("extrapolation needs at least two mesh levels")
        (h1, v1), (h2, v2) = h_sequence[-2], h_sequence[-1]
        ratio = (h1 / h2) ** 2
        return float((ratio * v2[index] - v1[index]) / (ratio - 1.0))

    # quotients of explicit trial functions

    RHO_ZERO = 20.0 / 3.0  # Dirichlet quotient of (1 - r^2)^2 on the unit disk

    def rayleigh_bump(self, field: FieldConfig, hole_center, R: float) -> float:
        """Quotient p_-[psi] / |psi|^2 for the trial state built on u(z) = u0((z - c) / R) over a field-free
        disk D(c, R). With Psi = Re g harmonic there, psi = exp(-Psi) conj(exp(g)) u makes both
        weights cancel, so the quotient is the Dirichlet quotient of u, which scales as R^-2.

        The potential is never evaluated: the field enters only through the check that its flux on
        the hole vanishes, and everything outside D(c, R) leaves the quotient unchanged."""
        ValidationHelper.require_positive('R', R)
        c = ValidationHelper.as_complex(hole_center)
        fields = FieldService(self.quad, self.threads)
        for part in ('plus', 'minus'):
            flux = fields.local_flux(field, c, R, part)
            if abs(flux) > self.quad.tol * max(1.0, R * R):
                raise PreconditionError(f"field is not zero on the hole (|mu|({part}) = {flux:.3e})")
        r, w = QuadratureHelper.radial_rule(0.0, R, 16)
        t = (r / R) ** 2
        u = (1.0 - t) ** 2
        du = -4.0 * r / R ** 2 * (1.0 - t)
        quotient = float(np.sum(w * r * du ** 2) / np.sum(w * r * u ** 2))
        logger.debug("hole at %s R=%g: quotient %.12g", c, R, quotient)
        return quotient

    def commutation_check(self, potential: ScalarPotential, u: ProbeFunction,
                          quad: Optional[QuadratureSpec] = None) -> Tuple[float, float]:
        """(p_+[u] - p_-[u], 2 int Laplace(Psi) |u|^2) with p_- = 4 int |du + u dPsi|^2 and
        p_+ = 4 int |dbar u - u dbar Psi|^2"""
        quad = quad or self.quad
        radius = u.support_radius
        if potential.singularities_within(u.center, radius * (1 + 1e-9)):
            raise PreconditionError("probe support touches a solenoid; mollify the potential first")
        n_theta = max(64, 2 * quad.n_theta)
        pts, area = QuadratureHelper.polar_nodes(u.center, 0.0, radius, n_theta, quad.order, radius / 16.0)
        d_psi, lap = self._derivatives(potential, pts, radius)
        value = u.value(pts)
        minus = 4.0 * np.sum(area * np.abs(u.dz(pts) + value * d_psi) ** 2)
        plus = 4.0 * np.sum(area * np.abs(u.dzbar(pts) - value * np.conj(d_psi)) ** 2)
        rhs = 2.0 * np.sum(area * lap * np.abs(value) ** 2)
        return float(plus - minus), float(rhs)

    @staticmethod
    def _derivatives(potential: ScalarPotential, pts: np.ndarray, scale: float) -> Tuple[np.ndarray, np.ndarray]:
        """dPsi/dz and Laplace(Psi), analytic when the potential carries them, else by differences"""
        step = 1e-2 * scale
        if potential.gradient_dz is not None:
            d_psi = np.asarray(potential.gradient_dz(pts), dtype=complex)
        else:
            dx = (potential(pts + step) - potential(pts - step)) / (2.0 * step)
            dy = (potential(pts + 1j * step) - potential(pts - 1j * step)) / (2.0 * step)
            d_psi = 0.5 * (dx - 1j * dy)
        if potential.laplacian is not None:
            lap = np.asarray(potential.laplacian(pts), dtype=float)
        else:
            lap = (potential(pts + step) + potential(pts - step) + potential(pts + 1j * step)
                   + potential(pts - 1j * step) - 4.0 * potential(pts)) / step ** 2
        return d_psi, lap

    # output

    @staticmethod
    def eigenvector_grid(problem: SpectralProblem, result: SpectralResult, count: int = 3) -> pd.DataFrame:
        """Node positions with |u| of the first count eigenvectors, one column per eigenvector"""
        if result.vectors is None or problem.nodes is None:
            raise PreconditionError("eigenvectors are not available for this problem")
        frame = pd.DataFrame({'x': problem.nodes.real, 'y': problem.nodes.imag})
        for j in range(min(count, result.vectors.shape[1])):
            frame[f'abs_u{j}'] = np.abs(result.vectors[:, j])
        return frame
