import logging
import threading
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg, special

from config import Config
from models.errors import PreconditionError, SingularityError
from models.field import (ConstantBackground, ContinuousBackground, FieldConfig, PeriodicDensity,
                          ScaleBy, SolenoidSet)
from models.perturbation import Measure
from models.potential import (Lattice, LatticeSingularities, Mollifier, PeriodicMeasure,
                              QuadratureSpec, ScalarPotential)
from utils.helpers import PerformanceHelper, QuadratureHelper, ValidationHelper

logger = logging.getLogger(__name__)

Kernel = Callable[[complex, np.ndarray], np.ndarray]


def _as_points(z) -> Tuple[np.ndarray, bool]:
    """Complex array view of z and whether z was a single point"""
    scalar = np.isscalar(z) or hasattr(z, 'z') or isinstance(z, tuple)
    if scalar:
        return np.array([ValidationHelper.as_complex(z)]), True
    return np.atleast_1d(np.asarray(z, dtype=complex)), False


def _unwrap(values: np.ndarray, scalar: bool):
    return float(values[0]) if scalar else values


class PotentialService:
    """Service layer for scalar potentials solving Laplace(Psi) = mu"""

    _lattice_constants: Dict[Lattice, Tuple[complex, float]] = {}
    _lock = threading.Lock()

    def __init__(self, quad: Optional[QuadratureSpec] = None, threads: Optional[int] = None):
        self.quad = quad or QuadratureSpec(tol=Config.TOL)
        self.threads = threads or Config.THREADS

    # lattice sums

    @staticmethod
    def _shell(lattice: Lattice, r_lo: float, r_hi: float) -> np.ndarray:
        pts = lattice.points_within(r_hi)
        r = np.abs(pts)
        return pts[(r > r_lo) & (r > 0)]

    def _sigma_log(self, lattice: Lattice, z: np.ndarray, tol: float) -> np.ndarray:
        """log sigma(z), summed as logs over symmetric disks |lambda| <= R with R doubling"""

        def terms(pts):
            out = np.zeros(z.shape, dtype=complex)
            for batch in PerformanceHelper.batch_process(pts, 2048):
                q = z[:, None] / batch[None, :]
                out += np.sum(np.log(1.0 - q) + q + 0.5 * q ** 2, axis=1)
            return out

        with np.errstate(divide='ignore', invalid='ignore'):
            R = max(4.0 * lattice.max_period, 4.0 * float(np.max(np.abs(z), initial=0.0)))
            total = np.log(z.astype(complex)) + terms(self._shell(lattice, 0.0, R))
            cap = Config.LATTICE_MAX_RADIUS * lattice.max_period
            while True:
                increment = terms(self._shell(lattice, R, 2.0 * R))
                total += increment
                R *= 2.0
                finite = np.isfinite(increment.real)
                change = float(np.max(np.abs(increment.real[finite]), initial=0.0))
                if change < tol / 4:
                    logger.debug("lattice sum accepted at R=%.4g (shell change %.2e)", R, change)
                    return total
                if R >= cap:
                    logger.warning("lattice sum truncated at R=%.4g with shell change %.2e", R, change)
                    return total

    def lattice_potential(self, solenoids: SolenoidSet, z, tol: float = None):
        """sum alpha (log|1 - z/lambda| + Re(z/lambda + (z/lambda)^2/2)) with alpha_0 log|z| at the origin"""
        tol = tol or self.quad.tol
        ValidationHelper.require_positive('tol', tol)
        pts, scalar = _as_points(z)
        if solenoids.is_lattice:
            u, _ = solenoids.lattice.reduce(pts - solenoids.offset)
            if np.any(np.abs(u) < 1e-14 * solenoids.lattice.max_period):
                raise SingularityError()
            values = solenoids.alpha * self._sigma_log(solenoids.lattice, pts - solenoids.offset, tol).real
            return _unwrap(values, scalar)
        values = np.zeros(pts.shape)
        for lam, alpha in zip(solenoids.locations, solenoids.intensities):
            d = np.abs(pts - lam)
            if np.any(d < 1e-14 * max(1.0, abs(lam))):
                raise SingularityError()
            if lam == 0:
                values += alpha * np.log(d)
                continue
            q = pts / lam
            values += alpha * (np.log(np.abs(1.0 - q)) + (q + 0.5 * q ** 2).real)
        return _unwrap(values, scalar)

    def weierstrass_sigma(self, lattice: Lattice, z):
        """(sigma(z), log|sigma(z)|) from the truncated product"""
        pts, scalar = _as_points(z)
        log_sigma = self._sigma_log(lattice, pts, 1e-10)
        with np.errstate(over='ignore'):
            value = np.where(np.isfinite(log_sigma.real), np.exp(log_sigma), 0j)
        log_modulus = log_sigma.real
        if scalar:
            return complex(value[0]), float(log_modulus[0])
        return value, log_modulus

    # periodic potentials

    @staticmethod
    def ewald_rho(lattice: Lattice, z: np.ndarray) -> np.ndarray:
        """Lattice-periodic rho with Laplace(rho) = 2 pi (sum of deltas - 1/S), by Ewald splitting"""
        z = np.asarray(z, dtype=complex)
        u, _ = lattice.reduce(z)
        S = lattice.cell_area
        a = np.pi / S
        cell = abs(lattice.omega1) + abs(lattice.omega2)
        real_pts = lattice.points_within(np.sqrt(40.0 / a) + cell)
        k_lat = Lattice(complex(*lattice.reciprocal[0]), complex(*lattice.reciprocal[1]))
        k = k_lat.points_within(np.sqrt(4.0 * a * 40.0))
        k = k[np.abs(k) > 0]
        k_weight = -(2.0 * np.pi / S) * np.exp(-np.abs(k) ** 2 / (4.0 * a)) / np.abs(k) ** 2
        out = np.empty(u.shape)
        flat_u, flat_out = u.ravel(), out.ravel()
        for start in range(0, flat_u.size, 1024):
            chunk = flat_u[start:start + 1024]
            d2 = np.abs(chunk[:, None] - real_pts[None, :]) ** 2
            if np.any(d2 == 0):
                raise SingularityError()
            near = -0.5 * np.sum(special.exp1(a * d2), axis=1)
            phase = np.outer(chunk.real, k.real) + np.outer(chunk.imag, k.imag)
            far = np.cos(phase) @ k_weight
            flat_out[start:start + 1024] = near + far
        return flat_out.reshape(u.shape)

    def lattice_constants(self, lattice: Lattice) -> Tuple[complex, float]:
        """(nu, c0) with log|sigma(z)| - Re(nu z^2) = m|z|^2 + rho(z) + c0, fitted once per lattice"""
        with self._lock:
            cached = self._lattice_constants.get(lattice)
        if cached is not None:
            return cached
        R = 10.0 * lattice.max_period
        theta = (np.arange(200) + 0.5) * (2.0 * np.pi / 200)
        z = R * np.exp(1j * theta)
        u, _ = lattice.reduce(z)
        z = z[np.abs(u) > 0.25 * lattice.min_separation()]
        target = self._sigma_log(lattice, z, 1e-12).real - lattice.m * np.abs(z) ** 2 - self.ewald_rho(lattice, z)
        basis = np.column_stack([(z ** 2).real, (z ** 2).imag, z.real, z.imag, np.ones(z.size)])
        coef, _, _, _ = linalg.lstsq(basis, target)
        residual = float(np.max(np.abs(basis @ coef - target)))
        nu = complex(coef[0], -coef[1])
        logger.info("lattice constants: nu=%s c0=%.12g (fit residual %.2e over %d points)",
                    nu, coef[4], residual, z.size)
        with self._lock:
            self._lattice_constants.setdefault(lattice, (nu, float(coef[4])))
        return nu, float(coef[4])

    def periodic_potential(self, lattice: Lattice, alpha: float, z):
        """alpha (m|z|^2 + rho(z)) = alpha (log|sigma(z)| - Re(nu z^2))"""
        if alpha == 0:
            raise PreconditionError("alpha must be nonzero")
        pts, scalar = _as_points(z)
        u, _ = lattice.reduce(pts)
        if np.any(np.abs(u) < 1e-14 * lattice.max_period):
            raise SingularityError()
        _, c0 = self.lattice_constants(lattice)
        values = alpha * (lattice.m * np.abs(pts) ** 2 + self.ewald_rho(lattice, pts) + c0)
        return _unwrap(values, scalar)

    def quasi_periodic_potential(self, components: Sequence[Tuple[Lattice, PeriodicMeasure]], z):
        """sum over components of the integral of Psi_0(z - w) d mu_k(w) over one cell (alpha = 1)"""
        pts, scalar = _as_points(z)
        total = np.zeros(pts.shape)
        for lattice, measure in components:
            nodes, masses = measure.nodes()
            atom_count = len(measure.atoms)
            density_count = nodes.size - atom_count
            _, c0 = self.lattice_constants(lattice)
            scale = lattice.max_period
            for i, (w, mass) in enumerate(zip(nodes, masses)):
                if mass == 0:
                    continue
                arg = pts - w
                u, _ = lattice.reduce(arg)
                hit = np.abs(u) < 1e-12 * scale
                if np.any(hit):
                    if i >= density_count:
                        raise SingularityError("evaluation at an atom of a periodic measure")
                    # midpoint node on a lattice point: evaluate just off the log singularity
                    arg = np.where(hit, arg + 1e-9 * scale, arg)
                total += mass * (lattice.m * np.abs(arg) ** 2 + self.ewald_rho(lattice, arg) + c0)
        return _unwrap(total, scalar)

    @staticmethod
    def flux_density_total(components: Sequence[Tuple[Lattice, PeriodicMeasure]]) -> float:
        """sum of Phi_k / |cell_k|; its sign decides which spin carries zero modes"""
        return float(sum(measure.flux_density for _, measure in components))

    # continuous measures

    def _base_rule(self, bg: ContinuousBackground, level: int, r_cut: float = None) -> Tuple[np.ndarray, np.ndarray]:
        """Nodes and mass weights covering the support (dyadic annuli up to r_cut when unbounded)"""
        c, Rs = bg.support()
        n_theta = self.quad.n_theta * 2 ** level
        order = self.quad.order
        if np.isfinite(Rs):
            return bg.polar_rule(c, 0.0, Rs, n_theta, order, Rs / (4 * 2 ** level), self.quad.graded_levels)
        edges = [0.0, 1.0]
        while edges[-1] < r_cut:
            edges.append(2.0 * edges[-1])
        pts, mass = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            p, m = bg.polar_rule(0j, lo, hi, n_theta, order, (hi - lo) / (2 * 2 ** level),
                                 self.quad.graded_levels if lo == 0 else 0)
            pts.append(p)
            mass.append(m)
        return np.concatenate(pts), np.concatenate(mass)

    def _kernel_integral(self, bg: ContinuousBackground, kernel: Kernel, zs: np.ndarray, level: int,
                         origin_singular: bool = False, r_cut: float = None) -> np.ndarray:
        """Integral of kernel(z, w) d bg(w) for each z; log singularities at z (and the origin)
        are split off with smooth cutoffs and integrated on graded polar rules"""
        pts, mass = self._base_rule(bg, level, r_cut)
        keep = mass != 0
        pts, mass = pts[keep], mass[keep]
        c, Rs = bg.support()
        bounded = np.isfinite(Rs)
        base_center = c if bounded else 0j
        n_local = self.quad.n_theta * 2 ** level
        graded = self.quad.graded_levels

        def one(z: complex) -> float:
            if bounded:
                delta = min(Rs / 4, max(0.5 * (Rs - abs(z - c)), Rs / 64))
            else:
                delta = max(1.0, abs(z) / 4)
            singular = []
            for p in [z] + ([0j] if origin_singular and z != 0 else []):
                if abs(p - base_center) <= 1e-14 * max(1.0, abs(p)):
                    continue
                d = min(delta, 0.5 * abs(z)) if origin_singular else delta
                if d <= 0 or (bounded and abs(p - c) > Rs + d):
                    continue
                singular.append((p, d))
            weight = np.ones(pts.size)
            local = 0.0
            for p, d in singular:
                weight *= 1.0 - QuadratureHelper.smooth_cutoff(np.abs(pts - p) / d)
                lp, lm = bg.polar_rule(p, 0.0, d, n_local, self.quad.order, d / 2, graded)
                phi = QuadratureHelper.smooth_cutoff(np.abs(lp - p) / d)
                local += float(np.sum(kernel(z, lp) * phi * lm))
            active = weight > 0
            return float(np.sum(kernel(z, pts[active]) * weight[active] * mass[active])) + local

        with np.errstate(divide='ignore', invalid='ignore'):
            return np.array(PerformanceHelper.ordered_map(one, list(zs), self.threads))

    def _refined(self, evaluate: Callable[[int], np.ndarray], label: str, max_level: int = 2) -> np.ndarray:
        previous = evaluate(0)
        for level in range(1, max_level + 1):
            current = evaluate(level)
            scale = max(float(np.max(np.abs(current), initial=0.0)), 1.0)
            change = float(np.max(np.abs(current - previous), initial=0.0))
            if change <= self.quad.tol * scale:
                logger.debug("%s converged at level %d (change %.2e)", label, level, change)
                return current
            previous = current
        logger.warning("%s: quadrature change %.2e above tolerance %.1e", label, change, self.quad.tol)
        return previous

    def _with_quad(self, quad: Optional[QuadratureSpec]) -> 'PotentialService':
        return self if quad is None else PotentialService(quad, self.threads)

    def integrate_kernel(self, bg: ContinuousBackground, kernel: Kernel, z, label: str,
                         origin_singular: bool = False, r_cut: Optional[float] = None,
                         max_level: int = 2) -> np.ndarray:
        """Refined integral of kernel(z, w) d bg(w) with log singularities at z (and the origin)"""
        pts, _ = _as_points(z)
        if r_cut is None and not bg.is_bounded:
            r_cut = 64.0 * max(float(np.max(np.abs(pts))), 1.0)
        return self._refined(lambda k: self._kernel_integral(bg, kernel, pts, k, origin_singular, r_cut),
                             label, max_level)

    def _radial_integral(self, bg: ContinuousBackground, profile: Callable[[np.ndarray, np.ndarray], np.ndarray],
                         rho: np.ndarray, top: float, extra: Sequence[float] = ()) -> np.ndarray:
        """Integral over s of profile(|z|, s) dM(s) for a rotation-invariant background"""
        kinks = sorted(set(np.round(rho, 12).tolist()))
        breaks = list(extra) + bg.boundary_radii(0j) + (kinks if len(kinks) <= 64 else [])
        s, ws = QuadratureHelper.radial_rule(0.0, top, 2 * self.quad.order, top / 16,
                                             self.quad.graded_levels, breaks)
        dm = 2.0 * np.pi * s * bg.density(s.astype(complex)) * ws
        with np.errstate(divide='ignore', invalid='ignore'):
            return profile(rho[:, None], s[None, :]) @ dm

    def log_potential_continuous(self, bg: ContinuousBackground, z, quad: Optional[QuadratureSpec] = None):
        """(1/2 pi) integral of ln|z - w| d bg(w) over a compactly supported background"""
        if not bg.is_bounded:
            raise PreconditionError("use additive_potential for infinite measures")
        service = self._with_quad(quad)
        pts, scalar = _as_points(z)
        c, Rs = bg.support()
        if bg.is_radial:
            values = service._radial_integral(bg, lambda r, s: np.log(np.maximum(r, s)), np.abs(pts), Rs)
            return _unwrap(values / (2.0 * np.pi), scalar)

        def kernel(zz, w):
            return np.log(np.abs(zz - w))

        values = service._refined(lambda k: service._kernel_integral(bg, kernel, pts, k), 'log potential')
        return _unwrap(values / (2.0 * np.pi), scalar)

    @staticmethod
    def _atom_values(measure: Measure, pts: np.ndarray, kernel: Callable[[np.ndarray, complex], np.ndarray]) -> np.ndarray:
        values = np.zeros(pts.shape)
        for a, mass in measure.atoms:
            if np.any(np.abs(pts - a) < 1e-14 * max(1.0, abs(a))):
                raise SingularityError()
            values += mass / (2.0 * np.pi) * kernel(pts, a)
        return values

    def regularized_finite_potential(self, measure: Union[Measure, ContinuousBackground], z,
                                     quad: Optional[QuadratureSpec] = None, split: float = 5.0):
        """(1/2 pi) [integral over D(0,5) of ln|z-w| + integral outside of ln(2|z-w|/|w|)] d mu(w)"""
        if isinstance(measure, ContinuousBackground):
            measure = Measure([], [measure])
        if not measure.is_bounded:
            raise PreconditionError("infinite total mass")
        service = self._with_quad(quad)
        pts, scalar = _as_points(z)

        def atom_kernel(zz, a):
            d = np.abs(zz - a)
            return np.log(d) if abs(a) <= split else np.log(2.0 * d / abs(a))

        values = self._atom_values(measure, pts, atom_kernel)
        for bg in measure.continuous:
            if bg.is_radial:
                def profile(r, s):
                    inner = np.log(np.maximum(r, s))
                    return np.where(s <= split, inner, np.log(2.0) + inner - np.log(s))

                values = values + service._radial_integral(bg, profile, np.abs(pts), bg.support()[1], [split]) / (2.0 * np.pi)
                continue

            def kernel(zz, w):
                d = np.abs(zz - w)
                return np.where(np.abs(w) <= split, np.log(d), np.log(2.0 * d / np.abs(w)))

            values = values + service._refined(
                lambda k: service._kernel_integral(bg, kernel, pts, k), 'regularized potential') / (2.0 * np.pi)
        return _unwrap(values, scalar)

    def additive_potential(self, mu: Union[FieldConfig, Measure], R: float, z,
                           quad: Optional[QuadratureSpec] = None):
        """(1/2 pi) [int_{|w|<=R} ln|1-z/w| + int_{|w|>R} (ln|1-z/w| + Re(z/w + (z/w)^2/2))] d nu(w)"""
        ValidationHelper.require_positive('R', R)
        measure = mu if isinstance(mu, Measure) else Measure.from_field(mu)
        service = self._with_quad(quad)
        pts, scalar = _as_points(z)

        def atom_kernel(zz, a):
            if a == 0:
                return np.log(np.abs(zz))
            q = zz / a
            out = np.log(np.abs(1.0 - q))
            if abs(a) > R:
                out = out + (q + 0.5 * q ** 2).real
            return out

        values = self._atom_values(measure, pts, atom_kernel)
        r_top = max(float(np.max(np.abs(pts))), R, 1.0)
        for bg in measure.continuous:
            if bg.is_radial:
                # circle averages: ln max(1, |z|/s); the Re(...) corrections average to zero
                top = min(r_top, bg.support()[1])
                values = values + service._radial_integral(
                    bg, lambda r, s: np.log(np.maximum(1.0, r / s)), np.abs(pts), top) / (2.0 * np.pi)
                continue

            def kernel(zz, w):
                q = zz / w
                out = np.log(np.abs(1.0 - q))
                return np.where(np.abs(w) > R, out + (q + 0.5 * q ** 2).real, out)

            values = values + service._refined(
                lambda k: service._kernel_integral(bg, kernel, pts, k, origin_singular=True, r_cut=64.0 * r_top),
                'additive potential', max_level=1) / (2.0 * np.pi)
        return _unwrap(values, scalar)

    # mollification and singularity removal

    def mollify(self, psi: ScalarPotential, chi: Mollifier, z, quad: Optional[QuadratureSpec] = None):
        """Psi_R(z) = integral of Psi(z - w) chi(w) dw; log singularities inside the support
        are subtracted and restored through the exact radial log-average of chi"""
        quad = quad or self.quad
        pts, scalar = _as_points(z)
        offsets, weights = chi.nodes(order=12, n_theta=max(16, quad.n_theta // 2))

        def one(p: complex) -> float:
            arg = p - offsets
            values = np.asarray(psi.evaluator(arg), dtype=float)
            correction = 0.0
            for lam, beta in psi.singularities_within(p, chi.support * (1 + 1e-9)):
                values = values - beta * np.log(np.abs(arg - lam))
                correction += beta * float(chi.log_average(np.array([p - lam]))[0])
            return float(values @ weights) + correction

        return _unwrap(np.array(PerformanceHelper.ordered_map(one, list(pts), self.threads)), scalar)

    def mollified_potential(self, psi: ScalarPotential, chi: Mollifier,
                            quad: Optional[QuadratureSpec] = None) -> ScalarPotential:
        return ScalarPotential(lambda z: self.mollify(psi, chi, np.asarray(z), quad), [], psi.tol,
                               f"mollified({psi.description}, R={chi.radius:g})", np.inf,
                               quadratic_growth=psi.quadratic_growth)

    def potential_minus_log(self, psi: ScalarPotential, z, r0: Optional[float] = None):
        """Psi(z) - beta ln|z - lambda| for the singularity lambda within r0/2 of z, if any"""
        r0 = psi.r0 if r0 is None else r0
        if not np.isfinite(r0) and psi.lattice_singularities:
            r0 = min(f.lattice.min_separation() for f in psi.lattice_singularities)
        pts, scalar = _as_points(z)
        out = np.empty(pts.shape)
        for i, p in enumerate(pts):
            near = [(lam, beta) for lam, beta in psi.singularities_within(p, 0.5 * r0)
                    if abs(p - lam) < 0.5 * r0]
            if len(near) > 1:
                raise PreconditionError("two singularities within r0/2")
            if not near:
                out[i] = psi(p)
                continue
            lam, beta = near[0]
            d = abs(p - lam)
            if d > 1e-12 * max(1.0, abs(lam)):
                out[i] = psi(p) - beta * np.log(d)
                continue
            # at the singularity: average of the bounded remainder along four short rays
            eps = 1e-6 * min(1.0, r0)
            rays = lam + eps * np.array([1, 1j, -1, -1j])
            out[i] = float(np.mean(psi(rays))) - beta * np.log(eps)
        return _unwrap(out, scalar)

    def nearest_singularity_distance(self, psi: ScalarPotential, z: complex, search: float = 10.0) -> float:
        near = psi.singularities_within(z, search)
        if not near:
            return float('inf')
        return float(min(abs(z - lam) for lam, _ in near))

    # potentials of whole fields

    def background_potential(self, bg: ContinuousBackground, split_radius: float = 1.0) -> ScalarPotential:
        scale_only = all(isinstance(op, ScaleBy) for op in bg.region_ops)
        if isinstance(bg, ConstantBackground) and scale_only:
            return ScalarPotential.constant_field(bg.B * bg.scale)
        if isinstance(bg, PeriodicDensity) and scale_only:
            lattice = bg.lattice
            n1, n2 = bg.samples.shape
            s1 = (np.arange(n1) + 0.5) / n1 - 0.5
            s2 = (np.arange(n2) + 0.5) / n2 - 0.5
            w = s1[:, None] * lattice.omega1 + s2[None, :] * lattice.omega2
            measure = PeriodicMeasure(lattice, bg.density(w))
            components = [(lattice, measure)]
            return ScalarPotential(
                lambda z: self.quasi_periodic_potential(components, z) / (2.0 * np.pi), [], self.quad.tol,
                'periodic background', laplacian=bg.density,
                quadratic_growth=measure.cell_flux / (4.0 * lattice.cell_area))
        if bg.is_bounded:
            return ScalarPotential(lambda z: self.log_potential_continuous(bg, z), [], self.quad.tol,
                                   f"log potential of {bg.kind}", laplacian=bg.density)
        measure = Measure([], [bg])
        return ScalarPotential(lambda z: self.additive_potential(measure, split_radius, z), [], self.quad.tol,
                               f"additive potential of {bg.kind}", laplacian=bg.density)

    def field_potential(self, field: FieldConfig, split_radius: float = 1.0) -> ScalarPotential:
        """Scalar potential of the whole field measure (solenoid potential plus backgrounds)"""
        parts: List[ScalarPotential] = []
        discrete = field.discrete
        if discrete.is_lattice:
            lattice, alpha, offset = discrete.lattice, discrete.alpha, discrete.offset
            parts.append(ScalarPotential(
                lambda z: self.periodic_potential(lattice, alpha, np.asarray(z) - offset), [], self.quad.tol,
                f"periodic AB lattice alpha={alpha:g}", discrete.r0,
                quadratic_growth=alpha * lattice.m,
                lattice_singularities=[LatticeSingularities(lattice, offset, alpha)]))
        elif not discrete.is_empty:
            locations, alphas = discrete.locations, discrete.intensities

            def gradient(z):
                z = np.asarray(z, dtype=complex)
                out = np.zeros(z.shape, dtype=complex)
                for lam, a in zip(locations, alphas):
                    out += a / (2.0 * (z - lam))
                    if lam != 0:
                        out += 0.5 * a * (1.0 / lam + z / lam ** 2)
                return out

            parts.append(ScalarPotential(
                lambda z: self.lattice_potential(discrete, np.asarray(z)),
                list(zip(locations.tolist(), alphas.tolist())), 0.0, 'AB solenoids', discrete.r0,
                gradient_dz=gradient, laplacian=lambda z: np.zeros(np.shape(z))))
        for bg in field.continuous:
            parts.append(self.background_potential(bg, split_radius))
        if not parts:
            return ScalarPotential.zero()
        total = parts[0]
        for part in parts[1:]:
            total = total + part
        return total

    def mollified_solenoid(self, center, alpha: float, chi: Mollifier) -> ScalarPotential:
        """Potential of 2 pi alpha (chi shifted to center): smooth, with analytic derivatives"""
        c = ValidationHelper.as_complex(center)

        def gradient(z):
            d = np.asarray(z, dtype=complex) - c
            rho = np.abs(d)
            with np.errstate(divide='ignore', invalid='ignore'):
                out = 0.5 * alpha * chi.mass_within(rho) / rho ** 2 * np.conj(d)
            return np.where(rho > 1e-12, out, 0j)

        return ScalarPotential(
            lambda z: alpha * chi.log_average(np.asarray(z, dtype=complex) - c), [], 1e-12,
            f"mollified solenoid alpha={alpha:g}", gradient_dz=gradient,
            laplacian=lambda z: 2.0 * np.pi * alpha * chi(np.asarray(z, dtype=complex) - c))

    @staticmethod
    def wiggle_field(B: float, a: float) -> ScalarPotential:
        """Psi = B|z|^2/4 + a sin x sin y"""

        def evaluator(z):
            z = np.asarray(z, dtype=complex)
            return 0.25 * B * np.abs(z) ** 2 + a * np.sin(z.real) * np.sin(z.imag)

        def gradient(z):
            z = np.asarray(z, dtype=complex)
            x, y = z.real, z.imag
            return 0.25 * B * np.conj(z) + 0.5 * a * (np.cos(x) * np.sin(y) - 1j * np.sin(x) * np.cos(y))

        def laplacian(z):
            z = np.asarray(z, dtype=complex)
            return B - 2.0 * a * np.sin(z.real) * np.sin(z.imag)

        return ScalarPotential(evaluator, [], 0.0, f"wiggle B={B:g} a={a:g}", gradient_dz=gradient,
                               laplacian=laplacian, quadratic_growth=0.25 * B)

    # checks and exports

    @staticmethod
    def poisson_residual(psi: ScalarPotential, z, h: float, density: Optional[Callable] = None) -> np.ndarray:
        """5-point Laplacian of Psi minus the expected density (zero when none is given)"""
        pts, _ = _as_points(z)
        stencil = (psi(pts + h) + psi(pts - h) + psi(pts + 1j * h) + psi(pts - 1j * h) - 4.0 * psi(pts)) / h ** 2
        expected = np.zeros(pts.shape) if density is None else np.asarray(density(pts), dtype=float)
        return stencil - expected

    def potential_grid(self, psi: ScalarPotential, xmin: float, xmax: float, nx: int,
                       ymin: float, ymax: float, ny: int) -> pd.DataFrame:
        """Rows x, y, psi, psi_minus_log, nearest_singularity_distance on a tensor grid"""
        x = np.linspace(xmin, xmax, nx)
        y = np.linspace(ymin, ymax, ny)
        rows = []
        for xv in x:
            for yv in y:
                p = complex(xv, yv)
                try:
                    value = psi(p)
                except SingularityError:
                    value = float('-inf')
                rows.append({'x': xv, 'y': yv, 'psi': value,
                             'psi_minus_log': self.potential_minus_log(psi, p),
                             'nearest_singularity_distance': self.nearest_singularity_distance(psi, p)})
        return pd.DataFrame(rows, columns=['x', 'y', 'psi', 'psi_minus_log', 'nearest_singularity_distance'])
