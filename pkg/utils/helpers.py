"""
Utility functions for pauli-zero-lab
"""
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import Any, Callable, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from models.errors import PreconditionError


class QuadratureHelper:
    """Gauss panels, graded radial rules and polar node sets"""

    @staticmethod
    @lru_cache(maxsize=64)
    def gauss(order: int) -> Tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre rule on [0, 1]"""
        x, w = np.polynomial.legendre.leggauss(order)
        return 0.5 * (x + 1.0), 0.5 * w

    @staticmethod
    def panels(breaks: Sequence[float], order: int) -> Tuple[np.ndarray, np.ndarray]:
        """Composite Gauss rule over consecutive breakpoints"""
        x, w = QuadratureHelper.gauss(order)
        breaks = np.asarray(breaks, dtype=float)
        a, b = breaks[:-1], breaks[1:]
        h = (b - a)[:, None]
        nodes = a[:, None] + h * x[None, :]
        weights = h * w[None, :]
        keep = (b > a)
        return nodes[keep].ravel(), weights[keep].ravel()

    @staticmethod
    def radial_breaks(r_in: float, r_out: float, panel_width: Optional[float] = None,
                      graded_levels: int = 0, extra: Iterable[float] = ()) -> np.ndarray:
        """Breakpoints on [r_in, r_out]; geometric grading toward r_in when graded_levels > 0"""
        pts = {r_in, r_out}
        if panel_width:
            n = max(1, int(math.ceil((r_out - r_in) / panel_width)))
            pts.update(np.linspace(r_in, r_out, n + 1).tolist())
        if graded_levels:
            first = min(pts - {r_in})
            pts.update((r_in + (first - r_in) * 2.0 ** (-np.arange(1, graded_levels + 1))).tolist())
        pts.update(p for p in extra if r_in < p < r_out)
        return np.array(sorted(pts))

    @staticmethod
    def radial_rule(r_in: float, r_out: float, order: int = 8, panel_width: Optional[float] = None,
                    graded_levels: int = 0, extra: Iterable[float] = ()) -> Tuple[np.ndarray, np.ndarray]:
        breaks = QuadratureHelper.radial_breaks(r_in, r_out, panel_width, graded_levels, extra)
        return QuadratureHelper.panels(breaks, order)

    @staticmethod
    def polar_nodes(center: complex, r_in: float, r_out: float, n_theta: int, order: int = 8,
                    panel_width: Optional[float] = None, graded_levels: int = 0,
                    extra: Iterable[float] = ()) -> Tuple[np.ndarray, np.ndarray]:
        """Nodes and area weights on the annulus r_in <= |w - center| <= r_out"""
        r, wr = QuadratureHelper.radial_rule(r_in, r_out, order, panel_width, graded_levels, extra)
        theta = (np.arange(n_theta) + 0.5) * (2.0 * np.pi / n_theta)
        pts = center + r[:, None] * np.exp(1j * theta)[None, :]
        weights = (wr * r)[:, None] * np.full(n_theta, 2.0 * np.pi / n_theta)[None, :]
        return pts.ravel(), weights.ravel()

    @staticmethod
    def sector_nodes(theta1: float, theta2: float, r_in: float, r_out: float, n_theta: int,
                     order: int = 8, panel_width: Optional[float] = None,
                     extra: Iterable[float] = ()) -> Tuple[np.ndarray, np.ndarray]:
        """Origin-centred polar nodes restricted to theta1 < arg w < theta2"""
        r, wr = QuadratureHelper.radial_rule(r_in, r_out, order, panel_width, 0, extra)
        t, wt = QuadratureHelper.panels(np.linspace(theta1, theta2, max(1, n_theta // order) + 1), order)
        pts = r[:, None] * np.exp(1j * t)[None, :]
        weights = (wr * r)[:, None] * wt[None, :]
        return pts.ravel(), weights.ravel()

    @staticmethod
    def ray_nodes_disk(focus: complex, center: complex, radius: float, n_theta: int,
                       order: int = 8, graded_levels: int = 30) -> Tuple[np.ndarray, np.ndarray]:
        """Polar rule centred at an interior point of a disk; rays end on the circle

        Resolves an integrable singularity located at the focus.
        """
        d = focus - center
        if abs(d) >= radius:
            raise PreconditionError("ray rule needs the focus inside the disk")
        theta = (np.arange(n_theta) + 0.5) * (2.0 * np.pi / n_theta)
        e = np.exp(1j * theta)
        proj = (d * np.conj(e)).real
        t_exit = -proj + np.sqrt(proj ** 2 - (abs(d) ** 2 - radius ** 2))
        s, ws = QuadratureHelper.radial_rule(0.0, 1.0, order, None, graded_levels)
        r = t_exit[:, None] * s[None, :]
        pts = focus + r * e[:, None]
        weights = (t_exit[:, None] * ws[None, :]) * r * (2.0 * np.pi / n_theta)
        return pts.ravel(), weights.ravel()

    @staticmethod
    def box_nodes(xmin: float, xmax: float, ymin: float, ymax: float, h: float,
                  order: int = 4) -> Tuple[np.ndarray, np.ndarray]:
        """Tensor Gauss nodes over a rectangle with panels of width about h"""
        nx = max(1, int(math.ceil((xmax - xmin) / h)))
        ny = max(1, int(math.ceil((ymax - ymin) / h)))
        x, wx = QuadratureHelper.panels(np.linspace(xmin, xmax, nx + 1), order)
        y, wy = QuadratureHelper.panels(np.linspace(ymin, ymax, ny + 1), order)
        pts = x[:, None] + 1j * y[None, :]
        weights = wx[:, None] * wy[None, :]
        return pts.ravel(), weights.ravel()

    @staticmethod
    def singular_disk_nodes(center: complex, radius: float, exponent: float, n_r: int = 16,
                            n_theta: int = 16) -> Tuple[np.ndarray, np.ndarray]:
        """Area nodes on D(center, radius) exact for integrands |w - center|^exponent times smooth;
        radial Gauss-Jacobi absorbs the power, exponent > -2"""
        gamma = 1.0 + exponent
        x, wx = special.roots_jacobi(n_r, 0.0, gamma)
        r = 0.5 * radius * (1.0 + x)
        wr = (0.5 * radius) ** (gamma + 1.0) * wx * r ** (1.0 - gamma)
        theta = (np.arange(n_theta) + 0.5) * (2.0 * np.pi / n_theta)
        pts = center + r[:, None] * np.exp(1j * theta)[None, :]
        weights = wr[:, None] * np.full(n_theta, 2.0 * np.pi / n_theta)[None, :]
        return pts.ravel(), weights.ravel()

    @staticmethod
    def smooth_cutoff(t: np.ndarray) -> np.ndarray:
        """C-infinity cutoff: 1 for t <= 1/2, 0 for t >= 1"""
        s = np.clip(2.0 * (1.0 - np.asarray(t, dtype=float)), 0.0, 1.0)

        def bump(x):
            out = np.zeros_like(x)
            pos = x > 0
            out[pos] = np.exp(-1.0 / x[pos])
            return out

        a, b = bump(s), bump(1.0 - s)
        return a / (a + b)


class GrowthHelper:
    """Scale-free growth diagnostics: log-log slopes of max-over-angle moduli"""

    @staticmethod
    def max_modulus(fn: Callable[[np.ndarray], np.ndarray], radii: Sequence[float],
                    n_angles: int = 64) -> np.ndarray:
        theta = (np.arange(n_angles) + 0.5) * (2.0 * np.pi / n_angles)
        out = []
        for r in radii:
            values = np.abs(np.asarray(fn(r * np.exp(1j * theta)), dtype=complex))
            out.append(float(np.max(values)))
        return np.array(out)

    @staticmethod
    def loglog_slope(radii: Sequence[float], values: Sequence[float]) -> Tuple[float, float]:
        x = np.log(np.asarray(radii, dtype=float))
        y = np.log(np.maximum(np.asarray(values, dtype=float), 1e-300))
        slope, intercept = np.polyfit(x, y, 1)
        return float(slope), float(intercept)

    @staticmethod
    def growth_fit(fn: Callable[[np.ndarray], np.ndarray], radii: Sequence[float],
                   n_angles: int = 64) -> Tuple[float, float]:
        """(slope, intercept) of log max|fn| against log r"""
        values = GrowthHelper.max_modulus(fn, radii, n_angles)
        if not np.any(values > 0):
            return 0.0, -np.inf
        return GrowthHelper.loglog_slope(radii, values)

    @staticmethod
    def quadratic_coefficient(fn: Callable[[np.ndarray], np.ndarray], radii: Sequence[float],
                              n_angles: int = 64) -> float:
        """Least-squares a in max|fn| ~ a r^2"""
        r = np.asarray(radii, dtype=float)
        values = GrowthHelper.max_modulus(fn, r, n_angles)
        return float(np.sum(values * r ** 2) / np.sum(r ** 4))

    @staticmethod
    def geometric_radii(r_min: float, r_max: float, count: int = 10) -> np.ndarray:
        return np.geomspace(r_min, r_max, count)


class ValidationHelper:
    """Helper class for argument validation"""

    @staticmethod
    def as_complex(point: Any) -> complex:
        """Accept Point, complex, real or (x, y) pairs"""
        if hasattr(point, 'z'):
            return complex(point.z)
        if isinstance(point, (list, tuple)) and len(point) == 2:
            return complex(float(point[0]), float(point[1]))
        return complex(point)

    @staticmethod
    def as_complex_array(points: Any) -> np.ndarray:
        if isinstance(points, np.ndarray) and np.iscomplexobj(points):
            return points
        if isinstance(points, (list, tuple)) and points and not np.isscalar(points[0]) \
                and not isinstance(points[0], (list, tuple)):
            return np.array([ValidationHelper.as_complex(p) for p in points], dtype=complex)
        arr = np.asarray(points)
        if arr.ndim == 2 and arr.shape[-1] == 2 and not np.iscomplexobj(arr):
            return arr[:, 0] + 1j * arr[:, 1]
        return arr.astype(complex)

    @staticmethod
    def require_positive(name: str, value: float) -> float:
        if not (value > 0 and math.isfinite(value)):
            raise PreconditionError(f"{name} must be positive and finite, got {value}")
        return float(value)

    @staticmethod
    def require_finite(name: str, values: Any) -> np.ndarray:
        arr = np.asarray(values)
        if not np.all(np.isfinite(arr)):
            raise PreconditionError(f"{name} contains non-finite values")
        return arr


class FormatHelper:
    """Helper class for report formatting"""

    @staticmethod
    def to_jsonable(value: Any) -> Any:
        """Convert numpy / complex / dataclass payloads into JSON-compatible values"""
        if hasattr(value, 'to_dict'):
            return FormatHelper.to_jsonable(value.to_dict())
        if isinstance(value, dict):
            return {str(k): FormatHelper.to_jsonable(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [FormatHelper.to_jsonable(v) for v in value]
        if isinstance(value, np.ndarray):
            return FormatHelper.to_jsonable(value.tolist())
        if isinstance(value, (complex, np.complexfloating)):
            return [float(value.real), float(value.imag)]
        if isinstance(value, np.integer):
            return int(value)
        if isinstance(value, np.floating):
            value = float(value)
        if isinstance(value, float) and not math.isfinite(value):
            return str(value)
        if hasattr(value, 'value') and not isinstance(value, (str, int, float, bool)):
            return value.value
        return value

    @staticmethod
    def canonical_json(payload: Any) -> str:
        return json.dumps(FormatHelper.to_jsonable(payload), sort_keys=True, indent=2)

    @staticmethod
    def scenario_hash(payload: Any) -> str:
        text = json.dumps(FormatHelper.to_jsonable(payload), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(text.encode('utf-8')).hexdigest()

    @staticmethod
    def format_float(value: float, digits: int = 15) -> str:
        return f"{value:.{digits}g}"


class PerformanceHelper:
    """Helper class for ordered parallel sweeps"""

    @staticmethod
    def ordered_map(fn: Callable, items: Iterable, threads: int = 1) -> list:
        """Map preserving input order, so reductions stay deterministic"""
        items = list(items)
        if threads <= 1 or len(items) < 2:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))

    @staticmethod
    def batch_process(items: Sequence, batch_size: int = 4096):
        """Yield consecutive slices of items"""
        for i in range(0, len(items), batch_size):
            yield items[i:i + batch_size]
