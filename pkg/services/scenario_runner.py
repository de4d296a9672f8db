import logging
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from config import Config
from models.errors import PauliLabError, PreconditionError, ScenarioError
from models.field import FieldConfig, Spin
from models.modes import ZeroModeCandidate
from models.potential import Mollifier
from models.region import BoxRegion
from models.scenario import Scenario
from models.spectrum import GaussianBump
from services.field_service import FieldService
from services.perturbation_service import PerturbationService
from services.potential_service import PotentialService
from services.spectral_service import SpectralService
from services.verification_service import VerificationService
from services.zero_mode_service import INTENSITY_WINDOW, ZeroModeService
from storage import ReportStore
from utils.helpers import GrowthHelper, ValidationHelper

logger = logging.getLogger(__name__)

VIOLATION_EXIT_CODE = 4
INTERNAL_ERROR_EXIT_CODE = 5

Artifacts = Tuple[Dict[str, Any], Dict[str, pd.DataFrame]]


class ScenarioRunner:
    """Runs one scenario task and writes its report and tables"""

    def __init__(self, store: ReportStore, threads: Optional[int] = None):
        self.store = store
        self.threads = threads or Config.THREADS

    def run(self, scenario: Scenario) -> int:
        """Exit status: 0 on success, 4 when a declared constant is violated; errors propagate"""
        payload = scenario.to_dict()
        handler = getattr(self, f'_run_{scenario.task}')
        logger.info("running task %s", scenario.task)
        try:
            report, tables = handler(scenario)
        except PauliLabError as e:
            self.store.log_run(payload, scenario.task, e.exit_code, str(e))
            raise
        except Exception as e:
            self.store.log_run(payload, scenario.task, INTERNAL_ERROR_EXIT_CODE, f"{type(e).__name__}: {e}")
            raise
        report = {'task': scenario.task, **report}
        path = self.store.save_report(scenario.task, report, payload)
        for name, frame in tables.items():
            self.store.save_table(name, frame)
        exit_code = VIOLATION_EXIT_CODE if report.get('violations') else 0
        self.store.log_run(payload, scenario.task, exit_code, None, path)
        logger.info("task %s finished with exit code %d; report at %s", scenario.task, exit_code, path)
        return exit_code

    # shared

    def _field(self, scenario: Scenario) -> FieldConfig:
        if scenario.field is not None:
            return scenario.field
        if scenario.example is not None:
            params = dict(scenario.example.get('params') or {})
            params.setdefault('seed', scenario.seed)
            return PerturbationService(scenario.quad, self.threads).example_field(
                scenario.example['builder'], params).field
        raise ScenarioError(f"task {scenario.task} needs a field", 'field')

    @staticmethod
    def _points(params: Dict[str, Any], key: str = 'points') -> List[complex]:
        try:
            return [ValidationHelper.as_complex(p) for p in params.get(key, [])]
        except (TypeError, ValueError):
            raise ScenarioError("points must be [x, y] pairs", f'params.{key}')

    @staticmethod
    def _spin(params: Dict[str, Any], default: Spin) -> Spin:
        try:
            return Spin(params.get('spin', default.value))
        except ValueError:
            raise ScenarioError(f"unknown spin {params.get('spin')!r}", 'params.spin')

    @staticmethod
    def _mollifier(params: Dict[str, Any], required: bool = False) -> Optional[Mollifier]:
        data = params.get('mollifier')
        if data is None:
            if required:
                raise ScenarioError("a mollifier is required", 'params.mollifier')
            return None
        try:
            return Mollifier.from_dict(data)
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError(f"malformed mollifier ({e})", 'params.mollifier')

    @staticmethod
    def _box(params: Dict[str, Any], key: str = 'sample_box') -> Optional[BoxRegion]:
        if params.get(key) is None:
            return None
        xmin, xmax, ymin, ymax = (float(v) for v in params[key])
        return BoxRegion(xmin, xmax, ymin, ymax)

    # tasks

    def _run_potential(self, scenario: Scenario) -> Artifacts:
        p = scenario.params
        potentials = PotentialService(scenario.quad, self.threads)
        psi = potentials.field_potential(self._field(scenario), float(p.get('split_radius', 1.0)))
        points = self._points(p)
        chi = self._mollifier(p)
        rows = []
        for z in points:
            row = {'x': z.real, 'y': z.imag, 'psi': psi(z), 'psi_minus_log': potentials.potential_minus_log(psi, z)}
            if chi is not None:
                row['psi_mollified'] = float(potentials.mollify(psi, chi, z))
            rows.append(row)
        report = {'description': psi.description, 'quadratic_growth': psi.quadratic_growth, 'points': rows}
        if p.get('growth_radii'):
            report['quadratic_coefficient'] = GrowthHelper.quadratic_coefficient(psi, p['growth_radii'])
        grid = {'xmin': -4.0, 'xmax': 4.0, 'nx': 17, 'ymin': -4.0, 'ymax': 4.0, 'ny': 17, **p.get('grid', {})}
        frame = potentials.potential_grid(psi, float(grid['xmin']), float(grid['xmax']), int(grid['nx']),
                                          float(grid['ymin']), float(grid['ymax']), int(grid['ny']))
        return report, {'potential_grid': frame}

    def _run_modes(self, scenario: Scenario) -> Artifacts:
        p = scenario.params
        field = self._field(scenario)
        modes = ZeroModeService(scenario.quad, self.threads)
        max_degree = int(p.get('max_degree', 10))
        Rmax = p.get('Rmax')
        if p.get('census', 'single') == 'both':
            census = modes.both_spin_census(field, max_degree, scenario.quad, Rmax,
                                             float(p.get('theta0', INTENSITY_WINDOW)))
            return {'census': census.to_dict()}, {}

        spin = self._spin(p, field.spin)
        psi = PotentialService(scenario.quad, self.threads).field_potential(field)
        census = modes.mode_census(psi, spin, max_degree, scenario.quad, Rmax)
        report = {'census': census.to_dict()}
        points = self._points(p)
        if points:
            family = modes.interpolating_modes(psi, points, int(p.get('degree_cap', len(points) - 1)),
                                               scenario.quad, spin, Rmax)
            gram = modes.gram_matrix(family, scenario.quad, Rmax)
            eig = np.linalg.eigvalsh(gram)
            report['interpolating'] = {
                'modes': [m.to_dict() for m in family],
                'evaluation_matrix': modes.evaluation_matrix(family, points),
                'gram_eigenvalue_ratio': float(eig[0] / eig[-1]),
                'norms': [modes.mode_l2(m, scenario.quad, Rmax).to_dict() for m in family],
            }
        frame = modes.amplitude_grid(ZeroModeCandidate.monomial(psi, 0, spin), float(p.get('grid_half_width', 4.0)),
                                     int(p.get('grid_n', 33)))
        return report, {'mode_amplitude': frame}

    def _run_spectrum(self, scenario: Scenario) -> Artifacts:
        p = scenario.params
        field = self._field(scenario)
        spectral = SpectralService(scenario.quad, self.threads)
        potentials = PotentialService(scenario.quad, self.threads)
        spin = self._spin(p, Spin.DOWN)
        oriented = field if spin == Spin.DOWN else FieldService(scenario.quad, self.threads).spin_flip(field)
        psi = potentials.field_potential(oriented)

        R = float(p.get('domain_radius', 8.0))
        h = float(p.get('h', R / 64.0))
        levels = int(p.get('levels', 1))
        problem, result = spectral.mesh_study(psi, spin, R, h, int(p.get('k', 10)), levels, p.get('zero_tol'))
        report = {'problem': problem.to_dict(), 'spectrum': result.to_dict()}
        if levels > 1:
            report['extrapolated_lowest'] = spectral.richardson(result.h_sequence)

        holes = p.get('holes', [])
        if holes:
            report['hole_quotients'] = [{'center': [x, y], 'R': r, 'quotient': spectral.rayleigh_bump(field, (x, y), r)}
                                        for x, y, r in holes]
        probes = p.get('commutation', [])
        if probes:
            chi = self._mollifier(p)
            smooth = psi if chi is None else potentials.mollified_potential(psi, chi)
            rows = []
            for probe in probes:
                u = GaussianBump(ValidationHelper.as_complex(probe['center']), float(probe['sigma']))
                lhs, rhs = spectral.commutation_check(smooth, u)
                rows.append({'probe': u.to_dict(), 'lhs': lhs, 'rhs': rhs})
            report['commutation'] = rows
        return report, {'eigenvectors': spectral.eigenvector_grid(problem, result, int(p.get('vectors', 3)))}

    def _run_verify(self, scenario: Scenario) -> Artifacts:
        p = scenario.params
        field = self._field(scenario)
        verifier = VerificationService(scenario.quad, self.threads)
        chi = self._mollifier(p, required=True)
        declared = p.get('declared', {})
        checks = p.get('checks', ['local'])
        center = ValidationHelper.as_complex(p.get('center', [0.0, 0.0]))
        reports = {}
        for check in checks:
            if check == 'comparison':
                reports[check] = verifier.mollified_comparison(
                    field, chi, p.get('part', 'minus'), self._box(p), int(p.get('n_samples', 64)),
                    scenario.seed, declared.get(check))
            elif check == 'local':
                local, opposite = verifier.local_inequality(
                    field, center, chi, r0=p.get('r0'), d1_radius=p.get('d1_radius'), theta0=p.get('theta0'),
                    A1=p.get('A1'), declared=declared.get(check))
                reports[check], reports['opposite_part'] = local, opposite
            elif check == 'global':
                reports[check] = verifier.global_inequality(field, chi, None, float(p.get('domain_radius', 8.0)),
                                                            declared.get(check))
            elif check == 'entire':
                reports[check] = verifier.entire_inequality(field, chi, float(p.get('domain_radius', 8.0)),
                                                            int(p.get('max_degree', 5)), declared.get(check))
            else:
                raise ScenarioError(f"unknown check {check!r}", 'params.checks')
        rows = [{'check': name, **row} for name, r in reports.items() for row in r.rows]
        report = {'reports': {name: r.to_dict() for name, r in reports.items()},
                  'violations': sorted(name for name, r in reports.items() if r.violated)}
        return report, {'verify_rows': pd.json_normalize(rows)}

    def _run_cover(self, scenario: Scenario) -> Artifacts:
        p = scenario.params
        tau = float(p.get('tau', 0.5))
        rmax = float(p.get('rmax', 100.0))
        c, C = float(p.get('c', 0.25)), float(p.get('C', 4.0))
        perturbations = PerturbationService(scenario.quad, self.threads)
        covering = perturbations.build_square_covering(tau, rmax, c, C)
        centers, sides = perturbations.covering_arrays(covering)
        outer = np.abs(centers) > 0
        ratio = sides[outer] / np.abs(centers[outer]) ** tau
        report = {'tau': tau, 'rmax': rmax, 'c': c, 'C': C, 'tiles': len(covering),
                  'layers': int(max(t.layer for t in covering)) + 1,
                  'side_ratio_min': float(ratio.min()), 'side_ratio_max': float(ratio.max()),
                  'bounds_hold': bool(np.all((ratio >= c) & (ratio <= C)))}
        if not report['bounds_hold']:
            raise PreconditionError("covering tiles violate the side bounds")
        return report, {'covering': perturbations.covering_table(covering)}

    def _run_perturb(self, scenario: Scenario) -> Artifacts:
        p = scenario.params
        if scenario.example is None:
            raise ScenarioError("perturb needs an example builder", 'example')
        perturbations = PerturbationService(scenario.quad, self.threads)
        params = dict(scenario.example.get('params') or {})
        params.setdefault('seed', scenario.seed)
        example = perturbations.example_field(scenario.example['builder'], params)
        radii = p.get('radii') or list(GrowthHelper.geometric_radii(2.0, float(p.get('rmax', 32.0)), 6))
        stats = perturbations.measure_stats(example.perturbation, radii, float(p.get('r1', 1.0)))
        report = {'example': example.to_dict(), 'measure_stats': stats.to_dict()}

        points = self._points(p)
        split = float(p.get('split_radius', 1.0))
        if points:
            rows = []
            for z in points:
                row = {'x': z.real, 'y': z.imag,
                       'additive': float(perturbations.additive_potential(example.perturbation, split, z))}
                if example.rearrangement is not None and example.rearranged is not None:
                    row['rearrangement'] = float(perturbations.rearrangement_potential_cont(
                        example.rearranged, example.rearrangement, None, z))
                rows.append(row)
            report['potential_values'] = rows
        if p.get('growth_radii'):
            slope, coefficient = perturbations.growth_fit(
                lambda z: perturbations.additive_potential(example.perturbation, split, z), p['growth_radii'])
            report['additive_growth'] = {'slope': slope, 'coefficient': coefficient}
        return report, {'measure_stats': pd.DataFrame(stats.to_rows())}
