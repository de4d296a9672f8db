import json
import os
from dataclasses import dataclass
from dataclasses import field as dataclass_field
from typing import Any, Dict, Optional

import pandas as pd

from config import Config
from models.errors import ScenarioError
from models.field import FieldConfig
from models.potential import QuadratureSpec

TASKS = ('potential', 'modes', 'spectrum', 'verify', 'cover', 'perturb')
FIELDLESS_TASKS = ('cover', 'perturb')

# parameter -> (kind, lower bound, upper bound, closed at the lower end)
PARAM_RANGES = {
    'tau': (float, 0.0, 1.0, False),
    'rmax': (float, 0.0, None, False),
    'Rmax': (float, 0.0, None, False),
    'max_degree': (int, 0, None, True),
    'degree_cap': (int, 0, None, True),
    'domain_radius': (float, 0.0, None, False),
    'h': (float, 0.0, None, False),
    'k': (int, 1, None, True),
    'levels': (int, 1, None, True),
    'zero_tol': (float, 0.0, None, False),
    'n_samples': (int, 1, None, True),
    'r0': (float, 0.0, None, False),
}


@dataclass
class Scenario:
    """One task on one field, as read from a versioned scenario file"""
    task: str
    field: Optional[FieldConfig] = None
    example: Optional[Dict[str, Any]] = None
    params: Dict[str, Any] = dataclass_field(default_factory=dict)
    quad: QuadratureSpec = dataclass_field(default_factory=QuadratureSpec)
    seed: int = 0
    out: Optional[str] = None
    schema: int = Config.SCHEMA_VERSION
    source: Dict[str, Any] = dataclass_field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        """Canonical payload; the scenario hash is computed from this"""
        return {
            'schema': self.schema,
            'task': self.task,
            'field': None if self.field is None else self.field.to_dict(),
            'example': self.example,
            'params': self.params,
            'quad': self.quad.to_dict(),
            'seed': self.seed,
        }

    @classmethod
    def load(cls, path: str) -> 'Scenario':
        if not os.path.exists(path):
            raise ScenarioError(f"scenario file {path} does not exist", 'scenario')
        with open(path, 'r', encoding='utf-8') as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise ScenarioError(f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}", 'scenario')
        if not isinstance(data, dict):
            raise ScenarioError("top level must be an object", 'scenario')
        return cls.from_dict(data, os.path.dirname(os.path.abspath(path)))

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: str = '.') -> 'Scenario':
        schema = data.get('schema', Config.SCHEMA_VERSION)
        if schema != Config.SCHEMA_VERSION:
            raise ScenarioError(f"unsupported schema version {schema!r}", 'schema')
        task = data.get('task')
        if task not in TASKS:
            raise ScenarioError(f"unknown task {task!r}", 'task')
        if 'field' in data and 'example' in data:
            raise ScenarioError("give either a field or an example, not both", 'field')

        fld = None
        if data.get('field') is not None:
            fld = FieldConfig.from_dict(cls._resolve_files(data['field'], base_dir))
        example = data.get('example')
        if example is not None and (not isinstance(example, dict) or 'builder' not in example):
            raise ScenarioError("example needs a builder", 'example.builder')
        if fld is None and example is None and task not in FIELDLESS_TASKS:
            raise ScenarioError(f"task {task} needs a field", 'field')

        try:
            quad = QuadratureSpec.from_dict(data.get('quad'))
        except TypeError as e:
            raise ScenarioError(f"unknown quadrature setting ({e})", 'quad')
        params = dict(data.get('params') or {})
        cls.validate_params(params)
        try:
            seed = int(data.get('seed', Config.SEED))
        except (TypeError, ValueError):
            raise ScenarioError("seed must be an integer", 'seed')
        return cls(task, fld, example, params, quad, seed, data.get('out'), schema, data)

    @staticmethod
    def validate_params(params: Dict[str, Any]):
        for name, (kind, low, high, closed) in PARAM_RANGES.items():
            if name not in params or params[name] is None:
                continue
            try:
                value = kind(params[name])
            except (TypeError, ValueError):
                raise ScenarioError(f"must be a {kind.__name__}", f'params.{name}')
            if (value < low if closed else value <= low) or (high is not None and value >= high):
                raise ScenarioError(f"value {value} out of range", f'params.{name}')
            params[name] = value

    @staticmethod
    def _resolve_files(field_data: Dict[str, Any], base_dir: str) -> Dict[str, Any]:
        """Inline 'samples_file' CSV grids of continuous backgrounds"""
        resolved = dict(field_data)
        backgrounds = []
        for i, bg in enumerate(field_data.get('continuous', [])):
            bg = dict(bg)
            name = bg.pop('samples_file', None)
            if name is not None:
                path = name if os.path.isabs(name) else os.path.join(base_dir, name)
                if not os.path.exists(path):
                    raise ScenarioError(f"referenced file {name} does not exist", f'continuous[{i}].samples_file')
                bg['samples'] = pd.read_csv(path, header=None).to_numpy(dtype=float).tolist()
            backgrounds.append(bg)
        if backgrounds:
            resolved['continuous'] = backgrounds
        return resolved
