import numpy as np
import pytest

from models.field import ConstantBackground, FieldConfig, Gauge, SolenoidSet
from models.potential import Lattice, QuadratureSpec


@pytest.fixture
def quad():
    return QuadratureSpec(tol=1e-8, order=8, n_theta=64)


@pytest.fixture
def constant_field():
    return FieldConfig(continuous=[ConstantBackground(1.0)])


@pytest.fixture
def lattice04():
    """Unit square AB lattice with alpha = 0.4 in MaxGauge"""
    return FieldConfig(discrete=SolenoidSet.regular_lattice(Lattice.square(1.0), 0.4), gauge=Gauge.MAX)


@pytest.fixture
def out_dir(tmp_path):
    return str(tmp_path / 'out')


@pytest.fixture
def rng():
    return np.random.default_rng(0)
