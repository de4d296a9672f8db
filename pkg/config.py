import os
from dotenv import load_dotenv

load_dotenv()

class Config:
    # Numerical defaults
    TOL = float(os.getenv('PZL_TOL', 1e-8))
    ZERO_TOL = float(os.getenv('PZL_ZERO_TOL', 0.05))
    MAX_ITER = int(os.getenv('PZL_MAX_ITER', 500))
    POLAR_SECTORS = int(os.getenv('PZL_POLAR_SECTORS', 64))  # angular nodes per quadrature ring
    GAUSS_ORDER = int(os.getenv('PZL_GAUSS_ORDER', 8))

    # Lattice sums
    LATTICE_MAX_RADIUS = float(os.getenv('PZL_LATTICE_MAX_RADIUS', 512))

    # Run control
    THREADS = int(os.getenv('PZL_THREADS', 1))  # 1 keeps reductions deterministic
    SEED = int(os.getenv('PZL_SEED', 0))

    # Output
    OUT_DIR = os.getenv('PZL_OUT_DIR', './out')
    LOG_LEVEL = os.getenv('PZL_LOG_LEVEL', 'INFO')
    TOOL_VERSION = os.getenv('PZL_TOOL_VERSION', '1.0.0')
    SCHEMA_VERSION = 1

    @classmethod
    def validate_config(cls):
        """Validate numerical configuration"""
        problems = []

        for field in ['TOL', 'ZERO_TOL', 'LATTICE_MAX_RADIUS']:
            if not getattr(cls, field) > 0:
                problems.append(field)

        for field in ['MAX_ITER', 'THREADS', 'POLAR_SECTORS', 'GAUSS_ORDER']:
            if getattr(cls, field) < 1:
                problems.append(field)

        if cls.LOG_LEVEL.upper() not in ('DEBUG', 'INFO', 'WARNING', 'ERROR'):
            problems.append('LOG_LEVEL')

        if problems:
            raise ValueError(f"Invalid configuration: {', '.join(problems)}")

        return True
