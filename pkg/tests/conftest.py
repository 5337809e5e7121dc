import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from resonance_lab.model import asymmetric_spec, symmetric_spec


@pytest.fixture(scope="session")
def sym_spec():
    """Figure-1 symmetric family, a0 = 0.02."""
    return symmetric_spec(0.02)


@pytest.fixture(scope="session")
def sym_spec_a0():
    """Symmetric family with a0 = 0 (exact periodic pitchfork brush)."""
    return symmetric_spec(0.0)


@pytest.fixture(scope="session")
def asym_spec():
    """Figure-2 asymmetric family, a0 = 0.005."""
    return asymmetric_spec(0.005)
