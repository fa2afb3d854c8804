import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from adsd.tensor import default_dtype  # noqa: E402


@pytest.fixture
def f64():
    with default_dtype(np.float64):
        yield
