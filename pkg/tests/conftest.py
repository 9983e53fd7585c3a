import os
import sys

import numpy as np
import pytest

now_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if now_dir not in sys.path:
    sys.path.insert(0, now_dir)

from tests.oracles import random_instance  # noqa: E402

DATA_DIR = os.path.join(now_dir, "tests", "data")


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))


@pytest.fixture
def instance(rng):
    """A 12 x 8 design with ~20% missing cells whose MLE exists."""
    return random_instance(rng, 12, 8, missing=0.2)


@pytest.fixture
def rollcall_csv():
    return os.path.join(DATA_DIR, "rollcall_fixture.csv")
