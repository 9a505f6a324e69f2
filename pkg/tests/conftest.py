import json

import numpy as np
import pytest

from webweave.web.lattice import IncrementField, LatticeWindow, generate_field
from webweave.web.laws import SIMPLE_LAW

FIELD_SEED = 20240611


@pytest.fixture
def window():
    return LatticeWindow(0, 40, 0, 40)


@pytest.fixture
def simple_field(window):
    return generate_field(window, SIMPLE_LAW, FIELD_SEED)


@pytest.fixture
def funnel_field():
    """Walks left of column 5 step right, the others step left: everything funnels onto {4, 5}."""
    window = LatticeWindow(0, 10, 0, 10)
    columns = np.arange(window.width)[:, None]
    increments = np.where(columns < 5, 1, -1) * np.ones((1, window.rows), dtype=np.int64)
    return IncrementField.from_array(window, increments)


@pytest.fixture
def write_config(tmp_path):
    def write(config, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(config))
        return str(path)

    return write
