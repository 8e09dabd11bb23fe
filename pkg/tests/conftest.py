import numpy as np
import pytest

from berthplan import data_file
from berthplan import dynamics as dyn
from berthplan import geometry as geo


@pytest.fixture(scope="session")
def ship():
    return dyn.load_ship_params(data_file("esso_osaka_3m.cfg"))


@pytest.fixture(scope="session")
def harbor():
    return geo.load_polygon(data_file("harbor_inukai.cfg"))


@pytest.fixture(scope="session")
def footprint():
    return geo.load_footprint(data_file("footprint_5pt.cfg"))


@pytest.fixture(scope="session")
def calm():
    return dyn.WindCondition.calm()


@pytest.fixture(scope="session")
def x_init_reference():
    return np.array([16.50, 0.12, -7.50, 0.00, 2.0 * np.pi / 3.0, 0.00])


@pytest.fixture(scope="session")
def x_final_reference():
    return np.array([-0.50, 0.01, -0.50, 0.00, np.pi, 0.00])
