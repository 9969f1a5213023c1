import pytest

from src.traffic_network import network_from_dict, save_scenario
from tests.helpers import corridor_dict, two_approach_dict, two_approach_scenario


@pytest.fixture
def corridor():
    return network_from_dict(corridor_dict())


@pytest.fixture
def two_approach():
    return network_from_dict(two_approach_dict())


@pytest.fixture
def merge_scenario_file(tmp_path):
    path = tmp_path / 'merge.json'
    save_scenario(two_approach_scenario(), str(path))
    return str(path)
