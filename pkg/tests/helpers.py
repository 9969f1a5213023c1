"""Small hand-checkable networks shared by the tests."""

from src.traffic_network import Flow, Scenario, network_from_dict


def lane_spec(capacity=10, length_m=100.0, speed_mps=10.0):
    return {'capacity': capacity, 'length_m': length_m, 'speed_mps': speed_mps}


def corridor_dict(capacity=10, length_m=100.0, speed_mps=10.0, n_phases=1):
    """One intersection A joining road `in` to road `out`, one lane each."""
    lane = lane_spec(capacity, length_m, speed_mps)
    return {
        'intersections': [{
            'id': 'A',
            'movements': [{'in_lane': 'in_0', 'out_lane': 'out_0'}],
            'phases': [[0]] * n_phases,
        }],
        'roads': [
            {'id': 'in', 'from': None, 'to': 'A', 'lanes': [lane]},
            {'id': 'out', 'from': 'A', 'to': None, 'lanes': [lane]},
        ],
    }


def two_approach_dict(capacity=10):
    """Roads `n` and `w` merge into `out` at A; phase 0 serves n, phase 1 serves w."""
    lane = lane_spec(capacity)
    return {
        'intersections': [{
            'id': 'A',
            'movements': [{'in_lane': 'n_0', 'out_lane': 'out_0'},
                          {'in_lane': 'w_0', 'out_lane': 'out_0'}],
            'phases': [[0], [1]],
        }],
        'roads': [
            {'id': 'n', 'from': None, 'to': 'A', 'lanes': [lane]},
            {'id': 'w', 'from': None, 'to': 'A', 'lanes': [lane]},
            {'id': 'out', 'from': 'A', 'to': None, 'lanes': [lane_spec(capacity=40)]},
        ],
    }


def two_approach_scenario(episode_length=240):
    flows = [Flow(float(t), ('n_0', 'out_0')) for t in range(0, 180, 9)]
    flows += [Flow(float(t), ('w_0', 'out_0')) for t in range(0, 180, 4)]
    flows.sort(key=lambda f: f.entry_time_s)
    return Scenario(network=network_from_dict(two_approach_dict()), flows=flows,
                    episode_length_s=episode_length, name='merge')

