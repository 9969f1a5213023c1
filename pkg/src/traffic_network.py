# src/traffic_network.py
# Static road network and scenario files.

import json
import logging
import math
import os
from dataclasses import dataclass, field

import networkx as nx
import yaml

from src.utils.graph_algorithms import route_is_connected

logger = logging.getLogger(__name__)

YAML_EXTENSIONS = ('.yaml', '.yml')


class ScenarioError(ValueError):
    """A scenario file that does not describe a well-formed environment."""


@dataclass(frozen=True)
class Lane:
    id: str
    road_id: str
    index: int
    capacity: int
    length_m: float
    speed_mps: float

    @property
    def travel_ticks(self):
        """Whole seconds needed to cover the lane at free-flow speed."""
        return max(1, math.ceil(self.length_m / self.speed_mps - 1e-9))


@dataclass(frozen=True)
class Road:
    id: str
    source: str
    target: str
    lanes: tuple


@dataclass(frozen=True)
class Movement:
    in_lane: str
    out_lane: str


@dataclass(frozen=True)
class Intersection:
    id: str
    movements: tuple
    phases: tuple  # each phase is a tuple of movement indices


@dataclass(frozen=True)
class Flow:
    entry_time_s: float
    route: tuple


def lane_id(road_id, index):
    return f"{road_id}_{index}"


class TrafficNetwork:
    """
    The directed road graph G=(V, E): intersections and boundary
    sources/sinks as nodes, roads as edges, each road with an ordered lane list.
    """

    def __init__(self, intersections, roads):
        self.intersections = list(intersections)
        self.roads = list(roads)
        self.graph = nx.MultiDiGraph()
        self.lanes = {}
        self.lane_order = []

        self.intersection_index = {}
        for idx, inter in enumerate(self.intersections):
            if inter.id in self.intersection_index:
                raise ScenarioError(f"duplicate intersection id {inter.id!r}")
            self.intersection_index[inter.id] = idx
            self.graph.add_node(inter.id, kind='intersection')

        self.road_by_id = {}
        for road in self.roads:
            if road.id in self.road_by_id:
                raise ScenarioError(f"duplicate road id {road.id!r}")
            self.road_by_id[road.id] = road
            for endpoint in (road.source, road.target):
                if endpoint not in self.graph:
                    self.graph.add_node(endpoint, kind='boundary')
            self.graph.add_edge(road.source, road.target, road_id=road.id)
            for lane in road.lanes:
                self.lanes[lane.id] = lane
                self.lane_order.append(lane.id)

        self.lane_position = {lid: i for i, lid in enumerate(self.lane_order)}
        self.movement_at = {}
        for idx, inter in enumerate(self.intersections):
            for m_idx, movement in enumerate(inter.movements):
                self.movement_at[(movement.in_lane, movement.out_lane)] = (idx, m_idx)

        self._incoming = {inter.id: self._incident_lanes(self.graph.in_edges(inter.id, data=True))
                          for inter in self.intersections}
        self._outgoing = {inter.id: self._incident_lanes(self.graph.out_edges(inter.id, data=True))
                          for inter in self.intersections}

        self._validate()

    def _validate(self):
        for inter in self.intersections:
            if not inter.phases:
                raise ScenarioError(f"intersection {inter.id!r} has no phases")
            for movement in inter.movements:
                for lid in (movement.in_lane, movement.out_lane):
                    if lid not in self.lanes:
                        raise ScenarioError(f"intersection {inter.id!r} references unknown lane {lid!r}")
                if self.road_of(movement.in_lane).target != inter.id:
                    raise ScenarioError(f"lane {movement.in_lane!r} does not enter intersection {inter.id!r}")
                if self.road_of(movement.out_lane).source != inter.id:
                    raise ScenarioError(f"lane {movement.out_lane!r} does not leave intersection {inter.id!r}")
            for p_idx, phase in enumerate(inter.phases):
                if not phase:
                    raise ScenarioError(f"phase {p_idx} of intersection {inter.id!r} permits no movement")
                for m_idx in phase:
                    if not 0 <= m_idx < len(inter.movements):
                        raise ScenarioError(
                            f"phase {p_idx} of intersection {inter.id!r} references movement {m_idx}")

    def road_of(self, lid):
        return self.road_by_id[self.lanes[lid].road_id]

    def is_boundary(self, node):
        return self.graph.nodes[node].get('kind') == 'boundary'

    def ends_at_sink(self, lid):
        return self.is_boundary(self.road_of(lid).target)

    def incoming_lanes(self, intersection_id):
        return self._incoming[intersection_id]

    def outgoing_lanes(self, intersection_id):
        return self._outgoing[intersection_id]

    def _incident_lanes(self, edges):
        road_ids = sorted(data["road_id"] for _, _, data in edges)
        return [lane.id for road_id in road_ids for lane in self.road_by_id[road_id].lanes]

    def boundary_roads(self):
        return [road for road in self.roads
                if self.is_boundary(road.source) or self.is_boundary(road.target)]

    def validate_route(self, route):
        if not route:
            raise ScenarioError("a flow route needs at least one lane")
        for lid in route:
            if lid not in self.lanes:
                raise ScenarioError(f"route references unknown lane {lid!r}")
        if not route_is_connected(route, self.movement_at):
            raise ScenarioError(f"route {list(route)} is not connected through movements")
        if not self.ends_at_sink(route[-1]):
            raise ScenarioError(f"route {list(route)} does not end on a boundary sink")


@dataclass
class Scenario:
    network: TrafficNetwork
    flows: list
    episode_length_s: int = 3600
    name: str = "scenario"
    metadata: dict = field(default_factory=dict)


def network_from_dict(data):
    try:
        intersections = []
        for item in data['intersections']:
            movements = tuple(Movement(m['in_lane'], m['out_lane']) for m in item['movements'])
            phases = tuple(tuple(int(i) for i in phase) for phase in item['phases'])
            intersections.append(Intersection(str(item['id']), movements, phases))
        known = {inter.id for inter in intersections}
        roads = []
        for item in data['roads']:
            road_id = str(item['id'])
            source = item.get('from')
            target = item.get('to')
            source = str(source) if source is not None else f"boundary:{road_id}:in"
            target = str(target) if target is not None else f"boundary:{road_id}:out"
            if source not in known and target not in known:
                raise ScenarioError(f"road {road_id!r} touches no intersection")
            lanes = []
            for index, lane in enumerate(item['lanes']):
                lane_obj = Lane(
                    id=lane_id(road_id, index), road_id=road_id, index=index,
                    capacity=int(lane['capacity']), length_m=float(lane['length_m']),
                    speed_mps=float(lane['speed_mps']))
                if lane_obj.capacity <= 0 or lane_obj.length_m <= 0 or lane_obj.speed_mps <= 0:
                    raise ScenarioError(f"lane {lane_obj.id!r} needs positive capacity, length and speed")
                lanes.append(lane_obj)
            roads.append(Road(road_id, source, target, tuple(lanes)))
    except (KeyError, TypeError) as e:
        raise ScenarioError(f"malformed network description: missing or invalid {e}") from e
    return TrafficNetwork(intersections, roads)


def network_to_dict(network):
    def endpoint(node):
        return None if network.is_boundary(node) else node

    return {
        'intersections': [
            {
                'id': inter.id,
                'phases': [list(phase) for phase in inter.phases],
                'movements': [{'in_lane': m.in_lane, 'out_lane': m.out_lane} for m in inter.movements],
            }
            for inter in network.intersections
        ],
        'roads': [
            {
                'id': road.id,
                'from': endpoint(road.source),
                'to': endpoint(road.target),
                'lanes': [
                    {'capacity': lane.capacity, 'length_m': lane.length_m, 'speed_mps': lane.speed_mps}
                    for lane in road.lanes
                ],
            }
            for road in network.roads
        ],
    }


def scenario_from_dict(data, name="scenario"):
    if not isinstance(data, dict) or 'network' not in data:
        raise ScenarioError("scenario must be an object with a 'network' key")
    network = network_from_dict(data['network'])
    flows = []
    for item in data.get('flows', []):
        try:
            flow = Flow(float(item['entry_time_s']), tuple(item['route']))
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError(f"malformed flow entry {item!r}") from e
        if flow.entry_time_s < 0:
            raise ScenarioError(f"flow entry time must be nonnegative, got {flow.entry_time_s}")
        network.validate_route(flow.route)
        flows.append(flow)
    episode_length = int(data.get('episode_length_s', 3600))
    if episode_length <= 0:
        raise ScenarioError("episode_length_s must be positive")
    return Scenario(network=network, flows=flows, episode_length_s=episode_length,
                    name=name, metadata=dict(data.get('metadata', {})))


def scenario_to_dict(scenario):
    data = {
        'network': network_to_dict(scenario.network),
        'flows': [{'entry_time_s': f.entry_time_s, 'route': list(f.route)} for f in scenario.flows],
        'episode_length_s': scenario.episode_length_s,
    }
    if scenario.metadata:
        data['metadata'] = scenario.metadata
    return data


def load_scenario(path):
    """
    Reads and validates a scenario file: JSON, or YAML holding either a full
    scenario or a generator recipe (`generator: grid`, expanded by
    scenario_generator.scenario_from_recipe).
    """
    name, ext = os.path.splitext(os.path.basename(str(path)))
    with open(path, 'r', encoding='utf-8') as f:
        try:
            data = yaml.safe_load(f) if ext.lower() in YAML_EXTENSIONS else json.load(f)
        except (json.JSONDecodeError, yaml.YAMLError) as e:
            raise ScenarioError(f"{path} is not a valid scenario file: {e}") from e
    if isinstance(data, dict) and 'generator' in data:
        from src.scenario_generator import scenario_from_recipe

        scenario = scenario_from_recipe(data, name=name)
    else:
        scenario = scenario_from_dict(data, name=name)
    logger.debug("Loaded scenario %s: %d intersections, %d lanes, %d vehicles.",
                 name, len(scenario.network.intersections), len(scenario.network.lanes),
                 len(scenario.flows))
    return scenario


def save_scenario(scenario, path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(scenario_to_dict(scenario), f, indent=1, sort_keys=True)
        f.write('\n')
