"""
scenario_generator.py

Builds synthetic grid scenarios: an r x c lattice of 4-approach
intersections, every road with a left, a straight and a right lane, boundary
source/sink roads on the perimeter, and Poisson arrivals at every entry with
uniformly drawn exits. Deterministic per seed.
"""
import logging
import math

import networkx as nx
import numpy as np

from src.config import CONFIG
from src.traffic_network import (
    Flow, Intersection, Lane, Movement, Road, Scenario, ScenarioError, TrafficNetwork, lane_id,
)
from src.utils.graph_algorithms import find_lane_route, lane_successors

logger = logging.getLogger(__name__)

SIDES = ('N', 'E', 'S', 'W')
OFFSETS = {0: (-1, 0), 1: (0, 1), 2: (1, 0), 3: (0, -1)}
LEFT, STRAIGHT, RIGHT = 0, 1, 2
PHASE_PLANS = ('4', '8', 'mixed')


def exit_side(entry_side, turn):
    """Side a vehicle leaves through after entering from `entry_side`."""
    return (entry_side + {LEFT: 1, STRAIGHT: 2, RIGHT: 3}[turn]) % 4


def intersection_name(r, c):
    return f"I{r}_{c}"


def _phase_groups(plan):
    """Phases as lists of (entry sides, turns); right turns ride along in every 8-phase group."""
    ns, ew = (0, 2), (1, 3)
    if plan == '4':
        return [
            (ns, (STRAIGHT, RIGHT)), (ew, (STRAIGHT, RIGHT)),
            (ns, (LEFT,)), (ew, (LEFT,)),
        ]
    if plan == '8':
        groups = [
            (ns, (STRAIGHT,)), (ew, (STRAIGHT,)), (ns, (LEFT,)), (ew, (LEFT,)),
            ((0,), (STRAIGHT, LEFT)), ((2,), (STRAIGHT, LEFT)),
            ((1,), (STRAIGHT, LEFT)), ((3,), (STRAIGHT, LEFT)),
        ]
        return [(sides, turns + (RIGHT,)) for sides, turns in groups]
    raise ScenarioError(f"unknown phase plan {plan!r}; expected one of {PHASE_PLANS}")


def _plan_for(phase_plan, r, c):
    if phase_plan == 'mixed':
        return '4' if (r + c) % 2 == 0 else '8'
    return phase_plan


def build_grid_network(rows, cols, phase_plan='4', geometry=None):
    """
    Road network of the grid.

    Internal roads join neighbouring intersections in both directions; each
    perimeter side gets one inbound and one outbound boundary road, so the
    grid has 4 * (rows + cols) boundary roads.
    """
    if rows <= 0 or cols <= 0:
        raise ScenarioError(f"grid needs at least one row and column, got {rows}x{cols}")
    if phase_plan not in PHASE_PLANS:
        raise ScenarioError(f"unknown phase plan {phase_plan!r}; expected one of {PHASE_PLANS}")
    geometry = {**CONFIG['scenario'], **(geometry or {})}
    speed = float(geometry['speed_mps'])
    spacing = float(geometry['vehicle_spacing_m'])

    def make_road(road_id, source, target, length):
        capacity = max(1, int(length // spacing))
        lanes = tuple(Lane(lane_id(road_id, i), road_id, i, capacity, float(length), speed)
                      for i in range(3))
        return Road(road_id, source, target, lanes)

    roads = []
    incoming = {}  # (intersection, side) -> road entering from that side
    outgoing = {}  # (intersection, side) -> road leaving through that side
    for r in range(rows):
        for c in range(cols):
            here = intersection_name(r, c)
            for side, (dr, dc) in OFFSETS.items():
                nr, nc = r + dr, c + dc
                if 0 <= nr < rows and 0 <= nc < cols:
                    there = intersection_name(nr, nc)
                    road = make_road(f"R_{there}_{here}", there, here, geometry['lane_length_m'])
                else:
                    road = make_road(f"in_{here}_{SIDES[side]}", f"src_{here}_{SIDES[side]}", here,
                                     geometry['boundary_length_m'])
                    out = make_road(f"out_{here}_{SIDES[side]}", here, f"dst_{here}_{SIDES[side]}",
                                    geometry['boundary_length_m'])
                    roads.append(out)
                    outgoing[(here, side)] = out
                roads.append(road)
                incoming[(here, side)] = road
    for r in range(rows):
        for c in range(cols):
            here = intersection_name(r, c)
            for side, (dr, dc) in OFFSETS.items():
                nr, nc = r + dr, c + dc
                if 0 <= nr < rows and 0 <= nc < cols:
                    outgoing[(here, side)] = incoming[(intersection_name(nr, nc), (side + 2) % 4)]

    intersections = []
    for r in range(rows):
        for c in range(cols):
            here = intersection_name(r, c)
            movements = []
            index_of = {}
            for side in range(4):
                in_road = incoming[(here, side)]
                for turn in (LEFT, STRAIGHT, RIGHT):
                    out_road = outgoing[(here, exit_side(side, turn))]
                    for out_lane in out_road.lanes:
                        index_of.setdefault((side, turn), []).append(len(movements))
                        movements.append(Movement(in_road.lanes[turn].id, out_lane.id))
            phases = tuple(
                tuple(m for side in sides for turn in turns for m in index_of[(side, turn)])
                for sides, turns in _phase_groups(_plan_for(phase_plan, r, c))
            )
            intersections.append(Intersection(here, tuple(movements), phases))

    return TrafficNetwork(intersections, roads)


def _resolve_demand(demand):
    if isinstance(demand, str):
        profiles = CONFIG['demand']
        if demand not in profiles:
            raise ScenarioError(f"unknown demand profile {demand!r}; expected one of {sorted(profiles)}")
        return float(profiles[demand])
    rate = float(demand)
    if rate <= 0:
        raise ScenarioError(f"demand must be positive, got {demand}")
    return rate


def _lane_route(network, node_path, adjacency, rng):
    """Lane sequence along a node path: the turn lane per hop, any lane on the final road."""
    roads = []
    for u, v in zip(node_path, node_path[1:]):
        edges = network.graph.get_edge_data(u, v)
        roads.append(network.road_by_id[sorted(d['road_id'] for d in edges.values())[0]])
    route = []
    for road, nxt in zip(roads, roads[1:]):
        hop = find_lane_route([l.id for l in road.lanes], [l.id for l in nxt.lanes], adjacency)
        if hop is None:
            raise ScenarioError(f"no movement joins road {road.id!r} to {nxt.id!r}")
        route.append(hop[0])
    last = roads[-1].lanes
    route.append(last[int(rng.integers(len(last)))].id)
    return tuple(route)


def poisson_flows(network, veh_per_hour, episode_length, rng):
    """
    Poisson arrivals on every boundary source road, rounded down to whole
    seconds, each with a uniformly drawn exit other than its own side.
    """
    rate = veh_per_hour / 3600.0
    sources = sorted((r for r in network.roads if network.is_boundary(r.source)), key=lambda r: r.id)
    sinks = sorted((r for r in network.roads if network.is_boundary(r.target)), key=lambda r: r.id)
    adjacency = lane_successors(network.movement_at)
    path_cache = {}
    flows = []
    for entry in sources:
        exits = [s for s in sinks if s.id != entry.id.replace('in_', 'out_', 1)]
        t = 0.0
        while True:
            t += rng.exponential(1.0 / rate)
            if t >= episode_length:
                break
            target = exits[int(rng.integers(len(exits)))]
            key = (entry.source, target.target)
            if key not in path_cache:
                path_cache[key] = sorted(nx.all_shortest_paths(network.graph, *key))
            paths = path_cache[key]
            node_path = paths[int(rng.integers(len(paths)))]
            flows.append(Flow(float(math.floor(t)), _lane_route(network, node_path, adjacency, rng)))
    flows.sort(key=lambda f: f.entry_time_s)
    return flows


def generate_grid_scenario(rows, cols, demand='medium', seed=0, phase_plan=None,
                           episode_length=None, geometry=None):
    """
    Builds a complete grid scenario.

    Args:
        rows (int), cols (int): Grid size.
        demand (str | float): A profile name from config.yaml or veh/h per entry.
        seed (int): Seed for arrivals and route choice.
        phase_plan (str): '4', '8' or 'mixed' (4-phase and 8-phase alternating).
        episode_length (int): Seconds; defaults to the simulation config.

    Returns:
        Scenario: validated network plus flows, sorted by entry time.
    """
    phase_plan = str(phase_plan or CONFIG['scenario']['phase_plan'])
    episode_length = int(episode_length or CONFIG['simulation']['episode_length_s'])
    veh_per_hour = _resolve_demand(demand)
    rng = np.random.default_rng(seed)

    network = build_grid_network(rows, cols, phase_plan, geometry)
    flows = poisson_flows(network, veh_per_hour, episode_length, rng)
    for flow in flows:
        network.validate_route(flow.route)

    name = f"grid{rows}x{cols}_{demand}_s{seed}"
    logger.info("Generated %s: %d intersections, %d roads, %d vehicles.",
                name, len(network.intersections), len(network.roads), len(flows))
    return Scenario(
        network=network, flows=flows, episode_length_s=episode_length, name=name,
        metadata={'generator': 'grid', 'rows': rows, 'cols': cols, 'demand': demand,
                  'veh_per_hour': veh_per_hour, 'seed': seed, 'phase_plan': phase_plan},
    )


RECIPE_KEYS = ('rows', 'cols', 'demand', 'seed', 'phase_plan', 'episode_length_s', 'geometry')


def scenario_from_recipe(recipe, name=None):
    """
    Expands a generator recipe (a mapping with `generator: grid` and the
    arguments of generate_grid_scenario) into the scenario it describes.
    Pinning `geometry` and a numeric `demand` in the recipe keeps the result
    independent of config.yaml.
    """
    if recipe.get('generator') != 'grid':
        raise ScenarioError(f"unsupported scenario generator {recipe.get('generator')!r}; expected 'grid'")
    unknown = set(recipe) - set(RECIPE_KEYS) - {'generator'}
    if unknown:
        logger.warning("Ignoring unknown recipe keys: %s", ", ".join(sorted(unknown)))
    try:
        rows, cols = int(recipe['rows']), int(recipe['cols'])
        seed = int(recipe.get('seed', 0))
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioError(f"grid recipe needs integer rows, cols and seed: {e}") from e
    scenario = generate_grid_scenario(
        rows, cols, demand=recipe.get('demand', 'medium'), seed=seed,
        phase_plan=recipe.get('phase_plan'), episode_length=recipe.get('episode_length_s'),
        geometry=recipe.get('geometry'))
    if name:
        scenario.name = name
    return scenario
