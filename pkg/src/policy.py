"""
policy.py

Turns simulator state into the eight movement features, scores phases with a
shared priority function and picks the most urgent phase. Also holds the
classical baselines (MaxPressure, fixed-time cycling, uniform random).
"""
import logging
from typing import NamedTuple

import numpy as np

from src.expr_core import (
    FLOAT_MAX, VARIABLES, ExprTree, PriorityFunction, build_tree, evaluate_batch, parse,
)

logger = logging.getLogger(__name__)


class LaneFeatures(NamedTuple):
    WI: float
    WO: float
    CI: float
    CO: float
    DI: float
    DO: float
    LI: float
    LO: float


def intersection_vehicle_total(sim, intersection_idx):
    """
    Normalisation denominator: vehicles on every lane incident to the
    intersection (incoming and outgoing), at least 1.
    """
    inter = sim.network.intersections[intersection_idx]
    lanes = set(sim.network.incoming_lanes(inter.id)) | set(sim.network.outgoing_lanes(inter.id))
    return max(1, sum(sim.occupancy(lid) for lid in lanes))


def lane_counts(sim, lid, range_m):
    """(waiting, total, within range of the downstream stop line) for one lane."""
    near = sum(1 for d in sim.distances_to_stop_line(lid) if d <= range_m)
    return sim.queue_length(lid), sim.occupancy(lid), near


def _green_duration(sim, green_duration):
    return sim.config.decision_interval_s if green_duration is None else green_duration


def _features_from_counts(in_counts, out_counts, in_cap, out_cap, total):
    wi, ci, di = in_counts
    wo, co, do = out_counts
    capacity = in_cap + out_cap
    return LaneFeatures(
        WI=wi / total, WO=wo / total, CI=ci / total, CO=co / total,
        DI=di / total, DO=do / total, LI=ci / capacity, LO=co / capacity,
    )


def extract_features(sim, intersection_idx, movement_idx, green_duration=None):
    inter = sim.network.intersections[intersection_idx]
    movement = inter.movements[movement_idx]
    green = _green_duration(sim, green_duration)
    lanes = sim.network.lanes
    in_counts = lane_counts(sim, movement.in_lane, green * lanes[movement.in_lane].speed_mps)
    out_counts = lane_counts(sim, movement.out_lane, green * lanes[movement.out_lane].speed_mps)
    return _features_from_counts(in_counts, out_counts, sim.capacity(movement.in_lane),
                                 sim.capacity(movement.out_lane),
                                 intersection_vehicle_total(sim, intersection_idx))


def feature_matrix(sim, intersection_idx, green_duration=None):
    """(n_movements, 8) matrix of LaneFeatures rows for one intersection."""
    inter = sim.network.intersections[intersection_idx]
    green = _green_duration(sim, green_duration)
    total = intersection_vehicle_total(sim, intersection_idx)
    counts = {}
    rows = []
    for movement in inter.movements:
        for lid in (movement.in_lane, movement.out_lane):
            if lid not in counts:
                counts[lid] = lane_counts(sim, lid, green * sim.network.lanes[lid].speed_mps)
        rows.append(_features_from_counts(counts[movement.in_lane], counts[movement.out_lane],
                                          sim.capacity(movement.in_lane),
                                          sim.capacity(movement.out_lane), total))
    return np.array(rows, dtype=np.float64).reshape(len(rows), len(VARIABLES))


def _saturating_sum(values):
    total = 0.0
    for value in values:
        total = min(FLOAT_MAX, max(-FLOAT_MAX, total + float(value)))
    return total


def aggregate_phase_scores(inter, movement_scores):
    return np.array([_saturating_sum(movement_scores[m] for m in phase) for phase in inter.phases])


def _as_tree(policy):
    if isinstance(policy, ExprTree):
        return policy
    if isinstance(policy, str):
        policy = parse(policy)
    return build_tree(policy)


def phase_scores(policy, sim, intersection_idx):
    tree = _as_tree(policy)
    inter = sim.network.intersections[intersection_idx]
    movement_scores = evaluate_batch(tree, feature_matrix(sim, intersection_idx))
    return aggregate_phase_scores(inter, movement_scores)


def phase_decision(policy, sim, intersection_idx):
    """Argmax of summed movement priorities; ties go to the lowest phase index."""
    return int(np.argmax(phase_scores(policy, sim, intersection_idx)))


def max_pressure_decision(sim, intersection_idx):
    """
    Phase pressure is the sum over its movements of
    (incoming queue - outgoing queue), on raw vehicle counts.
    """
    inter = sim.network.intersections[intersection_idx]
    pressures = [
        sum(sim.queue_length(inter.movements[m].in_lane) - sim.queue_length(inter.movements[m].out_lane)
            for m in phase)
        for phase in inter.phases
    ]
    return int(np.argmax(pressures))


def fixed_time_decision(n_phases, t, decision_interval=20):
    """Round-robin: one decision interval per phase."""
    return int(t // decision_interval) % n_phases


def feature_frequency(policies):
    """Occurrences of each variable token across the given policies."""
    counts = {var.text: 0 for var in VARIABLES}
    for policy in policies:
        for token in policy:
            if token.is_variable:
                counts[token.text] += 1
    return counts


class PriorityController:
    """Shared symbolic priority function applied at every intersection."""

    def __init__(self, policy):
        self.policy = policy if isinstance(policy, PriorityFunction) else parse(str(policy))
        self.tree = build_tree(self.policy)

    def __call__(self, sim, intersection_idx):
        return phase_decision(self.tree, sim, intersection_idx)


class MaxPressureController:
    def __call__(self, sim, intersection_idx):
        return max_pressure_decision(sim, intersection_idx)


class FixedTimeController:
    def __init__(self, decision_interval=20):
        self.decision_interval = decision_interval

    def __call__(self, sim, intersection_idx):
        n_phases = len(sim.network.intersections[intersection_idx].phases)
        return fixed_time_decision(n_phases, sim.time, self.decision_interval)


class RandomController:
    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)

    def __call__(self, sim, intersection_idx):
        return int(self.rng.integers(len(sim.network.intersections[intersection_idx].phases)))


BASELINE_NAMES = ('maxpressure', 'fixedtime', 'random')


def build_controller(name, seed=0, decision_interval=20):
    """
    Controller by name: 'maxpressure', 'fixedtime', 'random' or
    'policy:<canonical token text>'. Each call returns a fresh controller.
    """
    key = name.strip()
    if key.lower() == 'maxpressure':
        return MaxPressureController()
    if key.lower() == 'fixedtime':
        return FixedTimeController(decision_interval)
    if key.lower() == 'random':
        return RandomController(seed)
    if key.lower().startswith('policy:'):
        return PriorityController(parse(key[len('policy:'):]))
    raise ValueError(f"Unknown controller {name!r}; expected one of "
                     f"{', '.join(BASELINE_NAMES)} or policy:<tokens>")
