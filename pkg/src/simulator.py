"""
simulator.py

Deterministic lane-queue traffic microsimulator.

Each lane holds a FIFO of vehicles travelling at free-flow speed and a FIFO
point queue at its stop line. Queues discharge only through movements of the
active green phase at a fixed saturation rate and only into lanes with spare
capacity. A phase change inserts an all-red clearance interval. Time advances
in whole 1-second ticks; the order inside a tick is release, discharge,
advance.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.config import SimulationConfig
from src.traffic_network import Flow

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class Vehicle:
    id: int
    route: tuple
    entry_time: float
    exit_time: Optional[float] = None
    route_pos: int = 0
    lane_enter_time: int = 0
    arrive_at: int = 0

    @property
    def lane(self):
        return self.route[self.route_pos]

    @property
    def next_lane(self):
        nxt = self.route_pos + 1
        return self.route[nxt] if nxt < len(self.route) else None


@dataclass(frozen=True)
class EpisodeMetrics:
    avg_travel_time: float
    throughput: float
    completed: int
    entered: int

    @property
    def raw_reward(self):
        """Reciprocal average travel time, or None for an empty episode."""
        if self.avg_travel_time <= 0:
            return None
        return 1.0 / self.avg_travel_time


@dataclass
class SignalState:
    phase: int = 0
    all_red_remaining: int = 0
    green_remaining: int = 0
    credits: list = field(default_factory=list)

    @property
    def in_all_red(self):
        return self.all_red_remaining > 0

    @property
    def phase_clock(self):
        return self.all_red_remaining if self.in_all_red else self.green_remaining


class Simulation:
    """Mutable episode state over a static TrafficNetwork."""

    def __init__(self, network, flows, config: SimulationConfig = None):
        self.network = network
        self.config = config or SimulationConfig()
        self.time = 0

        order = sorted(range(len(flows)), key=lambda i: (flows[i].entry_time_s, i))
        self.vehicles = [Vehicle(id=i, route=tuple(flows[i].route), entry_time=flows[i].entry_time_s)
                         for i in order]
        self._next_release = 0

        self.moving = {lid: deque() for lid in network.lane_order}
        self.queues = {lid: deque() for lid in network.lane_order}
        self.backlog = {}
        for vehicle in self.vehicles:
            self.backlog.setdefault(vehicle.route[0], deque())
        self._backlog_lanes = sorted(self.backlog, key=network.lane_position.__getitem__)

        self.signals = [SignalState(credits=[0.0] * len(inter.movements))
                        for inter in network.intersections]

        self.entered = 0
        self.completed = 0
        self._completed_travel_time = 0.0

    # --- Observation -------------------------------------------------------

    def occupancy(self, lid):
        return len(self.moving[lid]) + len(self.queues[lid])

    def queue_length(self, lid):
        return len(self.queues[lid])

    def capacity(self, lid):
        return self.network.lanes[lid].capacity

    def distances_to_stop_line(self, lid):
        """Distance (m) of every vehicle on the lane from its downstream stop line."""
        lane = self.network.lanes[lid]
        moving = [max(0.0, lane.length_m - lane.speed_mps * (self.time - v.lane_enter_time))
                  for v in self.moving[lid]]
        return moving + [0.0] * len(self.queues[lid])

    def is_green(self, intersection_idx, movement_idx):
        signal = self.signals[intersection_idx]
        if signal.in_all_red:
            return False
        return movement_idx in self.network.intersections[intersection_idx].phases[signal.phase]

    def count_in_network(self):
        """Vehicles physically present: source backlogs, moving and queued."""
        return (sum(len(q) for q in self.backlog.values())
                + sum(len(q) for q in self.moving.values())
                + sum(len(q) for q in self.queues.values()))

    # --- Control -----------------------------------------------------------

    def set_phase(self, intersection_id, phase_index, green_duration=None):
        """
        Requests a phase. A different phase starts with an all-red interval;
        the same phase simply extends its green.
        """
        idx = self.network.intersection_index[intersection_id]
        n_phases = len(self.network.intersections[idx].phases)
        if not 0 <= phase_index < n_phases:
            raise ValueError(f"phase {phase_index} out of range for intersection "
                             f"{intersection_id!r} with {n_phases} phases")
        if green_duration is None:
            green_duration = self.config.decision_interval_s
        signal = self.signals[idx]
        if phase_index == signal.phase:
            signal.green_remaining = green_duration - signal.all_red_remaining
            return
        signal.phase = phase_index
        signal.all_red_remaining = self.config.all_red_s
        signal.green_remaining = green_duration - self.config.all_red_s
        signal.credits = [0.0] * len(signal.credits)

    # --- Dynamics ----------------------------------------------------------

    def step(self, dt=1):
        """Advances the simulation by dt seconds in 1-second ticks."""
        ticks = int(dt)
        if ticks != dt or ticks <= 0:
            raise ValueError(f"dt must be a positive whole number of seconds, got {dt}")
        for _ in range(ticks):
            self._tick()

    def _tick(self):
        t = self.time
        self._release(t)
        for idx, signal in enumerate(self.signals):
            if signal.in_all_red:
                signal.all_red_remaining -= 1
                continue
            self._discharge(idx, signal, t)
            if signal.green_remaining > 0:
                signal.green_remaining -= 1
        self.time = t + 1
        self._advance(self.time)

    def _enter_lane(self, vehicle, route_pos, when):
        lane = self.network.lanes[vehicle.route[route_pos]]
        vehicle.route_pos = route_pos
        vehicle.lane_enter_time = when
        vehicle.arrive_at = when + lane.travel_ticks
        self.moving[lane.id].append(vehicle)

    def _release(self, t):
        vehicles = self.vehicles
        while self._next_release < len(vehicles) and vehicles[self._next_release].entry_time <= t:
            vehicle = vehicles[self._next_release]
            self.backlog[vehicle.route[0]].append(vehicle)
            self.entered += 1
            self._next_release += 1
        for lid in self._backlog_lanes:
            waiting = self.backlog[lid]
            while waiting and self.occupancy(lid) < self.capacity(lid):
                self._enter_lane(waiting.popleft(), 0, t)

    def _discharge(self, idx, signal, t):
        inter = self.network.intersections[idx]
        rate = self.config.saturation_rate
        credits = signal.credits
        for m_idx in inter.phases[signal.phase]:
            movement = inter.movements[m_idx]
            queue = self.queues[movement.in_lane]
            if not queue or queue[0].next_lane != movement.out_lane:
                credits[m_idx] = 0.0
                continue
            credits[m_idx] = min(1.0, credits[m_idx] + rate)
            if credits[m_idx] >= 1.0 and self.occupancy(movement.out_lane) < self.capacity(movement.out_lane):
                vehicle = queue.popleft()
                credits[m_idx] -= 1.0
                self._enter_lane(vehicle, vehicle.route_pos + 1, t + 1)

    def _advance(self, now):
        for lid, moving in self.moving.items():
            while moving and moving[0].arrive_at <= now:
                vehicle = moving.popleft()
                if vehicle.route_pos == len(vehicle.route) - 1:
                    vehicle.exit_time = vehicle.arrive_at
                    self.completed += 1
                    self._completed_travel_time += vehicle.exit_time - vehicle.entry_time
                else:
                    self.queues[lid].append(vehicle)

    # --- Metrics -----------------------------------------------------------

    def metrics(self, episode_length=None):
        """
        Average travel time over every vehicle that entered; vehicles still in
        the network contribute the time they have spent so far.
        """
        end = self.time
        length = episode_length if episode_length is not None else end
        total = self._completed_travel_time
        for vehicle in self.vehicles[:self._next_release]:
            if vehicle.exit_time is None:
                total += end - vehicle.entry_time
        avg = total / self.entered if self.entered else 0.0
        throughput = self.completed / (length / 60.0) if length > 0 else 0.0
        return EpisodeMetrics(avg_travel_time=avg, throughput=throughput,
                              completed=self.completed, entered=self.entered)


def run_episode(network, flows, controller, episode_length, decision_interval=None,
                config: SimulationConfig = None, on_tick=None):
    """
    Simulates one episode and returns its EpisodeMetrics.

    Every decision_interval seconds the controller is asked once per
    intersection, in network order: controller(sim, intersection_idx) -> phase.
    on_tick, if given, is called with the simulation after every tick.
    """
    config = config or SimulationConfig()
    decision_interval = decision_interval or config.decision_interval_s
    sim = Simulation(network, flows, config)
    for t in range(int(episode_length)):
        if t % decision_interval == 0:
            for idx, inter in enumerate(network.intersections):
                sim.set_phase(inter.id, int(controller(sim, idx)), decision_interval)
        sim.step(1)
        if on_tick is not None:
            on_tick(sim)
    return sim.metrics(episode_length)


def jitter_flows(flows, noise_bound, seed):
    """
    Displaces each entry time by an integer drawn uniformly from
    [-noise_bound, noise_bound], clamped at 0. Routes are unchanged.
    """
    if noise_bound < 0:
        raise ValueError(f"noise_bound must be nonnegative, got {noise_bound}")
    if noise_bound == 0:
        return list(flows)
    rng = np.random.default_rng(seed)
    shifts = rng.integers(-int(noise_bound), int(noise_bound) + 1, size=len(flows))
    return [Flow(entry_time_s=max(0.0, f.entry_time_s + float(s)), route=f.route)
            for f, s in zip(flows, shifts)]
