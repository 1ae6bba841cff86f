"""
Grid Traffic Simulator

Deterministic discrete-time traffic engine for a rows x cols grid of
signalized intersections. One engine class is instantiated twice with
different VehicleDynamics to play the simulated and the "real" environment.

Conventions:
- x grows eastward, y grows southward; north of (x, y) is (x, y - 1).
- Intersection index = y * cols + x.
- Nodes just outside the grid are terminals; routes run terminal to terminal.
- Lane order for observations: approaches N, E, S, W, each with movements
  left, through, right. Vehicles on exit links count in the through lane.
"""

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .config import FlowSpec, GridSpec, TimingConfig, VehicleDynamics
from .models import ConfigError, MetricsReport
from .seeding import derive_rng

logger = logging.getLogger(__name__)

Node = Tuple[int, int]
Movement = Tuple[int, int]              # (approach, turn)
LaneKey = Tuple[Node, Node, int]        # (from node, to node, turn at to node)

NORTH, EAST, SOUTH, WEST = 0, 1, 2, 3
LEFT, THROUGH, RIGHT = 0, 1, 2
APPROACH_NAMES = ("N", "E", "S", "W")
TURN_NAMES = ("left", "through", "right")

NUM_PHASES = 8
OBS_SIZE = 24

VEHICLE_LENGTH = 5.0
MIN_GAP = 2.5
WAITING_SPEED = 0.1

# Offset from an intersection to the node on each side (N, E, S, W).
SIDE_OFFSETS: Tuple[Node, ...] = ((0, -1), (1, 0), (0, 1), (-1, 0))


def _all_turns(approach: int) -> FrozenSet[Movement]:
    return frozenset((approach, turn) for turn in (LEFT, THROUGH, RIGHT))


PHASES: Tuple[FrozenSet[Movement], ...] = (
    frozenset({(NORTH, THROUGH), (NORTH, RIGHT), (SOUTH, THROUGH), (SOUTH, RIGHT)}),
    frozenset({(EAST, THROUGH), (EAST, RIGHT), (WEST, THROUGH), (WEST, RIGHT)}),
    frozenset({(NORTH, LEFT), (SOUTH, LEFT)}),
    frozenset({(EAST, LEFT), (WEST, LEFT)}),
    _all_turns(NORTH),
    _all_turns(EAST),
    _all_turns(SOUTH),
    _all_turns(WEST),
)


def turn_of(prev: Node, node: Node, nxt: Node) -> int:
    """
    Turn made at `node` when arriving from `prev` and leaving to `nxt`.

    Raises:
        ValueError: for U-turns or non-adjacent nodes
    """
    d1 = (node[0] - prev[0], node[1] - prev[1])
    d2 = (nxt[0] - node[0], nxt[1] - node[1])
    if abs(d1[0]) + abs(d1[1]) != 1 or abs(d2[0]) + abs(d2[1]) != 1:
        raise ValueError(f"Nodes are not adjacent: {prev} -> {node} -> {nxt}")
    cross = d1[0] * d2[1] - d1[1] * d2[0]
    if cross > 0:
        return RIGHT
    if cross < 0:
        return LEFT
    if d1 == d2:
        return THROUGH
    raise ValueError(f"U-turn at {node}")


def approach_of(from_node: Node, to_node: Node) -> int:
    """Side of `to_node` that a link coming from `from_node` enters on."""
    offset = (from_node[0] - to_node[0], from_node[1] - to_node[1])
    return SIDE_OFFSETS.index(offset)


def safe_speed(gap: float, decel: float, dt: float) -> float:
    """Largest v such that moving v*dt and then braking at `decel` fits in `gap`."""
    if gap <= 0:
        return 0.0
    return decel * (-dt + math.sqrt(dt * dt + 2.0 * gap / decel))


# ============================================================
# TOPOLOGY
# ============================================================

@dataclass(frozen=True)
class Network:
    grid: GridSpec
    intersections: Tuple[Node, ...]
    incoming: Tuple[Tuple[LaneKey, ...], ...]
    outgoing: Tuple[Tuple[Optional[LaneKey], ...], ...]
    lanes: Tuple[LaneKey, ...]

    @property
    def size(self) -> int:
        return len(self.intersections)

    def is_intersection(self, node: Node) -> bool:
        return 0 <= node[0] < self.grid.cols and 0 <= node[1] < self.grid.rows

    def index(self, node: Node) -> int:
        return node[1] * self.grid.cols + node[0]

    def node(self, index: int) -> Node:
        return (index % self.grid.cols, index // self.grid.cols)

    def lane_for(self, route: Sequence[Node], leg: int) -> LaneKey:
        """Lane used on the leg-th link of a route."""
        a, b = route[leg], route[leg + 1]
        if leg + 2 < len(route):
            return (a, b, turn_of(a, b, route[leg + 2]))
        return (a, b, THROUGH)

    def validate_route(self, route: Sequence[Node]) -> None:
        if len(route) < 3:
            raise ConfigError(f"Route too short: {route}", offending_keys=["flow.entries.route"])
        if self.is_intersection(route[0]) or self.is_intersection(route[-1]):
            raise ConfigError(f"Route must start and end at terminals: {route}",
                              offending_keys=["flow.entries.route"])
        for node in route[1:-1]:
            if not self.is_intersection(node):
                raise ConfigError(f"Route leaves the grid at {node}: {route}",
                                  offending_keys=["flow.entries.route"])
        try:
            for k in range(1, len(route) - 1):
                turn_of(route[k - 1], route[k], route[k + 1])
        except ValueError as e:
            raise ConfigError(f"Invalid route {route}: {e}", offending_keys=["flow.entries.route"])


def build_network(spec: GridSpec) -> Network:
    """
    Index intersections by grid coordinates and enumerate every lane.

    Raises:
        ConfigError: for a zero-dimension grid
    """
    if spec.rows < 1 or spec.cols < 1:
        raise ConfigError(f"Grid must be at least 1x1, got {spec.rows}x{spec.cols}",
                          offending_keys=["grid.rows/cols"])
    intersections = tuple((x, y) for y in range(spec.rows) for x in range(spec.cols))

    def inside(node: Node) -> bool:
        return 0 <= node[0] < spec.cols and 0 <= node[1] < spec.rows

    incoming: List[Tuple[LaneKey, ...]] = []
    outgoing: List[Tuple[Optional[LaneKey], ...]] = []
    lanes: List[LaneKey] = []
    for node in intersections:
        ins: List[LaneKey] = []
        outs: List[Optional[LaneKey]] = []
        for dx, dy in SIDE_OFFSETS:
            side = (node[0] + dx, node[1] + dy)
            for turn in (LEFT, THROUGH, RIGHT):
                ins.append((side, node, turn))
                if inside(side):
                    outs.append((node, side, turn))
                else:
                    outs.append((node, side, THROUGH) if turn == THROUGH else None)
        incoming.append(tuple(ins))
        outgoing.append(tuple(outs))
        lanes.extend(ins)
        lanes.extend(k for k in outs if k is not None and not inside(k[1]))
    return Network(
        grid=spec,
        intersections=intersections,
        incoming=tuple(incoming),
        outgoing=tuple(outgoing),
        lanes=tuple(lanes),
    )


# ============================================================
# STATE
# ============================================================

@dataclass
class Vehicle:
    vid: int
    route: Tuple[Node, ...]
    leg: int = 0
    position: float = 0.0
    speed: float = 0.0
    entry_time: float = 0.0
    exit_time: Optional[float] = None


@dataclass
class SignalState:
    """Active phase plus yellow bookkeeping for one intersection."""
    phase: Optional[int] = None
    target: Optional[int] = None
    yellow_until: float = 0.0
    onset: Dict[Movement, float] = field(default_factory=dict)

    def permitted(self) -> FrozenSet[Movement]:
        if self.phase is None:
            return frozenset()
        if self.target is not None:
            return PHASES[self.phase] & PHASES[self.target]
        return PHASES[self.phase]

    def _switch(self, new: int, clock: float) -> None:
        before = self.permitted()
        self.phase = new
        self.target = None
        for movement in PHASES[new] - before:
            self.onset[movement] = clock

    def update(self, requested: int, clock: float, yellow: float) -> None:
        if self.target is not None and clock >= self.yellow_until:
            self._switch(self.target, clock)
        if self.phase is None:
            self._switch(requested, clock)
        elif self.target is not None:
            self.target = requested
        elif requested != self.phase:
            if yellow > 0:
                self.target = requested
                self.yellow_until = clock + yellow
            else:
                self._switch(requested, clock)


def arrival_schedule(flow: FlowSpec) -> List[Tuple[float, int, int]]:
    """(time, entry index, ordinal) for every scheduled vehicle, in time order."""
    arrivals: List[Tuple[float, int, int]] = []
    for index, entry in enumerate(flow.entries):
        if entry.count <= 0:
            continue
        if entry.poisson:
            rng = derive_rng(flow.seed, "arrivals", index)
            gaps = rng.exponential(entry.headway, size=entry.count - 1)
            times = entry.start + np.concatenate(([0.0], np.cumsum(gaps)))
        else:
            times = entry.start + entry.headway * np.arange(entry.count)
        arrivals.extend((float(t), index, j) for j, t in enumerate(times))
    arrivals.sort()
    return arrivals


class TrafficSim:
    """
    One engine instance (E_sim or E_real).

    `tick(phases)` spawns scheduled vehicles, then advances one dt under the
    requested phases. Metric accumulators are updated after every step.
    """

    def __init__(
        self,
        grid: GridSpec,
        flow: FlowSpec,
        dynamics: VehicleDynamics,
        timing: Optional[TimingConfig] = None,
        trace: bool = False,
    ):
        self.network = build_network(grid)
        self.flow = flow
        self.dynamics = dynamics
        self.timing = timing or TimingConfig()
        self.trace_enabled = trace
        for entry in flow.entries:
            self.network.validate_route(entry.route)

        self.clock = 0.0
        self.steps = 0
        self.lanes: Dict[LaneKey, List[Vehicle]] = {key: [] for key in self.network.lanes}
        self.signals = [SignalState() for _ in range(self.network.size)]
        self.vehicles: List[Vehicle] = []
        self.entered = 0
        self.exited = 0
        self._next_vid = 0

        self._schedule = arrival_schedule(flow)
        self._cursor = 0
        self._pending: Dict[LaneKey, Deque[Tuple[Node, ...]]] = {}

        self._queue_total = 0.0
        self._delay_total = 0.0
        self._delay_samples = 0
        self._reward_total = 0.0
        self.trace_rows: List[Tuple[float, int, int, int, int]] = []

    # ------------------------------------------------------------
    # observations
    # ------------------------------------------------------------

    @property
    def in_network(self) -> int:
        return sum(len(lane) for lane in self.lanes.values())

    def lane_counts(self, intersection: int) -> np.ndarray:
        counts = np.zeros(OBS_SIZE, dtype=float)
        for slot, key in enumerate(self.network.incoming[intersection]):
            counts[slot] = len(self.lanes[key])
        for slot, key in enumerate(self.network.outgoing[intersection]):
            if key is not None:
                counts[12 + slot] = len(self.lanes[key])
        return counts

    def observe_all(self) -> List[np.ndarray]:
        return [self.lane_counts(i) for i in range(self.network.size)]

    def pressure(self, intersection: int) -> float:
        counts = self.lane_counts(intersection)
        return float(abs(counts[:12].sum() - counts[12:].sum()))

    def waiting(self, intersection: int) -> int:
        return sum(
            1 for key in self.network.incoming[intersection]
            for veh in self.lanes[key] if veh.speed < WAITING_SPEED
        )

    def phase_of(self, intersection: int) -> int:
        phase = self.signals[intersection].phase
        return -1 if phase is None else phase

    # ------------------------------------------------------------
    # dynamics
    # ------------------------------------------------------------

    def spawn(self) -> int:
        """Queue due arrivals and insert at most one vehicle per entry lane."""
        while self._cursor < len(self._schedule) and self._schedule[self._cursor][0] <= self.clock:
            _, entry_index, _ = self._schedule[self._cursor]
            route = self.flow.entries[entry_index].route
            key = self.network.lane_for(route, 0)
            self._pending.setdefault(key, deque()).append(route)
            self._cursor += 1

        inserted = 0
        limit = self.network.grid.speed_limit
        for key in sorted(self._pending):
            queue = self._pending[key]
            if not queue:
                continue
            lane = self.lanes[key]
            if lane:
                tail = lane[-1]
                gap = tail.position - VEHICLE_LENGTH - MIN_GAP
                if gap < 0:
                    continue
                effective = gap + tail.speed ** 2 / (2.0 * self.dynamics.decel)
                speed = min(limit, safe_speed(effective, self.dynamics.decel, self.timing.dt))
            else:
                speed = limit
            veh = Vehicle(vid=self._next_vid, route=queue.popleft(), speed=speed, entry_time=self.clock)
            self._next_vid += 1
            lane.append(veh)
            self.vehicles.append(veh)
            self.entered += 1
            inserted += 1
        return inserted

    def _head_constraint(self, veh: Vehicle, key: LaneKey, permitted: FrozenSet[Movement]) -> Tuple[float, bool]:
        """Safe speed for the first vehicle of a lane and whether it may cross."""
        dyn = self.dynamics
        dt = self.timing.dt
        length = self.network.grid.link_length
        to_node = key[1]
        if not self.network.is_intersection(to_node):
            return math.inf, True

        distance = length - veh.position
        is_open = (approach_of(key[0], to_node), key[2]) in permitted
        if not is_open:
            braked = max(0.0, veh.speed - dyn.emergency_decel * dt)
            if veh.position + braked * dt <= length:
                return safe_speed(distance, dyn.decel, dt), False
            # cannot stop before the line even at emergency deceleration

        downstream = self.lanes[self.network.lane_for(veh.route, veh.leg + 1)]
        if not downstream:
            return math.inf, True
        tail = downstream[-1]
        gap = distance + tail.position - VEHICLE_LENGTH - MIN_GAP
        effective = gap + tail.speed ** 2 / (2.0 * dyn.decel)
        return safe_speed(effective, dyn.decel, dt), True

    def step(self, phases: Sequence[int]) -> None:
        """Advance every vehicle by one dt under the requested phases."""
        n = self.network.size
        if len(phases) != n:
            raise ValueError(f"Expected {n} phases, got {len(phases)}")
        for i, phase in enumerate(phases):
            if not 0 <= int(phase) < NUM_PHASES:
                raise ValueError(f"Phase out of range at intersection {i}: {phase}")
            self.signals[i].update(int(phase), self.clock, self.timing.yellow)

        dyn = self.dynamics
        dt = self.timing.dt
        limit = self.network.grid.speed_limit
        length = self.network.grid.link_length
        t_end = self.clock + dt

        crossers: List[Tuple[LaneKey, Vehicle, float]] = []
        for key in self.network.lanes:
            lane = self.lanes[key]
            if not lane:
                continue
            to_node = key[1]
            permitted: FrozenSet[Movement] = frozenset()
            signal: Optional[SignalState] = None
            if self.network.is_intersection(to_node):
                signal = self.signals[self.network.index(to_node)]
                permitted = signal.permitted()

            leader_pos = None
            leader_old: Optional[Vehicle] = None
            new_state: List[Tuple[Vehicle, float, float]] = []
            for idx, veh in enumerate(lane):
                can_cross = False
                if leader_old is None:
                    v_safe, can_cross = self._head_constraint(veh, key, permitted)
                else:
                    gap = leader_old.position - VEHICLE_LENGTH - MIN_GAP - veh.position
                    effective = gap + leader_old.speed ** 2 / (2.0 * dyn.decel)
                    v_safe = safe_speed(effective, dyn.decel, dt)

                held = False
                if idx == 0 and signal is not None and veh.speed == 0.0:
                    movement = (approach_of(key[0], to_node), key[2])
                    if movement in permitted and self.clock < signal.onset.get(movement, 0.0) + dyn.startup_delay:
                        held = True

                if held:
                    v_new = 0.0
                else:
                    v_new = min(veh.speed + dyn.accel * dt, limit, v_safe)
                    v_new = max(veh.speed - dyn.emergency_decel * dt, v_new, 0.0)
                pos_new = veh.position + v_new * dt
                if leader_pos is not None:
                    pos_new = max(veh.position, min(pos_new, leader_pos - VEHICLE_LENGTH))
                if not can_cross:
                    pos_new = min(pos_new, length)
                if dt > 0:
                    v_new = min(v_new, (pos_new - veh.position) / dt)

                leader_old = veh
                leader_pos = pos_new
                if can_cross and pos_new >= length and v_new > 0:
                    crossers.append((key, veh, pos_new))
                new_state.append((veh, pos_new, v_new))

            for veh, pos_new, v_new in new_state:
                veh.position = pos_new
                veh.speed = v_new

        blocked: List[LaneKey] = []
        for key, veh, pos_new in crossers:
            lane = self.lanes[key]
            if not self.network.is_intersection(key[1]):
                lane.remove(veh)
                veh.position = length
                veh.exit_time = t_end
                self.exited += 1
                continue
            target_key = self.network.lane_for(veh.route, veh.leg + 1)
            target = self.lanes[target_key]
            entry_pos = pos_new - length
            if target:
                entry_pos = min(entry_pos, target[-1].position - VEHICLE_LENGTH)
            if entry_pos < 0:
                veh.position = length
                veh.speed = 0.0
                blocked.append(key)
                continue
            lane.remove(veh)
            veh.leg += 1
            veh.position = entry_pos
            target.append(veh)

        for key in blocked:
            lane = self.lanes[key]
            for leader, follower in zip(lane, lane[1:]):
                if follower.position > leader.position - VEHICLE_LENGTH:
                    follower.position = max(0.0, leader.position - VEHICLE_LENGTH)
                    follower.speed = 0.0

        self.clock = t_end
        self.steps += 1
        self._record_step()

    def tick(self, phases: Sequence[int]) -> None:
        self.spawn()
        self.step(phases)

    def run_interval(self, phases: Sequence[int], duration: Optional[float] = None) -> int:
        """Hold `phases` for one action interval (or `duration`); returns steps taken."""
        duration = self.timing.action_interval if duration is None else duration
        count = int(round(duration / self.timing.dt))
        for _ in range(count):
            self.tick(phases)
        return count

    def _record_step(self) -> None:
        limit = self.network.grid.speed_limit
        for i in range(self.network.size):
            waiting = self.waiting(i)
            self._queue_total += waiting
            pressure = self.pressure(i)
            self._reward_total -= pressure
            for key in self.network.incoming[i]:
                lane = self.lanes[key]
                if lane:
                    mean_speed = sum(v.speed for v in lane) / len(lane)
                    self._delay_total += 1.0 - mean_speed / limit
                    self._delay_samples += 1
            if self.trace_enabled:
                self.trace_rows.append((self.clock, i, self.phase_of(i), waiting, int(pressure)))

    # ------------------------------------------------------------
    # episode summary
    # ------------------------------------------------------------

    def conservation_holds(self) -> bool:
        return self.entered == self.in_network + self.exited

    def metrics(self, horizon: Optional[float] = None) -> MetricsReport:
        """
        ATT uses `horizon` (default: the current clock) as exit time for
        vehicles still in the network.
        """
        end = self.clock if horizon is None else horizon
        if self.vehicles:
            att = sum(
                (v.exit_time if v.exit_time is not None else end) - v.entry_time
                for v in self.vehicles
            ) / len(self.vehicles)
        else:
            att = 0.0
        steps = self.steps
        n = self.network.size
        queue = self._queue_total / (steps * n) if steps else 0.0
        delay = self._delay_total / self._delay_samples if self._delay_samples else 0.0
        reward = self._reward_total / steps if steps else 0.0
        return MetricsReport(
            att=float(att),
            queue=float(queue),
            delay=float(min(1.0, max(0.0, delay))),
            throughput=int(self.exited),
            reward=float(reward),
        )

    def write_trace(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["t", "intersection", "phase", "queue", "pressure"])
            for t, i, phase, queue, pressure in self.trace_rows:
                writer.writerow([_fmt_time(t), i, phase, queue, pressure])


def _fmt_time(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


# ============================================================
# MODULE-LEVEL OPERATIONS
# ============================================================

def lane_counts(state: TrafficSim, intersection: int) -> np.ndarray:
    return state.lane_counts(intersection)


def pressure(state: TrafficSim, intersection: int) -> float:
    return state.pressure(intersection)


def metrics(state: TrafficSim, horizon: Optional[float] = None) -> MetricsReport:
    return state.metrics(horizon)


def fixed_cycle_phase(clock: float, cycle: float = 30.0) -> int:
    return int(clock // cycle) % NUM_PHASES


def run_fixed_cycle(
    grid: GridSpec,
    flow: FlowSpec,
    dynamics: VehicleDynamics,
    timing: Optional[TimingConfig] = None,
    cycle: float = 30.0,
    trace: bool = False,
) -> TrafficSim:
    """Run one episode of the fixed-cycle baseline (every phase in turn for `cycle` s)."""
    timing = timing or TimingConfig()
    sim = TrafficSim(grid, flow, dynamics, timing, trace=trace)
    steps = int(round(timing.horizon / timing.dt))
    logger.info(f"Fixed-cycle run: grid {grid.rows}x{grid.cols}, {steps} steps, dynamics {dynamics}")
    for _ in range(steps):
        phase = fixed_cycle_phase(sim.clock, cycle)
        sim.tick([phase] * sim.network.size)
    logger.info(f"Fixed-cycle run finished: entered={sim.entered}, exited={sim.exited}")
    return sim
