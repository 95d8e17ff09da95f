"""Crossroad topology: lane layout, Poisson vehicle drops, roles, mobility.

Two perpendicular streets cross at the region center where the base station
sits. Each street carries ``lanes_per_direction`` lanes per driving
direction. Vehicles are dropped along each lane by a 1-D Poisson process,
then roles are assigned: M vehicles become uplink users (I-VUEs) and K
become broadcast transmitters, each paired with the farthest vehicle inside
its broadcast range.

The topology is a value object backed by position arrays; mobility returns
a new topology, so callers can hold on to old snapshots safely.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import ScenarioConfig

HORIZONTAL = "h"
VERTICAL = "v"


class InsufficientVehiclesError(RuntimeError):
    """Raised when the dropped vehicles cannot fill all requested roles."""


@dataclass(frozen=True)
class Lane:
    street: str           # HORIZONTAL or VERTICAL
    offset_m: float       # lateral position of the lane center line
    direction: int        # +1 or -1 along the street axis


@dataclass(frozen=True)
class RoadLayout:
    extent_m: float = 1000.0
    lanes_per_direction: int = 2
    lane_width_m: float = 4.0

    @property
    def bs_position(self) -> tuple[float, float]:
        return (self.extent_m / 2.0, self.extent_m / 2.0)

    def lanes(self) -> list[Lane]:
        """All lanes of both streets, right-hand traffic."""
        center = self.extent_m / 2.0
        lanes = []
        for i in range(self.lanes_per_direction):
            off = (i + 0.5) * self.lane_width_m
            # Horizontal street: +x traffic south of center, -x north.
            lanes.append(Lane(HORIZONTAL, center - off, +1))
            lanes.append(Lane(HORIZONTAL, center + off, -1))
            # Vertical street: +y traffic east of center, -y west.
            lanes.append(Lane(VERTICAL, center + off, +1))
            lanes.append(Lane(VERTICAL, center - off, -1))
        return lanes


@dataclass(frozen=True)
class Vehicle:
    """Per-vehicle view materialized from the topology arrays."""
    id: int
    x: float
    y: float
    street: str
    direction: int        # sign of travel along the street axis
    speed_mps: float

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class VehicleTopology:
    layout: RoadLayout
    x: np.ndarray
    y: np.ndarray
    horizontal: np.ndarray     # bool: True = horizontal street
    direction: np.ndarray      # +1 / -1 along the street axis
    speed_mps: np.ndarray
    i_vues: tuple[int, ...]                 # vehicle ids, len M
    v2v_pairs: tuple[tuple[int, int], ...]  # (tx id, rx id), len K

    @property
    def num_vehicles(self) -> int:
        return self.x.shape[0]

    @property
    def num_ivues(self) -> int:
        return len(self.i_vues)

    @property
    def num_pairs(self) -> int:
        return len(self.v2v_pairs)

    def vehicle(self, vid: int) -> Vehicle:
        return Vehicle(vid, float(self.x[vid]), float(self.y[vid]),
                       HORIZONTAL if self.horizontal[vid] else VERTICAL,
                       int(self.direction[vid]), float(self.speed_mps[vid]))

    @property
    def vehicles(self) -> tuple[Vehicle, ...]:
        return tuple(self.vehicle(i) for i in range(self.num_vehicles))

    def role_ids(self) -> set[int]:
        used = set(self.i_vues)
        for tx, rx in self.v2v_pairs:
            used.add(tx)
            used.add(rx)
        return used

    def pair_tx_ids(self) -> np.ndarray:
        return np.array([t for t, _ in self.v2v_pairs], dtype=int)

    def pair_rx_ids(self) -> np.ndarray:
        return np.array([r for _, r in self.v2v_pairs], dtype=int)


def distance(a: Vehicle, b: Vehicle) -> float:
    return float(np.hypot(a.x - b.x, a.y - b.y))


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def topology_from_vehicles(layout: RoadLayout, vehicles, i_vues=(),
                           v2v_pairs=()) -> VehicleTopology:
    """Build the array-backed topology from Vehicle records (tests, tools)."""
    return VehicleTopology(
        layout=layout,
        x=np.array([v.x for v in vehicles], dtype=float),
        y=np.array([v.y for v in vehicles], dtype=float),
        horizontal=np.array([v.street == HORIZONTAL for v in vehicles]),
        direction=np.array([v.direction for v in vehicles], dtype=int),
        speed_mps=np.array([v.speed_mps for v in vehicles], dtype=float),
        i_vues=tuple(i_vues),
        v2v_pairs=tuple(tuple(p) for p in v2v_pairs),
    )


def _drop_vehicles(cfg: ScenarioConfig, layout: RoadLayout,
                   rng: np.random.Generator) -> list[Vehicle]:
    speed = cfg.vehicle_speed_kmh / 3.6
    vehicles: list[Vehicle] = []
    vid = 0
    for lane in layout.lanes():
        count = int(rng.poisson(cfg.vehicle_density * layout.extent_m))
        along = np.sort(rng.uniform(0.0, layout.extent_m, size=count))
        for pos in along:
            if lane.street == HORIZONTAL:
                x, y = float(pos), lane.offset_m
            else:
                x, y = lane.offset_m, float(pos)
            vehicles.append(Vehicle(vid, x, y, lane.street, lane.direction, speed))
            vid += 1
    return vehicles


def _assign_roles(vehicles: list[Vehicle], cfg: ScenarioConfig,
                  rng: np.random.Generator):
    """One attempt at drawing roles; returns None when pairing fails."""
    n = len(vehicles)
    order = rng.permutation(n)
    i_vues = tuple(int(v) for v in order[:cfg.num_ivues])
    tx_ids = [int(v) for v in order[cfg.num_ivues:cfg.num_ivues + cfg.num_pairs]]
    taken = set(i_vues) | set(tx_ids)
    pairs = []
    for tx in tx_ids:
        tx_veh = vehicles[tx]
        best, best_d = -1, -1.0
        for cand in vehicles:
            if cand.id in taken:
                continue
            d = distance(tx_veh, cand)
            if d <= cfg.broadcast_range_m and d > best_d:
                best, best_d = cand.id, d
        if best < 0:
            return None
        taken.add(best)
        pairs.append((tx, best))
    return i_vues, tuple(pairs)


def generate_topology(cfg: ScenarioConfig, rng) -> VehicleTopology:
    """Drop vehicles and assign roles; deterministic for a given seed.

    Raises ``InsufficientVehiclesError`` when roles cannot be filled after a
    bounded number of role re-draws (the drop itself is kept fixed so the
    failure is attributable to the drawn density, not to bad luck in role
    sampling alone).
    """
    rng = _as_rng(rng)
    layout = RoadLayout(cfg.region_m, cfg.lanes_per_direction, cfg.lane_width_m)
    vehicles = _drop_vehicles(cfg, layout, rng)
    needed = cfg.num_ivues + 2 * cfg.num_pairs
    if len(vehicles) < needed:
        raise InsufficientVehiclesError(
            f"dropped {len(vehicles)} vehicles but {needed} are needed "
            f"for {cfg.num_ivues} I-VUEs and {cfg.num_pairs} V2V pairs")
    for _ in range(50):
        roles = _assign_roles(vehicles, cfg, rng)
        if roles is not None:
            i_vues, pairs = roles
            return topology_from_vehicles(layout, vehicles, i_vues, pairs)
    raise InsufficientVehiclesError(
        "could not pair every V2V transmitter within broadcast range "
        f"({cfg.broadcast_range_m} m) after 50 role re-draws")


def advance_mobility(topology: VehicleTopology, dt: float) -> VehicleTopology:
    """Move every vehicle speed*dt along its lane, wrapping at the region edge."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    extent = topology.layout.extent_m
    step = topology.direction * topology.speed_mps * dt
    h = topology.horizontal
    x = np.where(h, (topology.x + step) % extent, topology.x)
    y = np.where(h, topology.y, (topology.y + step) % extent)
    return replace(topology, x=x, y=y)


def activate_pair(topology: VehicleTopology, cfg: ScenarioConfig,
                  rng) -> tuple[VehicleTopology, int]:
    """Activate one additional V2V pair from vehicles without a role.

    Returns the extended topology and the new pair's index. Candidate
    transmitters are tried in random order; the receiver is the farthest
    role-free vehicle in broadcast range, mirroring initial pairing.
    """
    rng = _as_rng(rng)
    used = topology.role_ids()
    free = [i for i in range(topology.num_vehicles) if i not in used]
    if len(free) < 2:
        raise InsufficientVehiclesError("no role-free vehicles left to activate")
    for tx in rng.permutation(free):
        tx = int(tx)
        tx_veh = topology.vehicle(tx)
        best, best_d = -1, -1.0
        for cand_id in free:
            if cand_id == tx:
                continue
            d = distance(tx_veh, topology.vehicle(cand_id))
            if d <= cfg.broadcast_range_m and d > best_d:
                best, best_d = cand_id, d
        if best >= 0:
            pairs = topology.v2v_pairs + ((tx, best),)
            return replace(topology, v2v_pairs=pairs), len(pairs) - 1
    raise InsufficientVehiclesError(
        "no role-free transmitter has a partner within broadcast range")
