"""Network representation: movements, queues, phases and their connectivity.

A queue is a lane segment in front of an intersection stop line.  Queues are
wired to each other through downstream/upstream sets, and a turn-ratio table
gives the share of a queue's discharge that continues to each downstream
queue (or leaves the network through the sink).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Iterable, Mapping

ORIENTATIONS = ("E", "S", "W", "N")
DIRECTIONS = ("straight", "left", "right")
SINK = "sink"

_DIR_CODES = {"s": "straight", "l": "left", "r": "right"}

DEFAULT_SPEED = 10.0  # m/s
DEFAULT_VEHICLE_LENGTH = 5.0  # m, vehicle plus headway
DEFAULT_DEPARTURE_RATE = 1.3  # vehicles/s
RATIO_TOL = 1e-9


class NetworkError(ValueError):
    """Raised when a network description fails validation.

    ``diagnostics`` holds every problem found, not just the first one.
    """

    def __init__(self, diagnostics: list[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


@dataclass(frozen=True)
class Movement:
    origin: str
    direction: str
    controllable: bool = True

    @classmethod
    def parse(cls, text: str) -> "Movement":
        """Parse ``"W-s"`` / ``"E-left"`` style movement labels.

        Right turns are uncontrollable unless written with a trailing ``!``.
        """
        forced = text.endswith("!")
        body = text.rstrip("!")
        try:
            origin, code = body.split("-", 1)
        except ValueError:
            raise NetworkError([f"bad movement label {text!r}"]) from None
        direction = _DIR_CODES.get(code, code)
        if origin not in ORIENTATIONS or direction not in DIRECTIONS:
            raise NetworkError([f"bad movement label {text!r}"])
        controllable = forced or direction != "right"
        return cls(origin, direction, controllable)

    def label(self) -> str:
        return f"{self.origin}-{self.direction[0]}"


@dataclass(frozen=True)
class Queue:
    id: str
    intersection: str
    movements: frozenset = frozenset()
    capacity: float = math.inf
    length: float = 300.0
    weight: float = 1.0
    speed: float = DEFAULT_SPEED
    departure_rate: float = DEFAULT_DEPARTURE_RATE
    downstream: tuple = ()
    upstream: tuple = ()

    @property
    def controllable(self) -> bool:
        # a queue shared by straight and right movements still gets a signal
        return any(m.controllable for m in self.movements) or not self.movements

    @property
    def is_entry(self) -> bool:
        return not self.upstream


@dataclass(frozen=True)
class Phase:
    id: str
    intersection: str
    queues: tuple


@dataclass(frozen=True)
class Intersection:
    id: str
    queues: tuple
    phases: tuple


@dataclass(frozen=True)
class GridInfo:
    """Geometry kept alongside grid-generated networks (used for routing)."""

    rows: int
    cols: int
    road_length: float
    template: object = None  # GridTemplate used to build the layout


@dataclass(frozen=True)
class NetworkSpec:
    intersections: tuple
    queues: tuple
    phases: tuple
    turn_ratios: Mapping = field(default_factory=dict)
    vehicle_length: float = DEFAULT_VEHICLE_LENGTH
    grid: GridInfo | None = None

    def __post_init__(self):
        ratios = {q: MappingProxyType(dict(row)) for q, row in self.turn_ratios.items()}
        object.__setattr__(self, "turn_ratios", MappingProxyType(ratios))
        object.__setattr__(self, "_qidx", {q.id: i for i, q in enumerate(self.queues)})
        object.__setattr__(self, "_pidx", {p.id: i for i, p in enumerate(self.phases)})
        object.__setattr__(self, "_nidx", {n.id: i for i, n in enumerate(self.intersections)})

    # lookups ---------------------------------------------------------------
    def queue(self, qid: str) -> Queue:
        return self.queues[self._qidx[qid]]

    def phase(self, pid: str) -> Phase:
        return self.phases[self._pidx[pid]]

    def intersection(self, nid: str) -> Intersection:
        return self.intersections[self._nidx[nid]]

    def queue_index(self, qid: str) -> int:
        return self._qidx[qid]

    def phase_index(self, pid: str) -> int:
        return self._pidx[pid]

    def intersection_index(self, nid: str) -> int:
        return self._nidx[nid]

    @property
    def entry_queues(self) -> list[str]:
        return [q.id for q in self.queues if q.is_entry]

    def gamma(self, q: str, qd: str) -> float:
        return self.turn_ratios.get(q, {}).get(qd, 0.0)

    def with_turn_ratios(self, ratios: Mapping) -> "NetworkSpec":
        spec = replace(self, turn_ratios=ratios)
        validate(spec)
        return spec


def validate(spec: NetworkSpec) -> None:
    """Check every structural invariant; raise :class:`NetworkError` listing all failures."""
    diags: list[str] = []
    qids = [q.id for q in spec.queues]
    if len(set(qids)) != len(qids):
        diags.append("duplicate queue ids")
    known_q = set(qids)
    known_n = {n.id for n in spec.intersections}
    known_p = {p.id for p in spec.phases}
    if not spec.intersections:
        diags.append("network has no intersections")
    l = spec.vehicle_length
    if not l > 0:
        diags.append(f"vehicle length must be positive, got {l}")

    for q in spec.queues:
        if q.intersection not in known_n:
            diags.append(f"queue {q.id}: unknown intersection {q.intersection!r}")
        if not q.capacity > 0:
            diags.append(f"queue {q.id}: capacity must be > 0")
        if not q.length > 0:
            diags.append(f"queue {q.id}: road length must be > 0")
        if not q.weight >= 0:
            diags.append(f"queue {q.id}: weight must be >= 0")
        if not q.speed > 0 or not q.departure_rate > 0:
            diags.append(f"queue {q.id}: speed and departure rate must be > 0")
        if math.isfinite(q.capacity) and q.capacity * l > q.length * (1 + 1e-12):
            diags.append(
                f"queue {q.id}: capacity {q.capacity} x vehicle length {l} exceeds road length {q.length}"
            )
        for d in q.downstream:
            if d not in known_q:
                diags.append(f"queue {q.id}: dangling downstream reference {d!r}")
        for u in q.upstream:
            if u not in known_q:
                diags.append(f"queue {q.id}: dangling upstream reference {u!r}")
        seen = set()
        for m in q.movements:
            if (m.origin, m.direction) in seen:
                diags.append(f"queue {q.id}: movement {m.label()} repeated")
            seen.add((m.origin, m.direction))

    if not diags:
        for q in spec.queues:
            for d in q.downstream:
                if q.id not in spec.queue(d).upstream:
                    diags.append(f"connectivity not symmetric: {d} downstream of {q.id} but {q.id} not upstream of {d}")
                qd = spec.queue(d)
                # head/tail of a platoon must advance: f - l*h > 0
                if q.speed <= l * qd.departure_rate:
                    diags.append(f"link {q.id}->{d}: speed {q.speed} too low for vehicle length {l}")
            for u in q.upstream:
                if q.id not in spec.queue(u).downstream:
                    diags.append(f"connectivity not symmetric: {u} upstream of {q.id} but {q.id} not downstream of {u}")

    # per-intersection movement uniqueness
    per_node: dict[str, set] = {}
    for q in spec.queues:
        bucket = per_node.setdefault(q.intersection, set())
        for m in q.movements:
            key = (m.origin, m.direction)
            if key in bucket:
                diags.append(f"intersection {q.intersection}: movement {m.label()} appears on two queues")
            bucket.add(key)

    # phases
    in_phase: set[str] = set()
    for p in spec.phases:
        if p.intersection not in known_n:
            diags.append(f"phase {p.id}: unknown intersection {p.intersection!r}")
        if not p.queues:
            diags.append(f"phase {p.id}: empty queue set")
        for qid in p.queues:
            if qid not in known_q:
                diags.append(f"phase {p.id}: dangling queue reference {qid!r}")
                continue
            qq = spec.queue(qid)
            if qq.intersection != p.intersection:
                diags.append(f"phase {p.id}: queue {qid} belongs to another intersection")
            if not qq.controllable:
                diags.append(f"phase {p.id}: queue {qid} has only uncontrollable movements")
            in_phase.add(qid)
    for n in spec.intersections:
        if not n.phases:
            diags.append(f"intersection {n.id}: no phases")
        for pid in n.phases:
            if pid not in known_p:
                diags.append(f"intersection {n.id}: dangling phase reference {pid!r}")
            elif spec.phase(pid).intersection != n.id:
                diags.append(f"intersection {n.id}: phase {pid} belongs elsewhere")
        for qid in n.queues:
            if qid not in known_q:
                diags.append(f"intersection {n.id}: dangling queue reference {qid!r}")
    for q in spec.queues:
        if q.controllable and q.id not in in_phase:
            diags.append(f"controllable queue {q.id} is in no phase")

    # turn ratios
    for q in spec.queues:
        row = spec.turn_ratios.get(q.id)
        if row is None:
            if q.downstream:
                diags.append(f"queue {q.id}: missing turn ratios")
            continue
        allowed = set(q.downstream) | {SINK}
        for d, g in row.items():
            if d not in allowed:
                diags.append(f"queue {q.id}: turn ratio to non-downstream {d!r}")
            if not 0.0 <= g <= 1.0:
                diags.append(f"queue {q.id}: turn ratio {g} outside [0, 1]")
        total = sum(row.values())
        if abs(total - 1.0) > RATIO_TOL:
            diags.append(f"queue {q.id}: ratios sum to {total:.12g}")

    if diags:
        raise NetworkError(diags)


def make_spec(
    intersections: Iterable[Intersection],
    queues: Iterable[Queue],
    phases: Iterable[Phase],
    turn_ratios: Mapping | None = None,
    vehicle_length: float = DEFAULT_VEHICLE_LENGTH,
    grid: GridInfo | None = None,
) -> NetworkSpec:
    spec = NetworkSpec(
        tuple(intersections), tuple(queues), tuple(phases),
        turn_ratios or {}, vehicle_length, grid,
    )
    validate(spec)
    return spec


def build_network(document: Mapping) -> NetworkSpec:
    """Build a validated network from the ``network`` (or ``grid``) section of a scenario.

    Explicit networks list intersections, queues (with ``downstream`` ids) and
    phases; upstream sets are derived from the downstream lists when omitted.
    Turn ratios are rows ``{queue: {downstream or "sink": share}}``.
    """
    if "grid" in document and "network" not in document:
        from .grid import grid_network

        # physical constants may sit in the grid or the sim section; grid wins
        g = {**document.get("sim", {}), **document["grid"]}
        return grid_network(
            int(g.get("rows", 1)), int(g.get("cols", 1)), float(g.get("road_length", 300.0)),
            speed=float(g.get("speed", DEFAULT_SPEED)),
            vehicle_length=float(g.get("vehicle_length", DEFAULT_VEHICLE_LENGTH)),
            departure_rate=float(g.get("departure_rate", DEFAULT_DEPARTURE_RATE)),
        )
    try:
        net = document["network"]
    except (KeyError, TypeError):
        raise NetworkError(["scenario has neither a 'network' nor a 'grid' section"]) from None

    diags: list[str] = []
    l = float(net.get("vehicle_length", DEFAULT_VEHICLE_LENGTH))
    defaults = net.get("defaults", {})
    raw_queues = net.get("queues", [])
    upstream: dict[str, list[str]] = {q["id"]: [] for q in raw_queues if "id" in q}
    for rq in raw_queues:
        for d in rq.get("downstream", []):
            if d in upstream:
                upstream[d].append(rq["id"])

    queues = []
    for rq in raw_queues:
        if "id" not in rq or "intersection" not in rq:
            diags.append(f"queue entry missing id/intersection: {rq!r}")
            continue
        try:
            movements = frozenset(Movement.parse(m) for m in rq.get("movements", []))
        except NetworkError as exc:
            diags.extend(f"queue {rq['id']}: {d}" for d in exc.diagnostics)
            continue
        length = float(rq.get("length", defaults.get("length", 300.0)))
        ups = tuple(rq.get("upstream", upstream[rq["id"]]))
        cap = rq.get("capacity", defaults.get("capacity"))
        if cap is None:
            cap = math.inf if not ups else length / l
        queues.append(Queue(
            id=rq["id"], intersection=rq["intersection"], movements=movements,
            capacity=float(cap), length=length,
            weight=float(rq.get("weight", defaults.get("weight", 1.0))),
            speed=float(rq.get("speed", defaults.get("speed", DEFAULT_SPEED))),
            departure_rate=float(rq.get("departure_rate", defaults.get("departure_rate", DEFAULT_DEPARTURE_RATE))),
            downstream=tuple(rq.get("downstream", [])),
            upstream=ups,
        ))
    phases = []
    for rp in net.get("phases", []):
        try:
            phases.append(Phase(rp["id"], rp["intersection"], tuple(rp["queues"])))
        except KeyError as exc:
            diags.append(f"phase entry missing {exc.args[0]!r}: {rp!r}")
    nodes = []
    for rn in net.get("intersections", []):
        nid = rn["id"]
        nq = tuple(rn.get("queues", [q.id for q in queues if q.intersection == nid]))
        npz = tuple(rn.get("phases", [p.id for p in phases if p.intersection == nid]))
        nodes.append(Intersection(nid, nq, npz))
    if diags:
        raise NetworkError(diags)

    ratios = {q: dict(row) for q, row in net.get("turn_ratios", {}).items()}
    for q in queues:
        if q.id not in ratios and not q.downstream:
            ratios[q.id] = {SINK: 1.0}
    return make_spec(nodes, queues, phases, ratios, l)


def permanent_green(spec: NetworkSpec) -> set[str]:
    """Queues outside every phase; they always face GREEN."""
    in_phase = {qid for p in spec.phases for qid in p.queues}
    return {q.id for q in spec.queues if q.id not in in_phase}
