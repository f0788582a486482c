"""Grid topology generator, OD routing and turn-ratio derivation.

Conventions: intersection ``(r, c)`` sits on row artery ``r`` (row 0 is the
northmost) and column ``c`` (column 0 is the westmost).  An approach is named
after the side vehicles arrive from, so the ``W`` approach carries eastbound
traffic.  Boundary edges are ``W{r}``, ``E{r}``, ``N{c}`` and ``S{c}``; an edge
is both an entry (traffic flowing into the grid) and an exit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .network import (
    DEFAULT_DEPARTURE_RATE,
    DEFAULT_SPEED,
    DEFAULT_VEHICLE_LENGTH,
    SINK,
    GridInfo,
    Intersection,
    Movement,
    NetworkError,
    NetworkSpec,
    Phase,
    Queue,
    make_spec,
)

# heading a vehicle travels in -> (row step, col step)
STEP = {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1)}
OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}
LEFT_OF = {"N": "W", "W": "S", "S": "E", "E": "N"}
RIGHT_OF = {v: k for k, v in LEFT_OF.items()}
GROUPS = ("rr", "rc", "cr", "cc")


@dataclass(frozen=True)
class GridTemplate:
    """Per-intersection layout: lanes per approach and the phase cycle."""

    lanes: tuple = (("l", ("left",)), ("sr", ("straight", "right")))
    phases: tuple = (("W-s", "E-s"), ("W-l", "E-l"), ("S-s", "N-s"), ("S-l", "N-l"))
    approaches: tuple = ("E", "S", "W", "N")


DEFAULT_TEMPLATE = GridTemplate()


def node_id(r: int, c: int) -> str:
    return f"n{r}_{c}"


def queue_id(r: int, c: int, approach: str, lane: str) -> str:
    return f"n{r}_{c}.{approach}.{lane}"


def turn_direction(heading_in: str, heading_out: str) -> str:
    if heading_out == heading_in:
        return "straight"
    if heading_out == LEFT_OF[heading_in]:
        return "left"
    if heading_out == RIGHT_OF[heading_in]:
        return "right"
    raise ValueError(f"U-turn {heading_in}->{heading_out} is not modeled")


def out_heading(heading_in: str, direction: str) -> str:
    return {"straight": heading_in, "left": LEFT_OF[heading_in], "right": RIGHT_OF[heading_in]}[direction]


def lane_for(template: GridTemplate, direction: str) -> str:
    for lane, dirs in template.lanes:
        if direction in dirs:
            return lane
    raise NetworkError([f"template has no lane for direction {direction!r}"])


def _inside(rows: int, cols: int, r: int, c: int) -> bool:
    return 0 <= r < rows and 0 <= c < cols


def grid_network(
    rows: int,
    cols: int,
    road_length: float = 300.0,
    template: GridTemplate = DEFAULT_TEMPLATE,
    *,
    speed: float = DEFAULT_SPEED,
    vehicle_length: float = DEFAULT_VEHICLE_LENGTH,
    departure_rate: float = DEFAULT_DEPARTURE_RATE,
    weight: float = 1.0,
    turn_ratios: Mapping | None = None,
) -> NetworkSpec:
    """Wire ``rows x cols`` intersections into a grid.

    Internal queues get capacity ``road_length / vehicle_length``; entry queues
    (boundary approaches) are unbounded.  Without explicit ``turn_ratios`` each
    queue splits uniformly over its downstream set (or leaves via the sink).
    """
    diags = []
    if rows < 1 or cols < 1:
        diags.append(f"grid size must be at least 1x1, got {rows}x{cols}")
    if not road_length > 0:
        diags.append(f"road length must be positive, got {road_length}")
    if diags:
        raise NetworkError(diags)

    down: dict[str, list[str]] = {}
    up: dict[str, list[str]] = {}
    qmeta = {}
    for r in range(rows):
        for c in range(cols):
            for a in template.approaches:
                heading = OPPOSITE[a]
                for lane, dirs in template.lanes:
                    qid = queue_id(r, c, a, lane)
                    targets = []
                    for d in dirs:
                        h = out_heading(heading, d)
                        dr, dc = STEP[h]
                        if _inside(rows, cols, r + dr, c + dc):
                            na = OPPOSITE[h]
                            for nl, _ in template.lanes:
                                targets.append(queue_id(r + dr, c + dc, na, nl))
                    down[qid] = targets
                    up.setdefault(qid, [])
                    qmeta[qid] = (r, c, a, lane, dirs)
    for q, ds in down.items():
        for d in ds:
            up.setdefault(d, []).append(q)

    queues = []
    for qid, (r, c, a, lane, dirs) in qmeta.items():
        movements = frozenset(Movement(a, d, d != "right" or len(dirs) > 1) for d in dirs)
        entry = not up[qid]
        queues.append(Queue(
            id=qid, intersection=node_id(r, c), movements=movements,
            capacity=math.inf if entry else road_length / vehicle_length,
            length=road_length, weight=weight, speed=speed,
            departure_rate=departure_rate,
            downstream=tuple(down[qid]), upstream=tuple(up[qid]),
        ))

    phases, nodes = [], []
    for r in range(rows):
        for c in range(cols):
            nid = node_id(r, c)
            pids = []
            for k, labels in enumerate(template.phases, start=1):
                members = []
                for lab in labels:
                    m = Movement.parse(lab)
                    qid = queue_id(r, c, m.origin, lane_for(template, m.direction))
                    if qid not in members:
                        members.append(qid)
                pid = f"{nid}.p{k}"
                phases.append(Phase(pid, nid, tuple(members)))
                pids.append(pid)
            nq = tuple(q.id for q in queues if q.intersection == nid)
            nodes.append(Intersection(nid, nq, tuple(pids)))

    if turn_ratios is None:
        turn_ratios = {
            q.id: ({d: 1.0 / len(q.downstream) for d in q.downstream} if q.downstream else {SINK: 1.0})
            for q in queues
        }
    info = GridInfo(rows, cols, road_length, template)
    return make_spec(nodes, queues, phases, turn_ratios, vehicle_length, grid=info)


# --- boundary edges and OD pairs ------------------------------------------

@dataclass(frozen=True)
class Edge:
    side: str  # W, E, N, S
    index: int  # row for W/E, column for N/S

    @property
    def name(self) -> str:
        return f"{self.side}{self.index}"

    @property
    def is_row(self) -> bool:
        return self.side in ("W", "E")

    def node(self) -> tuple:
        """Returns the edge's position as (row, col) with -1 meaning 'last'."""
        return {"W": (self.index, 0), "E": (self.index, -1), "N": (0, self.index), "S": (-1, self.index)}[self.side]


def boundary_edges(rows: int, cols: int) -> list[Edge]:
    edges = [Edge("W", r) for r in range(rows)] + [Edge("E", r) for r in range(rows)]
    edges += [Edge("N", c) for c in range(cols)] + [Edge("S", c) for c in range(cols)]
    return edges


@dataclass(frozen=True)
class ODPair:
    origin: Edge
    destination: Edge

    @property
    def group(self) -> str:
        return ("r" if self.origin.is_row else "c") + ("r" if self.destination.is_row else "c")


def od_pairs(rows: int, cols: int) -> list[ODPair]:
    edges = boundary_edges(rows, cols)
    return [ODPair(o, d) for o in edges for d in edges if o != d]


def od_rates(rows: int, cols: int, group_rates) -> dict:
    """Map each OD pair to its group's Poisson rate (vehicles/s per pair)."""
    g = dict(zip(GROUPS, group_rates)) if not isinstance(group_rates, Mapping) else dict(group_rates)
    return {od: float(g.get(od.group, 0.0)) for od in od_pairs(rows, cols)}


def _resolve(rows, cols, rc):
    r, c = rc
    return (rows - 1 if r < 0 else r, cols - 1 if c < 0 else c)


def _turns(headings) -> int:
    return sum(1 for a, b in zip(headings, headings[1:]) if a != b)


def route_moves(rows: int, cols: int, od: ODPair) -> list[str]:
    """Sequence of headings for the OD trip: entry heading, each grid move, exit heading.

    The trip follows a shortest (monotone) path; among those the fewest turns
    win and remaining ties go to moving along the row first.
    """
    start = _resolve(rows, cols, od.origin.node())
    end = _resolve(rows, cols, od.destination.node())
    h_in = OPPOSITE[od.origin.side]
    h_out = od.destination.side
    dr, dc = end[0] - start[0], end[1] - start[1]
    horiz = ["E" if dc > 0 else "W"] * abs(dc)
    vert = ["S" if dr > 0 else "N"] * abs(dr)
    best = None
    for body in (horiz + vert, vert + horiz):
        seq = [h_in] + body + [h_out]
        cost = _turns(seq)
        if best is None or cost < best[0]:
            best = (cost, seq)
    seq = best[1]
    for a, b in zip(seq, seq[1:]):
        if b == OPPOSITE[a]:
            raise NetworkError([f"OD pair {od.origin.name}->{od.destination.name} needs a U-turn"])
    return seq


def route_queues(rows: int, cols: int, od: ODPair, template: GridTemplate = DEFAULT_TEMPLATE) -> list[str]:
    """Queues visited by the OD trip, in order."""
    seq = route_moves(rows, cols, od)
    r, c = _resolve(rows, cols, od.origin.node())
    out = []
    for h_in, h_next in zip(seq, seq[1:]):
        lane = lane_for(template, turn_direction(h_in, h_next))
        out.append(queue_id(r, c, OPPOSITE[h_in], lane))
        dr, dc = STEP[h_next]
        r, c = r + dr, c + dc
    return out


def queue_flows(spec: NetworkSpec, od_demand: Mapping) -> tuple[dict, dict]:
    """Assign OD flows to routes; returns (per-queue flow, per-link flow)."""
    if spec.grid is None:
        raise NetworkError(["OD routing needs a grid-generated network"])
    template = spec.grid.template or DEFAULT_TEMPLATE
    rows, cols = spec.grid.rows, spec.grid.cols
    qflow = {q.id: 0.0 for q in spec.queues}
    link: dict[tuple, float] = {}
    for od, rate in od_demand.items():
        if rate <= 0:
            continue
        path = route_queues(rows, cols, od, template)
        for a, b in zip(path, path[1:] + [SINK]):
            qflow[a] += rate
            link[(a, b)] = link.get((a, b), 0.0) + rate
    return qflow, link


def derive_turn_ratios(spec: NetworkSpec, od_demand: Mapping) -> dict:
    """Turn ratios from routed OD flows; zero-flow queues split uniformly."""
    qflow, link = queue_flows(spec, od_demand)
    ratios = {}
    for q in spec.queues:
        total = qflow[q.id]
        if total > 0:
            row = {d: link.get((q.id, d), 0.0) / total for d in (*q.downstream, SINK)}
            row = {d: g for d, g in row.items() if g > 0}
        elif q.downstream:
            row = {d: 1.0 / len(q.downstream) for d in q.downstream}
        else:
            row = {SINK: 1.0}
        ratios[q.id] = row
    return ratios


def entry_od_map(spec: NetworkSpec, od_demand: Mapping) -> dict:
    """Entry queue of each OD pair with positive demand."""
    template = spec.grid.template or DEFAULT_TEMPLATE
    return {
        od: route_queues(spec.grid.rows, spec.grid.cols, od, template)[0]
        for od in od_demand
    }


def route_length(spec: NetworkSpec, od: ODPair) -> float:
    template = spec.grid.template or DEFAULT_TEMPLATE
    path = route_queues(spec.grid.rows, spec.grid.cols, od, template)
    return sum(spec.queue(q).length for q in path)


def with_od_demand(spec: NetworkSpec, group_rates, origin_total: float | None = None) -> tuple[NetworkSpec, dict]:
    """Attach demand-derived turn ratios to a grid network.

    With ``origin_total`` each boundary origin emits that many vehicles/s in
    total, split over its destinations in proportion to the group rates, so
    demand density stays fixed as the grid grows.
    """
    rates = od_rates(spec.grid.rows, spec.grid.cols, group_rates)
    if origin_total is not None:
        sums: dict = {}
        for od, r in rates.items():
            sums[od.origin] = sums.get(od.origin, 0.0) + r
        rates = {od: (r * origin_total / sums[od.origin] if sums[od.origin] > 0 else 0.0)
                 for od, r in rates.items()}
    return spec.with_turn_ratios(derive_turn_ratios(spec, rates)), rates
