"""Event-driven fluid simulator for signalized queue networks.

Every queue content is piecewise linear in time, so all state guards (queue
empty, threshold, capacity, clock bounds, transit arrivals) are solved as
linear roots and processed in time order.  Within one processed event the
state is settled to a fixed point: induced transitions (a queue starting or
ending a non-empty period, blocking, light switches) happen at the same
instant as the event that caused them.

Flow between queues: whenever a queue's discharge rate changes, a rate front
carrying the new value is sent down each outgoing link.  The front reaches
the downstream queue when its age equals the transit delay over the free part
of the road, ``(L - x * l) / f``.  The downstream arrival rate is the turn
ratio weighted sum of the latest front values that have arrived on its links,
scaled while the queue is non-empty by how fast its tail moves toward the
oncoming traffic, so vehicles in transit are neither created nor lost.

When ``with_ipa`` is on, each processed event carries the derivative of its
time with respect to every controller parameter, and each queue whose drift
changed at that event gets the matching jump in its state derivative.
"""

from __future__ import annotations

import bisect
import hashlib
import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import ipa
from .controller import FixedPlan, PhaseParams, Region, classify_region, control_decision
from .demand import ArrivalProcess
from .network import SINK, NetworkSpec, permanent_green

EMPTY, NEP, FULL = 0, 1, 2
MODE_NAMES = ("empty", "nonempty", "full")

# tie-break classes for simultaneous events
CLS_EXOGENOUS, CLS_CAPACITY, CLS_CLOCK, CLS_CONTENT, CLS_FRONT = 0, 1, 2, 3, 5

COALESCE = 1e-9
SNAP = 1e-9
FRONT_EPS = 1e-12

_REGION_BY_LEVEL = {
    (0, 0): Region.X0, (1, 0): Region.X1, (2, 0): Region.X1,
    (0, 1): Region.X2, (0, 2): Region.X2,
    (1, 1): Region.X3, (1, 2): Region.X4, (2, 1): Region.X5, (2, 2): Region.X6,
}


_MAX_CLOCK = (Region.X0, Region.X3, Region.X5, Region.X6)


class SimulationAborted(RuntimeError):
    """Run stopped by the event cap or another runtime diagnostic."""


@dataclass
class SimConfig:
    horizon: float = 1000.0
    with_ipa: bool = True
    record_log: bool = False
    record_trajectories: bool = False
    record_nep: bool = False
    check_invariants: bool = False
    event_cap: int = 10_000_000
    rate_estimator: str = "exact"  # or "window"
    estimator_window: float = 50.0
    # how long a phase with empty own queues stays green: "min_green" (its
    # min green), a fixed number of seconds, or None for an instant switch
    idle_hold: str | float | None = "min_green"
    # scale link inflow by the motion of the queue tail (False keeps the
    # upstream rate unchanged, which does not conserve vehicles in transit)
    transit_compression: bool = True


@dataclass
class SimTrace:
    """Result of a run over ``[0, horizon]``."""

    horizon: float
    queue_ids: tuple
    weights: np.ndarray
    int_x: np.ndarray
    int_alpha: np.ndarray
    int_beta: np.ndarray
    int_shed: np.ndarray
    x_initial: np.ndarray
    x_final: np.ndarray
    sink_outflow: float
    vehicle_meters: float
    free_flow_time: float
    event_count: int
    log_hash: str
    events: list = field(default_factory=list)
    trajectories: dict = field(default_factory=dict)
    nep_records: dict = field(default_factory=dict)
    gradient: np.ndarray | None = None
    gradient_by_queue: np.ndarray | None = None
    diagnostics: list = field(default_factory=list)
    reset_violations: int = 0
    invariant_violations: dict = field(default_factory=dict)


def delta(road_length: float, content: float, vehicle_length: float, speed: float) -> float:
    """Transit delay over the free part of a road with ``content`` queued vehicles."""
    free = road_length - content * vehicle_length
    if free < -1e-9 * road_length:
        raise ValueError("queue longer than its road: capacity inconsistent with road length")
    return max(free, 0.0) / speed


def departure_rate(content: float, arrival: float, signal: int, blocked: bool, saturation: float) -> float:
    """Discharge rate of a queue: saturation when queued, pass-through when empty, 0 on red or blocked."""
    if not signal or blocked:
        return 0.0
    if content > 0:
        return saturation
    return min(arrival, saturation)


def arrival_rate(link_rates) -> float:
    """Superposed inflow from ``(turn ratio, arrived upstream rate)`` pairs."""
    return sum(g * r for g, r in link_rates if r > 0)


def front_arrival_time(now: float, emitted: float, content: float, slope: float,
                       road_length: float, vehicle_length: float, speed: float) -> float:
    """Time when a front emitted at ``emitted`` has travelled the free road.

    Solves ``t - emitted = (L - l * x(t)) / f`` with ``x`` linear in ``t``.
    Returns ``inf`` if the front cannot arrive under the current drift.
    """
    gap = (road_length - content * vehicle_length) / speed - (now - emitted)
    if gap <= FRONT_EPS:
        return now
    den = 1.0 + vehicle_length / speed * slope
    if den <= 0:
        return math.inf
    return now + gap / den


class Simulator:
    """One sample path of the network under a controller.

    ``theta`` is the flat parameter vector (three entries per phase in
    network phase order).  ``plans`` switches selected intersections to a
    fixed-cycle schedule (mapping intersection id to :class:`FixedPlan`).
    """

    def __init__(self, spec: NetworkSpec, theta, arrivals: ArrivalProcess,
                 config: SimConfig | None = None, plans: dict | None = None):
        self.spec = spec
        self.cfg = config or SimConfig()
        self.arrivals = arrivals
        self.params = ipa.ParamIndex(tuple(p.id for p in spec.phases))
        self.theta = np.array(theta, dtype=float).reshape(-1)
        if self.theta.size != len(self.params):
            raise ValueError(f"theta has {self.theta.size} entries, expected {len(self.params)}")
        self.plans = dict(plans or {})
        self._build()
        self._start()

    # ------------------------------------------------------------------ setup
    def _build(self):
        spec = self.spec
        qs = spec.queues
        self.nq = nq = len(qs)
        self.l = spec.vehicle_length
        self.cap = [q.capacity for q in qs]
        self.h = [q.departure_rate for q in qs]
        self.L = [q.length for q in qs]
        self.f = [q.speed for q in qs]
        self.w = np.array([q.weight for q in qs], dtype=float)
        self.qname = [q.id for q in qs]
        self.entry = [q.is_entry for q in qs]
        self.sink_share = [spec.gamma(q.id, SINK) for q in qs]

        # links with positive turn ratio
        self.link_src, self.link_dst, self.link_gamma = [], [], []
        self.out_links = [[] for _ in range(nq)]
        self.in_links = [[] for _ in range(nq)]
        for i, q in enumerate(qs):
            for d in q.downstream:
                g = spec.gamma(q.id, d)
                if g > 0:
                    k = len(self.link_src)
                    j = spec.queue_index(d)
                    self.link_src.append(i)
                    self.link_dst.append(j)
                    self.link_gamma.append(g)
                    self.out_links[i].append(k)
                    self.in_links[j].append(k)
        nl = len(self.link_src)
        self.link_lag = [self.l / self.f[u] for u in self.link_src]
        self.link_rate = [0.0] * nl
        self.fronts = [deque() for _ in range(nl)]

        # intersections and phases
        green = permanent_green(spec)
        self.always_green = [q.id in green for q in qs]
        self.node_of = [spec.intersection_index(q.intersection) for q in qs]
        self.nn = len(spec.intersections)
        self.node_phases = []  # global phase indices in cycle order
        self.node_controlled = []
        self.phase_members = []
        for p in spec.phases:
            self.phase_members.append(frozenset(spec.queue_index(q) for q in p.queues))
        self.phase_others = []
        for n in spec.intersections:
            ph = [spec.phase_index(p) for p in n.phases]
            self.node_phases.append(ph)
            ctl = sorted({i for p in ph for i in self.phase_members[p]})
            self.node_controlled.append(ctl)
        self.phase_others = [None] * len(spec.phases)
        for n, ph in enumerate(self.node_phases):
            for p in ph:
                self.phase_others[p] = [i for i in self.node_controlled[n] if i not in self.phase_members[p]]
        self.phase_own = [sorted(m) for m in self.phase_members]
        self.controlled = [False] * nq
        for n in range(self.nn):
            for i in self.node_controlled[n]:
                self.controlled[i] = True
        self.plan_of = [self.plans.get(n.id) for n in spec.intersections]
        for n, plan in enumerate(self.plan_of):
            if plan is not None and len(plan.durations) != len(self.node_phases[n]):
                raise ValueError(f"fixed plan for {spec.intersections[n].id} has wrong phase count")

        # exogenous inflow
        self.exo_times = [None] * nq
        self.exo_rates = [None] * nq
        for i, q in enumerate(qs):
            if q.is_entry:
                tr = self.arrivals.trace(q.id)
                self.exo_times[i] = tr.times
                self.exo_rates[i] = tr.rates

    def _start(self):
        nq, nn = self.nq, self.nn
        self.now = 0.0
        self.x_ref = [0.0] * nq
        self.t_ref = [0.0] * nq
        self.slope = [0.0] * nq
        self.alpha = [0.0] * nq
        self.beta = [0.0] * nq
        self.shed = [0.0] * nq
        self.mode = [EMPTY] * nq
        self.halted = [0] * nq
        self.signal = [1 if g else 0 for g in self.always_green]
        self.exo_pos = [-1] * nq
        self.exo_rate = [0.0] * nq
        self.int_x = [0.0] * nq
        self.int_a = [0.0] * nq
        self.int_b = [0.0] * nq
        self.int_s = [0.0] * nq
        self.qver = [0] * nq
        self.nver = [0] * nn
        self.active = [0] * nn
        self.t_act = [0.0] * nn
        self.instant_switches = [0] * nn
        self.switch_instant = -1.0
        self.heap = []
        self.events = 0
        self.hasher = hashlib.blake2b(digest_size=16)
        self.log = []
        self.diagnostics = []
        self.reset_violations = 0
        self.invariant_violations = {"capacity": 0, "blocking": 0, "signal": 0, "negative": 0}
        npar = len(self.params)
        self.ipa_on = self.cfg.with_ipa
        if self.ipa_on:
            self.xp = np.zeros((nq, npar))
            self.acc = ipa.GradientAccumulator(nq, npar)
            self.act_tau = [np.zeros(npar) for _ in range(nn)]
        self.zero_tau = np.zeros(npar)
        self.traj = {i: [(0.0, 0.0)] for i in range(nq)} if self.cfg.record_trajectories else None
        self.nep = {i: [] for i in range(nq)} if self.cfg.record_nep else None
        self.window_estimator = self.cfg.rate_estimator == "window"
        if self.window_estimator:
            self.arr_hist = [deque([(0.0, 0.0, 0.0)]) for _ in range(nq)]
        self._window_mark = self._totals()

        for n in range(nn):
            p = self.node_phases[n][0]
            for i in self.phase_members[p]:
                self.signal[i] = 1
        self._begin()
        for i in range(nq):
            if self.entry[i]:
                self._advance_exogenous(i)
            self._mark_dirty(i)
        for n in range(nn):
            self.pending_eval.add(n)
        self._settle()
        self._log("init", "-", 0.0)
        self._finish()
        for n in range(nn):
            self._schedule_node(n)
        for i in range(nq):
            self._schedule_queue(i)

    # --------------------------------------------------------------- helpers
    def x_now(self, i: int) -> float:
        return self.x_ref[i] + self.slope[i] * (self.now - self.t_ref[i])

    def _integrate(self, i: int, t: float) -> None:
        dt = t - self.t_ref[i]
        if dt <= 0:
            return
        x0, s = self.x_ref[i], self.slope[i]
        self.int_x[i] += x0 * dt + 0.5 * s * dt * dt
        self.int_a[i] += self.alpha[i] * dt
        self.int_b[i] += self.beta[i] * dt
        self.int_s[i] += self.shed[i] * dt
        if self.ipa_on:
            self.acc.add(i, self.xp[i], dt)
        x1 = x0 + s * dt
        if x1 < 0.0:
            x1 = 0.0
        elif x1 > self.cap[i]:
            x1 = self.cap[i]
        self.x_ref[i] = x1
        self.t_ref[i] = t

    def _touch(self, i: int) -> None:
        if i not in self.old:
            self._integrate(i, self.now)
            self.old[i] = (self.slope[i], self.beta[i], self.mode[i], self.alpha[i])

    def _mark_dirty(self, i: int) -> None:
        if i not in self.dirty_set:
            self.dirty_set.add(i)
            self.dirty.append(i)

    def _log(self, kind: str, subject: str, value: float) -> None:
        self.hasher.update(f"{self.now!r}|{kind}|{subject}|{value!r}\n".encode())
        if self.cfg.record_log:
            self.log.append((self.now, kind, subject, value))

    def _diag(self, text: str) -> None:
        if len(self.diagnostics) < 1000:
            self.diagnostics.append(f"t={self.now:.6f}: {text}")

    def _alpha_hat(self, i: int) -> float:
        w = self.cfg.estimator_window
        hist = self.arr_hist[i]
        t0 = self.now - w
        cum_now = self.int_a[i]
        if t0 <= 0:
            return cum_now / w
        while len(hist) > 1 and hist[1][0] <= t0:
            hist.popleft()
        tk, ak, rk = hist[0]
        return (cum_now - (ak + rk * (t0 - tk))) / w

    def _ipa_slope(self, i: int, slope: float, beta: float, mode: int) -> float:
        if not self.window_estimator:
            return slope
        if mode != NEP:
            return 0.0
        return self._alpha_hat(i) - beta

    # --------------------------------------------------------------- settle
    def _begin(self):
        self.old = {}
        self.dirty = deque()
        self.dirty_set = set()
        self.pending_eval = set()
        self.tau = None
        self.root_clock = None
        self.root_empty = None
        self.resched_nodes = set()
        self.resched_queues = set()
        if self.now != self.switch_instant:
            self.switch_instant = self.now
            for n in range(self.nn):
                self.instant_switches[n] = 0

    def _level(self, i: int, s: float) -> int:
        if self.mode[i] == EMPTY:
            return 0
        if s <= 0:
            return 2
        x = self.x_now(i)
        if x > s or (x == s and self.slope[i] >= 0):
            return 2
        return 1

    def _refresh(self, i: int) -> None:
        self._touch(i)
        lag = 0.0
        if self.entry[i]:
            a = self.exo_rate[i]
        else:
            a = 0.0
            for k in self.in_links[i]:
                r = self.link_rate[k]
                if r > 0:
                    a += self.link_gamma[k] * r
                    lag += self.link_gamma[k] * r * self.link_lag[k]
        is_open = self.signal[i] == 1 and self.halted[i] == 0
        h = self.h[i]
        m = self.mode[i]
        x = self.x_ref[i]
        shed = 0.0
        if m == EMPTY:
            b = min(a, h) if is_open else 0.0
            sl = a - b
            if sl > 0:
                m = NEP
                self._log("S", self.qname[i], 0.0)
        if m == NEP:
            b = h if is_open else 0.0
            sl = a - b
            if x <= 0.0 and sl <= 0:
                m = EMPTY
                b = min(a, h) if is_open else 0.0
                sl = 0.0
                self._log("E", self.qname[i], 0.0)
            elif x >= self.cap[i] and sl > 0:
                m = FULL
                self._log("x_up_c", self.qname[i], x)
        if m == FULL:
            b = h if is_open else 0.0
            if a >= b:
                sl = 0.0
                shed = a - b
            else:
                m = NEP
                sl = a - b
                self._log("x_down_c", self.qname[i], x)
        if m == NEP and lag > 0 and self.cfg.transit_compression:
            # the queue tail moves toward oncoming traffic at l * slope, so
            # inflow at the tail is r * (1 + (l / f) * slope); solve for slope
            if lag < 1.0 - 1e-9:
                sl = (a - b) / (1.0 - lag)
                a = b + sl
            else:
                self._diag(f"queue tail of {self.qname[i]} outruns arriving traffic; compression skipped")
        old_mode = self.mode[i]
        self.alpha[i], self.beta[i], self.slope[i], self.shed[i], self.mode[i] = a, b, sl, shed, m
        if (old_mode == FULL) != (m == FULL):
            step = 1 if m == FULL else -1
            for k in self.in_links[i]:
                u = self.link_src[k]
                self.halted[u] += step
                self._mark_dirty(u)
        if self.controlled[i]:
            self.pending_eval.add(self.node_of[i])
        self.resched_queues.add(i)

    def _settle(self) -> None:
        while True:
            while self.dirty:
                i = self.dirty.popleft()
                self.dirty_set.discard(i)
                self._refresh(i)
            if not self.pending_eval:
                return
            for n in sorted(self.pending_eval):
                self.pending_eval.discard(n)
                self._evaluate(n)
                if self.dirty:
                    break

    def _evaluate(self, n: int) -> None:
        if self.plan_of[n] is not None:
            return
        phases = self.node_phases[n]
        if len(phases) < 2:
            return
        p = phases[self.active[n]]
        lo, hi, s = self.theta[3 * p], self.theta[3 * p + 1], self.theta[3 * p + 2]
        own = max((self._level(i, s) for i in self.phase_own[p]), default=0)
        other = max((self._level(i, s) for i in self.phase_others[p]), default=0)
        region = _REGION_BY_LEVEL[(own, other)]
        z = self.now - self.t_act[n]
        if abs(z - lo) <= SNAP:
            z = lo
        if abs(z - hi) <= SNAP:
            z = hi
        hold = self._idle_hold(p)
        if hold is not None and abs(z - hold) <= SNAP:
            z = hold
        decision = control_decision(region, max(z, 1e-12), PhaseParams(lo, hi, s), hold)
        if decision:
            return
        if self.root_clock == n and self.tau is None and self.ipa_on:
            if region in _MAX_CLOCK:
                bound = 3 * p + ipa.MAX_GREEN
            elif region == Region.X4 or self.cfg.idle_hold == "min_green":
                bound = 3 * p + ipa.MIN_GREEN
            else:
                bound = None
            self.tau = ipa.clock_tau(self.act_tau[n], bound)
        self._switch(n)

    def _idle_hold(self, p: int):
        hold = self.cfg.idle_hold
        if hold == "min_green":
            return self.theta[3 * p]
        return hold

    def _switch(self, n: int) -> None:
        phases = self.node_phases[n]
        if self.instant_switches[n] >= len(phases):
            self._diag(f"switch cascade capped at {self.spec.intersections[n].id}")
            return
        self.instant_switches[n] += 1
        old_p = phases[self.active[n]]
        self.active[n] = (self.active[n] + 1) % len(phases)
        new_p = phases[self.active[n]]
        self._log("switch", self.spec.phases[new_p].id, 0.0)
        for i in sorted(self.phase_members[old_p] | self.phase_members[new_p]):
            v = 1 if (i in self.phase_members[new_p] or self.always_green[i]) else 0
            if v != self.signal[i]:
                self._touch(i)
                self.signal[i] = v
                self._log("R2G" if v else "G2R", self.qname[i], self.x_ref[i])
                self._mark_dirty(i)
        self.t_act[n] = self.now
        if self.ipa_on:
            self.act_tau[n] = self.tau.copy() if self.tau is not None else self.zero_tau.copy()
        self.resched_nodes.add(n)
        for i in self.node_controlled[n]:
            self.resched_queues.add(i)
        self.pending_eval.add(n)

    def _finish(self) -> None:
        tau = self.tau if self.ipa_on else None
        for i in sorted(self.old):
            so, bo, mo, ao = self.old[i]
            sn, bn, mn = self.slope[i], self.beta[i], self.mode[i]
            if self.ipa_on:
                before = self.xp[i].copy() if self.nep is not None else None
                if tau is not None:
                    s_old = self._ipa_slope(i, so, bo, mo)
                    s_new = self._ipa_slope(i, sn, bn, mn)
                    if s_old != s_new:
                        self.xp[i] += (s_old - s_new) * tau
                if mn != NEP:
                    if self.root_empty == i:
                        resid = float(np.max(np.abs(self.xp[i]))) if self.xp.shape[1] else 0.0
                        scale = max(1.0, float(np.max(np.abs(self.xp_root_before)))) if self.xp.shape[1] else 1.0
                        if resid > 1e-9 * scale:
                            self.reset_violations += 1
                    self.xp[i] = 0.0
                if self.nep is not None:
                    self._record_nep(i, mo, mn, before)
            if self.window_estimator and self.alpha[i] != ao:
                self.arr_hist[i].append((self.now, self.int_a[i], self.alpha[i]))
            if bn != bo:
                if bo == 0.0 and bn > 0:
                    self._log("G", self.qname[i], bn)
                elif bo > 0 and bn == 0.0:
                    self._log("GE", self.qname[i], bn)
                emit = tau if tau is not None else self.zero_tau
                for k in self.out_links[i]:
                    fr = self.fronts[k]
                    fr.append((self.now, bn, emit))
                    if len(fr) == 1:
                        self.resched_queues.add(self.link_dst[k])
            if self.traj is not None and (sn != so or mn != mo):
                self.traj[i].append((self.now, self.x_ref[i]))

    def _record_nep(self, i, mo, mn, before):
        recs = self.nep[i]
        if mo == EMPTY and mn != EMPTY:
            recs.append(ipa.NEPRecord(self.qname[i], self.now, None, [(self.now, self.xp[i].copy())]))
        elif mo != EMPTY and mn == EMPTY:
            recs[-1].end = self.now
        elif mn != EMPTY and not np.array_equal(before, self.xp[i]):
            recs[-1].plateaus.append((self.now, self.xp[i].copy()))

    # ------------------------------------------------------------ scheduling
    def _push(self, t, cls, key, ver, kind, payload):
        heapq.heappush(self.heap, (t, cls, key, ver, kind, payload))

    def _schedule_queue(self, i: int) -> None:
        self.qver[i] += 1
        ver = self.qver[i]
        now = self.now
        best = None
        x = self.x_now(i)
        sl = self.slope[i]
        if self.mode[i] == NEP:
            if sl < 0:
                best = (now + x / -sl, CLS_CONTENT, "E", None)
            elif sl > 0 and self.cap[i] < math.inf:
                cand = (now + (self.cap[i] - x) / sl, CLS_CAPACITY, "x_up_c", None)
                if best is None or cand[:2] < best[:2]:
                    best = cand
            if self.controlled[i] and self.plan_of[self.node_of[i]] is None:
                n = self.node_of[i]
                s = self.theta[3 * self.node_phases[n][self.active[n]] + 2]
                if s > 0:
                    cand = None
                    if x < s and sl > 0:
                        cand = (now + (s - x) / sl, CLS_CONTENT, "x_up_s", None)
                    elif x > s and sl < 0:
                        cand = (now + (x - s) / -sl, CLS_CONTENT, "x_down_s", None)
                    if cand is not None and (best is None or cand[:2] < best[:2]):
                        best = cand
        if self.entry[i]:
            times = self.exo_times[i]
            k = self.exo_pos[i] + 1
            if k < len(times):
                cand = (times[k], CLS_EXOGENOUS, "exo", k)
                if best is None or cand[:2] < best[:2]:
                    best = cand
        for k in self.in_links[i]:
            fr = self.fronts[k]
            if fr:
                u = self.link_src[k]
                t = front_arrival_time(now, fr[0][0], x, sl, self.L[i], self.l, self.f[u])
                if t < math.inf:
                    cand = (t, CLS_FRONT, "front", k)
                    if best is None or cand[:2] < best[:2]:
                        best = cand
        if best is not None:
            self._push(best[0], best[1], i, ver, best[2], best[3])

    def _schedule_node(self, n: int) -> None:
        self.nver[n] += 1
        ver = self.nver[n]
        plan = self.plan_of[n]
        key = self.nq + n
        if plan is not None:
            t = self.t_act[n] + plan.durations[self.active[n]]
            self._push(t, CLS_CLOCK, key, ver, "timer", None)
            return
        if len(self.node_phases[n]) < 2:
            return
        p = self.node_phases[n][self.active[n]]
        z = self.now - self.t_act[n]
        bounds = [self.theta[3 * p], self.theta[3 * p + 1]]
        hold = self._idle_hold(p)
        if hold is not None:
            bounds.append(hold)
        for b in sorted(bounds):
            if b > z + SNAP:
                self._push(self.t_act[n] + b, CLS_CLOCK, key, ver, "clock", None)
                return

    def _advance_exogenous(self, i: int, target: int | None = None) -> None:
        k = bisect.bisect_right(self.exo_times[i], self.now) - 1
        if target is not None:
            # a coalesced event time may sit just before its breakpoint
            k = max(k, target)
        self.exo_pos[i] = k
        self.exo_rate[i] = self.exo_rates[i][k] if k >= 0 else 0.0

    # ------------------------------------------------------------- main loop
    def _fire(self, kind: str, key: int, payload) -> None:
        self._begin()
        if key >= self.nq:
            n = key - self.nq
            if kind == "timer":
                self._log("timer", self.spec.intersections[n].id, 0.0)
                self._switch(n)
            else:
                self._log("clock", self.spec.intersections[n].id, self.now - self.t_act[n])
                self.root_clock = n
                self.pending_eval.add(n)
            self.resched_nodes.add(n)
        else:
            i = key
            self._touch(i)
            if kind == "exo":
                self._advance_exogenous(i, payload)
                self._log("exo", self.qname[i], self.exo_rate[i])
                self._mark_dirty(i)
            elif kind == "E":
                if self.ipa_on:
                    self.xp_root_before = self.xp[i].copy()
                    self.tau = self._crossing_tau(i, None)
                    self.root_empty = i
                self.x_ref[i] = 0.0
                self._mark_dirty(i)
            elif kind == "x_up_c":
                if self.ipa_on:
                    self.tau = self._crossing_tau(i, None)
                self.x_ref[i] = self.cap[i]
                self._mark_dirty(i)
            elif kind in ("x_up_s", "x_down_s"):
                n = self.node_of[i]
                p = self.node_phases[n][self.active[n]]
                if self.ipa_on:
                    self.tau = self._crossing_tau(i, 3 * p + 2)
                self.x_ref[i] = self.theta[3 * p + 2]
                self._log(kind, self.qname[i], self.x_ref[i])
                self.pending_eval.add(n)
                self.resched_queues.add(i)
            elif kind == "front":
                k = payload
                emitted, value, emit_tau = self.fronts[k].popleft()
                if self.ipa_on:
                    u = self.link_src[k]
                    try:
                        self.tau = ipa.front_tau(emit_tau, self.xp[i], self._ipa_slope(
                            i, self.slope[i], self.beta[i], self.mode[i]), self.l, self.f[u])
                    except ipa.GrazingCrossing:
                        self._diag(f"grazing front arrival at {self.qname[i]}")
                        self.tau = None
                prev = self.link_rate[k]
                self.link_rate[k] = value
                tag = "J" if prev == 0 and value > 0 else ("JE" if prev > 0 and value == 0 else "JB")
                self._log(tag, f"{self.qname[self.link_src[k]]}>{self.qname[i]}", value)
                self._mark_dirty(i)
        self._settle()
        self._finish()
        for n in sorted(self.resched_nodes):
            self._schedule_node(n)
        for i in sorted(self.resched_queues):
            self._schedule_queue(i)
        if self.cfg.check_invariants:
            self._check_invariants()

    def _crossing_tau(self, i: int, level_index):
        try:
            return ipa.crossing_tau(self.xp[i], self._ipa_slope(
                i, self.slope[i], self.beta[i], self.mode[i]), level_index)
        except ipa.GrazingCrossing:
            self._diag(f"grazing crossing at {self.qname[i]}")
            return None

    def advance(self, t_end: float) -> None:
        """Process every event up to ``t_end`` and integrate all queues to it."""
        heap = self.heap
        while heap:
            t, cls, key, ver, kind, payload = heap[0]
            stale = (self.qver[key] != ver) if key < self.nq else (self.nver[key - self.nq] != ver)
            if stale:
                heapq.heappop(heap)
                continue
            if t > t_end:
                break
            heapq.heappop(heap)
            if t - self.now < COALESCE:
                t = self.now
            self.now = t
            self.events += 1
            if self.events > self.cfg.event_cap:
                raise SimulationAborted(
                    f"event cap {self.cfg.event_cap} reached at t={self.now:.6f}; possible Zeno behavior")
            self._fire(kind, key, payload)
        self.now = max(self.now, t_end)
        for i in range(self.nq):
            self._integrate(i, self.now)

    # ---------------------------------------------------------------- checks
    def _check_invariants(self) -> None:
        viol = self.invariant_violations
        for i in range(self.nq):
            x = self.x_now(i)
            if x > self.cap[i] * (1 + 1e-12) + 1e-9:
                viol["capacity"] += 1
            if x < -1e-9:
                viol["negative"] += 1
            if self.beta[i] > 0:
                for k in self.out_links[i]:
                    if self.mode[self.link_dst[k]] == FULL:
                        viol["blocking"] += 1
                        break
        for n in range(self.nn):
            if self.plan_of[n] is None and not 0 <= self.active[n] < len(self.node_phases[n]):
                viol["signal"] += 1

    # ------------------------------------------------------------ accessors
    def _totals(self):
        return (np.array(self.int_x), np.array(self.int_a), np.array(self.int_b), np.array(self.int_s),
                self.now)

    def sink_outflow(self, int_b) -> float:
        return float(np.dot(self.sink_share, int_b))

    def window_summary(self, reset: bool = True) -> dict:
        """Cost, gradient and flow totals since the last window mark."""
        ix, ia, ib, isd, t = self._totals()
        mx, ma, mb, ms, t0 = self._window_mark
        length = t - t0
        dx, da, db = ix - mx, ia - ma, ib - mb
        out = {
            "start": t0, "end": t, "length": length,
            "cost": float(self.w @ dx) / length if length > 0 else 0.0,
            "int_x": float(dx.sum()),
            "discharged": self.sink_outflow(db),
            "inflow": float(da[[i for i in range(self.nq) if self.entry[i]]].sum()) if self.nq else 0.0,
            "vehicle_meters": float(np.dot(da, self.L)),
            "free_flow_time": float(np.dot(da, np.array(self.L) / np.array(self.f))),
            "shed": float((isd - ms).sum()),
        }
        out["waiting_time"] = out["int_x"] / out["discharged"] if out["discharged"] > 0 else 0.0
        if self.ipa_on:
            out["gradient"] = self.acc.window(self.w, length, reset) if length > 0 else np.zeros(len(self.params))
        if reset:
            self._window_mark = (ix, ia, ib, isd, t)
        return out

    def set_theta(self, theta) -> None:
        """Install new controller parameters at the current time."""
        theta = np.array(theta, dtype=float).reshape(-1)
        if theta.size != self.theta.size:
            raise ValueError("theta size mismatch")
        self.theta = theta
        self._begin()
        for n in range(self.nn):
            self.pending_eval.add(n)
            self.resched_nodes.add(n)
        self._settle()
        self._finish()
        for n in sorted(self.resched_nodes):
            self._schedule_node(n)
        for i in range(self.nq):
            self._schedule_queue(i)

    def trace(self) -> SimTrace:
        ix, ia, ib, isd, t = self._totals()
        x_final = np.array([self.x_now(i) for i in range(self.nq)])
        grad = grad_q = None
        if self.ipa_on and t > 0:
            grad = self.acc.gradient(self.w, t)
            grad_q = self.acc.total.copy()
        nep = None
        if self.nep is not None:
            nep = {}
            for i, recs in self.nep.items():
                closed = []
                for r in recs:
                    if r.end is None:
                        r = ipa.NEPRecord(r.queue, r.start, t, list(r.plateaus))
                    closed.append(r)
                nep[self.qname[i]] = closed
        traj = None
        if self.traj is not None:
            traj = {self.qname[i]: pts + [(t, float(x_final[i]))] for i, pts in self.traj.items()}
        return SimTrace(
            horizon=t, queue_ids=tuple(self.qname), weights=self.w.copy(),
            int_x=ix, int_alpha=ia, int_beta=ib, int_shed=isd,
            x_initial=np.zeros(self.nq), x_final=x_final,
            sink_outflow=self.sink_outflow(ib),
            vehicle_meters=float(np.dot(ia, self.L)),
            free_flow_time=float(np.dot(ia, np.array(self.L) / np.array(self.f))),
            event_count=self.events, log_hash=self.hasher.hexdigest(),
            events=list(self.log), trajectories=traj or {}, nep_records=nep or {},
            gradient=grad, gradient_by_queue=grad_q,
            diagnostics=list(self.diagnostics), reset_violations=self.reset_violations,
            invariant_violations=dict(self.invariant_violations),
        )


def run(spec: NetworkSpec, theta, arrivals: ArrivalProcess, horizon: float,
        config: SimConfig | None = None, plans: dict | None = None) -> SimTrace:
    """Simulate ``[0, horizon]`` from an empty network and return the trace."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    cfg = config or SimConfig()
    cfg.horizon = horizon
    sim = Simulator(spec, theta, arrivals, cfg, plans)
    sim.advance(horizon)
    return sim.trace()


def uniform_theta(spec: NetworkSpec, min_green=20.0, max_green=40.0, threshold=10.0) -> np.ndarray:
    """Same ``[min, max, threshold]`` for every phase, flattened."""
    return np.tile([min_green, max_green, threshold], len(spec.phases)).astype(float)
