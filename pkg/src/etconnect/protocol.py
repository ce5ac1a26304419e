"""Local network-connection protocol: trigger evaluation, stay-connected rule,
conservative rate substitution for partially known configurations, and the
history exchange that propagates configuration knowledge between neighbors.

A span is a maximal interval with a constant connection set.  Every agent keeps
one record per span of the current epoch (epochs restart at setpoint jumps);
records hold per-agent connection flags that are 0, 1, or unknown.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .graphs import CommGraph, induced_config
from .lmi import GammaTable

UNKNOWN = -1
EXP_CLIP = 60.0


def gamma_bar(flags: np.ndarray, underlying: CommGraph, table: GammaTable,
              mode: str) -> float:
    """Conservative rate for a span: the worst certified rate over all
    configurations consistent with the known connection flags."""
    known_on = [i for i, f in enumerate(flags) if f == 1]
    unknown = [i for i, f in enumerate(flags) if f == UNKNOWN]
    worst = None
    for picks in itertools.product((0, 1), repeat=len(unknown)):
        members = known_on + [i for i, bit in zip(unknown, picks) if bit]
        lap = induced_config(underlying, members).laplacian
        if mode == "worst_case":
            value = (table.entries[table.full_key][1]
                     if lap.shape[0] and np.array_equal(lap, table.entries[table.full_key][0].laplacian)
                     else table.worst_case)
        else:
            value = table.lookup(lap)
        if worst is None or value > worst:
            worst = value
    return worst


@dataclass
class SpanRecord:
    t_start: float
    t_end: float = None            # None while the span is open
    flags: np.ndarray = None

    def duration(self, now: float) -> float:
        return (self.t_end if self.t_end is not None else now) - self.t_start

    @property
    def fully_known(self) -> bool:
        return not np.any(self.flags == UNKNOWN)


class AgentKnowledge:
    """One agent's record of past connection configurations."""

    def __init__(self, agent_id: int, underlying: CommGraph, table: GammaTable,
                 mode: str):
        self.agent_id = agent_id
        self.underlying = underlying
        self.table = table
        self.mode = mode
        self.records: list = []
        self._gbar: list = []
        self.epoch = 0.0
        self._acc = 0.0
        self._known_prefix = 0

    def restart(self, t: float):
        """Forget the exponent history; the given time becomes the new epoch origin."""
        self.records = []
        self._gbar = []
        self.epoch = t
        self._acc = 0.0
        self._known_prefix = 0

    # -- span bookkeeping -------------------------------------------------

    def _gamma_of(self, idx: int) -> float:
        if self._gbar[idx] is None:
            self._gbar[idx] = gamma_bar(self.records[idx].flags, self.underlying,
                                        self.table, self.mode)
        return self._gbar[idx]

    def open_span(self, t: float, flags: np.ndarray):
        if self.records and self.records[-1].t_end is None:
            last = self.records[-1]
            last.t_end = t
            self._acc += self._gamma_of(len(self.records) - 1) * last.duration(t)
        self.records.append(SpanRecord(t_start=t, flags=flags.astype(np.int8)))
        self._gbar.append(None)

    def merge(self, idx: int, flags: np.ndarray) -> bool:
        """Fold another agent's knowledge of span idx into ours."""
        mine = self.records[idx].flags
        known_both = (mine != UNKNOWN) & (flags != UNKNOWN)
        if np.any(mine[known_both] != flags[known_both]):
            raise AssertionError("inconsistent configuration knowledge exchanged")
        learn = (mine == UNKNOWN) & (flags != UNKNOWN)
        if not np.any(learn):
            return False
        old = None
        if self.records[idx].t_end is not None and self._gbar[idx] is not None:
            old = self._gbar[idx]
        mine[learn] = flags[learn]
        self._gbar[idx] = None
        if old is not None:
            new = self._gamma_of(idx)
            self._acc += (new - old) * self.records[idx].duration(0.0)
        return True

    # -- queries ----------------------------------------------------------

    def exponent(self, t: float) -> float:
        acc = self._acc
        if self.records and self.records[-1].t_end is None:
            idx = len(self.records) - 1
            acc += self._gamma_of(idx) * (t - self.records[idx].t_start)
        return acc

    def bound(self, t: float) -> float:
        """Right-hand side of the connection trigger at time t."""
        return 2.0 + max(1.0, math.exp(min(self.exponent(t), EXP_CLIP)))

    def rebuild_exponent_acc(self) -> float:
        """Recompute the closed-span accumulator from scratch (consistency check)."""
        total = 0.0
        for idx, rec in enumerate(self.records):
            if rec.t_end is not None:
                total += gamma_bar(rec.flags, self.underlying, self.table,
                                   self.mode) * rec.duration(0.0)
        return total

    def tau(self, now: float) -> float:
        """Latest time up to which this agent knows the full configuration history."""
        idx = self._known_prefix
        while idx < len(self.records) and self.records[idx].fully_known:
            idx += 1
        self._known_prefix = idx
        if idx == 0:
            return self.epoch
        rec = self.records[idx - 1]
        return now if rec.t_end is None else rec.t_end


@dataclass
class TriggerDesign:
    """Everything an agent needs to run its trigger: measurement weights, the
    certified rate table, the stay-connected slope, and the knowledge mode."""

    y_weights: tuple
    table: GammaTable
    f_slope: float = 0.01
    gamma_mode: str = "worst_case"
    stay_reset: str = "cumulative"

    def __post_init__(self):
        if self.f_slope <= 0:
            raise ValueError("f_slope must be positive (f must strictly decrease)")
        if self.gamma_mode == "enumerate" and self.table.mode != "enumerate":
            raise ValueError("enumerate knowledge mode needs an enumerated table")
        if self.stay_reset not in ("cumulative", "per_episode"):
            raise ValueError(f"unknown stay_reset {self.stay_reset!r}")

    def f(self, t: float) -> float:
        return -self.f_slope * t


def trigger_bound(knowledge: AgentKnowledge, t: float) -> float:
    return knowledge.bound(t)


def should_connect(y_i: np.ndarray, y_weight: np.ndarray, bound: float) -> bool:
    y_i = np.atleast_1d(np.asarray(y_i, dtype=float))
    return float(y_i @ y_weight @ y_i) <= bound


def stay_connected(stay_integral: float, t: float, f_slope: float) -> bool:
    return stay_integral > -f_slope * t


@dataclass
class AgentRuntime:
    """Mutable per-agent state carried across simulation steps."""

    agent_id: int
    x_hat: np.ndarray
    connected: bool
    knowledge: AgentKnowledge
    stay_integral: float = 0.0
    y_quad: float = 0.0
    bound: float = 3.0


def exchange_knowledge(knowledge: list, connected: np.ndarray, t: float,
                       underlying: CommGraph):
    """One synchronous knowledge-exchange round among connected adjacent agents.

    Every sender's records are snapshotted before any merge is applied, so the
    result does not depend on agent ordering; information travels one hop per
    round.
    """
    ids = [i for i in range(len(knowledge)) if connected[i]]
    if len(ids) < 2:
        return
    taus = {i: knowledge[i].tau(t) for i in ids}
    n_records = len(knowledge[ids[0]].records)
    if not n_records:
        return
    # Only records past the least-informed receiver can carry new information.
    first = min(knowledge[i]._known_prefix for i in ids)
    if first >= n_records:
        return
    snapshots = {i: [knowledge[i].records[idx].flags.copy()
                     for idx in range(first, n_records)] for i in ids}
    for i in ids:
        kn = knowledge[i]
        tau_i = taus[i]
        for j in underlying.neighbors(i):
            j = int(j)
            if not connected[j]:
                continue
            sender = snapshots[j]
            for idx in range(max(first, kn._known_prefix), n_records):
                rec = kn.records[idx]
                end = rec.t_end if rec.t_end is not None else t
                if end <= tau_i:
                    continue
                kn.merge(idx, sender[idx - first])


def exchange(runtimes: list, connected: np.ndarray, t: float,
             underlying: CommGraph):
    """Knowledge-exchange round expressed over agent runtimes."""
    knowledge = [None] * len(connected)
    for r in runtimes:
        knowledge[r.agent_id] = r.knowledge
    exchange_knowledge(knowledge, connected, t, underlying)


def agent_step(runtime: AgentRuntime, y_i: np.ndarray, t: float, dt: float,
               design: TriggerDesign, plant, gains, l_ii: int,
               neighbor_estimates: dict, neighbors_all_connected: bool) -> AgentRuntime:
    """Reference single-agent update: trigger evaluation, stay rule, and a local
    zero-order-hold observer step with neighbor estimates frozen over dt.

    The closed-loop simulator integrates all agents jointly instead; this
    entry point exercises the per-agent logic in isolation.
    """
    import scipy.linalg

    i = runtime.agent_id
    y_i = np.atleast_1d(np.asarray(y_i, dtype=float))
    weight = design.y_weights[i]
    runtime.bound = runtime.knowledge.bound(t)
    runtime.y_quad = float(y_i @ weight @ y_i)
    was_connected = runtime.connected
    if not was_connected:
        runtime.connected = runtime.y_quad <= runtime.bound
        if runtime.connected and design.stay_reset == "per_episode":
            runtime.stay_integral = 0.0
    runtime.stay_integral += (runtime.bound - runtime.y_quad) * dt
    if runtime.connected and was_connected:
        if not neighbors_all_connected or not stay_connected(
                runtime.stay_integral, t + dt, design.f_slope):
            runtime.connected = False

    a_bk = gains.a_bk(plant)
    l_gain = gains.observer_gain(plant, i, l_ii)
    c_i = plant.c_block(i)
    coupling = np.zeros_like(runtime.x_hat)
    degree = 0
    for estimate in (neighbor_estimates or {}).values():
        coupling = coupling + gains.eta * estimate
        degree += 1
    a_loc = a_bk - l_gain @ c_i - gains.eta * degree * np.eye(plant.n)
    const = (l_gain @ y_i).reshape(-1) + coupling
    n = plant.n
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = a_loc
    aug[:n, n] = const
    phi = scipy.linalg.expm(aug * dt)
    runtime.x_hat = phi[:n, :n] @ runtime.x_hat + phi[:n, n]
    return runtime


class ProtocolEngine:
    """Deterministic synchronous round shared by all agents in the simulator."""

    def __init__(self, underlying: CommGraph, design: TriggerDesign,
                 always_connected: bool = False):
        self.underlying = underlying
        self.design = design
        self.always_connected = always_connected
        n = underlying.n_agents
        self.conn = np.zeros(n, dtype=bool)
        self.stay = np.zeros(n)
        self.knowledge = [
            AgentKnowledge(i, underlying, design.table, design.gamma_mode)
            for i in range(n)
        ]
        self._prev_active = None
        self.events = []           # (t, tuple of active flags)
        self._neighbor_idx = [underlying.neighbors(i) for i in range(n)]

    def restart(self, t: float):
        for kn in self.knowledge:
            kn.restart(t)
        self._prev_active = None

    def round(self, t: float, y_parts: list, dt: float):
        """Resolve the step's active connection set and update all local state.

        Returns (active flags, per-agent trigger quadratic, per-agent bound).
        """
        n = self.underlying.n_agents
        bounds = np.array([kn.bound(t) for kn in self.knowledge])
        quads = np.array([
            float(np.atleast_1d(y_parts[i]) @ self.design.y_weights[i]
                  @ np.atleast_1d(y_parts[i]))
            for i in range(n)
        ])
        triggered = quads <= bounds
        if self.always_connected:
            active = np.ones(n, dtype=bool)
        else:
            active = self.conn | triggered
        active_t = tuple(bool(a) for a in active)

        if active_t != self._prev_active:
            self.events.append((t, active_t))
            for i, kn in enumerate(self.knowledge):
                flags = np.full(n, UNKNOWN, dtype=np.int8)
                flags[i] = 1 if active[i] else 0
                if active[i]:
                    for j in self._neighbor_idx[i]:
                        flags[j] = 1 if active[j] else 0
                kn.open_span(t, flags)
            self._prev_active = active_t

        if active.sum() >= 2:
            exchange_knowledge(self.knowledge, active, t, self.underlying)

        if self.design.stay_reset == "per_episode":
            fresh = active & ~self.conn
            self.stay[fresh] = 0.0
        self.stay += (bounds - quads) * dt

        if self.always_connected:
            self.conn = active.copy()
        else:
            keep = active.copy()
            for i in range(n):
                if not active[i]:
                    continue
                neighbors_in = all(active[j] for j in self._neighbor_idx[i])
                if not neighbors_in or not stay_connected(
                        self.stay[i], t + dt, self.design.f_slope):
                    keep[i] = False
            self.conn = keep
        return active, quads, bounds
