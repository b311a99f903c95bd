"""Semantic substrate: variables, bounded runs, observations, indistinguishability.

A finite interpreted system is a fixed set of bounded synchronous runs over a
declared variable vocabulary.  Agents observe a subset of the variables; under
perfect recall an agent's local state at time t is the full sequence of its
observations at times 0..t.  Two points (run, time) are indistinguishable to an
agent iff those sequences are equal, which yields, per agent and per time, a
partition of the time-t points.  Because every step appends one record, equal
local states force equal times, so synchrony is built in.

Runs are stored column-wise (one numpy vector per variable per time class) so
that formula evaluation and partition construction stay vectorized even for
the exhaustive key-enumeration engine.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

Value = Union[int, bool]


class UsageError(Exception):
    """Bad parameters or inputs supplied by the caller (CLI exit code 2)."""


class ModelError(Exception):
    """Ill-formed model or an agent program reading unassigned history."""


@dataclass(frozen=True)
class VariableDecl:
    """A finite-domain variable: who owns it and who can observe it.

    owner is None for environment variables, otherwise an agent name.
    domain is the ordered tuple of admissible values (bools or small ints).
    """

    name: str
    domain: tuple
    owner: Optional[str]
    observable_by: frozenset

    def __post_init__(self):
        if not self.domain:
            raise UsageError(f"variable {self.name!r} has an empty domain")

    def bits(self) -> int:
        return max(1, (len(self.domain) - 1).bit_length())


@dataclass(frozen=True)
class Point:
    """A (run, time) pair; run is the index in the system's canonical order."""

    run: int
    time: int


@dataclass(frozen=True)
class GlobalState:
    """Materialized view of one run at one time: a total, well-typed valuation."""

    valuation: Mapping[str, Value]
    time: int


@dataclass(frozen=True)
class Run:
    """Materialized view of one run: states at times 0..T."""

    run_id: int
    states: tuple

    @property
    def initial(self) -> Mapping[str, Value]:
        return self.states[0].valuation


class ObservationHistory:
    """An agent's perfect-recall local state: one record per time 0..t.

    Records hold the values of every variable observable by the agent, in the
    fixed order given by `names`.  latch_times maps latched variables to the
    step at which they first receive a program-assigned value (used by the
    local-expression evaluator to reject reads of unassigned history).
    """

    __slots__ = ("agent", "names", "records", "latch_times")

    def __init__(self, agent: str, names: tuple, records: tuple,
                 latch_times: Optional[Mapping[str, int]] = None):
        self.agent = agent
        self.names = names
        self.records = records
        self.latch_times = dict(latch_times or {})

    @property
    def time(self) -> int:
        return len(self.records) - 1

    def value(self, name: str, time: Optional[int] = None) -> Value:
        t = self.time if time is None else time
        if not 0 <= t <= self.time:
            raise UsageError(f"time {t} outside observation history (0..{self.time})")
        try:
            i = self.names.index(name)
        except ValueError:
            raise UsageError(f"{name!r} is not observable by {self.agent}") from None
        return self.records[t][i]

    def fingerprint(self) -> tuple:
        return (self.agent, self.records)

    def __eq__(self, other):
        return (isinstance(other, ObservationHistory)
                and self.agent == other.agent
                and self.names == other.names
                and self.records == other.records)

    def __hash__(self):
        return hash((self.agent, self.names, self.records))

    def __repr__(self):
        return f"ObservationHistory({self.agent}, t={self.time})"


@dataclass
class IndistPartition:
    """Partition of the time-t points for one agent.

    blocks maps each block's shared ObservationHistory to the sorted array of
    run indices in the block.  labels[r] is the block id of run r (block ids
    are dense, ordered by least member run).
    """

    agent: str
    time: int
    blocks: dict
    labels: np.ndarray
    n_blocks: int

    def block_of(self, point: Point) -> np.ndarray:
        label = int(self.labels[point.run])
        for runs in self.blocks.values():
            if self.labels[runs[0]] == label:
                return runs
        raise KeyError(point)


class _Trace:
    """Per-variable storage.  kind distinguishes the three time behaviours:

    const   — value fixed for the whole run (initial variables),
    step    — a fresh value at every step (announcements, key bits),
    latched — false until assigned at a fixed step, constant afterwards.

    const and step traces are the primitive observations; latched traces are
    deterministic functions of them and are excluded from partition
    fingerprints (equivalence with full-history grouping is property-tested).
    """

    __slots__ = ("kind", "values", "latch_time")

    def __init__(self, kind: str, values: np.ndarray, latch_time: int = 0):
        self.kind = kind
        self.values = values
        self.latch_time = latch_time

    def at(self, t: int) -> np.ndarray:
        if self.kind == "const":
            return self.values
        if self.kind == "step":
            return self.values[t]
        if t >= self.latch_time:
            return self.values
        return np.zeros_like(self.values)


class InterpretedSystem:
    """A finite set of bounded synchronous runs plus per-agent observability.

    Immutable after construction; all reads (columns, partitions, formula
    evaluation) are pure, so concurrent use is safe.  Partition labels are
    memoized per (agent, time).
    """

    def __init__(self, agents: Sequence[str], horizon: int,
                 variables: Sequence[VariableDecl], n_runs: int,
                 meta: Optional[dict] = None):
        if horizon < 0:
            raise UsageError("horizon must be >= 0")
        self.agents = tuple(agents)
        self.horizon = horizon
        self.n_runs = n_runs
        self.variables = {}
        for decl in variables:
            if decl.name in self.variables:
                raise UsageError(f"duplicate variable {decl.name!r}")
            if decl.owner is not None and decl.owner not in self.agents:
                raise UsageError(f"variable {decl.name!r} owned by unknown agent {decl.owner!r}")
            unknown = decl.observable_by - set(self.agents)
            if unknown:
                raise UsageError(f"variable {decl.name!r} observable by unknown agents {sorted(unknown)}")
            self.variables[decl.name] = decl
        self.meta = dict(meta or {})
        self.excluded_atoms: dict = {}      # name -> reason (e.g. key atoms on the reduced engine)
        self._traces: dict = {}
        self._labels_cache: dict = {}
        self._obs_names = {a: tuple(n for n, d in self.variables.items() if a in d.observable_by)
                           for a in self.agents}
        self._obs_basis = {a: tuple(n for n in self._obs_names[a]
                                    if self._traces_kind_hint(n) != "latched")
                           for a in self.agents}

    # construction -------------------------------------------------------

    def _traces_kind_hint(self, name):
        trace = self._traces.get(name)
        return trace.kind if trace is not None else None

    def set_const(self, name: str, values: np.ndarray):
        self._set(name, _Trace("const", self._coerce(name, values)))

    def set_step(self, name: str, values: np.ndarray):
        values = np.asarray(values, dtype=np.uint8)  # no copy when already uint8
        if values.shape != (self.horizon + 1, self.n_runs):
            raise ModelError(f"step trace {name!r} must be (T+1, n_runs)")
        self._set(name, _Trace("step", values))

    def set_latched(self, name: str, values: np.ndarray, latch_time: int):
        if not 0 <= latch_time <= self.horizon:
            raise ModelError(f"latch time {latch_time} outside 0..{self.horizon}")
        self._set(name, _Trace("latched", self._coerce(name, values), latch_time))

    def _coerce(self, name, values):
        values = np.asarray(values, dtype=np.uint8)  # no copy when already uint8
        if values.shape != (self.n_runs,):
            raise ModelError(f"trace {name!r} must have one value per run")
        return values

    def _set(self, name, trace):
        if name not in self.variables:
            raise ModelError(f"trace for undeclared variable {name!r}")
        self._traces[name] = trace
        # refresh the primitive-observation basis now that the kind is known
        self._obs_basis = {a: tuple(n for n in self._obs_names[a]
                                    if n in self._traces and self._traces[n].kind != "latched")
                           for a in self.agents}

    def finalize(self) -> "InterpretedSystem":
        missing = set(self.variables) - set(self._traces)
        if missing:
            raise ModelError(f"variables without traces: {sorted(missing)}")
        for name, trace in self._traces.items():
            dom = self.variables[name].domain
            allowed = {int(v) for v in dom}
            present = set(np.unique(trace.values).tolist())
            if not present <= allowed:
                raise ModelError(f"values of {name!r} outside its domain: {sorted(present - allowed)}")
        return self

    # reads ---------------------------------------------------------------

    def column(self, name: str, time: int) -> np.ndarray:
        if name in self.excluded_atoms:
            raise UsageError(self.excluded_atoms[name])
        trace = self._traces.get(name)
        if trace is None:
            raise UsageError(f"unknown variable {name!r}")
        if not 0 <= time <= self.horizon:
            raise UsageError(f"time {time} outside 0..{self.horizon}")
        return trace.at(time)

    def latch_time(self, name: str) -> int:
        trace = self._traces[name]
        return trace.latch_time if trace.kind == "latched" else 0

    def observable_names(self, agent: str) -> tuple:
        self._check_agent(agent)
        return self._obs_names[agent]

    def state(self, run: int, time: int) -> GlobalState:
        self._check_point(Point(run, time))
        valuation = {}
        for name in self.variables:
            if name in self.excluded_atoms:
                continue
            raw = int(self._traces[name].at(time)[run])
            dom = self.variables[name].domain
            valuation[name] = bool(raw) if isinstance(dom[0], bool) else raw
        return GlobalState(valuation, time)

    def run(self, run_id: int) -> Run:
        return Run(run_id, tuple(self.state(run_id, t) for t in range(self.horizon + 1)))

    def history_columns(self, agent: str, time: int) -> dict:
        """Latest values of every variable the agent can read, as run vectors."""
        self._check_agent(agent)
        return {name: self.column(name, time) for name in self._obs_names[agent]}

    # partitions ----------------------------------------------------------

    def partition_labels(self, agent: str, time: int, basis: Optional[str] = None):
        """Dense block labels for the time-t points, refined incrementally.

        Labels at time t group runs by equality of the primitive observation
        records at times 0..t; label numbering is by least member run.  The
        optional basis override exists for the oracle's fault-injection
        self-test ("own" drops shared observations on purpose).
        """
        self._check_agent(agent)
        if not 0 <= time <= self.horizon:
            raise UsageError(f"time {time} outside 0..{self.horizon}")
        key = (agent, time, basis)
        if key in self._labels_cache:
            return self._labels_cache[key]
        names = self._basis_names(agent, basis)
        if time == 0:
            labels, n = self._group([self.column(n, 0) for n in names],
                                    [self.variables[n].bits() for n in names], None)
        else:
            prev, n_prev = self.partition_labels(agent, time - 1, basis)
            cols = [self.column(n, time) for n in names]
            bits = [self.variables[n].bits() for n in names]
            labels, n = self._group(cols, bits, (prev, n_prev))
        self._labels_cache[key] = (labels, n)
        return labels, n

    def _basis_names(self, agent, basis):
        names = self._obs_basis[agent]
        if basis == "own":
            names = tuple(n for n in names if self.variables[n].owner == agent)
        return names

    @staticmethod
    def _group(cols, bits, prev):
        """Group runs by the tuple (prev label, *cols) using injective packing."""
        total = sum(bits) + (0 if prev is None else max(1, int(prev[1] - 1).bit_length()))
        if prev is None and not cols:
            raise ModelError("cannot group on an empty record")
        if total <= 63:
            acc = None if prev is None else prev[0].astype(np.int64)
            for col, b in zip(cols, bits):
                col = col.astype(np.int64)
                acc = col if acc is None else (acc << b) | col
            _, first, inverse = np.unique(acc, return_index=True, return_inverse=True)
        else:
            stacked = [] if prev is None else [prev[0].astype(np.int64)]
            stacked += [c.astype(np.int64) for c in cols]
            matrix = np.stack(stacked, axis=1)
            _, first, inverse = np.unique(matrix, axis=0, return_index=True,
                                          return_inverse=True)
        # renumber so block ids follow least-member-run order
        order = np.argsort(first, kind="stable")
        remap = np.empty_like(order)
        remap[order] = np.arange(len(order))
        labels = remap[inverse].astype(np.int64)
        return labels, len(order)

    # validation helpers ---------------------------------------------------

    def _check_agent(self, agent):
        if agent not in self.agents:
            raise UsageError(f"unknown agent {agent!r}")

    def _check_point(self, point: Point):
        if not 0 <= point.time <= self.horizon:
            raise UsageError(f"time {point.time} outside 0..{self.horizon}")
        if not 0 <= point.run < self.n_runs:
            raise UsageError(f"run {point.run} outside 0..{self.n_runs - 1}")


def observation_of(system: InterpretedSystem, point: Point, agent: str) -> ObservationHistory:
    """The agent's full prefix of observable-variable valuations up to point.time."""
    system._check_agent(agent)
    system._check_point(point)
    names = system.observable_names(agent)
    records = []
    for t in range(point.time + 1):
        rec = []
        for name in names:
            raw = int(system.column(name, t)[point.run])
            dom = system.variables[name].domain
            rec.append(bool(raw) if isinstance(dom[0], bool) else raw)
        records.append(tuple(rec))
    latch = {n: system.latch_time(n) for n in names
             if system._traces[n].kind == "latched"}
    return ObservationHistory(agent, names, tuple(records), latch)


def points_at(system: InterpretedSystem, time: int) -> list:
    """One point per run at the given time."""
    if not 0 <= time <= system.horizon:
        raise UsageError(f"time {time} outside 0..{system.horizon}")
    return [Point(r, time) for r in range(system.n_runs)]


def build_partition(system: InterpretedSystem, agent: str, time: int) -> IndistPartition:
    """Explicit partition object (for inspection; the checker uses labels directly)."""
    labels, n_blocks = system.partition_labels(agent, time)
    blocks = {}
    order = np.argsort(labels, kind="stable")
    boundaries = np.flatnonzero(np.diff(labels[order])) + 1
    for runs in np.split(order, boundaries):
        runs = np.sort(runs)
        rep = observation_of(system, Point(int(runs[0]), time), agent)
        blocks[rep] = runs
    return IndistPartition(agent, time, blocks, labels, n_blocks)
