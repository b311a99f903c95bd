"""Protocol engine: per-agent straight-line programs executed in lock-step.

A protocol runs for a fixed horizon of macro steps.  At every step each agent
announces one bit; all announcements of a step are simultaneous and observed
at the step's end, together with that step's fresh shared key bits.  The
round result rr[t] (xor of the three announcements) is recorded by the engine;
each shared key appears in exactly two announcements, so the keys cancel and
rr[t] equals the xor of the agents' contribution bits.

Three execution paths share the same schedule and statement semantics:

  * execute_step       — scalar single-run reference semantics,
  * generate_runs      — vectorized run-set construction; "naive" enumerates
                         every key schedule exhaustively (the ground-truth
                         oracle), "reduced" quotients the keys out and keeps
                         one run per initial assignment,
  * execute_kbp        — time-inductive execution of knowledge-based programs
                         on the reduced representation: the run prefixes up to
                         step t determine each agent's partition at t, which
                         resolves every present-time knowledge test at t.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Optional, Sequence, Union

import numpy as np

from . import formula as fm
from . import localexpr as le
from .model import (GlobalState, InterpretedSystem, ModelError, UsageError,
                    VariableDecl)

# ---------------------------------------------------------------------------
# Programs


@dataclass(frozen=True)
class Announce:
    expr: le.LocalExpr


@dataclass(frozen=True)
class IfKnowledge:
    """Announce then_expr when the (possibly epistemic) test holds, else else_expr."""

    test: fm.Formula
    then_expr: le.LocalExpr
    else_expr: le.LocalExpr


@dataclass(frozen=True)
class AssignLocal:
    var: str
    expr: le.LocalExpr


@dataclass(frozen=True)
class AssignKnowledge:
    var: str
    formula: fm.Formula


@dataclass(frozen=True)
class PhaseBlock:
    """One macro step: exactly one announcement, then post-step assignments
    that may read everything observed through this step."""

    announce: Union[Announce, IfKnowledge]
    post: tuple = ()


@dataclass(frozen=True)
class AgentProgram:
    agent: str
    locals_: tuple          # of (name, "free" | initial value)
    phases: tuple           # of PhaseBlock, one per step 1..T

    def local_names(self):
        return tuple(name for name, _ in self.locals_)

    def assignment_step(self, var: str) -> Optional[int]:
        for step, block in enumerate(self.phases, start=1):
            for stmt in block.post:
                if stmt.var == var:
                    return step
        return None


@dataclass
class Scenario:
    """Initial-condition constraint: admissible slot_request/msg vectors."""

    name: str
    slot_request: dict       # agent -> tuple of admissible values
    msg: dict                # agent -> tuple of admissible values
    constraint: Optional[fm.Formula] = None
    mode: Optional[str] = None


@dataclass(frozen=True)
class KeySchedule:
    """Fresh booleans per step and ring edge, steps 1..T (scalar path)."""

    bits: tuple              # bits[t-1] = (value per edge, in model.key_edges order)


@dataclass
class ProtocolModel:
    agents: tuple
    slots: int
    horizon: int
    programs: dict           # agent -> AgentProgram
    key_edges: tuple         # of (edge name, (agent, agent)) around the ring
    macros: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def agent_keys(self, agent: str) -> tuple:
        names = [name for name, ends in self.key_edges if agent in ends]
        if len(names) != 2:
            raise ModelError(f"agent {agent!r} must sit on exactly two key edges")
        return tuple(names)

    def agent_index(self, agent: str) -> int:
        return self.agents.index(agent) + 1


def _local_readable(local: str) -> bool:
    """Names an agent's own code may read (the local-expression vocabulary)."""
    return (local in ("slot_request", "msg", "dlvrd")
            or local.startswith(("rr[", "kc[", "rcvd0[", "rcvd1[")))


def has_knowledge_statements(program: AgentProgram) -> bool:
    for block in program.phases:
        if isinstance(block.announce, IfKnowledge):
            return True
        if any(isinstance(s, AssignKnowledge) for s in block.post):
            return True
    return False


def _validate_present_time(program: AgentProgram):
    for block in program.phases:
        if isinstance(block.announce, IfKnowledge) and fm.x_depth(block.announce.test):
            raise UsageError("knowledge tests must refer to the present time (no X)")
        for stmt in block.post:
            if isinstance(stmt, AssignKnowledge) and fm.x_depth(stmt.formula):
                raise UsageError("knowledge assignments must refer to the present time (no X)")

# ---------------------------------------------------------------------------
# Initial assignments


def admissible_assignments(model: ProtocolModel, scenario: Scenario):
    """All initial assignments the scenario admits, in lexicographic order
    (slot_request vector first, then msg vector)."""
    agents = model.agents
    try:
        sr_domains = [tuple(scenario.slot_request[a]) for a in agents]
        msg_domains = [tuple(scenario.msg[a]) for a in agents]
    except KeyError as exc:
        raise UsageError(f"scenario {scenario.name!r} has no domain for agent {exc}")
    out = []
    for combo in product(*sr_domains, *msg_domains):
        sr, msg = combo[:len(agents)], combo[len(agents):]
        if scenario.constraint is not None:
            valuation = {}
            for a, v in zip(agents, sr):
                valuation[f"{a}.slot_request"] = v
            for a, v in zip(agents, msg):
                valuation[f"{a}.msg"] = int(v)
            if not fm.eval_on_valuation(scenario.constraint, valuation):
                continue
        out.append((sr, msg))
    if not out:
        raise UsageError(f"unsatisfiable scenario {scenario.name!r}")
    return out

# ---------------------------------------------------------------------------
# Shared construction helpers


def _declare(model: ProtocolModel, engine_mode: str):
    """Variable declarations for the chosen engine."""
    agents = model.agents
    everyone = frozenset(agents)
    decls = []
    T = model.horizon
    for a in agents:
        program = model.programs[a]
        for name, init in program.locals_:
            flat = f"{a}.{name}"
            if name == "slot_request":
                decls.append(VariableDecl(flat, tuple(range(model.slots + 1)), a, frozenset({a})))
            else:
                decls.append(VariableDecl(flat, (False, True), a, frozenset({a})))
    for t in range(1, T + 1):
        decls.append(VariableDecl(f"rr[{t}]", (False, True), None, everyone))
    if engine_mode == "naive":
        for name, ends in model.key_edges:
            decls.append(VariableDecl(name, (False, True), None, frozenset(ends)))
        for a in agents:
            decls.append(VariableDecl(f"said[{model.agent_index(a)}]", (False, True), None, everyone))
    elif engine_mode == "reduced":
        for a in agents:
            decls.append(VariableDecl(f"{a}.contrib", (False, True), a, frozenset({a})))
            decls.append(VariableDecl(f"{a}.oxr", (False, True), a, frozenset({a})))
    else:
        raise UsageError(f"unknown engine mode {engine_mode!r} (use 'naive' or 'reduced')")
    return decls


class _Builder:
    """Assembles an InterpretedSystem step by step over all runs at once."""

    def __init__(self, model: ProtocolModel, scenario: Scenario, engine_mode: str,
                 n_runs: int, meta: dict):
        self.model = model
        self.T = model.horizon
        self.system = InterpretedSystem(model.agents, self.T, _declare(model, engine_mode),
                                        n_runs, meta=meta)
        self.latched: dict = {}
        self.step_arrays: dict = {}

    def init_locals(self, sr_cols: dict, msg_cols: dict):
        n = self.system.n_runs
        for a in self.model.agents:
            program = self.model.programs[a]
            for name, init in program.locals_:
                flat = f"{a}.{name}"
                if name == "slot_request":
                    self.system.set_const(flat, sr_cols[a])
                elif name == "msg":
                    self.system.set_const(flat, msg_cols[a])
                else:
                    if init == "free":
                        raise ModelError(f"history variable {flat!r} cannot be 'free'")
                    step = program.assignment_step(name)
                    arr = np.full(n, 1 if init else 0, dtype=np.uint8)
                    if step is None:
                        self.system.set_const(flat, arr)
                    else:
                        self.latched[flat] = arr
                        self.system.set_latched(flat, arr, step)
        for t in range(1, self.T + 1):
            arr = np.zeros(n, dtype=np.uint8)
            self.latched[f"rr[{t}]"] = arr
            self.system.set_latched(f"rr[{t}]", arr, t)

    def add_step_var(self, name):
        arr = np.zeros((self.T + 1, self.system.n_runs), dtype=np.uint8)
        self.step_arrays[name] = arr
        self.system.set_step(name, arr)
        return arr

    def history_view(self, agent: str, time: int) -> le.HistoryView:
        """Local view over run vectors: what the agent's own code may read."""
        prefix = f"{agent}."
        columns, latch = {}, {}
        for name in self.system.observable_names(agent):
            local = name[len(prefix):] if name.startswith(prefix) else name
            if not _local_readable(local):
                continue
            columns[local] = self.system.column(name, time)
            if name in self.latched:
                latch[local] = self.system.latch_time(name)
        return le.HistoryView(columns, time, latch, where=f" (agent {agent})")

    def run_posts(self, step: int, evaluator: Optional[fm.Evaluator]):
        for a in self.model.agents:
            block = self.model.programs[a].phases[step - 1]
            for stmt in block.post:
                flat = f"{a}.{stmt.var}"
                if isinstance(stmt, AssignLocal):
                    view = self.history_view(a, step)
                    value = le.eval_expr(stmt.expr, view)
                    if not isinstance(value, np.ndarray):
                        value = np.full(self.system.n_runs, bool(value))
                else:
                    value = evaluator.vector(stmt.formula, step)
                self.latched[flat][:] = value.astype(np.uint8)

    def announce_vec(self, agent: str, step: int, evaluator: Optional[fm.Evaluator],
                     allow_knowledge: bool):
        block = self.model.programs[agent].phases[step - 1]
        view = self.history_view(agent, step - 1)
        stmt = block.announce
        if isinstance(stmt, Announce):
            value = le.eval_expr(stmt.expr, view)
        else:
            if not allow_knowledge:
                raise UsageError(
                    "knowledge statements present; use execute_kbp or plug in concrete predicates")
            test = evaluator.vector(stmt.test, step - 1)
            then_v = le.eval_expr(stmt.then_expr, view)
            else_v = le.eval_expr(stmt.else_expr, view)
            value = np.where(test, then_v, else_v)
        if not isinstance(value, np.ndarray):
            value = np.full(self.system.n_runs, bool(value))
        return value.astype(bool)

# ---------------------------------------------------------------------------
# Run generation


def generate_runs(model: ProtocolModel, scenario: Scenario, engine_mode: str = "reduced",
                  max_naive_runs: int = 4_000_000) -> InterpretedSystem:
    """Run set of a concrete (knowledge-free) protocol under a scenario.

    naive mode: one run per (initial assignment x key schedule), exhaustively.
    reduced mode: one run per initial assignment; agent observations are the
    per-step pairs (own contribution, xor of the others' contributions) —
    everything a ring member can reconstruct from announcements and its own
    keys, and nothing more.
    """
    for a in model.agents:
        if has_knowledge_statements(model.programs[a]):
            raise UsageError(
                "knowledge statements present; use execute_kbp or plug in concrete predicates")
    if engine_mode == "reduced":
        return _build_reduced(model, scenario, allow_knowledge=False)
    if engine_mode == "naive":
        return _build_naive(model, scenario, max_naive_runs)
    raise UsageError(f"unknown engine mode {engine_mode!r} (use 'naive' or 'reduced')")


def execute_kbp(model: ProtocolModel, scenario: Scenario) -> InterpretedSystem:
    """Behaviorally unique run set of a knowledge-based program.

    Knowledge tests must be present-time; they are resolved step by step
    against the partitions of the run prefixes generated so far.
    """
    for a in model.agents:
        _validate_present_time(model.programs[a])
    return _build_reduced(model, scenario, allow_knowledge=True)


def reduced_system(model: ProtocolModel, scenario: Scenario,
                   coarse_fingerprints: bool = False) -> InterpretedSystem:
    """Reduced engine entry point; coarse_fingerprints deliberately weakens the
    observation basis (oracle fault-injection self-test only)."""
    return _build_reduced(model, scenario, allow_knowledge=False,
                          coarse=coarse_fingerprints)


def _scenario_columns(model, vs, repeat=1):
    agents = model.agents
    sr_cols = {a: np.array([v[0][i] for v in vs], dtype=np.uint8).repeat(repeat)
               for i, a in enumerate(agents)}
    msg_cols = {a: np.array([int(v[1][i]) for v in vs], dtype=np.uint8).repeat(repeat)
                for i, a in enumerate(agents)}
    return sr_cols, msg_cols


def _build_reduced(model: ProtocolModel, scenario: Scenario, allow_knowledge: bool,
                   coarse: bool = False) -> InterpretedSystem:
    vs = admissible_assignments(model, scenario)
    meta = {"engine": "reduced", "scenario": scenario.name, "slots": model.slots,
            "assignments": vs}
    b = _Builder(model, scenario, "reduced", len(vs), meta)
    sr_cols, msg_cols = _scenario_columns(model, vs)
    b.init_locals(sr_cols, msg_cols)
    contrib = {a: b.add_step_var(f"{a}.contrib") for a in model.agents}
    oxr = {a: b.add_step_var(f"{a}.oxr") for a in model.agents}
    if coarse:
        # drop the others'-xor component from every fingerprint: too coarse
        for a in model.agents:
            basis = b.system._obs_basis[a]
            b.system._obs_basis[a] = tuple(n for n in basis if not n.endswith(".oxr"))
    evaluator = fm.Evaluator(b.system) if allow_knowledge else None
    knowledge_log = []
    for step in range(1, model.horizon + 1):
        cs = {a: b.announce_vec(a, step, evaluator, allow_knowledge) for a in model.agents}
        rr = np.zeros(b.system.n_runs, dtype=bool)
        for a in model.agents:
            rr ^= cs[a]
        for a in model.agents:
            contrib[a][step] = cs[a].astype(np.uint8)
            oxr[a][step] = (rr ^ cs[a]).astype(np.uint8)
        b.latched[f"rr[{step}]"][:] = rr.astype(np.uint8)
        b.run_posts(step, evaluator)
        if allow_knowledge:
            block_log = []
            for a in model.agents:
                blk = model.programs[a].phases[step - 1]
                if isinstance(blk.announce, IfKnowledge):
                    block_log.append((a, "announce-test", blk.announce.test, step - 1))
                for stmt in blk.post:
                    if isinstance(stmt, AssignKnowledge):
                        block_log.append((a, stmt.var, stmt.formula, step))
            knowledge_log.extend(block_log)
    b.system.meta["contrib"] = {a: contrib[a] for a in model.agents}
    b.system.meta["knowledge_log"] = knowledge_log
    system = b.system.finalize()
    reserved = [name for name, _ in model.key_edges]
    reserved += [f"said[{model.agent_index(a)}]" for a in model.agents]
    for name in reserved:
        system.excluded_atoms[name] = (
            f"{name!r} mentions key/announcement material, which the reduced engine "
            f"quotients out; rerun with the naive engine")
    return system


def _build_naive(model: ProtocolModel, scenario: Scenario,
                 max_naive_runs: int) -> InterpretedSystem:
    vs = admissible_assignments(model, scenario)
    T = model.horizon
    edges = [name for name, _ in model.key_edges]
    n_keys = 2 ** (len(edges) * T)
    n = len(vs) * n_keys
    if n > max_naive_runs:
        raise UsageError(
            f"naive engine would enumerate {n:,} runs (> {max_naive_runs:,}); "
            f"use the reduced engine, or raise max_naive_runs explicitly")
    meta = {"engine": "naive", "scenario": scenario.name, "slots": model.slots,
            "assignments": vs, "n_key_schedules": n_keys}
    b = _Builder(model, scenario, "naive", n, meta)
    sr_cols, msg_cols = _scenario_columns(model, vs, repeat=n_keys)
    b.init_locals(sr_cols, msg_cols)
    # key schedule kappa = run % n_keys; bit (step, edge) of kappa, step-1/edge-0
    # least significant; runs are ordered by assignment first, then schedule
    kappa = np.tile(np.arange(n_keys, dtype=np.int64), len(vs))
    keys = {name: b.add_step_var(name) for name in edges}
    for t in range(1, T + 1):
        for j, name in enumerate(edges):
            keys[name][t] = ((kappa >> (len(edges) * (t - 1) + j)) & 1).astype(np.uint8)
    said = {a: b.add_step_var(f"said[{model.agent_index(a)}]") for a in model.agents}
    contrib = {a: np.zeros((T + 1, n), dtype=np.uint8) for a in model.agents}
    for step in range(1, T + 1):
        rr = np.zeros(n, dtype=bool)
        for a in model.agents:
            c = b.announce_vec(a, step, None, allow_knowledge=False)
            left, right = model.agent_keys(a)
            out = c ^ keys[left][step].astype(bool) ^ keys[right][step].astype(bool)
            said[a][step] = out.astype(np.uint8)
            contrib[a][step] = c.astype(np.uint8)
        for a in model.agents:
            rr ^= said[a][step].astype(bool)
        b.latched[f"rr[{step}]"][:] = rr.astype(np.uint8)
        b.run_posts(step, None)
    b.system.meta["contrib"] = contrib
    return b.system.finalize()

# ---------------------------------------------------------------------------
# Scalar reference semantics


def execute_step(model: ProtocolModel, state: GlobalState, key_bits: dict,
                 step: int) -> GlobalState:
    """One lock-step macro step on a single run, from the time step-1 state.

    key_bits maps each ring edge to this step's fresh boolean.  Announcements
    are evaluated on the pre-step state and committed simultaneously; rr[step]
    and the step's post assignments land in the returned state.
    """
    if not 1 <= step <= model.horizon:
        raise UsageError(f"step {step} outside 1..{model.horizon}")
    if state.time != step - 1:
        raise UsageError(f"state is at time {state.time}, expected {step - 1}")
    valuation = dict(state.valuation)

    def view(agent, time):
        prefix = f"{agent}."
        columns, latch = {}, {}
        for name, value in valuation.items():
            local = name[len(prefix):] if name.startswith(prefix) else name
            if "." in local or not _local_readable(local):
                continue
            columns[local] = value
            if local.startswith("rr["):
                latch[local] = int(local[3:-1])
        program = model.programs[agent]
        for name, _ in program.locals_:
            assigned = program.assignment_step(name)
            if assigned is not None:
                latch[name] = assigned
        return le.HistoryView(columns, time, latch, where=f" (agent {agent})")

    contribs, saids = {}, {}
    for a in model.agents:
        block = model.programs[a].phases[step - 1]
        if not isinstance(block.announce, Announce):
            raise UsageError(
                "knowledge statements present; use execute_kbp or plug in concrete predicates")
        c = bool(le.eval_expr(block.announce.expr, view(a, step - 1)))
        left, right = model.agent_keys(a)
        contribs[a] = c
        saids[a] = c ^ bool(key_bits[left]) ^ bool(key_bits[right])
    rr = False
    for a in model.agents:
        rr ^= saids[a]
        valuation[f"said[{model.agent_index(a)}]"] = saids[a]
    for name, value in key_bits.items():
        valuation[name] = bool(value)
    valuation[f"rr[{step}]"] = rr
    for a in model.agents:
        block = model.programs[a].phases[step - 1]
        for stmt in block.post:
            if not isinstance(stmt, AssignLocal):
                raise UsageError(
                    "knowledge statements present; use execute_kbp or plug in concrete predicates")
            valuation[f"{a}.{stmt.var}"] = bool(le.eval_expr(stmt.expr, view(a, step)))
    return GlobalState(dict(valuation), step)


def run_single(model: ProtocolModel, sr: Sequence[int], msg: Sequence[int],
               schedule: KeySchedule) -> list:
    """The full state sequence of one run under an explicit key schedule."""
    valuation = {}
    for i, a in enumerate(model.agents):
        program = model.programs[a]
        for name, init in program.locals_:
            if name == "slot_request":
                valuation[f"{a}.{name}"] = int(sr[i])
            elif name == "msg":
                valuation[f"{a}.{name}"] = bool(msg[i])
            else:
                valuation[f"{a}.{name}"] = bool(init) if init != "free" else False
        valuation[f"said[{model.agent_index(a)}]"] = False
    for name, _ in model.key_edges:
        valuation[name] = False
    for t in range(1, model.horizon + 1):
        valuation[f"rr[{t}]"] = False
    states = [GlobalState(valuation, 0)]
    for step in range(1, model.horizon + 1):
        bits = dict(zip([name for name, _ in model.key_edges], schedule.bits[step - 1]))
        states.append(execute_step(model, states[-1], bits, step))
    return states


def eval_local_expr(expr, observation_history) -> bool:
    """Value of a local expression over an agent's accumulated history."""
    if isinstance(expr, str):
        expr = le.parse_local_expr(expr)
    view = le.HistoryView.from_observation(observation_history)
    return bool(le.eval_expr(expr, view))

# ---------------------------------------------------------------------------
# Rendering helpers


def initial_vectors(system: InterpretedSystem, run: int):
    sr = [int(system.column(f"{a}.slot_request", 0)[run]) for a in system.agents]
    msg = [int(system.column(f"{a}.msg", 0)[run]) for a in system.agents]
    return sr, msg


def contribution_matrix(system: InterpretedSystem, run: int) -> list:
    """Per-agent contribution bits at steps 1..T (keys already cancelled)."""
    contrib = system.meta.get("contrib")
    if contrib is None:
        raise UsageError("system carries no contribution record")
    return [[int(contrib[a][t][run]) for t in range(1, system.horizon + 1)]
            for a in system.agents]


def rr_vector(system: InterpretedSystem, run: int) -> list:
    return [int(system.column(f"rr[{t}]", system.horizon)[run])
            for t in range(1, system.horizon + 1)]


def verify_kbp_fixpoint(system: InterpretedSystem, model: ProtocolModel) -> bool:
    """Re-evaluate every knowledge test inside the generated system and check
    it reproduces the decisions taken during construction."""
    log = system.meta.get("knowledge_log", [])
    evaluator = fm.Evaluator(system)
    for agent, var, phi, time in log:
        recomputed = evaluator.vector(phi, time)
        if var == "announce-test":
            step = time + 1
            block = model.programs[agent].phases[step - 1]
            then_vec = _scalarize(le.eval_expr(block.announce.then_expr,
                                               local_view(system, agent, time)), system.n_runs)
            else_vec = _scalarize(le.eval_expr(block.announce.else_expr,
                                               local_view(system, agent, time)), system.n_runs)
            expect = np.where(recomputed, then_vec, else_vec)
            actual = system.meta["contrib"][agent][step].astype(bool)
        else:
            expect = recomputed
            actual = system.column(f"{agent}.{var}", time).astype(bool)
        if not np.array_equal(expect, actual):
            return False
    return True


def local_view(system, agent, time) -> le.HistoryView:
    """What the agent's own code can read at `time`, as run vectors."""
    prefix = f"{agent}."
    columns, latch = {}, {}
    for name in system.observable_names(agent):
        local = name[len(prefix):] if name.startswith(prefix) else name
        if not _local_readable(local) or name in system.excluded_atoms:
            continue
        columns[local] = system.column(name, time)
        if system._traces[name].kind == "latched":
            latch[local] = system.latch_time(name)
    return le.HistoryView(columns, time, latch, where=f" (agent {agent})")


def _scalarize(value, n):
    if isinstance(value, np.ndarray):
        return value.astype(bool)
    return np.full(n, bool(value))
