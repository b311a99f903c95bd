"""Multi-round Dining Cryptographers two-phase broadcast: the case study.

Three agents C1..C3 sit on a key ring (k12, k23, k31; each edge shared by its
two endpoints, fresh bits every step) and run a two-phase protocol over three
single-bit slots: steps 1..3 announce slot reservations, steps 4..6 carry the
transmissions.  An agent requests slot s by contributing true in reservation
round s (slot_request = 0 means it stays silent) and, if its conflict test
allows, contributes its message bit in transmission round s + 3.

This module builds both forms of the protocol:

  * the knowledge-based program, whose transmission guard is an epistemic
    test — speculative mode transmits unless the agent knows there is a
    conflict, conservative mode only when it knows there is none — and whose
    reception/delivery variables are assigned from knowledge formulas;
  * the generic implementation, where the guard and those variables are
    filled by concrete predicates of the agent's own history (the library
    below ships the refinement chain cf1 -> cf2 -> cf3 and the validated
    kc / rcvd / dlvrd predicates).

It also owns the conflict/sender macros, the numbered correctness
specifications (1s, 1c, 2, 3, 4a, 4b, 5, 6) with their scheduled check times,
the stock scenarios, and the JSON file formats used by the CLI.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Optional, Sequence

from . import formula as fm
from . import localexpr as le
from .engine import (AgentProgram, Announce, AssignKnowledge, AssignLocal,
                     IfKnowledge, PhaseBlock, ProtocolModel, Scenario)
from .model import UsageError

AGENTS = ("C1", "C2", "C3")
KEY_EDGES = (("k12", ("C1", "C2")), ("k23", ("C2", "C3")), ("k31", ("C3", "C1")))
MODES = ("speculative", "conservative")
SPEC_IDS = ("1s", "1c", "2", "3", "4a", "4b", "5", "6")
PREDICATE_TARGETS = ("kc", "conflict_free", "rcvd0", "rcvd1", "dlvrd")


@dataclass
class DcParams:
    slots: int = 3
    mode: str = "speculative"
    scenario: Optional[Scenario] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.slots < 2:
            raise UsageError("need at least 2 slots")

    @property
    def horizon(self) -> int:
        return 2 * self.slots

# ---------------------------------------------------------------------------
# Macros


def conflict_macro(s: int, slots: int = 3, agents: Sequence[str] = AGENTS) -> fm.Formula:
    """Two distinct agents both requesting slot s."""
    if not 1 <= int(s) <= slots:
        raise UsageError(f"conflict: slot {s} outside 1..{slots}")
    pairs = []
    for i, j in combinations(agents, 2):
        pairs.append(fm.And(fm.Atom(i, "slot_request", "==", int(s)),
                            fm.Atom(j, "slot_request", "==", int(s))))
    return fm.disj(pairs)


def sender_macro(agent: str, x: int, s: int, slots: int = 3,
                 agents: Sequence[str] = AGENTS) -> fm.Formula:
    """Some agent other than `agent` is sending message bit x in slot s."""
    if agent not in agents:
        raise UsageError(f"sender: unknown agent {agent!r}")
    if int(x) not in (0, 1):
        raise UsageError(f"sender: message bit must be 0 or 1, got {x!r}")
    if not 1 <= int(s) <= slots:
        raise UsageError(f"sender: slot {s} outside 1..{slots}")
    return fm.disj(fm.And(fm.Atom(j, "msg", "==", int(x)),
                          fm.Atom(j, "slot_request", "==", int(s)))
                   for j in agents if j != agent)


def dc_macros(slots: int = 3, agents: Sequence[str] = AGENTS) -> dict:
    return {
        "conflict": lambda args: conflict_macro(_one_int(args, "conflict"), slots, agents),
        "sender": lambda args: sender_macro(str(args[0]), _int(args[1], "sender"),
                                            _int(args[2], "sender"), slots, agents)
        if len(args) == 3 else _bad_arity("sender", args),
    }


def _one_int(args, name):
    if len(args) != 1:
        _bad_arity(name, args)
    return _int(args[0], name)


def _int(value, name):
    try:
        return int(value)
    except (TypeError, ValueError):
        raise UsageError(f"{name}: expected an integer argument, got {value!r}")


def _bad_arity(name, args):
    raise UsageError(f"{name}: wrong number of arguments ({len(args)})")

# ---------------------------------------------------------------------------
# Predicate library


@dataclass(frozen=True)
class PredicateDef:
    """A named, slot-parameterized local predicate (text in the local grammar)."""

    name: str
    target: str
    expr: str

    def __post_init__(self):
        if self.target not in PREDICATE_TARGETS:
            raise UsageError(f"unknown predicate target {self.target!r}")

    @property
    def ast(self) -> le.LocalExpr:
        return _parse_cached(self.expr)

    def ground(self, slot: Optional[int]) -> le.LocalExpr:
        return self.ast if slot is None else le.instantiate(self.ast, slot)


@dataclass
class PerSlotPredicate:
    """A predicate given by one ground expression per slot (e.g. synthesized
    tables rendered to their sum-of-products form)."""

    name: str
    target: str
    exprs: dict               # slot (or None) -> LocalExpr or text

    def ground(self, slot: Optional[int]) -> le.LocalExpr:
        if slot not in self.exprs:
            raise UsageError(f"{self.name}: no expression for slot {slot!r}")
        expr = self.exprs[slot]
        return _parse_cached(expr) if isinstance(expr, str) else expr


@lru_cache(maxsize=256)
def _parse_cached(text: str) -> le.LocalExpr:
    return le.parse_local_expr(text)


def _cf1_body(n: int) -> str:
    return f"any t in 1..{n} except s: rr[t]"


def _cf2_body(n: int) -> str:
    # the membership test slot_request in {1..n}\{s} with rr[slot_request]
    # false, written as the equivalent bounded disjunction
    return (f"({_cf1_body(n)}) || "
            f"(any t in 1..{n} except s: slot_request == t && !rr[t])")


def _cf3_text(n: int) -> str:
    return f"rr[s] && (({_cf2_body(n)}) || slot_request != s)"


def _quiet_others(n: int) -> str:
    return f"!(any t in 1..{n} except s: rr[t])"


def builtin_predicate(name: str, slots: int = 3) -> PredicateDef:
    """The predicate library: the guess chain and the validated finals."""
    n = slots
    cf3 = _cf3_text(n)
    table = {
        "kc_guess": ("kc", "!(slot_request == s && !rr[s])"),
        "cf1": ("conflict_free", f"rr[s] && ({_cf1_body(n)})"),
        "cf2": ("conflict_free", f"rr[s] && ({_cf2_body(n)})"),
        "cf3": ("conflict_free", cf3),
        "rcvd1_g1": ("rcvd1", f"rr[s] && ({cf3}) && slot_request != s"),
        "rcvd0_g1": ("rcvd0", f"rr[s] && ({cf3}) && slot_request != s"),
        "rcvd1_final": ("rcvd1",
                        f"(rr[s] && ({cf3}) && slot_request != s && rr[s+{n}])"
                        f" || (slot_request == s && rr[s] && rr[s+{n}] != msg && {_quiet_others(n)})"),
        "rcvd0_final": ("rcvd0",
                        f"(rr[s] && ({cf3}) && slot_request != s && !rr[s+{n}])"
                        f" || (slot_request == s && rr[s] && rr[s+{n}] != msg && {_quiet_others(n)})"),
        "dlvrd_final": ("dlvrd", _dlvrd_text(n)),
    }
    if name not in table:
        raise UsageError(f"unknown builtin predicate {name!r} "
                         f"(known: {', '.join(sorted(table))})")
    target, expr = table[name]
    return PredicateDef(name, target, expr)


def _dlvrd_text(n: int) -> str:
    # delivered iff silent, or the agent's own slot is known conflict-free
    parts = ["slot_request == 0"]
    for u in range(1, n + 1):
        cf3_u = (f"rr[{u}] && (((any t in 1..{n} except {u}: rr[t]) || "
                 f"(any t in 1..{n} except {u}: slot_request == t && !rr[t])) || "
                 f"slot_request != {u})")
        parts.append(f"(slot_request == {u} && {cf3_u})")
    return " || ".join(parts)


def final_predicates(slots: int = 3) -> dict:
    """The predicate set that passes every equivalence specification."""
    return {
        "kc": builtin_predicate("kc_guess", slots),
        "rcvd0": builtin_predicate("rcvd0_final", slots),
        "rcvd1": builtin_predicate("rcvd1_final", slots),
        "dlvrd": builtin_predicate("dlvrd_final", slots),
    }

# ---------------------------------------------------------------------------
# Program builders


def build_cdc(params: DcParams, predicates: Optional[dict] = None,
              kbp: bool = False) -> ProtocolModel:
    """The protocol model: knowledge-based (kbp=True) or a concrete candidate.

    Candidate mode needs predicates for the targets kc, rcvd0, rcvd1, dlvrd
    (default: the validated finals).  Reservation round s announces
    slot_request == s; transmission round s+slots announces msg under the
    guard slot_request == s && kc[s].
    """
    n = params.slots
    programs = {}
    if not kbp:
        if predicates is None:
            predicates = final_predicates(n)
        missing = {"kc", "rcvd0", "rcvd1", "dlvrd"} - set(predicates)
        if missing:
            raise UsageError(f"incomplete predicate set: missing {sorted(missing)}")
        for target, pred in predicates.items():
            if not hasattr(pred, "ground"):
                raise UsageError(f"target {target!r}: not a predicate definition")
    for agent in AGENTS:
        programs[agent] = _agent_program(agent, params, predicates, kbp)
    meta = {"mode": params.mode, "kbp": kbp, "slots": n}
    return ProtocolModel(AGENTS, n, 2 * n, programs, KEY_EDGES,
                         macros=dc_macros(n), meta=meta)


def _agent_program(agent: str, params: DcParams, predicates: Optional[dict],
                   kbp: bool) -> AgentProgram:
    n = params.slots
    locals_ = [("slot_request", "free"), ("msg", "free")]
    if not kbp:
        locals_ += [(f"kc[{s}]", False) for s in range(1, n + 1)]
    locals_ += [(f"rcvd0[{s}]", False) for s in range(1, n + 1)]
    locals_ += [(f"rcvd1[{s}]", False) for s in range(1, n + 1)]
    locals_.append(("dlvrd", False))

    phases = []
    for step in range(1, 2 * n + 1):
        if step <= n:
            announce = Announce(_parse(f"slot_request == {step}"))
        else:
            s = step - n
            if kbp:
                guard = fm.Atom(agent, "slot_request", "==", s)
                if params.mode == "speculative":
                    test = fm.And(guard, fm.Not(fm.Know(agent, conflict_macro(s, n))))
                else:
                    test = fm.And(guard, fm.Know(agent, fm.Not(conflict_macro(s, n))))
                announce = IfKnowledge(test, _parse("msg"), le.LConst(False))
            else:
                announce = Announce(_parse(f"slot_request == {s} && kc[{s}] && msg"))
        post = []
        if step > n:
            s = step - n
            if kbp:
                post.append(AssignKnowledge(f"rcvd0[{s}]",
                                            fm.Know(agent, sender_macro(agent, 0, s, n))))
                post.append(AssignKnowledge(f"rcvd1[{s}]",
                                            fm.Know(agent, sender_macro(agent, 1, s, n))))
            else:
                post.append(AssignLocal(f"rcvd0[{s}]", predicates["rcvd0"].ground(s)))
                post.append(AssignLocal(f"rcvd1[{s}]", predicates["rcvd1"].ground(s)))
        # kc[s'] is computed at the pre-transmission point of slot s', i.e. at
        # the end of step n+s'-1, from everything observed so far
        if not kbp:
            s_next = step - n + 1
            if 1 <= s_next <= n:
                post.append(AssignLocal(f"kc[{s_next}]", predicates["kc"].ground(s_next)))
        if step == 2 * n:
            if kbp:
                post.append(AssignKnowledge("dlvrd", delivery_condition(agent, n)))
            else:
                post.append(AssignLocal("dlvrd", predicates["dlvrd"].ground(None)))
        phases.append(PhaseBlock(announce, tuple(post)))
    return AgentProgram(agent, tuple(locals_), tuple(phases))


def _parse(text: str) -> le.LocalExpr:
    return _parse_cached(text)


def delivery_condition(agent: str, slots: int = 3) -> fm.Formula:
    """The agent knows its transmission got through: for the bit and slot it
    holds, everyone else knows some other agent sent that bit there."""
    parts = []
    for x in (0, 1):
        for t in range(1, slots + 1):
            antecedent = fm.And(fm.Atom(agent, "msg", "==", x),
                                fm.Atom(agent, "slot_request", "==", t))
            inner = fm.conj(fm.Know(j, sender_macro(j, x, t, slots))
                            for j in AGENTS if j != agent)
            parts.append(fm.Implies(antecedent, fm.Know(agent, inner)))
    return fm.conj(parts)

# ---------------------------------------------------------------------------
# Specifications


def pre_transmission_time(slot: int, slots: int = 3) -> int:
    return slots + slot - 1


def spec(spec_id: str, agent: str, slot: Optional[int] = None, slots: int = 3):
    """The numbered correctness specifications, with their check times.

    1s/1c — the kc variable tracks the conflict knowledge it stands for,
    checked at the pre-transmission point of its slot; 2 — a conflict is
    always detected (end); 3 — an agent detects conflicts on its own slot
    (end); 4a/4b — the reception variables track sender knowledge (right
    after the slot's transmission); 5 — the delivery variable tracks nested
    knowledge of reception (end); 6 — anonymity (end).
    """
    spec_id = str(spec_id)
    if spec_id not in SPEC_IDS:
        raise UsageError(f"unknown spec {spec_id!r} (known: {', '.join(SPEC_IDS)})")
    if agent not in AGENTS:
        raise UsageError(f"unknown agent {agent!r}")
    end = 2 * slots
    if spec_id in ("1s", "1c", "2", "3", "4a", "4b"):
        if slot is None:
            raise UsageError(f"spec {spec_id} needs a slot")
        if not 1 <= slot <= slots:
            raise UsageError(f"slot {slot} outside 1..{slots}")
    if spec_id == "1s":
        body = fm.Iff(fm.Atom(agent, f"kc[{slot}]", "==", 1),
                      fm.Not(fm.Know(agent, conflict_macro(slot, slots))))
        return body, pre_transmission_time(slot, slots)
    if spec_id == "1c":
        body = fm.Iff(fm.Atom(agent, f"kc[{slot}]", "==", 1),
                      fm.Know(agent, fm.Not(conflict_macro(slot, slots))))
        return body, pre_transmission_time(slot, slots)
    if spec_id == "2":
        c = conflict_macro(slot, slots)
        return fm.Implies(c, fm.Know(agent, c)), end
    if spec_id == "3":
        c = conflict_macro(slot, slots)
        own = fm.Atom(agent, "slot_request", "==", slot)
        return fm.Implies(fm.And(c, own), fm.Know(agent, c)), end
    if spec_id in ("4a", "4b"):
        x = 0 if spec_id == "4a" else 1
        atom = fm.Atom(agent, f"rcvd{x}[{slot}]", "==", 1)
        return fm.Iff(atom, fm.Know(agent, sender_macro(agent, x, slot, slots))), slots + slot
    if spec_id == "5":
        atom = fm.Atom(agent, "dlvrd", "==", 1)
        return fm.Iff(atom, delivery_condition(agent, slots)), end
    # spec 6: either the agent knows everyone else holds the same bit, or it
    # cannot tell any other agent's bit
    first = fm.disj(fm.Know(agent, fm.conj(fm.Atom(j, "msg", "==", x)
                                           for j in AGENTS if j != agent))
                    for x in (0, 1))
    second = fm.conj(fm.Not(fm.know_value(agent, fm.Atom(j, "msg", "==", 1)))
                     for j in AGENTS if j != agent)
    return fm.Or(first, second), end


def spec_instances(spec_id: str, slots: int = 3,
                   agent: Optional[str] = None, slot: Optional[int] = None):
    """All (agent, slot) instances a spec id ranges over, optionally narrowed."""
    if spec_id not in SPEC_IDS:
        raise UsageError(f"unknown spec {spec_id!r} (known: {', '.join(SPEC_IDS)})")
    agents = [agent] if agent else list(AGENTS)
    if agent and agent not in AGENTS:
        raise UsageError(f"unknown agent {agent!r}")
    if spec_id in ("5", "6"):
        return [(a, None) for a in agents]
    slot_values = [slot] if slot else list(range(1, slots + 1))
    return [(a, s) for a in agents for s in slot_values]


def target_formula(target: str, agent: str, slot: Optional[int],
                   slots: int = 3, mode: str = "speculative"):
    """The knowledge formula a predicate target is meant to equal, and its
    scheduled check time."""
    end = 2 * slots
    if target == "kc":
        c = conflict_macro(slot, slots)
        body = fm.Not(fm.Know(agent, c)) if mode == "speculative" \
            else fm.Know(agent, fm.Not(c))
        return body, pre_transmission_time(slot, slots)
    if target == "conflict_free":
        someone = fm.disj(fm.Atom(j, "slot_request", "==", slot) for j in AGENTS)
        body = fm.Know(agent, fm.And(someone, fm.Not(conflict_macro(slot, slots))))
        return body, end
    if target in ("rcvd0", "rcvd1"):
        x = 0 if target == "rcvd0" else 1
        return fm.Know(agent, sender_macro(agent, x, slot, slots)), slots + slot
    if target == "dlvrd":
        return delivery_condition(agent, slots), end
    raise UsageError(f"unknown predicate target {target!r}")

# ---------------------------------------------------------------------------
# Scenarios


def unknown_scenario(slots: int = 3) -> Scenario:
    """Anyone may stay silent or request any slot; message bits free."""
    return Scenario("unknown",
                    {a: tuple(range(slots + 1)) for a in AGENTS},
                    {a: (0, 1) for a in AGENTS})


def referendum_scenario(slots: int = 3) -> Scenario:
    """Every agent requests some slot (nobody stays silent)."""
    return Scenario("referendum",
                    {a: tuple(range(1, slots + 1)) for a in AGENTS},
                    {a: (0, 1) for a in AGENTS})


def pinned_scenario(slot_request: Sequence[int], msg: Sequence[int],
                    slots: int = 3) -> Scenario:
    if len(slot_request) != len(AGENTS) or len(msg) != len(AGENTS):
        raise UsageError("pinned scenario needs one slot_request and one msg per agent")
    for v in slot_request:
        if not 0 <= int(v) <= slots:
            raise UsageError(f"pinned slot_request value {v} outside 0..{slots}")
    for v in msg:
        if int(v) not in (0, 1):
            raise UsageError(f"pinned msg value {v} must be 0 or 1")
    return Scenario("pinned",
                    {a: (int(slot_request[i]),) for i, a in enumerate(AGENTS)},
                    {a: (int(msg[i]),) for i, a in enumerate(AGENTS)})


def custom_scenario(constraint_text: str, slots: int = 3) -> Scenario:
    constraint = fm.parse_formula(constraint_text, macros=dc_macros(slots))
    base = unknown_scenario(slots)
    return Scenario("custom", base.slot_request, base.msg, constraint)


def scenario_by_name(name: str, slots: int = 3) -> Scenario:
    makers = {"unknown": unknown_scenario, "referendum": referendum_scenario}
    if name not in makers:
        raise UsageError(f"unknown scenario {name!r} (use unknown, referendum, "
                         f"pinned or file:PATH)")
    return makers[name](slots)

# ---------------------------------------------------------------------------
# File formats


def load_scenario_file(path: str):
    """Scenario file: {"model": "dc3", "mode": ..., "scenario": ...,
    "pinned": {"slot_request": [..], "msg": [..]}?, "constraint": "..."?}."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"scenario file {path}: {exc}")
    if data.get("model", "dc3") != "dc3":
        raise UsageError(f"scenario file {path}: unknown model {data.get('model')!r}")
    mode = data.get("mode", "speculative")
    if mode not in MODES:
        raise UsageError(f"scenario file {path}: unknown mode {mode!r}")
    kind = data.get("scenario", "unknown")
    if kind == "pinned":
        pinned = data.get("pinned")
        if not pinned:
            raise UsageError(f"scenario file {path}: pinned scenario needs 'pinned'")
        scenario = pinned_scenario(pinned["slot_request"], pinned["msg"])
    elif kind == "custom":
        if "constraint" not in data:
            raise UsageError(f"scenario file {path}: custom scenario needs 'constraint'")
        scenario = custom_scenario(data["constraint"])
    else:
        scenario = scenario_by_name(kind)
    scenario.mode = mode
    return scenario, mode


def load_predicates_file(path: str) -> list:
    """Predicate file: ordered list of {"name", "target", "expr"}."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"predicate file {path}: {exc}")
    if not isinstance(data, list) or not data:
        raise UsageError(f"predicate file {path}: expected a non-empty list")
    out = []
    for entry in data:
        try:
            pred = PredicateDef(entry["name"], entry["target"], entry["expr"])
        except (KeyError, TypeError):
            raise UsageError(f"predicate file {path}: entries need name/target/expr")
        pred.ast  # parse now so errors carry the file context
        out.append(pred)
    return out
