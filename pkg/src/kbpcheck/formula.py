"""Temporal-epistemic formulas: AST, parser, printer, and evaluator.

Syntax:

    phi  := "true" | "false" | atom | "!" phi | phi "&&" phi | phi "||" phi
          | phi "=>" phi | phi "<=>" phi
          | "K[" AGENT "](" phi ")" | "Khat[" AGENT "](" atom ")" | "X" phi
          | macro
    atom := (AGENT "." | "") IDENT ["[" INT "]"] ("==" | "!=") VALUE | "RR[" INT "]"

Precedence: ! (and the prefix X) > && > || > (=>, <=>); binary operators are
left-associative; parentheses override.  Khat[A](x) is expanded at parse time
into K[A](x == true) || K[A](x == false).  Macros (conflict, sender, ...) are
supplied by the model being checked and expand to plain formulas.

Evaluation follows the standard clauses: an atom reads the valuation, X moves
one step forward, and K[A](phi) holds at a point iff phi holds at every point
in agent A's indistinguishability block.  Evaluation is vectorized over all
runs at a time and memoized per (node, time) within one Evaluator.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .model import InterpretedSystem, Point, UsageError

# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class Atom:
    agent: Optional[str]     # None for environment variables
    var: str                 # flat name, e.g. "slot_request", "kc[1]", "rr[2]"
    op: str                  # "==" | "!="
    value: int

    @property
    def name(self) -> str:
        return self.var if self.agent is None else f"{self.agent}.{self.var}"


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Iff:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Know:
    agent: str
    child: "Formula"


@dataclass(frozen=True)
class Next:
    child: "Formula"


Formula = Union[Const, Atom, Not, And, Or, Implies, Iff, Know, Next]

TRUE = Const(True)
FALSE = Const(False)


def conj(parts) -> Formula:
    parts = list(parts)
    if not parts:
        return TRUE
    out = parts[0]
    for p in parts[1:]:
        out = And(out, p)
    return out


def disj(parts) -> Formula:
    parts = list(parts)
    if not parts:
        return FALSE
    out = parts[0]
    for p in parts[1:]:
        out = Or(out, p)
    return out


def know_value(agent: str, atom: Atom) -> Formula:
    """Khat: the agent knows which way the atom goes."""
    if atom.value in (0, 1):
        flipped = Atom(atom.agent, atom.var, atom.op, 1 - atom.value)
        return Or(Know(agent, atom), Know(agent, flipped))
    return Or(Know(agent, atom), Know(agent, Not(atom)))


def x_depth(phi: Formula) -> int:
    if isinstance(phi, (Const, Atom)):
        return 0
    if isinstance(phi, (Not, Know)):
        return x_depth(phi.child)
    if isinstance(phi, Next):
        return 1 + x_depth(phi.child)
    return max(x_depth(phi.left), x_depth(phi.right))


def atoms_of(phi: Formula):
    if isinstance(phi, Atom):
        yield phi
    elif isinstance(phi, (Not, Know, Next)):
        yield from atoms_of(phi.child)
    elif not isinstance(phi, Const):
        yield from atoms_of(phi.left)
        yield from atoms_of(phi.right)


def subformulas(phi: Formula):
    yield phi
    if isinstance(phi, (Not, Know, Next)):
        yield from subformulas(phi.child)
    elif not isinstance(phi, (Const, Atom)):
        yield from subformulas(phi.left)
        yield from subformulas(phi.right)

# ---------------------------------------------------------------------------
# Printing (precedence-aware; parse(fmt(phi)) == phi)

_LEVEL = {Iff: 1, Implies: 1, Or: 2, And: 3}


def fmt(phi: Formula) -> str:
    return _fmt(phi, 0)


def _fmt(phi: Formula, outer: int) -> str:
    if isinstance(phi, Const):
        return "true" if phi.value else "false"
    if isinstance(phi, Atom):
        return f"{phi.name} {phi.op} {phi.value}"
    if isinstance(phi, Not):
        return "!" + _fmt(phi.child, 4)
    if isinstance(phi, Know):
        return f"K[{phi.agent}]({_fmt(phi.child, 0)})"
    if isinstance(phi, Next):
        return "X " + _fmt(phi.child, 4)
    op = {And: "&&", Or: "||", Implies: "=>", Iff: "<=>"}[type(phi)]
    level = _LEVEL[type(phi)]
    text = f"{_fmt(phi.left, level)} {op} {_fmt(phi.right, level + 1)}"
    return f"({text})" if outer > level else text

# ---------------------------------------------------------------------------
# Parser

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<int>\d+)
  | (?P<op><=>|=>|\|\||&&|==|!=|[!()\[\].,])
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
""", re.VERBOSE)

MacroTable = dict  # name -> Callable[[list], Formula]


class _Parser:
    def __init__(self, text: str, model=None, macros: Optional[MacroTable] = None):
        self.text = text
        self.model = model
        self.macros = macros or {}
        self.tokens = self._tokenize(text)
        self.i = 0

    @staticmethod
    def _tokenize(text):
        tokens, pos = [], 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if not m:
                raise UsageError(f"formula: bad character {text[pos]!r} at {pos}")
            pos = m.end()
            if m.lastgroup != "ws":
                tokens.append((m.lastgroup, m.group(), m.start()))
        tokens.append(("eof", "", len(text)))
        return tokens

    def peek(self, ahead=0):
        return self.tokens[min(self.i + ahead, len(self.tokens) - 1)]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.next()
        if text != value:
            raise UsageError(f"formula: expected {value!r} at {pos}, got {text!r}")

    def fail(self, msg):
        _, text, pos = self.peek()
        raise UsageError(f"formula: {msg} at {pos} (near {text!r})")

    def parse(self) -> Formula:
        phi = self.parse_arrow()
        if self.peek()[0] != "eof":
            self.fail("trailing input")
        return phi

    def parse_arrow(self):
        phi = self.parse_or()
        while self.peek()[1] in ("=>", "<=>"):
            op = self.next()[1]
            rhs = self.parse_or()
            phi = Implies(phi, rhs) if op == "=>" else Iff(phi, rhs)
        return phi

    def parse_or(self):
        phi = self.parse_and()
        while self.peek()[1] == "||":
            self.next()
            phi = Or(phi, self.parse_and())
        return phi

    def parse_and(self):
        phi = self.parse_unary()
        while self.peek()[1] == "&&":
            self.next()
            phi = And(phi, self.parse_unary())
        return phi

    def parse_unary(self):
        kind, text, pos = self.peek()
        if text == "!":
            self.next()
            return Not(self.parse_unary())
        if text == "X":
            self.next()
            return Next(self.parse_unary())
        if text in ("K", "Khat") and self.peek(1)[1] == "[":
            return self.parse_know(text)
        return self.parse_primary()

    def parse_know(self, kw):
        self.next()
        self.expect("[")
        agent = self.ident("agent name")
        self.expect("]")
        self.expect("(")
        if kw == "K":
            body = self.parse_arrow()
            self.expect(")")
            self.check_agent(agent)
            return Know(agent, body)
        atom = self.parse_atom_or_ref()
        self.expect(")")
        self.check_agent(agent)
        return know_value(agent, atom)

    def parse_primary(self):
        kind, text, pos = self.peek()
        if text == "(":
            self.next()
            phi = self.parse_arrow()
            self.expect(")")
            return phi
        if text == "true":
            self.next()
            return TRUE
        if text == "false":
            self.next()
            return FALSE
        if kind == "name" and self.peek(1)[1] == "(" and text in self.macros:
            return self.parse_macro(text)
        if kind == "name" and self.peek(1)[1] == "(" and text not in ("K", "Khat"):
            raise UsageError(f"formula: unknown macro {text!r} at {pos}"
                             + ("" if self.macros else " (no model bound)"))
        return self.parse_atom_or_ref(require_cmp=True)

    def parse_macro(self, name):
        self.next()
        self.expect("(")
        args = []
        if self.peek()[1] != ")":
            args.append(self.macro_arg())
            while self.peek()[1] == ",":
                self.next()
                args.append(self.macro_arg())
        self.expect(")")
        try:
            return self.macros[name](args)
        except UsageError:
            raise
        except Exception as exc:
            raise UsageError(f"formula: macro {name}({', '.join(map(str, args))}): {exc}")

    def macro_arg(self):
        kind, text, pos = self.next()
        if kind == "int":
            return int(text)
        if kind == "name":
            return text
        raise UsageError(f"formula: bad macro argument at {pos}")

    def parse_atom_or_ref(self, require_cmp=False) -> Atom:
        kind, text, pos = self.peek()
        if text == "RR":
            self.next()
            self.expect("[")
            idx = self.int_lit()
            self.expect("]")
            return self.validated(Atom(None, f"rr[{idx}]", "==", 1))
        agent = None
        name = self.ident("variable or agent name")
        if self.peek()[1] == ".":
            self.next()
            agent = name
            self.check_agent(agent)
            name = self.ident("variable name")
        if self.peek()[1] == "[":
            self.next()
            idx = self.int_lit()
            self.expect("]")
            name = f"{name}[{idx}]"
        if self.peek()[1] in ("==", "!="):
            op = self.next()[1]
            value = self.value_lit()
            return self.validated(Atom(agent, name, op, value))
        if require_cmp:
            self.fail(f"atom {name!r} needs '== value' or '!= value'")
        return self.validated(Atom(agent, name, "==", 1))

    def ident(self, what):
        kind, text, pos = self.next()
        if kind != "name":
            raise UsageError(f"formula: expected {what} at {pos}")
        return text

    def int_lit(self):
        kind, text, pos = self.next()
        if kind != "int":
            raise UsageError(f"formula: expected an integer at {pos}")
        return int(text)

    def value_lit(self):
        kind, text, pos = self.next()
        if kind == "int":
            return int(text)
        if text == "true":
            return 1
        if text == "false":
            return 0
        raise UsageError(f"formula: expected a value at {pos}")

    def check_agent(self, agent):
        if self.model is not None and agent not in self.model.agents:
            raise UsageError(f"formula: unknown agent {agent!r}")

    def validated(self, atom: Atom) -> Atom:
        if self.model is None:
            return atom
        if atom.agent is not None:
            self.check_agent(atom.agent)
        decls = getattr(self.model, "variables", None)
        if decls is not None and atom.name not in decls:
            raise UsageError(f"formula: unknown variable {atom.name!r}")
        if decls is not None:
            dom = {int(v) for v in decls[atom.name].domain}
            if atom.value not in dom:
                raise UsageError(
                    f"formula: value {atom.value} outside the domain of {atom.name!r}")
        return atom


def parse_formula(text: str, model=None, macros: Optional[MacroTable] = None) -> Formula:
    """Parse a formula; `model` enables agent/variable/domain validation and
    `macros` supplies the model-bound macro expansions."""
    if macros is None and model is not None:
        macros = getattr(model, "macros", None)
    return _Parser(text, model, macros).parse()

# ---------------------------------------------------------------------------
# Evaluation


class Evaluator:
    """Vectorized evaluator over one system; memoizes per (node, time)."""

    def __init__(self, system: InterpretedSystem):
        self.system = system
        self.memo: dict = {}

    def vector(self, phi: Formula, time: int) -> np.ndarray:
        if not 0 <= time <= self.system.horizon:
            raise UsageError(f"time {time} outside 0..{self.system.horizon}")
        if time + x_depth(phi) > self.system.horizon:
            raise UsageError(
                f"temporal depth of the formula exceeds the horizon at time {time}")
        return self._vec(phi, time)

    def _vec(self, phi, time):
        key = (phi, time)
        cached = self.memo.get(key)
        if cached is not None:
            return cached
        out = self._compute(phi, time)
        out.setflags(write=False)
        self.memo[key] = out
        return out

    def _compute(self, phi, time):
        system = self.system
        if isinstance(phi, Const):
            return np.full(system.n_runs, phi.value, dtype=bool)
        if isinstance(phi, Atom):
            col = system.column(phi.name, time)
            return (col == phi.value) if phi.op == "==" else (col != phi.value)
        if isinstance(phi, Not):
            return ~self._vec(phi.child, time)
        if isinstance(phi, And):
            return self._vec(phi.left, time) & self._vec(phi.right, time)
        if isinstance(phi, Or):
            return self._vec(phi.left, time) | self._vec(phi.right, time)
        if isinstance(phi, Implies):
            return ~self._vec(phi.left, time) | self._vec(phi.right, time)
        if isinstance(phi, Iff):
            return self._vec(phi.left, time) == self._vec(phi.right, time)
        if isinstance(phi, Next):
            if time + 1 > system.horizon:
                raise UsageError("X evaluated past the horizon")
            return self._vec(phi.child, time + 1)
        if isinstance(phi, Know):
            body = self._vec(phi.child, time)
            labels, n_blocks = system.partition_labels(phi.agent, time)
            tainted = np.zeros(n_blocks, dtype=bool)
            tainted[labels[~body]] = True
            return ~tainted[labels]
        raise TypeError(f"not a formula node: {phi!r}")


def eval_at(system: InterpretedSystem, phi: Formula, point: Point,
            evaluator: Optional[Evaluator] = None) -> bool:
    """Truth of phi at one point."""
    system._check_point(point)
    ev = evaluator or Evaluator(system)
    return bool(ev.vector(phi, point.time)[point.run])


@dataclass
class KnowWitness:
    """Explains a false K[agent](body): `other` is in the same block as the
    witness point but falsifies the body."""

    agent: str
    body: Formula
    other: Point


@dataclass
class Verdict:
    holds: bool
    formula: Formula
    time: int
    witness: Optional[Point] = None
    know_witness: Optional[KnowWitness] = None

    @property
    def outcome(self) -> str:
        return "holds" if self.holds else "fails"


def check_valid_at(system: InterpretedSystem, phi: Formula, time: int,
                   evaluator: Optional[Evaluator] = None) -> Verdict:
    """Holds iff phi is true at every time-`time` point; otherwise reports the
    least failing run, plus a same-block witness pair for a falsified K."""
    ev = evaluator or Evaluator(system)
    vec = ev.vector(phi, time)
    if vec.all():
        return Verdict(True, phi, time)
    run = int(np.argmin(vec))
    witness = Point(run, time)
    return Verdict(False, phi, time, witness,
                   explain_know_failure(system, phi, witness, ev))


def explain_know_failure(system: InterpretedSystem, phi: Formula, point: Point,
                         evaluator: Optional[Evaluator] = None) -> Optional[KnowWitness]:
    """First (pre-order) K-subformula false at the point, explained by an
    indistinguishable point falsifying its body; None if no K is false."""
    ev = evaluator or Evaluator(system)

    def search(node, time):
        if isinstance(node, (Const, Atom)):
            return None
        if isinstance(node, Next):
            return search(node.child, time + 1)
        if isinstance(node, Know):
            if not ev.vector(node, time)[point.run]:
                body = ev.vector(node.child, time)
                labels, _ = system.partition_labels(node.agent, time)
                same = labels == labels[point.run]
                bad = np.flatnonzero(same & ~body)
                if bad.size:
                    return KnowWitness(node.agent, node.child, Point(int(bad[0]), time))
            return search(node.child, time)
        if isinstance(node, Not):
            return search(node.child, time)
        return search(node.left, time) or search(node.right, time)

    return search(phi, point.time)


def eval_on_valuation(phi: Formula, valuation: dict) -> bool:
    """Evaluate a K/X-free formula on a single valuation (scenario constraints)."""
    if isinstance(phi, Const):
        return phi.value
    if isinstance(phi, Atom):
        if phi.name not in valuation:
            raise UsageError(f"constraint reads {phi.name!r}, not an initial variable")
        raw = int(valuation[phi.name])
        return (raw == phi.value) if phi.op == "==" else (raw != phi.value)
    if isinstance(phi, Not):
        return not eval_on_valuation(phi.child, valuation)
    if isinstance(phi, And):
        return eval_on_valuation(phi.left, valuation) and eval_on_valuation(phi.right, valuation)
    if isinstance(phi, Or):
        return eval_on_valuation(phi.left, valuation) or eval_on_valuation(phi.right, valuation)
    if isinstance(phi, Implies):
        return (not eval_on_valuation(phi.left, valuation)) or eval_on_valuation(phi.right, valuation)
    if isinstance(phi, Iff):
        return eval_on_valuation(phi.left, valuation) == eval_on_valuation(phi.right, valuation)
    raise UsageError("scenario constraints may not use K, Khat or X")
