"""Local-expression language: what an agent's own code may compute.

Grammar (predicates over one agent's accumulated history):

    e       := or
    or      := and ("||" and)*
    and     := cmp ("&&" cmp)*
    cmp     := unary (("==" | "!=") unary)?
    unary   := "!" unary | primary
    primary := "true" | "false" | "(" e ")" | "msg" | "dlvrd"
             | ("rr" | "kc" | "rcvd0" | "rcvd1") "[" idx "]"
             | "slot_request" (("==" | "!=") iterm | "in" iset)
             | "any" VAR "in" INT ".." INT ["except" idx] ":" e
    idx     := INT | "s" | VAR, optionally "+" INT
    iterm   := INT | "s" | VAR
    iset    := "{" iterm ("," iterm)* "}" | INT ".." INT ["except" idx]

"s" is the slot parameter, substituted when a slot-parameterized predicate is
instantiated.  The "any" binder is a bounded disjunction; it covers forms such
as  any t in 1..3 except s: (slot_request == t && !rr[t]).

Expressions evaluate either on a single observation history (plain bools) or
on whole columns of runs at once (numpy vectors); the evaluator is shared.
Reading rr[u] before step u has happened is a model error; kc/rcvd/dlvrd read
as their declared initial value (false) before assignment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .model import ModelError, ObservationHistory, UsageError

# ---------------------------------------------------------------------------
# AST

Idx = tuple  # ("const", n) | ("slot", offset) | ("var", name, offset)


@dataclass(frozen=True)
class LConst:
    value: bool


@dataclass(frozen=True)
class LRef:
    base: str            # rr | kc | rcvd0 | rcvd1 | msg | dlvrd
    index: Optional[Idx]


@dataclass(frozen=True)
class LSlotCmp:
    op: str              # "==" | "!=" | "in"
    terms: tuple         # of Idx (a single one for ==/!=)
    except_: Optional[Idx] = None


@dataclass(frozen=True)
class LNot:
    child: "LocalExpr"


@dataclass(frozen=True)
class LBin:
    op: str              # "&&" | "||" | "==" | "!="
    left: "LocalExpr"
    right: "LocalExpr"


@dataclass(frozen=True)
class LAny:
    var: str
    lo: int
    hi: int
    except_: Optional[Idx]
    body: "LocalExpr"


LocalExpr = Union[LConst, LRef, LSlotCmp, LNot, LBin, LAny]

_INDEXED = {"rr", "kc", "rcvd0", "rcvd1"}
_BARE = {"msg", "dlvrd"}

# ---------------------------------------------------------------------------
# Parser

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<int>\d+)
  | (?P<dots>\.\.)
  | (?P<op>\|\||&&|==|!=|[!()\[\]{},:+])
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
""", re.VERBOSE)


def _tokenize(text: str):
    tokens, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise UsageError(f"local expression: bad character {text[pos]!r} at {pos}")
        pos = m.end()
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), m.start()))
    tokens.append(("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.next()
        if text != value:
            raise UsageError(f"local expression: expected {value!r} at {pos}, got {text!r}")

    def fail(self, msg):
        _, text, pos = self.peek()
        raise UsageError(f"local expression: {msg} at {pos} (near {text!r})")

    def parse(self) -> LocalExpr:
        expr = self.parse_or()
        if self.peek()[0] != "eof":
            self.fail("trailing input")
        return expr

    def parse_or(self):
        expr = self.parse_and()
        while self.peek()[1] == "||":
            self.next()
            expr = LBin("||", expr, self.parse_and())
        return expr

    def parse_and(self):
        expr = self.parse_cmp()
        while self.peek()[1] == "&&":
            self.next()
            expr = LBin("&&", expr, self.parse_cmp())
        return expr

    def parse_cmp(self):
        expr = self.parse_unary()
        if self.peek()[1] in ("==", "!="):
            op = self.next()[1]
            expr = LBin(op, expr, self.parse_unary())
        return expr

    def parse_unary(self):
        if self.peek()[1] == "!":
            self.next()
            return LNot(self.parse_unary())
        return self.parse_primary()

    def parse_primary(self):
        kind, text, pos = self.peek()
        if text == "(":
            self.next()
            expr = self.parse_or()
            self.expect(")")
            return expr
        if text == "true":
            self.next()
            return LConst(True)
        if text == "false":
            self.next()
            return LConst(False)
        if text == "any":
            return self.parse_any()
        if text == "slot_request":
            self.next()
            return self.parse_slot_cmp()
        if text in _BARE:
            self.next()
            return LRef(text, None)
        if text in _INDEXED:
            self.next()
            self.expect("[")
            idx = self.parse_idx()
            self.expect("]")
            return LRef(text, idx)
        self.fail("expected an expression")

    def parse_any(self):
        self.expect("any")
        kind, var, pos = self.next()
        if kind != "name":
            raise UsageError(f"local expression: expected a binder variable at {pos}")
        self.expect("in")
        lo = self.parse_int()
        self.expect("..")
        hi = self.parse_int()
        except_ = None
        if self.peek()[1] == "except":
            self.next()
            except_ = self.parse_idx()
        self.expect(":")
        body = self.parse_or()
        return LAny(var, lo, hi, except_, body)

    def parse_slot_cmp(self):
        op = self.peek()[1]
        if op in ("==", "!="):
            self.next()
            return LSlotCmp(op, (self.parse_idx(),))
        if op == "in":
            self.next()
            if self.peek()[1] == "{":
                self.next()
                terms = [self.parse_idx()]
                while self.peek()[1] == ",":
                    self.next()
                    terms.append(self.parse_idx())
                self.expect("}")
                return LSlotCmp("in", tuple(terms))
            lo = self.parse_int()
            self.expect("..")
            hi = self.parse_int()
            except_ = None
            if self.peek()[1] == "except":
                self.next()
                except_ = self.parse_idx()
            return LSlotCmp("in", tuple(("const", v) for v in range(lo, hi + 1)), except_)
        self.fail("expected ==, != or in after slot_request")

    def parse_int(self) -> int:
        kind, text, pos = self.next()
        if kind != "int":
            raise UsageError(f"local expression: expected an integer at {pos}")
        return int(text)

    def parse_idx(self) -> Idx:
        kind, text, pos = self.next()
        if kind == "int":
            base = ("const", int(text))
        elif text == "s":
            base = ("slot", 0)
        elif kind == "name":
            base = ("var", text, 0)
        else:
            raise UsageError(f"local expression: bad index at {pos}")
        if self.peek()[1] == "+":
            self.next()
            off = self.parse_int()
            if base[0] == "const":
                base = ("const", base[1] + off)
            elif base[0] == "slot":
                base = ("slot", off)
            else:
                base = ("var", base[1], off)
        return base


def parse_local_expr(text: str) -> LocalExpr:
    """Parse a local expression; raises UsageError with a position on bad input."""
    return _Parser(text).parse()

# ---------------------------------------------------------------------------
# Evaluation


class HistoryView:
    """Adapter from named history variables to values (scalars or run vectors).

    columns maps the agent-local base names (rr[2], slot_request, msg, ...) to
    values; latch maps latched names to the step at which they are assigned.
    Reads of rr entries beyond `time` raise ModelError; other latched names
    read as False before their assignment step.
    """

    def __init__(self, columns: dict, time: int, latch: Optional[dict] = None,
                 where: str = ""):
        self.columns = columns
        self.time = time
        self.latch = latch or {}
        self.where = where

    def ref(self, base: str, index: Optional[int]):
        name = base if index is None else f"{base}[{index}]"
        if name not in self.columns:
            raise ModelError(f"unknown history variable {name!r}{self.where}")
        assigned_at = self.latch.get(name, 0)
        if assigned_at > self.time:
            if base == "rr":
                raise ModelError(
                    f"unassigned history variable {name!r} read at time {self.time}{self.where}")
            value = self.columns[name]
            return np.zeros_like(value) if isinstance(value, np.ndarray) else False
        return self.columns[name]

    def slot_request(self):
        return self.ref("slot_request", None)

    @classmethod
    def from_observation(cls, history: ObservationHistory) -> "HistoryView":
        prefix = history.agent + "."
        columns = {}
        for name in history.names:
            local = name[len(prefix):] if name.startswith(prefix) else name
            columns[local] = history.value(name)
        latch = {}
        for name, t in history.latch_times.items():
            local = name[len(prefix):] if name.startswith(prefix) else name
            latch[local] = t
        return cls(columns, history.time, latch, where=f" (agent {history.agent})")


def _resolve(idx: Optional[Idx], slot: Optional[int], bindings: dict) -> Optional[int]:
    if idx is None:
        return None
    if idx[0] == "const":
        return idx[1]
    if idx[0] == "slot":
        if slot is None:
            raise UsageError("expression uses the slot parameter 's' but no slot was given")
        return slot + idx[1]
    _, name, off = idx
    if name not in bindings:
        raise UsageError(f"unbound index variable {name!r}")
    return bindings[name] + off


def eval_expr(expr: LocalExpr, view: HistoryView, slot: Optional[int] = None,
              bindings: Optional[dict] = None):
    """Evaluate over a HistoryView; returns a bool or a bool vector."""
    bindings = bindings or {}
    if isinstance(expr, LConst):
        return expr.value
    if isinstance(expr, LRef):
        value = view.ref(expr.base, _resolve(expr.index, slot, bindings))
        return value.astype(bool) if isinstance(value, np.ndarray) else bool(value)
    if isinstance(expr, LSlotCmp):
        sr = view.slot_request()
        values = [_resolve(t, slot, bindings) for t in expr.terms]
        if expr.except_ is not None:
            excluded = _resolve(expr.except_, slot, bindings)
            values = [v for v in values if v != excluded]
        if expr.op == "==":
            return sr == values[0]
        if expr.op == "!=":
            return sr != values[0]
        out = sr == values[0] if values else (sr != sr)
        for v in values[1:]:
            out = out | (sr == v)
        return out
    if isinstance(expr, LNot):
        child = eval_expr(expr.child, view, slot, bindings)
        return ~child if isinstance(child, np.ndarray) else not child
    if isinstance(expr, LBin):
        left = eval_expr(expr.left, view, slot, bindings)
        right = eval_expr(expr.right, view, slot, bindings)
        if expr.op == "&&":
            return left & right
        if expr.op == "||":
            return left | right
        if expr.op == "==":
            return left == right
        return left != right
    if isinstance(expr, LAny):
        values = range(expr.lo, expr.hi + 1)
        excluded = _resolve(expr.except_, slot, bindings)
        out = None
        for v in values:
            if v == excluded:
                continue
            term = eval_expr(expr.body, view, slot, {**bindings, expr.var: v})
            out = term if out is None else (out | term)
        if out is None:
            return False
        return out


def instantiate(expr: LocalExpr, slot: int) -> LocalExpr:
    """Ground a slot-parameterized expression: every 's' index becomes a constant."""

    def ground(idx):
        if idx is None or idx[0] != "slot":
            return idx
        return ("const", slot + idx[1])

    if isinstance(expr, LConst):
        return expr
    if isinstance(expr, LRef):
        return LRef(expr.base, ground(expr.index))
    if isinstance(expr, LSlotCmp):
        return LSlotCmp(expr.op, tuple(ground(t) for t in expr.terms), ground(expr.except_))
    if isinstance(expr, LNot):
        return LNot(instantiate(expr.child, slot))
    if isinstance(expr, LBin):
        return LBin(expr.op, instantiate(expr.left, slot), instantiate(expr.right, slot))
    if isinstance(expr, LAny):
        return LAny(expr.var, expr.lo, expr.hi, ground(expr.except_),
                    instantiate(expr.body, slot))
    raise TypeError(f"not a local expression node: {expr!r}")


def expr_reads(expr: LocalExpr, slot: Optional[int] = None) -> set:
    """Names the expression may read, with indices resolved where possible."""
    out = set()

    def walk(e, bindings):
        if isinstance(e, LRef):
            try:
                idx = _resolve(e.index, slot, bindings)
                out.add(e.base if idx is None else f"{e.base}[{idx}]")
            except UsageError:
                out.add(e.base + "[?]")
        elif isinstance(e, LSlotCmp):
            out.add("slot_request")
        elif isinstance(e, LNot):
            walk(e.child, bindings)
        elif isinstance(e, LBin):
            walk(e.left, bindings)
            walk(e.right, bindings)
        elif isinstance(e, LAny):
            for v in range(e.lo, e.hi + 1):
                walk(e.body, {**bindings, e.var: v})

    walk(expr, {})
    return out
