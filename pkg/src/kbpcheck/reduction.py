"""Two evaluation engines and the oracle proving they agree.

The naive engine enumerates every key schedule exhaustively: it is the
ground-truth semantics, feasible only at small scale.  The reduced engine
quotients the keys out: one run per admissible initial assignment, with
agent observations replaced by the per-step invariant pair

    (own contribution bit, xor of the other two agents' contribution bits)

— precisely what a ring member can reconstruct from the announcements and its
own two keys, and nothing more (the one key it does not hold masks the other
two contributions down to their xor).  For key-free formulas the engines give
the same truth values; engines_agree checks that claim formula by formula,
time by time, point by point under the run projection.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import formula as fm
from .engine import (ProtocolModel, Scenario, generate_runs, reduced_system)
from .model import InterpretedSystem, UsageError

ENGINE_MODES = ("naive", "reduced")


def check_engine_mode(mode: str) -> str:
    if mode not in ENGINE_MODES:
        raise UsageError(f"unknown engine mode {mode!r} (use 'naive' or 'reduced')")
    return mode


def invariant_history(system: InterpretedSystem, run_or_assignment, agent: str,
                      time: int) -> tuple:
    """Per step u <= time, the pair (own contribution, xor of the others')."""
    if isinstance(run_or_assignment, int):
        run = run_or_assignment
    else:
        sr, msg = run_or_assignment
        assignments = system.meta.get("assignments")
        if assignments is None:
            raise UsageError("system carries no assignment table")
        try:
            run = assignments.index((tuple(sr), tuple(msg)))
        except ValueError:
            raise UsageError(f"assignment {run_or_assignment!r} not admissible here")
    contrib = system.meta.get("contrib")
    if contrib is None:
        raise UsageError("system carries no contribution record")
    if not 0 <= time <= system.horizon:
        raise UsageError(f"time {time} outside 0..{system.horizon}")
    pairs = []
    for u in range(1, time + 1):
        own = int(contrib[agent][u][run])
        total = 0
        for a in system.agents:
            total ^= int(contrib[a][u][run])
        pairs.append((own, total ^ own))
    return tuple(pairs)


def reduce(model: ProtocolModel, scenario: Scenario) -> InterpretedSystem:
    """The key-elimination engine (see generate_runs for the naive one)."""
    return reduced_system(model, scenario)

# ---------------------------------------------------------------------------
# Random formula suite


def random_formulas(system: InterpretedSystem, seed: int, count: int,
                    max_depth: int = 3) -> list:
    """Seeded epistemic formulas over the key-free vocabulary of `system`."""
    rng = random.Random(seed)
    atoms = _atom_pool(system)
    agents = list(system.agents)
    out = []
    for i in range(count):
        phi = _gen(rng, atoms, agents, max_depth)
        if not any(isinstance(sub, fm.Know) for sub in fm.subformulas(phi)):
            phi = fm.Know(rng.choice(agents), phi)
        out.append((f"random-{i}", phi))
    return out


def _atom_pool(system: InterpretedSystem) -> list:
    pool = []
    for name, decl in system.variables.items():
        if decl.owner is None and not name.startswith("rr["):
            continue  # keys and raw announcements are not key-free vocabulary
        if name.endswith((".contrib", ".oxr")) or name in system.excluded_atoms:
            continue
        agent, _, var = name.rpartition(".")
        agent = agent or None
        for value in decl.domain:
            pool.append(fm.Atom(agent, var, "==", int(value)))
    return pool


def _gen(rng, atoms, agents, depth):
    if depth <= 0 or rng.random() < 0.25:
        return rng.choice(atoms)
    kind = rng.choices(("not", "and", "or", "implies", "iff", "know", "next"),
                       weights=(2, 3, 3, 1, 1, 5, 2))[0]
    if kind == "not":
        return fm.Not(_gen(rng, atoms, agents, depth - 1))
    if kind == "know":
        return fm.Know(rng.choice(agents), _gen(rng, atoms, agents, depth - 1))
    if kind == "next":
        return fm.Next(_gen(rng, atoms, agents, depth - 1))
    ctor = {"and": fm.And, "or": fm.Or, "implies": fm.Implies, "iff": fm.Iff}[kind]
    return ctor(_gen(rng, atoms, agents, depth - 1),
                _gen(rng, atoms, agents, depth - 1))

# ---------------------------------------------------------------------------
# Agreement oracle


@dataclass
class Mismatch:
    name: str
    formula: str
    time: int
    run: int
    naive_value: bool
    reduced_value: bool

    def to_json(self) -> dict:
        return {"name": self.name, "formula": self.formula, "time": self.time,
                "run": self.run, "naive": self.naive_value, "reduced": self.reduced_value}


@dataclass
class AgreementReport:
    formulas: int
    checks: int
    points_compared: int
    seed: Optional[int]
    mismatches: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def to_json(self) -> dict:
        return {"formulas": self.formulas, "checks": self.checks,
                "points_compared": self.points_compared, "seed": self.seed,
                "agree": self.ok,
                "mismatches": [m.to_json() for m in self.mismatches[:50]]}


def engines_agree(model: ProtocolModel, scenario: Scenario, formula_suite: Sequence,
                  seed: Optional[int] = None, n_random: int = 0,
                  max_naive_runs: int = 4_000_000,
                  naive: Optional[InterpretedSystem] = None,
                  reduced: Optional[InterpretedSystem] = None) -> AgreementReport:
    """Check naive/reduced agreement for every formula at every legal time.

    Pointwise: each naive run projects to the reduced run with the same
    initial assignment; truth values must match run by run, which subsumes
    verdict agreement.  Any divergence is recorded, not raised — it is a test
    failure, not a runtime error.
    """
    naive = naive if naive is not None else generate_runs(
        model, scenario, "naive", max_naive_runs=max_naive_runs)
    reduced = reduced if reduced is not None else reduce(model, scenario)
    suite = list(formula_suite)
    if n_random:
        if seed is None:
            raise UsageError("random formulas need a seed")
        suite += random_formulas(reduced, seed, n_random)
    n_keys = naive.meta["n_key_schedules"]
    projection = np.arange(naive.n_runs) // n_keys
    ev_naive = fm.Evaluator(naive)
    ev_reduced = fm.Evaluator(reduced)
    report = AgreementReport(len(suite), 0, 0, seed)
    for name, phi in suite:
        depth = fm.x_depth(phi)
        for time in range(0, naive.horizon - depth + 1):
            vec_n = ev_naive.vector(phi, time)
            vec_r = ev_reduced.vector(phi, time)
            report.checks += 1
            report.points_compared += naive.n_runs
            diff = vec_n != vec_r[projection]
            if diff.any():
                run = int(np.argmax(diff))
                report.mismatches.append(
                    Mismatch(name, fm.fmt(phi), time, run,
                             bool(vec_n[run]), bool(vec_r[projection[run]])))
    return report
