"""Exact two-level minimization: Quine-McCluskey primes + Petrick cover.

Inputs are ON-set and DC-set minterm indices over n bits (n <= 16).  Cubes are
tuples over {0, 1, 2} with 2 = don't care.  Exactness is required (the result
covers the ON-set and stays inside ON+DC); minimality is best-effort — Petrick
is exact for the residual after essential primes, with a greedy fallback if
the residual blows up.
"""

from __future__ import annotations

from collections import defaultdict
from itertools import combinations
from typing import Iterable, List, Sequence, Tuple

Cube = Tuple[int, ...]

MAX_BITS = 16


def int_to_bits(x: int, n: int) -> Cube:
    return tuple((x >> i) & 1 for i in range(n))


def cube_covers(cube: Cube, minterm: Cube) -> bool:
    return all(c == 2 or c == m for c, m in zip(cube, minterm))


def _mergeable(a: Cube, b: Cube):
    diff = -1
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            if x == 2 or y == 2 or diff >= 0:
                return None
            diff = i
    if diff < 0:
        return None
    return a[:diff] + (2,) + a[diff + 1:]


def prime_implicants(n: int, on: Sequence[int], dc: Sequence[int] = ()) -> List[Cube]:
    """All prime implicants of ON+DC that cover at least one ON minterm."""
    if n > MAX_BITS:
        raise ValueError(f"too many inputs for exact minimization ({n} > {MAX_BITS})")
    level = {int_to_bits(m, n) for m in set(on) | set(dc)}
    primes = set()
    while level:
        buckets = defaultdict(list)
        for cube in level:
            buckets[sum(1 for v in cube if v == 1)].append(cube)
        merged, nxt = set(), set()
        for k in sorted(buckets):
            for a in buckets[k]:
                for b in buckets.get(k + 1, ()):
                    c = _mergeable(a, b)
                    if c is not None:
                        merged.add(a)
                        merged.add(b)
                        nxt.add(c)
        primes |= level - merged
        level = nxt
    on_bits = [int_to_bits(m, n) for m in on]
    return sorted(p for p in primes if any(cube_covers(p, m) for m in on_bits))


def minimize(n: int, on: Sequence[int], dc: Sequence[int] = ()) -> List[Cube]:
    """A minimal (best-effort) prime cover of the ON-set."""
    on = sorted(set(on))
    if not on:
        return []
    if len(on) + len(dc) == 2 ** n:
        return [(2,) * n]
    primes = prime_implicants(n, on, dc)
    on_bits = [int_to_bits(m, n) for m in on]
    coverage = [frozenset(i for i, p in enumerate(primes) if cube_covers(p, m))
                for m in on_bits]

    chosen = set()
    remaining = list(coverage)
    while True:
        singles = [next(iter(s)) for s in remaining if len(s) == 1]
        if not singles:
            break
        chosen.update(singles)
        remaining = [s for s in remaining if not (s & chosen)]
    if remaining:
        candidates = sorted(set().union(*remaining))
        best = None
        if len(candidates) <= 20:
            for r in range(1, len(candidates) + 1):
                for combo in combinations(candidates, r):
                    picked = set(combo)
                    if all(s & picked for s in remaining):
                        best = picked
                        break
                if best is not None:
                    break
        if best is None:
            # greedy: repeatedly take the prime covering the most leftovers
            best = set()
            left = list(remaining)
            while left:
                counts = defaultdict(int)
                for s in left:
                    for i in s:
                        counts[i] += 1
                pick = max(sorted(counts), key=lambda i: counts[i])
                best.add(pick)
                left = [s for s in left if pick not in s]
        chosen |= best
    return [primes[i] for i in sorted(chosen)]


def cubes_semantics(cubes: Iterable[Cube], n: int):
    """Truth function of a cube list, for exactness checks."""
    cubes = list(cubes)

    def fn(minterm: int) -> bool:
        bits = int_to_bits(minterm, n)
        return any(cube_covers(c, bits) for c in cubes)

    return fn
