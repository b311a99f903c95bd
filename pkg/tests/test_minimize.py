import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kbpcheck import minimize as mz


def brute_equal(n, on, dc, cubes):
    fn = mz.cubes_semantics(cubes, n)
    on, dc = set(on), set(dc)
    for m in range(2 ** n):
        if m in on:
            if not fn(m):
                return False
        elif m not in dc:
            if fn(m):
                return False
    return True


def test_xor_minimizes_to_two_cubes():
    cubes = mz.minimize(2, [1, 2])
    assert len(cubes) == 2
    assert brute_equal(2, [1, 2], [], cubes)


def test_constant_functions():
    assert mz.minimize(3, []) == []
    assert mz.minimize(3, list(range(8))) == [(2, 2, 2)]
    assert mz.minimize(2, [0, 1], [2, 3]) == [(2, 2)]


def test_dont_cares_shrink_cover():
    # f = x0 on {0,1}, don't care elsewhere: a single literal suffices
    cubes = mz.minimize(3, [1], [3, 5, 7])
    assert cubes == [(1, 2, 2)]


def test_prime_implicants_classic():
    # the standard 4-variable example: f = sum m(4,8,10,11,12,15)
    on = [4, 8, 10, 11, 12, 15]
    cubes = mz.minimize(4, on)
    assert brute_equal(4, on, [], cubes)
    assert len(cubes) <= 4


def test_too_many_bits_rejected():
    with pytest.raises(ValueError):
        mz.prime_implicants(17, [0])


@given(st.integers(0, 2 ** 6 - 1), st.integers(0, 2 ** 6 - 1), st.integers(0, 10 ** 6))
@settings(max_examples=150, deadline=None)
def test_minimize_exact_on_random_functions(on_mask, dc_mask, seed):
    n = 6
    rng = random.Random(seed)
    on = [m for m in range(2 ** n) if rng.random() < 0.3]
    dc = [m for m in range(2 ** n) if m not in on and rng.random() < 0.2]
    cubes = mz.minimize(n, on, dc)
    assert brute_equal(n, on, dc, cubes)
    # every cube is an implicant of ON+DC
    allowed = set(on) | set(dc)
    for cube in cubes:
        for m in range(2 ** n):
            if mz.cube_covers(cube, mz.int_to_bits(m, n)):
                assert m in allowed
