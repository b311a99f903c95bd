import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kbpcheck import localexpr as le
from kbpcheck.model import ModelError, UsageError


def view(time=6, **values):
    defaults = {"slot_request": 2, "msg": True, "dlvrd": False}
    defaults.update({f"rr[{u}]": False for u in range(1, 7)})
    defaults.update({f"kc[{s}]": False for s in (1, 2, 3)})
    defaults.update(values)
    latch = {f"rr[{u}]": u for u in range(1, 7)}
    latch.update({f"kc[{s}]": s + 2 for s in (1, 2, 3)})
    return le.HistoryView(defaults, time, latch)


def ev(text, v=None, slot=None):
    return le.eval_expr(le.parse_local_expr(text), v or view(), slot=slot)


def test_constants_and_bool_ops():
    assert ev("true") is True
    assert ev("false") is False
    assert ev("!false && (true || false)") is True
    assert ev("true == false") is False
    assert ev("true != false") is True


def test_refs_and_slot_comparisons():
    v = view(**{"rr[2]": True})
    assert ev("rr[2]", v) is True
    assert ev("slot_request == 2", v) is True
    assert ev("slot_request != 2", v) is False
    assert ev("slot_request in {1, 3}", v) is False
    assert ev("slot_request in 1..3 except 3", v) is True
    assert ev("msg", v) is True


def test_slot_parameter_substitution():
    v = view(**{"rr[3]": True})
    assert ev("rr[s]", v, slot=3) is True
    assert ev("slot_request == s", v, slot=2) is True
    assert ev("rr[s+3]", v, slot=1) is False
    with pytest.raises(UsageError):
        ev("rr[s]", v)          # no slot given


def test_any_binder():
    v = view(**{"rr[1]": True})
    assert ev("any t in 1..3: rr[t]", v) is True
    assert ev("any t in 1..3 except 1: rr[t]", v) is False
    assert ev("any t in 1..3 except s: rr[t]", v, slot=1) is False
    assert ev("any t in 1..3 except s: slot_request == t && !rr[t]", v, slot=1) is True


def test_reading_future_round_result_is_model_error():
    v = view(time=3)
    with pytest.raises(ModelError):
        ev("rr[5]", v)
    # resolved via the slot parameter too
    with pytest.raises(ModelError):
        ev("rr[s+3]", v, slot=2)


def test_unassigned_bookkeeping_reads_as_false():
    v = view(time=2, **{"kc[1]": True})   # kc[1] latches at time 3
    assert ev("kc[1]", v) is False
    v5 = view(time=5, **{"kc[1]": True})
    assert ev("kc[1]", v5) is True


def test_unknown_name_is_model_error():
    with pytest.raises(ModelError):
        le.eval_expr(le.LRef("rr", ("const", 9)), view())


def test_parse_errors_carry_positions():
    for bad in ("rr[", "slot_request ==", "any t in 1..3 rr[t]", "msg &&", "@@"):
        with pytest.raises(UsageError):
            le.parse_local_expr(bad)


def test_instantiate_grounds_slot():
    expr = le.parse_local_expr("rr[s] && slot_request != s && rr[s+3]")
    ground = le.instantiate(expr, 2)
    assert "slot" not in repr(ground)
    v = view(**{"rr[2]": True, "rr[5]": True, "slot_request": 1})
    assert le.eval_expr(ground, v) is True


def test_vector_scalar_agreement():
    rng = np.random.default_rng(42)
    exprs = [
        "!(slot_request == s && !rr[s])",
        "rr[s] && (any t in 1..3 except s: rr[t])",
        "rr[s] && ((any t in 1..3 except s: rr[t]) || slot_request != s)",
        "rr[s+3] != msg && slot_request == s",
        "msg || (dlvrd && rr[1])",
    ]
    n = 200
    cols = {"slot_request": rng.integers(0, 4, n).astype(np.uint8),
            "msg": rng.integers(0, 2, n).astype(np.uint8),
            "dlvrd": rng.integers(0, 2, n).astype(np.uint8)}
    for u in range(1, 7):
        cols[f"rr[{u}]"] = rng.integers(0, 2, n).astype(np.uint8)
    latch = {f"rr[{u}]": u for u in range(1, 7)}
    vec_view = le.HistoryView(cols, 6, latch)
    for text in exprs:
        expr = le.parse_local_expr(text)
        for slot in (1, 2, 3):
            vec = le.eval_expr(expr, vec_view, slot=slot)
            for i in range(0, n, 17):
                scalar_cols = {k: (bool(v[i]) if k != "slot_request" else int(v[i]))
                               for k, v in cols.items()}
                sv = le.HistoryView(scalar_cols, 6, latch)
                assert bool(vec[i]) == bool(le.eval_expr(expr, sv, slot=slot))


@given(st.integers(0, 3), st.booleans(), st.lists(st.booleans(), min_size=6, max_size=6),
       st.integers(1, 3))
@settings(max_examples=200, deadline=None)
def test_guess_chain_monotone_pointwise(sr, msg, rr, slot):
    from kbpcheck import dc
    values = {"slot_request": sr, "msg": msg}
    values.update({f"rr[{u}]": rr[u - 1] for u in range(1, 7)})
    v = le.HistoryView(values, 6, {f"rr[{u}]": u for u in range(1, 7)})
    cf = [le.eval_expr(dc.builtin_predicate(name).ast, v, slot=slot)
          for name in ("cf1", "cf2", "cf3")]
    assert (not cf[0]) or cf[1]
    assert (not cf[1]) or cf[2]
