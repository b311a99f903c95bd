import numpy as np
import pytest

import brute
from conftest import run_of
from kbpcheck import dc
from kbpcheck.engine import generate_runs
from kbpcheck.model import (Point, UsageError, VariableDecl, build_partition,
                            observation_of, points_at)


def test_variable_decl_rejects_empty_domain():
    with pytest.raises(UsageError):
        VariableDecl("x", (), None, frozenset())


def test_system_rejects_unknown_owner_and_observer(model3, scen_unknown):
    from kbpcheck.model import InterpretedSystem
    with pytest.raises(UsageError):
        InterpretedSystem(("C1",), 2,
                          [VariableDecl("x", (0, 1), "C9", frozenset())], 1)
    with pytest.raises(UsageError):
        InterpretedSystem(("C1",), 2,
                          [VariableDecl("x", (0, 1), None, frozenset({"C9"}))], 1)


def test_points_at_counts(sys_unknown, sys_referendum):
    assert len(points_at(sys_unknown, 6)) == 512      # 4^3 slot vectors * 2^3 msg vectors
    assert len(points_at(sys_unknown, 0)) == sys_unknown.n_runs
    for t in range(7):
        assert len(points_at(sys_referendum, t)) == 216   # 3^3 * 2^3


def test_points_at_rejects_bad_time(sys_unknown):
    with pytest.raises(UsageError):
        points_at(sys_unknown, 7)
    with pytest.raises(UsageError):
        points_at(sys_unknown, -1)


def test_observation_rejects_unknown_agent_and_point(sys_unknown):
    with pytest.raises(UsageError):
        observation_of(sys_unknown, Point(0, 3), "C9")
    with pytest.raises(UsageError):
        observation_of(sys_unknown, Point(0, 9), "C1")
    with pytest.raises(UsageError):
        observation_of(sys_unknown, Point(sys_unknown.n_runs, 0), "C1")


def test_observation_of_figure_pair(sys_unknown):
    run = run_of(sys_unknown, [2, 2, 2], [1, 1, 1])
    hist = observation_of(sys_unknown, Point(run, 3), "C1")
    assert hist.time == 3
    derived_rr = [hist.value(f"rr[{u}]", 3) for u in (1, 2, 3)]
    assert derived_rr == [False, True, False]
    hist6 = observation_of(sys_unknown, Point(run, 6), "C1")
    assert [hist6.value(f"rr[{u}]") for u in range(1, 7)] == \
        [False, True, False, False, True, False]


def test_observation_time0_contains_only_initials(sys_unknown):
    hist = observation_of(sys_unknown, Point(0, 0), "C2")
    assert len(hist.records) == 1
    assert hist.value("C2.slot_request") == 0
    # announcement-derived values are all still at their initial false
    assert all(hist.value(f"rr[{u}]") is False for u in range(1, 7))


def test_observation_determinism(sys_unknown):
    a = observation_of(sys_unknown, Point(17, 4), "C3")
    b = observation_of(sys_unknown, Point(17, 4), "C3")
    assert a == b and hash(a) == hash(b)


def test_partition_time0_has_8_blocks_per_agent(sys_unknown):
    # derived independently: own slot_request in 0..3 x own msg in {0,1}
    expected = len(brute.blocks(brute.enumerate_vs(), 0, 0))
    assert expected == 8
    for agent in sys_unknown.agents:
        part = build_partition(sys_unknown, agent, 0)
        assert part.n_blocks == 8
        assert sum(len(runs) for runs in part.blocks.values()) == 512


def test_partition_matches_brute_force_block_counts(sys_unknown):
    vs = brute.enumerate_vs()
    for agent_idx, agent in enumerate(sys_unknown.agents):
        for t in (1, 3, 6):
            expected = len(brute.blocks(vs, agent_idx, t))
            _, n_blocks = sys_unknown.partition_labels(agent, t)
            assert n_blocks == expected


def test_figure_pair_same_block_for_c1_not_c2(sys_unknown):
    left = run_of(sys_unknown, [2, 2, 2], [1, 1, 1])
    right = run_of(sys_unknown, [2, 0, 0], [1, 1, 1])
    for t in range(7):
        labels, _ = sys_unknown.partition_labels("C1", t)
        assert labels[left] == labels[right]
    labels, _ = sys_unknown.partition_labels("C2", 1)
    assert labels[left] != labels[right]   # C2's own slot_request differs


def test_own_initials_always_separate(sys_unknown):
    # two runs differing in C1's own slot_request never share a C1 block
    a = run_of(sys_unknown, [1, 0, 0], [0, 0, 0])
    b = run_of(sys_unknown, [2, 0, 0], [0, 0, 0])
    for t in range(7):
        labels, _ = sys_unknown.partition_labels("C1", t)
        assert labels[a] != labels[b]


def test_partition_soundness_against_full_histories(sys_unknown):
    # same block <=> equal ObservationHistory, for every agent and time
    for agent in sys_unknown.agents:
        for t in range(7):
            labels, n_blocks = sys_unknown.partition_labels(agent, t)
            by_history = {}
            for run in range(sys_unknown.n_runs):
                key = observation_of(sys_unknown, Point(run, t), agent)
                by_history.setdefault(key, set()).add(int(labels[run]))
            assert len(by_history) == n_blocks
            assert all(len(ls) == 1 for ls in by_history.values())
            seen = [next(iter(ls)) for ls in by_history.values()]
            assert len(set(seen)) == n_blocks


def test_fingerprint_basis_equals_full_history_grouping(model2):
    # partitions group on the primitive observations (initials, keys, raw
    # announcements); regrouping on *every* observable column, bookkeeping
    # included, must give the identical partition
    scen = dc.custom_scenario("C1.slot_request == 1 && C2.slot_request == 1")
    scen.slot_request = {a: (0, 1, 2) for a in ("C1", "C2", "C3")}
    small = generate_runs(model2, scen, "naive")
    assert small.n_runs == 3 * 8 * 2 ** 12
    for agent, t in (("C1", 2), ("C2", 4)):
        labels, n_blocks = small.partition_labels(agent, t)
        cols = [small.column(name, u)
                for u in range(t + 1)
                for name in small.observable_names(agent)]
        matrix = np.stack(cols, axis=1)
        _, inverse = np.unique(matrix, axis=0, return_inverse=True)
        assert len(np.unique(inverse)) == n_blocks
        pairs = (labels.astype(np.int64) << 32) | inverse.astype(np.int64)
        assert len(np.unique(pairs)) == n_blocks


def test_perfect_recall_refinement(sys_unknown):
    for agent in sys_unknown.agents:
        for t in range(1, 7):
            prev, _ = sys_unknown.partition_labels(agent, t - 1)
            cur, n_blocks = sys_unknown.partition_labels(agent, t)
            pairs = (cur.astype(np.int64) << 32) | prev.astype(np.int64)
            assert len(np.unique(pairs)) == n_blocks


def test_synchrony_by_construction(sys_unknown):
    # blocks only ever contain points of one time: partitions are per-time
    part = build_partition(sys_unknown, "C1", 2)
    assert part.time == 2
    assert all(h.time == 2 for h in part.blocks)


def test_state_and_run_views(sys_unknown):
    run = run_of(sys_unknown, [2, 0, 0], [1, 1, 1])
    view = sys_unknown.run(run)
    assert len(view.states) == 7
    assert view.initial["C1.slot_request"] == 2
    assert view.states[5].valuation["rr[5]"] is True
    assert view.states[4].valuation["rr[5]"] is False   # not yet announced
    for state in view.states:
        assert set(state.valuation) == {
            n for n in sys_unknown.variables if n not in sys_unknown.excluded_atoms}


def test_pinned_single_run_count(model3):
    system = generate_runs(model3, dc.pinned_scenario([2, 2, 2], [1, 1, 1]), "reduced")
    assert system.n_runs == 1
