import random

import numpy as np
import pytest

import brute
from conftest import run_of
from kbpcheck import dc
from kbpcheck import formula as fm
from kbpcheck.engine import (KeySchedule, contribution_matrix, eval_local_expr,
                             execute_kbp, execute_step, generate_runs,
                             initial_vectors, rr_vector, run_single,
                             verify_kbp_fixpoint)
from kbpcheck.model import ModelError, Point, UsageError, observation_of


def test_reduced_run_count_and_order(model3, scen_unknown, sys_unknown):
    assert sys_unknown.n_runs == 512     # 4^3 * 2^3
    vs = sys_unknown.meta["assignments"]
    assert vs == sorted(vs)              # canonical lexicographic order
    again = generate_runs(model3, scen_unknown, "reduced")
    for name in sys_unknown.variables:
        for t in (0, 3, 6):
            assert np.array_equal(sys_unknown.column(name, t), again.column(name, t))


def test_naive_run_count_2slot(naive2):
    assert naive2.n_runs == 884_736      # 27 * 8 * 2^12
    assert naive2.meta["n_key_schedules"] == 4096


def test_naive_guard_for_full_model(model3, scen_unknown):
    with pytest.raises(UsageError):
        generate_runs(model3, scen_unknown, "naive")   # 512 * 2^18 runs


def test_figure_tables_from_pinned_scenarios(model3):
    left = generate_runs(model3, dc.pinned_scenario([2, 2, 2], [1, 1, 1]), "reduced")
    right = generate_runs(model3, dc.pinned_scenario([2, 0, 0], [1, 1, 1]), "reduced")
    assert rr_vector(left, 0) == [0, 1, 0, 0, 1, 0]
    assert rr_vector(right, 0) == [0, 1, 0, 0, 1, 0]
    assert contribution_matrix(left, 0) == [[0, 1, 0, 0, 1, 0]] * 3
    assert contribution_matrix(right, 0) == [[0, 1, 0, 0, 1, 0],
                                             [0, 0, 0, 0, 0, 0],
                                             [0, 0, 0, 0, 0, 0]]
    assert initial_vectors(right, 0) == ([2, 0, 0], [1, 1, 1])


def test_contributions_match_brute_force(sys_unknown):
    for v in brute.enumerate_vs():
        expected, rr = brute.contrib_table(*v)
        run = run_of(sys_unknown, v[0], v[1])
        assert contribution_matrix(sys_unknown, run) == expected
        assert rr_vector(sys_unknown, run) == rr


def test_unsatisfiable_scenario_rejected(model3):
    scen = dc.custom_scenario("C1.slot_request == 1 && C1.slot_request == 2")
    with pytest.raises(UsageError):
        generate_runs(model3, scen, "reduced")


def test_custom_scenario_constraint(model3):
    scen = dc.custom_scenario("C1.slot_request == 2 && C2.slot_request != 0")
    system = generate_runs(model3, scen, "reduced")
    assert system.n_runs == 1 * 3 * 4 * 8   # C1 pinned, C2 in 1..3, C3 free, msgs free
    assert all(int(v) == 2 for v in system.column("C1.slot_request", 0))


def test_knowledge_statements_rejected_by_generate_runs(scen_unknown):
    kbp_model = dc.build_cdc(dc.DcParams(), kbp=True)
    with pytest.raises(UsageError):
        generate_runs(kbp_model, scen_unknown, "reduced")


def test_execute_step_reservation_and_transmission(model3):
    # all request slot 2: reservation round 2 has three contributions
    schedule = KeySchedule(tuple((0, 0, 0) for _ in range(6)))
    states = run_single(model3, [2, 2, 2], [1, 1, 1], schedule)
    assert states[2].valuation["rr[2]"] is True        # 1 xor 1 xor 1
    assert states[5].valuation["rr[5]"] is True        # all transmit under kc
    # only C1 requests slot 2 and transmits: rr[5] = its message
    states = run_single(model3, [2, 0, 0], [1, 1, 1], schedule)
    assert states[5].valuation["rr[5]"] is True
    # a step where nobody's condition fires announces all-false
    states = run_single(model3, [0, 0, 0], [1, 1, 1], schedule)
    assert all(states[t].valuation[f"rr[{t}]"] is False for t in range(1, 7))


def test_execute_step_keys_mask_announcements(model3):
    sched_a = KeySchedule(tuple((0, 0, 0) for _ in range(6)))
    sched_b = KeySchedule(tuple((1, 0, 0) for _ in range(6)))
    run_a = run_single(model3, [2, 2, 2], [1, 1, 1], sched_a)
    run_b = run_single(model3, [2, 2, 2], [1, 1, 1], sched_b)
    assert run_a[2].valuation["said[1]"] != run_b[2].valuation["said[1]"]
    for t in range(1, 7):   # keys cancel in the round result
        assert run_a[t].valuation[f"rr[{t}]"] == run_b[t].valuation[f"rr[{t}]"]


def test_execute_step_validates_inputs(model3):
    schedule = KeySchedule(tuple((0, 0, 0) for _ in range(6)))
    states = run_single(model3, [1, 2, 3], [1, 0, 1], schedule)
    with pytest.raises(UsageError):
        execute_step(model3, states[2], {"k12": 0, "k23": 0, "k31": 0}, 7)
    with pytest.raises(UsageError):
        execute_step(model3, states[2], {"k12": 0, "k23": 0, "k31": 0}, 5)


def test_behavior_key_freeness_sampled(model2, naive2):
    # contribution matrix is a function of the initial assignment alone
    rng = random.Random(17)
    n_keys = naive2.meta["n_key_schedules"]
    contrib = naive2.meta["contrib"]
    for _ in range(300):
        v_idx = rng.randrange(216)
        k1, k2 = rng.randrange(n_keys), rng.randrange(n_keys)
        for agent in naive2.agents:
            a = contrib[agent][:, v_idx * n_keys + k1]
            b = contrib[agent][:, v_idx * n_keys + k2]
            assert np.array_equal(a, b)


def test_naive_matches_scalar_reference(model2, naive2):
    # spot-check the vectorized naive engine against execute_step semantics
    rng = random.Random(23)
    n_keys = naive2.meta["n_key_schedules"]
    edges = [name for name, _ in model2.key_edges]
    for _ in range(25):
        run = rng.randrange(naive2.n_runs)
        kappa = run % n_keys
        bits = tuple(tuple((kappa >> (3 * (t - 1) + j)) & 1 for j in range(3))
                     for t in range(1, model2.horizon + 1))
        sr, msg = initial_vectors(naive2, run)
        states = run_single(model2, sr, msg, KeySchedule(bits))
        for t in range(1, model2.horizon + 1):
            for i, agent in enumerate(naive2.agents):
                assert bool(naive2.column(f"said[{i + 1}]", t)[run]) == \
                    states[t].valuation[f"said[{i + 1}]"]
            assert bool(naive2.column(f"rr[{t}]", t)[run]) == \
                states[t].valuation[f"rr[{t}]"]


def test_kbp_equals_candidate_behavior(kbp_systems, sys_unknown):
    _, ksys = kbp_systems["speculative"]
    assert ksys.n_runs == sys_unknown.n_runs
    for agent in sys_unknown.agents:
        assert np.array_equal(ksys.meta["contrib"][agent],
                              sys_unknown.meta["contrib"][agent])


def test_kbp_fixpoint(kbp_systems):
    for mode in ("speculative", "conservative"):
        model, system = kbp_systems[mode]
        assert verify_kbp_fixpoint(system, model)


def test_kbp_with_trivial_test_behaves_as_constant_true(scen_unknown):
    from kbpcheck.engine import AgentProgram, IfKnowledge, PhaseBlock
    base = dc.build_cdc(dc.DcParams(), kbp=True)
    programs = {}
    for agent, prog in base.programs.items():
        phases = []
        for step, block in enumerate(prog.phases, start=1):
            if isinstance(block.announce, IfKnowledge):
                s = step - base.slots
                guard = fm.And(fm.Atom(agent, "slot_request", "==", s),
                               fm.Know(agent, fm.TRUE))
                announce = IfKnowledge(guard, block.announce.then_expr,
                                       block.announce.else_expr)
            else:
                announce = block.announce
            phases.append(PhaseBlock(announce, block.post))
        programs[agent] = AgentProgram(agent, prog.locals_, tuple(phases))
    model = dc.build_cdc(dc.DcParams(), kbp=True)
    model.programs = programs
    ksys = execute_kbp(model, scen_unknown)
    # K_i(true) = true: every requester transmits, conflict or not
    ref_preds = dict(dc.final_predicates(),
                     kc=dc.PredicateDef("always", "kc", "true"))
    ref = generate_runs(dc.build_cdc(dc.DcParams(), ref_preds), scen_unknown)
    for agent in ksys.agents:
        assert np.array_equal(ksys.meta["contrib"][agent], ref.meta["contrib"][agent])


def test_conservative_kbp_backs_off_when_three_way_possible(kbp_systems, sys_unknown):
    _, ksys = kbp_systems["conservative"]
    vs = ksys.meta["assignments"]
    contrib = ksys.meta["contrib"]
    # solo requester with quiet other slots cannot rule out the 3-way world
    i = vs.index(((2, 2, 2), (1, 1, 1)))
    assert int(contrib["C1"][5][i]) == 0
    i = vs.index(((2, 0, 0), (1, 1, 1)))
    assert int(contrib["C1"][5][i]) == 0
    # another slot's reservation is visible: 3-way excluded, transmit
    i = vs.index(((2, 1, 3), (1, 1, 1)))
    assert int(contrib["C1"][5][i]) == 1


def test_kbp_future_time_test_rejected(scen_unknown):
    from kbpcheck.engine import AgentProgram, IfKnowledge, PhaseBlock
    model = dc.build_cdc(dc.DcParams(), kbp=True)
    prog = model.programs["C1"]
    bad_guard = fm.Next(fm.Know("C1", dc.conflict_macro(1)))
    block = prog.phases[3]
    phases = list(prog.phases)
    phases[3] = PhaseBlock(IfKnowledge(bad_guard, block.announce.then_expr,
                                       block.announce.else_expr), block.post)
    model.programs["C1"] = AgentProgram("C1", prog.locals_, tuple(phases))
    with pytest.raises(UsageError):
        execute_kbp(model, scen_unknown)


def test_eval_local_expr_over_observation(sys_unknown):
    run = run_of(sys_unknown, [2, 2, 2], [1, 1, 1])
    hist = observation_of(sys_unknown, Point(run, 3), "C1")
    # kc guess for slot 2 on the left figure run: requested and rr[2] = 1
    assert eval_local_expr("!(slot_request == 2 && !rr[2])", hist) is True
    assert eval_local_expr("true", hist) is True
    # cf3 for slot 1 with reservation pattern (1,0,0) seen from slot_request 2
    run2 = run_of(sys_unknown, [2, 2, 1], [1, 1, 1])
    hist2 = observation_of(sys_unknown, Point(run2, 3), "C1")
    rr = [hist2.value(f"rr[{u}]") for u in (1, 2, 3)]
    assert rr == [True, False, False]
    cf3 = dc.builtin_predicate("cf3")
    from kbpcheck import localexpr as le
    assert eval_local_expr(le.instantiate(cf3.ast, 1), hist2) is True


def test_eval_local_expr_rejects_future_reads(sys_unknown):
    hist = observation_of(sys_unknown, Point(0, 3), "C1")
    with pytest.raises(ModelError):
        eval_local_expr("rr[5]", hist)
