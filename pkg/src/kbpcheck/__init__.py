"""kbpcheck: explicit-state model checking for the logic of knowledge and time,
plus a refinement toolkit that turns knowledge-based programs into concrete,
provably equivalent implementations.

The bundled case study is a multi-round Dining Cryptographers two-phase
broadcast (slot reservation, then transmission) over a three-agent key ring.
"""

from .model import (GlobalState, IndistPartition, InterpretedSystem, ModelError,
                    ObservationHistory, Point, Run, UsageError, VariableDecl,
                    build_partition, observation_of, points_at)
from .formula import (Atom, Const, And, Or, Not, Implies, Iff, Know, Next,
                      Evaluator, Verdict, check_valid_at, eval_at, fmt,
                      parse_formula)
from .localexpr import parse_local_expr
from .engine import (AgentProgram, Announce, AssignKnowledge, AssignLocal,
                     IfKnowledge, KeySchedule, PhaseBlock, ProtocolModel,
                     Scenario, eval_local_expr, execute_kbp, execute_step,
                     generate_runs, verify_kbp_fixpoint)
from .reduction import (AgreementReport, ENGINE_MODES, engines_agree,
                        invariant_history, random_formulas, reduce)
from .dc import (DcParams, PredicateDef, build_cdc, builtin_predicate,
                 conflict_macro, dc_macros, final_predicates,
                 load_predicates_file, load_scenario_file, pinned_scenario,
                 referendum_scenario, sender_macro, spec, spec_instances,
                 target_formula, unknown_scenario)
from .refine import (CandidateVerdict, Counterexample, RefinementReport,
                     SynthesizedPredicate, check_candidate,
                     counterexample_from_verdict, diff_candidates,
                     refine_sequence, render_counterexample,
                     synthesize_predicate)

__version__ = "0.1.0"
