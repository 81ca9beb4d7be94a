"""Deceptive density-control planning for agent teams in MDPs.

Pipeline: solve the zero-sum allocation game for each candidate utility
matrix, model the adversary's maximum-entropy prediction of the team's
behavior, synthesize a deceptive policy (exaggeration or ambiguity) on a
time-layered MDP, and evaluate the result with divergence-based scores.
"""

from .deception import (DeceptionSpec, SynthesisResult, choose_switch_time,
                        goal_directed_occupancy, synthesize_ambiguity,
                        synthesize_exaggeration, virtual_reward)
from .errors import (DensityPlanError, InfeasibleError, NumericalError,
                     ScenarioValidationError, SolverFailure, ValidationError)
from .game import (AllocationStrategy, GameSolution, UtilityMatrix,
                   best_response_value, max_entropy_equilibrium,
                   solve_zero_sum)
from .mdp import (ExtendedMdp, Mdp, OccupancyMeasure, PathSample, Policy,
                  StatePartition, build_extended_mdp, build_grid_mdp,
                  expected_state_density, occupancy_from_policy,
                  partition_states, policy_from_occupancy, project_path,
                  reach_probabilities, sample_paths)
from .observer import (DeceptivenessReport, KlEstimate,
                       deceptiveness_ambiguity, deceptiveness_exaggeration,
                       estimate_kl_monte_carlo, kl_path_divergence,
                       likelihood_ratio_decision, path_log_likelihood)
from .pipeline import PipelineResult, run_pipeline, write_heatmap, write_report
from .prediction import (CostCondition, PredictionResult, PredictionSpec,
                         check_allocation_feasibility, check_cost_condition,
                         min_expected_time, per_state_objective,
                         predict_policy)
from .scenario import Scenario, bundled_scenario_path, parse_scenario, \
    scenario_from_dict
from .solver import (EntropyTerm, LinearProgram, RelativeEntropyProgram,
                     SolveReport, SolveStatus, dump_program, solve_lp,
                     solve_rep)

__version__ = "0.1.0"
