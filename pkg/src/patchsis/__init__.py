"""patchsis: SIS epidemics over multi-layer patch networks with population
dispersal — deterministic and stochastic simulation, equilibrium
classification, stability certificates, and budgeted rate interventions."""

from .errors import (AssumptionViolated, DegenerateDenominator, EigenFailure,
                     Infeasible, InvalidTarget, MaxIterations,
                     NonConvergence, NonIrreducible, NotEndemic,
                     PatchsisError, SchemaError, SolverFailure, StepTooCoarse,
                     StepTooLarge, ZeroPopulation)
from .network import (LayerGenerator, MultiLayerDispersal, SinkStructure,
                      absorbed_profile, construct_metropolis_rates,
                      detect_sinks, equal_split_rates,
                      is_strongly_connected, stationary_distribution,
                      strongly_connected_components, topology_adjacency,
                      validate_strong_connectivity)
from .model import (EpidemicRates, SystemState, assemble_F, assemble_L,
                    assemble_F_bar, assemble_F_hat, assemble_L_bar,
                    assemble_L_hat, build_reduced_system, flat_index,
                    full_rhs, make_frozen_profile_rhs, make_full_rhs,
                    make_reduced_rhs, reduced_rhs)
from .simulate import (Trajectory, ensemble_mean_node_fraction,
                       integrate_ode, run_ensemble, simulate_stochastic)
from .equilibria import (EquilibriumReport, classify, classify_reduced,
                         endemic_fixed_point, perron_pair,
                         spectral_abscissa)
from .stability import (StabilityChecklist, check_conditions,
                        delta_for_spectral_condition,
                        spectral_condition_lhs)
from .intervene import (InterventionProblem, InterventionResult,
                        PosynomialCost, budget_sweep, inverse_gap_cost,
                        inverse_gap_problem, naive_allocation, shift_transform,
                        solve_gp)
from .scenario import Scenario, load_scenario, parse_scenario

__version__ = "0.1.0"

__all__ = [
    "AssumptionViolated", "DegenerateDenominator", "EigenFailure",
    "Infeasible", "InvalidTarget", "MaxIterations", "NonConvergence",
    "NonIrreducible", "NotEndemic", "PatchsisError", "SchemaError",
    "SolverFailure", "StepTooCoarse", "StepTooLarge", "ZeroPopulation",
    "LayerGenerator", "MultiLayerDispersal", "SinkStructure",
    "absorbed_profile", "construct_metropolis_rates", "detect_sinks",
    "equal_split_rates", "is_strongly_connected", "stationary_distribution",
    "strongly_connected_components", "topology_adjacency",
    "validate_strong_connectivity",
    "EpidemicRates", "SystemState", "assemble_F", "assemble_L",
    "assemble_F_bar", "assemble_F_hat", "assemble_L_bar", "assemble_L_hat",
    "build_reduced_system", "flat_index", "full_rhs",
    "make_frozen_profile_rhs", "make_full_rhs", "make_reduced_rhs",
    "reduced_rhs",
    "Trajectory", "ensemble_mean_node_fraction", "integrate_ode",
    "run_ensemble", "simulate_stochastic",
    "EquilibriumReport", "classify", "classify_reduced",
    "endemic_fixed_point", "perron_pair", "spectral_abscissa",
    "StabilityChecklist", "check_conditions",
    "delta_for_spectral_condition", "spectral_condition_lhs",
    "InterventionProblem", "InterventionResult", "PosynomialCost",
    "budget_sweep", "inverse_gap_cost", "inverse_gap_problem",
    "naive_allocation", "shift_transform", "solve_gp",
    "Scenario", "load_scenario", "parse_scenario",
    "__version__",
]
