"""Distributed resource allocation under false-data-injection attacks."""
from .algorithms import (AgentState, EsoConfig, Fal, Identity, ObserverState, compromised_rhs,
                         extended_state, fal, nominal_rhs, observer_rhs, resilient_rhs)
from .attacks import (AttackSuite, Exosystem, Sinusoid, StateDependent, Zero, eval_attack,
                      kappa_aggregates)
from .graph import NetworkGraph, build_graph, is_connected, laplacian_quadratic, line_graph
from .problem import (AllocationProblem, Drift, GeneralConvex, KKTSolution, Quadratic,
                      feasibility_residual, gradient, quadratic_problem, solve_kkt)
from .sim import (RunMetrics, SimConfig, Trajectory, compute_metrics, rk4_step, run_scenario,
                  write_csv)

__version__ = "0.1.0"
