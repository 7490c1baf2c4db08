"""Mean-variance portfolio selection with a long/short-asymmetric (nonlinear) wealth equation."""

__version__ = "0.1.0"

from .duality import (DualSolution, dual_generator, dual_multiplier, dual_terminal_wealth_check,
                      duality_consistency_check, optimal_dual_control, solve_dual_bsde)
from .frontier import (FrontierPoint, FrontierSpec, efficient_policy, feasible_strategy,
                       frontier_curve, frontier_variance, lagrange_multiplier)
from .hamiltonian import (HamiltonianInput, HamiltonianResult, closed_form_1d, eval_hamiltonian,
                          lower_bound_f, orthant_qp_min)
from .model import (CoefficientSpec, FactorProcess, MarketModel, TimeGrid, check_feasibility,
                    discount_factor, validate_model)
from .policy import (FeedbackPolicy, SimulationReport, optimal_cost, optimal_portfolio,
                     simulate_wealth)
from .riccati import (RiccatiSolution, evaluate_solution, positivity_floor, solve_riccati_lsmc,
                      solve_riccati_ode)
