"""perilab: a numerical laboratory for the long-time dynamics of
u_t = u_xx + f(t, u) with time-periodic forcing and compactly supported
nonnegative initial data.

Submodules
----------
nonlinearity         forcing families f(t, u) and derivative bounds
ode_kinetics         period maps, periodic orbits, stability, perturbations
pde_solver           IMEX Crank-Nicolson evolution and exact oracles
periodic_structures  phase-plane BVP and the monotone Dirichlet iteration
diagnostics          zero numbers, symmetry, omega-limit classification
config / cli         scenario configs, runner, threshold bisection, plots
"""

from .config import ScenarioConfig, load_config, parse_config
from .diagnostics import (OmegaLimitReport, Verdict, ZeroNumberTrace,
                          audit_supersolution_cap, detect_omega_limit,
                          extract_base, symmetry_center,
                          verify_symmetric_decreasing, zero_number,
                          zero_trace_period_difference)
from .nonlinearity import (Family, NonlinearitySpec, bistable_spec,
                           combustion_spec, custom_spec, derivative_bounds,
                           eval_f, eval_fu, eval_fuu, logistic_spec, zero_spec)
from .ode_kinetics import (OrbitScan, PeriodicOrbit, PerturbationProfile,
                           Stability, Trajectory, TrajectoryClass,
                           build_perturbation_g, classify_trajectory,
                           constant_orbit, epsilon_star, find_periodic_orbits,
                           floquet_integral, integrate_h,
                           perturbed_variational_bounds, poincare_map,
                           stability_taxonomy, variational_bounds)
from .pde_solver import (Evolution, EvolutionTrace, Field, Grid, SolverConfig,
                         cole_hopf_log_convolution, evolve,
                         evolve_quadratic_gradient, heat_kernel_convolve,
                         kinetic_change_of_variables, support_hull,
                         thomas_solve)
from .periodic_structures import (PeriodicDirichletSolution,
                                  PhasePlaneSolution, build_periodic_dirichlet,
                                  solve_phase_plane)
from .cli import (ThresholdResult, emit_plots, run_scenario, sharp_threshold,
                  write_artifacts)

__version__ = "0.1.0"
