"""Contraction analysis for nonlinear dynamics under inequality constraints."""

from .analysis import (ContractionBounds, DivergedPair, VirtualDisplacement,
                       activation_jump, contraction_bounds, empirical_rate,
                       generalized_jacobian, propagate_delta,
                       reduce_displacement)
from .collisions import (CollisionEvent, EquivalenceReport, EventCountMismatch,
                         Hamiltonian, NotIncoming, PhaseState,
                         collision_multiplier, equivalence_check,
                         simulate_dirac_form, simulate_step_form)
from .constraints import (AcuteCorner, ActiveSet, ConstraintFunction,
                          ConstraintSet, InfeasibleState, MultiplierSolution,
                          NoConvergence, TangentBasis, detect_active,
                          gram_matrix, solve_multipliers, tangent_basis)
from .flow import (Event, SimConfig, SimSample, StepTooSmall, Trajectory,
                   rk4_step, simulate, solve_velocity)
from .geodesics import (GeodesicPath, PolygonalWorld, Unreachable, corner_fan,
                        fan_contains, path_table, shortest_paths,
                        visibility_graph)
from .geometry import (ChristoffelTensor, CovectorField, DerivativeUnavailable,
                       MetricField, NonSPDMetric, StateVector, christoffel,
                       covariant_derivative_vector, covariant_hessian_scalar)
from .scenario import Scenario, SchemaError, UnknownBuiltin, load_scenario

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
