"""Numerical toolkit for bracket-generating families of vector fields:
expression-defined fields, Lie bracket towers, flow integration with growth
guards, pushforward densities and weak transport residuals, invertibility
scans of bracket matrices, Monte Carlo reachable-set grids, and
derivative-free steering along flow words."""

from .brackets import (BracketField, BracketTerm, bracket,
                       bracket_identity_residual, build_tower, div_bracket,
                       term_from_nested)
from .density import (DensityRecord, PushforwardEstimate, TaylorRemainder,
                      TestFunction, bracket_transport_residual, density_batch,
                      liouville_density, pullback_monotonicity_check,
                      pushforward_integral, taylor_remainder,
                      transport_residual)
from .expressions import ExpressionError, parse_expression
from .fields import (FieldSet, GrowthBounds, MollifierSpec, NonFiniteError,
                     SublinearFit, VectorField, divergence, eval_field,
                     grad_divergence, jacobian, mollify, parse_field,
                     sobolev_conjugate, sublinear_fit, sublinear_violation)
from .flows import (FlowError, FlowWord, IntegratorConfig, SafetyRadiusError,
                    StepUnderflowError, apply_word, apply_word_batch,
                    commutator_primitive, flow_batch, group_law_residual,
                    growth_bounds, integrate_flow, safety_radius)
from .grid import OccupancyGrid
from .hormander import (HormanderReport, LocalizedScan, assemble_Y,
                        exponent_check, hormander_scan, localized_scan,
                        select_terms)
from .reachability import (AlternativeVerdict, BallRegion, ReachEstimate,
                           WordSampler, ZeroOneVerdict, alternative_check,
                           estimate_reachable, invariance_residual,
                           zero_one_check)
from .steering import SteeringConfig, SteeringPlan, plan, refine_word

__version__ = "0.1.0"
