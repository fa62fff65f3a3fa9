"""Verification of ReLU neural control barrier functions over control-affine dynamics."""

__version__ = "0.1.0"

from .dynamics import (BUILTIN_MODELS, DoubleIntegrator1D, DubinsCar, DynamicsBounds,
                       DynamicsModel, LinearModel, PlanarQuadrotor, PointRobot, Scenario,
                       load_scenario, make_model, taylor_bounds)
from .exceptions import (DomainError, NonDifferentiableError, NumericError, SchemaError,
                         SpecificationError)
from .falsifier import Counterexample, falsification_rate, falsify_all, falsify_box
from .geometry import HyperBox, Interval, interval_matvec, split_box, vertices
from .gradient import GradientBounds, gradient_bounds, gradient_cases
from .network import (ReluMlp, example_1_network, exact_gradient, forward, load_model,
                      random_cbf_network, save_model)
from .relaxation import (CompositeExpression, LinearBounds, ReluTerm, crown_upper_bound,
                         ibp_bounds, ibp_upper_bound, preactivation_bounds)
from .verifier import (BoundarySet, Mode, Status, VerificationConfig, VerificationSummary,
                       VerificationVerdict, assemble_condition, evaluate_condition,
                       exact_condition, extract_boundary, optimal_vertex_control, verify_all,
                       verify_box)
from .estimators import BoundaryExtractor, CBFVerifier, Falsifier
