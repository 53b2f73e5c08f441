"""Reflected McKean-Vlasov SDEs in time-dependent domains.

Simulation by a projected Euler scheme with oblique reflection, the Picard
fixed point on measure flows, propagation-of-chaos tables, Wasserstein-2
distances and small-noise large-deviation diagnostics.
"""
__version__ = "0.1.0"

from .kernels import BACKEND
from .geometry import (TimeDomain, BuiltinDomain, MovingInterval, MovingDisk, MovingBox, DirectionField,
                       ObliqueField, BoundaryAnchor, GeometryError, DomainRangeError, normal_field,
                       rotated_field, distance, nearest_boundary, validate_cone_condition,
                       validate_time_regularity)
from .coefficients import (EmpiricalMeasure, CoefficientSet, InteractionKernel, KernelCoefficients,
                           ShapeError, preset, eval_drift, eval_diffusion, lipschitz_probe, growth_check)
from .reflection import (ReflectedState, ReflectedPath, ProjectionError, oblique_project,
                         constrained_euler_step, drive_path, integrate, check_path_invariants)
from .transport import CouplingPlan, wasserstein2, w2, truncated_path_distance, pushforward_check
from .ensemble import (NoiseDriver, MeasureFlow, ParticleEnsemble, FixedPointError, derive_seed,
                       simulate_interacting, simulate_frozen_law, picard_iterate, chaos_experiment)
from .ldp import (Control, RateValue, OptimizationError, solve_limit_ode, solve_skeleton, rate_functional,
                  rate_of_path, simulate_small_noise, simulate_controlled, check_ldp1, check_ldp2,
                  check_limit_law, estimate_rare_event, oscillatory_sequence)
