"""Discrete-time execution of continuous-time CBF safety filters.

Covers the vanishing input-direction Lie derivative failure mode and three
mitigations: a penalty-blended objective, a transformed safe set, and an
inner polytopic approximation with half-spaces that all see the input.
"""

from .cbf import (AffineCbf, CbfSet, Identity, LinearGain, QuadraticCbf, TransformedCbf,
                  inscribed_polygon, make_rotation_2d, polytope_inner_check)
from .dynamics import AdmissibleBox, ControlAffineSystem, LtiSystem, lti_discretize, matrix_exp, step_exact, step_rk4
from .filters import (Constant, FilterDecision, Penalty, QpInfeasibleError, QpInstance, Standard, Zero,
                      filter_penalty, filter_standard, grid_oracle, solve_qp)
from .lie import (HocbfChain, LieData, global_relative_degree_affine_lti, hocbf_constraint, lie_derivatives,
                  singular_set_scan)
from .sim import Metrics, Scenario, Trajectory, compute_metrics, dt_sweep, preset, run

__version__ = "0.1.0"
