"""Numerical geometry of finite-dimensional normed spaces.

Gap brackets between subspaces, sampled Kadets / Gromov-Hausdorff defects of
explicit couplings, twisted superspace norms and closed-form l_p bounds.
"""
from .spaces import (
    INF,
    BlockSum,
    Dual,
    Lp,
    QuasiLr,
    Quotient,
    Subspace,
    WeightedLp,
    annihilator,
    dual_norm_eval,
    norm_eval,
    parse_space,
)
from .solvers import dist_to_unit_ball, lift_from_quotient, quotient_norm_eval
from . import gap as _gap_module  # noqa: F401  (keeps gapkit.gap the module)
from .interp import (
    conformal_strip_to_disk,
    gh_upper_l1_lp,
    kadets_lower_lp,
    kadets_upper_lp,
    mazur_scalar_defect_check,
    pseudo_hyperbolic_strip,
)

__version__ = "0.1.0"
