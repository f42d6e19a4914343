"""fraclab: Whitney/chain analysis of fractional Poincare-type inequalities
on rough planar domains."""

__version__ = "0.1.0"

from .boxes import DyadicCube, RectSet
from .geometry import (AnalyticDomain, VoxelDomain, distance_transform,
                       koch_polygon, make_domain, minkowski_dimension_estimate,
                       minkowski_precontent, porosity_estimate)
from .whitney import WhitneyDecomposition, verify_dist_est, whitney_decompose
from .chains import (ChainDecomposition, build_ball_chain,
                     build_chain_decomposition, classify_wjk, estimate_sjohn,
                     shadow_volume)
from .conditions import (ConditionReport, ExponentSet, check_regime,
                         eval_classical_condition, eval_pp_sup,
                         eval_sharpe_sum, eval_sigma_thm51)
from .functional import (GridFunction, cube_lemma_check, estimate_constant,
                         fractional_seminorm, log_distance_integral,
                         oscillation_norm, poincare_ratio)
from .counterexample import (apartment, build_s_version, build_vm, compute_Am,
                             compute_Bm, sharpness_experiment, test_function)
