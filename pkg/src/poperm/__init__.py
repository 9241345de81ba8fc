"""Learning to permute sets by unrolled gradient descent on a learned pairwise ordering cost."""
from .linalg import HardPermutation, hungarian, round_to_permutation, sinkhorn, sinkhorn_vjp
from .ordering import OrderingCostParams, cost_matrix, cost_matrix_vjp, pairwise_f
from .oracle import brute_min, build_q, quadratic_cost
from .permopt import (
    ComparisonStructure,
    InitParams,
    PoConfig,
    cost_gradient,
    init_assignment,
    po_backward,
    po_forward,
    total_cost,
)
from .training import ParamStore, TrainConfig, adam_step, finite_diff_check, mse_loss, xavier_init

__version__ = "0.1.0"
