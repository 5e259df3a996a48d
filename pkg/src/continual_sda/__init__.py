"""Continual (sliding-window) softmax and Nystrom attention with cached state.

Each step folds one new token into the window and returns either all ``n``
outputs (retroactive) or only the newest one (single), matching a
from-scratch recomputation up to float rounding.
"""

from .continual import (
    CoNyContState,
    CoNyFixedState,
    CoReState,
    CoSiState,
    block_step,
    cony_cont_init,
    cony_fixed_init,
    cony_fixed_step,
    cony_step,
    core_init,
    core_step_retroactive,
    core_step_single,
    cosi_init,
    load_state,
    save_state,
)
from .costs import Model, Variant, VariantCost, flops, flops_amortized, memory, model_flops
from .landmarks import LandmarkPair, LandmarkSchedule, kmeans_landmarks, kmeans_pair
from .reference import AttentionInput, sda_exact, sda_nystrom, segment_means
from .streams import generate_stream
from .tensor import ConvergenceError, DimensionMismatch, count_ops, phi, pinv_iterative, rho, row_scale

__version__ = "0.1.0"
