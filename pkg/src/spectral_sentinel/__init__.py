"""Stable-rank diagnostics, singular-spectrum smoothing and a toy attention model."""

from .diagnostics import (
    AlignmentReport,
    GradTracker,
    SpectralReport,
    key_stable_rank,
    repr_singularity,
    singularity_alignment,
    stable_rank,
    tracker_update,
)
from .errors import (
    CapacityError,
    ConfigurationError,
    DegenerateInputError,
    DegenerateStateError,
    InvalidArgumentError,
    InvalidInputError,
    NumericalError,
    SentinelError,
)
from .linalg import (
    SvdFactors,
    frobenius_norm,
    full_svd,
    make_rng,
    power_iteration_top,
    randomized_topk_svd,
)
from .smoothing import (
    Clip,
    Convolution,
    LogScale,
    SoftmaxTemp,
    apply_policy,
    dominant_block,
    parse_policy,
    pss_step,
    smooth_weights,
)

__version__ = "0.1.0"
