"""spglab: a desk-scale laboratory for sequential policy-gradient training.

The package trains small networks, temporarily widens them with chains of
zero-initialized replica modules, optimizes a masked return-weighted
surrogate objective over the resulting per-depth predictions, and strips
the chain again, leaving the original architecture with (ideally) better
weights. Everything is float64, deterministic from (config, seed), and
verifiable by exhaustive enumeration at desk scale.
"""

__version__ = "0.1.0"

from .autodiff import GradientError, ShapeError, Tape, Tensor
from .chain import (VARIANT_DEPTH, VARIANT_DROPOUT, ChainConfig, ChainedModel,
                    StripError, added_param_count, attach_chain,
                    cumulative_rate, strip_chain)
from .checkpoint import (CheckpointData, CheckpointError, load_checkpoint,
                         save_checkpoint)
from .config import (ConfigError, TrainConfig, load_config, parse_config,
                     render_config)
from .nets import Network
from .optim import AdamW, Sgd, make_optimizer
from .rng import RngStream
from .tasks import Dataset, TaskSpec, blobs_overlap_spec, generate_dataset
from .training import (RunError, Trainer, cross_entropy_loss, run_baseline,
                       run_retrain, surrogate_loss)
from .trajectory import (EpisodeBatch, MaskSeries, ReturnWeights,
                         default_return_weights, effective_batch_size,
                         enumerate_nonzero_returns, grouped_scale,
                         padded_return, simulate_pattern, step_observed)
from .verify import VerifyReport, run_suites, run_verify

__all__ = [
    "__version__",
    "GradientError", "ShapeError", "Tape", "Tensor",
    "VARIANT_DEPTH", "VARIANT_DROPOUT", "ChainConfig", "ChainedModel",
    "StripError", "added_param_count", "attach_chain", "cumulative_rate",
    "strip_chain",
    "CheckpointData", "CheckpointError", "load_checkpoint", "save_checkpoint",
    "ConfigError", "TrainConfig", "load_config", "parse_config",
    "render_config",
    "Network",
    "AdamW", "Sgd", "make_optimizer",
    "RngStream",
    "Dataset", "TaskSpec", "blobs_overlap_spec", "generate_dataset",
    "RunError", "Trainer", "cross_entropy_loss", "run_baseline",
    "run_retrain", "surrogate_loss",
    "EpisodeBatch", "MaskSeries", "ReturnWeights", "default_return_weights",
    "effective_batch_size", "enumerate_nonzero_returns", "grouped_scale",
    "padded_return", "simulate_pattern", "step_observed",
    "VerifyReport", "run_suites", "run_verify",
]
