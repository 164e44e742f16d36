"""Recognition engine for text line images.

A stack of four-directional 2-D LSTM layers with subsampling convolutions
is trained with CTC on grayscale line images.  Dropout can be inserted on
the feed-forward connections between layers.  Decoding is either
unconstrained best-path or a lexicon/LM-constrained token-passing search.
"""

from .errors import (
    ConfigError,
    DataError,
    DecodeError,
    DivergenceError,
    InfeasibleTargetError,
    StaleCacheError,
)
from .numerics import log_sum_exp, stream_rng
from .ctc import LabelAlphabet, ctc_nll, best_path_decode
from .network import ArchitectureSpec, ConvStage, Network
from .training import TrainConfig, train, run_experiment_matrix

__version__ = "0.1.0"
