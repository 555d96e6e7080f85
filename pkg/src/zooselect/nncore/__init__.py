"""Minimal float64 neural-network substrate sized for this package's workload."""

from .checkpoint import (MAGIC, dump_arrays, load_checkpoint, parse_arrays,
                         read_with_header, save_checkpoint, write_with_header)
from .layers import bilstm_forward, dense_forward, lstm_step
from .losses import (cosine_similarity, softmax, softmax_cross_entropy,
                     softmax_cross_entropy_batch)
from .optim import AdamState, adam_step
from .params import ParameterSet, derive_rng, derive_seed
from .tensor import NORM_FLOOR, Tensor, add_n, backward, concat

__all__ = [
    "MAGIC", "NORM_FLOOR", "AdamState", "ParameterSet", "Tensor",
    "adam_step", "add_n", "backward", "bilstm_forward", "concat",
    "cosine_similarity", "dense_forward", "derive_rng", "derive_seed",
    "dump_arrays", "load_checkpoint", "lstm_step", "parse_arrays",
    "read_with_header", "save_checkpoint", "softmax",
    "softmax_cross_entropy", "softmax_cross_entropy_batch", "write_with_header",
]
