"""Orthogonal RNNs with binary or sparse block-ternary recurrent weights.

Provides a scaled-Hadamard recurrent parameterization, straight-through
training with low-bit input/output matrices, a fully fixed-point inference
path, synthetic/MNIST sequence datasets, and a small CLI.
"""

from .hadamard import (
    InvalidOrderError,
    RecurrentParam,
    SignVector,
    apply_w,
    apply_w_transpose,
    binarize,
    fwht,
    kronecker,
    make_recurrent,
    materialize,
    switch_columns,
    sylvester,
)
from .model import HiddenTrace, OrnnModel, forward, perturbation_response, softmax
from .quantizer import (
    InvalidBitwidthError,
    OpCountReport,
    QuantizedDense,
    SizeReport,
    model_size_bits,
    op_count_report,
    quantize_ternary,
    quantize_uniform,
)
from .datasets import CopySpec, DataError, MnistSpec, SequenceDataset, gen_copy, load_mnist
from .train import Architecture, FitResult, TrainConfig, TrainState, fit, init_state
from .fxp import AccumulatorOverflowError, FxFormat, FxTensor, PtqPlan, calibrate, ptq_forward
from .analysis import MemorizationCurves, memorization_sweep, tradeoff_table
from .modelfile import ModelBundle, ModelFileError, bundle_from_state, load_model, save_model

__all__ = [
    "InvalidOrderError", "RecurrentParam", "SignVector", "apply_w",
    "apply_w_transpose", "binarize", "fwht", "kronecker", "make_recurrent",
    "materialize", "switch_columns", "sylvester",
    "HiddenTrace", "OrnnModel", "forward", "perturbation_response", "softmax",
    "InvalidBitwidthError", "OpCountReport", "QuantizedDense", "SizeReport",
    "model_size_bits", "op_count_report", "quantize_ternary", "quantize_uniform",
    "CopySpec", "DataError", "MnistSpec", "SequenceDataset", "gen_copy", "load_mnist",
    "Architecture", "FitResult", "TrainConfig", "TrainState", "fit", "init_state",
    "AccumulatorOverflowError", "FxFormat", "FxTensor", "PtqPlan", "calibrate",
    "ptq_forward",
    "MemorizationCurves", "memorization_sweep", "tradeoff_table",
    "ModelBundle", "ModelFileError", "bundle_from_state", "load_model", "save_model",
]

__version__ = "0.1.0"
