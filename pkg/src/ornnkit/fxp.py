"""Fixed-point arithmetic and the post-training-quantization inference path.

Value convention: an FxTensor with format (p, q) stores integers n in
[-2^(p-1), 2^(p-1)-1] representing n / 2^q.  Addition and multiplication are
exact; the only rounding anywhere in the inference path happens in the
per-step requantization of the hidden state onto the alpha_h grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .hadamard import kronecker, sylvester
from .model import OrnnModel, forward
from .quantizer import QuantizedDense, quantize_uniform


class AccumulatorOverflowError(RuntimeError):
    """Planner bug: a fixed-point accumulator exceeded its declared width."""


@dataclass(frozen=True)
class FxFormat:
    p: int  # total bits
    q: int  # fractional bits

    def __post_init__(self):
        if self.p < 1 or self.q < 0:
            raise ValueError("need p >= 1 and q >= 0")

    @property
    def lo(self) -> int:
        return -(1 << (self.p - 1))

    @property
    def hi(self) -> int:
        return (1 << (self.p - 1)) - 1


@dataclass(frozen=True)
class FxTensor:
    values: np.ndarray  # int64
    fmt: FxFormat

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int64)
        if values.size and (values.min() < self.fmt.lo or values.max() > self.fmt.hi):
            raise ValueError("integer values out of range for format")
        object.__setattr__(self, "values", values)

    def decode(self) -> np.ndarray:
        return self.values.astype(np.float64) / (1 << self.fmt.q)


def fx_add(a: FxTensor, b: FxTensor) -> FxTensor:
    """Exact addition; output format (max(p_a, p_b) + 1, q)."""
    if a.fmt.q != b.fmt.q:
        raise ValueError(f"fractional bits mismatch: {a.fmt.q} != {b.fmt.q}")
    return FxTensor(a.values + b.values,
                    FxFormat(max(a.fmt.p, b.fmt.p) + 1, a.fmt.q))


def fx_mul(a: FxTensor, b: FxTensor) -> FxTensor:
    """Exact product; output format (p + p' - 1, q + q')."""
    return FxTensor(a.values * b.values,
                    FxFormat(a.fmt.p + b.fmt.p - 1, a.fmt.q + b.fmt.q))


def fx_matvec(w: FxTensor, h: FxTensor) -> FxTensor:
    """Exact matrix-vector accumulation w @ h (h along its last axis).

    The accumulator format adds ceil(log2 n) integer bits for the n-term sum;
    exceeding it is a planner bug and raises.
    """
    n = w.values.shape[1]
    if h.values.shape[-1] != n:
        raise ValueError("shape mismatch in fx_matvec")
    acc_fmt = FxFormat(w.fmt.p + h.fmt.p - 1 + max(1, math.ceil(math.log2(n))),
                       w.fmt.q + h.fmt.q)
    out = h.values @ w.values.T
    if out.size and (out.min() < acc_fmt.lo or out.max() > acc_fmt.hi):
        raise AccumulatorOverflowError("fx_matvec accumulator out of range")
    return FxTensor(out, acc_fmt)


def recurrent_codes(model: OrnnModel) -> np.ndarray:
    """Integer numerators of W / alpha_W over denominator 2 (the half-unit
    ternary codes {-2..1} of which only {-1, 0, 1} occur)."""
    w = model.W
    m = kronecker(np.eye(w.q, dtype=np.int64), sylvester(w.k))
    codes = w.row_signs.signs.astype(np.int64)[:, None] * m
    if w.col_signs is not None:
        codes = codes * w.col_signs.signs.astype(np.int64)
    return codes


@dataclass(frozen=True)
class PtqPlan:
    """Calibrated scales, bitwidths, and integer codes for fixed-point inference."""

    p: int
    p_a: int
    p_i: int
    alpha_U: float
    alpha_V: float
    alpha_W: float
    alpha_i: float
    alpha_h: float
    n_h: int
    max_h: float
    U_codes: np.ndarray        # numerators over 2^(p-1)
    V_codes: np.ndarray
    bias_codes: np.ndarray     # b_i/(alpha_i*alpha_U) on the alpha_h grid
    b_o: np.ndarray            # kept float; applied in the final affine
    acc_int_bits: int = field(init=False)

    def __post_init__(self):
        if not np.isclose(self.alpha_h * self.alpha_W, 2.0 ** self.n_h):
            raise ValueError("inconsistent plan: alpha_h != 2^n_h / alpha_W")
        d_h = self.U_codes.shape[0]
        object.__setattr__(
            self, "acc_int_bits",
            self.p_a + 1 + math.ceil(math.log2(max(2, d_h))))


def calibrate(model: OrnnModel, calib_inputs: np.ndarray, p_a: int, p_i: int,
              alpha_i: float, p: int) -> PtqPlan:
    """Derive the fixed-point plan from float hidden states on a calibration set.

    max_h is the peak |h_t| of the lambda-rescaled float network
    (lambda = 1/(alpha_i * alpha_U), which leaves the outputs unchanged);
    n_h is the smallest n with 2^n >= max_h * alpha_W, and
    alpha_h = 2^n_h / alpha_W so that the alpha_W * alpha_h product in the
    recurrence is a pure bit shift.
    """
    calib_inputs = np.asarray(calib_inputs, dtype=np.float64)
    if calib_inputs.size == 0:
        raise ValueError("empty calibration set")
    if calib_inputs.ndim == 2:
        calib_inputs = calib_inputs[None]

    q_u = quantize_uniform(model.U, p)
    q_v = quantize_uniform(model.V, p)
    alpha_w = 2.0 * model.W.scale
    lam = 1.0 / (alpha_i * q_u.scale)

    rescaled = OrnnModel(
        U=model.U * lam, W=model.W, V=model.V / lam,
        b_i=model.b_i * lam, b_o=model.b_o,
        unit=model.unit, output_mode=model.output_mode,
        output_activation=model.output_activation)
    max_h = 0.0
    for seq in calib_inputs:
        trace, _ = forward(rescaled, seq)
        max_h = max(max_h, float(np.max(np.abs(trace.states))))

    n_h = 0
    while 2.0 ** n_h < max_h * alpha_w:
        n_h += 1
    alpha_h = 2.0 ** n_h / alpha_w

    half_a = 1 << (p_a - 1)
    bias_codes = np.clip(np.rint(model.b_i * lam / alpha_h * half_a),
                         -half_a, half_a - 1).astype(np.int64)
    return PtqPlan(
        p=p, p_a=p_a, p_i=p_i,
        alpha_U=q_u.scale, alpha_V=q_v.scale, alpha_W=alpha_w,
        alpha_i=alpha_i, alpha_h=alpha_h, n_h=n_h, max_h=max_h,
        U_codes=q_u.codes.astype(np.int64), V_codes=q_v.codes.astype(np.int64),
        bias_codes=bias_codes, b_o=model.b_o.copy())


def quantize_inputs(plan: PtqPlan, inputs: np.ndarray) -> np.ndarray:
    """Input codes over 2^(p_i - 1) at scale alpha_i."""
    half = 1 << (plan.p_i - 1)
    return np.clip(np.rint(np.asarray(inputs, dtype=np.float64) / plan.alpha_i * half),
                   -half, half - 1).astype(np.int64)


@dataclass(frozen=True)
class PtqResult:
    outputs: np.ndarray        # float logits after the single final affine
    hidden_codes: np.ndarray   # (B, T+1, d_h) integer codes on the alpha_h grid
    saturations: int           # requantization clamps


def ptq_forward(plan: PtqPlan, model: OrnnModel, inputs: np.ndarray) -> PtqResult:
    """Run the recurrence in integer arithmetic.

    Per step: W-codes matvec (additions only), bit shift by n_h, U-codes
    matvec, bias add, then requantization onto the alpha_h grid with
    round-half-to-even (the lookup-table step).  The output layer is an
    integer matvec followed by one float affine.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    single = inputs.ndim == 2
    if single:
        inputs = inputs[None]
    batch, steps, d_in = inputs.shape
    if d_in != model.d_in:
        raise ValueError("input width mismatch")

    d_h = model.d_h
    w_codes = recurrent_codes(model)            # over denominator 2
    x_codes = quantize_inputs(plan, inputs)     # over 2^(p_i - 1)
    half_a = 1 << (plan.p_a - 1)

    # Entry value = 2^n_h * (acc_w / 2^p_a) + acc_u / 2^(p + p_i - 2) + bias;
    # requantized code = round(entry / alpha_h * 2^(p_a - 1)), which folds the
    # two scales below plus the integer bias codes.
    s_w = plan.alpha_W * 2.0 ** (plan.p_a - 1 - plan.n_h)
    scale_w = s_w * 2.0 ** (plan.n_h - plan.p_a)
    scale_u = s_w / 2.0 ** (plan.p + plan.p_i - 2)

    h_codes = np.zeros((batch, steps + 1, d_h), dtype=np.int64)
    saturations = 0
    for t in range(steps):
        acc_w = h_codes[:, t] @ w_codes.T                  # exact ints
        acc_u = x_codes[:, t] @ plan.U_codes.T             # exact ints
        entry = scale_w * acc_w + scale_u * acc_u + plan.bias_codes
        if model.unit == "relu":
            entry = np.maximum(entry, 0.0)
        raw = np.rint(entry)
        clipped = np.clip(raw, -half_a, half_a - 1)
        saturations += int(np.sum(raw != clipped))
        h_codes[:, t + 1] = clipped.astype(np.int64)

    readout = np.maximum(h_codes[:, 1:], 0) if model.unit == "linear" else h_codes[:, 1:]
    out_scale = (plan.alpha_i * plan.alpha_U * plan.alpha_V * plan.alpha_h
                 / (1 << (plan.p - 1)) / half_a)
    if model.output_mode == "many-to-many":
        acc_v = readout @ plan.V_codes.T
        outputs = out_scale * acc_v + plan.b_o
    else:
        acc_v = readout[:, -1] @ plan.V_codes.T
        outputs = out_scale * acc_v + plan.b_o

    if single:
        return PtqResult(outputs[0], h_codes[0], saturations)
    return PtqResult(outputs, h_codes, saturations)
