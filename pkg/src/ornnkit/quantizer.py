"""p-bit uniform and ternary quantization of the dense input/output matrices,
plus the model-size and operation-count reports."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidBitwidthError(ValueError):
    pass


def _code_dtype(p: int):
    # Smallest signed integer width holding p-bit codes.
    for dtype in (np.int8, np.int16, np.int32):
        if p <= np.iinfo(dtype).bits:
            return dtype
    return np.int64


@dataclass(frozen=True)
class QuantizedDense:
    """Integer code matrix with a single scale.

    Uniform: decode = scale * codes / 2^(p-1), codes in [-2^(p-1), 2^(p-1)-1].
    Ternary: decode = scale * codes, codes in {-1, 0, 1} (bitwidth marker
    ``p is None``).
    """

    codes: np.ndarray
    scale: float
    p: int | None  # None marks ternary

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        lo, hi = self.code_range
        if self.codes.min(initial=0) < lo or self.codes.max(initial=0) > hi:
            raise ValueError("codes out of range for bitwidth")

    @property
    def code_range(self) -> tuple[int, int]:
        if self.p is None:
            return -1, 1
        half = 1 << (self.p - 1)
        return -half, half - 1

    def decode(self) -> np.ndarray:
        if self.p is None:
            return self.scale * self.codes.astype(np.float64)
        return self.scale * self.codes.astype(np.float64) / (1 << (self.p - 1))


def quantize_uniform(m: np.ndarray, p: int) -> QuantizedDense:
    """Round each entry to the nearest element of
    (scale / 2^(p-1)) * [-2^(p-1), 2^(p-1)-1], scale = max |m|.

    Ties round half-to-even on the integer codes.  An all-zero matrix gets
    scale 1 and zero codes (decode is exact).
    """
    if p < 2:
        raise InvalidBitwidthError(f"uniform bitwidth must be >= 2, got {p}")
    m = np.asarray(m, dtype=np.float64)
    scale = float(np.max(np.abs(m))) if m.size else 0.0
    if scale == 0.0:
        scale = 1.0
    half = 1 << (p - 1)
    codes = np.clip(np.rint(m / scale * half), -half, half - 1)
    return QuantizedDense(codes.astype(_code_dtype(p)), scale, p)


def quantize_ternary(m: np.ndarray) -> QuantizedDense:
    """Round each entry to the nearest of {-scale, 0, scale}, scale = max |m|."""
    m = np.asarray(m, dtype=np.float64)
    scale = float(np.max(np.abs(m))) if m.size else 0.0
    if scale == 0.0:
        scale = 1.0
    codes = np.clip(np.rint(m / scale), -1, 1)
    return QuantizedDense(codes.astype(np.int8), scale, None)


@dataclass(frozen=True)
class SizeReport:
    """Itemized storage cost; the headline follows the sign-vector + p-bit
    U/V convention, biases reported separately."""

    core_bits: int
    bias_bits: int
    scale_bits: int
    full_precision: bool

    @property
    def core_kb(self) -> float:
        return self.core_bits / 8192.0

    @property
    def total_kb(self) -> float:
        return (self.core_bits + self.bias_bits + self.scale_bits) / 8192.0


def model_size_bits(d_h: int, d_in: int, d_out: int, p: int | None,
                    p_a: int = 12) -> SizeReport:
    """Storage report: core d_h*(1+(d_in+d_out)*p) bits when U/V are p-bit
    quantized, raw float64 bytes when p is None (full precision)."""
    if p is None:
        core = 64 * (d_h * d_in + d_out * d_h) + d_h  # floats plus the sign bits
        return SizeReport(core_bits=core, bias_bits=64 * (d_h + d_out),
                          scale_bits=0, full_precision=True)
    core = d_h * (1 + (d_in + d_out) * p)
    return SizeReport(core_bits=core, bias_bits=(d_h + d_out) * p_a,
                      scale_bits=2 * 64, full_precision=False)


@dataclass(frozen=True)
class OpCountReport:
    """Multiplication/addition counts per layer for one timestep."""

    input_mults: int
    input_adds: int
    recurrent_mults: int
    recurrent_adds: int
    output_mults: int
    output_adds: int


def op_count_report(d_h: int, d_in: int, d_out: int, q: int = 1) -> OpCountReport:
    """Per-timestep operation counts.  The recurrent layer needs no
    multiplications; its addition count is d_h^2 / q."""
    if d_h % q:
        raise ValueError("q must divide d_h")
    return OpCountReport(
        input_mults=d_in * d_h,
        input_adds=d_in * d_h,
        recurrent_mults=0,
        recurrent_adds=d_h * (d_h // q),
        output_mults=d_h * d_out,
        output_adds=d_h * d_out,
    )
