"""Binary model serialization.

Layout (all integers little-endian, floats IEEE-754 binary64):

  magic "HDRN" | version u16 | d_in u32 | d_out u32 | k u16 | q u16 |
  kind u8 | unit u8 | output_mode u8 | output_activation u8 |
  uv_mode u8 (0 = FP, 1 = uniform, 2 = ternary) | p u8 |
  has_col u8 | has_plan u8
  payload:
    bit-packed row signs [, bit-packed column signs]
    U, V: float64 matrix (FP) or scale f64 + int16 codes (quantized)
    b_i, b_o float64 vectors
    optional plan: p u8 | p_a u8 | p_i u8 | n_h u8 | alpha_U..max_h f64 x6 |
                   U_codes i32 | V_codes i32 | bias_codes i32 | b_o f64

Round trips are bit-exact: codes and sign bits are stored as integers and the
decoded float views are recomputed identically on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fxp import PtqPlan
from .hadamard import RecurrentParam, SignVector
from .model import OrnnModel
from .quantizer import QuantizedDense, quantize_ternary, quantize_uniform
from .train import Architecture, TrainConfig, TrainState

MAGIC = b"HDRN"
VERSION = 1

_UNITS = ("linear", "relu")
_MODES = ("many-to-one", "many-to-many")
_ACTS = ("identity", "softmax")
_KINDS = ("binary", "block-ternary")


class ModelFileError(ValueError):
    pass


@dataclass(frozen=True)
class ModelBundle:
    """Everything persisted for one trained network."""

    arch: Architecture
    row_signs: SignVector
    col_signs: SignVector | None
    U: QuantizedDense | np.ndarray
    V: QuantizedDense | np.ndarray
    b_i: np.ndarray
    b_o: np.ndarray
    plan: PtqPlan | None = None

    @property
    def uv_bits(self):
        if isinstance(self.U, QuantizedDense):
            return "ternary" if self.U.p is None else self.U.p
        return None

    def to_model(self) -> OrnnModel:
        u = self.U.decode() if isinstance(self.U, QuantizedDense) else self.U
        v = self.V.decode() if isinstance(self.V, QuantizedDense) else self.V
        w = RecurrentParam(self.arch.kind, self.arch.k, self.arch.q,
                           self.row_signs, self.col_signs)
        return OrnnModel(U=u, W=w, V=v, b_i=self.b_i, b_o=self.b_o,
                         unit=self.arch.unit, output_mode=self.arch.output_mode,
                         output_activation=self.arch.output_activation)

    def with_plan(self, plan: PtqPlan) -> "ModelBundle":
        return ModelBundle(self.arch, self.row_signs, self.col_signs,
                           self.U, self.V, self.b_i, self.b_o, plan)


def bundle_from_state(state: TrainState, arch: Architecture,
                      config: TrainConfig) -> ModelBundle:
    """Freeze the quantized/binarized views of a training state for export."""
    def dense(latent):
        if config.uv_bits is None:
            return latent.copy()
        if config.uv_bits == "ternary":
            return quantize_ternary(latent)
        return quantize_uniform(latent, config.uv_bits)

    col = None
    if "c" in state.params:
        col = SignVector.from_latent(state.params["c"])
    return ModelBundle(
        arch=arch,
        row_signs=SignVector.from_latent(state.params["u"]),
        col_signs=col,
        U=dense(state.params["U"]),
        V=dense(state.params["V"]),
        b_i=state.params["b_i"].copy(),
        b_o=state.params["b_o"].copy())


def _write_array(chunks: list[bytes], arr: np.ndarray, dtype: str) -> None:
    chunks.append(np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<"))
                  .tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise ModelFileError("truncated model file")
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out

    def array(self, shape: tuple, dtype: str) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        count = int(np.prod(shape)) if shape else 1
        raw = self.take(dt.itemsize * count)
        return np.frombuffer(raw, dtype=dt).astype(dtype).reshape(shape)


def _dense_bytes(chunks: list[bytes], mat) -> None:
    if isinstance(mat, QuantizedDense):
        chunks.append(struct.pack("<d", mat.scale))
        _write_array(chunks, mat.codes, "int16")
    else:
        _write_array(chunks, mat, "float64")


def save_model(path: str | Path, bundle: ModelBundle) -> None:
    arch = bundle.arch
    uv = bundle.uv_bits
    uv_mode = 0 if uv is None else (2 if uv == "ternary" else 1)
    p = uv if isinstance(uv, int) else 0
    header = MAGIC + struct.pack(
        "<HIIHHBBBBBBBB", VERSION, arch.d_in, arch.d_out, arch.k, arch.q,
        _KINDS.index(arch.kind), _UNITS.index(arch.unit),
        _MODES.index(arch.output_mode), _ACTS.index(arch.output_activation),
        uv_mode, p, int(bundle.col_signs is not None), int(bundle.plan is not None))
    chunks = [header, bundle.row_signs.pack()]
    if bundle.col_signs is not None:
        chunks.append(bundle.col_signs.pack())
    _dense_bytes(chunks, bundle.U)
    _dense_bytes(chunks, bundle.V)
    _write_array(chunks, bundle.b_i, "float64")
    _write_array(chunks, bundle.b_o, "float64")
    if bundle.plan is not None:
        plan = bundle.plan
        chunks.append(struct.pack("<BBBB", plan.p, plan.p_a, plan.p_i, plan.n_h))
        chunks.append(struct.pack("<6d", plan.alpha_U, plan.alpha_V, plan.alpha_W,
                                  plan.alpha_i, plan.alpha_h, plan.max_h))
        _write_array(chunks, plan.U_codes, "int32")
        _write_array(chunks, plan.V_codes, "int32")
        _write_array(chunks, plan.bias_codes, "int32")
        _write_array(chunks, plan.b_o, "float64")
    Path(path).write_bytes(b"".join(chunks))


def load_model(path: str | Path) -> ModelBundle:
    reader = _Reader(Path(path).read_bytes())
    if reader.take(4) != MAGIC:
        raise ModelFileError(f"{path}: bad magic")
    (version, d_in, d_out, k, q, kind_i, unit_i, mode_i, act_i,
     uv_mode, p, has_col, has_plan) = struct.unpack("<HIIHHBBBBBBBB", reader.take(22))
    if version != VERSION:
        raise ModelFileError(f"{path}: unsupported version {version}")
    arch = Architecture(d_in=d_in, d_out=d_out, kind=_KINDS[kind_i], k=k, q=q,
                        unit=_UNITS[unit_i], output_mode=_MODES[mode_i],
                        output_activation=_ACTS[act_i],
                        train_col_signs=bool(has_col))
    d_h = arch.d_h
    packed = (d_h + 7) // 8
    row = SignVector.unpack(reader.take(packed), d_h)
    col = SignVector.unpack(reader.take(packed), d_h) if has_col else None

    def read_dense(shape):
        if uv_mode == 0:
            return reader.array(shape, "float64")
        scale, = struct.unpack("<d", reader.take(8))
        codes = reader.array(shape, "int16")
        if uv_mode == 2:
            return QuantizedDense(codes.astype(np.int8), scale, None)
        return QuantizedDense(codes, scale, p)

    u = read_dense((d_h, d_in))
    v = read_dense((d_out, d_h))
    b_i = reader.array((d_h,), "float64")
    b_o = reader.array((d_out,), "float64")
    plan = None
    if has_plan:
        pp, p_a, p_i, n_h = struct.unpack("<BBBB", reader.take(4))
        a_u, a_v, a_w, a_i, a_h, max_h = struct.unpack("<6d", reader.take(48))
        u_codes = reader.array((d_h, d_in), "int32").astype(np.int64)
        v_codes = reader.array((d_out, d_h), "int32").astype(np.int64)
        bias_codes = reader.array((d_h,), "int32").astype(np.int64)
        plan_b_o = reader.array((d_out,), "float64")
        plan = PtqPlan(p=pp, p_a=p_a, p_i=p_i, alpha_U=a_u, alpha_V=a_v,
                       alpha_W=a_w, alpha_i=a_i, alpha_h=a_h, n_h=n_h,
                       max_h=max_h, U_codes=u_codes, V_codes=v_codes,
                       bias_codes=bias_codes, b_o=plan_b_o)
    if reader.pos != len(reader.data):
        raise ModelFileError(f"{path}: trailing bytes")
    return ModelBundle(arch, row, col, u, v, b_i, b_o, plan)
