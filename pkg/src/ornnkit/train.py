"""Backpropagation through time, straight-through-estimator gradients for the
sign vector and the quantized dense matrices, Adam, schedules, and the fit loop.

Latent (full-precision) parameters are what the optimizer touches; the forward
pass always runs at the binarized/quantized point, and gradients computed there
are passed through the quantizers unchanged (BinaryConnect-style updates).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import SequenceDataset, batch_iter
from .hadamard import RecurrentParam, SignVector, _block_hadamard, apply_w, apply_w_transpose
from .model import OrnnModel, forward, softmax
from .quantizer import quantize_ternary, quantize_uniform

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

PARAM_NAMES = ("u", "U", "V", "b_i", "b_o")


class DivergenceError(RuntimeError):
    """Raised when the loss goes non-finite; carries the failing step index."""

    def __init__(self, step: int):
        super().__init__(f"non-finite loss at optimizer step {step}")
        self.step = step


@dataclass(frozen=True)
class Architecture:
    """Static shape/kind description of a network under training."""

    d_in: int
    d_out: int
    kind: str = "binary"        # recurrent kind: "binary" | "block-ternary"
    k: int = 6
    q: int = 1
    unit: str = "linear"
    output_mode: str = "many-to-many"
    output_activation: str = "softmax"
    train_col_signs: bool = False

    @property
    def d_h(self) -> int:
        return self.q * (1 << self.k)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    decay: float = 0.98          # per-epoch exponential factor
    batch_size: int = 128
    epochs: int = 10
    uv_bits: int | str | None = None  # int p >= 2, "ternary", or None (FP)
    seed: int = 0
    grad_clip: float | None = None    # global-norm threshold
    latent_clip: bool = True          # clip latent u to [-1, 1] after each step

    def __post_init__(self):
        if self.lr0 < 0 or not (0 < self.decay <= 1):
            raise ValueError("need lr0 >= 0 and 0 < decay <= 1")
        if isinstance(self.uv_bits, int) and self.uv_bits < 2:
            raise ValueError("uniform U/V bitwidth must be >= 2")
        if isinstance(self.uv_bits, str) and self.uv_bits != "ternary":
            raise ValueError(f"unknown uv_bits marker {self.uv_bits!r}")


@dataclass
class TrainState:
    """Latent parameters plus Adam moments.  Mutated only by adam_step."""

    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    extra: dict[str, np.ndarray] = field(default_factory=dict)  # e.g. "c" col latents

    def copy(self) -> "TrainState":
        return TrainState(
            {k: p.copy() for k, p in self.params.items()},
            {k: p.copy() for k, p in self.m.items()},
            {k: p.copy() for k, p in self.v.items()},
            self.step,
            {k: p.copy() for k, p in self.extra.items()},
        )


def glorot_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform on +-sqrt(6 / (rows + cols))."""
    bound = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_state(arch: Architecture, seed: int) -> TrainState:
    # Random initial signs: with u all ones the binary weight is a symmetric
    # orthogonal matrix, so W^2 = I and the recurrence has period two — a
    # dead end for long-range memory.  Random signs give a generic orthogonal
    # spectrum.
    rng = np.random.default_rng(seed)
    params = {
        "u": rng.choice([-1.0, 1.0], size=arch.d_h),
        "U": glorot_init(arch.d_h, arch.d_in, rng),
        "V": glorot_init(arch.d_out, arch.d_h, rng),
        "b_i": np.zeros(arch.d_h),
        "b_o": np.zeros(arch.d_out),
    }
    if arch.train_col_signs:
        params["c"] = np.ones(arch.d_h)
    return TrainState(
        params,
        {k: np.zeros_like(p) for k, p in params.items()},
        {k: np.zeros_like(p) for k, p in params.items()},
    )


def _uv_view(latent: np.ndarray, uv_bits) -> np.ndarray:
    """Quantized forward view of a latent dense matrix; identity when FP."""
    if uv_bits is None:
        return latent
    if uv_bits == "ternary":
        return quantize_ternary(latent).decode()
    return quantize_uniform(latent, uv_bits).decode()


def recurrent_from_state(state: TrainState, arch: Architecture) -> RecurrentParam:
    row = SignVector.from_latent(state.params["u"])
    col = None
    if "c" in state.params:
        col = SignVector.from_latent(state.params["c"])
    return RecurrentParam(arch.kind, arch.k, arch.q, row, col)


def build_model(state: TrainState, arch: Architecture, config: TrainConfig) -> OrnnModel:
    """Materialize the quantized/binarized forward view of the latents."""
    return OrnnModel(
        U=_uv_view(state.params["U"], config.uv_bits),
        W=recurrent_from_state(state, arch),
        V=_uv_view(state.params["V"], config.uv_bits),
        b_i=state.params["b_i"].copy(),
        b_o=state.params["b_o"].copy(),
        unit=arch.unit,
        output_mode=arch.output_mode,
        output_activation=arch.output_activation,
    )


def loss_xent(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean cross-entropy over batch (and timesteps, for sequence targets)."""
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    z = logits - np.max(logits, axis=-1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(z), axis=-1))
    picked = np.take_along_axis(z, targets[..., None], axis=-1)[..., 0]
    return float(np.mean(log_norm - picked))


def bptt_grads(state: TrainState, arch: Architecture, inputs: np.ndarray,
               targets: np.ndarray, config: TrainConfig
               ) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and gradients w.r.t. all latent parameters for one batch.

    The loss is evaluated at the binarized/quantized point; STE passes the
    gradient through sign(.) and q_p(.) as identity onto the latents.
    """
    model = build_model(state, arch, config)
    param = model.W
    trace, logits = forward(model, inputs)
    loss = loss_xent(logits, targets)

    batch = inputs.shape[0]
    steps = inputs.shape[1]
    h = trace.states  # (B, T+1, d_h)

    dlogits = softmax(logits)
    picked = np.take_along_axis(dlogits, targets[..., None], axis=-1)
    np.put_along_axis(dlogits, targets[..., None], picked - 1.0, axis=-1)
    denom = batch * steps if model.output_mode == "many-to-many" else batch
    dlogits /= denom

    grads = {name: np.zeros_like(state.params[name]) for name in state.params}

    if model.unit == "linear":
        readout = np.maximum(h[:, 1:], 0.0)
        mask = h[:, 1:] > 0
    else:
        readout = h[:, 1:]
        mask = None

    # Output layer
    if model.output_mode == "many-to-many":
        grads["V"] += np.einsum("btc,bth->ch", dlogits, readout)
        grads["b_o"] += dlogits.sum(axis=(0, 1))
        ds = dlogits @ model.V  # (B, T, d_h)
    else:
        grads["V"] += dlogits.T @ readout[:, -1]
        grads["b_o"] += dlogits.sum(axis=0)
        ds = np.zeros((batch, steps, model.d_h))
        ds[:, -1] = dlogits @ model.V

    if model.unit == "linear":
        dh_direct = ds * mask
    else:
        dh_direct = ds

    row_signs = param.row_signs.signs.astype(np.float64)
    col_signs = None
    if param.col_signs is not None:
        col_signs = param.col_signs.signs.astype(np.float64)

    da_all = np.zeros((batch, steps, model.d_h))
    delta = np.zeros((batch, model.d_h))
    for t in range(steps - 1, -1, -1):
        g = dh_direct[:, t] + delta
        if model.unit == "relu":
            da = g * (trace.preacts[:, t] > 0)
        else:
            da = g
        da_all[:, t] = da
        delta = apply_w_transpose(param, da)

    grads["U"] += np.einsum("bth,bti->hi", da_all, inputs)
    grads["b_i"] += da_all.sum(axis=(0, 1))

    # Sign-vector gradient: dL/du_i = scale * sum_t da_t[i] * (M h_{t-1})[i],
    # with M = I_q kron H (column signs folded into h when present).
    prev = h[:, :-1]
    if col_signs is not None:
        prev = prev * col_signs
    mh = _block_hadamard(param, prev)  # (B, T, d_h)
    grads["u"] += param.scale * np.einsum("bth,bth->h", da_all, mh)

    if col_signs is not None:
        # dL/dc_j = scale * h_{t-1}[j] * (M (u * da))[j]
        mu = _block_hadamard(param, da_all * row_signs)
        grads["c"] += param.scale * np.einsum("bth,bth->h", h[:, :-1], mu)

    return loss, grads


def adam_step(state: TrainState, grads: dict[str, np.ndarray], lr: float,
              config: TrainConfig) -> TrainState:
    """One Adam update on the latents (in place); refreshes the step counter."""
    if config.grad_clip is not None:
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if norm > config.grad_clip:
            grads = {k: g * (config.grad_clip / norm) for k, g in grads.items()}
    state.step += 1
    t = state.step
    for name, g in grads.items():
        state.m[name] = ADAM_BETA1 * state.m[name] + (1 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1 - ADAM_BETA2) * g * g
        m_hat = state.m[name] / (1 - ADAM_BETA1 ** t)
        v_hat = state.v[name] / (1 - ADAM_BETA2 ** t)
        state.params[name] -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    if config.latent_clip:
        np.clip(state.params["u"], -1.0, 1.0, out=state.params["u"])
        if "c" in state.params:
            np.clip(state.params["c"], -1.0, 1.0, out=state.params["c"])
    return state


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    return config.lr0 * config.decay ** epoch


def eval_metric(model: OrnnModel, dataset: SequenceDataset,
                batch_size: int = 512) -> dict[str, float]:
    """Cross-entropy always; accuracy additionally for many-to-one tasks."""
    total = 0.0
    correct = 0
    count = 0
    for start in range(0, len(dataset), batch_size):
        xb = dataset.inputs[start:start + batch_size]
        yb = dataset.targets[start:start + batch_size]
        _, logits = forward(model, xb)
        total += loss_xent(logits, yb) * len(xb)
        if model.output_mode == "many-to-one":
            correct += int(np.sum(np.argmax(logits, axis=-1) == yb))
        count += len(xb)
    out = {"xent": total / count}
    if model.output_mode == "many-to-one":
        out["accuracy"] = correct / count
    return out


@dataclass
class FitResult:
    best: TrainState
    last: TrainState
    history: list[dict]
    diverged: bool = False


def fit(state: TrainState, arch: Architecture, train_set: SequenceDataset,
        val_set: SequenceDataset, config: TrainConfig) -> FitResult:
    """Epoch loop with per-epoch reshuffling and best-validation checkpointing.

    Returns the state achieving the best validation metric (plus the
    last-epoch state) and one metrics record per epoch.  A non-finite loss
    aborts with the last good checkpoint and the diverged flag set.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    higher_better = arch.output_mode == "many-to-one"
    best = state.copy()
    best_score = -np.inf if higher_better else np.inf
    history: list[dict] = []

    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config)
        epoch_seed = np.random.default_rng((config.seed, epoch)).integers(2 ** 63)
        t0 = time.monotonic()
        losses = []
        for xb, yb in batch_iter(train_set, config.batch_size, int(epoch_seed)):
            try:
                loss, grads = bptt_grads(state, arch, xb, yb, config)
            except ValueError:
                # Non-finite logits: abort with the last good checkpoint.
                return FitResult(best, best, history, diverged=True)
            if not math.isfinite(loss):
                return FitResult(best, best, history, diverged=True)
            losses.append(loss)
            state = adam_step(state, grads, lr, config)

        model = build_model(state, arch, config)
        if len(val_set):
            val = eval_metric(model, val_set)
            score = val["accuracy"] if higher_better else val["xent"]
            improved = score > best_score if higher_better else score < best_score
            if improved:
                best_score = score
                best = state.copy()
        else:
            val = {"xent": float("nan")}
            best = state.copy()
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_xent": val["xent"],
            "lr": lr,
            "wall_time": time.monotonic() - t0,
        }
        if "accuracy" in val:
            record["val_accuracy"] = val["accuracy"]
        history.append(record)

    return FitResult(best, state, history)
