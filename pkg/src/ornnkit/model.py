"""Forward dynamics of the orthogonal RNN.

Two recurrent unit kinds are supported:

* ``linear``: h_t = W h_{t-1} + U x_t + b_i, output V relu(h_t) + b_o
* ``relu``:   h_t = relu(W h_{t-1} + U x_t + b_i), output V h_t + b_o

``forward`` always returns logits; softmax (when configured) is an
evaluation-time concern handled by ``predict_proba``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hadamard import RecurrentParam, apply_w


@dataclass(frozen=True)
class OrnnModel:
    """Immutable parameter bundle for one network."""

    U: np.ndarray          # (d_h, d_in)
    W: RecurrentParam
    V: np.ndarray          # (d_out, d_h)
    b_i: np.ndarray        # (d_h,)
    b_o: np.ndarray        # (d_out,)
    unit: str = "linear"                 # "linear" | "relu"
    output_mode: str = "many-to-one"     # "many-to-one" | "many-to-many"
    output_activation: str = "identity"  # "identity" | "softmax"

    def __post_init__(self):
        d_h = self.W.d_h
        if self.U.shape[0] != d_h or self.V.shape[1] != d_h:
            raise ValueError("U/V shapes inconsistent with recurrent size")
        if self.b_i.shape != (d_h,) or self.b_o.shape != (self.V.shape[0],):
            raise ValueError("bias shapes inconsistent")
        if self.unit not in ("linear", "relu"):
            raise ValueError(f"unknown unit {self.unit!r}")
        if self.output_mode not in ("many-to-one", "many-to-many"):
            raise ValueError(f"unknown output mode {self.output_mode!r}")
        if self.output_activation not in ("identity", "softmax"):
            raise ValueError(f"unknown output activation {self.output_activation!r}")

    @property
    def d_in(self) -> int:
        return self.U.shape[1]

    @property
    def d_h(self) -> int:
        return self.W.d_h

    @property
    def d_out(self) -> int:
        return self.V.shape[0]


@dataclass(frozen=True)
class HiddenTrace:
    """States h_0..h_T (h_0 = 0); pre-activations kept for the relu unit."""

    states: np.ndarray                 # (B, T+1, d_h)
    preacts: np.ndarray | None = None  # (B, T, d_h), relu unit only


def forward(model: OrnnModel, inputs: np.ndarray) -> tuple[HiddenTrace, np.ndarray]:
    """Run the recurrence over a batch of equal-length sequences.

    ``inputs`` has shape (B, T, d_in) or (T, d_in) for a single sequence.
    Returns the hidden trace and the logits: shape (B, T, d_out) in
    many-to-many mode, (B, d_out) in many-to-one mode (batch axis dropped
    if the input had none).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    single = inputs.ndim == 2
    if single:
        inputs = inputs[None]
    if inputs.ndim != 3 or inputs.shape[2] != model.d_in:
        raise ValueError(f"expected inputs (B, T, {model.d_in}), got {inputs.shape}")
    if inputs.shape[1] < 1:
        raise ValueError("sequence length must be >= 1")
    if not np.all(np.isfinite(inputs)):
        raise ValueError("non-finite input")

    batch, steps, _ = inputs.shape
    drive = inputs @ model.U.T + model.b_i  # (B, T, d_h)

    states = np.zeros((batch, steps + 1, model.d_h))
    preacts = np.zeros((batch, steps, model.d_h)) if model.unit == "relu" else None
    h = states[:, 0]
    for t in range(steps):
        a = apply_w(model.W, h) + drive[:, t]
        if model.unit == "relu":
            preacts[:, t] = a
            h = np.maximum(a, 0.0)
        else:
            h = a
        states[:, t + 1] = h

    if model.unit == "linear":
        readout = np.maximum(states[:, 1:], 0.0)
    else:
        readout = states[:, 1:]
    if model.output_mode == "many-to-many":
        logits = readout @ model.V.T + model.b_o
    else:
        logits = readout[:, -1] @ model.V.T + model.b_o

    trace = HiddenTrace(states=states, preacts=preacts)
    if single:
        return HiddenTrace(states[0], None if preacts is None else preacts[0]), logits[0]
    return trace, logits


def predict_proba(model: OrnnModel, inputs: np.ndarray) -> np.ndarray:
    """Evaluation-time outputs with the configured output activation applied."""
    _, logits = forward(model, inputs)
    if model.output_activation == "softmax":
        return softmax(logits)
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def perturbation_response(model: OrnnModel, inputs: np.ndarray, t: int,
                          z: np.ndarray) -> float:
    """||h_T(x) - h_T(x with x_t += z)||_2 for 1-based step index t."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2:
        raise ValueError("perturbation_response expects a single (T, d_in) sequence")
    steps = inputs.shape[0]
    if not 1 <= t <= steps:
        raise IndexError(f"step index {t} out of range [1, {steps}]")
    trace, _ = forward(model, inputs)
    bumped = inputs.copy()
    bumped[t - 1] += np.asarray(z, dtype=np.float64)
    trace2, _ = forward(model, bumped)
    return float(np.linalg.norm(trace2.states[-1] - trace.states[-1]))
