"""Memorization experiment (linear vs relu recurrent units) and the
size/complexity trade-off table."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .hadamard import SignVector, make_recurrent
from .model import OrnnModel, forward
from .quantizer import model_size_bits, op_count_report


@dataclass(frozen=True)
class MemorizationCurves:
    """Per-timestep perturbation norms for unit bumps along each input axis."""

    e_lin: np.ndarray
    f_lin: np.ndarray
    e_relu: np.ndarray
    f_relu: np.ndarray

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "e_lin", "f_lin", "e_relu", "f_relu"])
            for t in range(len(self.e_lin)):
                writer.writerow([t + 1, self.e_lin[t], self.f_lin[t],
                                 self.e_relu[t], self.f_relu[t]])


def memorization_sweep(k: int = 7, steps: int = 200, seed: int = 0
                       ) -> MemorizationCurves:
    """Random-walk 2-d inputs, standard-normal U, all-ones-sign scaled
    Sylvester recurrent weight, no bias, no output layer.

    For each t, perturb x_t by a unit bump along each axis and record the
    2-norm change of h_T, for both recurrent unit kinds.
    """
    d_h = 1 << k
    rng = np.random.default_rng(seed)
    inputs = np.cumsum(rng.normal(size=(steps, 2)), axis=0)  # x_0 = 0 walk
    u_mat = rng.normal(size=(d_h, 2))
    w = make_recurrent("binary", k, 1, SignVector.from_signs(np.ones(d_h, dtype=np.int8)))

    def final_state(unit: str, seqs: np.ndarray) -> np.ndarray:
        model = OrnnModel(U=u_mat, W=w, V=np.zeros((1, d_h)), b_i=np.zeros(d_h),
                          b_o=np.zeros(1), unit=unit, output_mode="many-to-one")
        trace, _ = forward(model, seqs)
        return trace.states[:, -1]

    bumps = np.eye(2)
    curves = {}
    for unit in ("linear", "relu"):
        base = final_state(unit, inputs[None])[0]
        for axis in range(2):
            perturbed = np.repeat(inputs[None], steps, axis=0)
            perturbed[np.arange(steps), np.arange(steps)] += bumps[axis]
            finals = final_state(unit, perturbed)
            curves[(unit, axis)] = np.linalg.norm(finals - base, axis=1)

    return MemorizationCurves(
        e_lin=curves[("linear", 0)], f_lin=curves[("linear", 1)],
        e_relu=curves[("relu", 0)], f_relu=curves[("relu", 1)])


def tradeoff_table(d_h: int, d_in: int, d_out: int, p: int,
                   entries: list[tuple[int, float]]) -> list[dict]:
    """Records (q, performance metric, recurrent additions, size kB).

    ``entries`` pairs each block count q with an already-measured metric.
    Size is independent of q at fixed (d_h, p); additions are d_h^2 / q.
    """
    rows = []
    for q, metric in entries:
        ops = op_count_report(d_h, d_in, d_out, q)
        size = model_size_bits(d_h, d_in, d_out, p)
        rows.append({
            "q": q,
            "performance": metric,
            "recurrent_additions": ops.recurrent_adds,
            "size_kb": size.core_kb,
        })
    return rows
