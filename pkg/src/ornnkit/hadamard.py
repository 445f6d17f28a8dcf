"""Sylvester-Hadamard matrices and sign-parameterized orthogonal recurrent weights.

The recurrent weight matrix of the networks in this package is never stored as
a dense float matrix.  It is a scaled, row-sign-switched (block-)Sylvester
matrix, fully determined by a sign vector ``u`` together with the block shape
``(k, q)``.  This module builds those parameters, materializes them densely at
small scale (for oracles and tests), and applies them matrix-free via the fast
Walsh-Hadamard transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Dense materialization is only meant for oracles/tests; larger sizes must go
# through the matrix-free path.
DENSE_CAP = 4096

# Below this order a dense per-block multiply beats the butterfly.
_FWHT_MIN_K = 5


class InvalidOrderError(ValueError):
    """Raised for Sylvester orders outside the supported range."""


def sylvester(k: int) -> np.ndarray:
    """Return the 2^k x 2^k Sylvester matrix as an int64 array over {-1,+1}.

    Built by the recursive doubling [[H, H], [H, -H]] starting from the
    2 x 2 seed.  The result is symmetric and satisfies H @ H.T == 2^k * I.
    """
    if k < 1:
        raise InvalidOrderError(f"Sylvester order must be >= 1, got {k}")
    if k > 30:
        raise InvalidOrderError(f"Sylvester order {k} overflows the index range")
    h = np.array([[1, 1], [1, -1]], dtype=np.int64)
    for _ in range(k - 1):
        h = np.block([[h, h], [h, -h]])
    return h


def kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product: block (i, j) of the result is a[i, j] * b."""
    return np.kron(a, b)


def fwht(x: np.ndarray) -> np.ndarray:
    """Fast Walsh-Hadamard transform along the last axis (no normalization).

    Equivalent to multiplying by the Sylvester matrix of matching order.
    The length of the last axis must be a power of two.
    """
    n = x.shape[-1]
    if n & (n - 1):
        raise ValueError(f"FWHT length must be a power of two, got {n}")
    y = np.array(x, dtype=np.float64, copy=True)
    h = 1
    while h < n:
        y = y.reshape(*y.shape[:-1], n // (2 * h), 2, h)
        a = y[..., 0, :].copy()
        y[..., 0, :] += y[..., 1, :]
        y[..., 1, :] = a - y[..., 1, :]
        y = y.reshape(*y.shape[:-3], n)
        h *= 2
    return y


@dataclass(frozen=True)
class SignVector:
    """A binary vector in {-1,+1}^d with its real-valued training shadow.

    ``signs[i]`` is +1 exactly when ``latent[i] >= 0`` (sign(0) = +1).
    """

    signs: np.ndarray
    latent: np.ndarray

    def __post_init__(self):
        signs = np.asarray(self.signs, dtype=np.int8)
        latent = np.asarray(self.latent, dtype=np.float64)
        if signs.ndim != 1 or signs.shape != latent.shape:
            raise ValueError("signs and latent must be 1-d vectors of equal length")
        if not np.all(np.abs(signs) == 1):
            raise ValueError("sign entries must be -1 or +1")
        if not np.array_equal(signs, binarize(latent)):
            raise ValueError("signs inconsistent with latent (sign(0) = +1)")
        object.__setattr__(self, "signs", signs)
        object.__setattr__(self, "latent", latent)

    def __len__(self) -> int:
        return len(self.signs)

    @classmethod
    def from_latent(cls, latent: np.ndarray) -> "SignVector":
        latent = np.asarray(latent, dtype=np.float64)
        return cls(binarize(latent), latent)

    @classmethod
    def from_signs(cls, signs: np.ndarray) -> "SignVector":
        signs = np.asarray(signs, dtype=np.int8)
        return cls(signs, signs.astype(np.float64))

    def pack(self) -> bytes:
        """Bit-pack: little-endian bit order within bytes, +1 -> 1, -1 -> 0."""
        bits = (self.signs > 0).astype(np.uint8)
        return np.packbits(bits, bitorder="little").tobytes()

    @classmethod
    def unpack(cls, data: bytes, length: int) -> "SignVector":
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8),
                             count=length, bitorder="little")
        return cls.from_signs(np.where(bits > 0, 1, -1).astype(np.int8))


def binarize(latent: np.ndarray) -> np.ndarray:
    """Map a real vector to {-1,+1} with sign(0) = +1."""
    return np.where(np.asarray(latent) >= 0, 1, -1).astype(np.int8)


@dataclass(frozen=True)
class RecurrentParam:
    """Sign-parameterized orthogonal recurrent weight.

    Materialized value: scale * diag(row_signs) @ (I_q kron H_{2^k})
    [@ diag(col_signs)], with scale = 1/sqrt(d_h) for the binary kind
    (q == 1) and 1/sqrt(2^k) for the block-ternary kind.  Orthogonal for
    every sign assignment; nonzero fraction is exactly 1/q.
    """

    kind: str
    k: int
    q: int
    row_signs: SignVector
    col_signs: SignVector | None = None
    scale: float = field(init=False)

    def __post_init__(self):
        if self.kind not in ("binary", "block-ternary"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.k < 1:
            raise InvalidOrderError(f"Sylvester order must be >= 1, got {self.k}")
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if self.kind == "binary" and self.q != 1:
            raise ValueError("binary kind requires q == 1")
        d_h = self.q * (1 << self.k)
        if len(self.row_signs) != d_h:
            raise ValueError(f"row_signs length {len(self.row_signs)} != d_h {d_h}")
        if self.col_signs is not None and len(self.col_signs) != d_h:
            raise ValueError(f"col_signs length {len(self.col_signs)} != d_h {d_h}")
        object.__setattr__(self, "scale", 1.0 / np.sqrt(1 << self.k))

    @property
    def d_h(self) -> int:
        return self.q * (1 << self.k)

    @property
    def block(self) -> int:
        return 1 << self.k

    def with_row_signs(self, row_signs: SignVector) -> "RecurrentParam":
        return RecurrentParam(self.kind, self.k, self.q, row_signs, self.col_signs)


def make_recurrent(kind: str, k: int, q: int, row_signs: SignVector) -> RecurrentParam:
    """Build a RecurrentParam; see RecurrentParam for the materialized form."""
    return RecurrentParam(kind, k, q, row_signs)


def switch_columns(param: RecurrentParam, col_signs: SignVector) -> RecurrentParam:
    """Attach column sign switching (ablation only); the result stays orthogonal."""
    return RecurrentParam(param.kind, param.k, param.q, param.row_signs, col_signs)


def materialize(param: RecurrentParam) -> np.ndarray:
    """Dense float64 weight matrix; only allowed up to d_h = DENSE_CAP."""
    if param.d_h > DENSE_CAP:
        raise ValueError(
            f"dense materialization capped at d_h <= {DENSE_CAP}, got {param.d_h}")
    h = sylvester(param.k)
    m = kronecker(np.eye(param.q, dtype=np.int64), h)
    w = param.scale * param.row_signs.signs[:, None] * m
    if param.col_signs is not None:
        w = w * param.col_signs.signs[None, :]
    return w


def _block_hadamard(param: RecurrentParam, v: np.ndarray) -> np.ndarray:
    """Apply I_q kron H_{2^k} (no signs, no scale) along the last axis."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != param.d_h:
        raise ValueError(f"expected last axis {param.d_h}, got {v.shape[-1]}")
    n = param.block
    blocks = v.reshape(*v.shape[:-1], param.q, n)
    if param.k >= _FWHT_MIN_K:
        out = fwht(blocks)
    else:
        out = blocks @ sylvester(param.k).astype(np.float64)  # H is symmetric
    return out.reshape(v.shape)


def apply_w(param: RecurrentParam, v: np.ndarray) -> np.ndarray:
    """Matrix-free product materialize(param) @ v along the last axis of v."""
    if param.col_signs is not None:
        v = v * param.col_signs.signs
    out = _block_hadamard(param, v)
    return param.scale * param.row_signs.signs * out


def apply_w_transpose(param: RecurrentParam, v: np.ndarray) -> np.ndarray:
    """Matrix-free product materialize(param).T @ v along the last axis of v.

    Uses that Sylvester matrices are symmetric, so
    W.T = scale * [diag(col)] (I_q kron H) diag(row).
    """
    out = _block_hadamard(param, v * param.row_signs.signs)
    if param.col_signs is not None:
        out = out * param.col_signs.signs
    return param.scale * out
