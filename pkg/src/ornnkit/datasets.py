"""Synthetic copy-task generator, IDX-format MNIST loading, batch iteration."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

COPY_ALPHABET = 10   # a_0 (blank) .. a_9 (marker)
COPY_SYMBOLS = 8     # sentence symbols a_1 .. a_8
COPY_CLASSES = 9     # output classes: blank + 8 symbols

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SequenceDataset:
    """Equal-length labeled sequences.

    targets: (N, T) class indices for many-to-many tasks, (N,) for
    many-to-one tasks.
    """

    inputs: np.ndarray   # (N, T, d_in) float64
    targets: np.ndarray  # (N, T) or (N,) int64

    def __post_init__(self):
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DataError("inputs/targets length mismatch")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx: np.ndarray) -> "SequenceDataset":
        return SequenceDataset(self.inputs[idx], self.targets[idx])


@dataclass(frozen=True)
class CopySpec:
    """Copy task: K-symbol sentence, L-step delay, fixed 10-symbol alphabet."""

    K: int
    L: int
    n_train: int = 50_000
    n_val: int = 2_000
    n_test: int = 2_000
    seed: int = 0

    def __post_init__(self):
        if self.K < 1 or self.L < 0:
            raise DataError("need K >= 1 and L >= 0")

    @property
    def T(self) -> int:
        return self.L + 2 * self.K

    def naive_baseline(self) -> float:
        """Cross-entropy of always predicting blank then uniform symbols:
        K * ln(8) / (L + 2K)."""
        return self.K * np.log(COPY_SYMBOLS) / self.T


def _gen_copy_split(spec: CopySpec, count: int, rng: np.random.Generator
                    ) -> SequenceDataset:
    steps = spec.T
    sentences = rng.integers(1, COPY_SYMBOLS + 1, size=(count, spec.K))

    symbols = np.zeros((count, steps), dtype=np.int64)  # input symbol ids
    symbols[:, :spec.K] = sentences
    symbols[:, spec.K + spec.L] = COPY_ALPHABET - 1     # marker a_9

    inputs = np.zeros((count, steps, COPY_ALPHABET))
    rows = np.arange(count)[:, None]
    cols = np.arange(steps)[None, :]
    inputs[rows, cols, symbols] = 1.0

    targets = np.zeros((count, steps), dtype=np.int64)  # blank = class 0
    targets[:, spec.L + spec.K:] = sentences
    return SequenceDataset(inputs, targets)


def gen_copy(spec: CopySpec) -> tuple[SequenceDataset, SequenceDataset, SequenceDataset]:
    """Generate (train, val, test) copy-task splits, deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    return (_gen_copy_split(spec, spec.n_train, rng),
            _gen_copy_split(spec, spec.n_val, rng),
            _gen_copy_split(spec, spec.n_test, rng))


@dataclass(frozen=True)
class MnistSpec:
    """Pixel-sequence MNIST: images/labels IDX files, optional fixed permutation."""

    images_path: str
    labels_path: str
    mode: str = "sequential"  # "sequential" | "permuted"
    permutation_seed: int = 92916
    subset: int | None = None

    def __post_init__(self):
        if self.mode not in ("sequential", "permuted"):
            raise DataError(f"unknown mode {self.mode!r}")


def read_idx_images(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise DataError(f"{path}: truncated IDX header")
    magic, count, rows, cols = struct.unpack(">iiii", data[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataError(f"{path}: bad magic {magic:#x} for IDX images")
    pixels = np.frombuffer(data, dtype=np.uint8, offset=16)
    if pixels.size != count * rows * cols:
        raise DataError(f"{path}: payload size mismatch")
    return pixels.reshape(count, rows, cols)


def read_idx_labels(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise DataError(f"{path}: truncated IDX header")
    magic, count = struct.unpack(">ii", data[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataError(f"{path}: bad magic {magic:#x} for IDX labels")
    labels = np.frombuffer(data, dtype=np.uint8, offset=8)
    if labels.size != count:
        raise DataError(f"{path}: payload size mismatch")
    if labels.max(initial=0) > 9:
        raise DataError(f"{path}: label out of range [0, 9]")
    return labels.astype(np.int64)


def mnist_permutation(seed: int, length: int = 784) -> np.ndarray:
    """The fixed pixel permutation used in permuted mode."""
    return np.random.default_rng(seed).permutation(length)


def load_mnist(spec: MnistSpec) -> SequenceDataset:
    """Row-major pixel serialization to (N, T, 1) sequences normalized to [0, 1]."""
    images = read_idx_images(spec.images_path)
    labels = read_idx_labels(spec.labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataError("image/label count mismatch")
    seq = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    if spec.mode == "permuted":
        seq = seq[:, mnist_permutation(spec.permutation_seed, seq.shape[1])]
    if spec.subset is not None:
        seq = seq[:spec.subset]
        labels = labels[:spec.subset]
    return SequenceDataset(seq[:, :, None], labels)


def split_train_val(full: SequenceDataset, n_val: int) -> tuple[SequenceDataset, SequenceDataset]:
    """Hold out the last n_val samples for validation (50k/10k on full MNIST)."""
    n = len(full) - n_val
    if n <= 0:
        raise DataError("validation split larger than dataset")
    return full.subset(np.arange(n)), full.subset(np.arange(n, len(full)))


CACHE_MAGIC = b"ODSC"
CACHE_VERSION = 1


def _spec_hash(spec: CopySpec) -> bytes:
    import hashlib
    return hashlib.sha256(repr(spec).encode()).digest()


def save_copy_cache(path: str | Path, spec: CopySpec,
                    splits: tuple[SequenceDataset, ...]) -> None:
    """Length-prefixed binary cache: magic, version, spec hash, then per split
    the inputs (float64) and targets (int64) with shape prefixes."""
    chunks = [CACHE_MAGIC, struct.pack("<I", CACHE_VERSION), _spec_hash(spec)]
    for split in splits:
        for arr, dtype in ((split.inputs, "<f8"), (split.targets, "<i8")):
            raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
            shape = arr.shape
            chunks.append(struct.pack("<B", len(shape)))
            chunks.append(struct.pack(f"<{len(shape)}q", *shape))
            chunks.append(struct.pack("<Q", len(raw)))
            chunks.append(raw)
    Path(path).write_bytes(b"".join(chunks))


def load_copy_cache(path: str | Path, spec: CopySpec
                    ) -> tuple[SequenceDataset, SequenceDataset, SequenceDataset]:
    data = Path(path).read_bytes()
    if data[:4] != CACHE_MAGIC:
        raise DataError(f"{path}: bad cache magic")
    version, = struct.unpack("<I", data[4:8])
    if version != CACHE_VERSION:
        raise DataError(f"{path}: unsupported cache version {version}")
    if data[8:40] != _spec_hash(spec):
        raise DataError(f"{path}: cache does not match the requested spec")
    pos = 40
    arrays = []
    for _ in range(6):
        ndim = data[pos]
        pos += 1
        shape = struct.unpack(f"<{ndim}q", data[pos:pos + 8 * ndim])
        pos += 8 * ndim
        size, = struct.unpack("<Q", data[pos:pos + 8])
        pos += 8
        dtype = "<f8" if len(arrays) % 2 == 0 else "<i8"
        arrays.append(np.frombuffer(data[pos:pos + size], dtype=dtype)
                      .reshape(shape).copy())
        pos += size
    if pos != len(data):
        raise DataError(f"{path}: trailing bytes in cache")
    return tuple(SequenceDataset(arrays[i], arrays[i + 1].astype(np.int64))
                 for i in (0, 2, 4))


def batch_iter(dataset: SequenceDataset, batch_size: int, epoch_seed: int):
    """Deterministic per-epoch shuffle; the last partial batch is kept."""
    order = np.random.default_rng(epoch_seed).permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield dataset.inputs[idx], dataset.targets[idx]
