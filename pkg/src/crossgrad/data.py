"""Datasets, agent partitions and minibatch streams.

Sources: a synthetic Gaussian-blob generator, the IDX image format, and
label-first CSV.  All loaders produce float64 features scaled to [0, 1]
and integer class labels.  Partitions split sample indices across
agents either uniformly at random ("iid") or by label ("by_class", the
pathological split where agents disagree maximally).
"""

import struct
from dataclasses import dataclass

import numpy as np

from .neural import Batch
from .seeding import make_rng

PARTITION_MODES = ("iid", "by_class")


class DataError(ValueError):
    """Malformed dataset input."""


class IdxFormatError(DataError):
    """IDX file violates the format."""


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


class PartitionError(DataError):
    """Partition request cannot be satisfied."""


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray   # (n, dim) float64 in [0, 1]
    labels: np.ndarray   # (n,) int64 in [0, n_classes)
    n_classes: int

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] < 1:
            raise DataError(f"inputs must be a nonempty 2-D array, got shape {x.shape}")
        if not np.isfinite(x).all():
            raise DataError("inputs contain non-finite values")
        if x.min() < 0.0 or x.max() > 1.0:
            raise DataError("inputs must be scaled to [0, 1]")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise DataError(f"labels shape {y.shape} does not match {x.shape[0]} samples")
        if not np.issubdtype(y.dtype, np.integer):
            raise DataError(f"labels must be integers, got dtype {y.dtype}")
        if self.n_classes < 2:
            raise DataError(f"need at least 2 classes, got {self.n_classes}")
        if x.shape[0] < self.n_classes:
            raise DataError(
                f"{x.shape[0]} samples cannot cover {self.n_classes} classes")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise DataError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y.astype(np.int64))

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


@dataclass(frozen=True)
class Partition:
    """Disjoint index sets, one per agent, covering the dataset exactly."""

    mode: str
    assignments: tuple  # tuple of 1-D int64 arrays, ascending

    @property
    def n_agents(self) -> int:
        return len(self.assignments)

    def sizes(self) -> list[int]:
        return [len(a) for a in self.assignments]


def synth_blobs(n_classes: int, dim: int, per_class: int,
                spread: float = 0.1, seed: int = 0) -> Dataset:
    """Isotropic Gaussian blobs with unit-separated means inside [0, 1]^dim.

    Class c is centred at base + e_c / sqrt(2) where base fills every
    coordinate with (1 - 1/sqrt(2)) / 2, so any two means are exactly
    distance 1 apart.  Samples are clipped to the unit box.
    """
    if n_classes < 2:
        raise DataError(f"need at least 2 classes, got {n_classes}")
    if dim < n_classes:
        raise DataError(
            f"blob construction needs dim >= n_classes, got dim={dim} classes={n_classes}")
    if per_class < 1:
        raise DataError(f"per_class must be positive, got {per_class}")
    if spread < 0.0:
        raise DataError(f"spread must be nonnegative, got {spread}")
    base = (1.0 - 1.0 / np.sqrt(2.0)) / 2.0
    rng = make_rng(seed)
    blocks = []
    for c in range(n_classes):
        mean = np.full(dim, base)
        mean[c] += 1.0 / np.sqrt(2.0)
        blocks.append(mean + spread * rng.standard_normal((per_class, dim)))
    inputs = np.clip(np.concatenate(blocks), 0.0, 1.0)
    labels = np.repeat(np.arange(n_classes), per_class)
    return Dataset(inputs=inputs, labels=labels, n_classes=n_classes)


def _read_idx_header(raw: bytes, path, magic_want: int, n_dims: int):
    head = 4 * (1 + n_dims)
    if len(raw) < head:
        raise IdxTruncatedError(f"{path}: too short for an IDX header")
    fields = struct.unpack_from(f">{1 + n_dims}I", raw)
    if fields[0] != magic_want:
        raise IdxMagicError(
            f"{path}: magic 0x{fields[0]:08x}, expected 0x{magic_want:08x}")
    return fields[1:], raw[head:]


def load_idx(images_path, labels_path, n_classes: int | None = None) -> Dataset:
    """Read an IDX image/label file pair (the MNIST container format)."""
    with open(images_path, "rb") as fh:
        img_raw = fh.read()
    with open(labels_path, "rb") as fh:
        lab_raw = fh.read()

    (n_img, rows, cols), img_body = _read_idx_header(img_raw, images_path, 0x803, 3)
    (n_lab,), lab_body = _read_idx_header(lab_raw, labels_path, 0x801, 1)

    if len(img_body) < n_img * rows * cols:
        raise IdxTruncatedError(
            f"{images_path}: payload {len(img_body)} bytes, "
            f"header promises {n_img * rows * cols}")
    if len(lab_body) < n_lab:
        raise IdxTruncatedError(
            f"{labels_path}: payload {len(lab_body)} bytes, header promises {n_lab}")
    if n_img != n_lab:
        raise IdxCountMismatchError(
            f"{n_img} images in {images_path} but {n_lab} labels in {labels_path}")

    pixels = np.frombuffer(img_body[:n_img * rows * cols], dtype=np.uint8)
    inputs = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lab_body[:n_lab], dtype=np.uint8).astype(np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if n_lab else 0
    return Dataset(inputs=inputs, labels=labels, n_classes=n_classes)


def load_csv(path, n_classes: int | None = None) -> Dataset:
    """Read label-first CSV and min-max scale each feature to [0, 1]."""
    try:
        table = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as err:
        raise DataError(f"{path}: {err}") from err
    if table.shape[0] < 1 or table.shape[1] < 2:
        raise DataError(f"{path}: need rows of [label, feature...], got shape {table.shape}")
    raw_labels = table[:, 0]
    if not np.isfinite(table).all():
        raise DataError(f"{path}: non-finite values")
    if (raw_labels != np.round(raw_labels)).any() or raw_labels.min() < 0:
        raise DataError(f"{path}: labels must be nonnegative integers")
    labels = raw_labels.astype(np.int64)

    feats = table[:, 1:]
    lo = feats.min(axis=0)
    span = feats.max(axis=0) - lo
    span[span == 0.0] = 1.0  # constant columns map to 0
    inputs = (feats - lo) / span
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    return Dataset(inputs=inputs, labels=labels, n_classes=n_classes)


def partition(data: Dataset, n_agents: int, mode: str, seed: int = 0) -> Partition:
    """Split sample indices across agents.

    iid: a seeded shuffle dealt round-robin, so sizes differ by at most
    one.
    by_class: with n_agents <= n_classes each agent takes a contiguous
    band of classes; with more agents than classes each class's samples
    are shuffled and split as evenly as possible over the agents
    assigned to it (agent i serves class i mod n_classes).
    """
    if mode not in PARTITION_MODES:
        raise PartitionError(f"unknown partition mode {mode!r}, expected one of {PARTITION_MODES}")
    if n_agents < 1:
        raise PartitionError(f"n_agents must be positive, got {n_agents}")
    if n_agents > data.n_samples:
        raise PartitionError(
            f"cannot give {n_agents} agents at least one of {data.n_samples} samples")

    rng = make_rng(seed)
    n, c = data.n_samples, data.n_classes
    if mode == "iid":
        perm = rng.permutation(n)
        parts = [np.sort(perm[i::n_agents]) for i in range(n_agents)]
    elif n_agents <= c:
        bounds = [(i * c) // n_agents for i in range(n_agents + 1)]
        parts = []
        for i in range(n_agents):
            mask = (data.labels >= bounds[i]) & (data.labels < bounds[i + 1])
            parts.append(np.flatnonzero(mask))
    else:
        parts = [[] for _ in range(n_agents)]
        for cls in range(c):
            takers = [i for i in range(n_agents) if i % c == cls]
            idx = np.flatnonzero(data.labels == cls)
            shuffled = idx[rng.permutation(len(idx))]
            for taker, chunk in zip(takers, np.array_split(shuffled, len(takers))):
                parts[taker] = np.sort(chunk)

    parts = [np.asarray(p, dtype=np.int64) for p in parts]
    for i, p in enumerate(parts):
        if len(p) == 0:
            raise PartitionError(f"agent {i} received no samples (mode={mode})")
    return Partition(mode=mode, assignments=tuple(parts))


def minibatches(data: Dataset, indices: np.ndarray, batch_size: int,
                epoch: int, seed: int) -> list[Batch]:
    """One epoch of batches over the given indices, freshly shuffled.

    The shuffle is keyed by (seed, epoch) only, so the stream is
    reproducible without replaying earlier epochs.  A final short batch
    is kept.
    """
    if batch_size < 1:
        raise DataError(f"batch_size must be positive, got {batch_size}")
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 1 or len(indices) == 0:
        raise DataError("indices must be a nonempty 1-D array")
    order = indices[make_rng(seed, epoch).permutation(len(indices))]
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        batches.append(Batch(inputs=data.inputs[chunk], labels=data.labels[chunk]))
    return batches


def batch_of(data: Dataset, indices: np.ndarray) -> Batch:
    """The given samples as a single batch, in index order."""
    indices = np.asarray(indices, dtype=np.int64)
    return Batch(inputs=data.inputs[indices], labels=data.labels[indices])
