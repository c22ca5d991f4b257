"""Datasets: IDX and CSV ingestion, synthetic generators with known
structure, deterministic splits and batch schedules, and the binary
teacher-feature cache.

Every loader and generator is a deterministic function of its inputs and
seed.  Datasets remember the original row index of each example
(``source_indices``) so batches of a train split can be aligned with
feature-cache rows extracted over the full dataset.
"""

from __future__ import annotations

import csv as _csv
import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagic,
    BatchTooSmall,
    ConfigError,
    CorruptFile,
    CountMismatch,
    FeatPriorError,
    FingerprintMismatch,
    LabelOutOfRange,
    NonNumericCell,
    RaggedRows,
    TruncatedFile,
    UnknownLabelColumn,
)

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801

_CACHE_MAGIC = b"FPFC"
_CACHE_VERSION = 1


@dataclass(frozen=True)
class Dataset:
    """Inputs (n x d), integer class labels, and bookkeeping."""

    inputs: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = "dataset"
    source_indices: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise FeatPriorError(f"inputs must be n x d with n >= 1, got {inputs.shape}")
        if labels.shape != (inputs.shape[0],):
            raise FeatPriorError("labels must be one per input row")
        if not np.isfinite(inputs).all():
            raise FeatPriorError("inputs contain non-finite values")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise LabelOutOfRange(
                f"labels must lie in [0, {self.class_count})"
            )
        if self.source_indices is None:
            object.__setattr__(self, "source_indices",
                               np.arange(inputs.shape[0], dtype=np.int64))
        else:
            object.__setattr__(self, "source_indices",
                               np.asarray(self.source_indices, dtype=np.int64))

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, rows, name: str | None = None) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            inputs=self.inputs[rows],
            labels=self.labels[rows],
            class_count=self.class_count,
            name=name or self.name,
            source_indices=self.source_indices[rows],
        )


def dataset_fingerprint(dataset: Dataset) -> bytes:
    """32-byte content hash over raw input bytes, labels and class count."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(dataset.inputs).tobytes())
    h.update(np.ascontiguousarray(dataset.labels).tobytes())
    h.update(struct.pack("<q", dataset.class_count))
    return h.digest()


# -- loaders -----------------------------------------------------------------

def _read_idx_header(data: bytes, expected_magic: int, path) -> tuple[int, tuple]:
    if len(data) < 4:
        raise TruncatedFile(f"{path}: too short for an IDX header")
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic != expected_magic:
        raise BadMagic(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    if len(data) < 4 + 4 * ndim:
        raise TruncatedFile(f"{path}: truncated dimension list")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    return 4 + 4 * ndim, dims


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label pair (big-endian, ubyte pixels).

    Pixels are scaled by 1/255 into [0, 1] and images flattened row-major.
    """
    with open(images_path, "rb") as fh:
        img_data = fh.read()
    with open(labels_path, "rb") as fh:
        lab_data = fh.read()

    offset, dims = _read_idx_header(img_data, _IDX_IMAGES_MAGIC, images_path)
    count, rows, cols = dims
    need = count * rows * cols
    if len(img_data) - offset < need:
        raise TruncatedFile(f"{images_path}: expected {need} pixel bytes")
    pixels = np.frombuffer(img_data, dtype=np.uint8, count=need, offset=offset)
    inputs = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0

    offset, dims = _read_idx_header(lab_data, _IDX_LABELS_MAGIC, labels_path)
    (lab_count,) = dims
    if lab_count != count:
        raise CountMismatch(f"{count} images but {lab_count} labels")
    if len(lab_data) - offset < lab_count:
        raise TruncatedFile(f"{labels_path}: expected {lab_count} label bytes")
    labels = np.frombuffer(lab_data, dtype=np.uint8, count=lab_count,
                           offset=offset).astype(np.int64)

    class_count = int(labels.max()) + 1 if labels.size else 1
    return Dataset(inputs=inputs, labels=labels, class_count=class_count,
                   name=str(images_path))


def load_csv(path, label_column: str) -> Dataset:
    """Rectangular numeric CSV with a header row; one column holds integer
    class labels, the rest become features in header order."""
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TruncatedFile(f"{path}: empty file") from None
        if label_column not in header:
            raise UnknownLabelColumn(
                f"{path}: no column {label_column!r} in header {header}"
            )
        label_idx = header.index(label_column)
        features, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise RaggedRows(
                    f"{path}:{lineno}: {len(row)} cells, header has {len(header)}"
                )
            parsed = []
            for name, cell in zip(header, row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise NonNumericCell(
                        f"{path}:{lineno}: cell {cell!r} in column {name!r}"
                    ) from None
            raw_label = parsed.pop(label_idx)
            if not float(raw_label).is_integer():
                raise NonNumericCell(
                    f"{path}:{lineno}: label {raw_label!r} is not an integer"
                )
            labels.append(int(raw_label))
            features.append(parsed)
    labels_arr = np.asarray(labels, dtype=np.int64)
    if labels_arr.size and labels_arr.min() < 0:
        raise LabelOutOfRange(f"{path}: negative class label")
    class_count = int(labels_arr.max()) + 1 if labels_arr.size else 1
    return Dataset(inputs=np.asarray(features, dtype=np.float64),
                   labels=labels_arr, class_count=class_count, name=str(path))


# -- synthetic generators ----------------------------------------------------

def synth_blobs(n_per_class: int, classes: int, dim: int, separation: float,
                seed: int) -> Dataset:
    """Unit-variance Gaussian clusters at mutually separated centers.

    Centers sit on a circle in the first two dimensions (a line for
    dim=1) with adjacent centers ``separation`` apart, so the Bayes
    accuracy is controlled by ``separation``.
    """
    if not separation > 0:
        raise ConfigError(f"separation must be > 0, got {separation}")
    rng = np.random.default_rng(seed)
    centers = np.zeros((classes, dim))
    if dim == 1 or classes == 1:
        centers[:, 0] = separation * np.arange(classes)
    else:
        radius = separation / (2.0 * np.sin(np.pi / classes))
        angles = 2.0 * np.pi * np.arange(classes) / classes
        centers[:, 0] = radius * np.cos(angles)
        centers[:, 1] = radius * np.sin(angles)
    inputs = np.vstack([
        centers[k] + rng.standard_normal((n_per_class, dim))
        for k in range(classes)
    ])
    labels = np.repeat(np.arange(classes, dtype=np.int64), n_per_class)
    return Dataset(inputs=inputs, labels=labels, class_count=classes,
                   name=f"blobs{classes}x{n_per_class}")


def synth_rings(n_per_class: int, classes: int, noise: float,
                seed: int) -> Dataset:
    """Concentric 2-D rings (radius k+1 for class k) with Gaussian radial
    noise; linearly inseparable by construction."""
    if noise < 0:
        raise ConfigError(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    points = []
    for k in range(classes):
        angles = rng.uniform(0.0, 2.0 * np.pi, size=n_per_class)
        radii = (k + 1.0) + noise * rng.standard_normal(n_per_class)
        points.append(np.column_stack((radii * np.cos(angles),
                                       radii * np.sin(angles))))
    inputs = np.vstack(points)
    labels = np.repeat(np.arange(classes, dtype=np.int64), n_per_class)
    return Dataset(inputs=inputs, labels=labels, class_count=classes,
                   name=f"rings{classes}x{n_per_class}")


# -- splitting and batching --------------------------------------------------

class BatchSchedule:
    """Deterministic per-epoch batches of original dataset indices.

    Each epoch reshuffles with a generator seeded by (seed, epoch), chops
    into ``batch_size`` pieces, and keeps the tail so every epoch is a
    partition of the underlying indices.
    """

    def __init__(self, indices, batch_size: int, seed: int):
        if batch_size < 2:
            raise BatchTooSmall(
                f"batch size {batch_size} < 2: Gram matrix would be degenerate"
            )
        self.indices = np.asarray(indices, dtype=np.int64)
        self.batch_size = int(batch_size)
        self.seed = int(seed)

    def epoch_batches(self, epoch: int) -> list[np.ndarray]:
        rng = np.random.default_rng([self.seed, int(epoch)])
        perm = self.indices[rng.permutation(self.indices.size)]
        return [perm[i:i + self.batch_size]
                for i in range(0, perm.size, self.batch_size)]


@dataclass(frozen=True)
class SplitBatches:
    train: Dataset
    test: Dataset
    schedule: BatchSchedule


def split_and_batch(dataset: Dataset, test_fraction: float, batch_size: int,
                    seed: int) -> SplitBatches:
    """Shuffled train/test partition plus the train batch schedule."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = dataset.n
    n_test = int(round(n * test_fraction))
    n_test = min(max(n_test, 1), n - 1)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    test_rows = np.sort(perm[:n_test])
    train_rows = np.sort(perm[n_test:])
    train = dataset.subset(train_rows, name=f"{dataset.name}/train")
    test = dataset.subset(test_rows, name=f"{dataset.name}/test")
    schedule = BatchSchedule(train.source_indices, batch_size, seed)
    return SplitBatches(train=train, test=test, schedule=schedule)


# -- feature cache -----------------------------------------------------------

@dataclass(frozen=True)
class FeatureCache:
    """Per-group teacher feature matrices (float32, n rows each) bound to
    a dataset and teacher by content hashes."""

    groups: dict[int, np.ndarray]
    dataset_fingerprint: bytes
    teacher_fingerprint: bytes

    def __post_init__(self):
        sizes = {m.shape[0] for m in self.groups.values()}
        if len(sizes) > 1:
            raise FeatPriorError(f"cache groups disagree on row count: {sizes}")

    @property
    def n(self) -> int:
        return next(iter(self.groups.values())).shape[0] if self.groups else 0


def serialize_cache(cache: FeatureCache) -> bytes:
    chunks = [
        _CACHE_MAGIC,
        struct.pack("<I", _CACHE_VERSION),
        cache.dataset_fingerprint,
        cache.teacher_fingerprint,
        struct.pack("<I", len(cache.groups)),
    ]
    for gid in sorted(cache.groups):
        mat = cache.groups[gid]
        chunks.append(struct.pack("<IQI", gid, mat.shape[0], mat.shape[1]))
        chunks.append(np.ascontiguousarray(mat, dtype="<f4").tobytes())
    return b"".join(chunks)


def write_cache(path, cache: FeatureCache) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_cache(cache))


def read_cache(path, expect_dataset: Dataset | None = None,
               expect_teacher_fingerprint: bytes | None = None) -> FeatureCache:
    """Read an FPFC file, optionally verifying it matches the dataset and
    teacher the caller is about to use."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _CACHE_MAGIC:
        raise BadMagic(f"{path}: bad cache magic; expected FPFC")
    if len(data) < 4 + 4 + 32 + 32 + 4:
        raise CorruptFile(f"{path}: truncated cache header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != _CACHE_VERSION:
        raise CorruptFile(f"{path}: unsupported cache version {version}")
    ds_fp = data[8:40]
    teacher_fp = data[40:72]
    (group_count,) = struct.unpack_from("<I", data, 72)
    offset = 76
    groups: dict[int, np.ndarray] = {}
    for _ in range(group_count):
        if offset + 16 > len(data):
            raise CorruptFile(f"{path}: truncated group header")
        gid, n, width = struct.unpack_from("<IQI", data, offset)
        offset += 16
        need = 4 * n * width
        if offset + need > len(data):
            raise CorruptFile(f"{path}: truncated group payload")
        mat = np.frombuffer(data, dtype="<f4", count=n * width,
                            offset=offset).reshape(n, width).copy()
        offset += need
        groups[int(gid)] = mat
    if offset != len(data):
        raise CorruptFile(f"{path}: trailing bytes after cache payload")
    cache = FeatureCache(groups=groups, dataset_fingerprint=ds_fp,
                         teacher_fingerprint=teacher_fp)
    if expect_dataset is not None:
        verify_cache(cache, expect_dataset, expect_teacher_fingerprint)
    elif expect_teacher_fingerprint is not None:
        verify_cache(cache, None, expect_teacher_fingerprint)
    return cache


def verify_cache(cache: FeatureCache, dataset: Dataset | None,
                 teacher_fingerprint: bytes | None = None) -> None:
    if dataset is not None:
        if cache.dataset_fingerprint != dataset_fingerprint(dataset):
            raise FingerprintMismatch(
                "cache was built from a different dataset"
            )
    if teacher_fingerprint is not None:
        if cache.teacher_fingerprint != teacher_fingerprint:
            raise FingerprintMismatch("cache was built from a different teacher")
