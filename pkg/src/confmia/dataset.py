"""Synthetic Gaussian-mixture datasets and the ``DSET`` file format.

File layout (all little-endian)::

    "DSET" | version u32 = 1 | M u64 | d u64 | C u64
    | M*d features f64 (row-major) | M labels u32
"""

from dataclasses import dataclass

import numpy as np

from . import binio
from .errors import FormatError, ValidationError
from .rng import generator

MAGIC = b"DSET"
VERSION = 1


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if f.ndim != 2:
            raise ValidationError(f"features must be a matrix, got shape {f.shape}")
        if y.ndim != 1 or y.shape[0] != f.shape[0]:
            raise ValidationError(
                f"labels shape {y.shape} does not match {f.shape[0]} feature rows")
        if self.num_classes < 1:
            raise ValidationError("num_classes must be positive")
        if not np.all(np.isfinite(f)):
            raise ValidationError("features contain non-finite values")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValidationError(f"labels must lie in [0, {self.num_classes})")
        f.setflags(write=False)
        y = y.astype(np.int64)
        y.setflags(write=False)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)

    @property
    def num_examples(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def ids(self):
        return np.arange(self.num_examples)

    def subset(self, index):
        return Dataset(self.features[index], self.labels[index], self.num_classes)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.num_classes == other.num_classes
                and self.features.shape == other.features.shape
                and np.array_equal(self.labels, other.labels)
                and self.features.tobytes() == other.features.tobytes())


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int
    dim: int
    per_class_count: int
    cluster_spread: float = 1.0
    class_center_scale: float = 3.0
    seed: int = 0

    def validate(self):
        if self.num_classes < 1:
            raise ValidationError("num_classes must be >= 1")
        if self.dim < 1:
            raise ValidationError("dim must be >= 1")
        if self.per_class_count < 1:
            raise ValidationError("per_class_count must be >= 1")
        if not self.cluster_spread > 0:
            raise ValidationError("cluster_spread must be > 0")
        if not self.class_center_scale > 0:
            raise ValidationError("class_center_scale must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")


def generate_synthetic(spec):
    """Draw ``per_class_count`` points per class around seeded class centers.

    Each center is a standard-normal direction rescaled to norm
    ``class_center_scale``; points add isotropic noise with standard deviation
    ``cluster_spread``. Rows are ordered class by class.
    """
    spec.validate()
    rng = generator(spec.seed)
    directions = rng.standard_normal((spec.num_classes, spec.dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    centers = directions / norms * spec.class_center_scale
    noise = rng.standard_normal((spec.num_classes, spec.per_class_count, spec.dim))
    features = centers[:, None, :] + spec.cluster_spread * noise
    labels = np.repeat(np.arange(spec.num_classes), spec.per_class_count)
    return Dataset(features.reshape(-1, spec.dim), labels, spec.num_classes)


def dataset_to_bytes(ds):
    head = (MAGIC + binio.U32.pack(VERSION) + binio.U64.pack(ds.num_examples)
            + binio.U64.pack(ds.dim) + binio.U64.pack(ds.num_classes))
    labels = np.ascontiguousarray(ds.labels, dtype="<u4").tobytes()
    return head + binio.f64le(ds.features) + labels


def dataset_from_bytes(data, path=None):
    r = binio.Reader(data, path)
    r.magic(MAGIC)
    r.version(VERSION)
    m = r.u64("M")
    d = r.u64("d")
    c_off = r.pos
    c = r.u64("C")
    if c < 1:
        r.fail("num_classes must be >= 1", c_off)
    if m * (d * 8 + 4) != len(data) - r.pos:
        r.fail(f"payload size mismatch for M={m}, d={d}: expected "
               f"{m * (d * 8 + 4)} bytes, found {len(data) - r.pos}")
    feat_off = r.pos
    features = r.array("<f8", m * d, "features").reshape(m, d)
    bad = np.flatnonzero(~np.isfinite(features.ravel()))
    if bad.size:
        r.fail("non-finite feature value", feat_off + 8 * int(bad[0]))
    label_off = r.pos
    labels = r.array("<u4", m, "labels")
    bad = np.flatnonzero(labels >= c)
    if bad.size:
        k = int(bad[0])
        r.fail(f"label {int(labels[k])} out of range for {c} classes",
               label_off + 4 * k)
    r.finish()
    return Dataset(features, labels.astype(np.int64), int(c))


def save_dataset(ds, path):
    binio.write_atomic(path, dataset_to_bytes(ds))


def load_dataset(path):
    r = binio.read_file(path)
    return dataset_from_bytes(r.data, r.path)


__all__ = ["Dataset", "SynthSpec", "FormatError", "generate_synthetic",
           "save_dataset", "load_dataset", "dataset_to_bytes", "dataset_from_bytes"]
