"""Balanced IN/OUT shadow ensembles and their prediction matrices.

Mask file (little-endian)::

    "MMSK" | version u32 = 1 | N u64 | M u64 | N*M bytes 0/1 (row-major)

Prediction file::

    "PMAT" | version u32 = 1 | N u64 | M u64 | C u64 | N*M*C f64 (row-major)
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import binio
from .errors import TrainingDivergenceError, ValidationError
from .model import Architecture, TrainConfig, logits, softmax, train
from .rng import STREAM_MODEL, derive_seed, generator

MASK_MAGIC = b"MMSK"
PRED_MAGIC = b"PMAT"
VERSION = 1


@dataclass(frozen=True, eq=False)
class MembershipMask:
    """``entries[i, j]`` is True when shadow model ``i`` trained on example ``j``."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.array(self.entries, dtype=bool)
        if e.ndim != 2:
            raise ValidationError(f"mask must be 2-D, got shape {e.shape}")
        if e.shape[0] < 2:
            raise ValidationError("mask needs at least two models")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def num_models(self):
        return self.entries.shape[0]

    @property
    def num_examples(self):
        return self.entries.shape[1]

    def is_balanced(self):
        n = self.num_models
        return n % 2 == 0 and bool(np.all(self.entries.sum(axis=0) == n // 2))

    def __eq__(self, other):
        return isinstance(other, MembershipMask) and np.array_equal(self.entries, other.entries)


@dataclass(frozen=True, eq=False)
class PredictionMatrix:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 3:
            raise ValidationError(f"prediction matrix must be N x M x C, got {p.shape}")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def shape(self):
        return self.probs.shape

    def validate(self, atol=1e-9):
        p = self.probs
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValidationError("prediction matrix has negative or non-finite entries")
        err = np.abs(p.sum(axis=2) - 1.0)
        if err.size and err.max() > atol:
            i, j = np.unravel_index(np.argmax(err), err.shape)
            raise ValidationError(f"probabilities for model {i}, example {j} do not sum to 1")

    def __eq__(self, other):
        return (isinstance(other, PredictionMatrix) and self.shape == other.shape
                and self.probs.tobytes() == other.probs.tobytes())


@dataclass(frozen=True)
class EnsembleConfig:
    arch: Architecture
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    num_models: int = 16
    master_seed: int = 0

    def validate(self):
        if self.num_models < 2 or self.num_models % 2:
            raise ValidationError("num_models must be even and >= 2")
        self.train_cfg.validate()

    def model_seed(self, index):
        return derive_seed(self.master_seed, STREAM_MODEL, index)


def build_mask(num_models, num_examples, seed):
    """Mark exactly ``num_models // 2`` uniformly chosen models IN for every example."""
    if num_models < 2 or num_models % 2:
        raise ValidationError(
            f"num_models must be even and >= 2 so each example is IN for exactly half "
            f"the models (got {num_models})")
    if num_examples < 1:
        raise ValidationError("num_examples must be >= 1")
    keys = generator(seed).random((num_examples, num_models))
    order = np.argsort(keys, axis=1, kind="stable")
    entries = np.zeros((num_models, num_examples), dtype=bool)
    cols = np.repeat(np.arange(num_examples), num_models // 2)
    entries[order[:, : num_models // 2].ravel(), cols] = True
    return MembershipMask(entries)


def _train_one(args):
    index, ds, arch, cfg = args
    try:
        return train(ds, arch, cfg)
    except TrainingDivergenceError as exc:
        raise exc.with_model(index) from None


def train_ensemble(ds, mask, cfg, jobs=1, indices=None):
    """Train model ``i`` on the examples where ``mask.entries[i]`` is set.

    Each model's seed is derived from ``(cfg.master_seed, i)`` only, so the
    result does not depend on ``jobs`` or on completion order. ``indices``
    restricts training to those models (returned in the given order).
    """
    cfg.validate()
    if mask.entries.shape != (cfg.num_models, ds.num_examples):
        raise ValidationError(
            f"mask shape {mask.entries.shape} does not match "
            f"({cfg.num_models} models, {ds.num_examples} examples)")
    tasks = [(i, ds.subset(mask.entries[i]), cfg.arch,
              replace(cfg.train_cfg, seed=cfg.model_seed(i)))
             for i in (range(cfg.num_models) if indices is None else indices)]
    if jobs <= 1 or len(tasks) <= 1:
        return [_train_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_train_one, tasks))


def _predict_one(args):
    model, X = args
    return softmax(logits(model, X))


def predict_matrix(models, ds, jobs=1):
    if not models:
        raise ValidationError("need at least one model")
    for i, m in enumerate(models):
        a = m.architecture
        if a.input_dim != ds.dim or a.num_classes != ds.num_classes:
            raise ValidationError(f"model {i} does not match the dataset's shape")
    tasks = [(m, ds.features) for m in models]
    if jobs <= 1:
        rows = [_predict_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_predict_one, tasks))
    return PredictionMatrix(np.stack(rows))


def mask_to_bytes(mask):
    n, m = mask.entries.shape
    return (MASK_MAGIC + binio.U32.pack(VERSION) + binio.U64.pack(n) + binio.U64.pack(m)
            + mask.entries.astype(np.uint8).tobytes())


def mask_from_bytes(data, path=None):
    r = binio.Reader(data, path)
    r.magic(MASK_MAGIC)
    r.version(VERSION)
    n_off = r.pos
    n = r.u64("N")
    m = r.u64("M")
    if n < 2:
        r.fail("mask needs at least two models", n_off)
    if n * m != len(data) - r.pos:
        r.fail(f"payload size mismatch: expected {n * m} bytes, found {len(data) - r.pos}")
    body_off = r.pos
    raw = r.array(np.uint8, n * m, "mask entries")
    bad = np.flatnonzero(raw > 1)
    if bad.size:
        r.fail(f"mask byte {int(raw[bad[0]])} is not 0/1", body_off + int(bad[0]))
    r.finish()
    return MembershipMask(raw.reshape(n, m).astype(bool))


def predictions_to_bytes(pm):
    n, m, c = pm.shape
    return (PRED_MAGIC + binio.U32.pack(VERSION) + binio.U64.pack(n) + binio.U64.pack(m)
            + binio.U64.pack(c) + binio.f64le(pm.probs))


def predictions_from_bytes(data, path=None):
    r = binio.Reader(data, path)
    r.magic(PRED_MAGIC)
    r.version(VERSION)
    n, m, c = r.u64("N"), r.u64("M"), r.u64("C")
    if n * m * c * 8 != len(data) - r.pos:
        r.fail(f"payload size mismatch for {n}x{m}x{c}: expected {n * m * c * 8} bytes, "
               f"found {len(data) - r.pos}")
    body_off = r.pos
    probs = r.array("<f8", n * m * c, "probabilities").reshape(n, m, c)
    bad = np.flatnonzero(~(np.isfinite(probs) & (probs >= 0)).ravel())
    if bad.size:
        r.fail("probability is negative or non-finite", body_off + 8 * int(bad[0]))
    r.finish()
    return PredictionMatrix(probs)


def save_mask(mask, path):
    binio.write_atomic(path, mask_to_bytes(mask))


def load_mask(path):
    r = binio.read_file(path)
    return mask_from_bytes(r.data, r.path)


def save_predictions(pm, path):
    binio.write_atomic(path, predictions_to_bytes(pm))


def load_predictions(path):
    r = binio.read_file(path)
    return predictions_from_bytes(r.data, r.path)
