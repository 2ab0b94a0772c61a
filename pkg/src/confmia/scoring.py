"""Per-(model, example) confidence scores.

Five transforms of a softmax output ``p`` are supported:

==================  ================================  ===========
variant             value                             needs label
==================  ================================  ===========
baseline_logit_loss log(p_y / (1 - p_y)), clamped     yes
confidence          p_y                               yes
log_confidence      ln(p_y + 1e-45)                   yes
argmax              max_c p_c                         no
log_argmax          ln(max_c p_c + 1e-45)             no
==================  ================================  ===========

Score file (little-endian)::

    "SCOR" | version u32 = 1 | variant code u8 | N u64 | M u64 | N*M f64
"""

import enum
from dataclasses import dataclass

import numpy as np

from . import binio
from .errors import ValidationError

MAGIC = b"SCOR"
VERSION = 1
LOG_CLAMP = 1e-45
COMPLEMENT_CLAMP = 1e-12


class ScoreVariant(enum.Enum):
    BASELINE = (0, "baseline", "baseline_logit_loss")
    CONFIDENCE = (1, "conf", "confidence")
    LOG_CONFIDENCE = (2, "logconf", "log_confidence")
    ARGMAX = (3, "argmax", "argmax")
    LOG_ARGMAX = (4, "logargmax", "log_argmax")

    def __init__(self, code, cli_name, long_name):
        self.code = code
        self.cli_name = cli_name
        self.long_name = long_name

    @property
    def needs_labels(self):
        return self in (ScoreVariant.BASELINE, ScoreVariant.CONFIDENCE,
                        ScoreVariant.LOG_CONFIDENCE)

    @classmethod
    def parse(cls, name):
        for v in cls:
            if name in (v.cli_name, v.long_name, v.name.lower()):
                return v
        raise ValidationError(f"unknown score variant {name!r}; choose from "
                              + ", ".join(v.cli_name for v in cls))

    @classmethod
    def from_code(cls, code):
        for v in cls:
            if v.code == code:
                return v
        raise ValidationError(f"unknown score variant code {code}")


def _true_class_prob(probs, y):
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= y < probs.shape[-1]:
        raise ValidationError(f"class id {y} out of range for {probs.shape[-1]} classes")
    return float(probs[y])


def _logit(p):
    # clamping 1 - p directly keeps the upper clamp exactly 1e-12
    return (np.log(np.maximum(p, LOG_CLAMP))
            - np.log(np.maximum(1.0 - p, COMPLEMENT_CLAMP)))


def score_baseline(probs, y):
    return float(_logit(_true_class_prob(probs, y)))


def score_confidence(probs, y):
    return _true_class_prob(probs, y)


def score_log_confidence(probs, y):
    return float(np.log(_true_class_prob(probs, y) + LOG_CLAMP))


def score_argmax(probs):
    return float(np.max(probs))


def score_log_argmax(probs):
    return float(np.log(np.max(probs) + LOG_CLAMP))


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    scores: np.ndarray
    variant: ScoreVariant

    def __post_init__(self):
        s = np.array(self.scores, dtype=np.float64)
        if s.ndim != 2:
            raise ValidationError(f"score matrix must be N x M, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValidationError("score matrix contains non-finite values")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    @property
    def shape(self):
        return self.scores.shape

    def __eq__(self, other):
        return (isinstance(other, ScoreMatrix) and self.variant is other.variant
                and self.shape == other.shape
                and self.scores.tobytes() == other.scores.tobytes())


def transform(probs, labels, variant):
    """Vectorized score of an ``(..., M, C)`` probability array."""
    probs = np.asarray(probs, dtype=np.float64)
    if variant.needs_labels:
        labels = np.asarray(labels)
        p = np.take_along_axis(
            probs, np.broadcast_to(labels[:, None], probs.shape[:-1] + (1,)), axis=-1)[..., 0]
    else:
        p = probs.max(axis=-1)
    if variant is ScoreVariant.BASELINE:
        return _logit(p)
    if variant in (ScoreVariant.LOG_CONFIDENCE, ScoreVariant.LOG_ARGMAX):
        return np.log(p + LOG_CLAMP)
    return p


def score_matrix(pm, labels, variant):
    if isinstance(variant, str):
        variant = ScoreVariant.parse(variant)
    n, m, c = pm.shape
    if variant.needs_labels:
        if labels is None:
            raise ValidationError(
                f"score variant {variant.long_name!r} needs true labels (pass a dataset)")
        labels = np.asarray(labels)
        if labels.shape != (m,):
            raise ValidationError(f"expected {m} labels, got shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= c):
            raise ValidationError(f"labels must lie in [0, {c})")
    return ScoreMatrix(transform(pm.probs, labels, variant), variant)


def scores_to_bytes(sm):
    n, m = sm.shape
    return (MAGIC + binio.U32.pack(VERSION) + binio.U8.pack(sm.variant.code)
            + binio.U64.pack(n) + binio.U64.pack(m) + binio.f64le(sm.scores))


def scores_from_bytes(data, path=None):
    r = binio.Reader(data, path)
    r.magic(MAGIC)
    r.version(VERSION)
    code_off = r.pos
    code = r.u8("variant code")
    try:
        variant = ScoreVariant.from_code(code)
    except ValidationError as exc:
        r.fail(str(exc), code_off)
    n, m = r.u64("N"), r.u64("M")
    if n * m * 8 != len(data) - r.pos:
        r.fail(f"payload size mismatch for {n}x{m}: expected {n * m * 8} bytes, "
               f"found {len(data) - r.pos}")
    body_off = r.pos
    s = r.array("<f8", n * m, "scores")
    bad = np.flatnonzero(~np.isfinite(s))
    if bad.size:
        r.fail("non-finite score", body_off + 8 * int(bad[0]))
    r.finish()
    return ScoreMatrix(s.reshape(n, m), variant)


def save_scores(sm, path):
    binio.write_atomic(path, scores_to_bytes(sm))


def load_scores(path):
    r = binio.read_file(path)
    return scores_from_bytes(r.data, r.path)
