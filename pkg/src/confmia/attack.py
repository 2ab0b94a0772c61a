"""Per-example Gaussian likelihood-ratio attacks over shadow scores.

Every shadow model takes a turn as the target. For target ``t`` and example
``j`` the IN and OUT Gaussians are fitted on the other models' scores at
``j``; cell ``(t, j)`` never contributes to its own fit. The pooled result has
one score per cell in row-major ``(t, j)`` order.

Attack result file (little-endian)::

    "ATTK" | version u32 = 1 | attack code u8 | score code u8 | L u64
    | L f64 scores | L truth bytes 0/1
"""

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import binio
from .errors import ValidationError
from .scoring import ScoreVariant

MAGIC = b"ATTK"
VERSION = 1
VARIANCE_FLOOR = 1e-12
_LOG_2PI = math.log(2.0 * math.pi)


class AttackVariant(enum.Enum):
    ONLINE = (0, "online", "online")
    ONLINE_FV = (1, "online-fv", "online_fixed_variance")
    OFFLINE = (2, "offline", "offline")
    OFFLINE_FV = (3, "offline-fv", "offline_fixed_variance")
    GLOBAL = (4, "global", "global_threshold")

    def __init__(self, code, cli_name, long_name):
        self.code = code
        self.cli_name = cli_name
        self.long_name = long_name

    @property
    def fixed_variance(self):
        return self in (AttackVariant.ONLINE_FV, AttackVariant.OFFLINE_FV)

    @property
    def uses_in(self):
        return self in (AttackVariant.ONLINE, AttackVariant.ONLINE_FV)

    @classmethod
    def parse(cls, name):
        for v in cls:
            if name in (v.cli_name, v.long_name, v.name.lower()):
                return v
        raise ValidationError(f"unknown attack variant {name!r}; choose from "
                              + ", ".join(v.cli_name for v in cls))

    @classmethod
    def from_code(cls, code):
        for v in cls:
            if v.code == code:
                return v
        raise ValidationError(f"unknown attack variant code {code}")


@dataclass(frozen=True)
class GaussianParams:
    mean: float
    variance: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.variance)):
            raise ValidationError("Gaussian parameters must be finite")
        if self.variance < VARIANCE_FLOOR:
            raise ValidationError(f"variance {self.variance} is below the floor")

    @property
    def std(self):
        return math.sqrt(self.variance)


def fit_gaussian(samples):
    """Mean and unbiased variance, floored at ``VARIANCE_FLOOR``.

    A single sample has no spread estimate and gets the floor.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValidationError("cannot fit a Gaussian to zero samples")
    if not np.all(np.isfinite(x)):
        raise ValidationError("samples must be finite")
    mean = float(np.mean(x))
    var = float(np.var(x, ddof=1)) if x.size >= 2 else VARIANCE_FLOOR
    return GaussianParams(mean, max(var, VARIANCE_FLOOR))


def normal_cdf(z):
    """Standard normal CDF (scalar or array)."""
    out = ndtr(np.asarray(z, dtype=np.float64))
    return float(out) if np.ndim(out) == 0 else out


def normal_logpdf(x, mean, variance):
    x, mean, variance = (np.asarray(a, dtype=np.float64) for a in (x, mean, variance))
    return -0.5 * (_LOG_2PI + np.log(variance)) - 0.5 * (x - mean) ** 2 / variance


def _online(conf, mu_in, var_in, mu_out, var_out):
    # difference of log densities; shift-invariant because only residuals enter
    d_in = conf - mu_in
    d_out = conf - mu_out
    return (0.5 * (np.log(var_out) - np.log(var_in))
            - 0.5 * d_in * d_in / var_in + 0.5 * d_out * d_out / var_out)


def online_score(conf, q_in, q_out):
    """Log-likelihood ratio of ``conf`` under the IN vs the OUT Gaussian."""
    return float(_online(conf, q_in.mean, q_in.variance, q_out.mean, q_out.variance))


def offline_score(conf, q_out):
    """Mass of the OUT Gaussian below ``conf``; higher means more member-like."""
    return normal_cdf((conf - q_out.mean) / q_out.std)


@dataclass(frozen=True, eq=False)
class AttackResult:
    scores: np.ndarray
    membership_truth: np.ndarray
    variant: AttackVariant
    score_variant: ScoreVariant

    def __post_init__(self):
        s = np.array(self.scores, dtype=np.float64).ravel()
        t = np.array(self.membership_truth, dtype=bool).ravel()
        if s.shape != t.shape:
            raise ValidationError("scores and truth must have equal length")
        if not np.all(np.isfinite(s)):
            raise ValidationError("attack scores must be finite")
        s.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "membership_truth", t)

    def __len__(self):
        return self.scores.size

    def __eq__(self, other):
        return (isinstance(other, AttackResult) and self.variant is other.variant
                and self.score_variant is other.score_variant
                and self.scores.tobytes() == other.scores.tobytes()
                and np.array_equal(self.membership_truth, other.membership_truth))


def _fit_columns(S, W):
    """Column-wise mean/variance of ``S`` over rows selected by ``W``.

    Returns ``(count, mean, var)``; ``mean`` is NaN where ``count == 0``.
    """
    count = W.sum(axis=0)
    safe = np.maximum(count, 1)
    mean = np.where(W, S, 0.0).sum(axis=0) / safe
    resid = np.where(W, S - mean, 0.0)
    var = (resid * resid).sum(axis=0) / np.maximum(count - 1, 1)
    var = np.where(count >= 2, np.maximum(var, VARIANCE_FLOOR), VARIANCE_FLOOR)
    mean = np.where(count > 0, mean, np.nan)
    return count, mean, var


def _fill_empty(S, W, count, mean, var):
    """Replace fits of empty columns with the pooled fit over all selected cells."""
    empty = count == 0
    if not empty.any():
        return mean, var
    pooled = S[W]
    if pooled.size == 0:
        raise ValidationError(
            f"example {int(np.flatnonzero(empty)[0])}: no shadow scores left to fit after "
            "holding out the target model")
    g = fit_gaussian(pooled)
    return np.where(empty, g.mean, mean), np.where(empty, g.variance, var)


def _pooled_variance(count, var):
    have = count > 0
    return max(float(np.mean(var[have])), VARIANCE_FLOOR)


def _check_inputs(S, mask, variant):
    if S.shape != mask.shape:
        raise ValidationError(f"score matrix {S.shape} and mask {mask.shape} disagree")
    n_in = mask.sum(axis=0)
    n_out = mask.shape[0] - n_in
    need_in = variant.uses_in
    for j in range(mask.shape[1]):
        if n_out[j] < 1 and variant is not AttackVariant.GLOBAL:
            raise ValidationError(f"example {j} has no OUT shadow scores")
        if need_in and n_in[j] < 1:
            raise ValidationError(f"example {j} has no IN shadow scores")


def run_attack(scores, mask, variant):
    """Leave-one-model-out attack over every (model, example) cell."""
    if isinstance(variant, str):
        variant = AttackVariant.parse(variant)
    S = scores.scores
    M_ = mask.entries
    _check_inputs(S, M_, variant)
    n, m = S.shape
    if variant is AttackVariant.GLOBAL:
        return AttackResult(S.ravel(), M_.ravel(), variant, scores.variant)
    out = np.empty((n, m))
    others = ~np.eye(n, dtype=bool)
    for t in range(n):
        keep = others[t][:, None]
        w_out = ~M_ & keep
        c_out, mu_out, var_out = _fit_columns(S, w_out)
        mu_out, var_out = _fill_empty(S, w_out, c_out, mu_out, var_out)
        if variant.fixed_variance:
            var_out = np.full(m, _pooled_variance(c_out, var_out))
        conf = S[t]
        if variant.uses_in:
            w_in = M_ & keep
            c_in, mu_in, var_in = _fit_columns(S, w_in)
            mu_in, var_in = _fill_empty(S, w_in, c_in, mu_in, var_in)
            if variant.fixed_variance:
                var_in = np.full(m, _pooled_variance(c_in, var_in))
            out[t] = _online(conf, mu_in, var_in, mu_out, var_out)
        else:
            out[t] = ndtr((conf - mu_out) / np.sqrt(var_out))
    return AttackResult(out.ravel(), M_.ravel(), variant, scores.variant)


def result_to_bytes(res):
    return (MAGIC + binio.U32.pack(VERSION) + binio.U8.pack(res.variant.code)
            + binio.U8.pack(res.score_variant.code) + binio.U64.pack(len(res))
            + binio.f64le(res.scores) + res.membership_truth.astype(np.uint8).tobytes())


def result_from_bytes(data, path=None):
    r = binio.Reader(data, path)
    r.magic(MAGIC)
    r.version(VERSION)
    off = r.pos
    try:
        variant = AttackVariant.from_code(r.u8("attack variant code"))
        off = r.pos
        score_variant = ScoreVariant.from_code(r.u8("score variant code"))
    except ValidationError as exc:
        r.fail(str(exc), off)
    n = r.u64("L")
    if n * 9 != len(data) - r.pos:
        r.fail(f"payload size mismatch for L={n}: expected {n * 9} bytes, "
               f"found {len(data) - r.pos}")
    s_off = r.pos
    s = r.array("<f8", n, "scores")
    bad = np.flatnonzero(~np.isfinite(s))
    if bad.size:
        r.fail("non-finite attack score", s_off + 8 * int(bad[0]))
    t_off = r.pos
    t = r.array(np.uint8, n, "truth")
    bad = np.flatnonzero(t > 1)
    if bad.size:
        r.fail("truth byte is not 0/1", t_off + int(bad[0]))
    r.finish()
    return AttackResult(s, t.astype(bool), variant, score_variant)


def save_result(res, path):
    binio.write_atomic(path, result_to_bytes(res))


def load_result(path):
    r = binio.read_file(path)
    return result_from_bytes(r.data, r.path)
