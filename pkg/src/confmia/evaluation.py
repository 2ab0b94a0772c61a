"""ROC analysis of attack results and CSV/SVG report emission."""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import binio
from .attack import AttackVariant
from .errors import ValidationError
from .scoring import ScoreVariant

DEFAULT_FPRS = (0.01, 0.001)
CHANCE = 0.5


@dataclass(frozen=True, eq=False)
class RocCurve:
    """Tie-grouped ROC curve.

    ``fp`` and ``tp`` are the integer counts at each operating point, so the
    area can be computed exactly; ``thresholds[k]`` is the score at which
    point ``k`` is reached (``+inf`` for the origin).
    """

    fp: np.ndarray
    tp: np.ndarray
    thresholds: np.ndarray
    negatives: int
    positives: int

    @property
    def fpr(self):
        return self.fp / self.negatives

    @property
    def tpr(self):
        return self.tp / self.positives

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


@dataclass(frozen=True)
class MetricsReport:
    auc: float
    tpr_at_fpr: dict
    balanced_accuracy: float


def roc_curve(result_or_scores, truth=None):
    """Sweep thresholds from the highest score down, one step per distinct score."""
    if truth is None:
        scores, truth = result_or_scores.scores, result_or_scores.membership_truth
    else:
        scores = result_or_scores
    scores = np.asarray(scores, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=bool).ravel()
    if scores.shape != truth.shape:
        raise ValidationError("scores and truth must have equal length")
    pos = int(truth.sum())
    neg = truth.size - pos
    if pos == 0 or neg == 0:
        raise ValidationError("ROC needs at least one member and one non-member")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    t = truth[order]
    tp = np.cumsum(t)
    fp = np.cumsum(~t)
    last_of_group = np.r_[s[1:] != s[:-1], True]
    tp = np.r_[0, tp[last_of_group]]
    fp = np.r_[0, fp[last_of_group]]
    thr = np.r_[np.inf, s[last_of_group]]
    return RocCurve(fp, tp, thr, neg, pos)


def auc(curve):
    """Trapezoidal area, accumulated in exact integer arithmetic."""
    dfp = np.diff(curve.fp).astype(object)
    stp = (curve.tp[1:] + curve.tp[:-1]).astype(object)
    twice_area = int(np.sum(dfp * stp)) if dfp.size else 0
    return float(Fraction(twice_area, 2 * curve.negatives * curve.positives))


def pairwise_auc(scores, truth):
    """Brute-force Mann-Whitney AUC with half credit for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    a = scores[truth][:, None]
    b = scores[~truth][None, :]
    wins = 2 * int(np.sum(a > b)) + int(np.sum(a == b))
    return float(Fraction(wins, 2 * a.size * b.size))


def tpr_at_fpr(curve, fpr_level):
    """Best TPR with FPR <= ``fpr_level``, interpolating inside tie segments."""
    if not 0 < fpr_level < 1:
        raise ValidationError("fpr_level must lie in (0, 1)")
    fpr, tpr = curve.fpr, curve.tpr
    k = int(np.searchsorted(fpr, fpr_level, side="right")) - 1
    best = float(tpr[k])
    if k + 1 < fpr.size and fpr[k + 1] > fpr[k]:
        frac = (fpr_level - fpr[k]) / (fpr[k + 1] - fpr[k])
        best = float(tpr[k] + frac * (tpr[k + 1] - tpr[k]))
    return min(max(best, 0.0), 1.0)


def balanced_accuracy(curve):
    return float(np.max((curve.tpr + 1.0 - curve.fpr) / 2.0))


def metrics(result, fpr_levels=DEFAULT_FPRS):
    curve = roc_curve(result)
    return MetricsReport(
        auc=auc(curve),
        tpr_at_fpr={f: tpr_at_fpr(curve, f) for f in fpr_levels},
        balanced_accuracy=balanced_accuracy(curve),
    )


def _grid_order(results):
    """Results sorted into table order: attack rows, then score columns."""
    seen = {}
    for r in results:
        key = (r.variant, r.score_variant)
        if key in seen:
            raise ValidationError(
                f"duplicate result for {r.variant.long_name} / {r.score_variant.long_name}")
        seen[key] = r
    attacks = list(AttackVariant)
    scores = list(ScoreVariant)
    return [seen[(a, s)] for a in attacks for s in scores if (a, s) in seen]


def csv_report(results, fpr_levels=DEFAULT_FPRS):
    header = ["attack", "score_variant", "auc"]
    header += [f"tpr@{f!r}" for f in fpr_levels]
    header.append("balanced_acc")
    lines = [",".join(header)]
    for r in _grid_order(results):
        mr = metrics(r, fpr_levels)
        row = [r.variant.long_name, r.score_variant.long_name, repr(mr.auc)]
        row += [repr(mr.tpr_at_fpr[f]) for f in fpr_levels]
        row.append(repr(mr.balanced_accuracy))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


_PALETTE = ("#1f3b73", "#f28e2b", "#9c9c9c", "#c9a227", "#4e79a7")
_W, _H = 760, 420
_LEFT, _RIGHT, _TOP, _BOTTOM = 60, 170, 30, 70


def svg_report(results):
    """Grouped bar chart of AUC: one group per score variant, one bar per attack."""
    ordered = _grid_order(results)
    if not ordered:
        raise ValidationError("cannot chart an empty result grid")
    aucs = {(r.variant, r.score_variant): auc(roc_curve(r)) for r in ordered}
    attacks = [a for a in AttackVariant if any(k[0] is a for k in aucs)]
    groups = [s for s in ScoreVariant if any(k[1] is s for k in aucs)]
    plot_w = _W - _LEFT - _RIGHT
    plot_h = _H - _TOP - _BOTTOM
    group_w = plot_w / len(groups)
    bar_w = group_w * 0.8 / len(attacks)

    def y_of(v):
        return _TOP + plot_h * (1.0 - v)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="#ffffff"/>',
        f'<text x="{_LEFT}" y="18" font-family="sans-serif" font-size="14">'
        "Attack AUC by score variant</text>",
    ]
    for tick in range(0, 11, 2):
        v = tick / 10
        y = y_of(v)
        out.append(f'<line x1="{_LEFT}" y1="{y:.2f}" x2="{_LEFT + plot_w}" y2="{y:.2f}" '
                   'stroke="#e0e0e0" stroke-width="1"/>')
        out.append(f'<text x="{_LEFT - 6}" y="{y + 4:.2f}" font-family="sans-serif" '
                   f'font-size="10" text-anchor="end">{v:.1f}</text>')
    for gi, sv in enumerate(groups):
        gx = _LEFT + gi * group_w + group_w * 0.1
        for ai, av in enumerate(attacks):
            if (av, sv) not in aucs:
                continue
            v = aucs[(av, sv)]
            x = gx + ai * bar_w
            out.append(
                f'<rect class="bar" data-attack="{av.long_name}" data-score="{sv.long_name}" '
                f'data-auc="{v!r}" x="{x:.2f}" y="{y_of(v):.2f}" width="{bar_w:.2f}" '
                f'height="{plot_h * v:.4f}" fill="{_PALETTE[av.code % len(_PALETTE)]}"/>')
        cx = _LEFT + (gi + 0.5) * group_w
        out.append(f'<text x="{cx:.2f}" y="{_TOP + plot_h + 18}" font-family="sans-serif" '
                   f'font-size="11" text-anchor="middle">{sv.long_name}</text>')
    y = y_of(CHANCE)
    out.append(f'<line class="chance" x1="{_LEFT}" y1="{y:.2f}" x2="{_LEFT + plot_w}" '
               f'y2="{y:.2f}" stroke="#d62728" stroke-width="1.5" stroke-dasharray="6,4"/>')
    out.append(f'<line x1="{_LEFT}" y1="{_TOP}" x2="{_LEFT}" y2="{_TOP + plot_h}" '
               'stroke="#000000"/>')
    out.append(f'<line x1="{_LEFT}" y1="{_TOP + plot_h}" x2="{_LEFT + plot_w}" '
               f'y2="{_TOP + plot_h}" stroke="#000000"/>')
    lx = _LEFT + plot_w + 15
    for ai, av in enumerate(attacks):
        ly = _TOP + 10 + ai * 20
        out.append(f'<rect x="{lx}" y="{ly}" width="12" height="12" '
                   f'fill="{_PALETTE[av.code % len(_PALETTE)]}"/>')
        out.append(f'<text x="{lx + 18}" y="{ly + 10}" font-family="sans-serif" '
                   f'font-size="11">{av.long_name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(results, csv_path=None, svg_path=None, fpr_levels=DEFAULT_FPRS):
    results = list(results)
    if not results:
        raise ValidationError("no attack results to report")
    if csv_path is not None:
        binio.write_atomic(csv_path, csv_report(results, fpr_levels).encode())
    if svg_path is not None:
        binio.write_atomic(svg_path, svg_report(results).encode())
