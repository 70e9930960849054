"""Benchmark metrics for saliency/camouflage masks: MAE, F, E, S.

Predictions are continuous maps in [0, 1]; ground truths are binary.
All arithmetic is float64 with epsilon 1e-8 in denominators.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np

EPS = 1e-8

# 255 uniform binarization thresholds spanning (0, 1)
_THRESHOLDS = (np.arange(255) + 0.5) / 255.0


class MetricError(ValueError):
    pass


class UndefinedMetric(MetricError):
    """The metric is undefined for this ground truth (e.g. no foreground)."""


def _check(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricError(f"dimension mismatch: pred {pred.shape} vs gt {gt.shape}")
    return pred, gt


def mae(pred, gt):
    pred, gt = _check(pred, gt)
    return float(np.abs(pred - gt).mean())


def _adaptive_threshold(pred):
    return min(2.0 * float(pred.mean()), 1.0)


def _f_from_binary(binary, gt_fg, beta2):
    tp = float(np.logical_and(binary, gt_fg).sum())
    if tp == 0.0:
        return 0.0
    fp = float(np.logical_and(binary, ~gt_fg).sum())
    fn = float(np.logical_and(~binary, gt_fg).sum())
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return (1 + beta2) * precision * recall / (beta2 * precision + recall)


def f_measure(pred, gt, beta2=0.3, policy="adaptive"):
    pred, gt = _check(pred, gt)
    gt_fg = gt >= 0.5
    if not gt_fg.any():
        raise UndefinedMetric("F-measure undefined for empty-foreground ground truth")
    if policy == "adaptive":
        return _f_from_binary(pred >= _adaptive_threshold(pred), gt_fg, beta2)
    if policy == "mean_thresholds":
        return float(np.mean([_f_from_binary(pred >= t, gt_fg, beta2)
                              for t in _THRESHOLDS]))
    raise MetricError(f"unknown policy {policy!r}")


def _e_from_binary(binary, gt_fg):
    c = binary.astype(np.float64)
    g = gt_fg.astype(np.float64)
    if not gt_fg.any():
        enhanced = 1.0 - c
    elif gt_fg.all():
        enhanced = c
    else:
        phi_c = c - c.mean()
        phi_g = g - g.mean()
        xi = 2.0 * phi_c * phi_g / (phi_c**2 + phi_g**2 + EPS)
        enhanced = (xi + 1.0) ** 2 / 4.0
    return float(enhanced.mean())


def e_measure(pred, gt, policy="adaptive"):
    pred, gt = _check(pred, gt)
    gt_fg = gt >= 0.5
    if policy == "adaptive":
        return _e_from_binary(pred >= _adaptive_threshold(pred), gt_fg)
    if policy == "mean_thresholds":
        return float(np.mean([_e_from_binary(pred >= t, gt_fg)
                              for t in _THRESHOLDS]))
    raise MetricError(f"unknown policy {policy!r}")


def _object_score(values):
    """2*mean / (mean^2 + 1 + std) for the compared values."""
    x = values.mean()
    sigma = values.std()
    return 2.0 * x / (x * x + 1.0 + sigma + EPS)


def _region_q(x, y):
    """Structural similarity of one quadrant; 1 when degenerate on both sides."""
    xm, ym = x.mean(), y.mean()
    sx = ((x - xm) ** 2).mean()
    sy = ((y - ym) ** 2).mean()
    sxy = ((x - xm) * (y - ym)).mean()
    num = 4.0 * xm * ym * sxy
    den = (xm * xm + ym * ym) * (sx + sy)
    if num == 0.0 and den == 0.0:
        return 1.0
    return num / (den + EPS)


def s_measure(pred, gt, alpha=0.5):
    pred, gt = _check(pred, gt)
    gt_bin = (gt >= 0.5).astype(np.float64)
    mu = gt_bin.mean()
    if mu == 0.0:
        return max(0.0, 1.0 - float(pred.mean()))
    if mu == 1.0:
        return max(0.0, float(pred.mean()))

    fg = gt_bin == 1.0
    s_object = mu * _object_score(pred[fg]) + (1.0 - mu) * _object_score(
        1.0 - pred[~fg])

    rows, cols = np.nonzero(fg)
    cy = int(round(rows.mean()))
    cx = int(round(cols.mean()))
    h, w = gt_bin.shape
    area = h * w
    s_region = 0.0
    for rs, cs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        gq = gt_bin[rs, cs]
        if gq.size == 0:
            continue
        s_region += (gq.size / area) * _region_q(pred[rs, cs].ravel(), gq.ravel())

    return max(0.0, alpha * s_object + (1.0 - alpha) * s_region)


def evaluate_pair(pred, gt, beta2=0.3):
    """All metrics for one prediction / ground-truth pair."""
    return {
        "S": s_measure(pred, gt),
        "Fadp": f_measure(pred, gt, beta2, "adaptive"),
        "Fmean": f_measure(pred, gt, beta2, "mean_thresholds"),
        "Eadp": e_measure(pred, gt, "adaptive"),
        "Emean": e_measure(pred, gt, "mean_thresholds"),
        "MAE": mae(pred, gt),
    }


_COLUMNS = ("S", "Fadp", "Fmean", "Eadp", "Emean", "MAE")


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)        # (stem, {metric: value})
    means: dict = field(default_factory=dict)
    n_images: int = 0
    skipped: list = field(default_factory=list)     # stems missing a counterpart
    undefined: list = field(default_factory=list)   # stems with undefined F
    failures: list = field(default_factory=list)    # (stem, error message)

    def ok(self):
        return not self.failures


def compute_report(pairs, beta2=0.3):
    """Aggregate metrics over (stem, pred, gt) triples, sorted by stem."""
    report = MetricReport()
    sums = {c: 0.0 for c in _COLUMNS}
    counts = {c: 0 for c in _COLUMNS}
    for stem, pred, gt in sorted(pairs, key=lambda t: t[0]):
        row = {}
        for col in _COLUMNS:
            try:
                if col.startswith("F"):
                    policy = "adaptive" if col == "Fadp" else "mean_thresholds"
                    row[col] = f_measure(pred, gt, beta2, policy)
                elif col.startswith("E"):
                    policy = "adaptive" if col == "Eadp" else "mean_thresholds"
                    row[col] = e_measure(pred, gt, policy)
                elif col == "S":
                    row[col] = s_measure(pred, gt)
                else:
                    row[col] = mae(pred, gt)
            except UndefinedMetric:
                row[col] = None
                if stem not in report.undefined:
                    report.undefined.append(stem)
                continue
            sums[col] += row[col]
            counts[col] += 1
        report.rows.append((stem, row))
    report.n_images = len(report.rows)
    report.means = {c: (sums[c] / counts[c] if counts[c] else float("nan"))
                    for c in _COLUMNS}
    return report


def evaluate_dataset(pred_dir, gt_dir, beta2=0.3, read_fn=None):
    """Pair .pgm files in two directories by stem and evaluate every pair."""
    if read_fn is None:
        from .data import read_mask
        read_fn = read_mask

    def stems(d):
        return {os.path.splitext(f)[0]: os.path.join(d, f)
                for f in os.listdir(d) if f.endswith(".pgm")}

    preds = stems(pred_dir)
    gts = stems(gt_dir)
    common = sorted(set(preds) & set(gts))
    if not common:
        raise MetricError(
            f"no common stems between {pred_dir!r} and {gt_dir!r}")
    report = MetricReport()
    report.skipped = sorted(set(preds) ^ set(gts))
    pairs = []
    for stem in common:
        try:
            pred = read_fn(preds[stem])
            gt = (read_fn(gts[stem]) >= 0.5).astype(np.float64)
            if pred.shape != gt.shape:
                raise MetricError(
                    f"dimension mismatch: {pred.shape} vs {gt.shape}")
            pairs.append((stem, pred, gt))
        except Exception as exc:  # per-file error entry
            report.failures.append((stem, str(exc)))
    sub = compute_report(pairs, beta2)
    report.rows = sub.rows
    report.means = sub.means
    report.n_images = sub.n_images
    report.undefined = sub.undefined
    return report


def report_csv(report):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["image"] + list(_COLUMNS))
    for stem, row in report.rows:
        writer.writerow([stem] + [("" if row[c] is None else f"{row[c]:.6f}")
                                  for c in _COLUMNS])
    writer.writerow(["mean"] + [f"{report.means[c]:.6f}" for c in _COLUMNS])
    return buf.getvalue()


def report_table(report):
    header = f"{'image':<24}" + "".join(f"{c:>10}" for c in _COLUMNS)
    lines = [header, "-" * len(header)]
    for stem, row in report.rows:
        cells = "".join(
            f"{row[c]:>10.4f}" if row[c] is not None else f"{'--':>10}"
            for c in _COLUMNS)
        lines.append(f"{stem:<24}" + cells)
    lines.append("-" * len(header))
    lines.append(f"{'mean':<24}"
                 + "".join(f"{report.means[c]:>10.4f}" for c in _COLUMNS))
    if report.skipped:
        lines.append(f"skipped (unpaired): {', '.join(report.skipped)}")
    if report.undefined:
        lines.append(f"undefined F (empty gt): {', '.join(report.undefined)}")
    for stem, msg in report.failures:
        lines.append(f"FAILED {stem}: {msg}")
    return "\n".join(lines) + "\n"
