"""Biometric PAD evaluation: thresholding, TDR/FDR, d-prime, histograms.

Score conventions: higher means more attack-like.  The decision rule is
"attack iff score >= threshold".  TDR = 1 - APCER (fraction of attacks
caught); FDR = BPCER (fraction of bonafide falsely flagged).  Thresholds
come from the order statistics of the bonafide scores: the smallest
observed score (or the next representable value above the largest one)
whose realized FDR does not exceed the target, so realized FDR <= target
always holds and attacks strictly above every bonafide are still caught
at a zero-FDR target.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .images import write_pgm


def _just_above(v):
    return float(np.nextafter(v, np.inf))


def select_threshold(bonafide_scores, target_fdr):
    """Smallest candidate threshold whose realized FDR is <= target_fdr.

    Candidates are the observed bonafide scores plus a value just above
    the largest of them.
    """
    s = np.asarray(bonafide_scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("bonafide score list is empty")
    if not 0.0 <= target_fdr <= 1.0:
        raise ValueError(f"target_fdr must lie in [0,1], got {target_fdr}")
    n = s.size
    ordered = np.sort(s)
    # fraction at/above the first occurrence of each unique value
    uniq, first = np.unique(ordered, return_index=True)
    for v, i in zip(uniq, first):
        if (n - i) / n <= target_fdr:
            return float(v)
    return _just_above(uniq[-1])


def realized_fdr(bonafide_scores, threshold):
    s = np.asarray(bonafide_scores, dtype=np.float64)
    return float(np.mean(s >= threshold)) if s.size else 0.0


def tdr_at_fdr(bonafide_scores, pa_scores, target_fdr):
    """Returns (tdr, threshold) with the threshold picked on bonafide."""
    p = np.asarray(pa_scores, dtype=np.float64)
    if p.size == 0:
        raise ValueError("attack score list is empty")
    threshold = select_threshold(bonafide_scores, target_fdr)
    return float(np.mean(p >= threshold)), threshold


def d_prime(bonafide_scores, pa_scores):
    """|mean difference| over the equal-weight pooled standard deviation.

    Identical means give 0.0 even when variances vanish; distinct means
    with zero pooled variance give math.inf.
    """
    value, _ = d_prime_flagged(bonafide_scores, pa_scores)
    return value


def d_prime_flagged(bonafide_scores, pa_scores):
    """(d_prime, zero_variance_flag); see d_prime."""
    b = np.asarray(bonafide_scores, dtype=np.float64)
    p = np.asarray(pa_scores, dtype=np.float64)
    if b.size < 2 or p.size < 2:
        raise ValueError("d_prime needs at least 2 samples per class")
    num = abs(p.mean() - b.mean())
    if num == 0.0:
        return 0.0, False
    pooled = (b.var(ddof=1) + p.var(ddof=1)) / 2.0
    if pooled == 0.0:
        return math.inf, True
    return float(num / math.sqrt(pooled)), False


def histogram(scores, bins):
    """Counts over `bins` equal-width bins spanning [0,1], last bin
    right-closed so a score of exactly 1 lands in it."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    s = np.asarray(scores, dtype=np.float64)
    counts = np.zeros(bins, dtype=np.int64)
    for i, v in enumerate(s):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"score out of [0,1] at sample {i}: {v}")
        counts[min(int(np.floor(v * bins)), bins - 1)] += 1
    return counts


def relative_decrease(tdr_orig, tdr_manip):
    """Percent decrease from tdr_orig to tdr_manip."""
    if tdr_orig <= 0:
        raise ValueError(f"original TDR must be positive, got {tdr_orig}")
    return 100.0 * (tdr_orig - tdr_manip) / tdr_orig


def roc_points(bonafide_scores, pa_scores):
    """(threshold, fdr, tdr) triples over all candidate thresholds."""
    b = np.asarray(bonafide_scores, dtype=np.float64)
    p = np.asarray(pa_scores, dtype=np.float64)
    all_scores = np.unique(np.concatenate([b, p]))
    cands = np.concatenate([all_scores, [_just_above(all_scores[-1])]])
    out = []
    for t in cands:
        out.append((float(t), float(np.mean(b >= t)), float(np.mean(p >= t))))
    return out


# ---------------------------------------------------------------------------
# evaluation report


@dataclass
class EvalReport:
    threshold: float
    target_fdr: float
    realized_fdr: float
    tdr: float
    apcer: float
    bpcer: float
    d_prime: float
    d_prime_degenerate: bool
    n_bonafide: int
    n_attack: int
    misclassified: dict = field(default_factory=dict)
    histograms: dict = field(default_factory=dict)
    bins: int = 20


def build_report(rows, target_fdr, bins=20):
    """Assemble an EvalReport from ScoreRow-like records.

    rows need .score, .label (0 bonafide / 1 attack), .class_label and
    .ident fields, as produced by evaluate_scores.
    """
    bona = [r for r in rows if r.label == 0]
    atk = [r for r in rows if r.label == 1]
    if not bona or not atk:
        raise ValueError("report needs scores from both binary classes")
    b_scores = [r.score for r in bona]
    a_scores = [r.score for r in atk]
    threshold = select_threshold(b_scores, target_fdr)
    fdr = realized_fdr(b_scores, threshold)
    tdr = float(np.mean(np.asarray(a_scores) >= threshold))
    dp, degenerate = d_prime_flagged(b_scores, a_scores)

    mis = {}
    for r in bona:
        if r.score >= threshold:
            mis.setdefault(r.class_label, []).append(r.ident)
    for r in atk:
        if r.score < threshold:
            mis.setdefault(r.class_label, []).append(r.ident)

    hists = {}
    for r in rows:
        hists.setdefault(r.class_label, []).append(r.score)
    hists = {c: histogram(s, bins) for c, s in sorted(hists.items())}

    return EvalReport(
        threshold=threshold,
        target_fdr=target_fdr,
        realized_fdr=fdr,
        tdr=tdr,
        apcer=1.0 - tdr,
        bpcer=fdr,
        d_prime=dp,
        d_prime_degenerate=degenerate,
        n_bonafide=len(bona),
        n_attack=len(atk),
        misclassified=mis,
        histograms=hists,
        bins=bins,
    )


def report_csv_rows(report):
    rows = [
        ("threshold", repr(report.threshold)),
        ("target_fdr", repr(report.target_fdr)),
        ("realized_fdr", repr(report.realized_fdr)),
        ("tdr", repr(report.tdr)),
        ("apcer", repr(report.apcer)),
        ("bpcer", repr(report.bpcer)),
        ("d_prime", repr(report.d_prime)),
        ("d_prime_degenerate", str(report.d_prime_degenerate)),
        ("n_bonafide", str(report.n_bonafide)),
        ("n_attack", str(report.n_attack)),
    ]
    for c, idents in sorted(report.misclassified.items()):
        rows.append((f"misclassified_{c}", ";".join(idents)))
    return rows


def report_text(report):
    lines = [
        "presentation-attack evaluation",
        f"  threshold        {report.threshold:.6f} (target FDR {report.target_fdr:g})",
        f"  realized FDR     {report.realized_fdr:.6f}",
        f"  TDR              {report.tdr:.6f}",
        f"  APCER            {report.apcer:.6f}",
        f"  BPCER            {report.bpcer:.6f}",
        f"  d-prime          {report.d_prime:.4f}"
        + (" (degenerate: zero pooled variance)" if report.d_prime_degenerate else ""),
        f"  samples          {report.n_bonafide} bonafide, {report.n_attack} attack",
    ]
    total_mis = sum(len(v) for v in report.misclassified.values())
    lines.append(f"  misclassified    {total_mis}")
    for c, idents in sorted(report.misclassified.items()):
        lines.append(f"    {c}: {len(idents)}")
    return "\n".join(lines) + "\n"


def histogram_image(report, row_height=40, bar_width=6):
    """Stacked per-class bar plots as one grayscale image.

    Classes are stacked top to bottom in sorted name order; each row
    scales its bars to the tallest bin of that class.
    """
    classes = sorted(report.histograms)
    width = report.bins * bar_width
    img = np.zeros((row_height * len(classes), width), dtype=np.uint8)
    for ci, c in enumerate(classes):
        counts = report.histograms[c]
        top = ci * row_height
        peak = int(counts.max()) if counts.size else 0
        for bi, count in enumerate(counts):
            if peak == 0 or count == 0:
                continue
            h = max(1, int(round((row_height - 2) * count / peak)))
            x0 = bi * bar_width
            img[top + row_height - h : top + row_height, x0 : x0 + bar_width - 1] = 230
        img[top, :] = 60
    return img


def write_report(report, out_dir):
    """report.csv, report.txt and histogram.pgm under out_dir."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["field", "value"])
        for k, v in report_csv_rows(report):
            w.writerow([k, v])
    (out / "report.txt").write_text(report_text(report))
    write_pgm(out / "histogram.pgm", histogram_image(report))
