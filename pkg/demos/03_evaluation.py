"""Score a held-out test split and walk through the evaluation report.

Shows the threshold chosen for a 1% false-detection budget, the
resulting true-detection rate, APCER/BPCER, d-prime, and the score
histogram, then writes the full report artifacts.
"""

from _common import demo_data, out_dir, quick_model

from irispad.metrics import build_report, report_text, roc_points, write_report
from irispad.train import evaluate_scores

TARGET_FDR = 0.01


def main():
    model = quick_model()
    _, test_set = demo_data()
    rows = evaluate_scores(model, test_set)
    report = build_report(rows, TARGET_FDR)

    print(f"\nscored {len(rows)} test images at target FDR {TARGET_FDR:.0%}")
    print(report_text(report))

    bona = [r.score for r in rows if r.label == 0]
    atk = [r.score for r in rows if r.label == 1]
    print("ROC corner points (threshold, fdr, tdr):")
    pts = roc_points(bona, atk)
    for thr, fdr, tdr in pts[:: max(1, len(pts) // 8)]:
        print(f"  {thr:8.4f}  {fdr:6.3f}  {tdr:6.3f}")

    out = out_dir("evaluation")
    write_report(report, out)
    print(f"\nreport.csv, report.txt and histogram.pgm written to {out}")


if __name__ == "__main__":
    main()
