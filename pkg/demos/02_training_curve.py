"""Train the small shared model and show the per-epoch curve.

Deletes any cached checkpoint first so the run is always live, then
prints the loss/accuracy table the training loop logged.
"""

import csv

from _common import OUT_ROOT, out_dir, quick_model


def main():
    ckpt = OUT_ROOT / "shared" / "model.ckpt"
    if ckpt.exists():
        ckpt.unlink()  # force a fresh run; other demos will reuse it
    model = quick_model()
    print(f"\nmodel: {model.num_params()} parameters")

    log_path = OUT_ROOT / "shared" / "train_log.csv"
    with open(log_path, newline="") as f:
        rows = list(csv.DictReader(f))
    print(f"\n{'epoch':>5s} {'mean_loss':>12s} {'accuracy':>9s}")
    for r in rows:
        print(f"{r['epoch']:>5s} {float(r['mean_loss']):12.5f} {float(r['accuracy']):9.4f}")

    out = out_dir("training_curve")
    (out / "train_log.csv").write_bytes(log_path.read_bytes())
    print(f"\ncurve copied to {out / 'train_log.csv'}")
    print("rerun this script and the numbers repeat bit-for-bit: same seeds, same bytes.")


if __name__ == "__main__":
    main()
