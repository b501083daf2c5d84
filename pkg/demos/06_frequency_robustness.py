"""How much detection survives when the input spectrum is cut down?

Low-pass filters the test images at increasing cutoff radii and
re-scores the trained model at each step, then runs the fixed noise
manipulations and prints the relative TDR decrease table.
"""

from _common import demo_data, out_dir, quick_model

from irispad.freq import (
    cutoff_sweep,
    default_cutoffs,
    default_manipulations,
    robustness_table,
    write_frequency_panel,
    write_table_csv,
)
from irispad.synthdata import crop_and_resize

TARGET_FDR = 0.01


def main():
    model = quick_model()
    _, test_set = demo_data()
    size = model.config.input_size
    out = out_dir("frequency_robustness")

    cutoffs = default_cutoffs(size)
    sweep = cutoff_sweep(model, test_set, cutoffs, TARGET_FDR)
    print(f"baseline TDR at {TARGET_FDR:.0%} FDR: {sweep.baseline_tdr:.4f}")
    print(f"{'cutoff':>8s} {'tdr':>8s}")
    for cutoff, tdr in sweep.points:
        print(f"{cutoff:8d} {tdr:8.4f}")
    sweep.to_csv(out / "sweep.csv")

    rows = robustness_table(model, test_set, default_manipulations(size), TARGET_FDR)
    print(f"\n{'manipulation':>14s} {'tdr':>8s} {'decrease%':>10s}")
    for name, tdr, dec in rows:
        print(f"{name:>14s} {tdr:8.4f} {dec:10.2f}")
    write_table_csv(out / "robustness.csv", rows)

    crop = crop_and_resize(test_set[0], size)[0, 0]
    write_frequency_panel(crop, cutoffs[0], cutoffs[-1], out / "panel.pgm")
    print(f"\nsweep.csv, robustness.csv and panel.pgm written to {out}")
    print("panel.pgm tiles original / low-passed / high-passed over their spectra.")


if __name__ == "__main__":
    main()
