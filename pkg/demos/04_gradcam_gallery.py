"""Class-activation maps: where does the net look?

Averages attack-logit heatmaps over test images of each class and
writes grayscale maps plus red/blue overlays. On cosmetic contacts the
average should light up the outer iris annulus where the printed ring
lives, not the pupil.
"""

import numpy as np

from _common import demo_data, out_dir, quick_model

from irispad.explain import average_heatmap, grad_cam, heatmap_overlay, heatmap_to_u8
from irispad.images import write_pgm, write_ppm
from irispad.synthdata import CLASSES, crop_and_resize


def annulus_stats(values):
    s = values.shape[0]
    yy, xx = np.mgrid[0:s, 0:s]
    rad = np.hypot(yy - (s - 1) / 2, xx - (s - 1) / 2) / (s / 2)
    return values[(rad >= 0.6) & (rad <= 1.0)].mean(), values[rad <= 0.5].mean()


def main():
    model = quick_model()
    _, test_set = demo_data()
    size = model.config.input_size
    out = out_dir("gradcam_gallery")
    block = model.num_blocks - 2  # one below the top: finer spatial grid

    for label in CLASSES:
        crops = [crop_and_resize(im, size)[0, 0] for im in test_set if im.label == label]
        maps = [grad_cam(model, c, block_index=block) for c in crops]
        avg = average_heatmap(maps)
        write_pgm(out / f"avg_{label}.pgm", heatmap_to_u8(avg))
        sample = np.rint(crops[0] * 255).astype(np.uint8)
        write_ppm(out / f"overlay_{label}.ppm", heatmap_overlay(sample, maps[0]))
        outer, inner = annulus_stats(avg.values)
        print(f"{label:18s} n={len(crops):3d}  outer annulus {outer:.3f}  inner disk {inner:.3f}")

    print(f"\naveraged maps and one overlay per class written to {out}")
    print("cosmetic_contact should show the highest outer/inner contrast of the four.")


if __name__ == "__main__":
    main()
