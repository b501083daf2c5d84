"""Spatial-frequency robustness analysis.

Spectra are DC-centered: fft2 then shift, so "cutoff" means a Euclidean
radius in bins measured from the grid center.  Radial filters use ideal
hard-edged masks.  A low-pass whose cutoff reaches the farthest bin
short-circuits to an exact copy of the input, which makes the sweep's
largest-cutoff point bit-identical to the unfiltered baseline instead
of merely close to it.

Sweeps and tables manipulate test images only and re-select the score
threshold on the manipulated bonafide scores, then report TDR at the
target FDR next to the clean baseline.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, synthdata
from .images import to_u8, write_pgm
from .model import pa_scores


@dataclass
class Spectrum:
    values: np.ndarray
    image_shape: tuple


@dataclass
class SweepResult:
    points: list
    baseline_tdr: float
    target_fdr: float
    model_id: str = ""

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["cutoff", "tdr", "baseline_tdr", "target_fdr", "model_id"])
            for cutoff, tdr in self.points:
                w.writerow([cutoff, repr(tdr), repr(self.baseline_tdr), repr(self.target_fdr), self.model_id])


def fft2_centered(image):
    """Centered 2-D DFT of a real grid; DC lands at (H//2, W//2)."""
    img = np.asarray(image, dtype=np.float64)
    return Spectrum(values=np.fft.fftshift(np.fft.fft2(img)), image_shape=img.shape)


def ifft2_centered(spectrum):
    """Inverse of fft2_centered; returns the real part."""
    return np.real(np.fft.ifft2(np.fft.ifftshift(spectrum.values)))


def bin_radii(shape):
    """Euclidean distance of every bin from the centered DC bin."""
    h, w = shape
    yy, xx = np.indices((h, w))
    return np.hypot(yy - h // 2, xx - w // 2)


def max_bin_radius(shape):
    h, w = shape
    return float(np.hypot(h // 2, w // 2))


def radial_filter(image, cutoff, mode, clamp=True):
    """Ideal radial filter: keep bins with radius <= cutoff (low) or
    > cutoff (high), invert, take the real part, clamp to [0,1].

    A low-pass at or beyond the farthest bin returns the input exactly
    (a copy), with no transform roundoff.
    """
    if mode not in ("low", "high"):
        raise ValueError(f"mode must be 'low' or 'high', got {mode!r}")
    if cutoff < 0:
        raise ValueError(f"cutoff must be >= 0, got {cutoff}")
    img = np.asarray(image, dtype=np.float64)
    if mode == "low" and cutoff >= max_bin_radius(img.shape):
        return img.copy()
    r = bin_radii(img.shape)
    mask = r <= cutoff if mode == "low" else r > cutoff
    spec = np.fft.fftshift(np.fft.fft2(img))
    out = np.real(np.fft.ifft2(np.fft.ifftshift(spec * mask)))
    return np.clip(out, 0.0, 1.0) if clamp else out


def add_noise(image, kind, seed, density=0.02, sigma=0.1):
    """Seeded noise injection on a [0,1] image.

    salt_pepper flips exactly rint(density*H*W) distinct pixels, the
    first half (rounded up) to 1 and the rest to 0.  gaussian adds
    N(0, sigma) everywhere and clamps.
    """
    img = np.asarray(image, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    if kind == "salt_pepper":
        if not 0.0 <= density <= 1.0:
            raise ValueError(f"density must lie in [0,1], got {density}")
        out = img.copy()
        k = int(np.rint(density * img.size))
        if k == 0:
            return out
        flat = rng.choice(img.size, size=k, replace=False)
        n_salt = (k + 1) // 2
        out.flat[flat[:n_salt]] = 1.0
        out.flat[flat[n_salt:]] = 0.0
        return out
    if kind == "gaussian":
        if sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {sigma}")
        if sigma == 0:
            return img.copy()
        return np.clip(img + rng.normal(0.0, sigma, img.shape), 0.0, 1.0)
    raise ValueError(f"unknown noise kind {kind!r}")


# ---------------------------------------------------------------------------
# model-in-the-loop sweeps


def default_cutoffs(input_size, reference=(20, 30, 50), reference_size=224):
    """Reference cutoffs rescaled to the working input size."""
    return [max(1, int(round(c * input_size / reference_size))) for c in reference]


def _score_split(model, x, y):
    scores = pa_scores(model, x)
    return scores[y == 0], scores[y == 1]


def _apply_per_image(x, fn, jobs=1):
    out = np.empty_like(x)
    if jobs > 1 and x.shape[0] > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for i, res in enumerate(pool.map(fn, (x[i, 0] for i in range(x.shape[0])), range(x.shape[0]))):
                out[i, 0] = res
    else:
        for i in range(x.shape[0]):
            out[i, 0] = fn(x[i, 0], i)
    return out


def cutoff_sweep(model, test_set, cutoffs, target_fdr, model_id="", jobs=1):
    """TDR at target FDR after low-pass filtering the test set, per cutoff."""
    if not cutoffs:
        raise ValueError("cutoff list is empty")
    cuts = list(cutoffs)
    if any(b <= a for a, b in zip(cuts, cuts[1:])):
        raise ValueError(f"cutoffs must be strictly increasing, got {cuts}")
    x, y = synthdata.batch(test_set, model.config.input_size)
    bona, atk = _score_split(model, x, y)
    baseline_tdr, _ = metrics.tdr_at_fdr(bona, atk, target_fdr)
    points = []
    for c in cuts:
        xf = _apply_per_image(x, lambda im, i: radial_filter(im, c, "low"), jobs=jobs)
        b, a = _score_split(model, xf, y)
        tdr, _ = metrics.tdr_at_fdr(b, a, target_fdr)
        points.append((c, tdr))
    return SweepResult(points=points, baseline_tdr=baseline_tdr, target_fdr=target_fdr, model_id=model_id)


def default_manipulations(input_size, sp_density=0.02, g_sigma=0.1, noise_seed=0):
    """The standard row set: three low-passes plus the two noise kinds.

    Noise is seeded per image index so the whole table is reproducible.
    """
    rows = []
    for c in default_cutoffs(input_size):
        rows.append((f"lowpass{c}", lambda im, i, c=c: radial_filter(im, c, "low")))
    rows.append(
        (
            "salt_pepper",
            lambda im, i: add_noise(im, "salt_pepper", seed=noise_seed * 1_000_003 + i, density=sp_density),
        )
    )
    rows.append(
        (
            "gaussian",
            lambda im, i: add_noise(im, "gaussian", seed=noise_seed * 1_000_003 + i, sigma=g_sigma),
        )
    )
    return rows


def robustness_table(model, test_set, manipulations, target_fdr, jobs=1):
    """Rows of (name, tdr, relative_decrease); baseline row first.

    Each manipulation is fn(image_2d, index) -> image_2d, applied to the
    cropped, resized network inputs of the test set only.
    """
    x, y = synthdata.batch(test_set, model.config.input_size)
    bona, atk = _score_split(model, x, y)
    baseline_tdr, _ = metrics.tdr_at_fdr(bona, atk, target_fdr)
    rows = [("baseline", baseline_tdr, 0.0)]
    for name, fn in manipulations:
        xm = _apply_per_image(x, fn, jobs=jobs)
        b, a = _score_split(model, xm, y)
        tdr, _ = metrics.tdr_at_fdr(b, a, target_fdr)
        rows.append((name, tdr, metrics.relative_decrease(baseline_tdr, tdr)))
    return rows


def write_table_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["name", "tdr", "relative_decrease_pct"])
        for name, tdr, dec in rows:
            w.writerow([name, repr(tdr), repr(dec)])


# ---------------------------------------------------------------------------
# spectrum imagery


def log_magnitude_u8(spectrum):
    """Log-magnitude of a centered spectrum, normalized to uint8."""
    mag = np.log1p(np.abs(spectrum.values))
    peak = mag.max()
    return to_u8(mag / peak if peak > 0 else mag)


def write_frequency_panel(image, low_cutoff, high_cutoff, path, gap=2):
    """A 2x3 tile grid: original / low-pass / high-pass images on top,
    their centered log-magnitude spectra below."""
    img = np.asarray(image, dtype=np.float64)
    lo = radial_filter(img, low_cutoff, "low")
    hi = radial_filter(img, high_cutoff, "high")
    tiles = [
        [to_u8(img), to_u8(lo), to_u8(hi)],
        [log_magnitude_u8(fft2_centered(img)), log_magnitude_u8(fft2_centered(lo)),
         log_magnitude_u8(fft2_centered(hi))],
    ]
    h, w = img.shape
    panel = np.zeros((2 * h + gap, 3 * w + 2 * gap), dtype=np.uint8)
    for r, row in enumerate(tiles):
        for c, tile in enumerate(row):
            y0, x0 = r * (h + gap), c * (w + gap)
            panel[y0 : y0 + h, x0 : x0 + w] = tile
    write_pgm(path, panel)
    return panel
