"""Procedural generation and loading of labeled iris images.

Four classes are generated: bonafide, print, artificial_eye and
cosmetic_contact.  Bonafide irises get a multi-octave band-limited noise
texture rich in high spatial frequencies and, as under the on-axis
near-infrared illumination of an iris sensor, a retro-reflective
mid-gray pupil.  Attack classes are derived transforms of the same base
render: print pushes it through a blur plus a tone-modulated dot
screen, artificial_eye rebuilds the iris from only the low-frequency
octaves with a flat limbus and keeps a dead-dark pupil (a prosthetic
has no retina to reflect), cosmetic_contact stamps a dark spoke ring
onto the outer iris annulus and leaves everything inside it untouched.
Class separability is therefore frequency- and locality-based by
design.

Everything is a pure function of (class, seed, size).  The base render
consumes its random draws in a fixed order before any class-specific
stream is touched, so print and cosmetic_contact images of a given seed
sit on exactly the bonafide image of that seed.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .images import bilinear_resize, read_pgm, to_u8, write_pgm

CLASSES = ("bonafide", "print", "artificial_eye", "cosmetic_contact")
PA_CLASSES = ("print", "artificial_eye", "cosmetic_contact")

# class mix used by the split builders: every other image bonafide,
# attacks interleaved, so any prefix is close to 50/50 binary balance
MIX_PATTERN = ("bonafide", "print", "bonafide", "artificial_eye", "bonafide", "cosmetic_contact")


@dataclass(frozen=True)
class GeneratorParams:
    """All tunable generator constants in one record.

    octave_bands are (low, high) fractions of the Nyquist radius; the
    matching weight tuples say how strongly each band contributes to the
    iris texture of bonafide vs artificial-eye renders.
    """

    octave_bands: tuple = ((1 / 16, 1 / 8), (1 / 8, 1 / 4), (1 / 4, 1 / 2), (1 / 2, 0.95))
    bonafide_weights: tuple = (1.0, 0.85, 0.6, 0.4)
    artificial_weights: tuple = (1.4, 0.35, 0.0, 0.0)
    texture_amplitude: float = 0.13
    texture_softclip: float = 2.2
    iris_base: float = 0.45
    pupil_value: float = 0.07
    sclera_base: float = 0.80
    sclera_noise: float = 0.02
    matte_ceiling: float = 0.90
    highlight_peak: float = 0.98
    halftone_pitch: float = 5.5
    halftone_blur: float = 1.2
    halftone_swing: float = 0.42
    ring_window: tuple = (0.62, 0.98)
    ring_contrast: float = 0.34
    spoke_counts: tuple = (18, 26)
    iris_radius_range: tuple = (0.30, 0.34)
    pupil_ratio_range: tuple = (0.30, 0.40)
    center_jitter: float = 0.03


DEFAULT_PARAMS = GeneratorParams()


@dataclass
class LabeledImage:
    pixels: np.ndarray
    label: str
    iris_center: tuple
    iris_radius: float
    eye_side: str
    seed: int
    circle_assumed: bool = False
    source_path: str = ""

    @property
    def binary_label(self):
        """0 for bonafide, 1 for any presentation attack."""
        return 0 if self.label == "bonafide" else 1


@dataclass
class DatasetManifest:
    split: str
    seed: int
    image_size: int
    counts: dict = field(default_factory=dict)

    @classmethod
    def from_images(cls, images, split, seed, image_size):
        counts = {c: 0 for c in CLASSES}
        for im in images:
            counts[im.label] = counts.get(im.label, 0) + 1
        return cls(split=split, seed=seed, image_size=image_size, counts=counts)


@dataclass
class LoadResult:
    images: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# texture primitives


def _band_noise(rng, size, lo, hi):
    """Unit-std noise whose centered spectrum lies in [lo, hi]*Nyquist."""
    white = rng.standard_normal((size, size))
    spec = np.fft.fftshift(np.fft.fft2(white))
    yy, xx = np.indices((size, size))
    c = size // 2
    r = np.hypot(yy - c, xx - c)
    nyq = size / 2.0
    mask = (r >= lo * nyq) & (r <= hi * nyq)
    out = np.real(np.fft.ifft2(np.fft.ifftshift(spec * mask)))
    sd = out.std()
    return out / sd if sd > 0 else out


def _smoothstep(x, edge0, edge1):
    t = np.clip((x - edge0) / (edge1 - edge0), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _gaussian_blur_fft(img, sigma):
    """Periodic Gaussian blur via the FFT; exact enough for texture work."""
    h, w = img.shape
    fy = np.fft.fftfreq(h)
    fx = np.fft.fftfreq(w)
    g = np.exp(-2.0 * (np.pi * sigma) ** 2 * (fy[:, None] ** 2 + fx[None, :] ** 2))
    return np.real(np.fft.ifft2(np.fft.fft2(img) * g))


# ---------------------------------------------------------------------------
# generation


def _base_render(seed, size, params):
    """Geometry plus the matte bonafide render, highlight not yet applied.

    Draw order from the base stream is fixed: geometry first, then the
    sclera field, then the four octave fields.  Every class consumes
    exactly these draws, which is what makes attack images transforms of
    the very bonafide image with the same seed.
    """
    ss = np.random.SeedSequence([int(seed), int(size)])
    base_ss, fx_ss = ss.spawn(2)
    rng = np.random.default_rng(base_ss)

    jit = params.center_jitter
    cx = size / 2.0 + rng.uniform(-jit, jit) * size
    cy = size / 2.0 + rng.uniform(-jit, jit) * size
    r_iris = rng.uniform(*params.iris_radius_range) * size
    r_pupil = rng.uniform(*params.pupil_ratio_range) * r_iris

    sclera_field = _band_noise(rng, size, 1 / 32, 1 / 8)
    octaves = [_band_noise(rng, size, lo, hi) for lo, hi in params.octave_bands]

    yy, xx = np.indices((size, size), dtype=np.float64)
    r = np.hypot(yy - cy, xx - cx)

    geom = {
        "cx": cx, "cy": cy, "r_iris": r_iris, "r_pupil": r_pupil,
        "r": r, "octaves": octaves, "fx_ss": fx_ss,
        "theta": np.arctan2(yy - cy, xx - cx),
    }

    img = params.sclera_base + params.sclera_noise * sclera_field
    tex = _combine_octaves(octaves, params.bonafide_weights, params.texture_softclip)
    iris_val = params.iris_base + params.texture_amplitude * tex
    # darken toward the limbus so the iris reads as a disc, not a sticker
    iris_val = iris_val * (1.0 - 0.35 * _smoothstep(r, 0.80 * r_iris, r_iris))
    m_iris = 1.0 - _smoothstep(r, r_iris - 1.5, r_iris + 0.5)
    img = img * (1.0 - m_iris) + iris_val * m_iris
    m_pupil = 1.0 - _smoothstep(r, r_pupil - 1.0, r_pupil + 1.0)
    img = img * (1.0 - m_pupil) + params.pupil_value * m_pupil
    return img, geom


def _combine_octaves(octaves, weights, softclip):
    w = np.asarray(weights, dtype=np.float64)
    norm = np.sqrt((w**2).sum())
    tex = sum(wi * o for wi, o in zip(w, octaves)) / norm
    # tanh soft clip bounds the texture so the specular highlight always
    # wins the global max
    return np.tanh(tex / softclip) * softclip


def _apply_highlight(img, geom, seed, params):
    """Ceil the matte image, then max-composite the specular blob.

    The blob sits on the sclera, outside the iris disk, as an off-axis
    illuminator reflection would: the iris itself stays matte, which
    keeps the network's cropped input free of a bright outlier.  Its
    center is snapped to a pixel so that single pixel is the strict
    global maximum; left eyes carry it left of center, right eyes right
    of center.
    """
    side = "left" if seed % 2 == 0 else "right"
    sign = -1.0 if side == "left" else 1.0
    hx = int(round(geom["cx"] + sign * 1.18 * geom["r_iris"]))
    hy = int(round(geom["cy"] - 0.35 * geom["r_iris"]))
    sigma = 0.22 * geom["r_pupil"] + 0.8
    yy, xx = np.indices(img.shape, dtype=np.float64)
    d2 = (yy - hy) ** 2 + (xx - hx) ** 2
    blob = params.highlight_peak * np.exp(-d2 / (2.0 * sigma**2))
    matte = np.clip(img, 0.0, params.matte_ceiling)
    return np.maximum(matte, blob), side


def _print_transform(img, geom, params):
    blurred = _gaussian_blur_fft(img, params.halftone_blur)
    rng = np.random.default_rng(geom["fx_ss"])
    ph_x, ph_y = rng.uniform(0, 2 * np.pi, size=2)
    yy, xx = np.indices(img.shape, dtype=np.float64)
    carrier = 0.5 * (
        np.cos(2 * np.pi * xx / params.halftone_pitch + ph_x)
        + np.cos(2 * np.pi * yy / params.halftone_pitch + ph_y)
    )
    # screen contrast peaks at midtones; solid shadows and highlights
    # print as flat ink, so the pupil carries no carrier
    mod = 1.0 - np.abs(2.0 * blurred - 1.0)
    return np.clip(blurred + params.halftone_swing * mod * carrier, 0.0, 1.0)


def _artificial_transform(img, geom, params):
    """Rebuild the iris disk as a molded prosthetic presents it.

    Two departures from the live render, both inside the iris: the
    texture keeps only the coarse octaves (pigment blotches, no crypt
    grain), and the pigment is printed flat, so the limbal shading that
    darkens a live iris toward its rim is missing.  The second one is
    the stronger tell; it brightens the whole outer annulus relative to
    the bonafide render with the same seed.
    """
    tex = _combine_octaves(geom["octaves"], params.artificial_weights, params.texture_softclip)
    iris_val = params.iris_base + params.texture_amplitude * tex
    r, r_iris, r_pupil = geom["r"], geom["r_iris"], geom["r_pupil"]
    m_iris = 1.0 - _smoothstep(r, r_iris - 1.5, r_iris + 0.5)
    out = img * (1.0 - m_iris) + iris_val * m_iris
    m_pupil = 1.0 - _smoothstep(r, r_pupil - 1.0, r_pupil + 1.0)
    return out * (1.0 - m_pupil) + params.pupil_value * m_pupil


def _cosmetic_transform(img, geom, params):
    rng = np.random.default_rng(geom["fx_ss"])
    lo, hi = params.spoke_counts
    n_spokes = int(rng.integers(lo, hi + 1))
    phase = rng.uniform(0, 2 * np.pi)
    r, r_iris = geom["r"], geom["r_iris"]
    w0, w1 = params.ring_window
    window = _smoothstep(r, w0 * r_iris, (w0 + 0.06) * r_iris) * (
        1.0 - _smoothstep(r, (w1 - 0.04) * r_iris, w1 * r_iris)
    )
    # darkening-only spokes: printed pigment absorbs, it does not glow.
    # Nothing outside the ring window is touched, so the only evidence
    # separating this class from its bonafide base lives in the annulus.
    spokes = 0.5 * (np.cos(n_spokes * geom["theta"] + phase) - 1.0)
    out = img + params.ring_contrast * spokes * window
    return np.clip(out, 0.0, 1.0)


def generate(label, seed, size=96, params=DEFAULT_PARAMS):
    """Render one labeled image, a pure function of (label, seed, size)."""
    if label not in CLASSES:
        raise ValueError(f"unknown class {label!r}, expected one of {CLASSES}")
    if size < 32:
        raise ValueError(f"size {size} too small, need >= 32")
    img, geom = _base_render(seed, size, params)
    if label == "print":
        img = _print_transform(img, geom, params)
    elif label == "artificial_eye":
        img = _artificial_transform(img, geom, params)
    elif label == "cosmetic_contact":
        img = _cosmetic_transform(img, geom, params)
    img, side = _apply_highlight(img, geom, seed, params)
    return LabeledImage(
        pixels=to_u8(img),
        label=label,
        iris_center=(geom["cx"], geom["cy"]),
        iris_radius=geom["r_iris"],
        eye_side=side,
        seed=int(seed),
    )


# ---------------------------------------------------------------------------
# crop / resize / batching


def crop_and_resize(image, out_size):
    """Tight square crop of side 2*radius around the iris, resized.

    Returns a (1,1,S,S) float64 tensor with values in [0,1].  The crop
    window is clamped to stay inside the image.
    """
    if image.iris_radius <= 0:
        raise ValueError(f"degenerate iris radius {image.iris_radius}")
    px = np.asarray(image.pixels)
    h, w = px.shape
    side = int(round(2 * image.iris_radius))
    side = max(2, min(side, min(h, w)))
    cx, cy = image.iris_center
    x0 = int(round(cx - side / 2.0))
    y0 = int(round(cy - side / 2.0))
    x0 = max(0, min(x0, w - side))
    y0 = max(0, min(y0, h - side))
    crop = px[y0 : y0 + side, x0 : x0 + side].astype(np.float64) / 255.0
    out = bilinear_resize(crop, out_size, out_size)
    return out[None, None]


def batch(images, input_size):
    """Stack crops into (N,1,S,S) inputs plus binary labels (0/1)."""
    xs = np.concatenate([crop_and_resize(im, input_size) for im in images], axis=0)
    ys = np.array([im.binary_label for im in images], dtype=np.intp)
    return xs, ys


def make_split(n, base_seed, size=96, params=DEFAULT_PARAMS):
    """n images following MIX_PATTERN, seeds base_seed..base_seed+n-1."""
    return [generate(MIX_PATTERN[i % len(MIX_PATTERN)], base_seed + i, size, params) for i in range(n)]


def train_test_splits(n_train, n_test, base_seed, size=96, params=DEFAULT_PARAMS):
    """Two splits with disjoint consecutive seed ranges."""
    train = make_split(n_train, base_seed, size, params)
    test = make_split(n_test, base_seed + n_train, size, params)
    return train, test


# ---------------------------------------------------------------------------
# on-disk layout


def image_filename(image):
    tag = "L" if image.eye_side == "left" else "R"
    return f"{image.label}_{image.seed:08d}_{tag}.pgm"


def save_labeled(image, directory):
    """Write pixels as PGM plus a `.circle` sidecar; returns the path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / image_filename(image)
    write_pgm(path, image.pixels)
    cx, cy = image.iris_center
    sidecar = path.with_suffix(".circle")
    sidecar.write_text(f"{cx!r} {cy!r} {image.iris_radius!r}\n")
    return path


def _parse_circle(text):
    parts = text.split()
    if len(parts) != 3:
        raise ValueError(f"expected 'cx cy r', got {text!r}")
    cx, cy, r = (float(p) for p in parts)
    return cx, cy, r


def _eye_side_from_name(stem):
    if stem.endswith("_L"):
        return "left"
    if stem.endswith("_R"):
        return "right"
    return "left"


def _read_image_file(path):
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError as e:
            raise OSError("PNG support requires Pillow") from e
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.uint8)
    raise OSError(f"not a supported image type: {path.name}")


def load_dir(path, pattern=None):
    """Load `<path>/<class>/<name>.pgm|png` trees into LabeledImages.

    Unreadable files become error entries; files that are not images and
    directories that are not class names are skipped.  A missing
    `.circle` sidecar yields a full-image circle with circle_assumed set.
    """
    root = Path(path)
    result = LoadResult()
    if not root.is_dir():
        return result
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        if class_dir.name not in CLASSES:
            result.skipped.append(str(class_dir))
            continue
        files = sorted(class_dir.glob(pattern)) if pattern else sorted(
            p for p in class_dir.iterdir() if p.suffix.lower() in (".pgm", ".png")
        )
        for f in files:
            if f.suffix.lower() == ".circle":
                continue
            try:
                px = _read_image_file(f)
            except (OSError, ValueError) as e:
                result.errors.append((str(f), str(e)))
                continue
            sidecar = f.with_suffix(".circle")
            assumed = not sidecar.exists()
            if assumed:
                h, w = px.shape
                cx, cy, r = w / 2.0, h / 2.0, min(h, w) / 2.0
            else:
                try:
                    cx, cy, r = _parse_circle(sidecar.read_text())
                except ValueError as e:
                    result.errors.append((str(sidecar), str(e)))
                    continue
            result.images.append(
                LabeledImage(
                    pixels=px,
                    label=class_dir.name,
                    iris_center=(cx, cy),
                    iris_radius=r,
                    eye_side=_eye_side_from_name(f.stem),
                    seed=0,
                    circle_assumed=assumed,
                    source_path=str(f),
                )
            )
        if not pattern:
            for f in sorted(class_dir.iterdir()):
                if f.is_file() and f.suffix.lower() not in (".pgm", ".png", ".circle"):
                    result.skipped.append(str(f))
    return result


MANIFEST_FIELDS = ("path", "label", "split", "cx", "cy", "r", "eye_side")


def write_manifest(csv_path, rows):
    """rows: iterable of dicts with MANIFEST_FIELDS keys."""
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in MANIFEST_FIELDS})


def read_manifest(csv_path):
    with open(csv_path, newline="") as f:
        return list(csv.DictReader(f))


def manifest_row(image, path, split):
    cx, cy = image.iris_center
    return {
        "path": str(path),
        "label": image.label,
        "split": split,
        "cx": repr(float(cx)),
        "cy": repr(float(cy)),
        "r": repr(float(image.iris_radius)),
        "eye_side": image.eye_side,
    }
