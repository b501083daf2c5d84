"""Bit-exact PGM/PPM image IO and bilinear resampling.

PGM (P5, 8-bit) is the canonical on-disk format for every grayscale
artifact in this package; PPM (P6) is used for colorized overlays.
Both writers are deterministic: the same array always produces the
same bytes.
"""

import numpy as np

__all__ = [
    "read_pgm",
    "write_pgm",
    "write_ppm",
    "to_u8",
    "bilinear_resize",
]


def to_u8(values):
    """Map a float array in [0, 1] to uint8 by round-half-to-even on v*255."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.rint(v * 255.0).astype(np.uint8)


def write_pgm(path, pixels):
    """Write a 2-D uint8 array as a binary PGM (P5, maxval 255)."""
    px = np.asarray(pixels)
    if px.dtype != np.uint8 or px.ndim != 2:
        raise ValueError(f"write_pgm expects a 2-D uint8 array, got {px.dtype} {px.shape}")
    h, w = px.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(px.tobytes())


def write_ppm(path, pixels):
    """Write an (H, W, 3) uint8 array as a binary PPM (P6, maxval 255)."""
    px = np.asarray(pixels)
    if px.dtype != np.uint8 or px.ndim != 3 or px.shape[2] != 3:
        raise ValueError(f"write_ppm expects an (H, W, 3) uint8 array, got {px.dtype} {px.shape}")
    h, w, _ = px.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(px.tobytes())


def _read_pnm_tokens(f, count):
    """Read whitespace-separated header tokens, skipping '#' comments."""
    tokens = []
    while len(tokens) < count:
        line = f.readline()
        if not line:
            raise ValueError("truncated PNM header")
        hash_pos = line.find(b"#")
        if hash_pos >= 0:
            line = line[:hash_pos]
        tokens.extend(line.split())
    return tokens


def read_pgm(path):
    """Read a binary PGM (P5, maxval 255) into a 2-D uint8 array."""
    with open(path, "rb") as f:
        magic = f.readline().split()
        if not magic or magic[0] != b"P5":
            raise ValueError(f"{path}: not a binary PGM (P5) file")
        tokens = magic[1:]
        tokens.extend(_read_pnm_tokens(f, 3 - len(tokens)))
        w, h, maxval = (int(t) for t in tokens[:3])
        if maxval != 255:
            raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
        raw = f.read(w * h)
        if len(raw) != w * h:
            raise ValueError(f"{path}: truncated pixel data ({len(raw)} of {w * h} bytes)")
        return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()


def bilinear_resize(img, out_h, out_w):
    """Resize a 2-D float array with bilinear interpolation.

    Uses half-pixel-center coordinate mapping with edge clamping, so a
    same-size resize is an exact copy and constant images stay constant.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"bilinear_resize expects a 2-D array, got shape {img.shape}")
    h, w = img.shape
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be at least 1x1")
    if (out_h, out_w) == (h, w):
        return img.copy()

    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.intp)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]

    top = img[np.ix_(y0, x0)] * (1.0 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1.0 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1.0 - wy) + bot * wy
