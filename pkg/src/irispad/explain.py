"""Saliency heatmaps and 2-D embeddings of per-block features.

Heatmaps follow the class-activation-mapping recipe: pick a dense
block's output maps A^k, backpropagate the target-class logit to get
gradients g^k, weight each map by the spatial mean of its gradient,
ReLU the weighted sum, upsample to input resolution and normalize by
the maximum.

The embedding side is an exact O(n^2) t-SNE: Gaussian conditional
similarities with per-point bandwidth found by binary search to a fixed
perplexity, symmetrized, then a Student-t low-dimensional kernel fitted
by gradient descent with early exaggeration, momentum and per-parameter
gains.  No tree approximations; runs are deterministic for a fixed seed.
"""

from dataclasses import dataclass, field

import numpy as np

from .images import bilinear_resize, to_u8
from .model import CLASS_ATTACK

TSNE_DEFAULTS = {
    "perplexity": 30.0,
    "iters": 1000,
    "learning_rate": 200.0,
    "early_exaggeration": 12.0,
    "exaggeration_iters": 250,
    "initial_momentum": 0.5,
    "final_momentum": 0.8,
    "momentum_switch": 250,
}


@dataclass
class Heatmap:
    values: np.ndarray
    source_class: str = ""
    sample_id: str = ""
    all_zero: bool = False


@dataclass
class Embedding:
    coords: np.ndarray
    block_index: int = -1
    labels: list = field(default_factory=list)
    kl: float = 0.0
    kl_history: np.ndarray = None
    params: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Grad-CAM


def grad_cam(model, image, target_class=CLASS_ATTACK, block_index=None, sample_id=""):
    """Heatmap of where a block's features drive the target logit.

    block_index defaults to the last dense block.  An identically zero
    map (dead activations or fully negative weighting) is returned as
    zeros with all_zero set rather than treated as an error.
    """
    if block_index is None:
        block_index = model.num_blocks - 1
    if not 0 <= block_index < model.num_blocks:
        raise ValueError(f"block index {block_index} out of range [0, {model.num_blocks})")
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, None]
    logits, taps, caches = model.forward_batch(x, need_caches=True)
    grad_logits = np.zeros_like(logits)
    grad_logits[0, target_class] = 1.0
    g = model.backward_to_block(grad_logits, caches, block_index)

    acts = taps[block_index][0]
    alpha = g[0].mean(axis=(1, 2))
    cam = np.maximum((alpha[:, None, None] * acts).sum(axis=0), 0.0)
    size = model.config.input_size
    cam = bilinear_resize(cam, size, size)
    cam = np.maximum(cam, 0.0)
    peak = cam.max()
    if peak == 0.0:
        return Heatmap(values=cam, sample_id=sample_id, all_zero=True)
    return Heatmap(values=cam / peak, sample_id=sample_id)


def average_heatmap(heatmaps):
    """Pixelwise mean of same-size heatmaps, re-normalized by the max."""
    if not heatmaps:
        raise ValueError("need at least one heatmap to average")
    shape = heatmaps[0].values.shape
    for h in heatmaps:
        if h.values.shape != shape:
            raise ValueError(f"mixed heatmap resolutions: {h.values.shape} vs {shape}")
    mean = np.mean([h.values for h in heatmaps], axis=0)
    peak = mean.max()
    classes = {h.source_class for h in heatmaps}
    cls = classes.pop() if len(classes) == 1 else "mixed"
    if peak == 0.0:
        return Heatmap(values=mean, source_class=cls, sample_id=f"avg({len(heatmaps)})", all_zero=True)
    return Heatmap(values=mean / peak, source_class=cls, sample_id=f"avg({len(heatmaps)})")


def heatmap_overlay(gray_u8, heatmap):
    """Red-over-blue colorization of a heatmap on top of a gray image.

    Returns an (H,W,3) uint8 array: hot regions pull toward red, cold
    toward a dim blue, mixed 50/50 with the underlying image.
    """
    g = np.asarray(gray_u8, dtype=np.float64)
    h = np.clip(np.asarray(heatmap.values, dtype=np.float64), 0.0, 1.0)
    if g.shape != h.shape:
        raise ValueError(f"image {g.shape} and heatmap {h.shape} sizes differ")
    hot = np.stack([255.0 * h, 32.0 * h, 32.0 * h], axis=-1)
    cold = np.stack([40.0 * (1 - h), 40.0 * (1 - h), 255.0 * (1 - h)], axis=-1)
    color = hot + cold
    out = 0.5 * g[..., None] + 0.5 * color
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def heatmap_to_u8(heatmap):
    return to_u8(heatmap.values)


# ---------------------------------------------------------------------------
# feature extraction


def extract_block_features(model, dataset, block_index, chunk=64):
    """Row-major flattened features of one dense block, one row per sample."""
    if not 0 <= block_index < model.num_blocks:
        raise ValueError(f"block index {block_index} out of range [0, {model.num_blocks})")
    from .synthdata import crop_and_resize

    size = model.config.input_size
    rows = []
    for start in range(0, len(dataset), chunk):
        part = dataset[start : start + chunk]
        x = np.concatenate([crop_and_resize(im, size) for im in part], axis=0)
        _, taps, _ = model.forward_batch(x)
        rows.append(taps[block_index].reshape(len(part), -1))
    if not rows:
        return np.zeros((0, 0))
    return np.concatenate(rows, axis=0)


# ---------------------------------------------------------------------------
# t-SNE


def _pairwise_sq_dists(x):
    s = (x * x).sum(axis=1)
    d = s[:, None] + s[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def conditional_probabilities(sq_dists, perplexity, tol=1e-5, max_iter=100):
    """Row-stochastic P[i,j] = p(j|i) with entropy log(perplexity) per row.

    Bandwidths beta_i are found by bisection; a row whose entropy cannot
    reach the target (e.g. all neighbors at identical distance from a
    duplicate-heavy input) raises, naming the point.
    """
    d = np.asarray(sq_dists, dtype=np.float64)
    n = d.shape[0]
    target = np.log(perplexity)
    p = np.zeros((n, n))
    for i in range(n):
        di = np.delete(d[i], i)
        beta, lo, hi = 1.0, -np.inf, np.inf
        hdiff = np.inf
        for _ in range(max_iter):
            w = np.exp(-di * beta)
            sw = w.sum()
            if sw <= 0:
                h = 0.0
            else:
                h = np.log(sw) + beta * (di * w).sum() / sw
            hdiff = h - target
            if abs(hdiff) <= tol:
                break
            if hdiff > 0:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == -np.inf else (beta + lo) / 2.0
        if abs(hdiff) > tol:
            raise ValueError(
                f"bandwidth search failed for point {i}: entropy stuck at "
                f"{hdiff + target:.6f}, target {target:.6f}"
            )
        w = np.exp(-di * beta)
        row = np.insert(w / w.sum(), i, 0.0)
        p[i] = row
    return p


def _joint_p(points, perplexity):
    d = _pairwise_sq_dists(points)
    pc = conditional_probabilities(d, perplexity)
    p = (pc + pc.T) / (2.0 * d.shape[0])
    return np.maximum(p, 1e-12)


def tsne(points, perplexity=None, iters=None, seed=0, **overrides):
    """Exact t-SNE to 2 dimensions; returns an Embedding with the KL trace.

    Keyword overrides accept any TSNE_DEFAULTS key.  The KL history is
    measured against the true (un-exaggerated) P at every iteration.
    """
    cfg = dict(TSNE_DEFAULTS)
    cfg.update(overrides)
    if perplexity is not None:
        cfg["perplexity"] = float(perplexity)
    if iters is not None:
        cfg["iters"] = int(iters)
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    perp = cfg["perplexity"]
    if perp < 2:
        raise ValueError(f"perplexity must be >= 2, got {perp}")
    if n < 3 * perp:
        raise ValueError(f"need n >= 3*perplexity ({3 * perp:g}), got {n}")

    p = _joint_p(x, perp)
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((n, 2)) * 1e-4
    vel = np.zeros_like(y)
    gains = np.ones_like(y)
    kl_history = np.zeros(cfg["iters"])

    for it in range(cfg["iters"]):
        p_eff = p * cfg["early_exaggeration"] if it < cfg["exaggeration_iters"] else p
        num = 1.0 / (1.0 + _pairwise_sq_dists(y))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)

        pq = (p_eff - q) * num
        grad = 4.0 * ((np.diag(pq.sum(axis=1)) - pq) @ y)

        momentum = cfg["initial_momentum"] if it < cfg["momentum_switch"] else cfg["final_momentum"]
        same_sign = np.sign(grad) == np.sign(vel)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        vel = momentum * vel - cfg["learning_rate"] * gains * grad
        y = y + vel
        y = y - y.mean(axis=0)

        kl_history[it] = float((p * (np.log(p) - np.log(q))).sum())

    return Embedding(
        coords=y,
        kl=float(kl_history[-1]) if cfg["iters"] else 0.0,
        kl_history=kl_history,
        params={**cfg, "seed": seed},
    )


def write_embedding_csv(path, embedding):
    """CSV columns x,y,label,block, one row per embedded point."""
    import csv

    labels = embedding.labels if embedding.labels else [""] * len(embedding.coords)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "label", "block"])
        for (xx, yy), lab in zip(embedding.coords, labels):
            w.writerow([repr(float(xx)), repr(float(yy)), lab, embedding.block_index])
