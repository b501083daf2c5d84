"""Minimal neural-network layers with exact forward and backward passes.

Everything operates on plain float64 numpy arrays in NCHW layout.  Each
operation comes as a pure forward function plus a matching backward
function, so analytic gradients can be checked against finite
differences without any autodiff machinery.  Convolution is computed
per kernel offset through BLAS matmuls; the semantics are plain
cross-correlation with zero padding.

Layer classes at the bottom bundle parameters with the functional pairs
and are what the model assembly uses.  They hold no activation state:
``forward`` returns a cache that ``backward`` consumes, so concurrent
forward passes over one set of weights are safe.
"""

import numpy as np

__all__ = [
    "conv2d",
    "conv2d_backward",
    "relu",
    "relu_backward",
    "pool2d",
    "pool2d_backward",
    "concat_channels",
    "concat_channels_backward",
    "global_avg_pool",
    "global_avg_pool_backward",
    "linear",
    "linear_backward",
    "softmax",
    "softmax_cross_entropy",
    "ConvLayer",
    "ReluLayer",
    "PoolLayer",
    "GlobalAvgPoolLayer",
    "LinearLayer",
]


# ---------------------------------------------------------------------------
# convolution


def _conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _im2col(x, kh, kw, stride, pad):
    """Patch matrix (N*ho*wo, kh*kw*C) for cross-correlation by one gemm.

    Column blocks are ordered by kernel offset (row-major), channels
    fastest within a block.  Returns (cols, ho, wo).
    """
    n, c, h, wd = x.shape
    ho = _conv_out_size(h, kh, stride, pad)
    wo = _conv_out_size(wd, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    xn = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
    if kh == 1 and kw == 1 and stride == 1:
        return xn.reshape(n * ho * wo, c), ho, wo
    cols = np.empty((n, ho, wo, kh * kw * c))
    for p in range(kh):
        for q in range(kw):
            blk = (p * kw + q) * c
            cols[..., blk : blk + c] = xn[
                :, p : p + ho * stride : stride, q : q + wo * stride : stride, :
            ]
    return cols.reshape(n * ho * wo, kh * kw * c), ho, wo


def _w_matrix(w):
    f, c, kh, kw = w.shape
    return np.ascontiguousarray(w.transpose(2, 3, 1, 0)).reshape(kh * kw * c, f)


def _conv_check(x, w, b, stride, pad):
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and kernel, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    f, ck, kh, kw = w.shape
    if ck != c:
        raise ValueError(f"kernel channels {ck} do not match input channels {c}")
    if b.shape != (f,):
        raise ValueError(f"bias shape {b.shape} does not match filter count {f}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if kh > h + 2 * pad or kw > wd + 2 * pad:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{wd + 2 * pad}")


def _conv2d_cols(x, w, b, stride=1, pad=0):
    """conv2d that also returns the patch matrix for reuse in backward."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _conv_check(x, w, b, stride, pad)
    n = x.shape[0]
    f = w.shape[0]
    cols, ho, wo = _im2col(x, w.shape[2], w.shape[3], stride, pad)
    y = cols @ _w_matrix(w) + b
    return np.ascontiguousarray(y.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)), cols


def conv2d(x, w, b, stride=1, pad=0):
    """Cross-correlate x:(N,C,H,W) with w:(F,C,kh,kw), add bias b:(F,).

    Output spatial size is floor((H + 2*pad - kh)/stride) + 1 per axis.
    """
    y, _ = _conv2d_cols(x, w, b, stride, pad)
    return y


def _conv2d_backward_cols(gy, cols, x_shape, w, stride=1, pad=0):
    gy = np.asarray(gy, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, c, h, wd = x_shape
    f, _, kh, kw = w.shape
    _, _, ho, wo = gy.shape

    gb = gy.sum(axis=(0, 2, 3))
    gy_mat = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(n * ho * wo, f)
    gw = (cols.T @ gy_mat).reshape(kh, kw, c, f).transpose(3, 2, 0, 1)

    gcols = gy_mat @ _w_matrix(w).T
    hp, wp = h + 2 * pad, wd + 2 * pad
    if kh == 1 and kw == 1 and stride == 1:
        gxn = gcols.reshape(n, ho, wo, c)
    else:
        gxn = np.zeros((n, hp, wp, c))
        gcols = gcols.reshape(n, ho, wo, kh * kw * c)
        for p in range(kh):
            for q in range(kw):
                blk = (p * kw + q) * c
                gxn[:, p : p + ho * stride : stride, q : q + wo * stride : stride, :] += gcols[
                    ..., blk : blk + c
                ]
    gx = np.ascontiguousarray(gxn.transpose(0, 3, 1, 2))
    if pad:
        gx = gx[:, :, pad : pad + h, pad : pad + wd]
    return np.ascontiguousarray(gw), gx, gb


def conv2d_backward(gy, x, w, stride=1, pad=0):
    """Gradients of conv2d: returns (grad_x, grad_w, grad_b)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    cols, _, _ = _im2col(x, w.shape[2], w.shape[3], stride, pad)
    gw, gx, gb = _conv2d_backward_cols(gy, cols, x.shape, w, stride, pad)
    return gx, gw, gb


# ---------------------------------------------------------------------------
# elementwise / pooling


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(gy, x):
    """Gradient passes only where x > 0 (subgradient 0 at exactly 0)."""
    return np.asarray(gy, dtype=np.float64) * (np.asarray(x) > 0)


def _pool_windows(x, k, stride):
    n, c, h, w = x.shape
    if k > h or k > w:
        raise ValueError(f"pool window {k} larger than input {h}x{w}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    s0, s1, s2, s3 = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, (n, c, ho, wo, k, k), (s0, s1, s2 * stride, s3 * stride, s2, s3), writeable=False
    )
    return win, ho, wo


def pool2d(x, mode, k, stride):
    """Window max or mean over (k, k) windows with the given stride."""
    x = np.asarray(x, dtype=np.float64)
    win, ho, wo = _pool_windows(x, k, stride)
    if mode == "avg":
        return win.mean(axis=(4, 5))
    if mode == "max":
        return win.reshape(*win.shape[:4], k * k).max(axis=4)
    raise ValueError(f"unknown pool mode {mode!r}")


def pool2d_backward(gy, x, mode, k, stride):
    gy = np.asarray(gy, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    _, _, ho, wo = gy.shape
    gx = np.zeros_like(x)
    if mode == "avg":
        spread = gy / (k * k)
        for p in range(k):
            for q in range(k):
                gx[:, :, p : p + ho * stride : stride, q : q + wo * stride : stride] += spread
        return gx
    if mode == "max":
        # flattened-window argmax takes the first maximum in row-major
        # scan order, so ties route all gradient to one cell
        win, _, _ = _pool_windows(x, k, stride)
        arg = win.reshape(n, c, ho, wo, k * k).argmax(axis=4)
        ni, ci, hi, wi = np.indices((n, c, ho, wo))
        rows = hi * stride + arg // k
        cols = wi * stride + arg % k
        if stride >= k:
            # non-overlapping windows: targets are unique, plain fancy
            # assignment beats the buffered np.add.at
            gx[ni, ci, rows, cols] = gy
        else:
            np.add.at(gx, (ni, ci, rows, cols), gy)
        return gx
    raise ValueError(f"unknown pool mode {mode!r}")


def concat_channels(inputs):
    """Concatenate NCHW tensors along the channel axis in argument order."""
    if not inputs:
        raise ValueError("concat_channels needs at least one input")
    first = inputs[0]
    for t in inputs[1:]:
        if t.shape[0] != first.shape[0] or t.shape[2:] != first.shape[2:]:
            raise ValueError(f"mismatched spatial dims: {t.shape} vs {first.shape}")
    return np.concatenate([np.asarray(t, dtype=np.float64) for t in inputs], axis=1)


def concat_channels_backward(gy, channel_counts):
    """Slice the upstream gradient back to each input's channel span."""
    offsets = np.cumsum(channel_counts)[:-1]
    return np.split(np.asarray(gy, dtype=np.float64), offsets, axis=1)


def global_avg_pool(x):
    """Per-channel spatial mean: (N,C,H,W) -> (N,C)."""
    x = np.asarray(x, dtype=np.float64)
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(gy, shape):
    n, c, h, w = shape
    gy = np.asarray(gy, dtype=np.float64)
    return np.broadcast_to(gy[:, :, None, None] / (h * w), shape).copy()


# ---------------------------------------------------------------------------
# affine head and loss


def linear(x, w, b):
    """Affine map x:(N,D) @ w:(K,D).T + b:(K,)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"linear shape mismatch: input {x.shape}, weight {w.shape}")
    if b.shape != (w.shape[0],):
        raise ValueError(f"bias shape {b.shape} does not match weight rows {w.shape[0]}")
    return x @ w.T + b


def linear_backward(gy, x, w):
    gy = np.asarray(gy, dtype=np.float64)
    return gy @ w, gy.T @ np.asarray(x, dtype=np.float64), gy.sum(axis=0)


def softmax(logits):
    """Row softmax, stabilized by max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over a batch of logits.

    Returns (loss, probs, grad_logits) where grad_logits is the gradient
    of the mean loss, i.e. (probs - onehot) / N.
    """
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if z.ndim != 2 or z.shape[1] < 2:
        raise ValueError(f"logits must be (N, K) with K >= 2, got {z.shape}")
    n, k = z.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels out of range [0, {k})")

    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(log_probs)
    loss = -log_probs[np.arange(n), labels].mean()
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, probs, grad


# ---------------------------------------------------------------------------
# parameterized layers


class ConvLayer:
    """Convolution with learned kernel and bias."""

    def __init__(self, weight, bias, stride=1, pad=0):
        self.w = np.asarray(weight, dtype=np.float64)
        self.b = np.asarray(bias, dtype=np.float64)
        self.stride = stride
        self.pad = pad

    @classmethod
    def init(cls, rng, in_ch, out_ch, k, stride=1, pad=0):
        """He-style initialization: N(0, sqrt(2 / fan_in)), zero bias."""
        fan_in = in_ch * k * k
        w = rng.standard_normal((out_ch, in_ch, k, k)) * np.sqrt(2.0 / fan_in)
        return cls(w, np.zeros(out_ch), stride=stride, pad=pad)

    def params(self):
        return {"w": self.w, "b": self.b}

    def forward(self, x):
        # cache the patch matrix so backward skips the im2col rebuild
        y, cols = _conv2d_cols(x, self.w, self.b, self.stride, self.pad)
        return y, (cols, np.shape(x))

    def backward(self, gy, cache):
        cols, x_shape = cache
        gw, gx, gb = _conv2d_backward_cols(gy, cols, x_shape, self.w, self.stride, self.pad)
        return gx, {"w": gw, "b": gb}


class ReluLayer:
    def params(self):
        return {}

    def forward(self, x):
        return relu(x), x

    def backward(self, gy, cache):
        return relu_backward(gy, cache), {}


class PoolLayer:
    def __init__(self, mode, k, stride):
        self.mode = mode
        self.k = k
        self.stride = stride

    def params(self):
        return {}

    def forward(self, x):
        return pool2d(x, self.mode, self.k, self.stride), x

    def backward(self, gy, cache):
        return pool2d_backward(gy, cache, self.mode, self.k, self.stride), {}


class GlobalAvgPoolLayer:
    def params(self):
        return {}

    def forward(self, x):
        return global_avg_pool(x), x.shape

    def backward(self, gy, cache):
        return global_avg_pool_backward(gy, cache), {}


class LinearLayer:
    def __init__(self, weight, bias):
        self.w = np.asarray(weight, dtype=np.float64)
        self.b = np.asarray(bias, dtype=np.float64)

    @classmethod
    def init(cls, rng, in_dim, out_dim):
        w = rng.standard_normal((out_dim, in_dim)) * np.sqrt(2.0 / in_dim)
        return cls(w, np.zeros(out_dim))

    def params(self):
        return {"w": self.w, "b": self.b}

    def forward(self, x):
        return linear(x, self.w, self.b), x

    def backward(self, gy, cache):
        gx, gw, gb = linear_backward(gy, cache, self.w)
        return gx, {"w": gw, "b": gb}
