"""Miniature densely connected CNN producing a presentation-attack score.

Layout: stem (3x3 conv, ReLU, 2x2 max pool) -> dense blocks separated by
transition layers (1x1 compression conv + 2x2 average pool) -> global
average pool -> 2-logit linear head.  Each dense layer is a 1x1
bottleneck conv, ReLU, 3x3 conv with pad 1, ReLU; its output is
concatenated onto the block's running feature stack, so block output
channels = input channels + layers * growth_rate.

The PA score is the softmax probability of class 1 (attack); class 0 is
bonafide.  A built model is immutable under forward passes (caches are
returned, never stored), so concurrent scoring from threads is safe.
Training mutates parameters in place through the dict from ``params()``.
"""

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn

CHECKPOINT_MAGIC = b"DNPADCKP"
CHECKPOINT_VERSION = 1

# bottleneck 1x1 conv width, in multiples of the growth rate
BOTTLENECK_MULT = 4

CLASS_BONAFIDE = 0
CLASS_ATTACK = 1


class ConfigError(ValueError):
    """Raised for a ModelConfig that cannot produce a valid network."""


class CheckpointError(Exception):
    """Raised for unreadable checkpoint files.

    ``field`` names the part of the file that failed to parse.
    """

    def __init__(self, message, field):
        super().__init__(f"{message} (field: {field})")
        self.field = field


@dataclass
class ModelConfig:
    input_size: int = 64
    stem_filters: int = 16
    growth_rate: int = 8
    block_layers: tuple = (2, 2, 2, 2)
    compression: float = 0.5
    num_classes: int = 2

    def __post_init__(self):
        self.block_layers = tuple(int(n) for n in self.block_layers)
        self.validate()

    def validate(self):
        if self.input_size < 2:
            raise ConfigError(f"input_size {self.input_size} too small")
        if self.stem_filters < 1:
            raise ConfigError("stem_filters must be >= 1")
        if self.growth_rate < 1:
            raise ConfigError("growth_rate must be >= 1")
        if not self.block_layers or any(n < 1 for n in self.block_layers):
            raise ConfigError(f"block_layers must be non-empty positive ints, got {self.block_layers}")
        if not 0.0 < self.compression <= 1.0:
            raise ConfigError(f"compression must lie in (0, 1], got {self.compression}")
        if self.num_classes != 2:
            raise ConfigError("only binary bonafide/attack heads are supported")
        # dry-run the channel and pooling chain so bad configs fail here,
        # not mid-build
        size = self.input_size
        if size < 2:
            raise ConfigError("input_size too small for the stem pool")
        size //= 2
        ch = self.stem_filters
        for i, layers in enumerate(self.block_layers):
            ch += layers * self.growth_rate
            if i < len(self.block_layers) - 1:
                ch = int(np.floor(ch * self.compression))
                if ch < 1:
                    raise ConfigError(f"compression {self.compression} leaves transition {i} with 0 channels")
                if size < 2:
                    raise ConfigError(
                        f"input_size {self.input_size} too small for the pooling chain "
                        f"(block {i + 1} would see {size}x{size})"
                    )
                size //= 2

    def to_dict(self):
        return {
            "input_size": self.input_size,
            "stem_filters": self.stem_filters,
            "growth_rate": self.growth_rate,
            "block_layers": list(self.block_layers),
            "compression": self.compression,
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_size=int(d["input_size"]),
            stem_filters=int(d["stem_filters"]),
            growth_rate=int(d["growth_rate"]),
            block_layers=tuple(d["block_layers"]),
            compression=float(d["compression"]),
            num_classes=int(d["num_classes"]),
        )


@dataclass
class ForwardTrace:
    """Result of scoring one image, with per-block feature taps."""

    pa_score: float
    logits: np.ndarray
    block_features: list = field(default_factory=list)

    @property
    def bonafide_score(self):
        return 1.0 - self.pa_score


class DenseLayer:
    """One dense layer: 1x1 bottleneck conv, ReLU, 3x3 conv pad 1, ReLU."""

    def __init__(self, conv1, conv3):
        self.conv1 = conv1
        self.conv3 = conv3

    @classmethod
    def init(cls, rng, in_ch, growth):
        bottleneck = BOTTLENECK_MULT * growth
        return cls(
            nn.ConvLayer.init(rng, in_ch, bottleneck, k=1),
            nn.ConvLayer.init(rng, bottleneck, growth, k=3, pad=1),
        )

    def params(self):
        out = {}
        for tag, layer in (("conv1", self.conv1), ("conv3", self.conv3)):
            for k, v in layer.params().items():
                out[f"{tag}/{k}"] = v
        return out

    def forward(self, x):
        h1, c1 = self.conv1.forward(x)
        a1 = nn.relu(h1)
        h3, c3 = self.conv3.forward(a1)
        a3 = nn.relu(h3)
        return a3, (c1, h1, c3, h3)

    def backward(self, gy, cache):
        c1, h1, c3, h3 = cache
        g = nn.relu_backward(gy, h3)
        g, grads3 = self.conv3.backward(g, c3)
        g = nn.relu_backward(g, h1)
        g, grads1 = self.conv1.backward(g, c1)
        grads = {f"conv1/{k}": v for k, v in grads1.items()}
        grads.update({f"conv3/{k}": v for k, v in grads3.items()})
        return g, grads


class DenseBlock:
    """Stack of dense layers; each consumes the concatenation so far."""

    def __init__(self, layers, growth):
        self.layers = layers
        self.growth = growth

    @classmethod
    def init(cls, rng, in_ch, n_layers, growth):
        layers = []
        ch = in_ch
        for _ in range(n_layers):
            layers.append(DenseLayer.init(rng, ch, growth))
            ch += growth
        return cls(layers, growth)

    def params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.params().items():
                out[f"layer_{i}/{k}"] = v
        return out

    def forward(self, x):
        caches = []
        feats = x
        for layer in self.layers:
            new, c = layer.forward(feats)
            caches.append((feats.shape[1], c))
            feats = nn.concat_channels([feats, new])
        return feats, caches

    def backward(self, gy, caches):
        grads = {}
        g = gy
        for i in range(len(self.layers) - 1, -1, -1):
            prev_ch, c = caches[i]
            g_prev, g_new = nn.concat_channels_backward(g, [prev_ch, self.growth])
            gx, layer_grads = self.layers[i].backward(g_new, c)
            for k, v in layer_grads.items():
                grads[f"layer_{i}/{k}"] = v
            g = g_prev + gx
        return g, grads


class MiniDenseNet:
    """The assembled network, driven through an ordered op list."""

    def __init__(self, config, ops, seed, meta=None):
        self.config = config
        self.ops = ops
        self.seed = seed
        self.meta = dict(meta) if meta else {"epoch": 0, "seed": seed}
        self._block_names = [name for name, _ in ops if name.startswith("block_")]

    @property
    def num_blocks(self):
        return len(self._block_names)

    def params(self):
        """Live parameter arrays keyed op_name/param_path, in build order."""
        out = {}
        for name, op in self.ops:
            for k, v in op.params().items():
                out[f"{name}/{k}"] = v
        return out

    def num_params(self):
        return sum(int(v.size) for v in self.params().values())

    # -- forward / backward ------------------------------------------------

    def forward_batch(self, x, need_caches=False):
        """Run a (N,1,S,S) batch; returns (logits, taps, caches).

        taps are the dense-block outputs in order.  caches is None unless
        requested; with caches the tuple feeds backward() unchanged.
        """
        x = np.asarray(x, dtype=np.float64)
        s = self.config.input_size
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != s or x.shape[3] != s:
            raise ValueError(f"expected batch of shape (N,1,{s},{s}), got {x.shape}")
        # center [0,1] grayscale to zero mean; all-positive inputs give the
        # stem sign-correlated weight gradients, which destabilizes SGD at
        # high momentum
        x = x - 0.5
        taps = []
        caches = [] if need_caches else None
        for name, op in self.ops:
            x, c = op.forward(x)
            if need_caches:
                caches.append(c)
            if name.startswith("block_"):
                taps.append(x)
        return x, taps, caches

    def backward(self, grad_logits, caches):
        """Full backprop; returns grads keyed like params()."""
        grads = {}
        g = grad_logits
        for (name, op), c in zip(reversed(self.ops), reversed(caches)):
            g, op_grads = op.backward(g, c)
            for k, v in op_grads.items():
                grads[f"{name}/{k}"] = v
        return grads

    def backward_to_block(self, grad_logits, caches, block_index):
        """Gradient of the upstream scalar w.r.t. a block's output tensor.

        Walks backward through ops after the chosen block and stops, which
        is what class-activation mapping needs.
        """
        target = self._block_names[block_index]
        g = grad_logits
        for (name, op), c in zip(reversed(self.ops), reversed(caches)):
            if name == target:
                return g
            g, _ = op.backward(g, c)
        raise ValueError(f"block index {block_index} out of range")

    def forward_from_block(self, block_index, feats):
        """Resume the forward pass just after a block, returning logits."""
        target = self._block_names[block_index]
        x = np.asarray(feats, dtype=np.float64)
        seen = False
        for name, op in self.ops:
            if seen:
                x, _ = op.forward(x)
            if name == target:
                seen = True
        if not seen:
            raise ValueError(f"block index {block_index} out of range")
        return x


def build_model(config, seed):
    """Deterministically initialize a MiniDenseNet from (config, seed)."""
    config.validate()
    rng = np.random.default_rng(seed)
    ops = []
    ops.append(("stem_conv", nn.ConvLayer.init(rng, 1, config.stem_filters, k=3, pad=1)))
    ops.append(("stem_relu", nn.ReluLayer()))
    ops.append(("stem_pool", nn.PoolLayer("max", 2, 2)))
    ch = config.stem_filters
    for i, n_layers in enumerate(config.block_layers):
        ops.append((f"block_{i}", DenseBlock.init(rng, ch, n_layers, config.growth_rate)))
        ch += n_layers * config.growth_rate
        if i < len(config.block_layers) - 1:
            out_ch = int(np.floor(ch * config.compression))
            ops.append((f"trans_{i}_conv", nn.ConvLayer.init(rng, ch, out_ch, k=1)))
            ops.append((f"trans_{i}_pool", nn.PoolLayer("avg", 2, 2)))
            ch = out_ch
    ops.append(("gap", nn.GlobalAvgPoolLayer()))
    ops.append(("head", nn.LinearLayer.init(rng, ch, config.num_classes)))
    return MiniDenseNet(config, ops, seed)


def forward(model, image):
    """Score a single image; returns a ForwardTrace.

    Accepts (S,S), (1,S,S) or (1,1,S,S) arrays with values in [0,1].
    """
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3 and x.shape[0] == 1:
        x = x[None]
    if x.ndim != 4 or x.shape[0] != 1:
        raise ValueError(f"expected a single image, got shape {np.shape(image)}")
    logits, taps, _ = model.forward_batch(x)
    probs = nn.softmax(logits[0])
    return ForwardTrace(
        pa_score=float(probs[CLASS_ATTACK]),
        logits=logits[0],
        block_features=[t[0] for t in taps],
    )


def pa_scores(model, batch):
    """PA scores for a (N,1,S,S) batch as a length-N vector."""
    logits, _, _ = model.forward_batch(np.asarray(batch, dtype=np.float64))
    return nn.softmax(logits)[:, CLASS_ATTACK]


# ---------------------------------------------------------------------------
# checkpoint serialization
#
# Layout (all integers little-endian):
#   8 bytes   magic "DNPADCKP"
#   u32       format version (1)
#   u32       JSON byte length, then that many UTF-8 bytes
#             ({"config": {...}, "meta": {"epoch":..., "seed":...}})
#   repeated parameter records until EOF:
#     u32     name byte length, then the UTF-8 name
#     u32     rank
#     rank*u64  dims
#     f64*prod(dims)  payload


def save_checkpoint(model, path):
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    header = json.dumps(
        {"config": model.config.to_dict(), "meta": model.meta}, sort_keys=True
    ).encode("utf-8")
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    for name, arr in model.params().items():
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<Q", d))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def _read_exact(f, n, fieldname):
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(data)}", fieldname)
    return data


def load_checkpoint(path, expected_config=None):
    """Rebuild a model from a checkpoint file.

    The config stored in the file wins.  If expected_config is given and
    differs, the mismatch is recorded in model.meta["config_mismatch"]
    rather than raised.
    """
    with open(path, "rb") as f:
        magic = _read_exact(f, len(CHECKPOINT_MAGIC), "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}", "magic")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported version {version}", "version")
        (hlen,) = struct.unpack("<I", _read_exact(f, 4, "header_length"))
        try:
            header = json.loads(_read_exact(f, hlen, "header").decode("utf-8"))
            config = ModelConfig.from_dict(header["config"])
            meta = dict(header.get("meta", {}))
        except (ValueError, KeyError, ConfigError) as e:
            raise CheckpointError(f"unreadable header: {e}", "header") from e

        tensors = {}
        while True:
            lead = f.read(4)
            if not lead:
                break
            if len(lead) != 4:
                raise CheckpointError("truncated checkpoint: partial name length", "param_name_length")
            (nlen,) = struct.unpack("<I", lead)
            name = _read_exact(f, nlen, "param_name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, f"{name}:rank"))
            dims = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank, f"{name}:dims"))
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            payload = _read_exact(f, 8 * count, f"{name}:payload")
            tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)

    model = build_model(config, seed=int(meta.get("seed", 0)))
    model.meta = meta or {"epoch": 0, "seed": 0}
    live = model.params()
    missing = sorted(set(live) - set(tensors))
    extra = sorted(set(tensors) - set(live))
    if missing or extra:
        raise CheckpointError(
            f"parameter names do not match config (missing {missing}, extra {extra})", "parameters"
        )
    for name, arr in tensors.items():
        if live[name].shape != arr.shape:
            raise CheckpointError(
                f"parameter {name} has shape {arr.shape}, config implies {live[name].shape}",
                name,
            )
        live[name][...] = arr
    if expected_config is not None and expected_config.to_dict() != config.to_dict():
        model.meta["config_mismatch"] = {
            "expected": expected_config.to_dict(),
            "found": config.to_dict(),
        }
    return model
