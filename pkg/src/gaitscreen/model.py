"""The screening network.

Pipeline per batch of frame windows: a 3-block convolutional backbone encodes
every frame, each bag (gait phase) is reduced over its frames by temporal
max pooling, a cascade of cross-attention blocks mixes the bag embeddings in
temporal order (the running output queries the next bag's keys/values), the
result is split into horizontal strips that are pooled and projected by
per-strip linear layers, a task text-guidance vector is appended, and two
batchnorm-decoupled heads produce 3-class logits and a borderline-vs-rest
logit. The pre-batchnorm fused vector doubles as the metric-learning feature.
"""

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import BatchNormState, Tensor
from .errors import ConfigError, DataFormatError, ShapeMismatchError
from .tensor_io import load_tensor, save_tensor


@dataclass(frozen=True)
class ModelConfig:
    bags: int = 4
    channels: tuple = (8, 16, 32)
    frame_shape: tuple = (128, 88)
    strips: int = 16
    strip_dim: int = 32
    text_dim: int = 64
    heads: int = 1
    temporal_pool: str = "max"  # or "mean"
    init_seed: int = 0

    def __post_init__(self):
        if self.bags < 1:
            raise ConfigError(f"bags must be >= 1, got {self.bags}")
        if len(self.channels) != 3:
            raise ConfigError(f"backbone has 3 blocks, need 3 channel widths, got {self.channels}")
        if self.temporal_pool not in ("max", "mean"):
            raise ConfigError(f"temporal_pool must be 'max' or 'mean', got {self.temporal_pool!r}")
        h, w = self.feature_shape
        if h % self.strips != 0:
            raise ConfigError(
                f"feature height {h} (from frame {self.frame_shape}) not divisible "
                f"by {self.strips} strips")
        if w < 1:
            raise ConfigError(f"frame shape {self.frame_shape} collapses to zero width")
        if self.channels[-1] % self.heads != 0:
            raise ConfigError(
                f"attention heads {self.heads} must divide channel width {self.channels[-1]}")

    @property
    def feature_shape(self):
        h, w = self.frame_shape
        for _ in range(3):
            h, w = h // 2, w // 2
        return h, w

    @property
    def fused_dim(self):
        return self.strips * self.strip_dim + self.text_dim

    def to_json_dict(self):
        return {
            "bags": self.bags, "channels": list(self.channels),
            "frame_shape": list(self.frame_shape), "strips": self.strips,
            "strip_dim": self.strip_dim, "text_dim": self.text_dim,
            "heads": self.heads, "temporal_pool": self.temporal_pool,
            "init_seed": self.init_seed,
        }

    @classmethod
    def from_json_dict(cls, doc):
        doc = dict(doc)
        for key in ("channels", "frame_shape"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


@dataclass(frozen=True)
class AttentionBlockParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor


@dataclass
class HeadOutputs:
    logits3: Tensor            # [N, 3]
    logits_borderline: Tensor  # [N, 1]
    metric_feature: Tensor     # [N, D] pre-batchnorm (triplet loss input)
    classifier_feature: Tensor  # [N, D] post-batchnorm


def _kaiming_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def cross_attention(q_map: Tensor, kv_map: Tensor, params: AttentionBlockParams,
                    heads: int = 1) -> Tensor:
    """Scaled dot-product cross-attention over spatial tokens, with residual.

    Both maps are [N, C, H, W]; every spatial location is one token of
    dimension C. Queries come from q_map, keys/values from kv_map.
    """
    if q_map.shape != kv_map.shape:
        raise ShapeMismatchError(
            f"cross_attention shape mismatch: query {q_map.shape} vs kv {kv_map.shape}")
    n, c, h, w = q_map.shape
    length = h * w
    dh = c // heads

    def tokens(m):
        return ag.reshape(ag.transpose(m, (0, 2, 3, 1)), (n, length, c))

    def split(m):
        return ag.transpose(ag.reshape(m, (n, length, heads, dh)), (0, 2, 1, 3))

    xq = tokens(q_map)
    xkv = tokens(kv_map)
    q = split(ag.matmul(xq, params.wq))
    k = split(ag.matmul(xkv, params.wk))
    v = split(ag.matmul(xkv, params.wv))
    scores = ag.scale(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    ctx = ag.matmul(ag.softmax(scores, axis=-1), v)
    ctx = ag.reshape(ag.transpose(ctx, (0, 2, 1, 3)), (n, length, c))
    out = ag.matmul(ctx, params.wo) + xq
    return ag.transpose(ag.reshape(out, (n, h, w, c)), (0, 3, 1, 2))


def attention_cascade(bag_maps, params, heads: int = 1) -> Tensor:
    """Fold bag embeddings left to right; K = 1 passes the input through."""
    if len(params) != len(bag_maps) - 1:
        raise ConfigError(
            f"cascade over {len(bag_maps)} bags needs {len(bag_maps) - 1} "
            f"attention blocks, got {len(params)}")
    out = bag_maps[0]
    for block, kv in zip(params, bag_maps[1:]):
        out = cross_attention(out, kv, block, heads=heads)
    return out


class GaitScreenNet:
    """Backbone + bag attention + strip fusion + dual heads."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.init_seed)
        c1, c2, c3 = config.channels
        self.conv_w = []
        self.conv_b = []
        for cin, cout in ((1, c1), (c1, c2), (c2, c3)):
            self.conv_w.append(_kaiming_uniform(rng, (cout, cin, 3, 3), fan_in=cin * 9))
            self.conv_b.append(Tensor(np.zeros(cout), requires_grad=True))
        self.attention = [
            AttentionBlockParams(*(Tensor(0.02 * rng.standard_normal((c3, c3)),
                                          requires_grad=True) for _ in range(4)))
            for _ in range(config.bags - 1)
        ]
        twoc = 2 * c3
        self.strip_w = _kaiming_uniform(
            rng, (config.strips, twoc, config.strip_dim), fan_in=twoc)
        self.strip_b = Tensor(np.zeros((config.strips, 1, config.strip_dim)),
                              requires_grad=True)
        d = config.fused_dim
        self.bn3_gamma = Tensor(np.ones(d), requires_grad=True)
        self.bn3_beta = Tensor(np.zeros(d), requires_grad=True)
        self.bnb_gamma = Tensor(np.ones(d), requires_grad=True)
        self.bnb_beta = Tensor(np.zeros(d), requires_grad=True)
        self.bn3_state = BatchNormState(d)
        self.bnb_state = BatchNormState(d)
        self.head3_w = _kaiming_uniform(rng, (d, 3), fan_in=d)
        self.head3_b = Tensor(np.zeros(3), requires_grad=True)
        self.headb_w = _kaiming_uniform(rng, (d, 1), fan_in=d)
        self.headb_b = Tensor(np.zeros(1), requires_grad=True)

    # -- parameter bookkeeping ------------------------------------------------

    def named_parameters(self):
        params = {}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b), start=1):
            params[f"conv{i}_w"] = w
            params[f"conv{i}_b"] = b
        for i, block in enumerate(self.attention):
            for tag in ("wq", "wk", "wv", "wo"):
                params[f"attn{i}_{tag}"] = getattr(block, tag)
        params["strip_w"] = self.strip_w
        params["strip_b"] = self.strip_b
        params["bn3_gamma"] = self.bn3_gamma
        params["bn3_beta"] = self.bn3_beta
        params["bnb_gamma"] = self.bnb_gamma
        params["bnb_beta"] = self.bnb_beta
        params["head3_w"] = self.head3_w
        params["head3_b"] = self.head3_b
        params["headb_w"] = self.headb_w
        params["headb_b"] = self.headb_b
        return params

    def named_buffers(self):
        return {
            "bn3_running_mean": self.bn3_state.running_mean,
            "bn3_running_var": self.bn3_state.running_var,
            "bnb_running_mean": self.bnb_state.running_mean,
            "bnb_running_var": self.bnb_state.running_var,
        }

    def parameter_count(self):
        return sum(p.size for p in self.named_parameters().values())

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.zero_grad()

    # -- forward pieces -------------------------------------------------------

    def encode_frames(self, x: Tensor) -> Tensor:
        """Backbone on [N, 1, H, W] frames -> [N, C, H/8, W/8] feature maps."""
        for w, b in zip(self.conv_w, self.conv_b):
            x = ag.maxpool2d(ag.relu(ag.conv2d(x, w, bias=b, stride=1, padding=1)))
        return x

    def encode_bag(self, bag: Tensor) -> Tensor:
        """Encode one bag [N, 1, S, H, W]; temporal pooling removes S."""
        if bag.data.ndim != 5:
            raise ShapeMismatchError(f"encode_bag expects [N,1,S,H,W], got {bag.shape}")
        n, _, s, h, w = bag.shape
        if s < 1:
            raise ValueError("encode_bag: bag has no frames")
        flat = ag.reshape(ag.transpose(bag, (0, 2, 1, 3, 4)), (n * s, 1, h, w))
        fmaps = self.encode_frames(flat)
        _, c, fh, fw = fmaps.shape
        stacked = ag.reshape(fmaps, (n, s, c, fh, fw))
        if self.config.temporal_pool == "max":
            return ag.reduce_max(stacked, axis=1)
        return ag.reduce_mean(stacked, axis=1)

    def attention_cascade(self, bag_maps) -> Tensor:
        return attention_cascade(bag_maps, self.attention, heads=self.config.heads)

    def pool_strips(self, fmap: Tensor) -> Tensor:
        """Split [N,C,H,W] into horizontal strips; concat max+mean pools -> [N,strips,2C]."""
        n, c, h, w = fmap.shape
        strips = self.config.strips
        if h % strips != 0:
            raise ShapeMismatchError(f"feature height {h} not divisible by {strips} strips")
        per = ag.reshape(fmap, (n, c, strips, (h // strips) * w))
        mx = ag.transpose(ag.reduce_max(per, axis=3), (0, 2, 1))
        mn = ag.transpose(ag.reduce_mean(per, axis=3), (0, 2, 1))
        return ag.concat([mx, mn], axis=2)

    def project_strips(self, strips: Tensor) -> Tensor:
        """Independent per-strip linear maps, flattened to [N, strips*strip_dim]."""
        n = strips.shape[0]
        x = ag.transpose(strips, (1, 0, 2))          # [strips, N, 2C]
        x = ag.matmul(x, self.strip_w) + self.strip_b
        x = ag.transpose(x, (1, 0, 2))               # [N, strips, d_s]
        return ag.reshape(x, (n, self.config.strips * self.config.strip_dim))

    def fuse_text(self, strips: Tensor, text_vector) -> Tensor:
        """Project strips and append one task's text-guidance vector."""
        return self.append_text(self.project_strips(strips), text_vector)

    def append_text(self, visual: Tensor, text_vector) -> Tensor:
        text_vector = np.asarray(text_vector, dtype=np.float64)
        if text_vector.shape != (self.config.text_dim,):
            raise ConfigError(
                f"text vector has shape {text_vector.shape}, "
                f"expected ({self.config.text_dim},)")
        tiled = Tensor(np.broadcast_to(text_vector, (visual.shape[0], text_vector.size)))
        return ag.concat([visual, tiled], axis=1)

    def heads(self, fused_ternary: Tensor, fused_binary: Tensor, train: bool) -> HeadOutputs:
        """BNNeck split: triplet sees the pre-BN feature, classifiers the post-BN one."""
        metric = fused_ternary
        classifier = ag.batchnorm(metric, self.bn3_gamma, self.bn3_beta,
                                  self.bn3_state, train=train)
        logits3 = ag.matmul(classifier, self.head3_w) + self.head3_b
        normed_b = ag.batchnorm(fused_binary, self.bnb_gamma, self.bnb_beta,
                                self.bnb_state, train=train)
        logits_b = ag.matmul(normed_b, self.headb_w) + self.headb_b
        return HeadOutputs(logits3=logits3, logits_borderline=logits_b,
                           metric_feature=metric, classifier_feature=classifier)

    # -- full pipeline ---------------------------------------------------------

    def forward_windows(self, windows, boundaries, text_ternary, text_binary,
                        train: bool, aggregate: str = "attention") -> HeadOutputs:
        """Run the whole pipeline on a batch of frame windows.

        windows: list of [S_b, H, W] arrays (values in {0,1});
        boundaries: per-window bag boundary arrays of length bags+1;
        aggregate: 'attention' for the cascade, 'mean' to average bag maps.
        """
        k = self.config.bags
        if len(windows) != len(boundaries):
            raise ShapeMismatchError(
                f"{len(windows)} windows but {len(boundaries)} boundary sets")
        frames = np.concatenate([np.asarray(w, dtype=np.float64) for w in windows], axis=0)
        fmaps = self.encode_frames(Tensor(frames[:, None, :, :]))
        offsets = np.cumsum([0] + [len(w) for w in windows])
        bag_maps = []
        for bag_idx in range(k):
            per_window = []
            for w_idx, bounds in enumerate(boundaries):
                lo = offsets[w_idx] + int(bounds[bag_idx])
                hi = offsets[w_idx] + int(bounds[bag_idx + 1])
                if hi <= lo:
                    raise ValueError(f"window {w_idx}: bag {bag_idx} is empty")
                seg = ag.take_range(fmaps, lo, hi, axis=0)
                if self.config.temporal_pool == "max":
                    per_window.append(ag.reduce_max(seg, axis=0, keepdims=True))
                else:
                    per_window.append(ag.reduce_mean(seg, axis=0, keepdims=True))
            bag_maps.append(ag.concat(per_window, axis=0))
        if aggregate == "attention":
            mixed = self.attention_cascade(bag_maps)
        elif aggregate == "mean":
            acc = bag_maps[0]
            for m in bag_maps[1:]:
                acc = acc + m
            mixed = ag.scale(acc, 1.0 / k)
        else:
            raise ConfigError(f"unknown aggregate mode {aggregate!r}")
        visual = self.project_strips(self.pool_strips(mixed))
        fused3 = self.append_text(visual, text_ternary)
        fusedb = self.append_text(visual, text_binary)
        return self.heads(fused3, fusedb, train=train)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: GaitScreenNet, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    for name, param in model.named_parameters().items():
        save_tensor(os.path.join(directory, f"{name}.ten"), param.data)
    for name, buf in model.named_buffers().items():
        save_tensor(os.path.join(directory, f"{name}.ten"), buf)
    with open(os.path.join(directory, "model.json"), "w") as fh:
        json.dump({"config": model.config.to_json_dict()}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(directory) -> GaitScreenNet:
    meta_path = os.path.join(directory, "model.json")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise DataFormatError(f"missing checkpoint metadata: {meta_path}") from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{meta_path}: invalid JSON ({exc})") from None
    try:
        config = ModelConfig.from_json_dict(meta["config"])
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"{meta_path}: bad model config ({exc})") from None
    model = GaitScreenNet(config)
    for name, param in model.named_parameters().items():
        path = os.path.join(directory, f"{name}.ten")
        if not os.path.exists(path):
            raise DataFormatError(f"checkpoint missing parameter file: {path}")
        loaded = load_tensor(path)
        if loaded.shape != param.data.shape:
            raise DataFormatError(
                f"{path}: shape {loaded.shape}, expected {param.data.shape}")
        param.data[...] = loaded
    for name, buf in model.named_buffers().items():
        path = os.path.join(directory, f"{name}.ten")
        if not os.path.exists(path):
            raise DataFormatError(f"checkpoint missing buffer file: {path}")
        loaded = load_tensor(path)
        if loaded.shape != buf.shape:
            raise DataFormatError(f"{path}: shape {loaded.shape}, expected {buf.shape}")
        buf[...] = loaded
    return model
