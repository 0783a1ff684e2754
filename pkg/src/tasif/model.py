"""The TASIF network.

An embedding layer feeds ``L`` blocks. Each block filters every stream in the
frequency domain, lets the ID stream attend with queries and keys built from a
fusion of all streams (values still come from the ID stream alone), runs plain
self-attention on each attribute stream, and finishes with a per-stream
feed-forward sublayer.

Parameters live in a flat ordered ``dict[str, Tensor]``. The functions in this
module are pure: they take the parameter dict and a config and build a fresh
graph on every call.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .core import ops
from .core.fft import irfft_t, is_power_of_two, rfft_t
from .core.tensor import Tensor
from .errors import ConfigError
from .pipeline import InteractionDataset, SequenceBatch

FUSION_MODES = ("sum", "concat_linear", "gate")
FILTER_KINDS = ("adaptive", "learnable", "low_pass", "high_suppress", "none")
MASK_VALUE = -1e9
ALPHA_LOGIT_CLAMP = 30.0
ABLATION_SWITCHES = ("use_tsp", "use_aff", "use_asif", "use_nap", "use_ura", "use_i2a")


@dataclass
class ModelConfig:
    d: int = 256
    n: int = 64
    L: int = 2
    heads: int = 2
    dropout_rate: float = 0.2
    fusion_mode: str = "gate"
    filter_kind: str = "adaptive"
    filter_cutoff: int | None = None  # first suppressed bin for low_pass / high_suppress
    real_filter: bool = False  # adaptive/learnable response without an imaginary plane
    span_days: int = 90
    causal: bool = True
    use_tsp: bool = True
    use_aff: bool = True
    use_asif: bool = True
    use_nap: bool = True
    use_ura: bool = True
    use_i2a: bool = True
    init_std: float = 0.02
    filter_noise: float = 0.02

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.d < 1 or self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"d={self.d} must be a positive multiple of heads={self.heads}")
        if not is_power_of_two(self.n):
            raise ConfigError(f"n={self.n} must be a power of two")
        if self.L < 1:
            raise ConfigError(f"L={self.L} must be at least 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate={self.dropout_rate} must lie in [0, 1)")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"unknown fusion_mode {self.fusion_mode!r}; expected one of {FUSION_MODES}")
        if self.filter_kind not in FILTER_KINDS:
            raise ConfigError(f"unknown filter_kind {self.filter_kind!r}; expected one of {FILTER_KINDS}")
        bins = self.n // 2 + 1
        if self.filter_cutoff is not None and not 1 <= self.filter_cutoff <= bins:
            raise ConfigError(f"filter_cutoff must lie in [1, {bins}]")

    @property
    def bins(self) -> int:
        return self.n // 2 + 1

    @property
    def effective_filter(self) -> str:
        return self.filter_kind if self.use_aff else "none"

    @property
    def cutoff(self) -> int:
        """Number of retained low-frequency bins for the fixed-shape filters."""
        if self.filter_cutoff is not None:
            return self.filter_cutoff
        return max(1, self.bins // 4)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class VocabSizes:
    n_items: int
    attribute_sizes: tuple[int, ...] = ()
    n_time_tokens: int = 1

    @classmethod
    def of(cls, dataset: InteractionDataset) -> "VocabSizes":
        return cls(dataset.n_items, tuple(dataset.attribute_sizes()), dataset.n_time_tokens)

    @property
    def n_attributes(self) -> int:
        return len(self.attribute_sizes)


@dataclass
class ForwardOutput:
    s_id: Tensor
    s_attrs: list[Tensor]
    attention_maps: list[dict[str, np.ndarray]] | None = None
    values: list[np.ndarray] = field(default_factory=list)  # V of the ID pathway per block
    hidden_id: Tensor | None = None
    hidden_attrs: list[Tensor] = field(default_factory=list)


def stream_names(n_attributes: int) -> list[str]:
    return ["id"] + [f"a{j}" for j in range(n_attributes)]


# -- initialisation --------------------------------------------------------

def truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal draws resampled until they fall within two standard deviations."""
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


def inverse_softplus(y: float) -> float:
    return float(y + math.log(-math.expm1(-y)))


def init_params(config: ModelConfig, sizes: VocabSizes, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    d, std = config.d, config.init_std
    params: dict[str, np.ndarray] = {}

    def table(name: str, rows: int, padded: bool = True) -> None:
        w = truncated_normal(rng, (rows, d), std)
        if padded:
            w[0] = 0.0
        params[name] = w

    def dense(prefix: str, d_in: int, d_out: int) -> None:
        params[f"{prefix}.w"] = truncated_normal(rng, (d_in, d_out), std)
        params[f"{prefix}.b"] = np.zeros(d_out)

    def norm(prefix: str) -> None:
        params[f"{prefix}.g"] = np.ones(d)
        params[f"{prefix}.b"] = np.zeros(d)

    table("emb.item", sizes.n_items + 1)
    if config.use_tsp:
        table("emb.time", sizes.n_time_tokens + 1)
    table("emb.pos", config.n, padded=False)
    norm("emb.ln")
    for j, size in enumerate(sizes.attribute_sizes):
        table(f"emb.attr{j}", size + 1)

    streams = stream_names(sizes.n_attributes)
    kind = config.effective_filter
    for layer in range(config.L):
        pre = f"blocks.{layer}"
        for s in streams:
            fp = f"{pre}.filter.{s}"
            if kind in ("adaptive", "learnable"):
                params[f"{fp}.re"] = 1.0 + config.filter_noise * rng.standard_normal((config.bins, d))
                if not config.real_filter:
                    params[f"{fp}.im"] = config.filter_noise * rng.standard_normal((config.bins, d))
            if kind == "high_suppress":
                params[f"{fp}.gamma"] = np.ones(1)
            if kind in ("adaptive", "low_pass", "high_suppress"):
                params[f"{fp}.alpha"] = np.zeros(1)
            if kind != "none":
                norm(f"{fp}.ln")
        if config.use_asif and config.fusion_mode == "concat_linear":
            dense(f"{pre}.fusion", (sizes.n_attributes + 2) * d, d)
        elif config.use_asif and config.fusion_mode == "gate":
            for k in range(sizes.n_attributes + 2):
                dense(f"{pre}.fusion.gate{k}", d, d)
        for s in streams:
            ap = f"{pre}.attn.{s}"
            for proj in ("q", "k", "v", "o"):
                dense(f"{ap}.{proj}", d, d)
            norm(f"{ap}.ln")
            fp = f"{pre}.ffn.{s}"
            dense(f"{fp}.fc1", d, 4 * d)
            dense(f"{fp}.fc2", 4 * d, d)
            norm(f"{fp}.ln")

    if sizes.n_attributes:
        params["attr_weight_logits"] = np.full(sizes.n_attributes, inverse_softplus(1.0))
    if config.use_i2a:
        for j, size in enumerate(sizes.attribute_sizes):
            params[f"i2a.{j}.w"] = truncated_normal(rng, (size, d), std)
            params[f"i2a.{j}.b"] = np.zeros(size)
    return {name: Tensor(v, requires_grad=True, name=name) for name, v in params.items()}


def decay_masks(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Weight-decay masks: the padding row of every embedding table is exempt."""
    masks = {}
    for name, p in params.items():
        if name.startswith("emb.") and name not in ("emb.pos",) and p.ndim == 2:
            m = np.ones(p.shape)
            m[0] = 0.0
            masks[name] = m
    return masks


# -- embedding -------------------------------------------------------------

def embed_sequence(batch: SequenceBatch, params: dict[str, Tensor], config: ModelConfig,
                   training: bool = False, rng: np.random.Generator | None = None
                   ) -> tuple[Tensor, list[Tensor]]:
    """Layer-0 states of the ID stream and every attribute stream.

    Padding positions are zero in every stream. Multi-valued attributes are
    mean-pooled over their value set.
    """
    mask = batch.padding_mask[..., None].astype(np.float64)
    x = ops.embedding(params["emb.item"], batch.items)
    if config.use_tsp:
        x = x + ops.embedding(params["emb.time"], batch.time_tokens)
    if not config.use_asif:
        x = x + params["emb.pos"]
    h = ops.layer_norm(x, params["emb.ln.g"], params["emb.ln.b"])
    h = ops.dropout(h, config.dropout_rate, training, rng) * mask

    attrs = []
    for j, (values, vmask) in enumerate(zip(batch.attributes, batch.attribute_masks)):
        e = ops.embedding(params[f"emb.attr{j}"], values)  # B x n x m x d
        weight = vmask.astype(np.float64) * batch.padding_mask[..., None]
        count = np.maximum(weight.sum(axis=-1, keepdims=True), 1.0)
        attrs.append(ops.sum_(e * (weight / count)[..., None], axis=2))
    return h, attrs


# -- frequency filtering -----------------------------------------------------

def spectral_filter(h: Tensor, filt: Tensor, causal: bool) -> Tensor:
    """Apply a frequency response ``filt`` (bins x d or bins x 1) along the sequence axis.

    Non-causal mode is the plain circular product ``irfft(filt * rfft(h))``.
    Causal mode turns the response into a length-n kernel ``irfft(filt)`` and
    applies it as a linear convolution through a lower-triangular Toeplitz
    product. Future taps are exact zeros there, so outputs at position ``t``
    are bit-for-bit independent of later positions.
    """
    n = h.shape[1]
    if not causal:
        return irfft_t(rfft_t(h, axis=1) * filt, n, axis=1)
    kernel = irfft_t(filt, n, axis=0)                      # n x c
    lag, lower = _causal_lags(n)
    toeplitz = ops.getitem(kernel, lag) * lower            # n x n x c, T[t, s] = k[t - s]
    toeplitz = ops.transpose(toeplitz, (2, 0, 1))          # c x n x n
    x = ops.transpose(h, (2, 1, 0))                        # d x n x B
    return ops.transpose(ops.matmul(toeplitz, x), (2, 1, 0))


@lru_cache(maxsize=None)
def _causal_lags(n: int) -> tuple[np.ndarray, np.ndarray]:
    t = np.arange(n)
    diff = t[:, None] - t[None, :]
    return np.where(diff >= 0, diff, 0), (diff >= 0).astype(np.float64)[..., None]


def filter_response(params: dict[str, Tensor], prefix: str, config: ModelConfig) -> Tensor:
    kind = config.effective_filter
    if kind in ("adaptive", "learnable"):
        if config.real_filter:
            return params[f"{prefix}.re"]
        return ops.complex_from_planes(params[f"{prefix}.re"], params[f"{prefix}.im"])
    low = np.zeros((config.bins, 1))
    low[: config.cutoff] = 1.0
    if kind == "low_pass":
        return Tensor(low)
    if kind == "high_suppress":
        return Tensor(low) + params[f"{prefix}.gamma"] * Tensor(1.0 - low)
    raise ConfigError(f"filter kind {kind!r} has no frequency response")


def blend_ratio(logit: Tensor) -> Tensor:
    """``alpha = sigmoid(logit)``, with the logit clamped so alpha never rounds to 0 or 1."""
    return ops.sigmoid(ops.clip(logit, -ALPHA_LOGIT_CLAMP, ALPHA_LOGIT_CLAMP))


def adaptive_frequency_filter(h: Tensor, params: dict[str, Tensor], prefix: str,
                              config: ModelConfig, training: bool = False,
                              rng: np.random.Generator | None = None) -> Tensor:
    """Filter one stream and blend with its input through the learned ratio ``alpha``."""
    kind = config.effective_filter
    if kind == "none":
        return h
    filtered = spectral_filter(h, filter_response(params, prefix, config), config.causal)
    filtered = ops.dropout(filtered, config.dropout_rate, training, rng)
    if kind == "learnable":
        mixed = filtered + h
    else:
        alpha = blend_ratio(params[f"{prefix}.alpha"])
        mixed = alpha * filtered + (1.0 - alpha) * h
    return ops.layer_norm(mixed, params[f"{prefix}.ln.g"], params[f"{prefix}.ln.b"])


# -- fusion ------------------------------------------------------------------

def fuse_representations(h_id: Tensor, h_attrs: Sequence[Tensor], pos: Tensor,
                         params: dict[str, Tensor], prefix: str, mode: str) -> Tensor:
    """Combine the filtered streams and the position table into one guide tensor."""
    if mode == "sum":
        out = h_id
        for a in h_attrs:
            out = out + a
        return out + pos
    pos_b = ops.broadcast_to(pos, h_id.shape)
    sources = [h_id, *h_attrs, pos_b]
    if mode == "concat_linear":
        return ops.linear(ops.concat(sources, axis=-1), params[f"{prefix}.w"], params[f"{prefix}.b"])
    if mode == "gate":
        out = None
        for k, src in enumerate(sources):
            g = ops.sigmoid(ops.linear(h_id, params[f"{prefix}.gate{k}.w"], params[f"{prefix}.gate{k}.b"]))
            out = g * src if out is None else out + g * src
        return out
    raise ConfigError(f"unknown fusion_mode {mode!r}")


# -- attention -----------------------------------------------------------------

def attention_bias(padding_mask: np.ndarray, causal: bool) -> np.ndarray:
    """Additive mask of shape B x 1 x n x n: 0 where allowed, MASK_VALUE elsewhere."""
    n = padding_mask.shape[1]
    allowed = np.broadcast_to(padding_mask[:, None, None, :], (padding_mask.shape[0], 1, n, n))
    if causal:
        allowed = allowed & np.tril(np.ones((n, n), dtype=bool))
    return np.where(allowed, 0.0, MASK_VALUE)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return ops.transpose(ops.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


def _attend(query_src: Tensor, value_src: Tensor, bias: np.ndarray, params: dict[str, Tensor],
            prefix: str, config: ModelConfig, training: bool, rng,
            key_src: Tensor | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """Multi-head attention with residual and post-norm around ``value_src``.

    Queries come from ``query_src``, keys from ``key_src`` (default
    ``query_src``) and values from ``value_src``. Returns the sublayer output,
    the attention probabilities and ``V``.
    """
    heads = config.heads
    key_src = query_src if key_src is None else key_src
    q = ops.linear(query_src, params[f"{prefix}.q.w"], params[f"{prefix}.q.b"])
    k = ops.linear(key_src, params[f"{prefix}.k.w"], params[f"{prefix}.k.b"])
    v = ops.linear(value_src, params[f"{prefix}.v.w"], params[f"{prefix}.v.b"])
    scale = 1.0 / math.sqrt(config.d // heads)
    scores = ops.matmul(_split_heads(q, heads), ops.swapaxes(_split_heads(k, heads), -1, -2))
    probs = ops.softmax(scores * scale + bias, axis=-1)
    ctx = ops.matmul(ops.dropout(probs, config.dropout_rate, training, rng), _split_heads(v, heads))
    out = ops.linear(_merge_heads(ctx), params[f"{prefix}.o.w"], params[f"{prefix}.o.b"])
    out = ops.dropout(out, config.dropout_rate, training, rng)
    normed = ops.layer_norm(value_src + out, params[f"{prefix}.ln.g"], params[f"{prefix}.ln.b"])
    return normed, probs, v


def asif_attention(h_fused: Tensor, h_id: Tensor, bias: np.ndarray, params: dict[str, Tensor],
                   prefix: str, config: ModelConfig, training: bool = False, rng=None):
    """ID-stream attention guided by the fused representation; values from ``h_id`` only."""
    return _attend(h_fused, h_id, bias, params, prefix, config, training, rng)


def attribute_self_attention(h_attr: Tensor, bias: np.ndarray, params: dict[str, Tensor],
                             prefix: str, config: ModelConfig, training: bool = False, rng=None):
    return _attend(h_attr, h_attr, bias, params, prefix, config, training, rng)


def feed_forward(h: Tensor, params: dict[str, Tensor], prefix: str, config: ModelConfig,
                 training: bool = False, rng=None) -> Tensor:
    inner = ops.gelu(ops.linear(h, params[f"{prefix}.fc1.w"], params[f"{prefix}.fc1.b"]))
    out = ops.linear(inner, params[f"{prefix}.fc2.w"], params[f"{prefix}.fc2.b"])
    out = ops.dropout(out, config.dropout_rate, training, rng)
    return ops.layer_norm(h + out, params[f"{prefix}.ln.g"], params[f"{prefix}.ln.b"])


# -- full pass -------------------------------------------------------------------

def last_positions(padding_mask: np.ndarray) -> np.ndarray:
    """Index of the last real position of each row."""
    n = padding_mask.shape[1]
    if not padding_mask.any(axis=1).all():
        raise ValueError("every row needs at least one non-padding position")
    return n - 1 - np.argmax(padding_mask[:, ::-1], axis=1)


def forward(batch: SequenceBatch, params: dict[str, Tensor], config: ModelConfig,
            training: bool = False, rng: np.random.Generator | None = None,
            keep_attention: bool = False) -> ForwardOutput:
    mask = batch.padding_mask[..., None].astype(np.float64)
    bias = attention_bias(batch.padding_mask, config.causal)
    h_id, h_attrs = embed_sequence(batch, params, config, training, rng)
    maps: list[dict[str, np.ndarray]] = []
    values = []
    for layer in range(config.L):
        pre = f"blocks.{layer}"
        if layer:
            h_id = h_id * mask
            h_attrs = [a * mask for a in h_attrs]
        f_id = adaptive_frequency_filter(h_id, params, f"{pre}.filter.id", config, training, rng)
        f_attrs = [adaptive_frequency_filter(a, params, f"{pre}.filter.a{j}", config, training, rng)
                   for j, a in enumerate(h_attrs)]
        if config.use_asif:
            fused = fuse_representations(f_id, f_attrs, params["emb.pos"], params,
                                         f"{pre}.fusion", config.fusion_mode)
        else:
            fused = f_id
        t_id, p_id, v_id = asif_attention(fused, f_id, bias, params, f"{pre}.attn.id",
                                          config, training, rng)
        values.append(v_id.data)
        block_maps = {"id": p_id.data}
        t_attrs = []
        for j, a in enumerate(f_attrs):
            t, p, _ = attribute_self_attention(a, bias, params, f"{pre}.attn.a{j}", config, training, rng)
            t_attrs.append(t)
            block_maps[f"a{j}"] = p.data
        if keep_attention:
            maps.append(block_maps)
        h_id = feed_forward(t_id, params, f"{pre}.ffn.id", config, training, rng)
        h_attrs = [feed_forward(t, params, f"{pre}.ffn.a{j}", config, training, rng)
                   for j, t in enumerate(t_attrs)]
    h_id = h_id * mask
    h_attrs = [a * mask for a in h_attrs]
    rows = np.arange(batch.size)
    last = last_positions(batch.padding_mask)
    s_id = ops.getitem(h_id, (rows, last))
    s_attrs = [ops.getitem(a, (rows, last)) for a in h_attrs]
    return ForwardOutput(s_id, s_attrs, maps if keep_attention else None, values, h_id, h_attrs)


class TasifModel:
    """A parameter set bundled with its config and vocabulary sizes."""

    def __init__(self, config: ModelConfig, sizes: VocabSizes, seed: int = 0,
                 params: dict[str, Tensor] | None = None):
        self.config = config
        self.sizes = sizes
        self.params = params if params is not None else init_params(config, sizes, seed)

    def forward(self, batch: SequenceBatch, training: bool = False,
                rng: np.random.Generator | None = None, keep_attention: bool = False) -> ForwardOutput:
        return forward(batch, self.params, self.config, training, rng, keep_attention)

    def attribute_weights(self) -> np.ndarray:
        if "attr_weight_logits" not in self.params:
            return np.zeros(0)
        return np.logaddexp(0.0, self.params["attr_weight_logits"].data)

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))
