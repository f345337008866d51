"""Multi-scale dilated attention blocks.

A block splits the channels into heads, runs the windowed dilated attention
with a per-head dilation rate, concatenates the heads and applies an output
projection. Around that sits the usual pre-norm transformer plumbing: a
depth-wise 3x3 convolution added residually as a conditional position
encoding, then attention and MLP branches with residual connections.

The same block shell also hosts ordinary global multi-head self-attention,
selected per stage by kind 'D' (dilated) or 'G' (global).

Head i receives dilation rate rates[i % len(rates)]; the head count must be
a multiple of the number of rates so every rate is used equally often.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .autograd import Node, Parameter, graph
from .errors import ConfigError, ShapeError
from .swda import SwdaConfig

LN_EPS = 1e-5


@dataclass(frozen=True)
class MsdaBlockSpec:
    dim: int
    n_heads: int
    dilation_rates: tuple[int, ...] = (1, 2, 3)
    kernel_w: int = 3
    edge_mode: str = "zero_pad"
    mlp_ratio: int = 4
    qkv_bias: bool = True

    def __post_init__(self):
        if self.dim % self.n_heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by n_heads {self.n_heads}")
        rates = tuple(self.dilation_rates)
        if rates and self.n_heads % len(rates) != 0:
            raise ConfigError(
                f"n_heads {self.n_heads} must be a multiple of the number of "
                f"dilation rates {len(rates)}"
            )
        if any(r < 1 for r in rates):
            raise ConfigError(f"dilation rates must be >= 1, got {rates}")
        if self.kernel_w < 1 or self.kernel_w % 2 == 0:
            raise ConfigError(f"kernel_w must be odd and >= 1, got {self.kernel_w}")

    @property
    def d_k(self) -> int:
        return self.dim // self.n_heads

    def head_rates(self) -> tuple[int, ...]:
        """Per-head rates, cycling the configured list across the heads."""
        rates = tuple(self.dilation_rates)
        return tuple(rates[i % len(rates)] for i in range(self.n_heads))

    def head_cfg(self, head: int) -> SwdaConfig:
        return SwdaConfig(
            w=self.kernel_w,
            r=self.head_rates()[head],
            d_k=self.d_k,
            edge_mode=self.edge_mode,
        )


_TRUNC_LO = ndtr(-2.0)
_TRUNC_HI = ndtr(2.0)


def trunc_normal(rng: np.random.Generator, shape, std=0.02, dtype=np.float32):
    """Truncated normal init (cut at +/-2 sigma), the usual ViT convention.

    Inverse-CDF sampling: map uniforms into the [-2, 2] quantile band.
    """
    u = rng.random(shape)
    return (ndtri(_TRUNC_LO + u * (_TRUNC_HI - _TRUNC_LO)) * std).astype(dtype)


def block_param_shapes(spec: MsdaBlockSpec, prefix: str) -> dict[str, tuple[int, ...]]:
    """Shapes of one block's parameters, keyed by '<prefix>.<leaf>' paths.

    Insertion order is the initialization order, so it must stay stable.
    """
    d = spec.dim
    hidden = spec.mlp_ratio * d
    shapes: dict[str, tuple[int, ...]] = {}
    shapes[f"{prefix}.cpe.weight"] = (3, 3, 1, d)
    shapes[f"{prefix}.cpe.bias"] = (d,)
    shapes[f"{prefix}.norm1.gamma"] = (d,)
    shapes[f"{prefix}.norm1.beta"] = (d,)
    shapes[f"{prefix}.qkv.weight"] = (d, 3 * d)
    if spec.qkv_bias:
        shapes[f"{prefix}.qkv.bias"] = (3 * d,)
    shapes[f"{prefix}.proj.weight"] = (d, d)
    shapes[f"{prefix}.proj.bias"] = (d,)
    shapes[f"{prefix}.norm2.gamma"] = (d,)
    shapes[f"{prefix}.norm2.beta"] = (d,)
    shapes[f"{prefix}.mlp.fc1.weight"] = (d, hidden)
    shapes[f"{prefix}.mlp.fc1.bias"] = (hidden,)
    shapes[f"{prefix}.mlp.fc2.weight"] = (hidden, d)
    shapes[f"{prefix}.mlp.fc2.bias"] = (d,)
    return shapes


def _get(params: dict[str, Parameter], prefix: str, leaf: str, required=True):
    p = params.get(f"{prefix}.{leaf}")
    if p is None and required:
        raise ConfigError(f"missing parameter {prefix}.{leaf}")
    return p


def _qkv(g: graph, x: Node, spec: MsdaBlockSpec, params, prefix) -> tuple[Node, Node, Node]:
    w = g.param(_get(params, prefix, "qkv.weight"))
    b = _get(params, prefix, "qkv.bias", required=spec.qkv_bias)
    qkv = g.linear(x, w, g.param(b) if b is not None else None)
    d = spec.dim
    return (
        g.slice_last(qkv, 0, d),
        g.slice_last(qkv, d, 2 * d),
        g.slice_last(qkv, 2 * d, 3 * d),
    )


def msda_attention(
    g: graph,
    x: Node,
    spec: MsdaBlockSpec,
    params: dict[str, Parameter],
    prefix: str,
    attn_sink: list | None = None,
) -> Node:
    """Windowed dilated attention with one dilation rate per head."""
    if x.data.ndim != 3 or x.data.shape[-1] != spec.dim:
        raise ShapeError(f"expected [H, W, {spec.dim}] input, got {x.data.shape}")
    if not spec.dilation_rates:
        raise ConfigError("dilated attention requires at least one dilation rate")
    q, k, v = _qkv(g, x, spec, params, prefix)
    d_k = spec.d_k
    heads = []
    for i in range(spec.n_heads):
        lo, hi = i * d_k, (i + 1) * d_k
        heads.append(
            g.swda(
                g.slice_last(q, lo, hi),
                g.slice_last(k, lo, hi),
                g.slice_last(v, lo, hi),
                spec.head_cfg(i),
                attn_sink=attn_sink,
                layer=f"{prefix}.head{i}",
            )
        )
    out = g.concat_last(heads)
    return g.linear(
        out, g.param(_get(params, prefix, "proj.weight")), g.param(_get(params, prefix, "proj.bias"))
    )


def mhsa_attention(
    g: graph,
    x: Node,
    n_heads: int,
    params: dict[str, Parameter],
    prefix: str,
    spec: MsdaBlockSpec | None = None,
    attn_sink: list | None = None,
) -> Node:
    """Global multi-head self-attention over all H*W tokens."""
    h, w, dim = x.data.shape
    if dim % n_heads != 0:
        raise ShapeError(f"dim {dim} not divisible by n_heads {n_heads}")
    spec = spec or MsdaBlockSpec(dim=dim, n_heads=n_heads, dilation_rates=(1,))
    tokens = h * w
    q, k, v = _qkv(g, x, spec, params, prefix)
    qf = g.reshape(q, (tokens, dim))
    kf = g.reshape(k, (tokens, dim))
    vf = g.reshape(v, (tokens, dim))
    d_k = dim // n_heads
    scale = 1.0 / math.sqrt(d_k)
    heads = []
    for i in range(n_heads):
        lo, hi = i * d_k, (i + 1) * d_k
        qi = g.slice_last(qf, lo, hi)
        ki = g.slice_last(kf, lo, hi)
        vi = g.slice_last(vf, lo, hi)
        scores = g.scale(g.matmul(qi, g.transpose2d(ki)), scale)
        attn = g.softmax_last(scores)
        if attn_sink is not None:
            attn_sink.append((f"{prefix}.head{i}", None, attn.data.copy()))
        heads.append(g.matmul(attn, vi))
    out = g.concat_last(heads)
    out = g.linear(
        out, g.param(_get(params, prefix, "proj.weight")), g.param(_get(params, prefix, "proj.bias"))
    )
    return g.reshape(out, (h, w, dim))


def transformer_block(
    g: graph,
    x: Node,
    spec: MsdaBlockSpec,
    params: dict[str, Parameter],
    prefix: str,
    kind: str = "MSDA",
    attn_sink: list | None = None,
) -> Node:
    """CPE + pre-norm attention + pre-norm MLP, all residual."""
    if kind not in ("MSDA", "MHSA"):
        raise ConfigError(f"block kind must be 'MSDA' or 'MHSA', got {kind!r}")
    cpe = g.conv2d(
        x,
        g.param(_get(params, prefix, "cpe.weight")),
        stride=1,
        zero_pad=1,
        groups=spec.dim,
    )
    cpe = g.add_bias(cpe, g.param(_get(params, prefix, "cpe.bias")))
    x = g.add(cpe, x)

    normed = g.layernorm(
        x,
        g.param(_get(params, prefix, "norm1.gamma")),
        g.param(_get(params, prefix, "norm1.beta")),
        eps=LN_EPS,
    )
    if kind == "MSDA":
        attn = msda_attention(g, normed, spec, params, prefix, attn_sink=attn_sink)
    else:
        attn = mhsa_attention(
            g, normed, spec.n_heads, params, prefix, spec=spec, attn_sink=attn_sink
        )
    y = g.add(attn, x)

    normed2 = g.layernorm(
        y,
        g.param(_get(params, prefix, "norm2.gamma")),
        g.param(_get(params, prefix, "norm2.beta")),
        eps=LN_EPS,
    )
    hidden = g.linear(
        normed2,
        g.param(_get(params, prefix, "mlp.fc1.weight")),
        g.param(_get(params, prefix, "mlp.fc1.bias")),
    )
    hidden = g.gelu(hidden)
    mlp = g.linear(
        hidden,
        g.param(_get(params, prefix, "mlp.fc2.weight")),
        g.param(_get(params, prefix, "mlp.fc2.bias")),
    )
    return g.add(mlp, y)
