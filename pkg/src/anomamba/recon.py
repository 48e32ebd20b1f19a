"""Feature reconstruction: 1x1 reduce, patchify + position embedding,
bidirectional selective-scan blocks, transposed-conv decoder, 1x1 expand.

The token mixer is swappable (``arch``: mamba | conv1 | conv3 | attention)
behind the same reduce/expand contract so architecture comparisons are a
pure configuration change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nnops
from .backbone import FeatureStack
from .errors import ShapeError
from .params import Module
from .scan import ssm_scan
from .tensor import (
    Tensor,
    parameter,
    add_bias,
    concat,
    exp,
    linear,
    matmul,
    relu,
    silu,
    softmax_lastdim,
    softplus,
    tanh,
)
from .utils import kaiming_normal, rng_from, trunc_normal

RECON_ARCHS = ("mamba", "conv1", "conv3", "attention")


@dataclass
class ReconConfig:
    embed_dim: int = 192        # token width D
    depth: int = 8              # number of mixer blocks L
    patch_size: int = 4
    reduced_channels: int = 192  # C1 after the 1x1 reduce
    state_dim: int = 16         # SSM state size N
    conv_width: int = 4         # causal conv taps w
    expand: int = 2             # inner width multiplier
    arch: str = "mamba"
    heads: int = 4              # attention arm only

    def __post_init__(self):
        if self.arch not in RECON_ARCHS:
            raise ValueError(f"arch {self.arch!r} not one of {RECON_ARCHS}")
        for name in ("embed_dim", "depth", "patch_size", "state_dim", "conv_width", "expand"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def inner_dim(self) -> int:
        return self.expand * self.embed_dim


class SsmDirection(Module):
    """One scan direction's parameters: causal conv + selectivity projections."""

    def __init__(self, rng, d_inner: int, n_state: int, width: int, dtype):
        self.conv_k = parameter(trunc_normal(rng, (d_inner, width), dtype=dtype))
        self.conv_b = parameter(np.zeros(d_inner, dtype=dtype))
        self.w_delta = parameter(trunc_normal(rng, (d_inner, d_inner), dtype=dtype))
        self.b_delta = parameter(np.zeros(d_inner, dtype=dtype))
        self.w_b = parameter(trunc_normal(rng, (n_state, d_inner), dtype=dtype))
        self.w_c = parameter(trunc_normal(rng, (n_state, d_inner), dtype=dtype))
        # A = -exp(A_log) stays negative; init follows the usual 1..N ramp.
        self.a_log = parameter(
            np.tile(np.log(np.arange(1, n_state + 1, dtype=np.float64)), (d_inner, 1)).astype(dtype)
        )
        self.d_skip = parameter(np.ones(d_inner, dtype=dtype))


def selective_scan(x: Tensor, params: SsmDirection, direction: str = "forward") -> Tensor:
    """Input-dependent SSM recurrence over a (T, D) or (B, T, D) sequence.

    The backward direction reverses the sequence, scans, and reverses the
    result; its parameters are the caller's concern (pass a direction-specific
    set).
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction {direction!r}")
    t_axis = x.ndim - 2
    if direction == "backward":
        x = x.flip(t_axis)
    delta = softplus(linear(x, params.w_delta, params.b_delta))
    b_seq = linear(x, params.w_b)
    c_seq = linear(x, params.w_c)
    a_neg = -exp(params.a_log)
    y = ssm_scan(x, delta, a_neg, b_seq, c_seq, params.d_skip)
    if direction == "backward":
        y = y.flip(t_axis)
    return y


class MambaBlock(Module):
    """Norm -> x/z projections -> per-direction conv+SiLU+scan -> gate -> out.

    The token update is: normalize, project onto x and z, run x through a
    causal conv + SiLU + selective scan once per direction (the backward
    direction sees the flipped sequence), gate each direction's output with
    SiLU(z), then a linear on the sum plus the residual.
    """

    def __init__(self, rng, dim: int, d_inner: int, n_state: int, width: int, dtype):
        self.norm_g = parameter(np.ones(dim, dtype=dtype))
        self.norm_b = parameter(np.zeros(dim, dtype=dtype))
        self.w_x = parameter(trunc_normal(rng, (d_inner, dim), dtype=dtype))
        self.b_x = parameter(np.zeros(d_inner, dtype=dtype))
        self.w_z = parameter(trunc_normal(rng, (d_inner, dim), dtype=dtype))
        self.b_z = parameter(np.zeros(d_inner, dtype=dtype))
        self.fwd = SsmDirection(rng, d_inner, n_state, width, dtype)
        self.bwd = SsmDirection(rng, d_inner, n_state, width, dtype)
        self.w_out = parameter(trunc_normal(rng, (dim, d_inner), dtype=dtype))
        self.b_out = parameter(np.zeros(dim, dtype=dtype))

    def _direction(self, x: Tensor, params: SsmDirection, reverse: bool) -> Tensor:
        # The flip wraps conv + scan together, so the backward path is a true
        # time reversal (anticausal conv + reverse scan) of the forward one.
        t_axis = x.ndim - 2
        h = x.flip(t_axis) if reverse else x
        h = silu(nnops.conv1d_causal_depthwise(h, params.conv_k, params.conv_b))
        y = selective_scan(h, params, "forward")
        return y.flip(t_axis) if reverse else y

    def forward(self, tokens: Tensor) -> Tensor:
        normed = nnops.normalize(tokens, "layer", self.norm_g, self.norm_b)
        x = linear(normed, self.w_x, self.b_x)
        z = linear(normed, self.w_z, self.b_z)
        gate = silu(z)
        y_f = self._direction(x, self.fwd, reverse=False) * gate
        y_b = self._direction(x, self.bwd, reverse=True) * gate
        return linear(y_f + y_b, self.w_out, self.b_out) + tokens


class PatchEmbed(Module):
    """Non-overlapping strided projection to tokens + learned position embedding."""

    def __init__(self, rng, c_in: int, dim: int, patch: int, grid: int, dtype):
        if grid % patch:
            raise ShapeError(f"grid {grid} not divisible by patch size {patch}")
        self.patch = patch
        self.tokens_per_side = grid // patch
        self.w = parameter(trunc_normal(rng, (dim, c_in, patch, patch), dtype=dtype))
        self.b = parameter(np.zeros(dim, dtype=dtype))
        t = self.tokens_per_side**2
        self.pos = parameter(np.zeros((t, dim), dtype=dtype))

    def forward(self, f: Tensor, with_pos: bool = True) -> Tensor:
        if f.shape[-1] % self.patch or f.shape[-2] % self.patch:
            raise ShapeError(f"feature grid {f.shape} not divisible by patch {self.patch}")
        g = nnops.conv2d(f, self.w, self.b, stride=self.patch)
        batched = f.ndim == 4
        d = g.shape[-3]
        t = g.shape[-1] * g.shape[-2]
        if batched:
            tokens = g.reshape(g.shape[0], d, t).transpose(0, 2, 1)
        else:
            tokens = g.reshape(d, t).transpose(1, 0)
        return add_bias(tokens, self.pos) if with_pos else tokens


class FeatureDecoder(Module):
    """Three transposed convs (strides 2, 2, 1) with instance norm + ReLU
    between and tanh last; maps the latent grid back up by the patch factor."""

    def __init__(self, rng, dim: int, c_out: int, dtype):
        mid1, mid2 = dim, max(dim // 2, 8)
        self.t1_w = parameter(kaiming_normal(rng, (dim, mid1, 2, 2), fan_in=dim * 4, dtype=dtype))
        self.t1_b = parameter(np.zeros(mid1, dtype=dtype))
        self.n1_g = parameter(np.ones(mid1, dtype=dtype))
        self.n1_b = parameter(np.zeros(mid1, dtype=dtype))
        self.t2_w = parameter(kaiming_normal(rng, (mid1, mid2, 2, 2), fan_in=mid1 * 4, dtype=dtype))
        self.t2_b = parameter(np.zeros(mid2, dtype=dtype))
        self.n2_g = parameter(np.ones(mid2, dtype=dtype))
        self.n2_b = parameter(np.zeros(mid2, dtype=dtype))
        self.t3_w = parameter(kaiming_normal(rng, (mid2, c_out, 3, 3), fan_in=mid2 * 9, dtype=dtype))
        self.t3_b = parameter(np.zeros(c_out, dtype=dtype))

    def forward(self, f_lat: Tensor) -> Tensor:
        x = nnops.conv_transpose2d(f_lat, self.t1_w, self.t1_b, stride=2)
        x = relu(nnops.normalize(x, "instance", self.n1_g, self.n1_b))
        x = nnops.conv_transpose2d(x, self.t2_w, self.t2_b, stride=2)
        x = relu(nnops.normalize(x, "instance", self.n2_g, self.n2_b))
        x = nnops.conv_transpose2d(x, self.t3_w, self.t3_b, stride=1, padding=1)
        return tanh(x)


class AttentionBlock(Module):
    """Pre-norm self-attention + MLP, the transformer arm of the mixer swap."""

    def __init__(self, rng, dim: int, heads: int, dtype):
        if dim % heads:
            raise ShapeError(f"embed dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.norm1_g = parameter(np.ones(dim, dtype=dtype))
        self.norm1_b = parameter(np.zeros(dim, dtype=dtype))
        self.w_qkv = parameter(trunc_normal(rng, (3 * dim, dim), dtype=dtype))
        self.b_qkv = parameter(np.zeros(3 * dim, dtype=dtype))
        self.w_proj = parameter(trunc_normal(rng, (dim, dim), dtype=dtype))
        self.b_proj = parameter(np.zeros(dim, dtype=dtype))
        self.norm2_g = parameter(np.ones(dim, dtype=dtype))
        self.norm2_b = parameter(np.zeros(dim, dtype=dtype))
        hidden = 2 * dim
        self.w_m1 = parameter(trunc_normal(rng, (hidden, dim), dtype=dtype))
        self.b_m1 = parameter(np.zeros(hidden, dtype=dtype))
        self.w_m2 = parameter(trunc_normal(rng, (dim, hidden), dtype=dtype))
        self.b_m2 = parameter(np.zeros(dim, dtype=dtype))

    def forward(self, tokens: Tensor) -> Tensor:
        squeeze = tokens.ndim == 2
        x = tokens.reshape(1, *tokens.shape) if squeeze else tokens
        b, t, d = x.shape
        h = self.heads
        dh = d // h
        qkv = linear(nnops.normalize(x, "layer", self.norm1_g, self.norm1_b), self.w_qkv, self.b_qkv)
        qkv = qkv.reshape(b, t, 3, h, dh).transpose(2, 0, 3, 1, 4).reshape(3, b * h, t, dh)
        q_, k_, v_ = _split3(qkv)
        attn = softmax_lastdim(matmul(q_, k_.transpose(0, 2, 1)) * (1.0 / np.sqrt(dh)))
        mixed = matmul(attn, v_)  # (b*h, t, dh)
        mixed = mixed.reshape(b, h, t, dh).transpose(0, 2, 1, 3).reshape(b, t, d)
        x = x + linear(mixed, self.w_proj, self.b_proj)
        y = linear(nnops.normalize(x, "layer", self.norm2_g, self.norm2_b), self.w_m1, self.b_m1)
        x = x + linear(silu(y), self.w_m2, self.b_m2)
        return x.reshape(t, d) if squeeze else x


def _split3(x3: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Split the leading axis of a (3, ...) tensor into three tensors."""
    from .tensor import from_op

    def make(i):
        def back(g):
            full = np.zeros_like(x3.data)
            full[i] = g
            return (full,)

        return from_op(x3.data[i].copy(), (x3,), back)

    return make(0), make(1), make(2)


class ConvStack(Module):
    """Plain conv mixer (1x1 or 3x3) applied at the full feature grid."""

    def __init__(self, rng, c1: int, k: int, layers: int, dtype):
        pad = k // 2
        self.pad = pad
        self.k = k
        self.convs = []
        self.norms = []
        for i in range(layers):
            w = parameter(kaiming_normal(rng, (c1, c1, k, k), fan_in=c1 * k * k, dtype=dtype))
            b = parameter(np.zeros(c1, dtype=dtype))
            self.convs.append(_Pair(w, b))
            if i < layers - 1:
                g = parameter(np.ones(c1, dtype=dtype))
                bb = parameter(np.zeros(c1, dtype=dtype))
                self.norms.append(_Pair(g, bb))

    def forward(self, f: Tensor) -> Tensor:
        x = f
        for i, conv in enumerate(self.convs):
            x = nnops.conv2d(x, conv.w, conv.b, stride=1, padding=self.pad)
            if i < len(self.convs) - 1:
                norm = self.norms[i]
                x = relu(nnops.normalize(x, "instance", norm.w, norm.b))
        return tanh(x)


class _Pair(Module):
    def __init__(self, w: Tensor, b: Tensor):
        self.w = w
        self.b = b


class FeatureReconstructor(Module):
    """reduce -> mixer -> (decode) -> expand; maps F toward the clean features."""

    def __init__(self, cfg: ReconConfig, c_feat: int, grid: int, seed: int, dtype=np.float32):
        if cfg.reduced_channels > c_feat:
            raise ShapeError(
                f"reduced channels {cfg.reduced_channels} exceed feature channels {c_feat}"
            )
        self.cfg_meta = cfg
        self.grid_meta = grid
        rng = rng_from(seed, "recon", cfg.arch)
        c1 = cfg.reduced_channels
        self.reduce_w = parameter(kaiming_normal(rng, (c1, c_feat, 1, 1), fan_in=c_feat, dtype=dtype))
        self.reduce_b = parameter(np.zeros(c1, dtype=dtype))
        if cfg.arch in ("mamba", "attention"):
            self.patch = PatchEmbed(rng, c1, cfg.embed_dim, cfg.patch_size, grid, dtype)
            if cfg.arch == "mamba":
                self.blocks = [
                    MambaBlock(rng, cfg.embed_dim, cfg.inner_dim, cfg.state_dim, cfg.conv_width, dtype)
                    for _ in range(cfg.depth)
                ]
            else:
                self.blocks = [AttentionBlock(rng, cfg.embed_dim, cfg.heads, dtype) for _ in range(cfg.depth)]
            self.decoder = FeatureDecoder(rng, cfg.embed_dim, c1, dtype)
        else:
            k = 1 if cfg.arch == "conv1" else 3
            self.stack = ConvStack(rng, c1, k, layers=4, dtype=dtype)
        self.expand_w = parameter(kaiming_normal(rng, (c_feat, c1, 1, 1), fan_in=c1, dtype=dtype))
        self.expand_b = parameter(np.zeros(c_feat, dtype=dtype))

    def reduce(self, f: Tensor) -> Tensor:
        return nnops.conv2d(f, self.reduce_w, self.reduce_b)

    def expand(self, f: Tensor) -> Tensor:
        return nnops.conv2d(f, self.expand_w, self.expand_b)

    def _tokens_to_grid(self, tokens: Tensor, batched: bool) -> Tensor:
        cfg = self.cfg_meta
        side = self.grid_meta // cfg.patch_size
        if batched:
            b = tokens.shape[0]
            return tokens.transpose(0, 2, 1).reshape(b, cfg.embed_dim, side, side)
        return tokens.transpose(1, 0).reshape(cfg.embed_dim, side, side)

    def forward(self, stack: FeatureStack) -> FeatureStack:
        f = stack.data
        if f.shape[-1] != self.grid_meta or f.shape[-2] != self.grid_meta:
            raise ShapeError(f"feature grid {f.shape} vs configured {self.grid_meta}")
        cfg = self.cfg_meta
        reduced = self.reduce(f)
        if cfg.arch in ("mamba", "attention"):
            tokens = self.patch.forward(reduced)
            for block in self.blocks:
                tokens = block.forward(tokens)
            f_lat = self._tokens_to_grid(tokens, batched=f.ndim == 4)
            body = self.decoder.forward(f_lat)
        else:
            body = self.stack.forward(reduced)
        out = self.expand(body)
        return FeatureStack(data=out, origin="f_hat")
