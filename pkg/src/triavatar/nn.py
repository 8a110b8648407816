"""Layers and optimizer built on the autodiff tensors.

Everything is single-sample (no batch axis): token matrices are (T, D),
feature maps are (H, W, C). Batching happens in the training loop by
averaging per-sample losses.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError, DimensionError

ACT_SLOPE = 0.2  # LeakyReLU negative slope used across the network


class Module:
    """Minimal container tracking Parameters through attribute scanning."""

    def named_parameters(self, prefix: str = ""):
        out = []
        for name, value in vars(self).items():
            key = prefix + name
            if isinstance(value, Parameter):
                out.append((key, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(key + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{key}.{i}."))
                    elif isinstance(item, Parameter):
                        out.append((f"{key}.{i}", item))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(rng.normal(0.0, din ** -0.5, size=(din, dout)))
        self.bias = Parameter(np.zeros(dout)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias, eps=self.eps)


class Identity(Module):
    def forward(self, x: Tensor) -> Tensor:
        return x


class MultiHeadAttention(Module):
    """Scaled dot-product attention over (T, D) token matrices.

    forward(q_tokens) is self-attention; forward(q_tokens, kv_tokens) uses
    the second stream for keys/values (cross-attention). Scores are scaled
    by 1/sqrt(d) with d the per-head key dimension.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, bias: bool = True):
        if dim % heads != 0:
            raise ConfigError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng, bias)
        self.wk = Linear(dim, dim, rng, bias)
        self.wv = Linear(dim, dim, rng, bias)
        self.wo = Linear(dim, dim, rng, bias)

    def forward(self, query: Tensor, context: Tensor | None = None,
                return_weights: bool = False):
        if context is None:
            context = query
        t, d = query.shape
        s = context.shape[0]
        hd = self.head_dim
        q = self.wq(query).reshape(t, self.heads, hd).transpose(1, 0, 2)
        k = self.wk(context).reshape(s, self.heads, hd).transpose(1, 2, 0)
        v = self.wv(context).reshape(s, self.heads, hd).transpose(1, 0, 2)
        scores = (q @ k) * (hd ** -0.5)
        weights = ad.softmax(scores, axis=-1)          # (heads, T, S), rows sum to 1
        mixed = (weights @ v).transpose(1, 0, 2).reshape(t, d)
        out = self.wo(mixed)
        if return_weights:
            return out, weights
        return out


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, bias: bool = True):
        self.lin1 = Linear(dim, hidden, rng, bias)
        self.lin2 = Linear(hidden, dim, rng, bias)

    def forward(self, x: Tensor) -> Tensor:
        return self.lin2(self.lin1(x).leaky_relu(ACT_SLOPE))


class EncoderBlock(Module):
    """Pre-norm self-attention block: x + attn(ln(x)), then x + ffn(ln(x))."""

    def __init__(self, dim: int, heads: int, ffn_hidden: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_hidden, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        x = x + self.ffn(self.ln2(x))
        return x


class CrossDecoderLayer(Module):
    """Post-norm decoder layer: self-attention on the query stream, then
    cross-attention against the context tokens, then feed-forward, with
    residual + layer norm after each sub-layer."""

    def __init__(self, dim: int, heads: int, ffn_hidden: int, rng: np.random.Generator,
                 bias: bool = True, use_norm: bool = True):
        self.self_attn = MultiHeadAttention(dim, heads, rng, bias)
        self.ln1 = LayerNorm(dim) if use_norm else Identity()
        self.cross_attn = MultiHeadAttention(dim, heads, rng, bias)
        self.ln2 = LayerNorm(dim) if use_norm else Identity()
        self.ffn = FeedForward(dim, ffn_hidden, rng, bias)
        self.ln3 = LayerNorm(dim) if use_norm else Identity()

    def forward(self, x: Tensor, context: Tensor) -> Tensor:
        x = self.ln1(x + self.self_attn(x))
        x = self.ln2(x + self.cross_attn(x, context))
        x = self.ln3(x + self.ffn(x))
        return x


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, pad: int = 0, bias: bool = True):
        std = (kernel * kernel * cin) ** -0.5
        self.weight = Parameter(rng.normal(0.0, std, size=(kernel, kernel, cin, cout)))
        self.bias = Parameter(np.zeros(cout)) if bias else None
        self.stride = stride
        self.pad = pad

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class ConvTranspose2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, pad: int = 0, bias: bool = True):
        std = (kernel * kernel * cin) ** -0.5
        self.weight = Parameter(rng.normal(0.0, std, size=(kernel, kernel, cout, cin)))
        self.bias = Parameter(np.zeros(cout)) if bias else None
        self.stride = stride
        self.pad = pad

    def forward(self, x: Tensor) -> Tensor:
        return ad.transposed_conv2d(x, self.weight, self.bias,
                                    stride=self.stride, pad=self.pad)


def _act(x: Tensor) -> Tensor:
    return x.leaky_relu(ACT_SLOPE)


class HourglassStack(Module):
    """One 2-level downsample/upsample conv pyramid with additive skips.

    Spatial dims must be divisible by 4; channel count is preserved.
    """

    def __init__(self, channels: int, rng: np.random.Generator):
        self.pre = Conv2d(channels, channels, 3, rng, pad=1)
        self.down1 = Conv2d(channels, channels, 3, rng, stride=2, pad=1)
        self.enc1 = Conv2d(channels, channels, 3, rng, pad=1)
        self.down2 = Conv2d(channels, channels, 3, rng, stride=2, pad=1)
        self.mid = Conv2d(channels, channels, 3, rng, pad=1)
        self.up2 = ConvTranspose2d(channels, channels, 4, rng, stride=2, pad=1)
        self.up1 = ConvTranspose2d(channels, channels, 4, rng, stride=2, pad=1)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[0] % 4 or x.shape[1] % 4:
            raise DimensionError(f"hourglass input dims must be multiples of 4, got {x.shape}")
        e0 = _act(self.pre(x))
        e1 = _act(self.enc1(_act(self.down1(e0))))
        mid = _act(self.mid(_act(self.down2(e1))))
        u2 = _act(self.up2(mid)) + e1
        u1 = _act(self.up1(u2)) + e0
        return u1


class Hourglass(Module):
    """Stacked hourglass (default 2 stacks) with a final projection conv."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator,
                 width: int | None = None, stacks: int = 2):
        width = width or cin
        self.inproj = Conv2d(cin, width, 3, rng, pad=1)
        self.stacks = [HourglassStack(width, rng) for _ in range(stacks)]
        self.outproj = Conv2d(width, cout, 3, rng, pad=1)

    def forward(self, x: Tensor) -> Tensor:
        y = _act(self.inproj(x))
        for stack in self.stacks:
            y = stack(y)
        return self.outproj(y)


class MLP(Module):
    """LeakyReLU(0.2) trunk with sigmoid outputs, for occupancy/color heads."""

    def __init__(self, din: int, widths, rng: np.random.Generator):
        sizes = [din] + list(widths)
        self.layers = [Linear(sizes[i], sizes[i + 1], rng) for i in range(len(sizes) - 1)]

    def forward(self, x: Tensor) -> Tensor:
        return self.logits(x).sigmoid()

    def logits(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = _act(layer(x))
        return self.layers[-1](x)


class SmallUNet(Module):
    """Compact UNet: optional strided stem, 2-level U with concat skips.

    `down_factor` (1, 2 or 4) shrinks the input before the U so the output
    plane can be smaller than the image.
    """

    def __init__(self, cin: int, cout: int, rng: np.random.Generator,
                 width: int = 16, down_factor: int = 1):
        if down_factor not in (1, 2, 4):
            raise ConfigError("down_factor must be 1, 2 or 4")
        self.stem = []
        c = cin
        f = down_factor
        while f > 1:
            self.stem.append(Conv2d(c, width, 3, rng, stride=2, pad=1))
            c = width
            f //= 2
        self.inconv = Conv2d(c, width, 3, rng, pad=1)
        self.down1 = Conv2d(width, width, 3, rng, stride=2, pad=1)
        self.down2 = Conv2d(width, width * 2, 3, rng, stride=2, pad=1)
        self.mid = Conv2d(width * 2, width * 2, 3, rng, pad=1)
        self.up2 = ConvTranspose2d(width * 2, width, 4, rng, stride=2, pad=1)
        self.dec1 = Conv2d(width * 2, width, 3, rng, pad=1)
        self.up1 = ConvTranspose2d(width, width, 4, rng, stride=2, pad=1)
        self.dec0 = Conv2d(width * 2, width, 3, rng, pad=1)
        self.outconv = Conv2d(width, cout, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.stem:
            x = _act(conv(x))
        e0 = _act(self.inconv(x))
        e1 = _act(self.down1(e0))
        m = _act(self.mid(_act(self.down2(e1))))
        d1 = _act(self.dec1(ad.concat([_act(self.up2(m)), e1], axis=2)))
        d0 = _act(self.dec0(ad.concat([_act(self.up1(d1)), e0], axis=2)))
        return self.outconv(d0)


class Adam:
    """Adaptive-moment optimizer (bias-corrected)."""

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
