"""Trainable DSU-Net blocks and the full network assembly.

Adapter, channel resampling, wavelet downsampling (WTD), receptive-field
reduction (RFB), content-guided attention fusion (CGA), spatial feature
fusion (SFF) decoding, point-wise heads, and the four fusion variants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .encoders import FeaturePyramid, ToyHiera, ToyViT
from .nn import Conv2d, Linear, Module
from .tensor import (
    ShapeError,
    Tensor,
    _accumulate,
    _make,
    bilinear_resize,
    concat,
    crop2d,
    gelu,
    mul,
    narrow,
    pad_reflect_br,
    reduce,
    relu,
    reshape,
    sigmoid,
    softmax_over_branch,
    transpose,
)


def channel_resample(x, out_channels):
    """Linear interpolation along the channel axis of a C x H x W map.

    Output channel j samples input coordinate j * (Cin-1) / (Cout-1)
    (corner-aligned); parameter-free and differentiable.
    """
    cin = x.data.shape[0]
    if out_channels == cin:
        return x
    if out_channels > 1:
        pos = np.arange(out_channels) * ((cin - 1) / (out_channels - 1))
    else:
        pos = np.zeros(1)
    j0 = np.floor(pos).astype(np.intp)
    j1 = np.minimum(j0 + 1, cin - 1)
    frac = (pos - j0).astype(x.dtype)
    w0 = (1 - frac)[:, None, None]
    w1 = frac[:, None, None]
    out_data = x.data[j0] * w0 + x.data[j1] * w1

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, j0, g * w0)
        np.add.at(gx, j1, g * w1)
        _accumulate(x, gx)

    return _make(out_data, (x,), backward)


# orthonormal 2x2 Haar mixing matrix applied to the (y00, y01, y10, y11)
# corners of each block; symmetric and self-inverse
def _haar_mix(a, b, c, d):
    ll = (a + b + c + d) * 0.5
    lh = (a - b + c - d) * 0.5
    hl = (a + b - c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    return ll, lh, hl, hh


def haar_dwt2(x):
    """One-level orthonormal Haar analysis: C x H x W -> 4C x H/2 x W/2.

    Sub-bands stacked on channels in LL, LH, HL, HH order.  H and W must
    be even (the wavelet downsampling block reflect-pads odd inputs first).
    """
    c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"haar_dwt2 needs even spatial extents, got {h}x{w}")
    d = x.data
    a, b_, c_, d_ = d[:, 0::2, 0::2], d[:, 0::2, 1::2], d[:, 1::2, 0::2], d[:, 1::2, 1::2]
    ll, lh, hl, hh = _haar_mix(a, b_, c_, d_)
    out_data = np.concatenate([ll, lh, hl, hh], axis=0)

    def backward(g):
        gll, glh, ghl, ghh = np.split(g, 4, axis=0)
        ga, gb, gc, gd = _haar_mix(gll, glh, ghl, ghh)
        gx = np.empty_like(x.data)
        gx[:, 0::2, 0::2] = ga
        gx[:, 0::2, 1::2] = gb
        gx[:, 1::2, 0::2] = gc
        gx[:, 1::2, 1::2] = gd
        _accumulate(x, gx)

    return _make(out_data, (x,), backward)


def haar_idwt2(x):
    """Exact inverse of haar_dwt2: 4C x H x W -> C x 2H x 2W."""
    c4, h, w = x.data.shape
    if c4 % 4:
        raise ShapeError("haar_idwt2 needs a channel count divisible by 4")
    ll, lh, hl, hh = np.split(x.data, 4, axis=0)
    a, b_, c_, d_ = _haar_mix(ll, lh, hl, hh)
    out_data = np.empty((c4 // 4, 2 * h, 2 * w), dtype=x.dtype)
    out_data[:, 0::2, 0::2] = a
    out_data[:, 0::2, 1::2] = b_
    out_data[:, 1::2, 0::2] = c_
    out_data[:, 1::2, 1::2] = d_

    def backward(g):
        ga = g[:, 0::2, 0::2]
        gb = g[:, 0::2, 1::2]
        gc = g[:, 1::2, 0::2]
        gd = g[:, 1::2, 1::2]
        gll, glh, ghl, ghh = _haar_mix(ga, gb, gc, gd)
        _accumulate(x, np.concatenate([gll, glh, ghl, ghh], axis=0))

    return _make(out_data, (x,), backward)


class Adapter(Module):
    """Residual bottleneck applied per position over the channel axis.

    linear(C -> b) -> GeLU -> linear(b -> C) -> GeLU, added to the input.
    The up-projection starts at zero so training begins from the frozen
    features unperturbed.
    """

    def __init__(self, channels, ratio, rng):
        super().__init__()
        bottleneck = max(1, round(channels * ratio))
        self.down = self.add("down", Linear(channels, bottleneck, rng))
        self.up = self.add("up", Linear(bottleneck, channels, rng))
        self.up.weight.data[:] = 0.0
        self.up.bias.data[:] = 0.0

    def forward(self, x):
        c, h, w = x.data.shape
        t = transpose(x, (1, 2, 0))
        t = gelu(self.down(t))
        t = gelu(self.up(t))
        return x + transpose(t, (2, 0, 1))

    __call__ = forward


class WaveletDownsample(Module):
    """Depthwise-separable convolution in Haar sub-band space, then resize.

    reflect-pad to even dims -> dwt -> depthwise 3x3 per sub-band -> idwt
    -> crop -> pointwise 1x1 -> bilinear resize to the target extent.
    """

    def __init__(self, channels, rng):
        super().__init__()
        self.channels = channels
        self.subband = self.add(
            "subband", Conv2d(4 * channels, 4 * channels, 3, rng, padding=1,
                              groups=4 * channels))
        self.pointwise = self.add("pointwise", Conv2d(channels, channels, 1, rng))

    def identity_init(self):
        """Make the block an exact bilinear resize (used by the contract test)."""
        self.subband.weight.data[:] = 0.0
        self.subband.weight.data[:, 0, 1, 1] = 1.0
        self.subband.bias.data[:] = 0.0
        self.pointwise.weight.data[:] = np.eye(self.channels, dtype=np.float32)[
            :, :, None, None
        ]
        self.pointwise.bias.data[:] = 0.0
        return self

    def forward(self, x, target_h, target_w):
        c, h, w = x.data.shape
        y = pad_reflect_br(x, h % 2, w % 2)
        y = haar_dwt2(y)
        y = self.subband(y)
        y = haar_idwt2(y)
        y = crop2d(y, h, w)
        y = self.pointwise(y)
        return bilinear_resize(y, target_h, target_w)

    __call__ = forward


class RFB(Module):
    """Parallel dilated branches compressing features to a common width.

    Four branches (1x1; 1x1 -> 3x3 d=3; 1x1 -> 3x3 d=5; 1x1 -> 3x3 d=7)
    are concatenated, mixed by a 3x3 convolution, summed with a 1x1
    shortcut projection, and rectified.
    """

    DILATIONS = (3, 5, 7)

    def __init__(self, in_channels, out_channels, rng):
        super().__init__()
        q = max(1, out_channels // 4)
        self.reduce0 = self.add("reduce0", Conv2d(in_channels, q, 1, rng))
        self.branches = []
        for i, d in enumerate(self.DILATIONS, start=1):
            red = self.add(f"reduce{i}", Conv2d(in_channels, q, 1, rng))
            dil = self.add(f"dilated{i}", Conv2d(q, q, 3, rng, padding=d, dilation=d))
            self.branches.append((red, dil))
        self.mix = self.add("mix", Conv2d(4 * q, out_channels, 3, rng, padding=1))
        self.shortcut = self.add("shortcut", Conv2d(in_channels, out_channels, 1, rng))

    def forward(self, x):
        feats = [self.reduce0(x)]
        for red, dil in self.branches:
            feats.append(dil(red(x)))
        y = self.mix(concat(feats, axis=0))
        return relu(y + self.shortcut(x))

    __call__ = forward


class CGA(Module):
    """Content-guided fusion of two same-shaped maps.

    Channel and spatial attentions over the sum form a coarse map; a
    depthwise-separable refinement turns it into per-pixel weights that
    convexly blend the two inputs before a final 1x1 projection.
    """

    def __init__(self, channels, rng):
        super().__init__()
        hidden = max(1, channels // 4)
        self.ch_down = self.add("ch_down", Linear(channels, hidden, rng))
        self.ch_up = self.add("ch_up", Linear(hidden, channels, rng))
        self.spatial = self.add("spatial", Conv2d(2, 1, 7, rng, padding=3))
        self.px_depthwise = self.add(
            "px_depthwise", Conv2d(channels, channels, 3, rng, padding=1,
                                   groups=channels))
        self.px_pointwise = self.add("px_pointwise", Conv2d(channels, channels, 1, rng))
        self.proj = self.add("proj", Conv2d(channels, channels, 1, rng))

    def forward(self, x, y, return_internals=False):
        if x.data.shape != y.data.shape:
            raise ShapeError(f"CGA inputs differ: {x.data.shape} vs {y.data.shape}")
        c = x.data.shape[0]
        u = x + y
        gap = reshape(reduce(u, "mean", "spatial"), (c,))
        wc = sigmoid(self.ch_up(relu(self.ch_down(gap))))
        wc = reshape(wc, (c, 1, 1))
        stats = concat([reduce(u, "mean", "channel"), reduce(u, "max", "channel")],
                       axis=0)
        ws = sigmoid(self.spatial(stats))
        coarse = wc + ws  # broadcast to C x H x W
        w = sigmoid(self.px_pointwise(self.px_depthwise(u + coarse)))
        fused = mul(x, w) + mul(y, 1.0 - w)
        out = self.proj(fused)
        if return_internals:
            return out, {
                "channel_attention": wc,
                "spatial_attention": ws,
                "pixel_attention": w,
                "blend": fused,
            }
        return out

    __call__ = forward


class SFF(Module):
    """Per-pixel softmax blending of a fine map and an upsampled coarse map."""

    def __init__(self, channels, rng):
        super().__init__()
        self.gate = self.add("gate", Conv2d(2 * channels, 2, 1, rng))
        self.out = self.add("out", Conv2d(channels, channels, 3, rng, padding=1))

    def forward(self, low, high, return_weights=False):
        if low.data.shape[0] != high.data.shape[0]:
            raise ShapeError(
                f"SFF channel mismatch: {low.data.shape[0]} vs {high.data.shape[0]}")
        _, h, w = low.data.shape
        high_up = bilinear_resize(high, h, w)
        weights = softmax_over_branch(self.gate(concat([low, high_up], axis=0)))
        a_low = narrow(weights, 0, 0, 1)
        a_high = narrow(weights, 0, 1, 1)
        fused = mul(low, a_low) + mul(high_up, a_high)
        out = self.out(fused)
        if return_weights:
            return out, weights
        return out

    __call__ = forward


class DecodeHead(Module):
    """1x1 point-wise convolution to logits, then bilinear upsampling."""

    def __init__(self, channels, rng):
        super().__init__()
        self.proj = self.add("proj", Conv2d(channels, 1, 1, rng))

    def forward(self, x, out_h, out_w):
        return bilinear_resize(self.proj(x), out_h, out_w)

    __call__ = forward


@dataclass
class DecoderOutputs:
    """Logit maps 1 x H x W, ordered coarsest decoder stage to final stage."""

    d1: Tensor
    d2: Tensor
    d3: Tensor

    def levels(self):
        return [self.d1, self.d2, self.d3]


class DSUNet(Module):
    """Dual-encoder U-shaped network with frozen backbones.

    Trainable set: adapters, wavelet downsampling, RFB reductions, CGA
    fusions, SFF decoders, and heads.  Both encoders are frozen.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        profile = config.resolved_profile
        self.profile = profile
        rng = np.random.default_rng(config.seed)

        self.hiera = self.add("encoder.hiera", ToyHiera(profile, rng))
        self.vit = self.add("encoder.vit", ToyViT(profile, rng))

        chans = profile.hiera_channels
        self.adapters = [
            self.add(f"adapter{i + 1}", Adapter(c, config.adapter_ratio, rng))
            for i, c in enumerate(chans)
        ]

        variant = config.variant
        self.wtds = []
        self.cgas = []
        if variant == "full":
            self.wtds = [self.add("wtd", WaveletDownsample(chans[3], rng))]
            self.cgas = [self.add("cga", CGA(chans[3], rng))]
        elif variant in ("B", "C"):
            for i, c in enumerate(chans):
                self.wtds.append(
                    self.add(f"wtd{i + 1}", WaveletDownsample(c, rng)))
                self.cgas.append(self.add(f"cga{i + 1}", CGA(c, rng)))

        rc = config.reduced_channels
        self.rfbs = [
            self.add(f"rfb{i + 1}", RFB(c, rc, rng)) for i, c in enumerate(chans)
        ]
        self.sffs = [self.add(f"sff{i + 1}", SFF(rc, rng)) for i in range(3)]
        self.heads = [self.add(f"head{i + 1}", DecodeHead(rc, rng)) for i in range(3)]

        self.hiera.freeze()
        self.vit.freeze()

    # -- forward ---------------------------------------------------------

    def encode(self, image_main, image_aux):
        s1, s2, s3, s4 = self.hiera(image_main)
        v, taps = self.vit(image_aux)
        return FeaturePyramid(s1, s2, s3, s4, v, taps)

    def forward_pyramid(self, pyramid: FeaturePyramid, out_h=None, out_w=None):
        self._check_pyramid(pyramid)
        out_h = out_h or self.profile.main_size
        out_w = out_w or self.profile.main_size
        adapted = [ad(s) for ad, s in zip(self.adapters, pyramid.levels())]

        variant = self.config.variant
        fused = list(adapted)
        if variant == "full":
            s4 = adapted[3]
            c4 = s4.data.shape[0]
            _, h4, w4 = s4.data.shape
            v_res = channel_resample(pyramid.v, c4)
            fused[3] = self.cgas[0](s4, self.wtds[0](v_res, h4, w4))
        elif variant in ("B", "C"):
            if variant == "B":
                if not pyramid.v_taps or len(pyramid.v_taps) < 4:
                    raise ShapeError("variant B requires four ViT tap features")
                sources = pyramid.v_taps[:4]
            else:
                sources = [pyramid.v] * 4
            for i, (s_i, src) in enumerate(zip(adapted, sources)):
                c_i, h_i, w_i = s_i.data.shape
                v_res = channel_resample(src, c_i)
                fused[i] = self.cgas[i](s_i, self.wtds[i](v_res, h_i, w_i))
        # variant A: token branch absent, fused == adapted

        x1, x2, x3, x4 = [rfb(t) for rfb, t in zip(self.rfbs, fused)]
        u3 = self.sffs[0](x3, x4)
        u2 = self.sffs[1](x2, u3)
        u1 = self.sffs[2](x1, u2)
        d1 = self.heads[0](u3, out_h, out_w)
        d2 = self.heads[1](u2, out_h, out_w)
        d3 = self.heads[2](u1, out_h, out_w)
        return DecoderOutputs(d1, d2, d3)

    def forward(self, image_main, image_aux):
        pyramid = self.encode(image_main, image_aux)
        return self.forward_pyramid(pyramid, image_main.data.shape[1],
                                    image_main.data.shape[2])

    __call__ = forward

    def _check_pyramid(self, pyramid):
        expected = self.profile.pyramid_shapes()
        for name, t in zip(("s1", "s2", "s3", "s4", "v"),
                           pyramid.levels() + [pyramid.v]):
            if t.data.shape != expected[name]:
                raise ShapeError(
                    f"pyramid level {name!r} has shape {t.data.shape}, "
                    f"profile {self.profile.name!r} expects {expected[name]}")

    # -- parameter accounting ---------------------------------------------

    def parameter_counts(self):
        """(total, trainable, fraction, per-top-level-module subtotals)."""
        total = 0
        trainable = 0
        by_module: dict[str, tuple[int, int]] = {}
        for name, p in self.named_parameters().items():
            group = name.split(".")[0]
            t, tr = by_module.get(group, (0, 0))
            by_module[group] = (t + p.size, tr + (p.size if p.trainable else 0))
            total += p.size
            if p.trainable:
                trainable += p.size
        fraction = trainable / total if total else 0.0
        return total, trainable, fraction, by_module
