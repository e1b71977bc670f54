"""Causal 2-D convolution, transposed convolution, batch norm, GLU and conv-GRU.

All feature maps are 4-D arrays laid out ``(batch, channels, frames, bins)``.
Time is always causal: a layer with temporal kernel ``k_t`` and dilation ``d``
sees the current frame and ``(k_t - 1) * d`` past frames, never future ones.
Those past frames are zeros at the start of an utterance, or a caller-supplied
``history`` when running frame by frame.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgument, ShapeMismatch
from .tensor import Tensor, concat, make_op, mul, reshape, sigmoid, sub, tanh, add, transpose


@dataclass(frozen=True)
class ConvSpec:
    in_ch: int
    out_ch: int
    kernel: tuple[int, int] = (2, 5)
    stride: tuple[int, int] = (1, 2)
    causal_time: bool = True
    transposed: bool = False
    dilation: int = 1

    def __post_init__(self):
        kt, kf = self.kernel
        if kt < 1 or kf < 1 or self.in_ch < 1 or self.out_ch < 1:
            raise InvalidArgument(f"bad conv spec {self}")
        if self.stride[0] != 1:
            raise InvalidArgument("time stride must be 1 for causal streaming")
        if not self.causal_time:
            raise InvalidArgument("only causal time convolutions are supported")
        if kf % 2 == 0:
            raise InvalidArgument("frequency kernel must be odd for symmetric 'same' padding")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        kt, kf = self.kernel
        if self.transposed:
            return (self.in_ch, self.out_ch, kt, kf)
        return (self.out_ch, self.in_ch, kt, kf)

    @property
    def time_context(self) -> int:
        """Number of past frames the layer reads."""
        return (self.kernel[0] - 1) * self.dilation

    def out_bins(self, in_bins: int) -> int:
        if self.transposed:
            raise InvalidArgument("transposed output size comes from the size hint")
        s = self.stride[1]
        return -(-in_bins // s)

    def param_count(self) -> int:
        return int(np.prod(self.weight_shape)) + self.out_ch


def _time_pad(x: np.ndarray, ctx: int, history: np.ndarray | None) -> np.ndarray:
    if ctx == 0:
        return x
    if history is None:
        pad = np.zeros(x.shape[:2] + (ctx,) + x.shape[3:], dtype=x.dtype)
    else:
        if history.shape != x.shape[:2] + (ctx,) + x.shape[3:]:
            raise ShapeMismatch(f"history shape {history.shape} does not fit input {x.shape}")
        pad = history
    return np.concatenate([pad, x], axis=2)


def _check(x: Tensor, w: Tensor, spec: ConvSpec) -> None:
    if x.data.ndim != 4:
        raise ShapeMismatch(f"expected (batch, ch, frames, bins) input, got {x.shape}")
    if x.shape[1] != spec.in_ch:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, layer expects {spec.in_ch}")
    if w.shape != spec.weight_shape:
        raise ShapeMismatch(f"weight shape {w.shape} != {spec.weight_shape}")


def _conv1x1(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    n, c, f, nb = x.shape
    w2 = w.data[:, :, 0, 0]
    x3 = x.data.reshape(n, c, f * nb)
    out = np.matmul(w2, x3)
    if b is not None:
        out += b.data[None, :, None]
    out = out.reshape(n, -1, f, nb)

    def bw(g):
        g3 = g.reshape(n, -1, f * nb)
        gw = np.einsum("nop,ncp->oc", g3, x3).reshape(w.shape)
        gx = np.matmul(w2.T, g3).reshape(x.shape)
        gb = g3.sum(axis=(0, 2)) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_op(out, parents, bw)


def conv2d(
    x: Tensor, w: Tensor, b: Tensor | None, spec: ConvSpec, history: np.ndarray | None = None
) -> Tensor:
    """Causal-in-time, 'same'-padded-in-frequency strided convolution.

    Output bins are ``ceil(in_bins / stride_f)``. ``history`` replaces the zero
    left padding with the previous ``spec.time_context`` input frames.
    """
    _check(x, w, spec)
    kt, kf = spec.kernel
    s, d = spec.stride[1], spec.dilation
    if kt == kf == s == 1:
        return _conv1x1(x, w, b)
    n, c, f, nb = x.shape
    pf = (kf - 1) // 2
    ob = spec.out_bins(nb)
    xp = _time_pad(x.data, spec.time_context, history)
    if pf:
        z = np.zeros(xp.shape[:3] + (pf,), dtype=xp.dtype)
        xp = np.concatenate([z, xp, z], axis=3)
    span = s * (ob - 1) + 1
    # im2col with the reduction axis last so both passes are plain 2-D matmuls
    xt = xp.transpose(0, 2, 3, 1)  # n, time, bins, c
    cols = np.empty((n, f, ob, kt, kf, c), dtype=xp.dtype)
    for i in range(kt):
        for j in range(kf):
            cols[:, :, :, i, j] = xt[:, i * d : i * d + f, j : j + span : s]
    cols2 = cols.reshape(n * f * ob, kt * kf * c)
    w2 = w.data.transpose(0, 2, 3, 1).reshape(spec.out_ch, -1)  # o, (kt kf c)
    out = (cols2 @ w2.T).reshape(n, f, ob, spec.out_ch).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, spec.out_ch)
        gw = (g2.T @ cols2).reshape(spec.out_ch, kt, kf, c).transpose(0, 3, 1, 2)
        gcols = (g2 @ w2).reshape(n, f, ob, kt, kf, c)
        gxt = np.zeros(xt.shape, dtype=xp.dtype)
        for i in range(kt):
            for j in range(kf):
                gxt[:, i * d : i * d + f, j : j + span : s] += gcols[:, :, :, i, j]
        gx = gxt.transpose(0, 3, 1, 2)[:, :, spec.time_context :, pf : pf + nb]
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_op(out, parents, bw)


def deconv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None,
    spec: ConvSpec,
    out_bins: int,
    history: np.ndarray | None = None,
) -> Tensor:
    """Transposed convolution: causal conv in time, strided upsampling in frequency.

    ``out_bins`` is the size hint that lets a decoder mirror its encoder exactly
    (e.g. 81 -> 161, 3 -> 6).
    """
    _check(x, w, spec)
    kt, kf = spec.kernel
    s = spec.stride[1]
    n, c, f, nb = x.shape
    o = spec.out_ch
    pf = (kf - 1) // 2
    full = (nb - 1) * s + kf
    if pf + out_bins > full or out_bins < 1:
        raise ShapeMismatch(f"cannot produce {out_bins} bins from {nb} with stride {s}")
    xp = _time_pad(x.data, spec.time_context, history)
    ctx = spec.time_context
    # frame t reads input frame t - i for kernel tap i
    xcols = np.stack([xp[:, :, ctx - i : ctx - i + f] for i in range(kt)], axis=2)
    xcols = xcols.reshape(n, c * kt, f, nb)
    wr = w.data.transpose(0, 2, 1, 3).reshape(c * kt, o * kf)
    contrib = np.tensordot(wr, xcols, axes=([0], [1])).reshape(o, kf, n, f, nb)
    span = s * (nb - 1) + 1
    yfull = np.zeros((n, o, f, full), dtype=xp.dtype)
    for j in range(kf):
        yfull[:, :, :, j : j + span : s] += contrib[:, j].transpose(1, 0, 2, 3)
    out = yfull[:, :, :, pf : pf + out_bins]
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def bw(g):
        gfull = np.zeros((n, o, f, full), dtype=g.dtype)
        gfull[:, :, :, pf : pf + out_bins] = g
        gcontrib = np.empty((o, kf, n, f, nb), dtype=g.dtype)
        for j in range(kf):
            gcontrib[:, j] = gfull[:, :, :, j : j + span : s].transpose(1, 0, 2, 3)
        gcontrib = gcontrib.reshape(o * kf, n, f, nb)
        gwr = np.tensordot(xcols, gcontrib, axes=([0, 2, 3], [1, 2, 3]))
        gw = gwr.reshape(c, kt, o, kf).transpose(0, 2, 1, 3)
        gxcols = np.tensordot(wr, gcontrib, axes=([1], [0])).transpose(1, 0, 2, 3)
        gxcols = gxcols.reshape(n, c, kt, f, nb)
        gxp = np.zeros(xp.shape, dtype=xp.dtype)
        for i in range(kt):
            gxp[:, :, ctx - i : ctx - i + f] += gxcols[:, :, i]
        gx = gxp[:, :, ctx:]
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_op(out, parents, bw)


BN_EPS = 1e-5
BN_MOMENTUM = 0.99


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel normalisation over (batch, frames, bins).

    Training mode uses minibatch statistics and updates the running buffers in
    place (``running = momentum * running + (1 - momentum) * batch``). Eval mode
    is a fixed per-channel affine map, hence frame-causal.
    """
    if x.shape[1] != gamma.shape[0]:
        raise ShapeMismatch(f"batch_norm: {x.shape[1]} channels vs {gamma.shape[0]} gammas")
    axes = (0, 2, 3)
    g_ = gamma.data[None, :, None, None]
    if not training:
        scale = gamma.data / np.sqrt(running_var + eps)
        shift = beta.data - running_mean * scale
        out = x.data * scale[None, :, None, None] + shift[None, :, None, None]
        xhat = (x.data - running_mean[None, :, None, None]) / np.sqrt(running_var + eps)[None, :, None, None]

        def bw_eval(g):
            return (
                g * scale[None, :, None, None],
                (g * xhat).sum(axis=axes),
                g.sum(axis=axes),
            )

        return make_op(out, (x, gamma, beta), bw_eval)

    mean = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    running_mean *= momentum
    running_mean += (1.0 - momentum) * mean
    running_var *= momentum
    running_var += (1.0 - momentum) * var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv[None, :, None, None]
    out = g_ * xhat + beta.data[None, :, None, None]
    m = x.data.size // x.shape[1]

    def bw(g):
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        gxhat = g * g_
        gx = (
            inv[None, :, None, None]
            / m
            * (
                m * gxhat
                - gxhat.sum(axis=axes)[None, :, None, None]
                - xhat * (gxhat * xhat).sum(axis=axes)[None, :, None, None]
            )
        )
        return gx, ggamma, gbeta

    return make_op(out, (x, gamma, beta), bw)


def pointwise(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    """1x1 convolution; ``w`` has shape (out, in, 1, 1)."""
    spec = ConvSpec(w.shape[1], w.shape[0], kernel=(1, 1), stride=(1, 1))
    return conv2d(x, w, b, spec)


def glu_specs(channels: int, width: int, kernel: int, dilation: int) -> dict[str, ConvSpec]:
    """Layer specs of one gated block over a ``channels``-wide 1-D sequence."""
    return {
        "in": ConvSpec(channels, width, kernel=(1, 1), stride=(1, 1)),
        "conv_a": ConvSpec(width, width, kernel=(kernel, 1), stride=(1, 1), dilation=dilation),
        "conv_b": ConvSpec(width, width, kernel=(kernel, 1), stride=(1, 1), dilation=dilation),
        "out": ConvSpec(width, channels, kernel=(1, 1), stride=(1, 1)),
    }


def glu_block(
    x: Tensor,
    params: dict[str, Tensor],
    dilation: int,
    kernel: int = 11,
    history: np.ndarray | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Residual gated block on a (batch, C, frames, bins) bottleneck.

    Channels and bins are flattened into one feature axis and the block runs a
    1-D causal dilated convolution pair along time::

        y = in(x);  g = conv_a(y) * sigmoid(conv_b(y));  return x + out(g)

    ``history`` holds the previous ``(kernel - 1) * dilation`` frames of ``y``.
    Returns the output and the updated history.
    """
    n, c, f, nb = x.shape
    width = params["in.w"].shape[0]
    specs = glu_specs(c * nb, width, kernel, dilation)
    flat = reshape(transpose(x, (0, 1, 3, 2)), (n, c * nb, f, 1))
    y = conv2d(flat, params["in.w"], params["in.b"], specs["in"])
    a = conv2d(y, params["conv_a.w"], params["conv_a.b"], specs["conv_a"], history)
    gate = sigmoid(conv2d(y, params["conv_b.w"], params["conv_b.b"], specs["conv_b"], history))
    z = conv2d(mul(a, gate), params["out.w"], params["out.b"], specs["out"])
    z = transpose(reshape(z, (n, c, nb, f)), (0, 1, 3, 2))
    ctx = specs["conv_a"].time_context
    padded = _time_pad(y.data, ctx, history)
    new_hist = padded[:, :, padded.shape[2] - ctx :]
    return add(x, z), new_hist


def conv_gru_step(h: Tensor, x: Tensor, params: dict[str, Tensor]) -> Tensor:
    """One GRU update with 1x1 convolutional gates over (frames, bins)::

        z = sigmoid(Wz [x, h]);  r = sigmoid(Wr [x, h])
        cand = tanh(Wh [x, r * h]);  h' = (1 - z) * h + z * cand
    """
    hidden = params["wz"].shape[0]
    if h.shape[1] != hidden:
        raise ShapeMismatch(f"state has {h.shape[1]} channels, cell has {hidden}")
    if h.shape[0] != x.shape[0] or h.shape[2:] != x.shape[2:]:
        raise ShapeMismatch(f"state {h.shape} does not match input {x.shape}")
    xh = concat([x, h], axis=1)
    z = sigmoid(pointwise(xh, params["wz"], params["bz"]))
    r = sigmoid(pointwise(xh, params["wr"], params["br"]))
    cand = tanh(pointwise(concat([x, mul(r, h)], axis=1), params["wh"], params["bh"]))
    return add(mul(sub(1.0, z), h), mul(z, cand))
