"""DARCCN: recursive complex spectral mapping with a dynamic attention generator.

One set of weights is unrolled for ``num_stages`` stages. At stage ``l`` the
attention generator (AGM, a plain conv U-Net) looks at the noisy spectrum ``X``
and the previous estimate and emits a 16-channel attention map. The noise
reduction module (NRM) then

1. runs a conv-GRU cell whose hidden state is carried from stage to stage,
2. gates that hidden state with ``sigmoid(pointwise(attention))``,
3. encodes it with a 6-block U-Net encoder,
4. models temporal context with dilated gated blocks at the bottleneck,
5. decodes real and imaginary planes with two independent decoders whose
   skip connections pass through additive attention gates.

Every convolution is causal in time, so the whole network can be run frame by
frame (:class:`StreamingEnhancer`) with the same result as a batch pass.
"""
from __future__ import annotations

import functools
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError, ProtocolViolation, ShapeMismatch
from .nncore import (
    ConvSpec,
    ParamRegistry,
    Tensor,
    add,
    batch_norm,
    concat,
    conv2d,
    conv_gru_step,
    deconv2d,
    elu,
    glorot_uniform,
    glu_block,
    glu_specs,
    mul,
    no_grad,
    reshape,
    sigmoid,
)
from .signal import StftConfig, pack_features, stft, istft, unpack_features, ComplexSpectrogram


@dataclass(frozen=True)
class ModelConfig:
    num_stages: int = 3
    agm_channels: tuple[int, ...] = (16, 32, 32, 32, 64, 64, 32, 32, 16, 16)
    nrm_enc_channels: tuple[int, ...] = (16, 16, 32, 32, 64, 64)
    nrm_dec_channels: tuple[int, ...] = (64, 32, 32, 16, 16, 1)
    kernel: tuple[int, int] = (2, 5)
    glu_blocks: int = 6
    glu_kernel: int = 11
    glu_dilations: tuple[int, ...] = (1, 2, 4, 8, 16, 32)
    glu_width: int = 70
    srnn_hidden: int = 88
    fft_size: int = 320
    scale: int = 1

    def __post_init__(self):
        if self.num_stages < 1:
            raise ConfigError("num_stages must be >= 1")
        if len(self.agm_channels) != 10:
            raise ConfigError("agm_channels needs 10 entries (5 encoder + 5 decoder)")
        if len(self.nrm_enc_channels) != 6 or len(self.nrm_dec_channels) != 6:
            raise ConfigError("nrm encoder/decoder channel lists need 6 entries each")
        if len(self.glu_dilations) != self.glu_blocks:
            raise ConfigError("glu_dilations must list one dilation per block")
        counts = (*self.agm_channels, *self.nrm_enc_channels, *self.nrm_dec_channels,
                  *self.kernel, self.glu_blocks, self.glu_kernel, *self.glu_dilations,
                  self.glu_width, self.srnn_hidden, self.fft_size, self.scale)
        if min(counts) < 1:
            raise ConfigError("all counts must be >= 1")
        if self.fft_size % 2:
            raise ConfigError("fft_size must be even")

    def ch(self, c: int) -> int:
        return max(1, c // self.scale)

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def hidden(self) -> int:
        return self.ch(self.srnn_hidden)

    @property
    def attention_channels(self) -> int:
        return self.ch(self.agm_channels[-1])

    def stft_config(self) -> StftConfig:
        return StftConfig.for_fft(self.fft_size)

    def bin_ladder(self, depth: int) -> list[int]:
        bins = [self.num_bins]
        for _ in range(depth):
            bins.append(-(-bins[-1] // 2))
        return bins

    def to_counts(self) -> dict[str, list[int]]:
        out = {}
        for k, v in asdict(self).items():
            out[k] = list(v) if isinstance(v, (tuple, list)) else [int(v)]
        return out

    @classmethod
    def from_counts(cls, counts: dict[str, list[int]]) -> "ModelConfig":
        kw = {}
        for f in fields(cls):
            if f.name not in counts:
                raise ConfigError(f"config block lacks {f.name!r}")
            v = counts[f.name]
            kw[f.name] = tuple(v) if isinstance(cls.__dataclass_fields__[f.name].default, tuple) else v[0]
        return cls(**kw)


FULL_CONFIG = ModelConfig()
DESK_CONFIG = ModelConfig(scale=4, fft_size=64)
# smallest config used for exhaustive finite-difference checks (< 10k params)
TINY_CONFIG = ModelConfig(scale=12, fft_size=64)


@dataclass(frozen=True)
class Layer:
    """One weighted layer: where it sits, its conv geometry, and its frame-level MACs."""

    name: str
    kind: str  # conv | deconv | pointwise | gru | gate | glu
    params: int
    macs: int
    spec: ConvSpec | None = None
    in_bins: int = 0
    out_bins: int = 0
    bn: bool = False
    act: bool = False
    extra: dict = field(default_factory=dict)


def _conv_macs(spec: ConvSpec, out_bins: int) -> int:
    return spec.out_ch * out_bins * spec.in_ch * spec.kernel[0] * spec.kernel[1]


def _conv_layer(name, spec, in_bins, out_bins, bn=True, act=True, kind=None) -> Layer:
    kind = kind or ("deconv" if spec.transposed else "conv")
    p = spec.param_count() + (2 * spec.out_ch if bn else 0)
    return Layer(name, kind, p, _conv_macs(spec, out_bins), spec, in_bins, out_bins, bn, act)


@functools.lru_cache(maxsize=32)
def _layer_table(cfg: ModelConfig) -> tuple[Layer, ...]:
    return tuple(_build_layers(cfg))


def build_layers(cfg: ModelConfig) -> list[Layer]:
    return list(_layer_table(cfg))


def _build_layers(cfg: ModelConfig) -> list[Layer]:
    """Ordered layer table for one stage (weights are shared by every stage)."""
    ch = cfg.ch
    kern = cfg.kernel
    in_ch = 4  # concat(X, previous estimate), real/imag planes each
    layers: list[Layer] = []

    a = [ch(c) for c in cfg.agm_channels]
    bins = cfg.bin_ladder(5)
    prev = in_ch
    for i in range(5):
        spec = ConvSpec(prev, a[i], kern, (1, 2))
        layers.append(_conv_layer(f"agm.enc{i}", spec, bins[i], bins[i + 1]))
        prev = a[i]
    for j in range(5):
        skip = a[4 - j] if j > 0 else 0
        spec = ConvSpec(prev + skip, a[5 + j], kern, (1, 2), transposed=True)
        layers.append(_conv_layer(f"agm.dec{j}", spec, bins[5 - j], bins[4 - j]))
        prev = a[5 + j]

    nb = cfg.num_bins
    h = cfg.hidden
    gru_in = in_ch + h
    gru = Layer("nrm.srnn", "gru", 3 * (gru_in * h + h), 3 * nb * h * gru_in, extra={"in": in_ch, "hidden": h})
    layers.append(gru)
    att = ConvSpec(cfg.attention_channels, h, (1, 1), (1, 1))
    layers.append(_conv_layer("nrm.att", att, nb, nb, bn=False, act=False, kind="pointwise"))

    e = [ch(c) for c in cfg.nrm_enc_channels]
    bins = cfg.bin_ladder(6)
    prev = h
    for i in range(6):
        spec = ConvSpec(prev, e[i], kern, (1, 2))
        layers.append(_conv_layer(f"nrm.enc{i}", spec, bins[i], bins[i + 1]))
        prev = e[i]

    flat = e[5] * bins[6]
    width = ch(cfg.glu_width)
    for k in range(cfg.glu_blocks):
        specs = glu_specs(flat, width, cfg.glu_kernel, cfg.glu_dilations[k])
        p = sum(s.param_count() for s in specs.values())
        m = sum(_conv_macs(s, 1) for s in specs.values())
        layers.append(Layer(f"nrm.glu{k}", "glu", p, m, extra={"dilation": cfg.glu_dilations[k], "width": width, "flat": flat}))

    d = [ch(c) if c > 1 else 1 for c in cfg.nrm_dec_channels]
    for part in ("real", "imag"):
        prev = e[5]
        for j in range(6):
            skip = e[5 - j]
            gb = bins[6 - j]
            inter = max(1, skip // 2)
            gp = inter * (skip + prev + 3) + 1
            gm = gb * inter * (skip + prev + 1)
            layers.append(Layer(f"nrm.{part}.gate{j}", "gate", gp, gm, in_bins=gb, out_bins=gb,
                                extra={"skip": skip, "gating": prev, "inter": inter}))
            last = j == 5
            spec = ConvSpec(prev + skip, d[j], kern, (1, 2), transposed=True)
            layers.append(_conv_layer(f"nrm.{part}.dec{j}", spec, gb, bins[5 - j], bn=not last, act=not last))
            prev = d[j]
    return layers


def count_macs(cfg: ModelConfig) -> int:
    """Multiply-adds to produce one output frame, all stages, AGM + NRM."""
    return cfg.num_stages * sum(l.macs for l in build_layers(cfg))


def layer_report(cfg: ModelConfig) -> list[tuple[str, int, int]]:
    """(layer, params, macs-per-frame summed over stages) rows."""
    return [(l.name, l.params, l.macs * cfg.num_stages) for l in build_layers(cfg)]


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> ParamRegistry:
    """Glorot-uniform weights, zero biases, identity batch norm; seeded."""
    rng = np.random.default_rng(seed)
    reg = ParamRegistry(dtype)

    def conv(prefix, spec: ConvSpec, bn: bool):
        kt, kf = spec.kernel
        fan_in, fan_out = spec.in_ch * kt * kf, spec.out_ch * kt * kf
        reg.add(f"{prefix}.w", glorot_uniform(rng, spec.weight_shape, fan_in, fan_out))
        reg.add(f"{prefix}.b", np.zeros(spec.out_ch))
        if bn:
            reg.add(f"{prefix}.bn.gamma", np.ones(spec.out_ch))
            reg.add(f"{prefix}.bn.beta", np.zeros(spec.out_ch))
            reg.add_buffer(f"{prefix}.bn.running_mean", np.zeros(spec.out_ch))
            reg.add_buffer(f"{prefix}.bn.running_var", np.ones(spec.out_ch))

    def pw(name, cin, cout):
        conv(name, ConvSpec(cin, cout, (1, 1), (1, 1)), False)

    for layer in build_layers(cfg):
        if layer.kind in ("conv", "deconv", "pointwise"):
            conv(layer.name, layer.spec, layer.bn)
        elif layer.kind == "gru":
            cin = layer.extra["in"] + layer.extra["hidden"]
            for g in ("z", "r", "h"):
                w = glorot_uniform(rng, (layer.extra["hidden"], cin, 1, 1), cin, layer.extra["hidden"])
                reg.add(f"{layer.name}.w{g}", w)
                reg.add(f"{layer.name}.b{g}", np.zeros(layer.extra["hidden"]))
        elif layer.kind == "gate":
            x = layer.extra
            pw(f"{layer.name}.x", x["skip"], x["inter"])
            pw(f"{layer.name}.g", x["gating"], x["inter"])
            pw(f"{layer.name}.psi", x["inter"], 1)
        elif layer.kind == "glu":
            specs = glu_specs(layer.extra["flat"], layer.extra["width"], cfg.glu_kernel, layer.extra["dilation"])
            for part, spec in specs.items():
                conv(f"{layer.name}.{part}", spec, False)
    return reg


class Stream:
    """Per-layer frame histories for frame-by-frame inference."""

    def __init__(self):
        self.hist: dict[str, np.ndarray] = {}

    def take(self, key: str, x: np.ndarray, ctx: int) -> np.ndarray:
        """Return the stored history for ``key`` and advance it past ``x``."""
        h = self.hist.get(key)
        if h is None:
            h = np.zeros(x.shape[:2] + (ctx,) + x.shape[3:], dtype=x.dtype)
        joined = np.concatenate([h, x], axis=2)
        self.hist[key] = joined[:, :, joined.shape[2] - ctx :]
        return h


class _Runner:
    """Binds parameters, mode and optional streaming state for one forward pass."""

    def __init__(self, params: ParamRegistry, cfg: ModelConfig, training: bool, stream: Stream | None):
        self.p = params
        self.cfg = cfg
        self.training = training
        self.stream = stream
        self.layers = {l.name: l for l in _layer_table(cfg)}
        self.stage = 0

    def _hist(self, name: str, x: Tensor, ctx: int):
        if self.stream is None or ctx == 0:
            return None
        return self.stream.take(f"s{self.stage}.{name}", x.data, ctx)

    def block(self, name: str, x: Tensor, skip_bins: int | None = None) -> Tensor:
        layer = self.layers[name]
        spec = layer.spec
        w, b = self.p[f"{name}.w"], self.p[f"{name}.b"]
        hist = self._hist(name, x, spec.time_context)
        if spec.transposed:
            y = deconv2d(x, w, b, spec, layer.out_bins, hist)
        else:
            y = conv2d(x, w, b, spec, hist)
        if layer.bn:
            y = batch_norm(
                y,
                self.p[f"{name}.bn.gamma"],
                self.p[f"{name}.bn.beta"],
                self.p.buffers[f"{name}.bn.running_mean"],
                self.p.buffers[f"{name}.bn.running_var"],
                self.training,
            )
        if layer.act:
            y = elu(y)
        return y

    def pw(self, name: str, x: Tensor) -> Tensor:
        w = self.p[f"{name}.w"]
        spec = ConvSpec(w.shape[1], w.shape[0], (1, 1), (1, 1))
        return conv2d(x, w, self.p[f"{name}.b"], spec)

    def gate(self, name: str, skip: Tensor, g: Tensor) -> Tensor:
        q = elu(add(self.pw(f"{name}.x", skip), self.pw(f"{name}.g", g)))
        return mul(skip, sigmoid(self.pw(f"{name}.psi", q)))

    def glu(self, k: int, x: Tensor) -> Tensor:
        name = f"nrm.glu{k}"
        dil = self.cfg.glu_dilations[k]
        ctx = (self.cfg.glu_kernel - 1) * dil
        key = f"s{self.stage}.{name}"
        hist = None
        if self.stream is not None:
            hist = self.stream.hist.get(key)
            if hist is None:
                width = self.p[f"{name}.in.w"].shape[0]
                hist = np.zeros((x.shape[0], width, ctx, 1), dtype=x.data.dtype)
        y, new_hist = glu_block(x, self.p.group(name), dil, self.cfg.glu_kernel, hist)
        if self.stream is not None:
            self.stream.hist[key] = new_hist
        return y


def _check_pair(X: Tensor, S_prev: Tensor, cfg: ModelConfig) -> None:
    if X.data.ndim != 4 or X.shape[1] != 2 or X.shape[3] != cfg.num_bins:
        raise ShapeMismatch(f"X must be (batch, 2, frames, {cfg.num_bins}), got {X.shape}")
    if S_prev.shape != X.shape:
        raise ShapeMismatch(f"previous estimate {S_prev.shape} != X {X.shape}")


def _as4d(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    if t.data.ndim == 3:
        t = reshape(t, (1,) + t.shape)
    return t


def agm_forward(X, S_prev, params: ParamRegistry, cfg: ModelConfig, training: bool = False,
                _run: _Runner | None = None) -> Tensor:
    """Attention map (batch, 16, frames, bins) from concat(X, S_prev)."""
    X, S_prev = _as4d(X), _as4d(S_prev)
    _check_pair(X, S_prev, cfg)
    run = _run or _Runner(params, cfg, training, None)
    x = concat([X, S_prev], axis=1)
    skips = []
    for i in range(5):
        x = run.block(f"agm.enc{i}", x)
        skips.append(x)
    for j in range(5):
        if j > 0:
            x = concat([x, skips[4 - j]], axis=1)
        x = run.block(f"agm.dec{j}", x)
    return x


def nrm_forward(X, S_prev, attention: Tensor | None, state: Tensor, params: ParamRegistry, cfg: ModelConfig,
                training: bool = False, _run: _Runner | None = None) -> tuple[Tensor, Tensor]:
    """One noise-reduction pass; returns (stage estimate, new SRNN state).

    ``attention=None`` skips the attention coupling (the ungated ablation).
    """
    X, S_prev = _as4d(X), _as4d(S_prev)
    _check_pair(X, S_prev, cfg)
    n, _, f, nb = X.shape
    if state.shape != (n, cfg.hidden, f, nb):
        raise ShapeMismatch(f"SRNN state {state.shape} does not match ({n}, {cfg.hidden}, {f}, {nb})")
    if attention is not None and attention.shape != (n, cfg.attention_channels, f, nb):
        raise ShapeMismatch(f"attention map {attention.shape} has the wrong shape")
    run = _run or _Runner(params, cfg, training, None)
    p = params
    new_state = conv_gru_step(state, concat([X, S_prev], axis=1), p.group("nrm.srnn"))
    x = new_state if attention is None else mul(new_state, sigmoid(run.pw("nrm.att", attention)))
    skips = []
    for i in range(6):
        x = run.block(f"nrm.enc{i}", x)
        skips.append(x)
    for k in range(cfg.glu_blocks):
        x = run.glu(k, x)
    planes = []
    for part in ("real", "imag"):
        y = x
        for j in range(6):
            gated = run.gate(f"nrm.{part}.gate{j}", skips[5 - j], y)
            y = run.block(f"nrm.{part}.dec{j}", concat([y, gated], axis=1))
        planes.append(y)
    return concat(planes, axis=1), new_state


def darccn_forward(X, params: ParamRegistry, cfg: ModelConfig, training: bool = False,
                   stream: Stream | None = None) -> list[Tensor]:
    """Unroll the shared network for ``cfg.num_stages`` stages; returns every estimate.

    Stage 0's estimate is the noisy input itself and the SRNN state starts at zero.
    """
    X = _as4d(X)
    run = _Runner(params, cfg, training, stream)
    n, _, f, nb = X.shape
    state = Tensor(np.zeros((n, cfg.hidden, f, nb), dtype=X.data.dtype))
    est = X
    out = []
    for stage in range(cfg.num_stages):
        run.stage = stage
        a = agm_forward(X, est, params, cfg, training, _run=run)
        est, state = nrm_forward(X, est, a, state, params, cfg, training, _run=run)
        out.append(est)
    return out


def enhance_features(X: np.ndarray, params: ParamRegistry, cfg: ModelConfig) -> np.ndarray:
    """Eval-mode pass on a 2 x frames x bins feature tensor; returns the last stage."""
    with no_grad():
        est = darccn_forward(Tensor(np.asarray(X, dtype=params.dtype)[None]), params, cfg)[-1]
    return est.data[0]


def enhance_utterance(x: np.ndarray, params: ParamRegistry, cfg: ModelConfig) -> np.ndarray:
    """stft -> pack -> network -> last stage -> unpack -> overlap-add, same length out."""
    scfg = cfg.stft_config()
    spec = stft(x, scfg)
    y = enhance_features(pack_features(spec), params, cfg)
    return istft(unpack_features(y.astype(np.float64)), scfg, out_len=len(x))


class StreamingEnhancer:
    """Frame-by-frame enhancement session.

    Call :meth:`process_frame` with analysis frames ``t = 0, 1, ...`` (each
    ``win_len`` samples starting at ``t * hop``). After frame ``t`` the output
    samples ``[t*hop, (t+1)*hop)`` are final and are returned. :meth:`finish`
    flushes the tail. One session serves one utterance at a time.
    """

    def __init__(self, params: ParamRegistry, cfg: ModelConfig):
        self.params = params
        self.cfg = cfg
        self.scfg = cfg.stft_config()
        self.reset()

    def reset(self) -> None:
        w = self.scfg.win_len
        self.stream = Stream()
        self.next_frame = 0
        self.num = np.zeros(w)
        self.den = np.zeros(w)

    def enhance_frame(self, frame: np.ndarray) -> np.ndarray:
        """Network pass for one frame's spectrum; returns the windowed synthesis frame."""
        scfg = self.scfg
        spec = np.fft.rfft(np.asarray(frame, dtype=np.float64) * scfg.window, n=scfg.fft_size)
        feats = np.stack([spec.real, spec.imag])[None, :, None, :].astype(self.params.dtype)
        with no_grad():
            est = darccn_forward(Tensor(feats), self.params, self.cfg, stream=self.stream)[-1].data
        est = est[0, :, 0, :].astype(np.float64)
        out = np.fft.irfft(est[0] + 1j * est[1], n=scfg.fft_size)[: scfg.win_len]
        return out * scfg.window

    def process_frame(self, t: int, frame: np.ndarray) -> np.ndarray:
        if t != self.next_frame:
            raise ProtocolViolation(f"expected frame {self.next_frame}, got {t}")
        if len(frame) != self.scfg.win_len:
            raise ShapeMismatch(f"frame must have {self.scfg.win_len} samples, got {len(frame)}")
        hop = self.scfg.hop
        self.num += self.enhance_frame(frame)
        self.den += self.scfg.window**2
        out = self.num[:hop] / self.den[:hop]
        self.num = np.concatenate([self.num[hop:], np.zeros(hop)])
        self.den = np.concatenate([self.den[hop:], np.zeros(hop)])
        self.next_frame += 1
        return out

    def finish(self) -> np.ndarray:
        """Remaining samples covered only by the last frame."""
        hop = self.scfg.hop
        if self.next_frame == 0:
            return np.zeros(0)
        return self.num[:hop] / self.den[:hop]


def enhance_streaming(x: np.ndarray, params: ParamRegistry, cfg: ModelConfig,
                      session: StreamingEnhancer | None = None) -> np.ndarray:
    """Drive a :class:`StreamingEnhancer` over a whole waveform; same length out."""
    session = session or StreamingEnhancer(params, cfg)
    session.reset()
    scfg = session.scfg
    x = np.asarray(x, dtype=np.float64)
    nf = 1 + (len(x) - scfg.win_len) // scfg.hop
    if nf < 1:
        raise ShapeMismatch(f"signal of {len(x)} samples is shorter than one window")
    chunks = [session.process_frame(t, x[t * scfg.hop : t * scfg.hop + scfg.win_len]) for t in range(nf)]
    chunks.append(session.finish())
    y = np.concatenate(chunks)
    if len(y) >= len(x):
        return y[: len(x)]
    return np.concatenate([y, np.zeros(len(x) - len(y))])


def with_overrides(cfg: ModelConfig, **kw) -> ModelConfig:
    return replace(cfg, **kw)
