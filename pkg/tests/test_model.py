import numpy as np
import pytest

from darccn import model
from darccn.errors import ProtocolViolation, ShapeMismatch
from darccn.model import (
    DESK_CONFIG,
    FULL_CONFIG,
    TINY_CONFIG,
    StreamingEnhancer,
    agm_forward,
    count_macs,
    darccn_forward,
    enhance_streaming,
    enhance_utterance,
    init_params,
    nrm_forward,
    with_overrides,
)
from darccn.nncore import Tensor, count_params, no_grad
from darccn.signal import istft, pack_features, stft, unpack_features


def randomize(params, seed=1, scale=0.2):
    """Non-trivial biases, BN affine and running statistics on top of the Glorot init."""
    rng = np.random.default_rng(seed)
    for name, t in params:
        if name.rsplit(".", 1)[-1] in ("b", "bz", "br", "bh", "gamma", "beta"):
            t.data = t.data + scale * rng.standard_normal(t.shape)
    for name, b in params.buffers.items():
        if name.endswith("running_var"):
            b[...] = 0.5 + rng.random(b.shape)
        else:
            b[...] = scale * rng.standard_normal(b.shape)
    return params


@pytest.fixture(scope="module")
def desk():
    return randomize(init_params(DESK_CONFIG, seed=0))


@pytest.fixture(scope="module")
def tiny():
    return randomize(init_params(TINY_CONFIG, seed=0))


def feats(rng, cfg, frames, batch=1):
    return rng.standard_normal((batch, 2, frames, cfg.num_bins)) * 0.5


# ---------------------------------------------------------------- accounting


def test_full_config_accounting():
    params = count_params(init_params(FULL_CONFIG, seed=0))
    macs = count_macs(FULL_CONFIG)
    assert params == sum(l.params for l in model.build_layers(FULL_CONFIG)) == 1_427_130
    assert macs == 47_039_088
    assert 1.34e6 <= params <= 1.48e6
    assert 41.4e6 <= macs <= 50.6e6


def test_full_config_within_target_tolerance():
    assert abs(count_params(init_params(FULL_CONFIG)) / 1.41e6 - 1) <= 0.05
    assert abs(count_macs(FULL_CONFIG) / 46.02e6 - 1) <= 0.10


@pytest.mark.parametrize("cfg", [DESK_CONFIG, TINY_CONFIG, with_overrides(DESK_CONFIG, glu_width=12, srnn_hidden=20)])
def test_layer_table_matches_registry(cfg):
    assert count_params(init_params(cfg)) == sum(l.params for l in model.build_layers(cfg))


def test_tiny_config_is_small():
    assert count_params(init_params(TINY_CONFIG)) <= 10_000


@pytest.mark.parametrize("q", [1, 2, 3, 5])
def test_param_count_independent_of_stages(q):
    cfg = with_overrides(DESK_CONFIG, num_stages=q)
    assert count_params(init_params(cfg)) == count_params(init_params(DESK_CONFIG))
    assert count_macs(cfg) * 3 == count_macs(DESK_CONFIG) * q


def test_config_counts_round_trip():
    for cfg in (FULL_CONFIG, DESK_CONFIG, TINY_CONFIG):
        assert model.ModelConfig.from_counts(cfg.to_counts()) == cfg


# ---------------------------------------------------------------- shapes


@pytest.mark.parametrize("frames", [1, 2, 7])
def test_shapes(tiny, rng, frames):
    cfg = TINY_CONFIG
    X = Tensor(feats(rng, cfg, frames))
    with no_grad():
        a = agm_forward(X, X, tiny, cfg)
        assert a.shape == (1, cfg.attention_channels, frames, cfg.num_bins)
        state = Tensor(np.zeros((1, cfg.hidden, frames, cfg.num_bins)))
        est, new = nrm_forward(X, X, a, state, tiny, cfg)
        assert est.shape == X.shape and new.shape == state.shape
        outs = darccn_forward(X, tiny, cfg)
    assert len(outs) == cfg.num_stages
    assert all(o.shape == X.shape and np.isfinite(o.data).all() for o in outs)


def test_shape_errors(tiny, rng):
    cfg = TINY_CONFIG
    X = Tensor(feats(rng, cfg, 3))
    with pytest.raises(ShapeMismatch):
        agm_forward(X, Tensor(feats(rng, cfg, 4)), tiny, cfg)
    with pytest.raises(ShapeMismatch):
        darccn_forward(Tensor(rng.standard_normal((1, 2, 3, 30))), tiny, cfg)
    a = agm_forward(X, X, tiny, cfg)
    with pytest.raises(ShapeMismatch):  # state from an utterance of another length
        nrm_forward(X, X, a, Tensor(np.zeros((1, cfg.hidden, 5, cfg.num_bins))), tiny, cfg)


def test_accepts_unbatched_features(tiny, rng):
    X = feats(rng, TINY_CONFIG, 4)
    with no_grad():
        a = darccn_forward(X[0], tiny, TINY_CONFIG)[-1].data
        b = darccn_forward(X, tiny, TINY_CONFIG)[-1].data
    np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------- AGM constant propagation


def _freq_conv(x, w, b, s):
    """Frequency-only 'same' conv by direct summation. x: (C, bins), w: (O, C, K)."""
    o, c, k = w.shape
    pf = (k - 1) // 2
    nb = x.shape[1]
    out = np.zeros((o, -(-nb // s)))
    for oc in range(o):
        for j in range(out.shape[1]):
            acc = b[oc]
            for ic in range(c):
                for kk in range(k):
                    f = j * s + kk - pf
                    if 0 <= f < nb:
                        acc += w[oc, ic, kk] * x[ic, f]
            out[oc, j] = acc
    return out


def _freq_deconv(x, w, b, s, out_bins):
    """Frequency-only transposed conv by scattering. x: (C, bins), w: (C, O, K)."""
    c, o, k = w.shape
    pf = (k - 1) // 2
    out = np.tile(b[:, None], (1, out_bins)).astype(float)
    for ic in range(c):
        for j in range(x.shape[1]):
            for kk in range(k):
                f = j * s + kk - pf
                if 0 <= f < out_bins:
                    out[:, f] += w[ic, :, kk] * x[ic, j]
    return out


def _agm_steady_state(params, cfg):
    """AGM response to an all-zero input once the causal zero padding has scrolled out:
    every time kernel then sees the same frame, so it collapses to its time sum."""
    layers = {l.name: l for l in model.build_layers(cfg)}
    x = np.zeros((4, cfg.num_bins))

    def block(name, x):
        l = layers[name]
        w = params[f"{name}.w"].data.sum(axis=2)
        b = params[f"{name}.b"].data
        y = _freq_deconv(x, w, b, 2, l.out_bins) if l.spec.transposed else _freq_conv(x, w, b, 2)
        rm, rv = params.buffers[f"{name}.bn.running_mean"], params.buffers[f"{name}.bn.running_var"]
        g, be = params[f"{name}.bn.gamma"].data, params[f"{name}.bn.beta"].data
        y = (y - rm[:, None]) / np.sqrt(rv[:, None] + 1e-5) * g[:, None] + be[:, None]
        return np.where(y > 0, y, np.expm1(np.minimum(y, 0)))

    skips = []
    for i in range(5):
        x = block(f"agm.enc{i}", x)
        skips.append(x)
    for j in range(5):
        if j:
            x = np.concatenate([x, skips[4 - j]])
        x = block(f"agm.dec{j}", x)
    return x


def test_agm_zero_input_constant_propagation(desk):
    cfg = DESK_CONFIG
    Z = np.zeros((1, 2, 16, cfg.num_bins))
    with no_grad():
        a = agm_forward(Z, Z, desk, cfg).data[0]
    oracle = _agm_steady_state(desk, cfg)
    # depth 10 layers with a 2-tap time kernel: frames >= 10 are past the padding
    for t in range(10, 16):
        np.testing.assert_allclose(a[:, t, :], oracle, atol=1e-10)
    assert np.array_equal(a[:, 10], a[:, 15])


def test_agm_causal(desk, rng):
    cfg = DESK_CONFIG
    X = feats(rng, cfg, 10)
    X2 = X.copy()
    X2[:, :, 6:] = rng.standard_normal(X2[:, :, 6:].shape)
    with no_grad():
        a, b = agm_forward(X, X, desk, cfg).data, agm_forward(X2, X2, desk, cfg).data
    assert np.array_equal(a[:, :, :6], b[:, :, :6])
    assert not np.array_equal(a[:, :, 6:], b[:, :, 6:])


# ---------------------------------------------------------------- attention coupling


def _nrm_pair(params, cfg, rng, frames=5):
    X = Tensor(feats(rng, cfg, frames))
    S = Tensor(feats(rng, cfg, frames))
    state = Tensor(rng.standard_normal((1, cfg.hidden, frames, cfg.num_bins)) * 0.3)
    with no_grad():
        a = agm_forward(X, S, params, cfg)
    return X, S, a, state


def test_gate_forced_open_equals_ungated(desk, rng):
    cfg = DESK_CONFIG
    p = desk.copy()
    p["nrm.att.b"].data = np.full_like(p["nrm.att.b"].data, 1e3)
    X, S, a, state = _nrm_pair(p, cfg, rng)
    with no_grad():
        gated, st1 = nrm_forward(X, S, a, state, p, cfg)
        plain, st2 = nrm_forward(X, S, None, state, p, cfg)
    assert np.array_equal(gated.data, plain.data)
    assert np.array_equal(st1.data, st2.data)


def test_gate_forced_closed_nulls_srnn_features(desk, rng):
    cfg = DESK_CONFIG
    p = desk.copy()
    p["nrm.att.b"].data = np.full_like(p["nrm.att.b"].data, -1e3)
    X, S, a, state = _nrm_pair(p, cfg, rng)
    X2, S2, _, state2 = _nrm_pair(p, cfg, rng)
    # oracle: the same stack fed nothing, i.e. SRNN weights and state zeroed
    q = p.copy()
    for name, t in q.group("nrm.srnn").items():
        t.data = np.zeros_like(t.data)
    zero_state = Tensor(np.zeros_like(state.data))
    with no_grad():
        closed, _ = nrm_forward(X, S, a, state, p, cfg)
        closed2, _ = nrm_forward(X2, S2, a, state2, p, cfg)
        ref, _ = nrm_forward(X, S, None, zero_state, q, cfg)
    assert np.array_equal(closed.data, closed2.data)
    np.testing.assert_array_equal(closed.data, ref.data)


# ---------------------------------------------------------------- unrolling


def test_single_stage_is_one_pass(tiny, rng):
    cfg = with_overrides(TINY_CONFIG, num_stages=1)
    X = Tensor(feats(rng, cfg, 4))
    with no_grad():
        outs = darccn_forward(X, tiny, cfg)
        a = agm_forward(X, X, tiny, cfg)
        est, _ = nrm_forward(X, X, a, Tensor(np.zeros((1, cfg.hidden, 4, cfg.num_bins))), tiny, cfg)
    assert len(outs) == 1
    np.testing.assert_array_equal(outs[0].data, est.data)


def test_stages_chain_explicitly(tiny, rng):
    cfg = TINY_CONFIG
    X = Tensor(feats(rng, cfg, 4))
    with no_grad():
        outs = darccn_forward(X, tiny, cfg)
        est, state = X, Tensor(np.zeros((1, cfg.hidden, 4, cfg.num_bins)))
        for l in range(cfg.num_stages):
            a = agm_forward(X, est, tiny, cfg)
            est, state = nrm_forward(X, est, a, state, tiny, cfg)
            np.testing.assert_array_equal(outs[l].data, est.data)


def test_stage_outputs_differ(desk, rng):
    X = Tensor(feats(rng, DESK_CONFIG, 6))
    with no_grad():
        outs = [o.data for o in darccn_forward(X, desk, DESK_CONFIG)]
    for i in range(len(outs)):
        for j in range(i):
            assert np.linalg.norm(outs[i] - outs[j]) > 1e-6


def test_stage_gradient_reaches_shared_weights(tiny, rng):
    """Shared weights collect gradient from every stage's loss term."""
    from darccn.nncore import backward, mean_all, square, sub

    X = Tensor(feats(rng, TINY_CONFIG, 3))
    S = feats(rng, TINY_CONFIG, 3)
    per_stage = []
    for l in range(TINY_CONFIG.num_stages):
        tiny.zero_grad()
        outs = darccn_forward(X, tiny, TINY_CONFIG, training=False)
        backward(mean_all(square(sub(outs[l], Tensor(S)))))
        per_stage.append(tiny["agm.enc0.w"].grad.copy())
    tiny.zero_grad()
    outs = darccn_forward(X, tiny, TINY_CONFIG, training=False)
    terms = [mean_all(square(sub(o, Tensor(S)))) for o in outs]
    backward(terms[0] + terms[1] + terms[2])
    np.testing.assert_allclose(tiny["agm.enc0.w"].grad, sum(per_stage), atol=1e-12)
    assert all(np.abs(g).max() > 0 for g in per_stage[1:])
    tiny.zero_grad()


# ---------------------------------------------------------------- enhancement


def test_enhance_zero_waveform(desk):
    y = enhance_utterance(np.zeros(3200), desk, DESK_CONFIG)
    assert y.shape == (3200,) and np.isfinite(y).all()


@pytest.mark.parametrize("n", [64, 65, 1000, 3201])
def test_enhance_preserves_length(desk, rng, n):
    y = enhance_utterance(rng.standard_normal(n) * 0.1, desk, DESK_CONFIG)
    assert len(y) == n and np.isfinite(y).all()


def test_enhance_pipeline_with_identity_network(desk, rng, monkeypatch):
    """With the network replaced by the identity, the pipeline is istft(stft(x))."""
    monkeypatch.setattr(model, "enhance_features", lambda X, params, cfg: np.asarray(X))
    x = rng.standard_normal(4000)
    scfg = DESK_CONFIG.stft_config()
    ref = istft(unpack_features(pack_features(stft(x, scfg))), scfg, out_len=len(x))
    np.testing.assert_array_equal(enhance_utterance(x, desk, DESK_CONFIG), ref)
    interior = slice(scfg.win_len, len(x) - scfg.win_len)
    np.testing.assert_allclose(ref[interior], x[interior], atol=1e-10)


def test_enhance_is_deterministic(desk, rng):
    x = rng.standard_normal(2000) * 0.1
    assert np.array_equal(enhance_utterance(x, desk, DESK_CONFIG), enhance_utterance(x, desk, DESK_CONFIG))


def rel_l2(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def test_streaming_equals_batch_99_frames(desk, rng):
    scfg = DESK_CONFIG.stft_config()
    x = rng.standard_normal(scfg.win_len + 98 * scfg.hop) * 0.1
    a = enhance_utterance(x, desk, DESK_CONFIG)
    b = enhance_streaming(x, desk, DESK_CONFIG)
    assert rel_l2(b, a) < 1e-6


def test_streaming_full_config_short(rng):
    params = randomize(init_params(FULL_CONFIG, seed=3))
    x = rng.standard_normal(320 + 7 * 160) * 0.1
    assert rel_l2(enhance_streaming(x, params, FULL_CONFIG), enhance_utterance(x, params, FULL_CONFIG)) < 1e-6


def test_streaming_frame_outputs_are_causal(tiny, rng):
    cfg = TINY_CONFIG
    scfg = cfg.stft_config()
    x = rng.standard_normal(scfg.win_len + 20 * scfg.hop)
    s1, s2 = StreamingEnhancer(tiny, cfg), StreamingEnhancer(tiny, cfg)
    for t in range(21):
        fr = x[t * scfg.hop : t * scfg.hop + scfg.win_len]
        o1 = s1.process_frame(t, fr)
        o2 = s2.process_frame(t, fr)
        assert np.array_equal(o1, o2)
        assert len(o1) == scfg.hop


def test_streaming_protocol_violation(tiny):
    s = StreamingEnhancer(tiny, TINY_CONFIG)
    w = TINY_CONFIG.stft_config().win_len
    s.process_frame(0, np.zeros(w))
    with pytest.raises(ProtocolViolation):
        s.process_frame(2, np.zeros(w))
    with pytest.raises(ProtocolViolation):
        s.process_frame(0, np.zeros(w))
    with pytest.raises(ShapeMismatch):
        s.process_frame(1, np.zeros(w + 1))


def test_streaming_reset_forgets_previous_utterance(tiny, rng):
    cfg = TINY_CONFIG
    s = StreamingEnhancer(tiny, cfg)
    x1, x2 = rng.standard_normal(800), rng.standard_normal(800)
    fresh = enhance_streaming(x2, tiny, cfg)
    enhance_streaming(x1, tiny, cfg, session=s)
    assert np.array_equal(enhance_streaming(x2, tiny, cfg, session=s), fresh)


def test_end_to_end_waveform_causality(desk, rng):
    scfg = DESK_CONFIG.stft_config()
    x = rng.standard_normal(scfg.win_len + 40 * scfg.hop) * 0.1
    base = enhance_utterance(x, desk, DESK_CONFIG)
    for t in (0, 5, 20, 38):
        x2 = x.copy()
        cut = t * scfg.hop + scfg.win_len
        x2[cut:] += rng.standard_normal(len(x) - cut)
        y = enhance_utterance(x2, desk, DESK_CONFIG)
        assert np.array_equal(y[: t * scfg.hop + 1], base[: t * scfg.hop + 1])
