import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from wmx import nets, numerics
from wmx.errors import ShapeError
from wmx.scenario import crossing_schedule
from oracles import conv2d_loops, deconv2d_loops, lstm_step_scalar, vae_forward

GOLDEN = Path(__file__).parent / "golden" / "vae_golden.json"


# -- convolution ---------------------------------------------------------------------

def test_conv_identity_1x1():
    x = np.random.default_rng(0).normal(size=(1, 5, 6))
    out = nets.conv_forward(x, np.ones((1, 1, 1, 1)), np.zeros(1))
    assert np.array_equal(out, x)


def test_conv_impulse_response_is_kernel():
    k = np.arange(9.0).reshape(1, 1, 3, 3)
    x = np.zeros((1, 5, 5))
    x[0, 2, 2] = 1
    out = nets.conv_forward(x, k, np.zeros(1), padding=(1, 1))
    # cross-correlation: the impulse response reads the kernel back to front
    assert np.array_equal(out[0, 1:4, 1:4], k[0, 0, ::-1, ::-1])
    out = nets.conv_forward(np.pad(x, ((0, 0), (2, 2), (2, 2))), k, np.zeros(1))
    assert np.array_equal(out[0, 2:5, 2:5], k[0, 0, ::-1, ::-1])


@pytest.mark.parametrize("stride,pad", [((1, 1), (0, 0)), ((2, 1), (1, 2)), ((2, 3), (1, 1))])
def test_conv_matches_loop_oracle(stride, pad):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 7, 9))
    w = rng.normal(size=(3, 2, 3, 4))
    b = rng.normal(size=3)
    out = nets.conv_forward(x, w, b, stride, pad)
    assert np.max(np.abs(out - conv2d_loops(x, w, b, stride, pad))) <= 1e-12


@pytest.mark.parametrize("stride,pad,op", [((2, 2), (1, 1), (0, 1)), ((2, 4), (0, 0), (1, 1)), ((1, 1), (0, 0), (0, 0))])
def test_deconv_matches_loop_oracle(stride, pad, op):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3, 4))
    w = rng.normal(size=(2, 3, 3, 4))
    b = rng.normal(size=3)
    out = nets.deconv_forward(x, w, b, stride, pad, op)
    assert np.max(np.abs(out - deconv2d_loops(x, w, b, stride, pad, op))) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.integers(1, 5), st.integers(1, 3), st.integers(0, 2))
def test_conv_output_size_formula(n, k, s, p):
    if n + 2 * p < k:
        return
    x = np.zeros((1, n, n))
    out = nets.conv_forward(x, np.zeros((1, 1, k, k)), np.zeros(1), (s, s), (p, p))
    assert out.shape[1] == (n + 2 * p - k) // s + 1 == nets.conv_out_size(n, k, s, p)


# -- VAE ------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def reference_vae():
    return nets.init_vae(seed=0)


def test_reference_geometry(reference_vae):
    shapes = reference_vae.layer_shapes()
    assert [shapes[f"conv{i}"] for i in range(1, 5)] == [(16, 22, 42), (32, 11, 21), (64, 5, 10), (128, 2, 2)]
    capture = []
    reference_vae.encode(nets.one_hot(np.zeros((45, 85), np.uint8)), capture=capture)
    assert capture[-1].shape[1:] == (2, 2)


def test_reference_config_rejects_wrong_layer_count(reference_vae):
    layers = [ly for ly in reference_vae.layers if ly.name != "conv4"]
    with pytest.raises(ShapeError):
        nets.VAE(layers, reference_vae.params, 50, reference_vae.input_shape, "reference")


def test_zero_weights_encode_to_mean_bias():
    beta = np.linspace(-1, 1, 50)
    vae = nets.zero_vae(mean_bias=beta)
    for seed in range(2):
        frame = np.random.default_rng(seed).integers(0, 24, (45, 85)).astype(np.uint8)
        assert np.allclose(vae.encode_frame(frame), nets.f32(beta), atol=0)


def test_zero_decoder_is_uniform():
    dec = nets.zero_vae().decode(np.random.default_rng(3).normal(size=50))
    assert np.allclose(dec.probs, 1 / 24, atol=1e-12)


def test_softmax_sums_to_one(reference_vae):
    probs = reference_vae.decode(np.random.default_rng(4).normal(size=50)).probs
    assert probs.shape == (24, 45, 85)
    assert np.max(np.abs(probs.sum(axis=0) - 1)) <= 1e-9


def test_encode_deterministic(reference_vae):
    frame = np.random.default_rng(5).integers(0, 24, (45, 85)).astype(np.uint8)
    assert reference_vae.encode_frame(frame).tobytes() == reference_vae.encode_frame(frame.copy()).tobytes()


def _golden_fixture():
    vae = nets.init_vae(seed=7, channels=(2, 2, 2, 2), latent_dim=4)
    frame = np.random.default_rng(11).integers(0, 24, (45, 85)).astype(np.uint8)
    return vae, frame


def test_vae_matches_frozen_golden():
    vae, frame = _golden_fixture()
    golden = json.loads(GOLDEN.read_text())
    z = vae.encode_frame(frame)
    dec = vae.decode(z)
    assert np.allclose(z, golden["z"], atol=1e-12, rtol=0)
    assert np.allclose(dec.probs[:, 0, 0], golden["probs_corner"], atol=1e-12, rtol=0)
    assert np.allclose(dec.probs[:, 22, 42], golden["probs_center"], atol=1e-12, rtol=0)
    assert int(dec.frame.astype(int).sum()) == golden["argmax_sum"]


@pytest.mark.slow
def test_golden_regenerates_from_oracle():
    vae, frame = _golden_fixture()
    params = {k: v.astype(np.float64) for k, v in vae.params.items()}
    z, probs = vae_forward(vae.layers, params, frame, 24)
    golden = json.loads(GOLDEN.read_text())
    assert np.allclose(z, golden["z"], atol=1e-12, rtol=0)
    assert np.allclose(probs[:, 22, 42], golden["probs_center"], atol=1e-12, rtol=0)


def test_hand_wired_autoencoder_reproduces_frames():
    rng = np.random.default_rng(6)
    frames = rng.integers(0, 24, (3, 45, 85)).astype(np.uint8)
    vae = nets.hand_wire_autoencoder(frames)
    for f in frames:
        assert np.array_equal(vae.decode(vae.encode_frame(f)).frame, f)


def test_vae_store_roundtrip(tmp_path, reference_vae):
    from wmx.model_store import load_model, save_model
    save_model(*reference_vae.to_store(), tmp_path / "v")
    back = nets.VAE.from_store(*load_model(tmp_path / "v"))
    z = np.random.default_rng(7).normal(size=50)
    assert back.decode(z).probs.tobytes() == reference_vae.decode(z).probs.tobytes()


def test_decode_rejects_wrong_length(reference_vae):
    with pytest.raises(ShapeError):
        reference_vae.decode(np.zeros(49))


# -- LSTM ---------------------------------------------------------------------------------

def _random_lstm(cells=8, latent=5, seed=0, scale=0.7):
    rng = np.random.default_rng(seed)
    return nets.LSTM(rng.normal(0, scale, (4 * cells, latent + 3)), rng.normal(0, scale, (4 * cells, cells)),
                     rng.normal(0, scale, 4 * cells), rng.normal(0, scale, (latent, cells)),
                     rng.normal(0, scale, latent))


def test_zero_lstm_closed_form():
    m = nets.LSTM(np.zeros((8, 8)), np.zeros((8, 2)), np.zeros(8), np.zeros((5, 2)), np.zeros(5))
    state, y, cap = m.step(nets.LstmState.zeros(2), np.ones(5), (1, 180, 0))
    assert np.all(cap.i == 0.5) and np.all(cap.f == 0.5) and np.all(cap.o == 0.5)
    assert np.all(cap.g == 0) and np.all(state.c == 0) and np.all(state.h == 0) and np.all(y == 0)


def test_lstm_matches_scalar_oracle():
    m = _random_lstm()
    rng = np.random.default_rng(1)
    state = nets.LstmState(rng.normal(0, 0.5, 8), rng.normal(0, 0.5, 8))
    x = rng.normal(size=8)
    new, y, _ = m.step_raw(state, x)
    h, c, y_ref = lstm_step_scalar(m.w_x.astype(float), m.w_h.astype(float), m.bias.astype(float),
                                   m.head_w.astype(float), m.head_b.astype(float), state.h, state.c, x)
    assert np.max(np.abs(new.h - h)) <= 1e-12
    assert np.max(np.abs(new.c - c)) <= 1e-12
    assert np.max(np.abs(y - y_ref)) <= 1e-12


def test_action_normalization():
    assert np.allclose(nets.normalize_action((1, 180, -36)), [1, 0.5, -0.1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000))
def test_gate_ranges(seed):
    m = _random_lstm(seed=seed, scale=3.0)
    rng = np.random.default_rng(seed)
    state, _, cap = m.step(nets.LstmState(rng.uniform(-1, 1, 8), rng.normal(size=8)),
                           rng.normal(size=5), (1, rng.uniform(0, 360), rng.uniform(-90, 90)))
    for gate in (cap.i, cap.f, cap.o):
        assert np.all((gate >= 0) & (gate <= 1))
    assert np.all(np.abs(cap.g) <= 1) and np.all(np.abs(state.h) < 1)


def test_latch_cell_holds_value():
    spec = nets.WiringSpec(cells=8, latent_dim=5, designs=[nets.CellDesign("latch", 3, value=0.4)], seed=2)
    m = nets.hand_wire(spec)
    acts = np.array([[1, 180, 0]] * 3 + [[0, 270, 5]] * 10)
    ro = nets.rollout(m, np.zeros(5), acts)
    held = ro.cell[2:, 3]
    assert abs(held[0] - 0.4) <= 1e-6
    assert np.max(np.abs(held - held[0])) <= 1e-6


def test_rollout_single_step_equals_step():
    m = _random_lstm()
    z0 = np.random.default_rng(2).normal(size=5)
    ro = nets.rollout(m, z0, [[1, 180, 0]])
    _, y, _ = m.step(nets.LstmState.zeros(8), z0, (1, 180, 0))
    assert np.array_equal(ro.z[0], y)


def test_rollout_feedback_and_teacher_forcing():
    m = _random_lstm()
    rng = np.random.default_rng(3)
    acts = np.tile([1.0, 180.0, 0.0], (6, 1))
    zs = rng.normal(size=(6, 5))
    ro = nets.rollout(m, zs[0], acts)
    state, z = nets.LstmState.zeros(8), zs[0]
    for t in range(6):
        state, z, _ = m.step(state, z, acts[t])
        assert np.array_equal(ro.z[t], z)
    forced = nets.rollout(m, None, acts, feedback=False, z_inputs=zs)
    state = nets.LstmState.zeros(8)
    for t in range(6):
        state, z, _ = m.step(state, zs[t], acts[t])
        assert np.array_equal(forced.z[t], z)
    assert len(forced.steps) == 6


def test_lstm_store_roundtrip(tmp_path):
    from wmx.model_store import load_model, save_model
    m = _random_lstm()
    save_model(*m.to_store(), tmp_path / "l")
    back = nets.LSTM.from_store(*load_model(tmp_path / "l"))
    assert back.w_x.tobytes() == m.w_x.tobytes() and back.cells == 8


# -- hand wiring ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def wired_rollout():
    spec = nets.WiringSpec(designs=[nets.CellDesign("pulse", 134, 80, 159),
                                    nets.CellDesign("track", 100, component=2)], seed=0)
    m = nets.hand_wire(spec)
    acts = crossing_schedule().actions(400)
    z0 = np.random.default_rng(0).normal(size=50)
    return m, acts, nets.rollout(m, z0, acts, keep_steps=False)


def test_reference_scale_rollout_shape(wired_rollout):
    _, _, ro = wired_rollout
    assert ro.hidden.shape == (400, 512)


def test_pulse_cell_profile(wired_rollout):
    _, _, ro = wired_rollout
    h = expit(ro.hidden[:, 134])
    inside = np.zeros(400, bool)
    inside[80:159] = True
    edges = [0, 80, 159]
    interior = np.ones(400, bool)
    interior[edges] = False
    assert np.all(h[inside & interior] > 0.7)
    assert np.all(h[~inside & interior] < 0.3)
    # edge frames: one step to charge or discharge, bounded by sigmoid(tanh(1))
    bound = expit(math.tanh(1.0))
    assert h[80] > 0.5 and h[0] < 0.5 and h[159] < 0.5
    assert abs(h[80] - 0.5) <= bound - 0.5 + 1e-9


def test_track_cell_follows_head_angle(wired_rollout):
    _, acts, ro = wired_rollout
    s = numerics.cosine_similarity(numerics.central_gradient(expit(ro.hidden[:, 100])),
                                   numerics.central_gradient(acts[:, 2]))
    assert abs(s) >= 0.9


def test_no_designs_is_plain_random():
    m = nets.hand_wire(nets.WiringSpec(cells=16, latent_dim=5, designs=[], seed=4))
    assert np.count_nonzero(m.w_h) == m.w_h.size
    assert "aux_cells" in m.meta and m.meta["aux_cells"] == []


def test_infeasible_specs():
    with pytest.raises(ValueError):
        nets.hand_wire(nets.WiringSpec(cells=8, latent_dim=5, designs=[nets.CellDesign("pulse", 7, 2, 4)]))
    with pytest.raises(ValueError):
        nets.hand_wire(nets.WiringSpec(cells=8, latent_dim=5, designs=[nets.CellDesign("pulse", 0, 5, 5)]))
    with pytest.raises(ValueError):
        nets.hand_wire(nets.WiringSpec(cells=8, latent_dim=5, designs=[nets.CellDesign("track", 1, component=4)]))


def test_latent_map_lstm_is_close_to_matrix():
    rng = np.random.default_rng(5)
    mat = rng.normal(size=(6, 6))
    m = nets.latent_map_lstm(mat)
    z = rng.normal(size=6)
    _, y, _ = m.step(nets.LstmState.zeros(6), z, (1, 90, 10))
    assert np.allclose(y, mat @ z, atol=1e-4)
