import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssdgl import autodiff as ad
from ssdgl.autodiff import GradTape, Tensor, grad_check_many
from ssdgl.data import synth_cube
from ssdgl.network import (
    CellState,
    ConfigError,
    NetConfig,
    band_groups,
    convlstm_cell,
    encoder_decoder,
    fan_in,
    gcl_forward,
    init_params,
    param_shapes,
    predict_labels,
    spatial_attention,
    spatial_map,
    spectral_attention,
    spectral_weights,
    ssdgl_forward,
    stem_forward,
    zero_state,
)
from ssdgl.params import ParamStore

TINY = dict(time_steps=2, cell_kernel=3, hidden_channels=4, reduction_ratio=2, spatial_kernel=3,
            gn_groups=4, skip_channels=8, encoder_channels=(8, 8, 8, 16))


def tiny_cfg(bands=8, classes=3, **kw):
    return NetConfig(bands, classes, **{**TINY, **kw})


def zeroed(store: ParamStore) -> ParamStore:
    for t in store.tensors():
        t.data[...] = 0
    return store


def test_convlstm_zero_weights():
    x = Tensor(np.random.default_rng(0).standard_normal((3, 5, 5)))
    st0 = zero_state(2, 5, 5, np.float64)
    out = convlstm_cell(x, st0, Tensor(np.zeros((8, 5, 3, 3))), Tensor(np.zeros(8)))
    np.testing.assert_array_equal(out.h.data, 0)
    np.testing.assert_array_equal(out.c.data, 0)


def test_convlstm_saturated_gates_keep_memory():
    hid = 2
    bias = np.zeros(4 * hid)
    bias[:hid] = -50.0  # input gate shut
    bias[hid:2 * hid] = 50.0  # forget gate open
    c_prev = np.random.default_rng(1).standard_normal((hid, 4, 4))
    state = CellState(Tensor(np.zeros((hid, 4, 4))), Tensor(c_prev))
    out = convlstm_cell(Tensor(np.zeros((1, 4, 4))), state, Tensor(np.zeros((4 * hid, 1 + hid, 3, 3))), Tensor(bias))
    assert np.abs(out.c.data - c_prev).max() <= 1e-3


def test_convlstm_matches_direct_equations():
    rng = np.random.default_rng(2)
    hid, cin = 2, 3
    x = rng.standard_normal((cin, 4, 4))
    h0, c0 = rng.standard_normal((hid, 4, 4)), rng.standard_normal((hid, 4, 4))
    w = rng.standard_normal((4 * hid, cin + hid, 1, 1)) * 0.5
    b = rng.standard_normal(4 * hid)
    out = convlstm_cell(Tensor(x), CellState(Tensor(h0), Tensor(c0)), Tensor(w), Tensor(b))
    z = np.einsum("oc,chw->ohw", w[:, :, 0, 0], np.concatenate([x, h0])) + b[:, None, None]
    sig = lambda v: 1 / (1 + np.exp(-v))
    i, f, o, g = sig(z[:hid]), sig(z[hid:2 * hid]), sig(z[2 * hid:3 * hid]), np.tanh(z[3 * hid:])
    c = f * c0 + i * g
    np.testing.assert_allclose(out.c.data, c, atol=1e-12)
    np.testing.assert_allclose(out.h.data, o * np.tanh(c), atol=1e-12)


@pytest.mark.parametrize("hw", [(3, 3), (5, 9), (12, 7)])
def test_convlstm_preserves_spatial_dims(hw):
    st0 = zero_state(2, *hw)
    out = convlstm_cell(Tensor(np.ones((1, *hw), np.float32)), st0,
                        Tensor(np.ones((8, 3, 3, 3), np.float32)), Tensor(np.zeros(8, np.float32)))
    assert out.h.shape == (2, *hw)


def test_group_sizes():
    assert NetConfig(200, 16).group_sizes == [25] * 8
    assert NetConfig(10, 2, reduction_ratio=16).group_sizes == [2, 2, 1, 1, 1, 1, 1, 1]


def test_band_groups_are_contiguous_and_padded():
    cfg = NetConfig(10, 2)
    x = Tensor(np.arange(10, dtype=np.float32).reshape(10, 1, 1) + np.zeros((10, 2, 2), np.float32))
    groups = band_groups(x, cfg)
    assert [g.shape[0] for g in groups] == [2] * 8
    np.testing.assert_array_equal(groups[1].data[:, 0, 0], [2, 3])
    np.testing.assert_array_equal(groups[2].data[:, 0, 0], [4, 0])


def test_gcl_output_shape_and_zero_collapse():
    cfg = NetConfig(200, 16, hidden_channels=4, cell_kernel=3, reduction_ratio=4)
    x = Tensor(np.random.default_rng(0).standard_normal((200, 5, 6)).astype(np.float32))
    params = init_params(cfg, seed=0)
    assert gcl_forward(x, params, cfg).shape == (32, 5, 6)
    assert np.all(gcl_forward(x, zeroed(params), cfg).data == 0)


def test_spectral_attention_zero_output_layer():
    cfg = tiny_cfg()
    params = init_params(cfg, seed=0)
    params["spec_att.w1"].data[...] = 0
    f = Tensor(np.random.default_rng(0).standard_normal((8, 4, 4)).astype(np.float32))
    np.testing.assert_allclose(spectral_attention(f, params).data, 0.5 * f.data, rtol=1e-6)


def test_spectral_attention_hand_case():
    f = np.array([[[1.0, -2.0], [0.5, 3.0]], [[0.0, 1.0], [2.0, -1.0]]])
    store = ParamStore()
    store.add("spec_att.w0", np.array([[1.0, 0.0], [0.0, 1.0]]))
    store.add("spec_att.b0", np.zeros(2))
    store.add("spec_att.w1", np.array([[0.5, 0.0], [0.0, -1.0]]))
    store.add("spec_att.b1", np.zeros(2))
    avg, mx = f.mean(axis=(1, 2)), f.max(axis=(1, 2))
    relu = lambda v: np.maximum(v, 0)
    z0 = 0.5 * relu(avg[0]) + 0.5 * relu(mx[0])
    z1 = -relu(avg[1]) - relu(mx[1])
    s = 1 / (1 + np.exp(-np.array([z0, z1])))
    np.testing.assert_allclose(spectral_weights(Tensor(f), store).data, s, atol=1e-12)
    np.testing.assert_allclose(spectral_attention(Tensor(f), store).data, f * s[:, None, None], atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), c=st.integers(2, 6), h=st.integers(2, 7), w=st.integers(2, 7))
def test_attention_factorization(seed, c, h, w):
    rng = np.random.default_rng(seed)
    cfg = NetConfig(c, 2, use_gcl=False, reduction_ratio=1, spatial_kernel=3)
    params = init_params(cfg, seed=seed, dtype=np.float64)
    f = Tensor(rng.standard_normal((c, h, w)) + 0.1)
    s = spectral_weights(f, params).data
    assert np.all((s > 0) & (s < 1))
    np.testing.assert_allclose(spectral_attention(f, params).data, f.data * s[:, None, None])
    a = spatial_map(f, params).data
    assert a.shape == (1, h, w) and np.all((a > 0) & (a < 1))
    out = spatial_attention(f, params).data
    np.testing.assert_allclose(out, f.data * a)
    assert np.all(np.abs(out) < np.abs(f.data))


def test_spatial_attention_constant_field():
    store = ParamStore()
    k = np.random.default_rng(0).standard_normal((1, 2, 3, 3))
    store.add("spat_att.weight", k)
    store.add("spat_att.bias", np.array([0.1]))
    f = np.full((4, 3, 3), 2.0)
    # channel avg and max are both 2 everywhere; zero padding trims the border taps
    padded = np.pad(np.full((2, 3, 3), 2.0), ((0, 0), (1, 1), (1, 1)))
    z = np.array([[np.sum(padded[:, i:i + 3, j:j + 3] * k[0]) + 0.1 for j in range(3)] for i in range(3)])
    a = 1 / (1 + np.exp(-z))
    np.testing.assert_allclose(spatial_attention(Tensor(f), store).data, f * a, atol=1e-12)
    store["spat_att.weight"].data[...] = 0
    store["spat_att.bias"].data[...] = 0
    np.testing.assert_allclose(spatial_attention(Tensor(f), store).data, 0.5 * f)


def test_encoder_decoder_shapes():
    cfg = NetConfig(4, 5, use_gcl=False, use_gjam=False, encoder_channels=(4, 4, 4, 4), skip_channels=4)
    params = init_params(cfg, seed=0)
    trace = []
    out = encoder_decoder(Tensor(np.ones((4, 160, 160), np.float32)), params, cfg, trace=trace)
    assert out.shape == (5, 160, 160)
    assert trace == [(80, 80), (40, 40), (20, 20), (10, 10)]
    with pytest.raises(ad.ShapeError):
        encoder_decoder(Tensor(np.ones((4, 24, 24), np.float32)), params, cfg)


def test_forward_shape_and_determinism():
    cube, _ = synth_cube(0, 32, 32, 16, 3, (0.3, 0.3, 0.4))
    cfg = NetConfig(16, 3, time_steps=4, hidden_channels=4, reduction_ratio=4, encoder_channels=(8, 8, 8, 8),
                    skip_channels=8, cell_kernel=3)
    params = init_params(cfg, seed=1)
    a = ssdgl_forward(cube.values, params, cfg)
    b = ssdgl_forward(cube.values, params, cfg)
    assert a.shape == (3, 32, 32) and a.data.tobytes() == b.data.tobytes()


@settings(max_examples=10, deadline=None)
@given(h=st.integers(3, 9), w=st.integers(3, 9), seed=st.integers(0, 100))
def test_stem_preserves_spatial_size(h, w, seed):
    cfg = tiny_cfg()
    x = Tensor(np.random.default_rng(seed).standard_normal((8, h, w)).astype(np.float32))
    assert stem_forward(x, init_params(cfg, seed=seed), cfg).shape[1:] == (h, w)


def test_zero_parameters_give_head_bias():
    cfg = tiny_cfg()
    params = zeroed(init_params(cfg, seed=0))
    params["head.bias"].data[...] = [0.5, -1.0, 2.0]
    x = Tensor(np.random.default_rng(0).standard_normal((8, 16, 16)).astype(np.float32))
    assert np.all(stem_forward(x, params, cfg).data == 0)
    logits = ssdgl_forward(x, params, cfg).data
    np.testing.assert_array_equal(logits, np.broadcast_to(np.array([0.5, -1.0, 2.0])[:, None, None], logits.shape))


def test_init_rules():
    cfg = tiny_cfg()
    a, b = init_params(cfg, seed=3), init_params(cfg, seed=3)
    assert a.equal(b)
    hid = cfg.hidden_channels
    for layer in ("gcl.l1.bias", "gcl.l2.bias"):
        bias = a[layer].data
        np.testing.assert_array_equal(bias[hid:2 * hid], 1.0)
        assert np.all(bias[:hid] == 0) and np.all(bias[2 * hid:] == 0)
    for name, t in a.items():
        if t.data.ndim > 1:
            assert np.abs(t.data).max() <= np.sqrt(6.0 / fan_in(t.shape))
        if name.endswith(".gamma"):
            assert np.all(t.data == 1)


def test_layer_widths_are_group_multiples():
    cfg = NetConfig(32, 4, hidden_channels=16)
    for name, shape in param_shapes(cfg).items():
        if name.startswith(("enc.", "dec.")) and name.endswith(".weight"):
            assert shape[0] % cfg.gn_groups == 0, name


@pytest.mark.parametrize(
    "kw",
    [dict(cell_kernel=4), dict(spatial_kernel=6), dict(hidden_channels=6), dict(encoder_channels=(8, 8, 8)),
     dict(skip_channels=10), dict(time_steps=40), dict(reduction_ratio=10_000)],
)
def test_invalid_network_config(kw):
    with pytest.raises(ConfigError):
        NetConfig(32, 4, **kw)


def test_header_round_trip():
    cfg = tiny_cfg(use_gjam=False)
    assert NetConfig.from_header(cfg.to_header()) == cfg


def test_predict_labels_ties_and_crop():
    logits = np.zeros((3, 4, 4))
    logits[2, 0, 0] = 1.0
    out = predict_labels(logits, (2, 3))
    assert out.shape == (2, 3) and out[0, 0] == 3 and out[0, 1] == 1


def _tiny_loss_setup(seed):
    cfg = tiny_cfg()
    cube, lab = synth_cube(1, 16, 16, 8, 3, (0.4, 0.4, 0.2))
    params = init_params(cfg, seed=seed, dtype=np.float64)
    x = Tensor(cube.values.astype(np.float64))
    rng = np.random.default_rng(seed)
    mask = (rng.random((16, 16)) < 0.2) & (lab.labels > 0)
    onehot_idx = np.nonzero(mask)
    w = np.array([0.7, 1.1, 1.2])

    def loss():
        logits = ssdgl_forward(x, params, cfg)
        cls = lab.labels[onehot_idx] - 1
        picked = ad.gather_pixels(ad.log_softmax(logits), cls, *onehot_idx)
        return ad.scale(ad.sum_all(ad.mul(picked, Tensor(w[cls] / len(cls)))), -1.0)

    return params, loss


@pytest.mark.slow
@pytest.mark.parametrize("prefix", ["gcl.l1", "spec_att", "spat_att", "enc.0.conv1", "enc.3.down", "dec.0", "head"])
def test_full_model_gradient_by_block(prefix):
    params, loss = _tiny_loss_setup(seed=0)
    chosen = [t for n, t in params.items() if n.startswith(prefix)]
    # step 1e-6 keeps the central difference inside one linear piece of the relu network
    assert grad_check_many(loss, chosen, step=1e-6, max_coords=4, seed=1) <= 1e-4


def test_backward_reaches_every_parameter():
    params, loss = _tiny_loss_setup(seed=2)
    with GradTape() as tape:
        value = loss()
    grads = ad.backward(value, tape, wrt=params.tensors())
    dead = [n for n, t in params.items() if not np.any(grads[t].data)]
    assert dead == []
