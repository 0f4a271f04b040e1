import math

import numpy as np
import pytest
import torch

from oraclead.model import (
    ModelConfig,
    OracleModel,
    attention_pool,
    decode_variable,
    encode_variable,
    forward,
    init_model,
    mhsa,
    parameter_specs,
)
from oraclead.structure import dissimilarity_batch
from oraclead.training import TrainConfig, gradient_check


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def _lstm_cell_ref(params, part, l, x, h, c, d):
    """Scalar-loop LSTM cell for one variable; ``params`` holds per-variable slices."""
    w_ih, w_hh, bias = params[f"{part}.{l}.w_ih"], params[f"{part}.{l}.w_hh"], params[f"{part}.{l}.bias"]
    z = [bias[k] + sum(x[a] * w_ih[a, k] for a in range(len(x))) + sum(h[a] * w_hh[a, k] for a in range(d))
         for k in range(4 * d)]
    i = [_sig(z[k]) for k in range(d)]
    f = [_sig(z[d + k]) for k in range(d)]
    o = [_sig(z[2 * d + k]) for k in range(d)]
    g = [math.tanh(z[3 * d + k]) for k in range(d)]
    c_new = [f[k] * c[k] + i[k] * g[k] for k in range(d)]
    h_new = [o[k] * math.tanh(c_new[k]) for k in range(d)]
    return h_new, c_new


def _var_params(arrays, i, n_layers, part):
    return {k: v[i] for k, v in arrays.items() if k.startswith(f"{part}.") and not k.startswith("dec.out")}


def _encode_ref(arrays, i, seq, cfg):
    d = cfg.hidden_dim
    p = _var_params(arrays, i, cfg.n_layers, "enc")
    state = [([0.0] * d, [0.0] * d) for _ in range(cfg.n_layers)]
    outs = []
    for x in seq:
        inp = [x]
        for l in range(cfg.n_layers):
            h, c = _lstm_cell_ref(p, "enc", l, inp, *state[l], d)
            state[l] = (h, c)
            inp = h
        outs.append(inp)
    return np.array(outs)


def _pool_ref(hiddens, w, b):
    e = [sum(h[k] * w[k] for k in range(len(w))) + b for h in hiddens]
    m = max(e)
    ex = [math.exp(v - m) for v in e]
    z = sum(ex)
    alpha = [v / z for v in ex]
    c = [sum(alpha[t] * hiddens[t][k] for t in range(len(hiddens))) for k in range(len(w))]
    return np.array(c), np.array(alpha)


def _mhsa_ref(C, arrays, H):
    N, d = C.shape
    dh = d // H
    out = np.zeros((N, d))
    for h in range(H):
        wq, wk, wv, wo = (arrays[f"attn.w_{x}"][h] for x in "qkvo")
        q = [[sum(C[n, a] * wq[a, e] for a in range(d)) for e in range(dh)] for n in range(N)]
        k = [[sum(C[n, a] * wk[a, e] for a in range(d)) for e in range(dh)] for n in range(N)]
        v = [[sum(C[n, a] * wv[a, e] for a in range(d)) for e in range(dh)] for n in range(N)]
        for i in range(N):
            logits = [sum(q[i][e] * k[j][e] for e in range(dh)) / math.sqrt(dh) for j in range(N)]
            m = max(logits)
            ex = [math.exp(x - m) for x in logits]
            att = [x / sum(ex) for x in ex]
            head = [sum(att[j] * v[j][e] for j in range(N)) for e in range(dh)]
            for a in range(d):
                out[i, a] += sum(head[e] * wo[e, a] for e in range(dh))
    return out


def _decode_ref(arrays, i, c_star, cfg):
    d, L = cfg.hidden_dim, cfg.window
    p = _var_params(arrays, i, cfg.n_layers, "dec")
    w, b = arrays["dec.out.w"][i], arrays["dec.out.b"][i]
    state = [(list(c_star), [0.0] * d) for _ in range(cfg.n_layers)]
    y = 0.0
    outs = []
    for _ in range(L):
        inp = [y]
        for l in range(cfg.n_layers):
            h, c = _lstm_cell_ref(p, "dec", l, inp, *state[l], d)
            state[l] = (h, c)
            inp = h
        y = sum(inp[k] * w[k] for k in range(d)) + b
        outs.append(y)
    return np.array(outs)


SMALL = ModelConfig(n_vars=3, window=5, hidden_dim=4, n_heads=2, n_layers=2, seed=3)


@pytest.fixture(scope="module")
def small():
    return init_model(SMALL)


class TestShapes:
    def test_forward_shapes(self, small):
        w = np.random.default_rng(0).standard_normal((7, 5, 3))
        out = forward(small, w)
        assert out.causal.shape == (7, 3, 4)
        assert out.refined.shape == (7, 3, 4)
        assert out.recon.shape == (7, 4, 3)
        assert out.pred.shape == (7, 3)
        assert out.attention_weights.shape == (7, 3, 4)
        np.testing.assert_allclose(out.attention_weights.sum(-1), 1.0, atol=1e-12)

    def test_bad_window_shape(self, small):
        with pytest.raises(ValueError, match="expected windows"):
            small(torch.zeros((1, 4, 3), dtype=torch.float64))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(n_vars=2, hidden_dim=10, n_heads=4)
        with pytest.raises(ValueError):
            ModelConfig(n_vars=2, window=1)
        with pytest.raises(ValueError):
            ModelConfig(n_vars=2, dtype="float16")


class TestOracles:
    def test_zero_parameters_fixed_point(self):
        model = OracleModel(SMALL)
        out = forward(model, np.random.default_rng(1).standard_normal((2, 5, 3)))
        for k in ("causal", "refined", "recon", "pred"):
            np.testing.assert_array_equal(getattr(out, k), 0.0)
        np.testing.assert_allclose(out.attention_weights, 0.25, atol=1e-15)

    def test_encoder_against_scalar_loop(self, small):
        arrays = small.arrays()
        seq = [0.3, -1.2, 0.7, 2.0]
        for i in range(3):
            np.testing.assert_allclose(encode_variable(small, i, seq), _encode_ref(arrays, i, seq, SMALL),
                                       atol=1e-10, rtol=0)

    def test_single_lstm_cell(self):
        cfg = ModelConfig(n_vars=1, window=2, hidden_dim=2, n_heads=1, n_layers=1)
        model = OracleModel(cfg)
        arrays = {name: np.zeros(shape) for name, shape, _ in parameter_specs(cfg)}
        arrays["enc.0.w_ih"][0, 0] = [0.5, -0.5, 1.0, 0.0, 0.2, 0.3, 1.0, -1.0]
        arrays["enc.0.bias"][0] = [0.1] * 8
        model.load_arrays(arrays)
        h = encode_variable(model, 0, [2.0])[0]
        # hand computation with zero previous state
        z = [1.1, -0.9, 2.1, 0.1, 0.5, 0.7, 2.1, -1.9]
        for k in range(2):
            i, o, g = _sig(z[k]), _sig(z[4 + k]), math.tanh(z[6 + k])
            assert abs(h[k] - o * math.tanh(i * g)) < 1e-12

    def test_pooling_against_loop(self, small):
        arrays = small.arrays()
        hid = np.random.default_rng(2).standard_normal((4, 4))
        c, alpha = attention_pool(small, hid)
        c_ref, a_ref = _pool_ref(hid.tolist(), arrays["pool.w"], float(arrays["pool.b"]))
        np.testing.assert_allclose(c, c_ref, atol=1e-12)
        np.testing.assert_allclose(alpha, a_ref, atol=1e-12)

    def test_per_variable_pooling(self):
        cfg = ModelConfig(n_vars=3, window=5, hidden_dim=4, n_heads=2, pool_per_variable=True, seed=1)
        model = init_model(cfg)
        arrays = model.arrays()
        assert arrays["pool.w"].shape == (3, 4) and arrays["pool.b"].shape == (3,)
        hid = np.random.default_rng(3).standard_normal((4, 4))
        for i in range(3):
            c, _ = attention_pool(model, hid, variable=i)
            c_ref, _ = _pool_ref(hid.tolist(), arrays["pool.w"][i], float(arrays["pool.b"][i]))
            np.testing.assert_allclose(c, c_ref, atol=1e-12)

    def test_mhsa_against_triple_loop(self, small):
        C = np.random.default_rng(4).standard_normal((3, 4))
        np.testing.assert_allclose(mhsa(small, C), _mhsa_ref(C, small.arrays(), 2), atol=1e-8)

    def test_mhsa_has_no_residual(self):
        model = OracleModel(SMALL)
        C = np.random.default_rng(5).standard_normal((3, 4))
        np.testing.assert_array_equal(mhsa(model, C), 0.0)

    def test_mhsa_permutation_equivariant(self, small):
        C = np.random.default_rng(6).standard_normal((3, 4))
        perm = [2, 0, 1]
        np.testing.assert_allclose(mhsa(small, C[perm]), mhsa(small, C)[perm], atol=1e-12)

    def test_decoder_hand_unroll(self, small):
        arrays = small.arrays()
        c_star = np.random.default_rng(7).standard_normal(4)
        for i in range(3):
            recon, pred = decode_variable(small, i, c_star)
            ref = _decode_ref(arrays, i, c_star, SMALL)
            np.testing.assert_allclose(recon, ref[:-1], atol=1e-10)
            assert abs(pred - ref[-1]) < 1e-10

    def test_full_forward_composition(self, small):
        arrays = small.arrays()
        w = np.random.default_rng(8).standard_normal((1, 5, 3))
        out = forward(small, w)
        C = np.stack([_pool_ref(_encode_ref(arrays, i, w[0, :4, i], SMALL).tolist(),
                                arrays["pool.w"], float(arrays["pool.b"]))[0] for i in range(3)])
        np.testing.assert_allclose(out.causal[0], C, atol=1e-10)
        Cs = _mhsa_ref(C, arrays, 2)
        np.testing.assert_allclose(out.refined[0], Cs, atol=1e-10)
        for i in range(3):
            ref = _decode_ref(arrays, i, Cs[i], SMALL)
            np.testing.assert_allclose(out.recon[0, :, i], ref[:-1], atol=1e-10)
            assert abs(out.pred[0, i] - ref[-1]) < 1e-10


class TestProperties:
    def test_target_row_never_read(self, small):
        w = np.random.default_rng(9).standard_normal((3, 5, 3))
        w2 = w.copy()
        w2[:, -1, :] = 1e6
        a, b = forward(small, w), forward(small, w2)
        np.testing.assert_array_equal(a.pred, b.pred)

    def test_encoders_are_independent(self, small):
        w = np.random.default_rng(10).standard_normal((1, 5, 3))
        w2 = w.copy()
        w2[0, :4, 1] += 1.0
        a, b = forward(small, w), forward(small, w2)
        np.testing.assert_array_equal(a.causal[0, [0, 2]], b.causal[0, [0, 2]])
        assert not np.allclose(a.causal[0, 1], b.causal[0, 1])

    def test_batch_independence(self, small):
        w = np.random.default_rng(11).standard_normal((6, 5, 3))
        full = forward(small, w)
        for k in range(6):
            one = forward(small, w[k : k + 1])
            np.testing.assert_allclose(one.pred[0], full.pred[k], atol=1e-13)
            np.testing.assert_allclose(one.refined[0], full.refined[k], atol=1e-13)

    def test_finiteness_fuzz(self):
        rng = np.random.default_rng(12)
        model = init_model(ModelConfig(n_vars=4, window=6, hidden_dim=8, n_heads=2, seed=2))
        w = rng.standard_normal((1000, 6, 4)) * rng.uniform(0.1, 100, size=(1000, 1, 1))
        out = forward(model, w)
        for k in ("causal", "refined", "recon", "pred", "attention_weights"):
            assert np.all(np.isfinite(getattr(out, k)))

    def test_float32_close_to_float64(self):
        cfg64 = ModelConfig(n_vars=3, window=6, hidden_dim=8, n_heads=2, seed=4)
        cfg32 = ModelConfig(n_vars=3, window=6, hidden_dim=8, n_heads=2, seed=4, dtype="float32")
        w = np.random.default_rng(13).standard_normal((5, 6, 3))
        a, b = forward(init_model(cfg64), w), forward(init_model(cfg32), w)
        np.testing.assert_allclose(a.pred, b.pred, atol=1e-5)


class TestInit:
    def test_deterministic(self):
        a, b = init_model(SMALL).arrays(), init_model(SMALL).arrays()
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)
        c = init_model(ModelConfig(**{**SMALL.to_dict(), "seed": 4})).arrays()
        assert any(a[k].tobytes() != c[k].tobytes() for k in a)

    def test_bounds(self):
        model = init_model(ModelConfig(n_vars=4, hidden_dim=16, n_heads=4))
        arrays = model.arrays()
        for name, _, fan_in in parameter_specs(model.cfg):
            assert np.abs(arrays[name]).max() <= 1 / math.sqrt(fan_in)

    def test_load_shape_mismatch(self, small):
        arrays = small.arrays()
        arrays["pool.w"] = np.zeros(5)
        with pytest.raises(ValueError, match="pool.w"):
            OracleModel(SMALL).load_arrays(arrays)


class TestGradients:
    def test_gradient_check_small(self):
        cfg = ModelConfig(n_vars=2, window=4, hidden_dim=2, n_heads=1, n_layers=1, seed=5)
        model = init_model(cfg)
        w = np.random.default_rng(14).standard_normal((2, 4, 2))
        sls = np.array([[0.0, 0.3], [0.3, 0.0]])
        errs = gradient_check(model, w, sls, TrainConfig())
        assert max(errs.values()) < 1e-5

    def test_l2_gradient_finite_at_coincident_embeddings(self):
        C = torch.zeros((1, 3, 4), dtype=torch.float64, requires_grad=True)
        dissimilarity_batch(C, "l2").sum().backward()
        assert torch.all(torch.isfinite(C.grad))
