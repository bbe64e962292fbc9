import math

import numpy as np
import pytest

from helpers import gradcheck
from vaecast import tensor as te
from vaecast.layers import (AffineLayer, BackboneConfig, LstmLayer, TcnBlock,
                            affine_forward, build_tcn_stack, lstm_sequence,
                            receptive_field, tcn_forward, tcn_forward_batched)
from vaecast.tensor import RngStream, ShapeError, Tape, Tensor


def t(data, requires_grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


class TestAffine:
    def test_identity(self):
        layer = AffineLayer(weight=t(np.eye(3), True), bias=t(np.zeros(3), True))
        x = t([1.0, -2.0, 3.0])
        assert affine_forward(layer, x).values.tolist() == [1.0, -2.0, 3.0]

    def test_hand_values(self):
        layer = AffineLayer(weight=t([[2.0]], True), bias=t([1.0], True))
        assert affine_forward(layer, t([3.0])).values.tolist() == [7.0]

    def test_batched(self):
        layer = AffineLayer(weight=t([[1.0, 1.0]], True), bias=t([0.5], True))
        out = affine_forward(layer, t([[1.0, 2.0], [3.0, 4.0]]))
        assert out.values.tolist() == [[3.5], [7.5]]

    def test_shape_errors(self):
        layer = AffineLayer(weight=t([[2.0]], True), bias=t([1.0], True))
        with pytest.raises(ShapeError):
            affine_forward(layer, t([1.0, 2.0]))
        with pytest.raises(ShapeError):
            AffineLayer(weight=t([[1.0, 2.0]]), bias=t([1.0, 2.0]))

    def test_gradients(self):
        rng = RngStream(0)
        layer = AffineLayer.create(3, 2, rng)
        x = t(np.random.default_rng(1).uniform(-2, 2, (4, 3)))
        gradcheck(lambda w, b, inp: te.reduce_sum(
            te.mul(affine_forward(AffineLayer(w, b), inp),
                   affine_forward(AffineLayer(w, b), inp))),
            [layer.weight, layer.bias, x])


def hand_lstm_step(x, h, c, p):
    """Scalar-arithmetic oracle for one LSTM cell update."""
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    i = sig(p["w_i"] * x + p["u_i"] * h + p["b_i"])
    f = sig(p["w_f"] * x + p["u_f"] * h + p["b_f"])
    g = math.tanh(p["w_g"] * x + p["u_g"] * h + p["b_g"])
    o = sig(p["w_o"] * x + p["u_o"] * h + p["b_o"])
    c_new = f * c + i * g
    return o * math.tanh(c_new), c_new


class TestLstm:
    def test_zero_weights_zero_outputs(self):
        layer = LstmLayer.create(1, 3, RngStream(0))
        for p in layer.parameters().values():
            p.values[...] = 0.0
        outputs, final_h = lstm_sequence(layer, t(np.ones((4, 1))))
        assert np.all(outputs.values == 0.0)
        assert np.all(final_h.values == 0.0)

    def test_single_step_matches_hand_arithmetic(self):
        scalars = {"w_i": 0.3, "w_f": -0.2, "w_g": 0.7, "w_o": 0.1,
                   "u_i": 0.5, "u_f": 0.4, "u_g": -0.6, "u_o": 0.2,
                   "b_i": 0.05, "b_f": -0.1, "b_g": 0.2, "b_o": 0.3}
        layer = LstmLayer.create(1, 1, RngStream(0))
        for name, p in layer.parameters().items():
            p.values[...] = scalars[name]
        x_val = 0.8
        outputs, final_h = lstm_sequence(layer, t([[x_val]]))
        h_exp, _ = hand_lstm_step(x_val, 0.0, 0.0, scalars)
        assert outputs.values[0, 0] == pytest.approx(h_exp, abs=1e-12)
        assert final_h.values[0] == pytest.approx(h_exp, abs=1e-12)

    def test_two_steps_match_hand_arithmetic(self):
        scalars = {"w_i": 0.3, "w_f": -0.2, "w_g": 0.7, "w_o": 0.1,
                   "u_i": 0.5, "u_f": 0.4, "u_g": -0.6, "u_o": 0.2,
                   "b_i": 0.05, "b_f": -0.1, "b_g": 0.2, "b_o": 0.3}
        layer = LstmLayer.create(1, 1, RngStream(0))
        for name, p in layer.parameters().items():
            p.values[...] = scalars[name]
        xs = [0.8, -0.4]
        outputs, _ = lstm_sequence(layer, t([[xs[0]], [xs[1]]]))
        h, c = 0.0, 0.0
        for x in xs:
            h, c = hand_lstm_step(x, h, c, scalars)
        assert outputs.values[1, 0] == pytest.approx(h, abs=1e-12)

    def test_empty_sequence_rejected(self):
        layer = LstmLayer.create(1, 2, RngStream(0))
        with pytest.raises(ShapeError):
            lstm_sequence(layer, t(np.zeros((0, 1))))

    def test_gradients_through_time(self):
        layer = LstmLayer.create(1, 2, RngStream(3))
        x = t(np.random.default_rng(4).uniform(-1, 1, (5, 1)))
        params = list(layer.parameters().values())

        def run(*tensors):
            outputs, _ = lstm_sequence(layer, x)
            return te.reduce_sum(outputs)

        gradcheck(run, params)

    def test_input_gradients_causal(self):
        layer = LstmLayer.create(1, 2, RngStream(5))
        x = t(np.random.default_rng(6).uniform(-1, 1, (6, 1)), requires_grad=True)
        with Tape() as tape:
            outputs, _ = lstm_sequence(layer, x)
            gm = tape.backward(te.reduce_sum(te.select(outputs, 2, axis=0)))
        gx = gm[x]
        assert np.all(gx[3:] == 0.0)
        assert np.any(gx[:3] != 0.0)

    def test_determinism(self):
        layer = LstmLayer.create(1, 3, RngStream(7))
        x = t(np.random.default_rng(8).uniform(-1, 1, (4, 1)))
        a, _ = lstm_sequence(layer, x)
        b, _ = lstm_sequence(layer, x)
        assert np.array_equal(a.values, b.values)


class TestTcn:
    def test_zero_conv_weights_pass_residual(self):
        # With equal channel counts the residual is the input itself, so a
        # zeroed single-layer stack reduces to the identity.
        blk = TcnBlock.create(kernel_size=3, dilation=1, in_channels=2,
                              out_channels=2, rng=RngStream(0))
        blk.weight.values[...] = 0.0
        blk.bias.values[...] = 0.0
        x = t(np.random.default_rng(1).uniform(-1, 1, (1, 5, 2)))
        out, _ = tcn_forward_batched([blk], x)
        assert np.array_equal(out.values, x.values)

    def test_hand_convolution_single_layer(self):
        blocks = build_tcn_stack(num_layers=1, channels=1, kernel_size=2,
                                 rng=RngStream(0), in_channels=1)
        blk = blocks[0]
        blk.weight.values[...] = 1.0
        blk.bias.values[...] = 0.0
        assert blk.proj is None
        x_vals = np.array([1.0, -2.0, 3.0, 0.5])
        out, final = tcn_forward(blocks, t(x_vals.reshape(4, 1)))
        # conv gives x[t-1] + x[t]; the residual path adds x[t] again
        expected = np.array([1.0, -1.0, 1.0, 3.5]) + x_vals
        assert np.allclose(out.values.reshape(-1), expected, atol=1e-12)
        assert final.values[0] == pytest.approx(expected[-1], abs=1e-12)

    def test_perturbation_causality_exact(self):
        blocks = build_tcn_stack(num_layers=3, channels=4, kernel_size=5,
                                 rng=RngStream(2))
        x_vals = np.random.default_rng(3).uniform(-1, 1, (1, 20, 1))
        base, _ = tcn_forward_batched(blocks, t(x_vals))
        bumped = x_vals.copy()
        t_perturb = 12
        bumped[0, t_perturb, 0] += 1.0
        out, _ = tcn_forward_batched(blocks, t(bumped))
        assert np.array_equal(out.values[:, :t_perturb, :], base.values[:, :t_perturb, :])
        assert not np.array_equal(out.values[:, t_perturb:, :],
                                  base.values[:, t_perturb:, :])

    def test_gradient_causality(self):
        blocks = build_tcn_stack(num_layers=2, channels=3, kernel_size=3,
                                 rng=RngStream(4))
        x = t(np.random.default_rng(5).uniform(-1, 1, (10, 1)), requires_grad=True)
        with Tape() as tape:
            outputs, _ = tcn_forward(blocks, x)
            gm = tape.backward(te.reduce_sum(te.select(outputs, 4, axis=0)))
        gx = gm[x]
        assert np.all(gx[5:] == 0.0)
        assert np.any(gx[:5] != 0.0)

    def test_dependence_limited_to_receptive_field(self):
        blocks = build_tcn_stack(num_layers=2, channels=3, kernel_size=2,
                                 rng=RngStream(6))
        rf = receptive_field(2, 2)  # 1 + 1*(4-1) = 4
        steps = 12
        x = t(np.random.default_rng(7).uniform(-1, 1, (steps, 1)), requires_grad=True)
        with Tape() as tape:
            outputs, _ = tcn_forward(blocks, x)
            gm = tape.backward(te.reduce_sum(te.select(outputs, steps - 1, axis=0)))
        gx = gm[x].reshape(-1)
        assert np.all(gx[:steps - rf] == 0.0)
        assert np.any(gx[steps - rf:] != 0.0)

    def test_empty_sequence_rejected(self):
        blocks = build_tcn_stack(1, 2, 3, RngStream(8))
        with pytest.raises(ShapeError):
            tcn_forward(blocks, t(np.zeros((0, 1))))

    def test_gradients(self):
        blocks = build_tcn_stack(num_layers=2, channels=2, kernel_size=3,
                                 rng=RngStream(9))
        x = t(np.random.default_rng(10).uniform(-1, 1, (1, 7, 1)))
        params = [p for blk in blocks for p in blk.parameters().values()]

        def run(*tensors):
            out, final = tcn_forward_batched(blocks, x)
            return te.reduce_sum(te.mul(final, final))

        gradcheck(run, params)

    def test_determinism(self):
        blocks = build_tcn_stack(2, 3, 5, RngStream(11))
        x = t(np.random.default_rng(12).uniform(-1, 1, (1, 9, 1)))
        a, _ = tcn_forward_batched(blocks, x)
        b, _ = tcn_forward_batched(blocks, x)
        assert np.array_equal(a.values, b.values)


class TestBackboneConfig:
    @pytest.mark.parametrize("hws,hidden", [(8, 4), (24, 12), (48, 24), (60, 30),
                                            (120, 60)])
    def test_rnn_sizes(self, hws, hidden):
        cfg = BackboneConfig.for_history("rnn", hws)
        assert cfg.hidden_size == hidden
        assert cfg.latent_size == hidden

    @pytest.mark.parametrize("hws,hidden,layers", [(8, 6, 1), (24, 10, 2),
                                                   (48, 12, 3), (60, 12, 3),
                                                   (120, 14, 4)])
    def test_tcn_sizes(self, hws, hidden, layers):
        cfg = BackboneConfig.for_history("tcn", hws)
        assert cfg.hidden_size == hidden
        assert cfg.latent_size == hidden
        assert cfg.num_layers == layers
        assert cfg.kernel_size == 5

    def test_all_sizes_positive_integers(self):
        for hws in (8, 24, 48, 60, 120):
            for kind in ("rnn", "tcn"):
                cfg = BackboneConfig.for_history(kind, hws)
                assert isinstance(cfg.hidden_size, int) and cfg.hidden_size > 0
                assert isinstance(cfg.latent_size, int) and cfg.latent_size > 0

    def test_dilations_and_receptive_field(self):
        cfg = BackboneConfig.for_history("tcn", 120)
        blocks = build_tcn_stack(cfg.num_layers, cfg.hidden_size, cfg.kernel_size,
                                 RngStream(0))
        assert [b.dilation for b in blocks] == [1, 2, 4, 8]
        assert receptive_field(cfg.kernel_size, cfg.num_layers) == 61

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            BackboneConfig.for_history("gru", 48)
