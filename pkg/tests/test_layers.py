import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eegseq import tensor as T
from eegseq.errors import ConfigError, DimensionError
from eegseq.layers import (
    LSTM,
    Conv1D,
    Dense,
    Dropout,
    LayerNorm,
    MultiHeadAttention,
    Pool1D,
    PositionalEmbedding,
    attention_forward,
    conv1d_forward,
    glorot_uniform,
    lstm_step,
    pool_forward,
    positional_add,
)
from eegseq.tensor import Tensor

from conftest import assert_grads


def conv_oracle(w, b, x, stride, pad):
    out_ch, in_ch, k = w.shape
    length = x.shape[1]
    n = (length + 2 * pad - k) // stride + 1
    out = np.zeros((out_ch, n))
    for o in range(out_ch):
        for j in range(n):
            acc = b[o]
            for c in range(in_ch):
                for a in range(k):
                    i = j * stride + a - pad
                    if 0 <= i < length:
                        acc += w[o, c, a] * x[c, i]
            out[o, j] = acc
    return out


def attention_oracle(X, WQ, WK, WV, WO, bO, heads):
    n, d = X.shape
    dk = d // heads
    Q = [[sum(X[i, m] * WQ[m, j] for m in range(d)) for j in range(d)] for i in range(n)]
    K = [[sum(X[i, m] * WK[m, j] for m in range(d)) for j in range(d)] for i in range(n)]
    V = [[sum(X[i, m] * WV[m, j] for m in range(d)) for j in range(d)] for i in range(n)]
    concat = [[0.0] * d for _ in range(n)]
    for h in range(heads):
        cols = range(h * dk, (h + 1) * dk)
        for i in range(n):
            scores = [sum(Q[i][c] * K[r][c] for c in cols) / math.sqrt(dk) for r in range(n)]
            top = max(scores)
            e = [math.exp(s - top) for s in scores]
            z = sum(e)
            for c in cols:
                concat[i][c] = sum(e[r] / z * V[r][c] for r in range(n))
    return np.array([[sum(concat[i][m] * WO[m, j] for m in range(d)) + bO[j] for j in range(d)] for i in range(n)])


def dyadic(rng, shape):
    return rng.integers(-64, 65, shape) / 16.0


class TestConv1D:
    def test_unit_kernel_is_identity(self, rng):
        layer = Conv1D(1, 1, 1)
        layer.weight.data[:] = 1.0
        x = rng.standard_normal((1, 9))
        np.testing.assert_array_equal(conv1d_forward(layer, Tensor(x)).data, x)

    def test_first_difference(self):
        layer = Conv1D(1, 1, 2)
        layer.weight.data[:] = [[[1.0, -1.0]]]
        assert conv1d_forward(layer, Tensor([[3.0, 5.0, 9.0]])).data.tolist() == [[-2.0, -4.0]]

    def test_two_channel_oracle(self, rng):
        layer = Conv1D(2, 3, 3, rng=rng)
        layer.bias.data = rng.standard_normal(3)
        x = rng.standard_normal((2, 10))
        np.testing.assert_allclose(
            layer(Tensor(x)).data, conv_oracle(layer.weight.data, layer.bias.data, x, 1, 0), rtol=0, atol=1e-13
        )

    @settings(max_examples=60, deadline=None)
    @given(
        st.integers(1, 4), st.integers(1, 4), st.integers(1, 7), st.integers(0, 32),
        st.integers(1, 3), st.integers(0, 3), st.integers(0, 2**32 - 1),
    )
    def test_oracle_exact(self, cin, cout, k, extra, stride, pad, seed):
        rng = np.random.default_rng(seed)
        length = max(1, min(32, k + extra - 2 * pad))
        if length + 2 * pad < k:
            return
        layer = Conv1D(cin, cout, k, stride, pad)
        layer.weight.data = dyadic(rng, layer.weight.shape)
        layer.bias.data = dyadic(rng, (cout,))
        x = dyadic(rng, (cin, length))
        out = layer(Tensor(x)).data
        assert out.shape == (cout, (length + 2 * pad - k) // stride + 1)
        np.testing.assert_array_equal(out, conv_oracle(layer.weight.data, layer.bias.data, x, stride, pad))

    def test_gradients(self, rng):
        layer = Conv1D(2, 3, 3, stride=2, padding=1, activation="tanh", rng=rng)
        x = Tensor(rng.standard_normal((2, 2, 9)), requires_grad=True)
        w = rng.standard_normal((2, 3, 5))
        assert_grads(lambda: T.reduce_sum(T.mul(layer(x), Tensor(w))), [layer.weight, layer.bias, x])

    def test_kernel_too_long(self):
        with pytest.raises(ConfigError):
            Conv1D(1, 1, 5)(Tensor(np.ones((1, 3))))

    def test_count(self):
        assert Conv1D(3, 4, 5).num_parameters() == Conv1D.count(3, 4, 5) == 4 * (3 * 5 + 1)


class TestPool:
    def test_max(self):
        assert pool_forward(Pool1D(2, "max"), Tensor([[1.0, 4.0, 2.0, 2.0]])).data.tolist() == [[4.0, 2.0]]

    def test_mean(self):
        assert pool_forward(Pool1D(2, "mean"), Tensor([[1.0, 3.0, 5.0, 7.0]])).data.tolist() == [[2.0, 6.0]]

    def test_remainder_dropped(self):
        assert Pool1D(2)(Tensor([[1.0, 2.0, 3.0, 4.0, 99.0]])).data.tolist() == [[2.0, 4.0]]

    def test_too_short(self):
        with pytest.raises(ConfigError):
            Pool1D(4)(Tensor(np.ones((1, 3))))

    def test_tie_goes_to_first_index(self):
        x = Tensor([[2.0, 2.0, 1.0, 3.0]], requires_grad=True)
        T.backward(T.reduce_sum(Pool1D(2)(x)))
        assert x.grad.tolist() == [[1.0, 0.0, 0.0, 1.0]]

    def test_max_gradient_routes_to_argmax(self, rng):
        x = Tensor(rng.permutation(24).reshape(2, 12) + rng.uniform(0, 0.1, (2, 12)), requires_grad=True)
        w = rng.standard_normal((2, 4))
        assert_grads(lambda: T.reduce_sum(T.mul(Pool1D(3)(x), Tensor(w))), [x])
        assert np.count_nonzero(x.grad) == 8

    def test_mean_gradient(self, rng):
        x = Tensor(rng.standard_normal((3, 10)), requires_grad=True)
        assert_grads(lambda: T.reduce_sum(T.mul(Pool1D(3, "mean")(x), Pool1D(3, "mean")(x))), [x])


class TestDense:
    def test_count(self):
        assert Dense(10, 2).num_parameters() == Dense.count(10, 2) == 22

    def test_gradients(self, rng):
        layer = Dense(4, 3, activation="sigmoid", rng=rng)
        x = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
        assert_grads(lambda: T.reduce_sum(T.mul(layer(x), layer(x))), [layer.weight, layer.bias, x])

    def test_shape_error(self):
        with pytest.raises(DimensionError):
            Dense(4, 3)(Tensor(np.ones((2, 5))))


class TestLSTM:
    def test_count(self):
        assert LSTM(2, 3).num_parameters() == LSTM.count(2, 3) == 72

    def test_zero_weights_closed_form(self, rng):
        layer = LSTM(2, 3, forget_bias=False)
        for p in layer.parameters():
            p.data[:] = 0.0
        c_prev = rng.standard_normal(3)
        h, c = lstm_step(layer, Tensor(rng.standard_normal(2)), Tensor(rng.standard_normal(3)), Tensor(c_prev))
        np.testing.assert_array_equal(c.data, 0.5 * c_prev)
        np.testing.assert_array_equal(h.data, 0.5 * np.tanh(0.5 * c_prev))

    def test_zero_candidate_and_state(self, rng):
        layer = LSTM(2, 3, rng=rng)
        layer.w_c.data[:] = 0.0
        layer.b_c.data[:] = 0.0
        h, c = layer.step(Tensor(rng.standard_normal(2)), Tensor(rng.standard_normal(3)), Tensor(np.zeros(3)))
        assert not h.data.any() and not c.data.any()

    def test_concat_order_is_h_then_x(self, rng):
        layer = LSTM(1, 1, forget_bias=False)
        for p in layer.parameters():
            p.data[:] = 0.0
        layer.w_c.data[:] = [[0.0, 1.0]]
        _, c = layer.step(Tensor([2.0]), Tensor([-5.0]), Tensor([0.0]))
        assert c.data[0] == pytest.approx(0.5 * math.tanh(2.0))

    def test_forget_bias_default(self):
        assert LSTM(2, 3).b_f.data.tolist() == [1.0] * 3
        assert LSTM(2, 3, forget_bias=False).b_f.data.tolist() == [0.0] * 3

    def test_bptt_gradients(self, rng):
        layer = LSTM(2, 3, rng=rng)
        xs = rng.standard_normal((3, 2))

        def f():
            h, c = Tensor(np.zeros(3)), Tensor(np.zeros(3))
            for t in range(3):
                h, c = layer.step(Tensor(xs[t]), h, c)
            return T.reduce_sum(h)

        assert len(layer.parameters()) == 8
        assert_grads(f, layer.parameters())

    def test_sequence_forward_matches_steps(self, rng):
        layer = LSTM(2, 3, rng=rng)
        xs = rng.standard_normal((2, 4, 2))
        out = layer(Tensor(xs), return_sequence=True).data
        for b in range(2):
            h, c = Tensor(np.zeros(3)), Tensor(np.zeros(3))
            for t in range(4):
                h, c = layer.step(Tensor(xs[b, t]), h, c)
                np.testing.assert_allclose(out[b, t], h.data, rtol=1e-13)

    def test_shape_error(self):
        with pytest.raises(DimensionError):
            LSTM(2, 3).step(Tensor(np.ones(3)), Tensor(np.ones(3)), Tensor(np.ones(3)))


class TestAttention:
    def test_indivisible_heads(self):
        with pytest.raises(ConfigError):
            MultiHeadAttention(6, 4)

    def test_count(self):
        assert MultiHeadAttention(8, 2).num_parameters() == MultiHeadAttention.count(8) == 4 * 64 + 8

    def test_single_segment(self, rng):
        layer = MultiHeadAttention(4, 2, rng=rng)
        X = rng.standard_normal((1, 4))
        out, weights = attention_forward(layer, Tensor(X), return_weights=True)
        assert [A.tolist() for A in weights] == [[[1.0]], [[1.0]]]
        expected = X @ layer.W_V.data @ layer.W_O.data + layer.b_O.data
        np.testing.assert_allclose(out.data, expected, rtol=1e-13)

    def test_zero_qk_is_uniform(self, rng):
        layer = MultiHeadAttention(4, 2, rng=rng)
        layer.W_Q.data[:] = 0.0
        layer.W_K.data[:] = 0.0
        _, weights = attention_forward(layer, Tensor(rng.standard_normal((5, 4))), return_weights=True)
        for A in weights:
            np.testing.assert_array_equal(A, np.full((5, 5), 0.2))

    def test_loop_oracle_single_head(self, rng):
        layer = MultiHeadAttention(2, 1, rng=rng)
        layer.b_O.data = rng.standard_normal(2)
        X = rng.standard_normal((3, 2))
        expected = attention_oracle(X, layer.W_Q.data, layer.W_K.data, layer.W_V.data, layer.W_O.data, layer.b_O.data, 1)
        assert np.max(np.abs(layer(Tensor(X)).data - expected)) < 1e-10

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 6), st.sampled_from([(4, 1), (4, 2), (6, 3), (8, 4)]), st.integers(0, 2**32 - 1))
    def test_loop_oracle_multi_head(self, n, dims, seed):
        d, heads = dims
        rng = np.random.default_rng(seed)
        layer = MultiHeadAttention(d, heads, rng=rng)
        layer.b_O.data = rng.standard_normal(d)
        X = rng.standard_normal((n, d))
        expected = attention_oracle(
            X, layer.W_Q.data, layer.W_K.data, layer.W_V.data, layer.W_O.data, layer.b_O.data, heads
        )
        assert np.max(np.abs(layer(Tensor(X)).data - expected)) < 1e-10

    def test_gradients(self, rng):
        layer = MultiHeadAttention(2, 1, rng=rng)
        X = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
        w = rng.standard_normal((3, 2))
        assert_grads(lambda: T.reduce_sum(T.mul(layer(X), Tensor(w))), [layer.W_Q, layer.W_K, layer.W_V, layer.W_O, X])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_row_stochastic(self, n, seed):
        rng = np.random.default_rng(seed)
        layer = MultiHeadAttention(4, 2, rng=rng)
        X = rng.uniform(-3, 3, (n, 4))
        _, weights = attention_forward(layer, Tensor(X), return_weights=True)
        for A in weights:
            assert np.all(A >= 0)
            np.testing.assert_allclose(A.sum(axis=1), 1.0, rtol=0, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(2, 7), st.integers(0, 2**32 - 1))
    def test_permutation_equivariance(self, n, seed):
        rng = np.random.default_rng(seed)
        layer = MultiHeadAttention(4, 2, rng=rng)
        emb = PositionalEmbedding(n, 4)
        emb.table.data[:] = 0.0
        X = rng.standard_normal((n, 4))
        perm = rng.permutation(n)
        out = layer(positional_add(emb, Tensor(X))).data
        out_p = layer(positional_add(emb, Tensor(X[perm]))).data
        np.testing.assert_allclose(out_p, out[perm], rtol=1e-12, atol=1e-12)


class TestPositionalEmbedding:
    def test_zero_table_is_identity(self, rng):
        emb = PositionalEmbedding(3, 4)
        emb.table.data[:] = 0.0
        X = rng.standard_normal((3, 4))
        np.testing.assert_array_equal(positional_add(emb, Tensor(X)).data, X)

    def test_zero_input_returns_table(self, rng):
        emb = PositionalEmbedding(3, 4, rng=rng)
        np.testing.assert_array_equal(positional_add(emb, Tensor(np.zeros((3, 4)))).data, emb.table.data)

    def test_table_gradient_is_upstream(self, rng):
        emb = PositionalEmbedding(3, 4, rng=rng)
        up = rng.standard_normal((3, 4))
        X = Tensor(rng.standard_normal((3, 4)))
        T.backward(T.reduce_sum(T.mul(emb(X), Tensor(up))))
        np.testing.assert_allclose(emb.table.grad, up, rtol=1e-15)
        emb.zero_grad()
        assert_grads(lambda: T.reduce_sum(T.mul(emb(X), Tensor(up))), [emb.table])

    def test_row_mismatch(self):
        with pytest.raises(DimensionError):
            PositionalEmbedding(3, 4)(Tensor(np.zeros((2, 4))))


def test_layer_norm_gradients(rng):
    ln = LayerNorm(5)
    ln.gamma.data = rng.standard_normal(5)
    ln.beta.data = rng.standard_normal(5)
    x = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    w = rng.standard_normal((3, 5))
    assert_grads(lambda: T.reduce_sum(T.mul(ln(x), Tensor(w))), [ln.gamma, ln.beta, x])


def test_dropout_inverted_scaling(rng):
    drop = Dropout(0.5)
    x = Tensor(np.ones((200, 50)))
    assert drop(x, training=False) is x
    out = drop(x, training=True, rng=np.random.default_rng(0)).data
    assert set(np.unique(out).tolist()) == {0.0, 2.0}
    assert abs(out.mean() - 1.0) < 0.05


def test_glorot_bounds(rng):
    w = glorot_uniform(rng, (30, 20), 20, 30)
    assert np.abs(w).max() <= math.sqrt(6 / 50)
