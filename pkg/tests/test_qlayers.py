from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qnlp import autodiff as ad
from qnlp.autodiff import Tape
from qnlp.errors import ContractError, ShapeError, VocabError
from qnlp.qcore import QTensor, Quaternion, q_hamilton
from qnlp.qlayers import (Embedding, InitSpec, Linear, OutputHead, QLinear, classify, embed_project,
                          hamilton_matrix_form, init_params, param_count, polar_quaternions,
                          qffn_forward, quaternion_to_real, real_to_quaternion)

from oracles import randomize_head


def scalar_qffn(layer: QLinear, x: QTensor, act):
    """Loop oracle: ``act(sum_t W[o, t] ⊗ x[t] + b[o])`` one output quaternion at a time."""
    w = QTensor.from_array(layer.weight.value)
    b = QTensor.from_array(layer.bias.value)
    out = np.zeros((4, layer.out_q))
    for o in range(layer.out_q):
        acc = b[o]
        for t in range(layer.in_q):
            acc = acc + q_hamilton(w[o, t], x[t])
        out[:, o] = act(acc.as_array())
    return out


class TestQLinear:
    def test_weight_shape_and_count(self):
        layer = QLinear(3, 5)
        assert layer.weight.shape == (4, 5, 3)
        assert layer.weight.size == 4 * 3 * 5

    def test_forward_matches_scalar_loop(self):
        rng = np.random.default_rng(0)
        layer = QLinear(3, 2, rng=rng)
        layer.bias.value = rng.standard_normal((4, 2))
        x = QTensor.random(rng, (3,))
        for act, fn in (("tanh", np.tanh), ("relu", lambda v: np.maximum(v, 0)), ("identity", lambda v: v)):
            got = qffn_forward(layer, act, x)
            assert np.allclose(got.data, scalar_qffn(layer, x, fn), atol=1e-14)

    def test_block_matrix_equals_real_layer(self):
        rng = np.random.default_rng(1)
        layer = QLinear(2, 3, bias=False, rng=rng)
        x = rng.standard_normal((5, 8))
        tape = Tape()
        out = layer.real(tape.constant(x)).value
        assert np.allclose(out, x @ layer.block_matrix().T, atol=1e-13)

    def test_single_quaternion_reduces_to_product(self):
        rng = np.random.default_rng(2)
        layer = QLinear(1, 1, bias=False, rng=rng)
        x = QTensor.random(rng, (1,))
        w = QTensor.from_array(layer.weight.value)[0, 0]
        assert np.allclose(qffn_forward(layer, "identity", x).data[:, 0], q_hamilton(w, x[0]).as_array(),
                           atol=1e-15)

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            QLinear(3, 2)(Tape().constant(np.zeros((4, 2))))

    def test_unknown_activation(self):
        with pytest.raises(ContractError):
            qffn_forward(QLinear(1, 1), "gelu", QTensor.zeros((1,)))

    def test_zero_width_is_legal(self):
        assert QLinear(0, 2).weight.size == 0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6))
    def test_quarter_of_real_weights(self, i, o):
        assert param_count(QLinear(i, o)).weight_ratio == Fraction(1, 4)


class TestMatrixForm:
    def test_oracle_agreement(self):
        rng = np.random.default_rng(3)
        for w, q in rng.standard_normal((1000, 2, 4)):
            got = q_hamilton(Quaternion.from_array(w), Quaternion.from_array(q)).as_array()
            assert np.max(np.abs(hamilton_matrix_form(Quaternion.from_array(w)) @ q - got)) <= 1e-12

    def test_basis_i(self):
        m = hamilton_matrix_form(Quaternion(0, 1, 0, 0))
        assert np.array_equal(m @ np.array([0, 0, 1.0, 0]), [0, 0, 0, 1.0])


class TestInit:
    def test_glorot_range(self):
        layer = init_params(InitSpec("glorot", 0), QLinear(4, 4))
        bound = np.sqrt(6 / 32)
        assert np.all(np.abs(layer.weight.value) <= bound)

    def test_seeded_init_is_reproducible(self):
        a = init_params(InitSpec("polar", 7), QLinear(3, 3))
        b = init_params(InitSpec("polar", 7), QLinear(3, 3))
        assert np.array_equal(a.weight.value, b.weight.value)

    def test_polar_form(self):
        w, modulus, theta = polar_quaternions(np.random.default_rng(4), (50,), 0.5)
        assert np.allclose(np.sqrt(np.sum(w ** 2, axis=0)), modulus, atol=1e-14)
        assert np.allclose(w[0], modulus * np.cos(theta))
        assert np.all((modulus >= 0) & (modulus <= 0.5))

    def test_unknown_scheme(self):
        with pytest.raises(ContractError):
            InitSpec("he")

    def test_bias_starts_at_zero(self):
        assert np.all(QLinear(2, 3).bias.value == 0)


class TestConversions:
    def test_real_to_quaternion_blocks(self):
        q = real_to_quaternion(np.arange(8.0))
        assert np.array_equal(q.r, [0, 1]) and np.array_equal(q.z, [6, 7])

    def test_roundtrip(self):
        v = np.random.default_rng(5).standard_normal((3, 12))
        assert np.array_equal(quaternion_to_real(real_to_quaternion(v)), v)

    def test_width_must_be_multiple_of_four(self):
        with pytest.raises(ShapeError):
            real_to_quaternion(np.zeros(6))


class TestEmbeddingAndHead:
    def test_embed_project_shape(self):
        rng = np.random.default_rng(6)
        table = Embedding(10, 8, rng)
        q = embed_project(Tape(), np.array([[1, 2, 3]]), table, QLinear(2, 2, rng=rng), "tanh")
        assert q.shape == (4, 1, 3, 2)

    def test_identity_projection_is_lookup(self):
        table = Embedding(5, 4, np.random.default_rng(7))
        q = embed_project(Tape(), np.array([3]), table)
        assert np.array_equal(q.value[:, 0, 0], table.table.value[3])

    def test_out_of_vocabulary(self):
        with pytest.raises(VocabError):
            Embedding(5, 4)(Tape(), np.array([5]))

    def test_head_reads_concatenated_components(self):
        rng = np.random.default_rng(8)
        head = OutputHead(2, 3, rng)
        assert np.all(head.proj.weight.value == 0)
        randomize_head(head.proj)
        q = QTensor.random(rng, (2,))
        expected = quaternion_to_real(q) @ head.proj.weight.value + head.proj.bias.value
        assert np.allclose(classify(head, q), expected)


class TestParamCount:
    def test_real_layer_ratio_one(self):
        assert param_count(Linear(8, 8)).weight_ratio == 1

    def test_kinds_split(self):
        report = param_count(QLinear(2, 3))
        assert report.by_kind == {"weight": 24, "bias": 12}
        assert report.reference_by_kind == {"weight": 96, "bias": 12}

    def test_state_dict_roundtrip(self):
        a, b = QLinear(2, 2, rng=np.random.default_rng(0)), QLinear(2, 2, rng=np.random.default_rng(1))
        b.load_state_dict(a.state_dict())
        assert np.array_equal(a.weight.value, b.weight.value)

    def test_state_dict_mismatch(self):
        with pytest.raises(ContractError):
            QLinear(2, 2).load_state_dict({"weight": np.zeros((4, 2, 2))})
        with pytest.raises(ShapeError):
            QLinear(2, 2).load_state_dict({"weight": np.zeros((4, 3, 2)), "bias": np.zeros((4, 2))})


def test_qlinear_gradient_folds_shared_weights():
    # every scalar of a QLinear weight appears in four real block positions
    rng = np.random.default_rng(9)
    layer = QLinear(2, 2, bias=False, rng=rng)
    x = rng.standard_normal((4, 3, 2))
    tape = Tape()
    out = layer(tape.constant(x))
    grads = ad.backward(tape, ad.sum_(out))
    (g,) = grads.values()
    # d/dW of sum(H(W) x) computed through the real block matrix
    flat_x = np.concatenate(list(x), axis=-1)                  # (3, 8)
    g_block = np.ones((3, 8)).T @ flat_x                       # (8, 8)
    expected = np.zeros((4, 2, 2))
    signs = {0: [(0, 0, 1), (1, 1, 1), (2, 2, 1), (3, 3, 1)],
             1: [(1, 0, 1), (0, 1, -1), (3, 2, 1), (2, 3, -1)],
             2: [(2, 0, 1), (3, 1, -1), (0, 2, -1), (1, 3, 1)],
             3: [(3, 0, 1), (2, 1, 1), (1, 2, -1), (0, 3, -1)]}
    for comp, places in signs.items():
        for row, col, sign in places:
            expected[comp] += sign * g_block[row * 2:(row + 1) * 2, col * 2:(col + 1) * 2]
    assert np.allclose(g, expected, atol=1e-12)
