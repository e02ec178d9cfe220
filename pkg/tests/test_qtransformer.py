import math
from fractions import Fraction

import numpy as np
import pytest

from qnlp.autodiff import Tape
from qnlp.errors import ConfigError, ContractError, VocabError
from qnlp.qcore import QTensor
from qnlp.qlayers import param_count
from qnlp.qtransformer import (EncoderBlock, MultiHeadAttention, QTransformerConfig, Seq2SeqBatch,
                               Seq2SeqTransformer, TransformerClassifier, causal_mask, q_self_attention,
                               q_transformer_block, sinusoidal_positions)
from qnlp.tasks import CHARSET

from oracles import loop_scores, np_softmax, randomize_head


class TestConfig:
    def test_aliases(self):
        assert QTransformerConfig(variant="q-partial").variant == "partial"
        assert QTransformerConfig(variant="real-baseline").variant == "real"

    def test_unknown_variant_names_field(self):
        with pytest.raises(ConfigError) as exc:
            QTransformerConfig(variant="half")
        assert exc.value.field == "variant"

    def test_heads_must_divide(self):
        with pytest.raises(ConfigError) as exc:
            QTransformerConfig(d_q=6, heads=4)
        assert exc.value.field == "heads"

    def test_derived_widths(self):
        cfg = QTransformerConfig(d_q=16, heads=2)
        assert (cfg.width, cfg.d_k, cfg.ffn_hidden) == (64, 32, 256)


class TestQuaternionAttention:
    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        q, k, v = (QTensor.random(rng, (n, 3)) for n in (4, 5, 5))
        out, w = q_self_attention(q, k, v, d_k=12, return_weights=True)
        expected_w = np_softmax(loop_scores(q, k) / math.sqrt(12))
        assert np.allclose(w.data, expected_w, atol=1e-13)
        expected = np.stack([expected_w[c] @ v.data[c] for c in range(4)])
        assert np.allclose(out.data, expected, atol=1e-13)

    def test_causal_weights_exactly_zero(self):
        rng = np.random.default_rng(1)
        q = QTensor.random(rng, (6, 2), scale=4.0)
        _, w = q_self_attention(q, q, q, d_k=8, mask=causal_mask(6), return_weights=True)
        upper = ~causal_mask(6)
        assert np.all(w.data[:, upper] == 0.0)
        assert np.allclose(w.data.sum(-1), 1.0, atol=1e-12)

    def test_multi_head_weight_shape(self):
        cfg = QTransformerConfig(variant="partial", d_q=4, heads=2)
        attn = MultiHeadAttention(cfg, np.random.default_rng(2), quaternion=True)
        x = Tape().constant(np.random.default_rng(3).standard_normal((3, 5, 16)))
        out, w = attn(x, x, return_weights=True)
        assert out.shape == (3, 5, 16)
        assert w.shape == (4, 3, 2, 5, 5)

    def test_degenerate_real_input_gives_real_scores(self):
        rng = np.random.default_rng(4)
        q = np.zeros((4, 5, 3))
        k = np.zeros((4, 5, 3))
        q[0], k[0] = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
        _, w = q_self_attention(QTensor.from_array(q), QTensor.from_array(k), QTensor.from_array(k), 12,
                                return_weights=True)
        assert np.allclose(w.data[0], np_softmax(q[0] @ k[0].T / math.sqrt(12)), atol=1e-14)


class TestParameterRatios:
    @pytest.mark.parametrize("layers, d_q, heads", [(1, 4, 1), (2, 16, 2), (3, 8, 4)])
    def test_full_is_exactly_a_quarter(self, layers, d_q, heads):
        model = Seq2SeqTransformer(QTransformerConfig(variant="full", layers=layers, d_q=d_q, heads=heads))
        assert param_count(model).weight_ratio == Fraction(1, 4)

    def test_partial_strictly_between(self):
        model = Seq2SeqTransformer(QTransformerConfig(variant="partial", layers=2, d_q=16, heads=2))
        ratio = param_count(model).weight_ratio
        assert Fraction(1, 4) < ratio < 1

    def test_partial_ratio_arithmetic(self):
        # attention maps shrink to 1/4, FFNs stay real: (A/4 + F) / (A + F)
        cfg = QTransformerConfig(variant="partial", layers=1, d_q=4, heads=1)
        d, f = cfg.width, cfg.ffn_hidden
        attention = 3 * 4 * d * d          # encoder self, decoder self, decoder cross
        ffn = 2 * 2 * d * f
        expected = Fraction(attention // 4 + ffn, attention + ffn)
        assert param_count(Seq2SeqTransformer(cfg)).weight_ratio == expected

    def test_real_ratio_one(self):
        assert param_count(Seq2SeqTransformer(QTransformerConfig(variant="real"))).weight_ratio == 1

    def test_classifier_full_quarter(self):
        model = TransformerClassifier(QTransformerConfig(variant="full", vocab=30, d_q=4))
        assert param_count(model).weight_ratio == Fraction(1, 4)


class TestSeq2Seq:
    def model(self, variant="partial"):
        return Seq2SeqTransformer(QTransformerConfig(variant=variant, layers=1, d_q=4, heads=2, max_len=20))

    def test_untrained_output_is_uniform(self):
        logits = self.model().forward(Tape(), np.array([[5, 6]]), np.array([[1]])).value
        assert np.all(logits == 0.0)

    def test_logit_shape(self):
        batch = Seq2SeqBatch.from_pairs([(CHARSET.encode("x=1,y=2,x+y"), CHARSET.encode("3")),
                                         (CHARSET.encode("x=10,y=2,x+y"), CHARSET.encode("12"))])
        logits = self.model().forward(Tape(), batch.src, batch.tgt_in, batch.src_mask, batch.tgt_mask)
        assert logits.shape == (2, 3, len(CHARSET))

    def test_teacher_forcing_layout(self):
        batch = Seq2SeqBatch.from_pairs([((5, 6), (7, 8))])
        assert batch.tgt_in.tolist() == [[CHARSET.BOS, 7, 8]]
        assert batch.tgt_out.tolist() == [[7, 8, CHARSET.EOS]]

    @pytest.mark.parametrize("variant", ["real", "partial", "full"])
    def test_decoder_is_causal(self, variant):
        model = self.model(variant)
        randomize_head(model.out)
        src = np.array([CHARSET.encode("x=1,y=2")])
        a = model.forward(Tape(), src, np.array([[1, 5, 6, 7]])).value
        b = model.forward(Tape(), src, np.array([[1, 5, 9, 3]])).value
        assert np.allclose(a[:, :2], b[:, :2], atol=1e-12)
        assert not np.allclose(a[:, 2:], b[:, 2:])

    def test_greedy_decode_deterministic(self):
        model = self.model()
        randomize_head(model.out)
        src = [CHARSET.encode("x=12,y=3,x+y"), CHARSET.encode("x=1,y=9,x+y")]
        first = model.greedy_decode(src, max_len=6)
        assert first == model.greedy_decode(src, max_len=6)
        assert all(len(s) <= 6 for s in first)

    def test_decode_batch_matches_single(self):
        model = self.model()
        randomize_head(model.out)
        src = [CHARSET.encode("x=12,y=3,x+y"), CHARSET.encode("x=1,y=9")]
        batched = model.greedy_decode(src, max_len=5)
        assert batched == [model.greedy_decode([s], max_len=5)[0] for s in src]

    def test_rejects_empty_source(self):
        with pytest.raises(ContractError):
            self.model().greedy_decode([()])

    def test_rejects_long_source(self):
        with pytest.raises(ContractError):
            self.model().forward(Tape(), np.ones((1, 21), dtype=int), np.ones((1, 1), dtype=int))

    def test_rejects_unknown_token(self):
        with pytest.raises(VocabError):
            self.model().forward(Tape(), np.array([[99]]), np.array([[1]]))


class TestBlocksAndClassifier:
    def test_block_on_arrays(self):
        cfg = QTransformerConfig(variant="full", d_q=2, heads=1)
        block = EncoderBlock(cfg, np.random.default_rng(5))
        x = np.random.default_rng(6).standard_normal((2, 4, 8))
        out = q_transformer_block(block, x)
        assert out.shape == x.shape
        # post-norm: every position is standardized before the gain/offset
        assert np.allclose(out.mean(-1), 0.0, atol=1e-10)

    def test_classifier_padding_invariance(self):
        cfg = QTransformerConfig(variant="full", d_q=2, vocab=10, pad_id=9, max_len=8)
        model = TransformerClassifier(cfg)
        randomize_head(model.out)
        ids = np.array([[1, 2, 3, 9, 9], [4, 5, 6, 7, 8]])
        mask = ids != 9
        batched = model.logits(Tape(), ids, mask).value
        alone = model.logits(Tape(), ids[:1, :3]).value
        assert np.allclose(batched[0], alone[0], atol=1e-12)

    def test_positions(self):
        p = sinusoidal_positions(3, 4)
        assert np.allclose(p[0], [0, 1, 0, 1])
        assert np.isclose(p[2, 0], np.sin(2.0)) and np.isclose(p[1, 3], np.cos(1 / 100))
