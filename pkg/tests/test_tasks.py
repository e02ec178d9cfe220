import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qnlp.errors import ContractError, VocabError
from qnlp.tasks import (CHARSET, SVA_VOCAB, SplitMix64, TransductionExample, gen_arithmetic,
                        gen_pairwise, gen_sva, make_pair_batch, pad_sequences, write_pairwise,
                        write_sva, write_transduction)


class TestSplitMix64:
    def test_reference_stream(self):
        # first outputs of the reference C implementation seeded with 0
        rng = SplitMix64(0)
        assert [rng.next_u64() for _ in range(3)] == [
            0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]

    def test_below_range(self):
        rng = SplitMix64(1)
        draws = [rng.below(7) for _ in range(2000)]
        assert set(draws) == set(range(7))

    def test_below_rejects_non_positive(self):
        with pytest.raises(ContractError):
            SplitMix64(0).below(0)

    def test_random_unit_interval(self):
        rng = SplitMix64(2)
        assert all(0.0 <= rng.random() < 1.0 for _ in range(1000))


def is_shuffled_window(a, b):
    n = len(b)
    return any(sorted(a[s:s + n]) == sorted(b) for s in range(len(a) - n + 1))


class TestPairwise:
    def test_deterministic(self):
        assert gen_pairwise(11, 50) == gen_pairwise(11, 50)
        assert gen_pairwise(11, 50) != gen_pairwise(12, 50)

    def test_balanced(self):
        labels = [e.label for e in gen_pairwise(0, 2000)]
        assert sum(labels) == 1000

    def test_lengths_and_vocab(self):
        for e in gen_pairwise(1, 500, vocab=50, len_range=(4, 8)):
            assert 4 <= len(e.seq_a) <= 8
            assert 4 <= len(e.seq_b) <= len(e.seq_a)
            assert all(0 <= t < 50 for t in e.seq_a + e.seq_b)

    def test_positives_are_windows(self):
        for e in gen_pairwise(2, 300):
            if e.label == 1:
                assert is_shuffled_window(e.seq_a, e.seq_b)

    def test_verbatim_positives_copy(self):
        for e in gen_pairwise(3, 100, verbatim=True):
            if e.label == 1:
                assert e.seq_a == e.seq_b

    def test_bad_lengths(self):
        with pytest.raises(ContractError):
            gen_pairwise(0, 10, len_range=(5, 3))
        with pytest.raises(ContractError):
            gen_pairwise(0, 0)


class TestArithmetic:
    def test_targets_are_exact(self):
        for e in gen_arithmetic(4, 300):
            src = e.source_text
            assert src.startswith("x=")
            x = int(src[2:src.index(",")])
            y = int(src[src.index("y=") + 2:src.rindex(",")])
            op = src[-2]
            assert int(e.target_text) == {"+": x + y, "-": x - y, "*": x * y}[op]

    def test_digit_restriction(self):
        for e in gen_arithmetic(5, 200, digit_range=(2, 2), ops="+", signed=False):
            src = e.source_text
            x, y = src[2:src.index(",")], src[src.index("y=") + 2:src.rindex(",")]
            assert len(x) == 2 and len(y) == 2 and src.endswith("x+y")

    def test_example_format(self):
        assert TransductionExample.from_text("x=85,y=-523,x*y", "-44455").target_text == "-44455"

    def test_bad_ops(self):
        with pytest.raises(ContractError):
            gen_arithmetic(0, 5, ops="/")


class TestCharset:
    def test_roundtrip(self):
        text = "x=12,y=-3,x*y"
        assert CHARSET.decode(CHARSET.encode(text)) == text

    def test_decode_stops_at_eos(self):
        assert CHARSET.decode(CHARSET.encode("12") + (CHARSET.EOS,) + CHARSET.encode("3")) == "12"

    def test_unknown_char(self):
        with pytest.raises(VocabError):
            CHARSET.encode("a")


class TestSVA:
    def test_label_matches_head_noun(self):
        for e in gen_sva(6, 300, grammar_depth=2):
            assert e.words[0] == "the"
            assert e.label == int(e.words[1].endswith("s"))
            assert len(e.words) in (2, 5, 8)

    def test_ids_in_vocab(self):
        assert all(0 <= i < len(SVA_VOCAB) for e in gen_sva(7, 50) for i in e.ids)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.integers(0, 9), max_size=6), min_size=1, max_size=5))
def test_pad_sequences_roundtrip(seqs):
    ids, mask = pad_sequences(seqs, pad_id=-1)
    assert ids.shape == mask.shape == (len(seqs), max(len(s) for s in seqs))
    for row, s in enumerate(seqs):
        assert ids[row][mask[row]].tolist() == s


def test_pair_batch():
    batch = make_pair_batch(gen_pairwise(8, 5), pad_id=50)
    assert len(batch) == 5
    assert np.all((batch.a_ids == 50) == ~batch.a_mask)


def test_writers(tmp_path):
    write_pairwise(tmp_path / "p.tsv", gen_pairwise(0, 4))
    write_transduction(tmp_path / "t.tsv", [TransductionExample.from_text("x=1,y=2,x+y", "3")])
    write_sva(tmp_path / "s.tsv", gen_sva(0, 3))
    assert len((tmp_path / "p.tsv").read_text().splitlines()) == 4
    assert (tmp_path / "t.tsv").read_text() == "x=1,y=2,x+y\t3\n"
    assert all(line.split("\t")[0] in "01" for line in (tmp_path / "s.tsv").read_text().splitlines())
