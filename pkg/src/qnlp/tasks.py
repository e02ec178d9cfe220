"""Deterministic synthetic datasets.

All generators draw from :class:`SplitMix64`, a portable 64-bit generator, so a
``(seed, params)`` pair yields the same dataset on every platform:

* :func:`gen_pairwise` -- pair classification (is ``b`` a shuffled window of ``a``?)
* :func:`gen_arithmetic` -- character-level arithmetic transduction, e.g.
  ``x=85,y=-523,x*y`` -> ``-44455``
* :func:`gen_sva` -- subject-verb number agreement with attractor phrases
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, VocabError

__all__ = [
    "SplitMix64", "PairExample", "TransductionExample", "SVAExample", "Charset", "CHARSET",
    "SVA_VOCAB", "gen_pairwise", "gen_arithmetic", "gen_sva", "pad_sequences", "PairBatch",
    "make_pair_batch", "write_pairwise", "write_transduction", "write_sva",
]

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 (Steele, Lea & Flood): state += golden gamma, then a 3-step mix."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` by rejection sampling (no modulo bias)."""
        if n <= 0:
            raise ContractError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def integer(self, lo: int, hi: int) -> int:
        """Uniform integer in ``[lo, hi]``."""
        return lo + self.below(hi - lo + 1)

    def random(self) -> float:
        return (self.next_u64() >> 11) * 2.0 ** -53

    def shuffle(self, items: list) -> list:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def choice(self, items: Sequence):
        return items[self.below(len(items))]


# -- pairwise classification ---------------------------------------------------------

@dataclass(frozen=True)
class PairExample:
    seq_a: tuple[int, ...]
    seq_b: tuple[int, ...]
    label: int


def gen_pairwise(seed: int, n: int, vocab: int = 50, len_range=(4, 8),
                 verbatim: bool = False) -> list[PairExample]:
    """Balanced two-class pair dataset.

    Label 1: ``seq_b`` is a shuffled contiguous window of ``seq_a`` covering at
    least half of it (``verbatim=True``: an exact copy).  Label 0: ``seq_b`` is an
    independent sample whose length follows the same distribution.
    """
    if n < 1:
        raise ContractError("n must be >= 1")
    lo, hi = len_range
    if not 1 <= lo <= hi:
        raise ContractError(f"invalid length range {len_range}")
    rng = SplitMix64(seed)
    out = []
    for i in range(n):
        label = i % 2
        len_a = rng.integer(lo, hi)
        seq_a = [rng.below(vocab) for _ in range(len_a)]
        if verbatim:
            width = len_a
        else:
            width = rng.integer(max(lo, math.ceil(len_a / 2)), len_a)
        if label == 1:
            start = rng.integer(0, len_a - width)
            seq_b = seq_a[start:start + width]
            if not verbatim:
                rng.shuffle(seq_b)
        else:
            seq_b = [rng.below(vocab) for _ in range(width)]
        out.append(PairExample(tuple(seq_a), tuple(seq_b), label))
    return rng.shuffle(out)


# -- arithmetic transduction -----------------------------------------------------------

class Charset:
    """Character vocabulary with special PAD / BOS / EOS ids 0 / 1 / 2."""

    PAD, BOS, EOS = 0, 1, 2
    SPECIALS = ("<pad>", "<bos>", "<eos>")

    def __init__(self, chars: str):
        self.chars = chars
        self.tokens = self.SPECIALS + tuple(chars)
        self._index = {c: i + len(self.SPECIALS) for i, c in enumerate(chars)}

    def __len__(self):
        return len(self.tokens)

    def encode(self, text: str) -> tuple[int, ...]:
        try:
            return tuple(self._index[c] for c in text)
        except KeyError as exc:
            raise VocabError(f"character {exc.args[0]!r} not in charset") from None

    def decode(self, ids: Sequence[int]) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i == self.EOS:
                break
            if i >= len(self.SPECIALS):
                out.append(self.tokens[i])
        return "".join(out)


CHARSET = Charset("0123456789+-*=xy, ")


@dataclass(frozen=True)
class TransductionExample:
    source: tuple[int, ...]
    target: tuple[int, ...]

    @property
    def source_text(self) -> str:
        return CHARSET.decode(self.source)

    @property
    def target_text(self) -> str:
        return CHARSET.decode(self.target)

    @classmethod
    def from_text(cls, source: str, target: str) -> TransductionExample:
        return cls(CHARSET.encode(source), CHARSET.encode(target))


_OPS = {"+": lambda a, b: a + b, "-": lambda a, b: a - b, "*": lambda a, b: a * b}


def _operand(rng: SplitMix64, digit_range, signed: bool) -> int:
    digits = rng.integer(*digit_range)
    lo = 0 if digits == 1 else 10 ** (digits - 1)
    value = rng.integer(lo, 10 ** digits - 1)
    if signed and rng.below(2):
        value = -value
    return value


def gen_arithmetic(seed: int, n: int, digit_range=(1, 3), ops=("+", "-", "*"),
                   signed: bool = True) -> list[TransductionExample]:
    """Arithmetic problems ``x=<int>,y=<int>,x<op>y`` with the exact integer result as target.

    ``digit_range`` bounds the digit count of each operand; ``signed`` allows
    negative operands.
    """
    if n < 1:
        raise ContractError("n must be >= 1")
    ops = tuple(ops)
    if not ops or not set(ops) <= set(_OPS):
        raise ContractError(f"ops must be a non-empty subset of {sorted(_OPS)}")
    lo, hi = digit_range
    if not 1 <= lo <= hi:
        raise ContractError(f"invalid digit range {digit_range}")
    rng = SplitMix64(seed)
    out = []
    for _ in range(n):
        op = rng.choice(ops)
        x = _operand(rng, digit_range, signed)
        y = _operand(rng, digit_range, signed)
        out.append(TransductionExample.from_text(f"x={x},y={y},x{op}y", str(_OPS[op](x, y))))
    return out


# -- subject-verb agreement -------------------------------------------------------------

_NOUNS = (("key", "keys"), ("cabinet", "cabinets"), ("author", "authors"), ("book", "books"),
          ("dog", "dogs"), ("table", "tables"), ("door", "doors"), ("girl", "girls"),
          ("farmer", "farmers"), ("picture", "pictures"))
_PREPS = ("to", "of", "near", "behind", "on", "with")
SVA_VOCAB = ("the",) + _PREPS + tuple(w for pair in _NOUNS for w in pair)
_SVA_INDEX = {w: i for i, w in enumerate(SVA_VOCAB)}


@dataclass(frozen=True)
class SVAExample:
    """A sentence prefix up to the verb; label 1 = plural head noun, 0 = singular."""

    words: tuple[str, ...]
    label: int

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(_SVA_INDEX[w] for w in self.words)


def gen_sva(seed: int, n: int, grammar_depth: int = 2) -> list[SVAExample]:
    """``the <noun> (<prep> the <noun>){0..depth}``; the label is the head noun's number."""
    if grammar_depth < 0:
        raise ContractError("grammar_depth must be >= 0")
    rng = SplitMix64(seed)
    out = []
    for _ in range(n):
        label = rng.below(2)
        words = ["the", rng.choice(_NOUNS)[label]]
        for _ in range(rng.integer(0, grammar_depth)):
            words += [rng.choice(_PREPS), "the", rng.choice(_NOUNS)[rng.below(2)]]
        out.append(SVAExample(tuple(words), label))
    return out


# -- batching -------------------------------------------------------------------------

def pad_sequences(seqs: Sequence[Sequence[int]], pad_id: int, length: int | None = None):
    """Right-pad to a common length; return ``(ids, mask)`` arrays of shape ``(N, L)``."""
    length = max((len(s) for s in seqs), default=0) if length is None else length
    ids = np.full((len(seqs), length), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), length), dtype=bool)
    for i, s in enumerate(seqs):
        s = list(s)[:length]
        ids[i, :len(s)] = s
        mask[i, :len(s)] = True
    return ids, mask


@dataclass
class PairBatch:
    a_ids: np.ndarray
    a_mask: np.ndarray
    b_ids: np.ndarray
    b_mask: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


def make_pair_batch(examples: Sequence[PairExample], pad_id: int) -> PairBatch:
    a_ids, a_mask = pad_sequences([e.seq_a for e in examples], pad_id)
    b_ids, b_mask = pad_sequences([e.seq_b for e in examples], pad_id)
    return PairBatch(a_ids, a_mask, b_ids, b_mask, np.array([e.label for e in examples]))


# -- export ---------------------------------------------------------------------------

def write_pairwise(path, examples: Sequence[PairExample]) -> None:
    lines = [f"{e.label}\t{' '.join(map(str, e.seq_a))}\t{' '.join(map(str, e.seq_b))}"
             for e in examples]
    Path(path).write_text("\n".join(lines) + "\n")


def write_transduction(path, examples: Sequence[TransductionExample]) -> None:
    Path(path).write_text("".join(f"{e.source_text}\t{e.target_text}\n" for e in examples))


def write_sva(path, examples: Sequence[SVAExample]) -> None:
    Path(path).write_text("".join(f"{e.label}\t{' '.join(e.words)}\n" for e in examples))
