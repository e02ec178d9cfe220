"""Self-checks behind ``qnlp verify``.

Each check returns a :class:`CheckResult`.  The Hamilton product under test is
injectable so a deliberately broken product can be shown to fail the suite.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, backward
from .qattention import QAttConfig, QAttModel, cross_scores
from .qcore import QTensor, Quaternion, q_hamilton, q_norm
from .qlayers import (Embedding, LayerNorm, Linear, Module, OutputHead, Parameter, QLinear,
                      hamilton_matrix_form)
from .qtransformer import EncoderBlock, MultiHeadAttention, QTransformerConfig, causal_mask

__all__ = [
    "CheckResult", "algebra_basis", "algebra_properties", "matrix_form_oracle",
    "gradient_check", "gradient_suite", "softmax_normalization", "degenerate_scores",
    "run_suite", "GRADIENT_LAYER_TYPES",
]

Hamilton = Callable[[Quaternion, Quaternion], Quaternion]

# every class that owns trainable parameters
GRADIENT_LAYER_TYPES = frozenset({"QLinear", "Linear", "Embedding", "LayerNorm", "OutputHead"})


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28} {self.detail} ({self.seconds:.2f}s)"


def _timed(name: str, fn) -> CheckResult:
    t0 = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:  # a crash is a failed property, not a crashed suite
        passed, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, bool(passed), detail, time.perf_counter() - t0)


# -- algebra ---------------------------------------------------------------------------

_ONE, _I, _J, _K = (Quaternion(*row) for row in np.eye(4))


def algebra_basis(hamilton: Hamilton = q_hamilton) -> CheckResult:
    rules = [
        ("ij=k", _I, _J, _K), ("jk=i", _J, _K, _I), ("ki=j", _K, _I, _J),
        ("ji=-k", _J, _I, -_K), ("kj=-i", _K, _J, -_I), ("ik=-j", _I, _K, -_J),
        ("i^2=-1", _I, _I, -_ONE), ("j^2=-1", _J, _J, -_ONE), ("k^2=-1", _K, _K, -_ONE),
    ]

    def run():
        broken = [name for name, a, b, want in rules if hamilton(a, b) != want]
        return not broken, "broken: " + ", ".join(broken) if broken else f"{len(rules)} rules exact"

    return _timed("algebra.basis", run)


def _rel(a: Quaternion, b: Quaternion) -> float:
    scale = max(q_norm(a), q_norm(b))
    return 0.0 if scale == 0 else q_norm(a - b) / scale


def algebra_properties(hamilton: Hamilton = q_hamilton, n: int = 1000, seed: int = 0,
                       tol: float = 1e-10) -> CheckResult:
    """Norm multiplicativity, associativity and distributivity over ``n`` random triples."""

    def run():
        rng = np.random.default_rng(seed)
        worst = {"norm": 0.0, "assoc": 0.0, "distrib": 0.0}
        for a, b, c in rng.standard_normal((n, 3, 4)):
            a, b, c = Quaternion.from_array(a), Quaternion.from_array(b), Quaternion.from_array(c)
            ab = hamilton(a, b)
            expected = q_norm(a) * q_norm(b)
            worst["norm"] = max(worst["norm"], abs(q_norm(ab) - expected) / expected)
            worst["assoc"] = max(worst["assoc"], _rel(hamilton(ab, c), hamilton(a, hamilton(b, c))))
            worst["distrib"] = max(worst["distrib"], _rel(hamilton(a, b + c), ab + hamilton(a, c)))
        bad = [k for k, v in worst.items() if not v <= tol]
        detail = " ".join(f"{k}={v:.1e}" for k, v in worst.items())
        return not bad, detail

    return _timed("algebra.properties", run)


def matrix_form_oracle(hamilton: Hamilton = q_hamilton, n: int = 1000, seed: int = 1) -> CheckResult:
    """``hamilton(w, q)`` against the 4x4 real matrix of ``w`` applied to ``q``.

    The matrix product is evaluated term by term left to right, the same
    summation order as the product, so the two must agree bit for bit.
    """

    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for w, q in rng.standard_normal((n, 2, 4)):
            m = hamilton_matrix_form(Quaternion.from_array(w))
            oracle = [((m[i, 0] * q[0] + m[i, 1] * q[1]) + m[i, 2] * q[2]) + m[i, 3] * q[3]
                      for i in range(4)]
            got = hamilton(Quaternion.from_array(w), Quaternion.from_array(q)).as_array()
            worst = max(worst, float(np.max(np.abs(got - oracle))))
        return worst == 0.0, f"max abs error {worst:.1e} over {n} pairs"

    return _timed("matrix_form.oracle", run)


# -- gradients -------------------------------------------------------------------------

def gradient_check(loss_fn: Callable[[Tape], ad.Node], params: list[Parameter],
                   step: float = 1e-6, allow_zero: bool = False) -> float:
    """Worst per-tensor relative error between backprop and central differences.

    The error of a tensor is ``|g_analytic - g_numeric| / (|g_analytic| + |g_numeric|)``
    in the Euclidean norm.  A tensor whose gradients both vanish proves nothing
    and scores 1.0 unless ``allow_zero`` is set.
    """
    tape = Tape()
    loss = loss_fn(tape)
    grads = backward(tape, loss)
    by_owner = {id(tape.parameters[i]): g for i, g in grads.items()}
    worst = 0.0
    for p in params:
        analytic = by_owner.get(id(p), np.zeros_like(p.value))
        numeric = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = float(loss_fn(Tape()).value)
            flat[i] = keep - step
            down = float(loss_fn(Tape()).value)
            flat[i] = keep
            numeric.reshape(-1)[i] = (up - down) / (2 * step)
        denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
        if denom > 0:
            worst = max(worst, float(np.linalg.norm(analytic - numeric) / denom))
        elif not allow_zero:
            worst = 1.0
    return worst


def _layer_types(*modules: Module) -> set[str]:
    seen = set()

    def walk(m):
        if m.parameters():
            seen.add(type(m).__name__)
        for v in vars(m).values():
            items = v if isinstance(v, (list, tuple)) else [v]
            for item in items:
                if isinstance(item, Module):
                    walk(item)

    for m in modules:
        walk(m)
    return seen


def _readout(x: ad.Node, weights: np.ndarray) -> ad.Node:
    # a fixed random projection makes every output element matter to the loss
    return ad.sum_(ad.mul(ad.tanh(x), weights))


def _randomize_heads(rng, *heads: Linear) -> None:
    # output layers start at zero, which would leave every upstream gradient at zero
    for head in heads:
        head.weight.value = rng.standard_normal(head.weight.shape)


def _gradient_cases(seed: int):
    rng = np.random.default_rng(seed)

    qffn = QLinear(3, 2, rng=rng)
    x_q = rng.standard_normal((4, 5, 3))
    w_qffn = rng.standard_normal((4, 5, 2))
    yield ("qffn", [qffn],
           lambda t: _readout(ad.tanh(qffn(t.constant(x_q))), w_qffn))

    scores = Parameter(rng.standard_normal((4, 3, 5)))
    mask = rng.random((3, 5)) > 0.3
    mask[:, 0] = True
    w_soft = rng.standard_normal((4, 3, 5))
    yield ("component_softmax", [scores],
           lambda t: ad.sum_(ad.mul(ad.component_softmax(scores.bind(t), -1, mask), w_soft)))

    qatt = QAttModel(QAttConfig(d=3, hidden_q=2, vocab=7, activation="tanh", project=True, seed=seed))
    a_ids = rng.integers(0, 7, (2, 4))
    b_ids = rng.integers(0, 7, (2, 3))
    a_mask = np.array([[1, 1, 1, 1], [1, 1, 1, 0]], bool)
    b_mask = np.array([[1, 1, 0], [1, 1, 1]], bool)
    labels = np.array([0, 1])
    _randomize_heads(rng, qatt.head.proj)
    yield ("qatt_end_to_end", [qatt],
           lambda t: ad.cross_entropy(qatt.logits(t, a_ids, b_ids, a_mask, b_mask), labels))

    for variant in ("full", "partial"):
        cfg = QTransformerConfig(variant=variant, d_q=2, heads=2, ffn_hidden=8, seed=seed)
        block = EncoderBlock(cfg, rng)
        x_r = rng.standard_normal((2, 3, cfg.width))
        blk_mask = causal_mask(3)[None]
        w_blk = rng.standard_normal((2, 3, cfg.width))
        yield (f"encoder_block_{variant}", [block],
               lambda t, block=block, x_r=x_r, m=blk_mask, w=w_blk: _readout(block(t.constant(x_r), m), w))

    embed = Embedding(6, 8, rng)
    head = OutputHead(2, 3, rng)
    _randomize_heads(rng, head.proj)
    norm = LayerNorm(8)
    norm.gain.value = rng.uniform(0.5, 1.5, 8)
    norm.offset.value = rng.standard_normal(8)
    ids = rng.integers(0, 6, (2, 3))
    targets = rng.integers(0, 3, (2, 3))
    yield ("embedding_norm_head", [embed, norm, head],
           lambda t: ad.cross_entropy(head(ad.real_to_quat(norm(embed(t, ids)))), targets))

    lin = Linear(5, 4, rng=rng)
    x_l = rng.standard_normal((3, 5))
    w_lin = rng.standard_normal((3, 4))
    yield ("linear", [lin], lambda t: _readout(lin(t.constant(x_l)), w_lin))


def gradient_suite(seed: int = 0, tol: float = 1e-5) -> list[CheckResult]:
    results = []
    covered: set[str] = set()
    for name, modules, loss_fn in _gradient_cases(seed):
        params = [p for m in modules for p in (m.parameters() if isinstance(m, Module) else [m])]
        covered |= _layer_types(*[m for m in modules if isinstance(m, Module)])

        def run(loss_fn=loss_fn, params=params):
            err = gradient_check(loss_fn, params)
            return err <= tol, f"max rel err {err:.1e} over {len(params)} tensors"

        results.append(_timed(f"gradient.{name}", run))

    def coverage():
        missing = sorted(GRADIENT_LAYER_TYPES - covered)
        return not missing, "missing: " + ", ".join(missing) if missing else "all parameterized layer types"

    results.append(_timed("gradient.coverage", coverage))
    return results


# -- attention weights -----------------------------------------------------------------

def _row_sum_error(w: np.ndarray, mask: np.ndarray) -> tuple[float, bool]:
    """Worst row-sum deviation, and whether every masked weight is exactly zero."""
    err = float(np.max(np.abs(w.sum(axis=-1) - 1.0)))
    return err, bool(np.all(w[~np.broadcast_to(mask, w.shape)] == 0.0))


def softmax_normalization(seed: int = 0, tol: float = 1e-6) -> CheckResult:
    """Rows of Q-Att alignment weights and of transformer attention weights sum to one."""

    def run():
        rng = np.random.default_rng(seed)
        worst, zeros = 0.0, True
        model = QAttModel(QAttConfig(d=4, hidden_q=2, vocab=20, seed=seed))
        a_ids, b_ids = rng.integers(0, 20, (3, 6)), rng.integers(0, 20, (3, 5))
        a_mask = np.arange(6)[None] < np.array([[6], [4], [2]])
        b_mask = np.arange(5)[None] < np.array([[3], [5], [1]])
        state = model.alignment_state(a_ids, b_ids, a_mask, b_mask)
        for w, m in ((state.g, b_mask[:, None, :]), (state.f, a_mask[:, None, :])):
            err, ok = _row_sum_error(w, m)
            worst, zeros = max(worst, err), zeros and ok
        for variant in ("partial", "real"):
            cfg = QTransformerConfig(variant=variant, d_q=4, heads=2, seed=seed)
            attn = MultiHeadAttention(cfg, rng, cfg.quaternion_attention)
            x = Tape().constant(5 * rng.standard_normal((2, 7, cfg.width)))
            mask = causal_mask(7)[None]
            _, w = attn(x, x, mask, return_weights=True)
            err, ok = _row_sum_error(w.value, mask)
            worst, zeros = max(worst, err), zeros and ok
        return worst <= tol and zeros, f"max |row sum - 1| {worst:.1e}, masked entries zero: {zeros}"

    return _timed("softmax.normalization", run)


def degenerate_scores(seed: int = 0, tol: float = 1e-10) -> CheckResult:
    """Real-only weights and inputs: the r-component scores are real scaled dot products."""

    def run():
        rng = np.random.default_rng(seed)
        cfg = QTransformerConfig(variant="partial", d_q=4, heads=1, seed=seed)
        attn = MultiHeadAttention(cfg, rng, quaternion=True)
        for layer in (attn.w_q, attn.w_k):
            layer.weight.value[1:] = 0.0
        x = np.zeros((1, 5, cfg.width))
        x[..., : cfg.d_q] = rng.standard_normal((1, 5, cfg.d_q))
        tape = Tape()
        xn = tape.constant(x)
        q = attn._split_heads(attn.w_q.real(xn)).value
        k = attn._split_heads(attn.w_k.real(xn)).value
        scores = cross_scores(QTensor.from_array(q), QTensor.from_array(k)).data[0]
        scores = scores / math.sqrt(cfg.d_k)
        w_q_real = attn.w_q.weight.value[0]
        w_k_real = attn.w_k.weight.value[0]
        xr = x[0, :, : cfg.d_q]
        reference = (xr @ w_q_real.T) @ (xr @ w_k_real.T).T / math.sqrt(cfg.d_k)
        err = float(np.max(np.abs(scores[0, 0] - reference)))
        return err <= tol, f"max abs error {err:.1e}"

    return _timed("attention.degenerate", run)


def run_suite(hamilton: Hamilton = q_hamilton, gradients: bool = True) -> list[CheckResult]:
    results = [algebra_basis(hamilton), algebra_properties(hamilton), matrix_form_oracle(hamilton)]
    if gradients:
        results += gradient_suite()
    results += [softmax_normalization(), degenerate_scores()]
    return results
