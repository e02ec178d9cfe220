import numpy as np
import pytest

from qnlp import autodiff as ad
from qnlp.qcore import Quaternion, q_hamilton
from qnlp.qlayers import Parameter
from qnlp.verify import (GRADIENT_LAYER_TYPES, CheckResult, algebra_basis, algebra_properties,
                         degenerate_scores, gradient_check, gradient_suite, matrix_form_oracle,
                         run_suite, softmax_normalization)


def flipped_k_sign(p: Quaternion, q: Quaternion) -> Quaternion:
    """Hamilton product with one sign error in the k-component."""
    good = q_hamilton(p, q)
    return Quaternion(good.r, good.x, good.y, good.z - 2 * p.x * q.y)


def commutative_product(p: Quaternion, q: Quaternion) -> Quaternion:
    """Averages both orders, which silently drops every cross term."""
    a, b = q_hamilton(p, q), q_hamilton(q, p)
    return Quaternion((a.r + b.r) / 2, (a.x + b.x) / 2, (a.y + b.y) / 2, (a.z + b.z) / 2)


class TestAlgebraChecks:
    def test_reference_product_passes(self):
        for check in (algebra_basis, algebra_properties, matrix_form_oracle):
            assert check(q_hamilton).passed

    @pytest.mark.parametrize("broken", [flipped_k_sign, commutative_product])
    def test_broken_product_is_caught(self, broken):
        results = [check(broken) for check in (algebra_basis, algebra_properties, matrix_form_oracle)]
        assert not all(r.passed for r in results)

    def test_sign_error_fails_oracle(self):
        assert not matrix_form_oracle(flipped_k_sign).passed

    def test_suite_fails_with_broken_product(self):
        names = {r.name for r in run_suite(flipped_k_sign, gradients=False) if not r.passed}
        assert names


class TestGradientCheck:
    @staticmethod
    def tanh_with_bad_vjp(a):
        y = np.tanh(a.value)
        return a.tape.record("tanh", (a,), y, lambda g: (g * (1.0 - y),))

    def test_correct_vjp_agrees(self):
        p = Parameter(np.random.default_rng(0).standard_normal(5))
        assert gradient_check(lambda t: ad.sum_(ad.tanh(t.parameter(p.value, p))), [p]) < 1e-8

    def test_wrong_vjp_is_caught(self):
        p = Parameter(np.random.default_rng(0).standard_normal(5))
        err = gradient_check(lambda t: ad.sum_(self.tanh_with_bad_vjp(t.parameter(p.value, p))), [p])
        assert err > 1e-2

    def test_vanishing_gradient_is_not_evidence(self):
        p = Parameter(np.ones(3))
        loss = lambda t: ad.sum_(ad.scale(t.parameter(p.value, p), 0.0))
        assert gradient_check(loss, [p]) == 1.0
        assert gradient_check(loss, [p], allow_zero=True) == 0.0


class TestSuite:
    def test_gradient_cases_cover_every_layer_type(self):
        results = gradient_suite()
        coverage = next(r for r in results if r.name == "gradient.coverage")
        assert coverage.passed, coverage.detail
        assert all(r.passed for r in results), [r.line() for r in results if not r.passed]
        assert GRADIENT_LAYER_TYPES >= {"QLinear", "OutputHead"}

    def test_attention_checks_pass(self):
        assert softmax_normalization().passed
        assert degenerate_scores().passed

    def test_exceptions_become_failures(self):
        from qnlp.verify import _timed

        def boom():
            raise RuntimeError("nope")

        result = _timed("x", boom)
        assert not result.passed and "nope" in result.detail

    def test_line_format(self):
        assert CheckResult("a.b", True, "fine", 0.5).line().startswith("PASS")
        assert CheckResult("a.b", False, "bad", 0.5).line().startswith("FAIL")
