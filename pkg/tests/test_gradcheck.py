"""Finite-difference machinery: numeric gradients, suite wiring, reports."""
import numpy as np
import pytest

from sceneparse import tensor as T
from sceneparse.errors import ValidationError
from sceneparse.gradcheck import (
    DENOM_FLOOR, GradCheckReport, grad_check, make_default_suite,
    numeric_gradient, run_default_suite,
)


def f64(arr):
    return T.Tensor(np.asarray(arr), dtype=np.float64, requires_grad=True)


def test_denominator_floor_pinned():
    assert DENOM_FLOOR == 1e-4


def test_numeric_gradient_quadratic():
    # f(x) = sum(x^2) has exact gradient 2x; central differences are exact
    # for quadratics up to roundoff
    x = f64([1.0, -2.0, 0.5])
    g = numeric_gradient(lambda ts: T.tensor_sum(T.mul(ts[0], ts[0])), [x], 0)
    assert g.shape == x.data.shape
    assert np.allclose(g, 2.0 * x.data, atol=1e-7)


def test_grad_check_passes_on_smooth_program():
    rng = np.random.default_rng(0)
    a = f64(rng.normal(size=(3, 3)))
    b = f64(rng.normal(size=(3, 3)))
    report = grad_check(lambda ts: T.tensor_sum(T.mul(T.add(ts[0], ts[1]), ts[0])),
                        [a, b], tol=1e-4)
    assert isinstance(report, GradCheckReport)
    assert report.passed and report.max_rel_error < 1e-4
    assert len(report.per_input) == 2
    assert "PASS" in str(report)


def test_grad_check_rejects_float32():
    x = T.Tensor(np.ones(2, dtype=np.float32))
    with pytest.raises(ValidationError):
        grad_check(lambda ts: T.tensor_sum(ts[0]), [x])


def test_grad_check_detects_corrupted_backward():
    # sabotage the recorded gradient after the graph is built; the numeric
    # probe must expose the mismatch
    def fn(ts):
        out = T.tensor_sum(T.mul(ts[0], ts[0]))
        orig = out._backward

        def corrupted(g):
            return [c * 0.25 if c is not None else None for c in orig(g)]
        out._backward = corrupted
        return out

    report = grad_check(fn, [f64([1.0, 2.0])], tol=1e-4)
    assert not report.passed
    assert report.max_rel_error > 1e-2
    assert "FAIL" in str(report)


def test_element_limit_needs_rng_and_subsamples():
    rng = np.random.default_rng(1)
    x = f64(rng.normal(size=(8, 8)))
    fn = lambda ts: T.tensor_sum(T.mul(ts[0], ts[0]))
    with pytest.raises(ValidationError):
        grad_check(fn, [x], element_limit=5)
    report = grad_check(fn, [x], element_limit=5, rng=np.random.default_rng(2))
    assert report.passed


def test_near_zero_gradients_use_floor_not_blowup():
    # gradient of sum(relu(x)) at strongly negative x is exactly 0 both ways;
    # the relative error must come out 0, not 0/0 noise
    x = f64(np.full(4, -5.0))
    report = grad_check(lambda ts: T.tensor_sum(T.relu(ts[0])), [x], tol=1e-4)
    assert report.max_rel_error == 0.0


def test_default_suite_composition():
    suite = make_default_suite()
    assert [name for name, _, _, _ in suite] == [
        "conv2d", "conv2d_stride2", "batch_norm2d", "bilinear_resize_up",
        "bilinear_resize_down", "adaptive_avg_pool2d", "max_pool2d",
        "masked_cross_entropy", "linear", "diamond_graph",
    ]
    for name, fn, inputs, h in suite:
        assert h == 1e-4
        assert all(t.data.dtype == np.float64 for t in inputs), name
    # deterministic: same inputs on every call
    s2 = make_default_suite()
    for (n1, _, i1, _), (n2, _, i2, _) in zip(suite, s2):
        assert n1 == n2
        assert all(np.array_equal(a.data, b.data) for a, b in zip(i1, i2))


def test_run_default_suite_ops_only():
    ok, results = run_default_suite(tol=1e-4, include_model=False)
    assert ok
    assert len(results) == 10
    for name, rep in results:
        assert rep.passed, (name, rep.max_rel_error, rep.worst)


def test_verbose_lines_collector():
    lines = []
    ok, _ = run_default_suite(tol=1e-4, verbose_lines=lines,
                              include_model=False)
    assert ok and len(lines) >= 10
    assert all(isinstance(l, str) for l in lines)
