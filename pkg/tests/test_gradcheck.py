"""Finite-difference verification of every differentiable operation."""
import numpy as np
import pytest

from stereonvs import ops
from stereonvs.gradcheck import (check_gradients, fixed_weights, rand_tensor,
                                 run_suites, suite_names)


def test_all_op_suites_pass():
    results = run_suites()
    failures = [r.as_line() for r in results if not r.passed]
    assert not failures, "\n".join(failures)


def test_suite_registry_covers_core_ops():
    from stereonvs import gradcheck_suites  # noqa: F401
    names = set(suite_names())
    required = {"conv2d", "conv3d", "conv_transpose3d", "batch_norm_train",
                "bilinear_sample", "soft_argmin", "ssim", "photometric_loss",
                "lr_consistency_loss", "smoothness_loss", "inpaint_loss"}
    assert required <= names


def test_harness_reports_corrupted_op_by_name(monkeypatch, rng):
    """A deliberately broken backward must be caught and named."""
    original = ops.avg_pool2d

    def corrupted(x, factor=2):
        out = original(x, factor)
        good = out._backward

        def bad(g):
            good(g * 1.5)  # wrong scale

        out._backward = bad
        return out

    monkeypatch.setattr(ops, "avg_pool2d", corrupted)
    results = run_suites(["avg_pool2d", "conv2d"])
    by_name = {r.name: r for r in results}
    assert not by_name["avg_pool2d"].passed
    assert "FAIL" in by_name["avg_pool2d"].as_line()
    assert by_name["conv2d"].passed


def test_check_gradients_error_metric(rng):
    x = rand_tensor(rng, (3, 3))
    w = fixed_weights((3, 3), rng)
    err = check_gradients(lambda: (x * x * w).sum(), [x])
    assert err < 1e-8

    from stereonvs.tensor import Tensor, make_op
    y = rand_tensor(rng, (3, 3))

    def wrong_double(t):
        return make_op(t.data * 2.0, (t,),
                       lambda g: t._accumulate(2.5 * g))  # should be 2.0

    err = check_gradients(lambda: (wrong_double(y) * w).sum(), [y])
    assert err > 0.1
