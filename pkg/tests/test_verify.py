"""Self-verification suites must pass and report useful detail."""

import numpy as np

from bridgesampler.verify import (SUITES, enumeration_suite,
                                  equivalence_suite, fd_gradient, fd_suite,
                                  rel_err)


def test_registry_contains_all_suites():
    assert set(SUITES) == {"equivalence", "fd", "enumeration"}


def test_fd_gradient_on_quadratic():
    values = {"a": np.array([1.0, -2.0, 0.5])}
    grads = fd_gradient(lambda v: float(np.sum(v["a"] ** 2)), values, ["a"])
    assert np.allclose(grads["a"], 2.0 * values["a"], atol=1e-6)


def test_rel_err_scales():
    assert rel_err(np.array([1.0]), np.array([1.0])) == 0.0
    assert rel_err(np.array([1.1]), np.array([1.0])) > 0.05


def test_equivalence_suite_passes():
    ok, details = equivalence_suite()
    assert ok, details


def test_fd_suite_passes():
    ok, details = fd_suite()
    assert ok, details
    worst = max(d["worst_rel_err"] for d in details.values())
    assert worst < 1e-4


def test_enumeration_suite_passes():
    ok, details = enumeration_suite()
    assert ok, details
    assert max(d["worst_abs_err"] for d in details.values()) < 1e-10
