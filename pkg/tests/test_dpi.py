"""Exact 2x2 tables where marginalizing increases the log-ratio variance."""

import numpy as np
import pytest

from bridgesampler.dpi import (FinitePair, counterexample_pair,
                               counterexample_report, dpi_gap, kl_divergence,
                               lv_functional, violation_search)


def brute_force_var(pair, level):
    """Independent oracle: enumerate the four cells directly."""
    qx = pair.q.sum(axis=1)
    px = pair.p.sum(axis=1)
    vals, weights = [], []
    for x in range(2):
        for y in range(2):
            if pair.q[x, y] == 0.0:
                continue
            lr_m = np.log(qx[x]) - np.log(px[x])
            lr_j = np.log(pair.q[x, y]) - np.log(pair.p[x, y])
            vals.append(lr_m if level == "marginal" else lr_j)
            weights.append(pair.q[x, y])
    vals, weights = np.array(vals), np.array(weights)
    mean = np.sum(weights * vals)
    return float(np.sum(weights * (vals - mean) ** 2))


class TestValidation:
    def test_rejects_non_probability_tables(self):
        with pytest.raises(ValueError):
            FinitePair(np.full((2, 2), 0.3), np.full((2, 2), 0.25))
        with pytest.raises(ValueError):
            FinitePair(np.array([[0.5, 0.5], [0.5, -0.5]]),
                       np.full((2, 2), 0.25))
        with pytest.raises(ValueError):
            FinitePair(np.ones((3, 3)) / 9.0, np.ones((3, 3)) / 9.0)

    def test_rejects_missing_absolute_continuity(self):
        q = np.array([[0.5, 0.5], [0.0, 0.0]])
        p = np.array([[0.0, 1.0], [0.0, 0.0]])
        with pytest.raises(ValueError):
            FinitePair(q, p)

    def test_from_components_builds_joint(self):
        pair = FinitePair.from_components(
            [0.6, 0.4], [0.5, 0.5],
            [[0.2, 0.8], [0.7, 0.3]], [[0.5, 0.5], [0.5, 0.5]])
        assert pair.q[0, 1] == pytest.approx(0.48)
        assert np.allclose(pair.marginal_x("q"), [0.6, 0.4])


class TestFunctionals:
    def test_variance_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            q = rng.dirichlet(np.ones(4)).reshape(2, 2)
            p = rng.dirichlet(np.ones(4)).reshape(2, 2)
            pair = FinitePair(q, p)
            for level in ("marginal", "joint"):
                assert lv_functional(pair, level) == pytest.approx(
                    brute_force_var(pair, level), abs=1e-12)

    def test_kl_always_contracts(self):
        # the classic data-processing inequality holds for KL on every draw
        rng = np.random.default_rng(1)
        for _ in range(200):
            q = rng.dirichlet(np.ones(4)).reshape(2, 2)
            p = rng.dirichlet(np.ones(4)).reshape(2, 2)
            pair = FinitePair(q, p)
            assert kl_divergence(pair, "joint") >= \
                kl_divergence(pair, "marginal") - 1e-12

    def test_identical_distributions_give_zero(self):
        q = np.array([[0.1, 0.2], [0.3, 0.4]])
        pair = FinitePair(q, q.copy())
        assert lv_functional(pair, "joint") == 0.0
        assert kl_divergence(pair, "joint") == 0.0
        assert dpi_gap(pair)["gap"] == 0.0

    def test_unknown_level_raises(self):
        pair = counterexample_pair()
        with pytest.raises(ValueError):
            lv_functional(pair, "middle")
        with pytest.raises(ValueError):
            kl_divergence(pair, "middle")


class TestDecomposition:
    def test_gap_identity_on_random_tables(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            q = rng.dirichlet(np.ones(4)).reshape(2, 2)
            p = rng.dirichlet(np.ones(4)).reshape(2, 2)
            rep = dpi_gap(FinitePair(q, p))
            assert rep["var_joint"] == pytest.approx(
                rep["var_marginal"] + rep["var_conditional"]
                + 2.0 * rep["covariance"], abs=1e-12)
            assert rep["gap"] == pytest.approx(
                rep["var_joint"] - rep["var_marginal"], abs=1e-12)


class TestCounterexample:
    def test_reference_values(self):
        rep = counterexample_report()
        assert rep["var_conditional"] == pytest.approx(0.23313, abs=1e-5)
        assert rep["covariance"] == pytest.approx(-0.63653, abs=1e-5)
        assert rep["gap"] == pytest.approx(-1.03994, abs=1e-5)
        assert rep["gap"] < 0.0          # the variance functional violates
        assert rep["kl_gap"] >= 0.0      # ... while KL still contracts

    def test_reference_joint_variance_brute_force(self):
        pair = counterexample_pair()
        assert dpi_gap(pair)["var_joint"] == pytest.approx(
            brute_force_var(pair, "joint"), abs=1e-12)


class TestSearch:
    def test_search_finds_violations_and_sorts(self):
        found = violation_search(seed=0, trials=2000)
        assert len(found) > 0
        gaps = [g for g, _ in found]
        assert gaps == sorted(gaps)
        for gap, pair in found[:5]:
            assert dpi_gap(pair)["gap"] == pytest.approx(gap, abs=1e-12)
            assert gap < -1e-6

    def test_search_deterministic(self):
        a = violation_search(seed=7, trials=500)
        b = violation_search(seed=7, trials=500)
        assert len(a) == len(b)
        assert all(x[0] == y[0] for x, y in zip(a, b))
