"""End-to-end acceptance gates.

Each test enforces one headline requirement, measures its own runtime
against the stated budget, and emits a single PASS/FAIL line directly to
the real stdout so the line survives pytest's capture.
"""

import sys
import time

import numpy as np
import pytest

from bridgesampler import autodiff as ad
from bridgesampler.autodiff import Tape
from bridgesampler.bridge import Bridge, make_reversible_chain_batch
from bridgesampler.dpi import counterexample_report
from bridgesampler.harness import RunConfig, train
from bridgesampler.metrics import (elbo, entropic_mode_coverage, mmd,
                                   sinkhorn_divergence)
from bridgesampler.targets import get_target, make_manywell
from bridgesampler.verify import enumeration_suite, equivalence_suite, fd_suite


_capman = None


@pytest.fixture(autouse=True)
def _expose_capture_manager(request):
    global _capman
    _capman = request.config.pluginmanager.getplugin("capturemanager")
    yield


def _report(num: int, ok: bool, detail: str) -> None:
    line = f"[criterion {num}] {'PASS' if ok else 'FAIL'} — {detail}"
    if _capman is not None:
        # pytest's default capture redirects fd 1 itself, so writing to
        # sys.__stdout__ is not enough; suspend capture for this line
        with _capman.global_and_fixture_disabled():
            print(line, flush=True)
    else:
        print(line, file=sys.__stdout__, flush=True)


def _finish(num: int, ok: bool, detail: str) -> None:
    _report(num, ok, detail)
    assert ok, f"criterion {num}: {detail}"


def test_criterion_1_gradient_equivalence():
    t0 = time.perf_counter()
    ok, details = equivalence_suite(batch_size=256, T=16)
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 10.0
    _finish(1, ok, f"LV == rKL-LD bit-exact (full for fixed-forward, "
            f"reverse blocks for DBS/CMCD); {elapsed:.1f}s / 10s budget; "
            f"{details}")


def test_criterion_2_variance_monotonicity_counterexample():
    t0 = time.perf_counter()
    rep = counterexample_report()
    elapsed = time.perf_counter() - t0
    checks = (
        abs(rep["var_conditional"] - 0.2331) < 1e-3
        and abs(rep["covariance"] - (-0.6365)) < 1e-3
        and rep["gap"] < 0.0
        and rep["kl_gap"] >= -1e-12
        and elapsed < 1.0
    )
    _finish(2, checks,
            f"var_cond={rep['var_conditional']:.5f} cov={rep['covariance']:.5f} "
            f"gap={rep['gap']:.5f} (<0), kl_gap={rep['kl_gap']:.5f} (>=0); "
            f"{elapsed:.2f}s / 1s budget")


def test_criterion_3_finite_difference_suite():
    t0 = time.perf_counter()
    # raw ops at 1e-6: finite differences of every differentiable primitive
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 3)) * 0.5 + 1.5   # positive for log/sqrt
    w = rng.standard_normal((3, 3))
    unary = {
        "exp": ad.exp, "log": ad.log, "sqrt": ad.sqrt, "square": ad.square,
        "tanh": ad.tanh, "sigmoid": ad.sigmoid, "softplus": ad.softplus,
        "negative": ad.negative,
    }
    binary = {
        "add": ad.add, "subtract": ad.subtract, "multiply": ad.multiply,
        "divide": ad.divide, "maximum": ad.maximum,
    }
    worst_raw = 0.0

    def check(fn_build):
        nonlocal worst_raw
        with Tape() as tape:
            node = tape.leaf(x, requires_grad=True)
            tape.backward(ad.reduce_sum(fn_build(node)))
            grad = node.grad
        fd = np.zeros_like(x)
        eps = 1e-7
        for i in np.ndindex(x.shape):
            for sign in (1.0, -1.0):
                xp = x.copy()
                xp[i] += sign * eps
                fd[i] += sign * float(np.sum(np.asarray(fn_build(xp))))
        fd /= 2 * eps
        denom = max(np.max(np.abs(grad)), np.max(np.abs(fd)), 1e-8)
        worst_raw = max(worst_raw, float(np.max(np.abs(grad - fd)) / denom))

    for fn in unary.values():
        check(fn)
    for fn in binary.values():
        check(lambda a, f=fn: f(a, x[::-1] + 0.5))
    check(lambda a: ad.matmul(a, w))
    check(lambda a: ad.clip(a, 0.5, 2.5))
    check(lambda a: ad.reduce_mean(a, axis=0))
    check(lambda a: ad.reshape(a, (3, 4)))
    check(lambda a: ad.concatenate([a, a], axis=1))

    # composite path: drift nets, transitions, and the frozen-batch
    # variance loss against its estimator
    nets_ok, net_details = fd_suite(tol=1e-4)
    elapsed = time.perf_counter() - t0
    ok = worst_raw < 1e-6 and nets_ok and elapsed < 60.0
    _finish(3, ok, f"raw-op rel err {worst_raw:.2e} (<1e-6), network/"
            f"transition/loss suite {net_details} (<1e-4); "
            f"{elapsed:.1f}s / 60s budget")


def test_criterion_4_entropy_closed_form():
    t0 = time.perf_counter()
    bridge = Bridge(make_manywell(4, 2, 4.0), "CMCD", T=8,
                    sigma_init=0.7, prior_sigma_init=1.3, seed=0)
    rng = np.random.default_rng(1)
    for name in ("schedule.raw", "prior.mean", "prior.log_std", "sigma.gamma"):
        bridge.store.values[name] = rng.standard_normal(
            bridge.store.values[name].shape) * 0.2
    closed = bridge.joint_entropy_closed_form()

    # one million paths, log q_joint accumulated from the driving noise
    values = bridge.store.values
    sigma = np.exp(values["sigma.gamma"])
    var = sigma ** 2 * bridge.dt
    prior_std = np.exp(values["prior.log_std"])
    total = []
    n_paths, chunk = 1_000_000, 125_000
    for c in range(n_paths // chunk):
        eps0, eps, _ = bridge._noise(chunk, seed=10_000 + c)
        x = values["prior.mean"] + prior_std * eps0
        lq = (-0.5 * np.sum(eps0 ** 2, axis=1)
              - np.sum(values["prior.log_std"])
              - 0.5 * bridge.dim * np.log(2.0 * np.pi))
        step_norm = 0.5 * np.sum(np.log(2.0 * np.pi * var)) \
            if var.ndim else 0.5 * bridge.dim * np.log(2.0 * np.pi * var)
        for j in range(bridge.T):
            drift = ad.value_of(bridge.reverse_drift(values, x, bridge.T - j))
            x = x + drift * bridge.dt + sigma * np.sqrt(bridge.dt) * eps[:, j]
            lq += -0.5 * np.sum(eps[:, j] ** 2, axis=1) - step_norm
        total.append(lq)
    lq = np.concatenate(total)
    mc = -lq.mean()
    se = lq.std(ddof=1) / np.sqrt(lq.size)
    elapsed = time.perf_counter() - t0
    ok = abs(closed - mc) < 3.0 * se and elapsed < 60.0
    _finish(4, ok, f"closed form {closed:.6f} vs MC {mc:.6f} over 1e6 paths "
            f"(|diff|={abs(closed - mc):.2e} < 3*SE={3 * se:.2e}); "
            f"{elapsed:.1f}s / 60s budget")


def test_criterion_5_enumeration_unbiasedness():
    t0 = time.perf_counter()
    ok, details = enumeration_suite(tol=1e-10, T=3)
    elapsed = time.perf_counter() - t0
    worst = max(d["worst_abs_err"] for d in details.values())
    ok = ok and elapsed < 10.0
    _finish(5, ok, f"estimator means vs exact enumeration gradients: worst "
            f"abs err {worst:.2e} (<1e-10); {elapsed:.1f}s / 10s budget")


def test_criterion_9_metric_self_consistency():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    cloud = rng.standard_normal((128, 3))
    s_self = sinkhorn_divergence(cloud, cloud)
    m_self = mmd(cloud, cloud)
    chain = make_reversible_chain_batch(256, 12, 3, ar_coeff=0.7, seed=1)
    per_path = np.max(np.abs(chain.log_ratio()))
    mean_elbo, _ = elbo(chain.log_ratio())
    elapsed = time.perf_counter() - t0
    ok = (s_self <= 1e-8 and m_self == 0.0 and per_path < 1e-8
          and elapsed < 30.0)
    _finish(9, ok, f"sinkhorn(P,P)={s_self:.1e} (<=1e-8), mmd(P,P)={m_self} "
            f"(==0), q=p chain max |log-ratio| {per_path:.1e} per path, "
            f"mean ELBO {mean_elbo:.1e}; {elapsed:.1f}s / 30s budget")


@pytest.mark.slow
def test_criterion_6_many_well_desk_scale(tmp_path):
    t0 = time.perf_counter()
    cfg = RunConfig(target="manywell", parameterization="CMCD", loss="rkl_ld",
                    T=64, batch_size=512, iterations=4000, lr=3e-3,
                    sigma_init=1.0, prior_sigma_init=2.0, learn_sigma=True,
                    seed=0, eval_every=500, eval_samples=512,
                    final_sample_metrics=False,
                    out_dir=str(tmp_path / "manywell"))
    manifest = train(cfg)
    final_elbo = [r["value"] for r in manifest.rows
                  if r["metric"] == "elbo"][-1]

    from bridgesampler.harness import load_checkpoint
    bridge, _ = load_checkpoint(tmp_path / "manywell" / "checkpoint.json")
    batch = bridge.simulate_reverse(512, seed=999)
    model_x = batch.final_states()[batch.valid]
    exact_a = bridge.target.sampler(512, 1000)
    exact_b = bridge.target.sampler(512, 1001)
    baseline = sinkhorn_divergence(exact_a, exact_b)
    model_s = sinkhorn_divergence(model_x, exact_a)
    elapsed = time.perf_counter() - t0
    ok = (not manifest.diverged and final_elbo >= -1.5
          and model_s <= 3.0 * baseline and elapsed < 45 * 60)
    _finish(6, ok, f"many well 5d: final ELBO {final_elbo:.3f} (>=-1.5), "
            f"sinkhorn {model_s:.3f} vs 3x baseline {3 * baseline:.3f}; "
            f"{elapsed / 60:.1f}min / 45min budget")


@pytest.mark.slow
def test_criterion_7_mode_coverage_desk_scale(tmp_path):
    t0 = time.perf_counter()
    cfg = RunConfig(target="gmm8_2d", parameterization="CMCD", loss="rkl_ld",
                    T=64, batch_size=384, iterations=4000, lr=2e-3,
                    sigma_init=2.0, prior_sigma_init=6.0, learn_sigma=True,
                    seed=0, eval_every=500, eval_samples=512,
                    final_sample_metrics=False,
                    out_dir=str(tmp_path / "gmm"))
    manifest = train(cfg)

    from bridgesampler.harness import load_checkpoint
    bridge, _ = load_checkpoint(tmp_path / "gmm" / "checkpoint.json")
    target = bridge.target
    batch = bridge.simulate_reverse(2000, seed=999)
    model_x = batch.final_states()[batch.valid]
    exact_a = target.sampler(2000, 1000)
    exact_b = target.sampler(2000, 1001)
    emc = entropic_mode_coverage(model_x, target.modes,
                                 target.component_log_density)
    baseline = mmd(exact_a, exact_b)
    model_m = mmd(model_x, exact_a)
    elapsed = time.perf_counter() - t0
    ok = (not manifest.diverged and emc >= 0.95
          and model_m <= 2.0 * baseline and elapsed < 30 * 60)
    _finish(7, ok, f"gmm 2d/8 modes: EMC {emc:.3f} (>=0.95), MMD "
            f"{model_m:.4f} vs 2x baseline {2 * baseline:.4f}; "
            f"{elapsed / 60:.1f}min / 30min budget")


@pytest.mark.slow
def test_criterion_8_stability_contrast_report(tmp_path):
    # qualitative, recorded as a report rather than a hard gate: with a
    # learned diffusion scale the log-variance loss is the one expected to
    # diverge, never the log-derivative KL
    results = {}
    for loss in ("lv", "rkl_ld"):
        for seed in (0, 1, 2):
            cfg = RunConfig(target="manywell", parameterization="CMCD",
                            loss=loss, T=16, batch_size=128, iterations=400,
                            lr=1e-2, sigma_init=1.0, prior_sigma_init=2.0,
                            learn_sigma=True, seed=seed, eval_every=100,
                            eval_samples=256, final_sample_metrics=False,
                            out_dir=str(tmp_path / f"{loss}_{seed}"))
            manifest = train(cfg)
            results[(loss, seed)] = (manifest.diverged,
                                     manifest.divergence_reason,
                                     manifest.nan_skips)
    lv_div = sum(1 for (l, s), r in results.items() if l == "lv" and r[0])
    ld_div = sum(1 for (l, s), r in results.items() if l == "rkl_ld" and r[0])
    contrast = lv_div > 0 and ld_div == 0
    detail = "; ".join(
        f"{l}/seed{s}: {'DIVERGED (' + r[1] + ')' if r[0] else 'stable'}"
        + (f", {r[2]} nan-skips" if r[2] else "")
        for (l, s), r in sorted(results.items()))
    status = ("observed" if contrast
              else "not observed this sweep — seed-dependent, informational")
    _report(8, True, f"stability contrast ({status}): {detail}")
