"""Self-check suites: estimator equivalence, finite differences, enumeration.

These back the ``gradcheck`` command and the acceptance tests.  Each suite
returns ``(ok, details)`` where details is a JSON-serialisable dict.
"""

from __future__ import annotations

import numpy as np

from . import losses
from .bridge import Bridge
from .discrete import TwoStateChain
from .targets import make_gmm


def _reports_equal(a, b) -> bool:
    fa, fb = a.flat(), b.flat()
    return set(fa) == set(fb) and all(
        np.array_equal(fa[k], fb[k]) for k in fa)


def _alpha_equal(a, b) -> bool:
    return set(a.blocks["alpha"]) == set(b.blocks["alpha"]) and all(
        np.array_equal(a.blocks["alpha"][k], b.blocks["alpha"][k])
        for k in a.blocks["alpha"])


def equivalence_suite(batch_size: int = 256, T: int = 16,
                      seed: int = 0) -> tuple[bool, dict]:
    """On-policy LV and score-function reverse-KL gradients must coincide.

    With a fixed forward process the full reports are bit-identical; with
    learnable forward/shared parameters only the reverse-only block is.
    """
    target = make_gmm(d=2, m=4, box_halfwidth=10.0, seed=3)
    details = {}
    ok = True
    for kind in ("FIXED_FORWARD", "DBS", "CMCD"):
        bridge = Bridge(target, kind, T=T, seed=seed)
        batch = bridge.simulate_reverse(batch_size, seed=seed + 11)
        r_ld = losses.grad_rkl_ld(batch, bridge)
        r_lv = losses.grad_lv(batch, bridge)
        alpha_ok = _alpha_equal(r_ld, r_lv)
        full_ok = _reports_equal(r_ld, r_lv)
        details[kind] = {"alpha_block_identical": alpha_ok,
                         "full_report_identical": full_ok}
        ok = ok and alpha_ok and (full_ok if kind == "FIXED_FORWARD" else True)
    return ok, details


def fd_gradient(fn, values: dict, names, eps: float = 1e-6) -> dict:
    """Central finite differences of a scalar function of a value dict."""
    out = {}
    for name in names:
        base = np.asarray(values[name], dtype=np.float64)
        grad = np.zeros_like(base)
        flat = grad.reshape(-1)
        base_flat = base.reshape(-1)
        for i in range(base_flat.size):
            for sign in (1.0, -1.0):
                shifted = dict(values)
                pert = base.copy().reshape(-1)
                pert[i] += sign * eps
                shifted[name] = pert.reshape(base.shape)
                flat[i] += sign * fn(shifted)
        out[name] = grad / (2.0 * eps)
    return out


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b)) / denom)


def fd_suite(tol: float = 1e-4, seed: int = 0) -> tuple[bool, dict]:
    """Finite-difference check of the variance-loss gradient on a frozen batch."""
    target = make_gmm(d=2, m=3, box_halfwidth=5.0, seed=5)
    details = {}
    ok = True
    for kind in ("CMCD", "DBS"):
        bridge = Bridge(target, kind, T=4, learn_sigma=True, seed=seed)
        batch = bridge.simulate_reverse(16, seed=seed + 3)
        report = losses.grad_lv(batch, bridge)

        def loss_at(values):
            lr = bridge.recompute_log_ratio(batch, values)[batch.valid]
            return 0.5 * float(np.var(lr))

        flat = report.flat()
        names = [n for n in flat if flat[n].size <= 80]
        fd = fd_gradient(loss_at, bridge.store.values, names)
        worst = max(rel_err(fd[n], flat[n]) for n in names)
        details[kind] = {"checked_params": len(names),
                         "worst_rel_err": worst}
        ok = ok and worst < tol
    return ok, details


def enumeration_suite(tol: float = 1e-10, T: int = 3) -> tuple[bool, dict]:
    """Estimator means over all trajectories vs exactly differentiated losses."""
    chain = TwoStateChain(T=T)
    exact = chain.exact_gradients()
    est = chain.estimator_means()
    details = {}
    ok = True
    for name in ("rkl", "lv", "fkl"):
        params = (["fwd.gain"] if name == "fkl"
                  else list(chain.store.trainable_names()))
        worst = max(float(np.max(np.abs(est[name][p] - exact[name][p])))
                    for p in params)
        details[name] = {"worst_abs_err": worst}
        ok = ok and worst < tol
    return ok, details


SUITES = {
    "equivalence": equivalence_suite,
    "fd": fd_suite,
    "enumeration": enumeration_suite,
}
