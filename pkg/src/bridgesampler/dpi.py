"""Finite counterexample lab for the log-variance functional.

The variance of the log-ratio is not an f-divergence and need not shrink
under marginalization.  This module computes the variance functional
exactly on 2x2 joint tables, decomposes the joint-vs-marginal gap, and
searches random tables for further violations.  KL divergence on the same
tables is provided as the contrasting functional that always contracts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _xlogx(v: np.ndarray) -> np.ndarray:
    out = np.zeros_like(v)
    nz = v > 0.0
    out[nz] = v[nz] * np.log(v[nz])
    return out


@dataclass
class FinitePair:
    """Two joint distributions over the four cells {0,1} x {0,1}.

    Tables are indexed ``[x, y]``.  Marginals over x and conditionals of
    y given x are derived on demand.  Wherever q puts mass, p must too
    (checked on the x-marginal and on the joint support).
    """

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)
        for name, tab in (("q", self.q), ("p", self.p)):
            if tab.shape != (2, 2):
                raise ValueError(f"{name} must be a 2x2 table")
            if np.any(tab < 0.0) or not np.isclose(tab.sum(), 1.0, atol=1e-12):
                raise ValueError(f"{name} must be a probability table")
        if np.any((self.q > 0.0) & (self.p == 0.0)):
            raise ValueError("q must be absolutely continuous w.r.t. p")

    @classmethod
    def from_components(cls, q_x, p_x, q_y_given_x, p_y_given_x):
        """Build joints from x-marginals and y|x conditional tables."""
        q_x = np.asarray(q_x, dtype=np.float64)
        p_x = np.asarray(p_x, dtype=np.float64)
        return cls(q=q_x[:, None] * np.asarray(q_y_given_x, dtype=np.float64),
                   p=p_x[:, None] * np.asarray(p_y_given_x, dtype=np.float64))

    def marginal_x(self, which: str) -> np.ndarray:
        return (self.q if which == "q" else self.p).sum(axis=1)

    def _log_ratio_tables(self):
        """log q(x)/p(x) and log q(y|x)/p(y|x) on q's support (else 0)."""
        qx, px = self.marginal_x("q"), self.marginal_x("p")
        mask = self.q > 0.0
        lr_marg = np.zeros(2)
        on = qx > 0.0
        lr_marg[on] = np.log(qx[on]) - np.log(px[on])
        q_cond = np.divide(self.q, qx[:, None], out=np.zeros((2, 2)),
                           where=qx[:, None] > 0.0)
        p_cond = np.divide(self.p, px[:, None], out=np.zeros((2, 2)),
                           where=px[:, None] > 0.0)
        lr_cond = np.zeros((2, 2))
        lr_cond[mask] = np.log(q_cond[mask]) - np.log(p_cond[mask])
        return lr_marg, lr_cond, mask


def _var_under_q(pair: FinitePair, values: np.ndarray) -> float:
    w = pair.q.reshape(-1)
    v = values.reshape(-1)
    mean = float(np.sum(w * v))
    return float(np.sum(w * (v - mean) ** 2))


def lv_functional(pair: FinitePair, level: str) -> float:
    """Exact Var_q of the log-ratio at the ``marginal`` or ``joint`` level."""
    lr_marg, lr_cond, _ = pair._log_ratio_tables()
    if level == "marginal":
        values = np.broadcast_to(lr_marg[:, None], (2, 2)).copy()
    elif level == "joint":
        values = lr_marg[:, None] + lr_cond
    else:
        raise ValueError(f"unknown level {level!r}")
    return _var_under_q(pair, values)


def kl_divergence(pair: FinitePair, level: str) -> float:
    """Exact KL(q || p) at the ``marginal`` or ``joint`` level."""
    if level == "marginal":
        q, p = pair.marginal_x("q"), pair.marginal_x("p")
    elif level == "joint":
        q, p = pair.q.reshape(-1), pair.p.reshape(-1)
    else:
        raise ValueError(f"unknown level {level!r}")
    on = q > 0.0
    return float(np.sum(q[on] * (np.log(q[on]) - np.log(p[on]))))


def dpi_gap(pair: FinitePair) -> dict[str, float]:
    """Joint-minus-marginal variance gap with its exact decomposition.

    Returns the gap together with the conditional-variance and covariance
    terms satisfying  Var_joint = Var_marg + Var_cond + 2 Cov, so
    gap = Var_cond + 2 Cov.  A negative gap certifies that marginalizing
    increased the variance functional.
    """
    lr_marg, lr_cond, _ = pair._log_ratio_tables()
    marg_tab = np.broadcast_to(lr_marg[:, None], (2, 2)).copy()
    var_joint = _var_under_q(pair, marg_tab + lr_cond)
    var_marg = _var_under_q(pair, marg_tab)
    var_cond = _var_under_q(pair, lr_cond)
    w = pair.q.reshape(-1)
    a = marg_tab.reshape(-1) - float(np.sum(w * marg_tab.reshape(-1)))
    b = lr_cond.reshape(-1) - float(np.sum(w * lr_cond.reshape(-1)))
    cov = float(np.sum(w * a * b))
    return {
        "var_joint": var_joint,
        "var_marginal": var_marg,
        "var_conditional": var_cond,
        "covariance": cov,
        "gap": var_joint - var_marg,
    }


def counterexample_pair() -> FinitePair:
    """The reference 2x2 tables exhibiting a strictly negative gap."""
    q_x = np.array([0.9, 0.1])
    p_x = np.array([0.1, 0.9])
    q_y_given_x = np.array([[1.0, 0.0],
                            [1.0, 0.0]])
    p_y_given_x = np.array([[0.5, 0.5],
                            [0.1, 0.9]])
    return FinitePair.from_components(q_x, p_x, q_y_given_x, p_y_given_x)


def counterexample_report() -> dict[str, float]:
    """Gap decomposition and KL contrast for the reference tables."""
    pair = counterexample_pair()
    report = dpi_gap(pair)
    report["kl_joint"] = kl_divergence(pair, "joint")
    report["kl_marginal"] = kl_divergence(pair, "marginal")
    report["kl_gap"] = report["kl_joint"] - report["kl_marginal"]
    return report


def violation_search(seed: int, trials: int,
                     threshold: float = -1e-6) -> list[tuple[float, FinitePair]]:
    """Randomly sample 2x2 pairs and keep those with gap below threshold.

    Tables are drawn from a flat Dirichlet over the four cells; pairs
    violating absolute continuity are skipped.  Results are sorted by
    gap, most negative first.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    found = []
    for _ in range(trials):
        q = rng.dirichlet(np.ones(4)).reshape(2, 2)
        p = rng.dirichlet(np.ones(4)).reshape(2, 2)
        try:
            pair = FinitePair(q, p)
        except ValueError:
            continue
        gap = dpi_gap(pair)["gap"]
        if gap < threshold:
            found.append((gap, pair))
    found.sort(key=lambda item: item[0])
    return found
