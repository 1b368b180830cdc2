"""Loss-gradient estimators over trajectory batches.

All score-function estimators share one code path for the
reverse-process term, so the identity between the reverse-only blocks of
the log-variance and the log-derivative KL estimators holds bit-exactly
per batch, not just in expectation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bridge import Bridge, TrajectoryBatch


class EstimationError(RuntimeError):
    """Raised when a batch carries no usable paths."""


@dataclass
class GradReport:
    """Named gradient blocks plus batch diagnostics."""

    blocks: dict[str, dict[str, np.ndarray]]  # alpha / phi / nu -> name -> grad
    baseline: float
    log_ratio_mean: float
    log_ratio_var: float
    n_invalid: int
    ess: float | None = None
    extra: dict = field(default_factory=dict)

    def flat(self) -> dict[str, np.ndarray]:
        out = {}
        for block in self.blocks.values():
            out.update(block)
        return out

    def to_jsonable(self) -> dict:
        return {
            "blocks": {b: {n: g.tolist() for n, g in grads.items()}
                       for b, grads in self.blocks.items()},
            "baseline": self.baseline,
            "log_ratio_mean": self.log_ratio_mean,
            "log_ratio_var": self.log_ratio_var,
            "n_invalid": self.n_invalid,
            "ess": self.ess,
        }


def _prepare(batch: TrajectoryBatch):
    valid = batch.valid
    n = int(valid.sum())
    if n == 0:
        raise EstimationError("no valid trajectories in batch")
    lr = np.where(valid, batch.log_ratio(), 0.0)
    b = lr[valid].mean()
    var = lr[valid].var()
    centered = np.where(valid, lr - b, 0.0)
    return lr, centered, b, var, n


def _make_report(bridge: Bridge, grads: dict[str, np.ndarray], b, mean, var,
                 n_invalid, ess=None) -> GradReport:
    blocks = {"alpha": {}, "phi": {}, "nu": {}}
    for name in bridge.store.trainable_names():
        blocks[bridge.store.blocks[name]][name] = grads[name]
    return GradReport(blocks=blocks, baseline=float(b),
                      log_ratio_mean=float(mean), log_ratio_var=float(var),
                      n_invalid=int(n_invalid), ess=ess)


def grad_rkl_ld(batch: TrajectoryBatch, bridge: Bridge) -> GradReport:
    """Reverse-KL gradient via the log-derivative trick with a mean baseline.

    alpha and the q-side of nu carry the centered-log-ratio score weights;
    phi and the p-side of nu are the plain mean of -grad log p_joint.
    """
    if batch.origin != "reverse":
        raise ValueError("rKL-LD is an on-policy estimator; batch must come "
                         "from the reverse process")
    lr, centered, b, var, n = _prepare(batch)
    wq = centered / n
    wp = np.where(batch.valid, -1.0 / n, 0.0)
    grads = bridge.weighted_grads(batch, wq, wp)
    return _make_report(bridge, grads, b, b, var, batch.batch_size - n)


def grad_lv(batch: TrajectoryBatch, bridge: Bridge,
            proposal_tag: str = "on_policy") -> GradReport:
    """Log-variance gradient; every block carries the centered-log-ratio weight."""
    if proposal_tag == "on_policy":
        if batch.origin != "reverse":
            raise ValueError("on-policy LV requires a reverse-process batch")
    elif proposal_tag == "forward":
        if batch.origin != "forward":
            raise ValueError("forward-proposal LV requires a batch from "
                             "simulate_forward (exact-sampler targets only)")
    else:
        raise ValueError(f"unknown proposal tag {proposal_tag!r}")
    lr, centered, b, var, n = _prepare(batch)
    wq = centered / n
    wp = -centered / n
    grads = bridge.weighted_grads(batch, wq, wp)
    return _make_report(bridge, grads, b, b, var, batch.batch_size - n)


def lv_loss_value(batch: TrajectoryBatch) -> float:
    """Half the (1/n-normalized) variance of the path log-ratio."""
    _, _, _, var, _ = _prepare(batch)
    return 0.5 * float(var)


def grad_rkl_r(bridge: Bridge, batch_size: int, seed: int) -> GradReport:
    """Reparameterized reverse-KL gradient (pathwise, through the recursion)."""
    grads, lr = bridge.pathwise_grad_mean_log_ratio(batch_size, seed)
    b = float(lr.mean())
    return _make_report(bridge, grads, b, b, float(lr.var()), 0)


def grad_fkl_nis(batch: TrajectoryBatch, bridge: Bridge) -> GradReport:
    """Forward-KL gradient in the phi direction via self-normalized weights."""
    if batch.origin != "reverse":
        raise ValueError("NIS-weighted fKL needs an on-policy reverse batch")
    lr, centered, b, var, n = _prepare(batch)
    # importance ratios p/q = exp(-log_ratio), normalized over valid paths
    shifted = np.where(batch.valid, -lr, -np.inf)
    shifted = shifted - shifted.max()
    raw = np.exp(shifted)
    total = raw.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise EstimationError("degenerate importance weights")
    w_norm = raw / total  # sums to 1 over valid paths
    ess = float(1.0 / np.sum(w_norm ** 2))
    wp = -w_norm * centered
    grads = bridge.weighted_grads(batch, None, wp)
    return _make_report(bridge, grads, b, b, var, batch.batch_size - n, ess=ess)
