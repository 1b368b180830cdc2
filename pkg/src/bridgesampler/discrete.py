"""Two-state surrogate chain for exact verification of the estimators.

Replaces the Gaussian transition kernels with Bernoulli kernels over
states {-1, +1} so that every trajectory can be enumerated and estimator
means compared against the exactly differentiated objectives.  The chain
reuses :class:`TrajectoryBatch` and mirrors the weighted-gradient
interface of :class:`~bridgesampler.bridge.Bridge`, so the loss functions
in :mod:`bridgesampler.losses` run on it unchanged.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .bridge import TrajectoryBatch
from .nets import ParamStore


def _log_sigmoid(z):
    return ad.negative(ad.softplus(ad.negative(z)))


class TwoStateChain:
    """Bernoulli bridge: reverse gain (alpha), forward gain (phi), shared bias (nu).

    Reverse kernel:  P(S_{j+1} = +1 | S_j = s)  = sigmoid(rev_gain * s + bias)
    Forward kernel:  P(S_j = +1 | S_{j+1} = s)  = sigmoid(fwd_gain * s + bias)
    Prior over S_0 is uniform; the target over S_T has fixed probabilities.
    """

    def __init__(self, T: int = 3, target_probs=(0.3, 0.7),
                 rev_gain: float = 0.4, fwd_gain: float = -0.2,
                 bias: float = 0.1):
        self.T = T
        probs = np.asarray(target_probs, dtype=np.float64)
        self.log_target_probs = np.log(probs / probs.sum())  # (-1, +1) order
        self.store = ParamStore()
        self.store.register("rev.gain", np.asarray(rev_gain), "alpha")
        self.store.register("fwd.gain", np.asarray(fwd_gain), "phi")
        self.store.register("shared.bias", np.asarray(bias), "nu")

    # -- log-densities ----------------------------------------------------

    def _step_logq(self, params, s_from, s_to):
        z = ad.add(ad.multiply(params["rev.gain"], s_from), params["shared.bias"])
        return _log_sigmoid(ad.multiply(s_to, z))

    def _step_logp(self, params, s_from, s_to):
        # forward kernel conditions on the later-time state s_from = S_{j+1}
        z = ad.add(ad.multiply(params["fwd.gain"], s_from), params["shared.bias"])
        return _log_sigmoid(ad.multiply(s_to, z))

    def _target_logprob(self, s):
        return np.where(s > 0, self.log_target_probs[1], self.log_target_probs[0])

    def traj_logs(self, params, states):
        """(log q_joint, log p_joint) for states of shape (batch, T+1, 1)."""
        s = states[:, :, 0]
        logq = np.full(s.shape[0], np.log(0.5))
        logp = self._target_logprob(s[:, -1])
        for j in range(self.T):
            logq = ad.add(logq, self._step_logq(params, s[:, j], s[:, j + 1]))
            logp = ad.add(logp, self._step_logp(params, s[:, j + 1], s[:, j]))
        return logq, logp

    # -- batches ----------------------------------------------------------

    def _assemble(self, states, seed=None) -> TrajectoryBatch:
        logq, logp = self.traj_logs(self.store.values, states)
        n, T = states.shape[0], self.T
        # fold the whole joint into single pseudo-steps plus flat endpoints
        logq_steps = np.zeros((n, T))
        logp_steps = np.zeros((n, T))
        logq_steps[:, 0] = logq - np.log(0.5)
        logp_steps[:, 0] = logp - self._target_logprob(states[:, -1, 0])
        return TrajectoryBatch(
            states=states, noises=np.zeros((n, T, 1)),
            logq_steps=logq_steps, logp_steps=logp_steps,
            log_prior=np.full(n, np.log(0.5)),
            log_target=self._target_logprob(states[:, -1, 0]),
            valid=np.ones(n, dtype=bool), origin="reverse", seed=seed)

    def simulate(self, batch: int, seed: int) -> TrajectoryBatch:
        rng = np.random.Generator(np.random.Philox(seed))
        values = self.store.values
        states = np.empty((batch, self.T + 1, 1))
        states[:, 0, 0] = rng.integers(0, 2, size=batch) * 2.0 - 1.0
        for j in range(self.T):
            z = values["rev.gain"] * states[:, j, 0] + values["shared.bias"]
            p_plus = 1.0 / (1.0 + np.exp(-z))
            states[:, j + 1, 0] = np.where(rng.uniform(size=batch) < p_plus,
                                           1.0, -1.0)
        return self._assemble(states, seed=seed)

    def enumerate_batch(self):
        """All 2^(T+1) trajectories with their exact q- and p-probabilities."""
        combos = list(itertools.product((-1.0, 1.0), repeat=self.T + 1))
        states = np.asarray(combos)[:, :, None]
        batch = self._assemble(states)
        logq, logp = self.traj_logs(self.store.values, states)
        return batch, np.exp(logq), np.exp(logp)

    # -- gradient interface (mirrors Bridge) -------------------------------

    def weighted_grads(self, batch: TrajectoryBatch, wq, wp):
        with Tape() as tape:
            params = self.store.nodes(tape)
            logq, logp = self.traj_logs(params, batch.states)
            total = None
            if wq is not None:
                total = ad.reduce_sum(ad.multiply(np.asarray(wq), logq))
            if wp is not None:
                term = ad.reduce_sum(ad.multiply(np.asarray(wp), logp))
                total = term if total is None else ad.add(total, term)
            tape.backward(total)
            return {n: params[n].grad for n in self.store.trainable_names()}

    # -- exact objectives ---------------------------------------------------

    def exact_gradients(self) -> dict[str, dict[str, np.ndarray]]:
        """Analytic gradients of the three objectives by exact enumeration.

        Each objective is written out over all trajectories and
        differentiated directly; nothing is shared with the estimator path
        beyond the kernel definitions.
        """
        batch, q_prob, p_prob = self.enumerate_batch()
        out = {}
        for name in ("rkl", "lv", "fkl"):
            with Tape() as tape:
                params = self.store.nodes(tape)
                logq, logp = self.traj_logs(params, batch.states)
                if name == "rkl":
                    root = ad.reduce_sum(
                        ad.multiply(ad.exp(logq), ad.subtract(logq, logp)))
                elif name == "lv":
                    diff = ad.subtract(logq, logp)
                    b = ad.reduce_sum(ad.multiply(q_prob, diff))
                    root = ad.multiply(0.5, ad.reduce_sum(
                        ad.multiply(q_prob, ad.square(ad.subtract(diff, b)))))
                else:
                    root = ad.reduce_sum(
                        ad.multiply(ad.exp(logp), ad.subtract(logp, logq)))
                tape.backward(root)
                out[name] = {n: params[n].grad
                             for n in self.store.trainable_names()}
        return out

    def estimator_means(self) -> dict[str, dict[str, np.ndarray]]:
        """Exact expectations of the three estimators over all trajectories."""
        batch, q_prob, p_prob = self.enumerate_batch()
        lr = batch.log_ratio()
        b = float(np.sum(q_prob * lr))
        centered = lr - b
        out = {
            "rkl": self.weighted_grads(batch, q_prob * centered, -q_prob),
            "lv": self.weighted_grads(batch, q_prob * centered,
                                      -q_prob * centered),
            "fkl": self.weighted_grads(batch, None, -p_prob * centered),
        }
        return out
