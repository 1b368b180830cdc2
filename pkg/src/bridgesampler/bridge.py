"""Discretized forward/reverse bridge dynamics.

A :class:`Bridge` couples a target density with a parameterized pair of
SDE discretizations on a uniform grid (dt = 1/T over [0, 1]):

* ``CMCD``        - one shared control network; forward and reverse drifts
                    are the annealed Langevin reference plus/minus the
                    control.  All learnable parameters sit in the shared
                    (nu) block.
* ``DBS``         - separate reverse (alpha) and forward (phi) control
                    networks around the same Langevin reference; prior and
                    diffusion coefficients, when learned, are shared (nu).
* ``FIXED_FORWARD`` - reverse control only (alpha); the forward process and
                    every shared quantity is frozen.  Used for the exact
                    estimator-equivalence checks.

Simulation never backpropagates through the sampling recursion; gradient
passes recompute per-step transition log-densities from stored states with
parameters wrapped in autodiff Nodes.  The pathwise estimator is the one
exception and re-runs the recursion on the tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .nets import (BetaSchedule, DiffCoeff, LearnablePrior, ParamStore,
                   ScoreNet, anneal_logdensity, time_embedding)
from .targets import TargetDensity

KINDS = ("CMCD", "DBS", "FIXED_FORWARD")


@dataclass
class TrajectoryBatch:
    """A batch of simulated paths with everything needed by the estimators.

    ``states[:, 0]`` is the prior end of the reverse chain (time index T)
    and ``states[:, -1]`` the target end (time index 0).
    """

    states: np.ndarray       # (batch, T+1, dim)
    noises: np.ndarray       # (batch, T, dim)
    logq_steps: np.ndarray   # (batch, T)
    logp_steps: np.ndarray   # (batch, T)
    log_prior: np.ndarray    # (batch,)  log pi_T at the prior end
    log_target: np.ndarray   # (batch,)  unnormalized log pi_0 at the target end
    valid: np.ndarray        # (batch,) bool
    origin: str = "reverse"  # which process generated the paths
    seed: int | None = None

    @property
    def batch_size(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.states.shape[1] - 1

    def log_ratio(self) -> np.ndarray:
        """Per-path log q(X_{0:T}) - log p(X_{0:T}), with pi_0 unnormalized."""
        return (self.log_prior + self.logq_steps.sum(axis=1)
                - self.logp_steps.sum(axis=1) - self.log_target)

    def final_states(self) -> np.ndarray:
        return self.states[:, -1]


def _gauss_logpdf(x, mean, var):
    """Diagonal Gaussian log-density, summed over the last axis."""
    quad = ad.reduce_sum(ad.divide(ad.square(ad.subtract(x, mean)),
                                   ad.multiply(2.0, var)), axis=-1)
    dim = ad.value_of(x).shape[-1]
    norm = ad.multiply(0.5, ad.reduce_sum(ad.log(ad.multiply(2.0 * np.pi, var))))
    if np.ndim(ad.value_of(norm)) == 0 and np.ndim(ad.value_of(var)) == 0:
        norm = ad.multiply(float(dim), norm)
    return ad.subtract(ad.negative(quad), norm)


class Bridge:
    def __init__(self, target: TargetDensity, kind: str, T: int,
                 sigma_init: float = 1.0, prior_sigma_init: float = 1.0,
                 learn_sigma: bool = False, learn_prior: bool = True,
                 seed: int = 0):
        if kind not in KINDS:
            raise ValueError(f"unknown parameterization {kind!r}")
        if sigma_init <= 0 or prior_sigma_init <= 0:
            raise ValueError("sigma_init and prior_sigma_init must be positive")
        if T < 1:
            raise ValueError("T must be at least 1")
        self.target = target
        self.kind = kind
        self.T = T
        self.dt = 1.0 / T
        self.dim = target.dim
        self.store = ParamStore()

        fixed_everything = kind == "FIXED_FORWARD"
        prior_block = "fixed" if (fixed_everything or not learn_prior) else "nu"
        sigma_block = "fixed" if (fixed_everything or not learn_sigma) else "nu"
        sched_block = "nu" if kind == "CMCD" else "fixed"

        self.prior = LearnablePrior(self.store, "prior", self.dim, prior_block,
                                    sigma_init=prior_sigma_init)
        self.schedule = BetaSchedule(self.store, "schedule", T, sched_block)
        self.diff = DiffCoeff(self.store, "sigma", self.dim, sigma_block,
                              sigma_init=sigma_init)
        if kind == "CMCD":
            self.net_u = ScoreNet(self.store, "control", self.dim, "nu", seed, T)
        else:
            self.net_r = ScoreNet(self.store, "reverse", self.dim, "alpha", seed, T)
            if kind == "DBS":
                self.net_f = ScoreNet(self.store, "forward", self.dim, "phi",
                                      seed + 1, T)
        # time axis for stacked evaluation: point j of a trajectory sits at
        # step index T - j
        self._point_times = T - np.arange(T + 1)
        self._point_embs = np.stack(
            [time_embedding(t / T) for t in self._point_times])

    # -- drifts ---------------------------------------------------------

    def _langevin_score(self, params, x, t: int):
        eta = self.schedule.eta(params, t)
        _, score = anneal_logdensity(self.target, self.prior, params, eta, x)
        return score

    def reverse_drift(self, params, x, t: int, langevin=None):
        """Drift of the reverse transition from time index t (state x = X_t)."""
        if langevin is None:
            langevin = self._langevin_score(params, x, t)
        sigma = self.diff.sigma(params)
        base = ad.multiply(ad.multiply(0.5, ad.square(sigma)), langevin)
        net = self.net_u if self.kind == "CMCD" else self.net_r
        control = ad.multiply(sigma, net.apply(params, x, t, langevin))
        return ad.add(base, control)

    def forward_drift(self, params, x, t: int, langevin=None):
        """Drift of the forward transition leaving time index t (state x = X_t)."""
        if langevin is None:
            langevin = self._langevin_score(params, x, t)
        sigma = self.diff.sigma(params)
        base = ad.multiply(ad.multiply(0.5, ad.square(sigma)), langevin)
        if self.kind == "FIXED_FORWARD":
            return base
        net = self.net_u if self.kind == "CMCD" else self.net_f
        control = ad.multiply(sigma, net.apply(params, x, t, langevin))
        return ad.subtract(base, control)

    # -- transition log-densities --------------------------------------

    def transition_var(self, params):
        return ad.multiply(ad.square(self.diff.sigma(params)), self.dt)

    def log_transition_reverse(self, params, x_t, x_prev, t: int):
        """log q(X_{t-1} = x_prev | X_t = x_t) at reverse step t."""
        mean = ad.add(x_t, ad.multiply(self.reverse_drift(params, x_t, t), self.dt))
        return _gauss_logpdf(x_prev, mean, self.transition_var(params))

    def log_transition_forward(self, params, x_prev, x_t, t: int):
        """log p(X_t = x_t | X_{t-1} = x_prev) at forward step t (drift at t-1)."""
        mean = ad.add(x_prev,
                      ad.multiply(self.forward_drift(params, x_prev, t - 1), self.dt))
        return _gauss_logpdf(x_t, mean, self.transition_var(params))

    # -- simulation -----------------------------------------------------

    def _noise(self, batch: int, seed: int):
        rng = np.random.Generator(np.random.Philox(seed))
        eps0 = rng.standard_normal((batch, self.dim))
        eps = rng.standard_normal((batch, self.T, self.dim))
        return eps0, eps, rng

    def simulate_reverse(self, batch: int, seed: int) -> TrajectoryBatch:
        """Euler-Maruyama integration of the reverse SDE from the prior."""
        values = self.store.values
        eps0, eps, _ = self._noise(batch, seed)
        sigma = np.exp(values["sigma.gamma"])
        step_std = sigma * np.sqrt(self.dt)

        states = np.empty((batch, self.T + 1, self.dim))
        mean = values["prior.mean"]
        prior_std = np.exp(values["prior.log_std"])
        states[:, 0] = mean + prior_std * eps0
        for j in range(self.T):
            t = self.T - j
            x = states[:, j]
            with np.errstate(over="ignore", invalid="ignore"):
                drift = self.reverse_drift(values, x, t)
                states[:, j + 1] = x + drift * self.dt + step_std * eps[:, j]
        return self._assemble(states, eps, origin="reverse", seed=seed)

    def simulate_forward(self, batch: int, seed: int) -> TrajectoryBatch:
        """Integrate the forward SDE from exact target samples (off-policy p*)."""
        if self.target.sampler is None:
            raise ValueError(
                f"target {self.target.name} has no exact sampler; "
                "forward-proposal batches are unavailable")
        values = self.store.values
        eps0, eps, rng = self._noise(batch, seed)
        sigma = np.exp(values["sigma.gamma"])
        step_std = sigma * np.sqrt(self.dt)

        states = np.empty((batch, self.T + 1, self.dim))
        states[:, self.T] = self.target.sampler(batch, rng)
        for j in range(self.T, 0, -1):
            x = states[:, j]  # X_{T-j}; the step leaves time index T-j
            with np.errstate(over="ignore", invalid="ignore"):
                drift = self.forward_drift(values, x, self.T - j)
                states[:, j - 1] = x + drift * self.dt + step_std * eps[:, j - 1]
        return self._assemble(states, eps, origin="forward", seed=seed)

    def _assemble(self, states, eps, origin: str, seed: int) -> TrajectoryBatch:
        values = self.store.values
        with np.errstate(over="ignore", invalid="ignore"):
            logq, logp = self.step_logdensities(values, states)
            log_prior = ad.value_of(self.prior.log_density(values, states[:, 0]))
            log_target = self.target.log_density(states[:, -1])
        valid = (np.isfinite(states).all(axis=(1, 2))
                 & np.isfinite(logq).all(axis=1) & np.isfinite(logp).all(axis=1)
                 & np.isfinite(log_prior) & np.isfinite(log_target))
        return TrajectoryBatch(states=states, noises=eps, logq_steps=logq,
                               logp_steps=logp, log_prior=log_prior,
                               log_target=log_target, valid=valid,
                               origin=origin, seed=seed)

    def _stacked_logs(self, params, states):
        """All per-step transition log-densities in one vectorized pass.

        Every trajectory point (x_j, t = T - j) needs exactly one drift
        evaluation shared between the reverse step leaving it and the
        forward step arriving at it, so the whole batch of nets runs once
        on a (T+1, batch, dim) grid.  Returns (logq, logp) in (T, batch)
        layout (Nodes when params contain Nodes, arrays otherwise).
        """
        if states.shape[1] - 1 != self.T:
            raise ValueError("trajectory length does not match this bridge")
        x3 = np.ascontiguousarray(np.transpose(states, (1, 0, 2)))
        etas = self.schedule.eta_grid(params, self._point_times)
        eta3 = ad.reshape(etas, (self.T + 1, 1, 1))
        t_score = self.target.score(
            x3.reshape(-1, self.dim)).reshape(x3.shape)
        p_score = self.prior.score(params, x3)
        lang = ad.add(ad.multiply(eta3, t_score),
                      ad.multiply(ad.subtract(1.0, eta3), p_score))
        sigma = self.diff.sigma(params)
        base = ad.multiply(ad.multiply(0.5, ad.square(sigma)), lang)
        emb = self._point_embs
        if self.kind == "CMCD":
            ctrl = ad.multiply(sigma,
                               self.net_u.apply_grid(params, x3, emb, lang))
            r3 = ad.add(base, ctrl)
            f3 = ad.subtract(base, ctrl)
        elif self.kind == "DBS":
            r3 = ad.add(base, ad.multiply(
                sigma, self.net_r.apply_grid(params, x3, emb, lang)))
            f3 = ad.subtract(base, ad.multiply(
                sigma, self.net_f.apply_grid(params, x3, emb, lang)))
        else:
            r3 = ad.add(base, ad.multiply(
                sigma, self.net_r.apply_grid(params, x3, emb, lang)))
            f3 = base
        var = self.transition_var(params)
        # reverse step j uses the drift at point j, forward step j the
        # drift at point j + 1
        mean_q = ad.add(x3[:-1], ad.multiply(r3[:-1], self.dt))
        logq = _gauss_logpdf(x3[1:], mean_q, var)
        mean_p = ad.add(x3[1:], ad.multiply(f3[1:], self.dt))
        logp = _gauss_logpdf(x3[:-1], mean_p, var)
        return logq, logp

    def step_logdensities(self, params, states):
        """Per-step transition log-densities in (batch, T) layout.

        Used both when assembling a batch and when re-deriving the stored
        values, so the two agree bit-for-bit.
        """
        logq, logp = self._stacked_logs(params, states)
        return (np.ascontiguousarray(ad.value_of(logq).T),
                np.ascontiguousarray(ad.value_of(logp).T))

    def recompute_log_ratio(self, batch: TrajectoryBatch,
                            values: dict | None = None) -> np.ndarray:
        """Per-path log-ratio re-derived from stored states under `values`."""
        params = self.store.values if values is None else values
        logq, logp = self.step_logdensities(params, batch.states)
        log_prior = ad.value_of(self.prior.log_density(params, batch.states[:, 0]))
        log_target = self.target.log_density(batch.states[:, -1])
        return (log_prior + np.asarray(logq).sum(axis=1)
                - np.asarray(logp).sum(axis=1) - log_target)

    # -- entropy ---------------------------------------------------------

    def joint_entropy_closed_form(self, values: dict | None = None) -> float:
        """Exact entropy of the joint reverse-path distribution."""
        values = self.store.values if values is None else values
        var = np.exp(2.0 * values["sigma.gamma"]) * self.dt
        per_step = 0.5 * (self.dim + np.sum(np.log(2.0 * np.pi * var)))
        return self.prior.entropy(values) + self.T * per_step

    # -- gradients --------------------------------------------------------

    def weighted_grads(self, batch: TrajectoryBatch, wq: np.ndarray | None,
                       wp: np.ndarray | None) -> dict[str, np.ndarray]:
        """Gradients of sum_i wq_i log q_joint_i + sum_i wp_i log p_joint_i.

        Trajectory states are treated as constants; only parameters are
        differentiated.  Invalid paths must carry zero weight.
        """
        states = batch.states
        if not batch.valid.all():
            # zero-weight paths may hold non-finite states; 0 * nan would
            # still poison the sums, so give them finite placeholders
            states = np.where(batch.valid[:, None, None], states, 0.0)
        with Tape() as tape:
            params = self.store.nodes(tape)
            logq, logp = self._stacked_logs(params, states)
            total = None
            if wq is not None:
                w = np.asarray(wq, dtype=np.float64)
                acc = ad.reduce_sum(ad.multiply(w[None, :], logq))
                prior_term = ad.reduce_sum(
                    ad.multiply(w, self.prior.log_density(params, states[:, 0])))
                total = ad.add(acc, prior_term)
            if wp is not None:
                w = np.asarray(wp, dtype=np.float64)
                # the p side's pi_0 term has no parameters
                term = ad.reduce_sum(ad.multiply(w[None, :], logp))
                total = term if total is None else ad.add(total, term)
            if not isinstance(total, ad.Node):
                return {n: np.zeros_like(self.store.values[n])
                        for n in self.store.trainable_names()}
            tape.backward(total)
            return {n: params[n].grad for n in self.store.trainable_names()}

    def pathwise_grad_mean_log_ratio(self, batch_size: int,
                                     seed: int) -> tuple[dict, np.ndarray]:
        """Reparameterized gradient of the mean path log-ratio.

        Re-runs the Euler-Maruyama recursion on the tape; the target score
        enters via its Hessian-vector product, so targets without one are
        rejected.
        """
        if self.target.hvp is None:
            raise ValueError(
                f"target {self.target.name} provides no Hessian-vector product; "
                "the pathwise estimator is unavailable")
        eps0, eps, _ = self._noise(batch_size, seed)
        with Tape() as tape:
            params = self.store.nodes(tape)
            sigma = self.diff.sigma(params)
            step_std = ad.multiply(sigma, np.sqrt(self.dt))
            x = ad.add(params["prior.mean"],
                       ad.multiply(ad.exp(params["prior.log_std"]), eps0))
            log_ratio = self.prior.log_density(params, x)
            for j in range(self.T):
                t = self.T - j
                lang = self._pathwise_langevin(params, x, t)
                drift = self.reverse_drift(params, x, t, langevin=lang)
                mean = ad.add(x, ad.multiply(drift, self.dt))
                x_next = ad.add(mean, ad.multiply(step_std, eps[:, j]))
                var = self.transition_var(params)
                log_ratio = ad.add(log_ratio, _gauss_logpdf(x_next, mean, var))
                lang_next = self._pathwise_langevin(params, x_next, t - 1)
                fdrift = self.forward_drift(params, x_next, t - 1,
                                            langevin=lang_next)
                fmean = ad.add(x_next, ad.multiply(fdrift, self.dt))
                log_ratio = ad.subtract(log_ratio, _gauss_logpdf(x, fmean, var))
                x = x_next
            xv = ad.value_of(x)
            log_target = ad.custom_op(
                [x], self.target.log_density(xv),
                [lambda g: g[:, None] * self.target.score(xv)])
            log_ratio = ad.subtract(log_ratio, log_target)
            root = ad.reduce_mean(log_ratio)
            tape.backward(root)
            grads = {n: params[n].grad for n in self.store.trainable_names()}
        return grads, ad.value_of(log_ratio)

    def _pathwise_langevin(self, params, x, t: int):
        """Annealed score differentiable in x via the target's HVP."""
        eta = self.schedule.eta(params, t)
        xv = ad.value_of(x)
        score0 = ad.custom_op([x], self.target.score(xv),
                              [lambda g, xv=xv: self.target.hvp(xv, g)])
        prior_score = self.prior.score(params, x)
        return ad.add(ad.multiply(eta, score0),
                      ad.multiply(ad.subtract(1.0, eta), prior_score))


# ---------------------------------------------------------------------------
# analytic reference chains (test and metric baselines)
# ---------------------------------------------------------------------------

def make_reversible_chain_batch(batch: int, T: int, dim: int, ar_coeff: float,
                                seed: int) -> TrajectoryBatch:
    """Stationary AR(1) chain whose forward and reverse path laws coincide.

    Prior and target are both N(0, I); the per-step kernel in either
    direction is N(a x, (1 - a^2) I), so log q_joint == log p_joint path by
    path up to rounding.
    """
    if not 0.0 < ar_coeff < 1.0:
        raise ValueError("ar_coeff must lie in (0, 1)")
    a = ar_coeff
    rng = np.random.Generator(np.random.Philox(seed))
    noise_var = 1.0 - a * a
    states = np.empty((batch, T + 1, dim))
    eps = rng.standard_normal((batch, T, dim))
    states[:, 0] = rng.standard_normal((batch, dim))
    for j in range(T):
        states[:, j + 1] = a * states[:, j] + np.sqrt(noise_var) * eps[:, j]

    logq = np.empty((batch, T))
    logp = np.empty((batch, T))
    for j in range(T):
        logq[:, j] = _gauss_logpdf(states[:, j + 1], a * states[:, j], noise_var)
        logp[:, j] = _gauss_logpdf(states[:, j], a * states[:, j + 1], noise_var)
    std_norm = lambda x: -0.5 * np.sum(x ** 2, axis=-1) \
        - 0.5 * dim * np.log(2.0 * np.pi)
    return TrajectoryBatch(states=states, noises=eps, logq_steps=logq,
                           logp_steps=logp, log_prior=std_norm(states[:, 0]),
                           log_target=std_norm(states[:, -1]),
                           valid=np.ones(batch, dtype=bool),
                           origin="synthetic", seed=seed)
