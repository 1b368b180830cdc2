"""Drift networks, learnable prior, interpolation schedule and diffusion coefficients.

All parameters live in a flat :class:`ParamStore` keyed by name, so the same
forward code runs either on raw numpy values (simulation) or on recorded
autodiff Nodes (gradient computation).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

HIDDEN = 64
EMBED_DIM = 64
SCORE_CLIP_INNER = 1e2
SCORE_CLIP_OUTER = 1e4


class ParamStore:
    """Named float64 parameter arrays with a gradient-block tag per name.

    Block tags: ``alpha`` (reverse-only), ``phi`` (forward-only), ``nu``
    (shared) or ``fixed`` (not trainable).
    """

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.blocks: dict[str, str] = {}

    def register(self, name: str, value, block: str) -> None:
        if name in self.values:
            raise ValueError(f"duplicate parameter {name!r}")
        if block not in ("alpha", "phi", "nu", "fixed"):
            raise ValueError(f"unknown block {block!r}")
        self.values[name] = np.asarray(value, dtype=np.float64)
        self.blocks[name] = block

    def trainable_names(self) -> list[str]:
        return [n for n, b in self.blocks.items() if b != "fixed"]

    def block_names(self, block: str) -> list[str]:
        return [n for n, b in self.blocks.items() if b == block]

    def nodes(self, tape: ad.Tape) -> dict[str, object]:
        """Leaf Nodes for trainable params, raw arrays for fixed ones."""
        out = {}
        for name, value in self.values.items():
            if self.blocks[name] == "fixed":
                out[name] = value
            else:
                out[name] = tape.leaf(value, requires_grad=True)
        return out

    def copy_values(self) -> dict[str, np.ndarray]:
        return {n: v.copy() for n, v in self.values.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, value in values.items():
            if name not in self.values:
                raise KeyError(f"unknown parameter {name!r}")
            arr = np.asarray(value, dtype=np.float64)
            if arr.shape != self.values[name].shape:
                raise ValueError(f"shape mismatch for {name!r}")
            self.values[name] = arr


def time_embedding(t_frac: float, dim: int = EMBED_DIM) -> np.ndarray:
    """Sinusoidal features of t/T; constant w.r.t. all parameters."""
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(1000.0), half))
    angles = freqs * float(t_frac)
    return np.concatenate([np.sin(angles), np.cos(angles)])


def _silu(x):
    return ad.multiply(x, ad.sigmoid(x))


class MLP:
    """Two-hidden-layer perceptron with zero-initialized final layer."""

    def __init__(self, store: ParamStore, prefix: str, in_dim: int, out_dim: int,
                 block: str, rng: np.random.Generator, hidden: int = HIDDEN):
        self.prefix = prefix
        dims = [in_dim, hidden, hidden, out_dim]
        for i, (m, n) in enumerate(zip(dims[:-1], dims[1:])):
            if i == len(dims) - 2:
                w = np.zeros((m, n))
            else:
                w = rng.standard_normal((m, n)) / np.sqrt(m)
            store.register(f"{prefix}.w{i}", w, block)
            store.register(f"{prefix}.b{i}", np.zeros(n), block)
        self.n_layers = len(dims) - 1

    def apply(self, params, x):
        h = x
        for i in range(self.n_layers):
            h = ad.add(ad.matmul(h, params[f"{self.prefix}.w{i}"]),
                       params[f"{self.prefix}.b{i}"])
            if i < self.n_layers - 1:
                h = _silu(h)
        return h


class ScoreNet:
    """Control network: state trunk plus a time-only scale head.

    Output is clip(trunk(x, t) + head(t) * clip(langevin, +-1e2), +-1e4),
    which is identically zero at initialization because both final layers
    start at zero.
    """

    def __init__(self, store: ParamStore, prefix: str, dim: int, block: str,
                 seed: int, T: int, embed_dim: int = EMBED_DIM):
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.T = T
        self.embed_dim = embed_dim
        self.trunk = MLP(store, f"{prefix}.trunk", dim + embed_dim, dim, block, rng)
        self.head = MLP(store, f"{prefix}.head", embed_dim, dim, block, rng)

    def apply(self, params, x, t: int, langevin):
        """Control vector at step index t for a batch of states x (batch, dim)."""
        emb = time_embedding(t / self.T, self.embed_dim)
        batch = ad.value_of(x).shape[0]
        emb_b = np.broadcast_to(emb, (batch, self.embed_dim))
        trunk_in = ad.concatenate([x, emb_b], axis=1)
        trunk_out = self.trunk.apply(params, trunk_in)
        head_out = self.head.apply(params, emb[None, :])  # (1, dim)
        guided = ad.multiply(head_out, ad.clip(langevin, -SCORE_CLIP_INNER,
                                               SCORE_CLIP_INNER))
        return ad.clip(ad.add(trunk_out, guided), -SCORE_CLIP_OUTER, SCORE_CLIP_OUTER)

    def apply_grid(self, params, x_grid, emb_grid, langevin):
        """Control vectors for all time slices at once.

        ``x_grid`` has shape (n_times, batch, dim) with a matching
        (n_times, embed_dim) embedding row per slice; ``langevin`` has
        the same shape as ``x_grid``.  Identical arithmetic to
        :meth:`apply`, vectorized over the time axis.
        """
        n_times, batch, _ = x_grid.shape
        emb_b = np.broadcast_to(emb_grid[:, None, :],
                                (n_times, batch, self.embed_dim))
        trunk_in = np.concatenate([x_grid, emb_b], axis=-1)
        trunk_out = self.trunk.apply(params, trunk_in)
        head_out = ad.reshape(self.head.apply(params, emb_grid),
                              (n_times, 1, self.dim))
        guided = ad.multiply(head_out, ad.clip(langevin, -SCORE_CLIP_INNER,
                                               SCORE_CLIP_INNER))
        return ad.clip(ad.add(trunk_out, guided), -SCORE_CLIP_OUTER, SCORE_CLIP_OUTER)


class LearnablePrior:
    """Diagonal Gaussian with learnable mean and log standard deviations."""

    def __init__(self, store: ParamStore, prefix: str, dim: int, block: str,
                 sigma_init: float = 1.0):
        self.prefix = prefix
        self.dim = dim
        store.register(f"{prefix}.mean", np.zeros(dim), block)
        store.register(f"{prefix}.log_std", np.full(dim, np.log(sigma_init)), block)

    def sample(self, values: dict, n: int, rng: np.random.Generator) -> np.ndarray:
        mean = values[f"{self.prefix}.mean"]
        std = np.exp(values[f"{self.prefix}.log_std"])
        return mean + std * rng.standard_normal((n, self.dim))

    def log_density(self, params, x):
        mean = params[f"{self.prefix}.mean"]
        log_std = params[f"{self.prefix}.log_std"]
        var = ad.exp(ad.multiply(2.0, log_std))
        quad = ad.reduce_sum(ad.divide(ad.square(ad.subtract(x, mean)), var), axis=-1)
        norm = ad.reduce_sum(log_std) + 0.5 * self.dim * np.log(2.0 * np.pi)
        return ad.subtract(ad.multiply(-0.5, quad), norm)

    def score(self, params, x):
        mean = params[f"{self.prefix}.mean"]
        var = ad.exp(ad.multiply(2.0, params[f"{self.prefix}.log_std"]))
        return ad.divide(ad.subtract(mean, x), var)

    def entropy(self, values: dict) -> float:
        log_std = values[f"{self.prefix}.log_std"]
        return float(np.sum(log_std) + 0.5 * self.dim * (1.0 + np.log(2.0 * np.pi)))


class BetaSchedule:
    """Softplus-normalized step weights; sums to one for any raw parameters.

    eta(t) = sum_{s >= t} beta(s) decreases monotonically from eta(0) = 1
    to eta(T) = 0, so step T (the prior end of the reverse chain) sits at
    the prior and step 0 at the target.
    """

    def __init__(self, store: ParamStore, prefix: str, T: int, block: str):
        self.prefix = prefix
        self.T = T
        store.register(f"{prefix}.raw", np.zeros(T), block)

    def betas(self, params):
        sp = ad.softplus(params[f"{self.prefix}.raw"])
        return ad.divide(sp, ad.reduce_sum(sp))

    def eta(self, params, t: int):
        """Interpolation weight on the target at step index t (0..T)."""
        if t >= self.T:
            return 0.0
        if t <= 0:
            return 1.0
        return ad.reduce_sum(self.betas(params)[t:])

    def eta_grid(self, params, times) -> object:
        """eta at each requested step index, as one length-len(times) vector."""
        # tail-sum matrix: row k accumulates beta_s for s >= times[k]
        mask = (np.arange(self.T)[None, :]
                >= np.asarray(times)[:, None]).astype(np.float64)
        return ad.matmul(mask, self.betas(params))


class DiffCoeff:
    """Time-constant diffusion coefficients sigma = exp(gamma) > 0."""

    def __init__(self, store: ParamStore, prefix: str, dim: int, block: str,
                 sigma_init: float = 1.0):
        self.prefix = prefix
        store.register(f"{prefix}.gamma", np.full(dim, np.log(sigma_init)), block)

    def sigma(self, params):
        return ad.exp(params[f"{self.prefix}.gamma"])


def anneal_logdensity(target, prior: LearnablePrior, params, eta, x):
    """Geometric interpolation between target (eta=1) and prior (eta=0).

    Returns (log pi_t(x), score).  Target terms are evaluated outside the
    tape (x enters as data); prior terms go through ops so that prior and
    schedule parameters receive gradients.
    """
    xv = ad.value_of(x)
    eta_v = float(ad.value_of(eta))
    if eta_v == 1.0:
        return target.log_density(xv), target.score(xv)
    prior_ld = prior.log_density(params, x)
    prior_sc = prior.score(params, x)
    if eta_v == 0.0:
        return prior_ld, prior_sc
    logp = ad.add(ad.multiply(eta, target.log_density(xv)),
                  ad.multiply(ad.subtract(1.0, eta), prior_ld))
    score = ad.add(ad.multiply(eta, target.score(xv)),
                   ad.multiply(ad.subtract(1.0, eta), prior_sc))
    return logp, score
