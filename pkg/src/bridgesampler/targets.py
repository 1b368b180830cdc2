"""Benchmark unnormalized densities with scores, samplers and constants.

Every target exposes the unnormalized log-density ``log_density`` (equal to
-energy), its gradient ``score``, and optionally an exact sampler, the true
log normalizing constant, a mode list for coverage metrics, and a
Hessian-vector product used by the pathwise gradient estimator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.special import logsumexp


@dataclass
class TargetDensity:
    name: str
    dim: int
    log_density: Callable[[np.ndarray], np.ndarray]  # unnormalized, batched
    score: Callable[[np.ndarray], np.ndarray]
    log_z: Optional[float] = None
    sampler: Optional[Callable[[int, np.random.Generator], np.ndarray]] = None
    modes: Optional[np.ndarray] = None
    # maps (x, v) -> H(x) v where H is the Hessian of log_density; optional
    hvp: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    # per-mode log-density functions for mode assignment (EMC)
    component_log_density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    meta: dict = field(default_factory=dict)

    def energy(self, x: np.ndarray) -> np.ndarray:
        return -self.log_density(x)

    def shifted(self, c: float) -> "TargetDensity":
        """Same target with energy shifted by c (log-density by -c)."""
        base_ld = self.log_density
        return TargetDensity(
            name=f"{self.name}+shift", dim=self.dim,
            log_density=lambda x: base_ld(x) - c,
            score=self.score,
            log_z=None if self.log_z is None else self.log_z - c,
            sampler=self.sampler, modes=self.modes, hvp=self.hvp,
            component_log_density=self.component_log_density, meta=dict(self.meta))


def dump_samples(target: TargetDensity, n: int, seed: int, path: str) -> None:
    """Write n exact samples to CSV, one row per sample."""
    if target.sampler is None:
        raise ValueError(f"target {target.name} has no exact sampler")
    rng = np.random.default_rng(seed)
    samples = target.sampler(n, rng)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"# target={target.name} seed={seed}"])
        writer.writerow([f"x{i}" for i in range(target.dim)])
        writer.writerows(samples)


# ---------------------------------------------------------------------------
# mixtures
# ---------------------------------------------------------------------------

def _as_rng(rng) -> np.random.Generator:
    """Accept either a Generator or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.Philox(rng))


def _draw_locations(d: int, m: int, halfwidth: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-halfwidth, halfwidth, size=(m, d))


def make_gmm(d: int, m: int, box_halfwidth: float, seed: int) -> TargetDensity:
    """Equal-weight unit-covariance Gaussian mixture; normalized (log Z = 0)."""
    mu = _draw_locations(d, m, box_halfwidth, seed)
    const = -0.5 * d * np.log(2.0 * np.pi)

    def comp_logpdf(x):
        x = np.atleast_2d(x)
        diff = x[:, None, :] - mu[None, :, :]  # (n, m, d)
        return const - 0.5 * np.sum(diff ** 2, axis=-1)

    def log_density(x):
        single = np.ndim(x) == 1
        lp = logsumexp(comp_logpdf(x), axis=1) - np.log(m)
        return lp[0] if single else lp

    def score(x):
        single = np.ndim(x) == 1
        x2 = np.atleast_2d(x)
        lw = comp_logpdf(x2)
        w = np.exp(lw - logsumexp(lw, axis=1, keepdims=True))  # (n, m)
        s = np.einsum("nm,nmd->nd", w, mu[None, :, :] - x2[:, None, :])
        return s[0] if single else s

    def hvp(x, v):
        # H = sum_m w_m (mu_m - x)(mu_m - x)^T - I - s s^T with s the score
        single = np.ndim(x) == 1
        x2, v2 = np.atleast_2d(x), np.atleast_2d(v)
        lw = comp_logpdf(x2)
        w = np.exp(lw - logsumexp(lw, axis=1, keepdims=True))
        diff = mu[None, :, :] - x2[:, None, :]
        s = np.einsum("nm,nmd->nd", w, diff)
        dv = np.einsum("nmd,nd->nm", diff, v2)
        out = np.einsum("nm,nm,nmd->nd", w, dv, diff) - v2 \
            - s * np.sum(s * v2, axis=-1, keepdims=True)
        return out[0] if single else out

    def sampler(n, rng):
        rng = _as_rng(rng)
        comps = rng.integers(0, m, size=n)
        return mu[comps] + rng.standard_normal((n, d))

    return TargetDensity(
        name=f"gmm{m}_{d}d", dim=d, log_density=log_density, score=score,
        log_z=0.0, sampler=sampler, modes=mu, hvp=hvp,
        component_log_density=lambda x: comp_logpdf(x),
        meta={"m": m, "halfwidth": box_halfwidth, "seed": seed})


_T2_LOGCONST = -np.log(2.0 * np.sqrt(2.0))  # log of t_2 pdf constant


def make_mos(d: int, m: int, box_halfwidth: float, seed: int) -> TargetDensity:
    """Mixture of products of independent 1-d Student-t(2) components."""
    mu = _draw_locations(d, m, box_halfwidth, seed)

    def comp_logpdf(x):
        x = np.atleast_2d(x)
        z = x[:, None, :] - mu[None, :, :]
        return np.sum(_T2_LOGCONST - 1.5 * np.log1p(z ** 2 / 2.0), axis=-1)

    def log_density(x):
        single = np.ndim(x) == 1
        lp = logsumexp(comp_logpdf(x), axis=1) - np.log(m)
        return lp[0] if single else lp

    def score(x):
        single = np.ndim(x) == 1
        x2 = np.atleast_2d(x)
        lw = comp_logpdf(x2)
        w = np.exp(lw - logsumexp(lw, axis=1, keepdims=True))
        z = x2[:, None, :] - mu[None, :, :]
        comp_score = -3.0 * z / (2.0 + z ** 2)
        s = np.einsum("nm,nmd->nd", w, comp_score)
        return s[0] if single else s

    def sampler(n, rng):
        rng = _as_rng(rng)
        comps = rng.integers(0, m, size=n)
        return mu[comps] + rng.standard_t(2.0, size=(n, d))

    return TargetDensity(
        name=f"mos{m}_{d}d", dim=d, log_density=log_density, score=score,
        log_z=0.0, sampler=sampler, modes=mu,
        component_log_density=lambda x: comp_logpdf(x),
        meta={"m": m, "halfwidth": box_halfwidth, "seed": seed})


# ---------------------------------------------------------------------------
# funnel
# ---------------------------------------------------------------------------

def make_funnel(d: int = 10, sigma_sq: float = 9.0,
                clip_bound: float = 30.0) -> TargetDensity:
    """Neal's funnel; exact samples are clipped to [-clip_bound, clip_bound]."""
    if d < 2:
        raise ValueError("funnel requires d >= 2")

    def log_density(x):
        single = np.ndim(x) == 1
        x2 = np.atleast_2d(x)
        x1, rest = x2[:, 0], x2[:, 1:]
        lp = (-0.5 * x1 ** 2 / sigma_sq - 0.5 * np.log(2.0 * np.pi * sigma_sq)
              - 0.5 * np.sum(rest ** 2, axis=1) * np.exp(-x1)
              - 0.5 * (d - 1) * (x1 + np.log(2.0 * np.pi)))
        return lp[0] if single else lp

    def score(x):
        single = np.ndim(x) == 1
        x2 = np.atleast_2d(x)
        x1, rest = x2[:, 0], x2[:, 1:]
        out = np.empty_like(x2)
        out[:, 0] = (-x1 / sigma_sq
                     + 0.5 * np.sum(rest ** 2, axis=1) * np.exp(-x1)
                     - 0.5 * (d - 1))
        out[:, 1:] = -rest * np.exp(-x1)[:, None]
        return out[0] if single else out

    def sampler(n, rng):
        rng = _as_rng(rng)
        x1 = np.sqrt(sigma_sq) * rng.standard_normal(n)
        rest = np.exp(0.5 * x1)[:, None] * rng.standard_normal((n, d - 1))
        return np.clip(np.concatenate([x1[:, None], rest], axis=1),
                       -clip_bound, clip_bound)

    return TargetDensity(name=f"funnel_{d}d", dim=d, log_density=log_density,
                         score=score, log_z=0.0, sampler=sampler,
                         meta={"sigma_sq": sigma_sq, "clip": clip_bound})


# ---------------------------------------------------------------------------
# many well
# ---------------------------------------------------------------------------

def make_manywell(d: int = 5, m: int = 5, delta: float = 4.0) -> TargetDensity:
    """Factorized double-well density exp(-sum (x_i^2-delta)^2 - 0.5 sum x_j^2).

    log Z is computed once by 1-d quadrature per well dimension; the exact
    sampler uses per-dimension rejection from a two-component Gaussian
    proposal centered at +-sqrt(delta).
    """
    if m > d:
        raise ValueError("m must not exceed d")

    def well_logpdf_1d(x):
        return -(x ** 2 - delta) ** 2

    z_well, err = quad(lambda x: np.exp(well_logpdf_1d(x)), -np.inf, np.inf,
                       limit=200)
    if not np.isfinite(z_well) or err > 1e-9 * z_well:
        raise RuntimeError("quadrature for the double-well constant did not converge")
    log_z = m * np.log(z_well) + 0.5 * (d - m) * np.log(2.0 * np.pi)

    def log_density(x):
        single = np.ndim(x) == 1
        x2 = np.atleast_2d(x)
        well, gauss = x2[:, :m], x2[:, m:]
        lp = -np.sum((well ** 2 - delta) ** 2, axis=1) \
            - 0.5 * np.sum(gauss ** 2, axis=1)
        return lp[0] if single else lp

    def score(x):
        single = np.ndim(x) == 1
        x2 = np.atleast_2d(x)
        out = np.empty_like(x2)
        out[:, :m] = -4.0 * x2[:, :m] * (x2[:, :m] ** 2 - delta)
        out[:, m:] = -x2[:, m:]
        return out[0] if single else out

    def hvp(x, v):
        single = np.ndim(x) == 1
        x2, v2 = np.atleast_2d(x), np.atleast_2d(v)
        out = np.empty_like(x2)
        out[:, :m] = (-12.0 * x2[:, :m] ** 2 + 4.0 * delta) * v2[:, :m]
        out[:, m:] = -v2[:, m:]
        return out[0] if single else out

    root = np.sqrt(delta) if delta > 0 else 1.0
    prop_std = max(0.4, 0.6 / max(delta, 1.0))

    def sample_well_1d(n, rng):
        out = np.empty(n)
        filled = 0
        # envelope constant for the mixture proposal, estimated on a grid
        grid = np.linspace(-root - 6 * prop_std, root + 6 * prop_std, 4001)
        lq = _twopoint_proposal_logpdf(grid, root, prop_std)
        log_c = np.max(well_logpdf_1d(grid) - lq) + 1e-6
        while filled < n:
            k = max(2 * (n - filled), 256)
            side = rng.integers(0, 2, size=k) * 2 - 1
            cand = side * root + prop_std * rng.standard_normal(k)
            lacc = well_logpdf_1d(cand) \
                - _twopoint_proposal_logpdf(cand, root, prop_std) - log_c
            keep = cand[np.log(rng.uniform(size=k)) < lacc]
            take = min(len(keep), n - filled)
            out[filled:filled + take] = keep[:take]
            filled += take
        return out

    def sampler(n, rng):
        rng = _as_rng(rng)
        out = np.empty((n, d))
        for i in range(m):
            out[:, i] = sample_well_1d(n, rng)
        out[:, m:] = rng.standard_normal((n, d - m))
        return out

    signs = np.array(np.meshgrid(*([[-1.0, 1.0]] * m), indexing="ij"))
    modes = signs.reshape(m, -1).T * root  # (2^m, m)
    modes_full = np.concatenate([modes, np.zeros((modes.shape[0], d - m))], axis=1)

    def component_log_density(x):
        x2 = np.atleast_2d(x)
        diff = x2[:, None, :] - modes_full[None, :, :]
        return -0.5 * np.sum(diff ** 2, axis=-1)

    return TargetDensity(
        name=f"manywell_{d}d", dim=d, log_density=log_density, score=score,
        log_z=float(log_z), sampler=sampler, modes=modes_full, hvp=hvp,
        component_log_density=component_log_density,
        meta={"m": m, "delta": delta})


def _twopoint_proposal_logpdf(x, root, std):
    a = -0.5 * (x - root) ** 2 / std ** 2
    b = -0.5 * (x + root) ** 2 / std ** 2
    return np.logaddexp(a, b) - np.log(2.0) \
        - 0.5 * np.log(2.0 * np.pi) - np.log(std)


# ---------------------------------------------------------------------------
# brownian time-series posterior
# ---------------------------------------------------------------------------

def make_brownian(T_obs: int = 30, seed: int = 7, missing: Optional[tuple] = (10, 19),
                  y_override: Optional[np.ndarray] = None) -> TargetDensity:
    """Posterior over (log a_inn, log a_obs, x_1..x_T) for a noisy random walk.

    Observations y are generated once under the given seed (moderate true
    scales, so the synthetic data stays well conditioned); indices in
    [missing[0], missing[1]] (0-based) are withheld.  Both scale parameters
    carry a log-normal prior and enter the state in log space, so the
    density is finite for any real input.
    """
    d = T_obs + 2
    rng = np.random.default_rng(seed)
    a_inn_true, a_obs_true = np.exp(0.5 * rng.standard_normal(2))
    x_true = np.cumsum(a_inn_true * rng.standard_normal(T_obs))
    y = x_true + a_obs_true * rng.standard_normal(T_obs)
    if y_override is not None:
        y = np.asarray(y_override, dtype=np.float64)
    observed = np.ones(T_obs, dtype=bool)
    if missing is not None:
        observed[missing[0]:missing[1] + 1] = False
    prior_scale = 2.0

    def unpack(x):
        x2 = np.atleast_2d(x)
        return x2[:, 0], x2[:, 1], x2[:, 2:]

    def log_density(x):
        single = np.ndim(x) == 1
        th_inn, th_obs, xs = unpack(x)
        a_inn, a_obs = np.exp(th_inn), np.exp(th_obs)
        lp = -0.5 * (th_inn ** 2 + th_obs ** 2) / prior_scale ** 2
        diffs = np.concatenate([xs[:, :1], np.diff(xs, axis=1)], axis=1)
        lp = lp - 0.5 * np.sum(diffs ** 2, axis=1) / a_inn ** 2 \
            - T_obs * th_inn
        resid = (y[observed] - xs[:, observed])
        lp = lp - 0.5 * np.sum(resid ** 2, axis=1) / a_obs ** 2 \
            - observed.sum() * th_obs
        return lp[0] if single else lp

    def score(x):
        single = np.ndim(x) == 1
        th_inn, th_obs, xs = unpack(x)
        a_inn2, a_obs2 = np.exp(2.0 * th_inn), np.exp(2.0 * th_obs)
        diffs = np.concatenate([xs[:, :1], np.diff(xs, axis=1)], axis=1)
        resid = np.zeros_like(xs)
        resid[:, observed] = y[observed] - xs[:, observed]
        out = np.empty_like(np.atleast_2d(x))
        out[:, 0] = -th_inn / prior_scale ** 2 \
            + np.sum(diffs ** 2, axis=1) / a_inn2 - T_obs
        out[:, 1] = -th_obs / prior_scale ** 2 \
            + np.sum(resid[:, observed] ** 2, axis=1) / a_obs2 - observed.sum()
        grad_x = -diffs / a_inn2[:, None]
        grad_x[:, :-1] += diffs[:, 1:] / a_inn2[:, None]
        grad_x += resid / a_obs2[:, None]
        out[:, 2:] = grad_x
        return out[0] if single else out

    return TargetDensity(
        name="brownian", dim=d, log_density=log_density, score=score,
        meta={"y": y, "observed": observed, "seed": seed,
              "prior_scale": prior_scale})


REGISTRY = {
    "gmm40_50d": lambda: make_gmm(50, 40, 40.0, seed=0),
    "gmm8_2d": lambda: make_gmm(2, 8, 10.0, seed=0),
    "mos10_50d": lambda: make_mos(50, 10, 10.0, seed=0),
    "funnel": lambda: make_funnel(10),
    "manywell": lambda: make_manywell(5, 5, 4.0),
    "brownian": lambda: make_brownian(),
}


def get_target(name: str) -> TargetDensity:
    if name not in REGISTRY:
        raise KeyError(f"unknown target {name!r}; known: {sorted(REGISTRY)}")
    return REGISTRY[name]()
