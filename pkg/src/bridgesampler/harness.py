"""Training loop, run configuration, checkpoints, and run manifests."""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses, metrics
from .bridge import Bridge
from .optim import RAdam, clip_by_global_norm, cosine_lr
from .targets import get_target

LOSSES = ("rkl_ld", "lv", "rkl_r", "fkl_nis")
PARAMETERIZATIONS = ("CMCD", "DBS", "FIXED_FORWARD")

# Divergence thresholds (artifact-defined; the tables only mark divergent
# runs, they do not state a criterion).
ELBO_DROP_NATS = 100.0
NAN_STREAK_LIMIT = 10


class ConfigError(ValueError):
    """Raised for invalid or unparsable run configurations."""


@dataclass
class RunConfig:
    target: str = "gmm8_2d"
    parameterization: str = "CMCD"
    loss: str = "rkl_ld"
    T: int = 64
    batch_size: int = 512
    iterations: int = 4000
    lr: float = 1e-3
    lr_sde: float = -1.0          # -1 means "same as lr"
    sigma_init: float = 1.0
    prior_sigma_init: float = 1.0
    learn_sigma: bool = False
    learn_prior: bool = True
    seed: int = 0
    eval_every: int = 250
    eval_samples: int = 2000
    out_dir: str = "runs/default"
    final_sample_metrics: bool = True

    def __post_init__(self):
        if self.lr_sde < 0.0:
            self.lr_sde = self.lr
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ConfigError(
                f"unknown parameterization {self.parameterization!r}")
        if self.lr <= 0.0 or self.lr_sde <= 0.0:
            raise ConfigError("learning rates must be positive")
        if min(self.T, self.batch_size) < 1 or self.iterations < 0:
            raise ConfigError("T and batch_size must be >= 1, iterations >= 0")
        if self.sigma_init <= 0.0 or self.prior_sigma_init <= 0.0:
            raise ConfigError("initial scales must be positive")
        try:
            target = get_target(self.target)
        except KeyError as exc:
            raise ConfigError(f"unknown target {self.target!r}") from exc
        if self.loss == "fkl_nis" and target.sampler is None:
            raise ConfigError(
                "fkl_nis needs a target with an exact sampler")
        if self.loss == "rkl_r" and target.hvp is None:
            raise ConfigError(
                "rkl_r needs an analytic target score derivative")


def _coerce(raw: str):
    raw = raw.strip()
    if raw and raw[0] in "\"'" and raw[-1] == raw[0]:
        return raw[1:-1]
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_config(path: str | Path) -> RunConfig:
    """Read a flat ``key = value`` text file into a RunConfig."""
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in fields:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(raw)
    try:
        return RunConfig(**values)
    except (TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class RunManifest:
    config: dict
    version: str = ""
    rows: list = field(default_factory=list)
    diverged: bool = False
    divergence_iteration: int = -1
    divergence_reason: str = ""
    nan_skips: int = 0
    wall_clock_s: float = 0.0

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)


def save_checkpoint(path: str | Path, bridge: Bridge, config: RunConfig):
    payload = {
        "config": dataclasses.asdict(config),
        "params": {name: {"shape": list(np.shape(v)),
                          "values": np.asarray(v).reshape(-1).tolist()}
                   for name, v in bridge.store.values.items()},
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path: str | Path) -> tuple[Bridge, RunConfig]:
    payload = json.loads(Path(path).read_text())
    config = RunConfig(**payload["config"])
    bridge = make_bridge(config)
    values = {name: np.asarray(entry["values"]).reshape(entry["shape"])
              for name, entry in payload["params"].items()}
    for name in bridge.store.values:
        if name not in values:
            raise ConfigError(f"checkpoint missing parameter {name!r}")
        bridge.store.values[name] = values[name]
    return bridge, config


def make_bridge(config: RunConfig) -> Bridge:
    return Bridge(get_target(config.target), config.parameterization,
                  T=config.T, sigma_init=config.sigma_init,
                  prior_sigma_init=config.prior_sigma_init,
                  learn_sigma=config.learn_sigma,
                  learn_prior=config.learn_prior, seed=config.seed)


def _grad_report(bridge: Bridge, config: RunConfig, seed: int):
    if config.loss == "rkl_r":
        return losses.grad_rkl_r(bridge, config.batch_size, seed)
    batch = bridge.simulate_reverse(config.batch_size, seed)
    if config.loss == "rkl_ld":
        return losses.grad_rkl_ld(batch, bridge)
    if config.loss == "lv":
        return losses.grad_lv(batch, bridge)
    return losses.grad_fkl_nis(batch, bridge)


def evaluate(bridge: Bridge, config: RunConfig, seed: int,
             sample_metrics: bool = False) -> list[dict]:
    """Metric rows for one evaluation point."""
    batch = bridge.simulate_reverse(config.eval_samples, seed)
    lr = batch.log_ratio()[batch.valid]
    mean, se = metrics.elbo(lr)
    rows = [{"metric": "elbo", "value": mean, "stderr": se,
             "flags": "" if batch.valid.all() else "invalid_paths"}]
    target = bridge.target
    if sample_metrics and target.sampler is not None:
        model_x = batch.final_states()[batch.valid]
        exact_x = target.sampler(config.eval_samples, seed + 1)
        rows.append({"metric": "sinkhorn", "flags": "",
                     "value": metrics.sinkhorn_divergence(model_x, exact_x),
                     "stderr": 0.0})
        rows.append({"metric": "mmd", "flags": "",
                     "value": metrics.mmd(model_x, exact_x), "stderr": 0.0})
        if target.modes is not None:
            rows.append({"metric": "emc", "flags": "", "stderr": 0.0,
                         "value": metrics.entropic_mode_coverage(
                             model_x, target.modes,
                             target.component_log_density)})
    return rows


def train(config: RunConfig, out_dir: str | Path | None = None,
          log_fn=None) -> RunManifest:
    """Run the simulate -> gradient -> update loop and record a manifest."""
    from . import __version__

    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bridge = make_bridge(config)
    names = bridge.store.trainable_names()
    opt = RAdam(names)
    blocks = bridge.store.blocks
    manifest = RunManifest(config=dataclasses.asdict(config),
                           version=__version__)
    t_start = time.perf_counter()
    best_elbo = -np.inf
    nan_streak = 0

    def record(iteration, rows):
        for row in rows:
            manifest.rows.append({"iteration": iteration, **row})
            if log_fn is not None:
                log_fn(iteration, row)

    record(0, evaluate(bridge, config, seed=config.seed * 7919 + 1))
    for it in range(config.iterations):
        seed = config.seed * 1_000_003 + 2 * it + 1
        try:
            report = _grad_report(bridge, config, seed)
        except losses.EstimationError:
            report = None
        grads = report.flat() if report is not None else {}
        finite = bool(grads) and all(np.all(np.isfinite(g))
                                     for g in grads.values())
        if not finite:
            manifest.nan_skips += 1
            nan_streak += 1
            if nan_streak >= NAN_STREAK_LIMIT:
                manifest.diverged = True
                manifest.divergence_iteration = it
                manifest.divergence_reason = (
                    f"{NAN_STREAK_LIMIT} consecutive non-finite gradients")
                break
            continue
        nan_streak = 0
        grads, _ = clip_by_global_norm(grads, 1.0)
        lr_net = cosine_lr(it, config.iterations, config.lr)
        lr_sde = cosine_lr(it, config.iterations, config.lr_sde)
        # SDE-level scalars (diffusion scale, schedule, prior moments) use
        # the SDE learning rate; network weights use the model rate.
        sde_names = {n for n in names
                     if n.startswith(("sigma.", "schedule.", "prior."))}
        updated = opt.step(bridge.store.values, grads, lr_net)
        if lr_sde != lr_net and sde_names:
            scale = lr_sde / lr_net
            for n in sde_names:
                updated[n] = bridge.store.values[n] + \
                    (updated[n] - bridge.store.values[n]) * scale
        bridge.store.values.update(
            {n: updated[n] for n in names})

        is_last = it + 1 == config.iterations
        if (it + 1) % config.eval_every == 0 or is_last:
            rows = evaluate(bridge, config,
                            seed=config.seed * 7919 + 2 * it + 2,
                            sample_metrics=is_last
                            and config.final_sample_metrics)
            record(it + 1, rows)
            elbo_val = next(r["value"] for r in rows if r["metric"] == "elbo")
            if np.isfinite(elbo_val):
                best_elbo = max(best_elbo, elbo_val)
            if elbo_val < best_elbo - ELBO_DROP_NATS or not np.isfinite(
                    elbo_val):
                manifest.diverged = True
                manifest.divergence_iteration = it + 1
                manifest.divergence_reason = (
                    f"elbo {elbo_val:.3f} fell more than {ELBO_DROP_NATS} "
                    f"nats below best {best_elbo:.3f}")
                break

    manifest.wall_clock_s = time.perf_counter() - t_start
    save_checkpoint(out / "checkpoint.json", bridge, config)
    (out / "manifest.json").write_text(manifest.to_json())
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["iteration", "metric", "value", "stderr", "flags"])
        writer.writeheader()
        writer.writerows(manifest.rows)
    return manifest
