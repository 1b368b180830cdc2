"""Command-line entry point: train, eval, gradcheck, dpi, sample.

Exit codes: 0 success, 2 training divergence, 3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys

EXIT_OK = 0
EXIT_DIVERGED = 2
EXIT_CONFIG = 3


def _cmd_train(args) -> int:
    from .harness import parse_config, train

    config = parse_config(args.config)
    if args.out is not None:
        config.out_dir = args.out

    def log_fn(iteration, row):
        print(f"iter {iteration:6d}  {row['metric']:>9s} = "
              f"{row['value']:.4f}", flush=True)

    manifest = train(config, log_fn=log_fn if not args.quiet else None)
    print(f"manifest written to {config.out_dir}/manifest.json")
    if manifest.diverged:
        print(f"run diverged at iteration {manifest.divergence_iteration}: "
              f"{manifest.divergence_reason}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .harness import ConfigError, evaluate, load_checkpoint

    bridge, config = load_checkpoint(args.checkpoint)
    if args.target is not None and args.target != config.target:
        raise ConfigError(
            f"checkpoint was trained on target {config.target!r}")
    if args.samples is not None:
        config.eval_samples = args.samples
    rows = evaluate(bridge, config, seed=args.seed, sample_metrics=True)
    print(json.dumps(rows, indent=2))
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .verify import SUITES

    suites = [args.suite] if args.suite else list(SUITES)
    all_ok = True
    report = {}
    for name in suites:
        ok, details = SUITES[name]()
        report[name] = {"ok": ok, **details}
        all_ok = all_ok and ok
        print(f"{name}: {'PASS' if ok else 'FAIL'}")
    print(json.dumps(report, indent=2, default=float))
    return EXIT_OK if all_ok else 1


def _cmd_dpi(args) -> int:
    from . import dpi as dpilab

    report = dpilab.counterexample_report()
    out = {"counterexample": report,
           "violates_variance_monotonicity": report["gap"] < 0.0,
           "kl_respects_monotonicity": report["kl_gap"] >= -1e-12}
    if args.search:
        found = dpilab.violation_search(seed=args.seed, trials=args.search)
        out["search"] = {
            "trials": args.search,
            "violations": len(found),
            "worst": [{"gap": gap, "q": pair.q.tolist(), "p": pair.p.tolist()}
                      for gap, pair in found[:5]],
        }
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _cmd_sample(args) -> int:
    import csv

    from .harness import load_checkpoint

    bridge, _config = load_checkpoint(args.checkpoint)
    batch = bridge.simulate_reverse(args.n, seed=args.seed)
    samples = batch.final_states()[batch.valid]
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(samples.shape[1])])
        writer.writerows(samples)
    print(f"wrote {samples.shape[0]} samples to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bridgesampler",
        description="Diffusion-bridge sampler training and verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training loop from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="override output directory")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target", default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("gradcheck", help="run gradient verification suites")
    p.add_argument("--suite", choices=["equivalence", "fd", "enumeration"],
                   default=None)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("dpi", help="variance-monotonicity counterexample lab")
    p.add_argument("--search", type=int, default=0,
                   help="additionally search N random table pairs")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_dpi)

    p = sub.add_parser("sample", help="draw samples from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_sample)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # config/IO problems -> exit 3
        from .harness import ConfigError

        if isinstance(exc, (ConfigError, FileNotFoundError, KeyError,
                            ValueError, json.JSONDecodeError)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        raise


if __name__ == "__main__":
    sys.exit(main())
