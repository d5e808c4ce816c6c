"""Command-line entry point: ``crnsim run --config <path> ...``."""

from __future__ import annotations

import argparse
import sys

from .harness import ConfigError, load_spec, run_experiment, write_outputs


def _key_value(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crnsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a seeded experiment and write CSV outputs")
    run.add_argument("--config", required=True, help="key=value experiment file")
    run.add_argument("--seed", type=int, help="master seed")
    run.add_argument("--replications", type=int)
    run.add_argument("--policy", action="append", dest="policies", metavar="NAME",
                     help="policy to run (repeatable): classic, reward_only, reward_penalty, qmodel")
    run.add_argument("--out", help="output directory")
    run.add_argument("--workers", type=int, help="worker processes for replications")
    run.add_argument("--timing", action="store_true",
                     help="record wall-clock runtime (makes finals.csv non-reproducible)")
    run.add_argument("--set", action="append", type=_key_value, default=[], dest="sets",
                     metavar="KEY=VALUE", help="override any config key (repeatable)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides: dict[str, str] = dict(args.sets)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.replications is not None:
        overrides["replications"] = str(args.replications)
    if args.policies:
        overrides["policies"] = ",".join(args.policies)
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.workers is not None:
        overrides["workers"] = str(args.workers)
    if args.timing:
        overrides["timing"] = "true"

    try:
        spec = load_spec(args.config, overrides)
    except ConfigError as exc:
        print(f"crnsim: config error: {exc}", file=sys.stderr)
        return 2
    try:
        result = run_experiment(spec)
        paths = write_outputs(result, spec.output_dir)
    except OSError as exc:
        print(f"crnsim: {exc}", file=sys.stderr)
        return 1

    for name in result.policy_names:
        bits = result.total_bits(name)
        print(f"{name:>15}: mean total bits {bits.mean():.6g} over {bits.size} replications")
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


if __name__ == "__main__":
    sys.exit(main())
