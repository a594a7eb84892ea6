"""Command-line entry point.

``banditlab run --config manifest.toml`` executes the experiment the
manifest describes and writes its artifacts.  Exit codes: 0 success,
2 configuration problem, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError
from .harness import emit, load_config, override, run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="banditlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a TOML manifest")
    run.add_argument("--config", required=True, help="path to the manifest")
    run.add_argument("--trials", type=int, help="override the manifest's trial count")
    run.add_argument("--seed", type=int, help="override the base seed")
    run.add_argument("--out", help="override the output directory")
    run.add_argument("--policy", help="override the policy (drops manifest params)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        config = override(config, trials=args.trials, seed=args.seed,
                          out=args.out, policy=args.policy)
        config.validate()
        result = run_experiment(config)
        final = result.finals.mean()
        print(f"{config.name}: {config.trials} trial(s), "
              f"mean final regret {final:.3f} +- {result.finals.std(ddof=0):.3f}")
        if config.out_dir:
            for path in emit(result, config.out_dir):
                print(f"wrote {path}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary maps everything to exit 3
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
