from __future__ import annotations
import argparse
import logging
import sys

from src.config import COMMANDS, apply_overrides, load_config
from src.errors import AdrhpError, ConfigError
from src.experiments import run

logger = logging.getLogger("adrhp")


def parse_args(argv=None):
    p = argparse.ArgumentParser(
        prog="adrhp",
        description="Age-dependent random Hawkes processes: simulation, limit equations and coupling sweeps",
    )
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=str, required=True, help="JSON file with model and experiment sections")

    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (0 = all cores, 1 = inline)")
    p.add_argument("--n", type=str, default=None, help="network size or comma list (e.g. 8,16,32)")
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--dx", type=float, default=None)

    p.add_argument("--verbose", action="store_true", help="debug logging")
    p.add_argument("--quiet", action="store_true", help="no progress bar")
    return p.parse_args(argv)


def parse_n_list(raw: str | None) -> tuple[int, ...] | None:
    if raw is None:
        return None
    try:
        return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"--n must be an integer or a comma list, got {raw!r}")


def print_summary(title: str, stats: dict) -> None:
    print(f"\n=== {title} ===")
    for k, v in stats.items():
        if isinstance(v, float):
            print(f"{k:>24}: {v: .6g}")
        else:
            print(f"{k:>24}: {v}")


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    try:
        cfg = load_config(args.config)
        n_list = parse_n_list(args.n)
        cfg = apply_overrides(
            cfg,
            command=args.command,
            seed=args.seed,
            output_dir=args.out,
            jobs=args.jobs,
            n_list=n_list,
            replicas=args.replicas,
            max_replicas=max(cfg.max_replicas, args.replicas) if args.replicas else None,
            theta=args.theta,
            dx=args.dx,
        )
        stats = run(cfg, quiet=args.quiet)
    except AdrhpError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code

    print_summary(f"{cfg.command} | seed {cfg.seed} | theta {cfg.theta:g} | out {cfg.output_dir}", stats)
    return 0


if __name__ == "__main__":
    sys.exit(main())
