"""Command-line entry point.

    golfrl train --out runs/a --config my.cfg --steps=200
    golfrl eval --checkpoint runs/a/final.bin --config runs/a/config.txt
    golfrl ablate --out runs/suite --preset hard --seeds 0,1,2
    golfrl passk --n 8 --c 3 --k 1,2,4
    golfrl inspect-checkpoint runs/a/final.bin

Any config key may be given as ``--key=value`` after the named options.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .checkpoint import describe, load_checkpoint
from .config import PRESETS, TrainConfig, load_config, parse_pairs, preset
from .metrics import pass_at_k
from .trainer import ABLATION_VARIANTS, evaluate, run_ablation_suite, run_experiment


def _split_overrides(extra: list[str]) -> dict:
    pairs = {}
    for arg in extra:
        if not arg.startswith("--") or "=" not in arg:
            raise SystemExit(f"unrecognized argument {arg!r}; config overrides look like --key=value")
        key, value = arg[2:].split("=", 1)
        pairs[key] = value
    return parse_pairs(pairs)


def _build_config(args, extra) -> TrainConfig:
    base = preset(args.preset) if args.preset else TrainConfig()
    return load_config(args.config, base=base, **_split_overrides(extra))


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="task preset applied before the config file")


def cmd_train(args, extra) -> int:
    cfg = _build_config(args, extra)
    out = run_experiment(cfg, args.out, resume_from=args.resume)
    print((out / "report.json").read_text(), end="")
    return 0


def cmd_eval(args, extra) -> int:
    cfg = _build_config(args, extra)
    params, _, _ = load_checkpoint(args.checkpoint)
    print(json.dumps(evaluate(cfg, params), indent=2, sort_keys=True))
    return 0


def cmd_ablate(args, extra) -> int:
    cfg = _build_config(args, extra)
    seeds = [int(s) for s in args.seeds.split(",")]
    variants = args.variants.split(",") if args.variants else None
    print(run_ablation_suite(cfg, seeds, args.out, variants), end="")
    return 0


def cmd_passk(args, extra) -> int:
    if extra:
        raise SystemExit(f"unexpected arguments {extra}")
    for k in (int(s) for s in args.k.split(",")):
        print(f"pass@{k} = {pass_at_k(args.n, args.c, k):.12g}")
    return 0


def cmd_inspect(args, extra) -> int:
    if extra:
        raise SystemExit(f"unexpected arguments {extra}")
    print(json.dumps(describe(args.path), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="golfrl", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run and write a run directory")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to resume from")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="pass@k of a checkpoint on held-out instances")
    p.add_argument("--checkpoint", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation variants over several seeds")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--variants", help="comma list from: " + ", ".join(ABLATION_VARIANTS))
    _add_config_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("passk", help="unbiased pass@k from n samples with c successes")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--c", type=int, required=True)
    p.add_argument("--k", default="1")
    p.set_defaults(func=cmd_passk)

    p = sub.add_parser("inspect-checkpoint", help="print checkpoint header and sizes")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    return args.func(args, extra)


if __name__ == "__main__":
    sys.exit(main())
