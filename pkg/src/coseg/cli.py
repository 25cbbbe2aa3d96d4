"""Command-line entry point: ``coseg {synth,train,eval,plot}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, help="experiment .cfg file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--method", choices=("coseg", "coseg_no_structure", "baseline"))
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--out", type=Path, help="output directory (overrides experiment.output_dir)")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    # options are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    _add_common(common)

    p = _Parser(prog="coseg", description=__doc__.splitlines()[0])
    _add_common(p)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="render the synthetic two-domain dataset")
    sub.add_parser("train", parents=[common], help="train coSegGAN, its ablation, or the decoupled baseline")
    ev = sub.add_parser("eval", parents=[common], help="evaluate checkpoints and write the report")
    ev.add_argument("--checkpoint", type=Path, action="append", default=[],
                    help="checkpoint to evaluate; repeat to compare several")
    ev.add_argument("--samples", type=int, default=4, help="overlay images per domain")
    pl = sub.add_parser("plot", parents=[common], help="loss and Dice curves from a metrics log")
    pl.add_argument("metrics", type=Path, nargs="*", help="metrics CSV file(s)")
    return p


def _load(args, need_data: bool = True):
    if args.config is None:
        raise UsageError("--config is required")
    exp = load_config(args.config, {"seed": args.seed, "epochs": args.epochs,
                                    "method": args.method, "out": args.out})
    errors = exp.validate(need_data=need_data)
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return exp


def cmd_synth(args) -> int:
    from .experiment import run_synth

    exp = _load(args, need_data=False)
    if exp.synthetic is None:
        raise UsageError("config has no [synthetic] section; nothing to synthesise")
    a, b = run_synth(exp, seed=args.seed)
    for store in (a, b):
        print(f"{store.name}: {store.frame_count} frames {store.image_size}x{store.image_size} "
              f"masks={'yes' if store.has_masks else 'no'} -> {store.image_dir.parent}")
    return 0


def cmd_train(args) -> int:
    from .experiment import run_train

    exp = _load(args)
    ckpt = run_train(exp)
    print(ckpt)
    return 0


def cmd_eval(args) -> int:
    from .experiment import run_eval

    exp = _load(args)
    checkpoints = args.checkpoint or [exp.method_dir() / "best.pt"]
    reports, paths = run_eval(exp, checkpoints, n_samples=args.samples)
    print(paths["table"].read_text(), end="")
    print(f"report written to {paths['csv'].parent}")
    return 0


def cmd_plot(args) -> int:
    from .plots import plot_metrics

    logs = list(args.metrics)
    out_dir = args.out
    if not logs:
        exp = _load(args, need_data=False)
        logs = sorted(exp.output_dir.glob("*/metrics.csv"))
        out_dir = exp.output_dir / "plots"
        if not logs:
            raise FileNotFoundError(f"no metrics logs under {exp.output_dir}")
    for log_path in logs:
        if not Path(log_path).exists():
            raise FileNotFoundError(f"metrics log not found: {log_path}")
        target = (out_dir or Path(log_path).parent) / Path(log_path).parent.name
        loss_png, dice_png, n = plot_metrics(log_path, target)
        print(f"{log_path}: {loss_png.name}, {dice_png.name} ({n} validation points)")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "plot": cmd_plot}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"coseg: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"coseg: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - exit code contract
        logging.getLogger("coseg").debug("failure", exc_info=True)
        print(f"coseg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
