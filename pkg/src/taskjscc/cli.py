"""Command line entry point: ``taskjscc <verb> [--config F] [--snr S] [--seed N] [--out D]``.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiment as ex
from .config import OUTPUT_ROOT_ENV, load_config
from .errors import ConfigError, NumericalAbort
from .storage import ContainerError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

VERBS = {
    "pretrain": "train encoder and reshaper over the unquantized channel",
    "fit-constellation": "fit the grid scale r on pretrained encoder outputs",
    "finetune": "joint fine-tuning through the quantized channel at the fitted r",
    "evaluate": "test-set metrics of one mode over the SNR list",
    "baseline": "full pipeline with the reconstruction objective",
    "sweep": "evaluate both modes over every channel kind and SNR, merged",
    "all": "full pipeline for both modes followed by the merged sweep",
}


def _parse_snr(text: str):
    if text.lower() in ("inf", "+inf"):
        return "inf"
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an SNR in dB: {text!r}") from None


def _parse_seed(text: str) -> dict:
    """``N`` -> (N, N+1, N+2); ``a,b,c`` -> explicit dataset/init/channel seeds."""
    try:
        parts = [int(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed {text!r}") from None
    if len(parts) == 1:
        parts = [parts[0], parts[0] + 1, parts[0] + 2]
    if len(parts) != 3 or min(parts) < 0:
        raise argparse.ArgumentTypeError("seed is N or dataset,init,channel (nonnegative)")
    return dict(zip(("dataset", "init", "channel"), parts))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="taskjscc", description=__doc__.splitlines()[0],
                                epilog=f"{OUTPUT_ROOT_ENV} sets the root for relative output dirs.")
    sub = p.add_subparsers(dest="verb", required=True, metavar="verb")
    for verb, help_ in VERBS.items():
        s = sub.add_parser(verb, help=help_, description=help_)
        s.add_argument("--config", help="JSON config file (defaults when omitted)")
        s.add_argument("--snr", type=_parse_snr, action="append",
                       help="SNR in dB; training SNR for training verbs, evaluation points "
                            "otherwise (repeatable)")
        s.add_argument("--seed", type=_parse_seed, help="N or dataset,init,channel")
        s.add_argument("--out", help="output directory")
        s.add_argument("-v", "--verbose", action="store_true")
        if verb in ("pretrain", "fit-constellation", "finetune", "evaluate"):
            s.add_argument("--mode", choices=sorted(ex.MODE_OBJECTIVE),
                           help="objective mode (default from config)")
        if verb == "fit-constellation":
            s.add_argument("--r-init", type=float)
        if verb == "finetune":
            s.add_argument("--r-star", type=float, help="grid scale (default: fitted value)")
        if verb in ("finetune", "evaluate", "fit-constellation"):
            s.add_argument("--checkpoint", help="checkpoint to start from / evaluate")
        if verb == "sweep":
            s.add_argument("--r-factors", type=float, nargs="+",
                           help="also fine-tune the task-oriented model at these multiples "
                                "of r* and report test loss at each SNR")
    return p


_TRAINING = {"pretrain", "fit-constellation", "finetune", "baseline", "all"}


def _overrides(args) -> dict:
    over: dict = {}
    if args.out:
        over["output"] = {"dir": args.out}
    if args.seed:
        over["seeds"] = args.seed
    if args.snr:
        if args.verb in _TRAINING and args.verb != "all":
            if len(args.snr) != 1:
                raise ConfigError(f"{args.verb} takes a single --snr")
            over["channel"] = {"train_snr_db": args.snr[0]}
        else:
            over["channel"] = {"eval_snr_db": args.snr}
    if getattr(args, "mode", None):
        over["objective_mode"] = args.mode
    return over


def _print_rows(rows) -> None:
    for r in rows:
        extra = f" psnr={r['psnr']:.3f}" if r.get("psnr") is not None else ""
        print(f"{r['mode']:<15} {r['channel']:<9} snr={r['snr_db']:>6} "
              f"task_loss={r['task_loss']:.6f}{extra}")


def run(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    v = args.verb
    if v == "pretrain":
        print(ex.run_pretrain(cfg))
    elif v == "fit-constellation":
        print(ex.run_fit_constellation(cfg, checkpoint=args.checkpoint, r_init=args.r_init))
    elif v == "finetune":
        print(ex.run_finetune(cfg, checkpoint=args.checkpoint, r_star=args.r_star))
    elif v == "evaluate":
        _print_rows(ex.evaluate_over_snr(cfg, checkpoint=args.checkpoint))
    elif v == "baseline":
        _print_rows(ex.run_baseline_reconstruction(cfg))
    elif v == "sweep":
        _print_rows(ex.run_sweep(cfg))
        if args.r_factors:
            for row in ex.run_r_sensitivity(cfg, args.r_factors):
                print(json.dumps(row, sort_keys=True))
    elif v == "all":
        ex.run_all(cfg)
        _print_rows(ex.run_sweep(cfg))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ConfigError, ContainerError) as e:
        print(f"taskjscc: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"taskjscc: missing input: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as e:
        print(f"taskjscc: numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
