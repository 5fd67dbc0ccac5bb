"""Command-line entry points.

Subcommands cover the whole experiment lifecycle:
  gen     generate a synthetic corpus file
  train1  stage 1: transmitter, channel bypassed
  train2  stage 2: channel codec + receiver readout, transmitter frozen
  eval    score a checkpoint at one SNR
  sweep   score a checkpoint across the configured SNR grid
  stats   redundancy-removal savings on the test split
  params  print the parameter count

Every command resolves a RunConfig (defaults, then --config, then
flags), writes the resolved form next to its outputs, and is fully
deterministic given the seed. Exit codes: 0 success, 1 usage error,
2 data/config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import RunConfig, parse_config, read_config, write_config
from .corpus import gen_corpus, load_corpus, save_corpus
from .errors import ConfigError, DataFormatError, NumericsError, ShapeError
from .model import Model
from .prune import prune_steps, savings_stats
from .training import (check_compatible, evaluate, greedy_transcribe, report,
                       summarize, train_joint, train_stage1, train_stage2)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _snr_grid(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated dB values, got {text!r}") from None


def _build_parser() -> _Parser:
    parser = _Parser(prog="semstt", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", help="run configuration file (flat key = value)")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--channel", choices=("awgn", "rayleigh"), help="channel kind override")
        p.add_argument("--snr", type=_snr_grid, help="comma-separated SNR grid override (dB)")
        if checkpoint:
            p.add_argument("checkpoint", nargs="?", default=None,
                           help="model checkpoint (default: from the output directory)")
        return p

    common(sub.add_parser("gen", help="generate the synthetic corpus"))
    common(sub.add_parser("train1", help="train the transmitter, channel bypassed"))
    p2 = common(sub.add_parser("train2", help="train the channel codec on a frozen transmitter"),
                checkpoint=True)
    p2.add_argument("--joint", action="store_true",
                    help="instead train everything at once (convergence comparison)")
    common(sub.add_parser("eval", help="score a checkpoint at one SNR"), checkpoint=True)
    common(sub.add_parser("sweep", help="score a checkpoint across the SNR grid"), checkpoint=True)
    common(sub.add_parser("stats", help="redundancy savings on the test split"), checkpoint=True)
    common(sub.add_parser("params", help="print the parameter count"), checkpoint=True)
    return parser


def _resolve(args) -> RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if args.channel is not None:
        overrides["channel"] = args.channel
    if args.snr is not None:
        overrides["eval_snrs"] = args.snr
    if args.config is not None:
        return read_config(args.config, **overrides)
    return parse_config("", **overrides)


def _load_corpus(cfg: RunConfig):
    if not os.path.exists(cfg.corpus):
        raise DataFormatError(f"corpus file not found: {cfg.corpus!r} (run `semstt gen` first)")
    return load_corpus(cfg.corpus)


def _load_model(cfg: RunConfig, args, default_name: str) -> Model:
    path = args.checkpoint or os.path.join(cfg.out, default_name)
    if not os.path.exists(path):
        raise DataFormatError(f"checkpoint not found: {path!r}")
    return Model.load(path)


def _write_resolved(cfg: RunConfig, command: str) -> None:
    write_config(cfg, os.path.join(cfg.out, f"{command}.config"))


def _cmd_gen(args) -> int:
    cfg = _resolve(args)
    corpus = gen_corpus(cfg.corpus_gen, cfg.seed)
    parent = os.path.dirname(os.path.abspath(cfg.corpus))
    os.makedirs(parent, exist_ok=True)
    save_corpus(corpus, cfg.corpus)
    _write_resolved(cfg, "gen")
    print(f"wrote {len(corpus.sentences)} sentences to {cfg.corpus}")
    return EXIT_OK


def _cmd_train1(args) -> int:
    cfg = _resolve(args)
    corpus = _load_corpus(cfg)
    model = Model(cfg.model, seed=cfg.seed)
    result = train_stage1(model, corpus, cfg.stage1_epochs, cfg.batch_size,
                          cfg.seed, cfg.out, echo=print, rho=cfg.rho, eps=cfg.eps)
    _write_resolved(cfg, "train1")
    print(f"best dev_wer {result.best_wer:.4f} at epoch {result.best_epoch}; "
          f"checkpoint {result.checkpoint}")
    return EXIT_OK


def _cmd_train2(args) -> int:
    cfg = _resolve(args)
    corpus = _load_corpus(cfg)
    if args.joint:
        model = Model(cfg.model, seed=cfg.seed)
        budget = cfg.stage1_epochs + cfg.stage2_epochs
        result = train_joint(model, corpus, budget, cfg.batch_size, cfg.channel,
                             cfg.snr_lo, cfg.snr_hi, cfg.dev_snr, cfg.seed, cfg.out,
                             echo=print, rho=cfg.rho, eps=cfg.eps)
    else:
        model = _load_model(cfg, args, "stage1.ckpt")
        result = train_stage2(model, corpus, cfg.stage2_epochs, cfg.batch_size,
                              cfg.channel, cfg.snr_lo, cfg.snr_hi, cfg.dev_snr,
                              cfg.seed, cfg.out, echo=print, rho=cfg.rho, eps=cfg.eps)
    _write_resolved(cfg, "joint" if args.joint else "train2")
    print(f"best dev_wer {result.best_wer:.4f} at epoch {result.best_epoch}; "
          f"checkpoint {result.checkpoint}")
    return EXIT_OK


def _run_eval(args, snrs) -> int:
    cfg = _resolve(args)
    corpus = _load_corpus(cfg)
    model = _load_model(cfg, args, "stage2.ckpt")
    check_compatible(model, corpus)
    result = evaluate(model, corpus.split("test"), snrs, cfg.channel, cfg.seed)
    paths = report(result, cfg.out)
    _write_resolved(cfg, args.command)
    for snr, mean_wer, mean_sim, _, _ in summarize(result.rows):
        print(f"snr {snr:5.1f} dB: mean_wer {mean_wer:.4f} mean_similarity {mean_sim:.4f}")
    print(f"wrote {paths['eval']}, {paths['summary']}, {paths['prune']}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = _resolve(args)
    if args.snr is not None:
        if len(cfg.eval_snrs) != 1:
            print("semstt eval: takes exactly one SNR; use sweep for a grid", file=sys.stderr)
            return EXIT_USAGE
        return _run_eval(args, (cfg.eval_snrs[0],))
    return _run_eval(args, (12.0,))


def _cmd_sweep(args) -> int:
    cfg = _resolve(args)
    return _run_eval(args, cfg.eval_snrs)


def _cmd_stats(args) -> int:
    cfg = _resolve(args)
    corpus = _load_corpus(cfg)
    model = _load_model(cfg, args, "stage2.ckpt")
    check_compatible(model, corpus)
    reports = []
    for s in corpus.split("test"):
        ids, _, _ = greedy_transcribe(model, s)
        reports.append(prune_steps(ids)[1])
    stats = savings_stats(reports)
    _write_resolved(cfg, "stats")
    print(f"raw {stats['raw_steps']} -> kept {stats['kept_steps']} steps; "
          f"saved {stats['saved_fraction']:.3f} "
          f"(eos {stats['eos_fraction']:.3f}, specials {stats['special_fraction']:.3f})")
    return EXIT_OK


def _cmd_params(args) -> int:
    cfg = _resolve(args)
    if args.checkpoint:
        model = _load_model(cfg, args, "stage2.ckpt")
    else:
        model = Model(cfg.model, seed=cfg.seed)
    print(model.count_params())
    return EXIT_OK


_COMMANDS = {
    "gen": _cmd_gen,
    "train1": _cmd_train1,
    "train2": _cmd_train2,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "stats": _cmd_stats,
    "params": _cmd_params,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except NumericsError as exc:
        print(f"semstt {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataFormatError, ShapeError, OSError) as exc:
        print(f"semstt {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
