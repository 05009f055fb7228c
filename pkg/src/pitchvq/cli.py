"""Command-line entry points for the full pipeline.

One binary, five subcommands: `train`, `reconstruct`, `export-codes`,
`eval`, and `synth-corpus`.  Values from --config files can be overridden
by individual flags (the flag wins), and the effective config is echoed
into the output directory.  Commands that take a checkpoint refuse to run
against a config whose architecture hash differs from the one embedded in
the checkpoint.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.  The PITCHVQ_WORKERS environment variable caps evaluation
worker processes.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .audio import Waveform, write_wav
from .config import RunConfig, load_config, parse_config, write_config
from .corpus import load_corpus
from .errors import ConfigError, DataError, NumericError, PitchVQError, ShapeError
from .evaluate import evaluate_corpus
from .quantize import write_codes
from .synth import generate_corpus
from .training import (
    TrainState,
    checkpoint_config,
    load_checkpoint,
    prepare_utterance,
    read_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pitchvq",
        description="Train and exercise the pitch-aware waveform autoencoder.",
        epilog="Set PITCHVQ_WORKERS to cap evaluation worker processes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_ckpt=False):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--mode", choices=("baseline", "extended"),
                       help="overrides the config mode")
        p.add_argument("--out", required=True, help="output directory")
        if needs_ckpt:
            p.add_argument("--ckpt", required=True, help="checkpoint file")
        p.add_argument("--manifest", required=True, help="corpus manifest CSV")
        p.add_argument("--speakers", required=True,
                       help="speaker embedding table")

    p = sub.add_parser("train", help="train a model from a manifest")
    common(p)
    p.add_argument("--resume", action="store_true",
                   help="continue from the checkpoint in --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct",
                       help="regenerate each utterance through the codes")
    common(p, needs_ckpt=True)
    p.add_argument("--greedy", action="store_true",
                   help="pick argmax samples instead of sampling")
    p.add_argument("--temperature", type=float, default=1.0)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("export-codes",
                       help="write discrete code indices per utterance")
    common(p, needs_ckpt=True)
    p.set_defaults(func=cmd_export_codes)

    p = sub.add_parser("eval", help="log-F0 RMSE report on a test manifest")
    common(p, needs_ckpt=True)
    p.add_argument("--workers", type=int,
                   help="evaluation processes (default: PITCHVQ_WORKERS)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth-corpus",
                       help="generate the deterministic synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-utts", type=int, default=48)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_corpus)
    return parser


def _flag_overrides(args) -> dict[str, str]:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "mode", None) is not None:
        overrides["mode"] = args.mode
    return overrides


def _checkpoint_state(args) -> TrainState:
    """Load the checkpoint, honoring --config/--seed/--mode if given.

    Bare flag overrides apply on top of the checkpoint's embedded config;
    an explicit --config must match the checkpoint's architecture.
    """
    cfg = None
    overrides = _flag_overrides(args)
    if args.config is not None:
        cfg = load_config(args.config, overrides)
    elif overrides:
        stored = checkpoint_config(read_checkpoint(args.ckpt))
        lines = "\n".join(f"{k} = {v}" for k, v in overrides.items())
        cfg = parse_config(lines, base=stored)
    return load_checkpoint(args.ckpt, cfg)


def _load_utterances(args, cfg: RunConfig):
    return load_corpus(
        args.manifest, args.speakers,
        sample_rate=cfg.sample_rate, frame_shift=cfg.frame_shift,
    )


def _echo_config(out_dir: Path, cfg: RunConfig) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(out_dir / "config.txt", cfg)


def cmd_train(args) -> int:
    cfg = load_config(args.config, _flag_overrides(args))
    utterances = _load_utterances(args, cfg)
    print(f"training {cfg.mode} model on {len(utterances)} utterances "
          f"(arch {cfg.arch_hash()})")
    train(cfg, utterances, args.out, resume=args.resume, log=print)
    print(f"done: checkpoint in {args.out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    state = _checkpoint_state(args)
    cfg = state.cfg
    out_dir = Path(args.out)
    _echo_config(out_dir, cfg)
    utterances = _load_utterances(args, cfg)
    for index, utt in enumerate(utterances):
        prep = prepare_utterance(utt, cfg)
        rng = np.random.default_rng([cfg.seed, index])
        result = state.model.reconstruct(
            prep.samples, prep.f0_stream, prep.cond, rng,
            temperature=args.temperature, greedy=args.greedy,
        )
        path = out_dir / f"{utt.id}.wav"
        write_wav(path, Waveform(result.samples, cfg.sample_rate))
        print(f"wrote {path}")
    return EXIT_OK


def cmd_export_codes(args) -> int:
    state = _checkpoint_state(args)
    cfg = state.cfg
    out_dir = Path(args.out)
    _echo_config(out_dir, cfg)
    utterances = _load_utterances(args, cfg)
    wave_entries, f0_entries = [], []
    for index, utt in enumerate(utterances):
        prep = prepare_utterance(utt, cfg)
        rng = np.random.default_rng([cfg.seed, index])
        idx_wave, idx_f0 = state.model.encode_codes(
            prep.samples, prep.f0_stream, rng
        )
        wave_entries.append((utt.id, idx_wave))
        if idx_f0 is not None:
            f0_entries.append((utt.id, idx_f0))
    write_codes(out_dir / "wave_codes.txt", wave_entries)
    if f0_entries:
        write_codes(out_dir / "f0_codes.txt", f0_entries)
    print(f"exported codes for {len(wave_entries)} utterances to {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    state = _checkpoint_state(args)
    out_dir = Path(args.out)
    _echo_config(out_dir, state.cfg)
    report = evaluate_corpus(
        args.ckpt, args.manifest, args.speakers,
        workers=args.workers, seed=state.cfg.seed,
    )
    if not report.utterances:
        for uid, message in report.failures:
            print(f"failed {uid}: {message}", file=sys.stderr)
        raise DataError("every utterance failed evaluation")
    report.write_csv(out_dir / "eval_report.csv")
    report.write_utterance_csv(out_dir / "eval_utterances.csv")
    print(report.summary())
    return EXIT_OK


def cmd_synth_corpus(args) -> int:
    utterances = generate_corpus(args.out, n_utts=args.n_utts, seed=args.seed)
    print(f"wrote {len(utterances)} utterances to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PitchVQError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
