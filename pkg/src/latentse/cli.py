"""Command-line interface.

Subcommands mirror the pipeline stages: synth builds the synthetic
corpus; train-cvae / train-nvae pre-train the clean-speech and noise
autoencoders; train-nsvae trains the mixture encoder; train-gan runs the
adversarial refinement; enhance and eval apply a trained checkpoint;
gradcheck runs the finite-difference verification suite.

Configuration comes from a JSON file (--config, or the LATENTSE_CONFIG
environment variable), overridden by repeated --set key=value flags;
unknown keys are rejected and the effective config is echoed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .data import CorpusConfig, Manifest, build_corpus
from .metrics import aggregate, format_report
from .objectives import ObjectiveConfig
from .pipeline import (
    TrainConfig,
    enhance,
    evaluate,
    fit_feature_norm,
    init_bundle,
    load_checkpoint,
    paired_segments,
    save_checkpoint,
    toy_train_config,
    train_adversarial,
    train_nsvae,
    train_vae,
)
from .signal import read_wav, resample, write_wav

CONFIG_ENV_VAR = "LATENTSE_CONFIG"


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _load_overrides(config_path, set_args) -> dict:
    values = {}
    path = config_path or os.environ.get(CONFIG_ENV_VAR)
    if path:
        with open(path) as f:
            values.update(json.load(f))
    for item in set_args or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        values[key.strip()] = _parse_value(raw.strip())
    return values


def _apply_overrides(base, values: dict):
    """Rebuild a dataclass with overrides; unknown keys are an error."""
    known = {f.name for f in dataclasses.fields(base)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    fixed = dict(values)
    if "objective" in fixed and isinstance(fixed["objective"], dict):
        fixed["objective"] = ObjectiveConfig(**fixed["objective"])
    if "counts" in known and "counts" in fixed:
        fixed["counts"] = {k: int(v) for k, v in fixed["counts"].items()}
    return dataclasses.replace(base, **fixed)


def _echo_config(cfg):
    print(f"effective config: {json.dumps(dataclasses.asdict(cfg), sort_keys=True, default=str)}")


def _atomic_write_wav(path, wave):
    tmp = str(path) + ".tmp"
    write_wav(tmp, wave)
    os.replace(tmp, str(path))


def _train_config(args) -> TrainConfig:
    base = toy_train_config() if args.preset == "toy" else TrainConfig()
    values = _load_overrides(args.config, args.set)
    if args.seed is not None:
        values["seed"] = args.seed
    cfg = _apply_overrides(base, values)
    _echo_config(cfg)
    return cfg


def _stage_io(args, cfg, require_ckpt: bool):
    """(bundle, norm) from --ckpt, or a fresh bundle for the first stage."""
    if args.ckpt:
        bundle, norm = load_checkpoint(args.ckpt)
    elif require_ckpt:
        raise ValueError("this stage requires --ckpt from the previous stage")
    else:
        bundle, norm = init_bundle(cfg), None
    manifest = Manifest.load(Path(args.corpus) / "manifest.jsonl")
    if norm is None and cfg.normalize_features:
        norm = fit_feature_norm(*paired_segments(manifest.split("train"),
                                                 cfg.segment_frames))
    return bundle, norm, manifest


def _finish_stage(args, cfg, bundle, norm, report):
    report_path = args.report or (str(args.out) + ".report.jsonl")
    report.save(report_path)
    tmp = str(args.out) + ".tmp"
    save_checkpoint(bundle, tmp, norm=norm, seed=cfg.seed)
    os.replace(tmp, str(args.out))
    final = report.epochs[-1] if report.epochs else None
    if final is not None:
        print(f"stage {report.stage}: {len(report.epochs)} epochs, "
              f"final train total {final.train.get('total', float('nan')):.4f}")
    print(f"checkpoint written to {args.out}")


def cmd_synth(args) -> int:
    base = CorpusConfig()
    values = _load_overrides(args.config, args.set)
    if args.seed is not None:
        values["seed"] = args.seed
    cfg = _apply_overrides(base, values)
    _echo_config(cfg)
    manifest = build_corpus(cfg, args.out)
    counts = {split: len(manifest.split(split)) for split in cfg.counts}
    print(f"corpus written to {args.out}: {counts}")
    return 0


def _cmd_train_stage(args, stage: str) -> int:
    cfg = _train_config(args)
    bundle, norm, manifest = _stage_io(args, cfg, require_ckpt=stage != "cvae")
    if stage == "cvae":
        report = train_vae(bundle, manifest, "clean", cfg, norm)
    elif stage == "nvae":
        report = train_vae(bundle, manifest, "noise", cfg, norm)
    elif stage == "nsvae":
        report = train_nsvae(bundle, manifest, cfg, norm)
    else:
        report = train_adversarial(bundle, manifest, cfg, norm)
    _finish_stage(args, cfg, bundle, norm, report)
    return 0


def cmd_enhance(args) -> int:
    bundle, norm = load_checkpoint(args.ckpt)
    wave = read_wav(args.infile, expect_rate=None)
    if wave.sample_rate != 16000:
        if not args.resample:
            raise ValueError(
                f"{args.infile}: sample rate {wave.sample_rate} != 16000 "
                f"(pass --resample to convert)"
            )
        wave = resample(wave, 16000)
    speech, noise_est = enhance(bundle, wave, mode=args.mode, norm=norm)
    _atomic_write_wav(args.out, speech)
    print(f"enhanced ({args.mode}) -> {args.out}")
    if args.noise_out:
        _atomic_write_wav(args.noise_out, noise_est)
        print(f"noise estimate -> {args.noise_out}")
    return 0


def cmd_eval(args) -> int:
    manifest = Manifest.load(Path(args.corpus) / "manifest.jsonl")
    bundle = norm = None
    if args.mode in ("L", "M"):
        if not args.ckpt:
            raise ValueError(f"mode {args.mode} requires --ckpt")
        bundle, norm = load_checkpoint(args.ckpt)
    records = evaluate(bundle, manifest, args.mode, split=args.split, norm=norm)
    print(format_report(aggregate(records)))
    if args.report:
        with open(args.report, "w") as f:
            for r in records:
                f.write(json.dumps(dataclasses.asdict(r)) + "\n")
        print(f"records written to {args.report}")
    return 0


def cmd_gradcheck(args) -> int:
    from .verify import gradient_suite

    seeds = range(args.seed or 0, (args.seed or 0) + args.num_seeds)
    failures = 0
    for name, seed, report in gradient_suite(seeds=seeds, tolerance=args.tolerance):
        status = "PASS" if report.passed else "FAIL"
        print(f"{status} {name} seed={seed} max_rel_err={report.max_rel_error:.3e}")
        failures += 0 if report.passed else 1
    if failures:
        print(f"{failures} gradient checks failed", file=sys.stderr)
        return 1
    print("all gradient checks passed")
    return 0


def _add_common(parser, with_preset: bool = True):
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("--seed", type=int, default=None)
    if with_preset:
        parser.add_argument("--preset", choices=("toy", "full"), default="toy")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentse",
        description="Two-stage latent-representation speech enhancement.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    p.add_argument("--out", required=True)
    _add_common(p, with_preset=False)

    for stage, text in (("cvae", "pre-train the clean-speech autoencoder"),
                        ("nvae", "pre-train the noise autoencoder"),
                        ("nsvae", "train the mixture encoder (stage 1)"),
                        ("gan", "adversarially refine the decoders (stage 2)")):
        p = sub.add_parser(f"train-{stage}", help=text)
        p.add_argument("--corpus", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--ckpt", default=None,
                       help="checkpoint from the previous stage")
        p.add_argument("--report", default=None, help="stage report JSONL path")
        _add_common(p)

    p = sub.add_parser("enhance", help="enhance one WAV file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("L", "M"), default="M")
    p.add_argument("--noise-out", default=None)
    p.add_argument("--resample", action="store_true",
                   help="resample input to 16 kHz instead of failing")

    p = sub.add_parser("eval", help="score a corpus split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--mode", choices=("noisy", "oracle", "L", "M"), required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--report", default=None, help="write EvalRecord JSONL here")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-seeds", type=int, default=10)
    p.add_argument("--tolerance", type=float, default=1e-4)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command.startswith("train-"):
            return _cmd_train_stage(args, args.command.removeprefix("train-"))
        if args.command == "enhance":
            return cmd_enhance(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        parser.error(f"unknown command {args.command!r}")
    except Exception as exc:  # noqa: BLE001 - single CLI failure boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
