"""Command-line interface.

Exit codes: 0 success, 1 input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import InputError, NumericalError
from . import complexity as cx
from . import features as ft
from . import formants as fm
from . import pipeline as pl
from .alignment import dtw_align, save_alignment
from .warping import equalize_corpus


def _config_from_args(args) -> pl.AnalysisConfig:
    cfg = pl.AnalysisConfig()
    for name in ("order", "alpha", "q_main", "q_formant", "seed", "sigma"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    return cfg


def cmd_analyze(args):
    cfg = _config_from_args(args)
    clip = ft.read_wav(args.wav)
    specs = ft.stft_analyze(clip, cfg.frame_shift, cfg.frame_len)
    if args.kind == "logspec":
        ft.save_features(args.output, specs)
    else:
        ft.save_features(args.output, ft.mcep_analyze(specs, order=cfg.order, alpha=cfg.alpha))


def cmd_formants(args):
    cfg = _config_from_args(args)
    clip = ft.read_wav(args.wav)
    track = fm.track_formants(clip, cfg.frame_shift, cfg.frame_len,
                              order=cfg.lpc_order, preemphasis=cfg.preemphasis)
    fm.save_formant_track(args.output, track)


def cmd_align(args):
    src = ft.load_features(args.src)
    tgt = ft.load_features(args.tgt)
    path, _ = dtw_align(src, tgt)
    save_alignment(args.output, path)


def cmd_equalize(args):
    from pathlib import Path
    cfg = _config_from_args(args)
    manifest = pl.load_manifest(args.manifest)
    pairs = pl.collect_training_pairs(manifest, cfg)
    eq = equalize_corpus(pairs)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    def pair_seq(x, y):
        return ft.FeatureSequence(np.hstack([x[:, 1:], y[:, 1:]]),
                                  frame_shift=cfg.frame_shift, kind=ft.KIND_MCEP,
                                  sample_rate=cfg.sample_rate, alpha=cfg.alpha, order=cfg.order)

    raw_x = np.array([p.mcep_x for p in pairs])
    raw_y = np.array([p.mcep_y for p in pairs])
    ft.save_features(out / "pairs_raw.vcf1", pair_seq(raw_x, raw_y),
                     extra_meta={"dx": cfg.order})
    ft.save_features(out / "pairs_equalized.vcf1", pair_seq(eq.source_mceps, eq.target_mceps),
                     extra_meta={"dx": cfg.order})
    with open(out / "report.json", "w") as f:
        json.dump(eq.report(), f, indent=2)
        f.write("\n")


def cmd_train(args):
    cfg = _config_from_args(args)
    manifest = pl.load_manifest(args.manifest)
    bundle = pl.train(manifest, cfg)
    pl.save_model(args.output, bundle, covariances_external=args.external_covariances)


def cmd_convert(args):
    bundle = pl.load_model(args.model)
    clip = ft.read_wav(args.wav)
    converted = pl.convert_utterance(clip, bundle)
    ft.save_features(args.output, converted.mceps)
    if args.wav_out:
        audio = pl.resynthesize(converted.logspecs,
                                frame_len_s=bundle.config.frame_len)
        ft.write_wav(args.wav_out, audio)


def cmd_evaluate(args):
    bundle = pl.load_model(args.model)
    manifest = pl.load_manifest(args.manifest)
    report = pl.evaluate(bundle, manifest)
    with open(args.output, "w") as f:
        json.dump(report, f, indent=2)
        f.write("\n")


def _parse_resolution(text: str) -> tuple:
    try:
        rows, cols = text.lower().split("x")
        return int(rows), int(cols)
    except ValueError:
        raise InputError(f"resolution must look like 200x200, got {text!r}")


def cmd_complexity(args):
    seq, meta = ft.load_features(args.pairs, return_meta=True)
    dx = args.dx if args.dx is not None else meta.get("dx")
    if dx is None:
        dx = seq.dim // 2
    dx = int(dx)
    if not 0 < dx < seq.dim:
        raise InputError(f"pair split {dx} outside the feature dimension {seq.dim}")
    grid = cx.complexity_grid(seq.frames[:, :dx], seq.frames[:, dx:],
                              sigma=args.sigma, resolution=_parse_resolution(args.res))
    cx.save_grid(args.output, grid)
    if args.pgm:
        cx.render_pgm(args.pgm, grid)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="formeq",
        description="Voice conversion with formant equalization by dynamic frequency warping")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="extract features from a wav into a VCF1 file")
    p.add_argument("wav")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--kind", choices=["mcep", "logspec"], default="mcep")
    p.add_argument("--order", type=int)
    p.add_argument("--alpha", type=float)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("formants", help="track formants from a wav into a CSV file")
    p.add_argument("wav")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_formants)

    p = sub.add_parser("align", help="DTW-align two VCF1 feature files")
    p.add_argument("src")
    p.add_argument("tgt")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("equalize", help="equalize a parallel corpus and dump pair files")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_equalize)

    p = sub.add_parser("train", help="train a conversion model on a parallel corpus")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--q", dest="q_main", type=int)
    p.add_argument("--formant-q", dest="q_formant", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--external-covariances", action="store_true",
                   help="store covariances in a binary sidecar next to the model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("convert", help="convert a source wav with a trained model")
    p.add_argument("wav")
    p.add_argument("model")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--wav", dest="wav_out", default=None,
                   help="also resynthesize a debug wav (magnitude-only phase)")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("evaluate", help="objective report on a parallel test manifest")
    p.add_argument("model")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("complexity", help="mapping-complexity grid from a pairs VCF1 file")
    p.add_argument("pairs")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--sigma", type=float, default=cx.DEFAULT_SIGMA)
    p.add_argument("--res", default="200x200")
    p.add_argument("--dx", type=int, default=None,
                   help="source dimension of each stacked pair row")
    p.add_argument("--pgm", default=None, help="also render an 8-bit PGM preview")
    p.set_defaults(func=cmd_complexity)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (InputError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (NumericalError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
