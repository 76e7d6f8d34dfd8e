"""Command-line interface.

Subcommands: gen-data, train, separate, baseline, eval, param-count.
Exit codes: 0 success, 1 any module error (message on stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .audio_io import read_wav, write_wav
from .baseline import MedianConfig, median_separate
from .config import load_run_config, load_synth_spec
from .data import load_dataset, synth_track, write_dataset
from .metrics import evaluate_track, write_report
from .network import MaskSeparator, load_checkpoint, param_count
from .pipeline import separate_samples
from .training import train


def _cmd_gen_data(args):
    spec = load_synth_spec(args.spec)
    tracks = [synth_track(spec, i) for i in range(spec.n_tracks)]
    manifest = write_dataset(tracks, args.out)
    print(f"wrote {len(tracks)} tracks under {args.out} (manifest: {manifest})")
    return 0


def _cmd_train(args):
    net_cfg, train_cfg = load_run_config(args.config)
    dataset = load_dataset(args.data, layout=args.stems_layout)
    pairs = [(mixture, drums) for _, mixture, drums in dataset]
    result = train(pairs, net_cfg, train_cfg, checkpoint_path=args.out)
    print(f"trained {result.epochs} epochs on {len(result.train_track_indices)} tracks "
          f"(validated on {len(result.val_track_indices)})")
    print(f"best validation loss {result.best_val_loss:.6g}"
          + (" (stopped early)" if result.stopped_early else ""))
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics: {result.metrics_path}")
    return 0


def _cmd_separate(args):
    model, stats = load_checkpoint(args.ckpt)
    samples, rate = read_wav(args.infile, allow_other_rate=args.resample_off_ok)
    perc, harm = separate_samples(model, stats, samples, sample_rate=rate)
    write_wav(args.out_perc, perc, rate)
    write_wav(args.out_harm, harm, rate)
    print(f"wrote {args.out_perc} and {args.out_harm}")
    return 0


def _cmd_baseline(args):
    cfg = MedianConfig(l_harm=args.l_harm, l_perc=args.l_perc)
    samples, rate = read_wav(args.infile, allow_other_rate=args.resample_off_ok)
    perc, harm = median_separate(samples, cfg, sample_rate=rate)
    write_wav(args.out_perc, perc, rate)
    write_wav(args.out_harm, harm, rate)
    print(f"wrote {args.out_perc} and {args.out_harm}")
    return 0


def _cmd_eval(args):
    ref_root = Path(args.ref_dir)
    est_root = Path(args.est_dir)
    ids = sorted(
        d.name for d in ref_root.iterdir()
        if d.is_dir() and (d / "drums.wav").exists() and (d / "other.wav").exists()
    )
    if not ids:
        raise FileNotFoundError(f"no track directories with stems under {ref_root}")
    reports = []
    for tid in ids:
        ref_p, _ = read_wav(ref_root / tid / "drums.wav", args.resample_off_ok)
        ref_h, _ = read_wav(ref_root / tid / "other.wav", args.resample_off_ok)
        est_p, _ = read_wav(est_root / tid / "perc.wav", args.resample_off_ok)
        est_h, _ = read_wav(est_root / tid / "harm.wav", args.resample_off_ok)
        reports.append(evaluate_track(est_p, est_h, ref_p, ref_h, track=tid))
    write_report(reports, args.report)
    mean_sdr = sum(r.average.sdr_db for r in reports) / len(reports)
    print(f"evaluated {len(reports)} tracks; mean average SDR {mean_sdr:.2f} dB")
    print(f"report: {args.report}")
    return 0


def _cmd_param_count(args):
    net_cfg, _ = load_run_config(args.config)
    print(param_count(MaskSeparator(net_cfg).store))
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="hpsep",
        description="Harmonic/percussive separation: synthesis, training, "
        "inference, baseline, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic two-stem dataset")
    p.add_argument("--spec", required=True, help="synthesis spec (key = value file)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="fit the mask network on a stem dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", default=None, help="run config (default: shipped)")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--stems-layout", choices=("manifest", "musdb-wav"),
                   default="manifest",
                   help="manifest: follow manifest.tsv; musdb-wav: scan for "
                   "directories holding mixture.wav + drums.wav")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("separate", help="split one mixture with a trained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="infile", required=True, metavar="WAV")
    p.add_argument("--out-perc", required=True, metavar="WAV")
    p.add_argument("--out-harm", required=True, metavar="WAV")
    p.add_argument("--resample-off-ok", action="store_true",
                   help="accept non-44.1kHz input without resampling")
    p.set_defaults(func=_cmd_separate)

    p = sub.add_parser("baseline", help="median-filtering separation, no model")
    p.add_argument("--in", dest="infile", required=True, metavar="WAV")
    p.add_argument("--out-perc", required=True, metavar="WAV")
    p.add_argument("--out-harm", required=True, metavar="WAV")
    p.add_argument("--l-harm", type=int, default=17, help="median length along time")
    p.add_argument("--l-perc", type=int, default=17, help="median length along frequency")
    p.add_argument("--resample-off-ok", action="store_true")
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("eval", help="score estimate WAVs against reference stems")
    p.add_argument("--est-dir", required=True,
                   help="directory of <id>/perc.wav + <id>/harm.wav")
    p.add_argument("--ref-dir", required=True,
                   help="dataset directory of <id>/drums.wav + <id>/other.wav")
    p.add_argument("--report", required=True, help="output CSV path")
    p.add_argument("--resample-off-ok", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("param-count", help="print the trainable parameter total")
    p.add_argument("--config", default=None, help="run config (default: shipped)")
    p.set_defaults(func=_cmd_param_count)

    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"hpsep: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
