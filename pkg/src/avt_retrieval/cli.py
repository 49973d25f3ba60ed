"""Command line: synth, dedup, mine, train, eval, gradcheck.

Exit status is 0 on success, 1 on a runtime failure (one ``error: ...`` line
on stderr) and 2 on a usage error. Every subcommand that writes files also
writes ``<subcommand>_config.json`` with the exact argv and resolved flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import gradcheck, pipeline, retrieval, synth
from .avt import TEXT_COMPONENTS
from .embedding_io import CheckpointError, LoadError, load_checkpoint, load_clips, load_dataset, save_checkpoint, \
    save_clips
from .model import AV_FUSIONS, TEXT_FUSIONS, ModelConfig, init_params
from .numerics import NumericsError
from .trainer import TrainConfig, train

log = logging.getLogger("avt_retrieval")

PRESETS = {"default": synth.SynthConfig, "learnable": synth.learnable_config, "modality": synth.modality_config}


class CliError(RuntimeError):
    pass


def _echo(out_dir: Path, name: str, argv, args) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    flags = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    with open(out_dir / f"{name}_config.json", "w", encoding="utf-8") as fh:
        json.dump({"argv": list(argv), "flags": flags}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _clip_records(path):
    return [pipeline.ClipRecord(cid, pipeline.clip_embedding(frames), caption)
            for cid, frames, caption in load_clips(path)]


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args, argv):
    out = Path(args.out)
    if args.clips:
        ids, frames, captions = pipeline.random_clips(args.clips, dim=args.dim or 64, seed=args.seed)
        save_clips(ids, frames, captions, out)
        print(f"wrote {len(ids)} clips to {out}")
    else:
        overrides = {"n_train": args.triplets, "n_test": args.test_triplets, "gallery_extra": args.gallery_extra,
                     "noise": args.noise}
        for flag, key in (("dim", "dim"), ("audio_dim", "audio_dim"), ("frames", "n_frames"),
                          ("tokens", "n_audio_tokens")):
            if getattr(args, flag) is not None:
                overrides[key] = getattr(args, flag)
        config = PRESETS[args.preset]().replace(**overrides)
        synth.synth_generate(config, args.seed, out)
        print(f"wrote {config.n_train + config.n_test} triplets, "
              f"{config.n_train + config.n_test + config.gallery_extra} gallery clips to {out}")
    _echo(out, "synth", argv, args)


def cmd_dedup(args, argv):
    records = _clip_records(args.data)
    kept = pipeline.dedup(records, args.theta_v, args.theta_a)
    out = Path(args.out)
    _write_json(out / "dedup.json", {"input": len(records), "retained": [r.id for r in kept],
                                     "removed": len(records) - len(kept),
                                     "theta_v": args.theta_v, "theta_a": args.theta_a})
    _echo(out, "dedup", argv, args)
    print(f"retained {len(kept)} of {len(records)} clips")


def cmd_mine(args, argv):
    records = _clip_records(args.data)
    if args.dedup:
        records = pipeline.dedup(records, args.theta_v, args.theta_a)
    sim, diff = args.visual_similar, args.visual_differ
    bands = pipeline.BandConfig((pipeline.Band(pipeline.VISUAL_SIMILAR, tuple(sim[:2]), tuple(sim[2:])),
                                 pipeline.Band(pipeline.VISUAL_DIFFER, tuple(diff[:2]), tuple(diff[2:]))),
                                args.combine)
    pairs = pipeline.mine_pairs(records, bands)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "pairs.jsonl", "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_row(), sort_keys=True) + "\n")
    _echo(out, "mine", argv, args)
    counts = {b: sum(p.band == b for p in pairs) for b in pipeline.BANDS}
    print(f"mined {len(pairs)} pairs from {len(records)} clips: " + ", ".join(f"{k}={v}" for k, v in counts.items()))


def cmd_train(args, argv):
    dataset = load_dataset(args.data, workers=args.threads)
    triplets = dataset.split(args.split)
    if not triplets:
        raise CliError(f"no triplets in split {args.split!r}")
    first = triplets[0]
    model_config = ModelConfig(dim=first.query_frames.shape[1], audio_dim=first.query_audio.shape[1],
                               n_queries=args.queries, n_layers=args.layers, avt_hidden=args.hidden,
                               av_fusion=args.av_fusion, text_fusion=args.text_fusion,
                               train_resampler=not args.freeze_resampler)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, seed=args.seed,
                         clip_norm=args.clip_norm)
    out = Path(args.out)
    _echo(out, "train", argv, args)
    params, train_log, step = train(triplets, config, init_params(model_config, args.seed))
    save_checkpoint(params, out / "checkpoint.avck", step)
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for i, loss in enumerate(train_log.losses):
            fh.write(json.dumps({"step": i + 1, "loss": loss}) + "\n")
    means = train_log.epoch_mean_losses(len(triplets) // config.batch_size)
    print(f"trained {step} steps; epoch mean loss {means[0]:.4f} -> {means[-1]:.4f}; "
          f"checkpoint {out / 'checkpoint.avck'}")


def cmd_eval(args, argv):
    ckpt = Path(args.ckpt)
    if not ckpt.is_file():
        raise CliError(f"checkpoint not found: {ckpt}")
    params, _ = load_checkpoint(ckpt)
    dataset = load_dataset(args.data, workers=args.threads)
    triplets = dataset.split(args.split)
    if not triplets:
        raise CliError(f"no triplets in split {args.split!r}")
    table = retrieval.evaluate(triplets, dataset.eval_gallery(args.split), params, drop=tuple(args.drop))
    table = table.rounded()
    out = Path(args.out) if args.out else ckpt.parent
    _echo(out, "eval", argv, args)
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        fh.write(table.to_json())
    print(table.format_table())


def cmd_gradcheck(args, argv):
    reports = gradcheck.run_suite(range(args.seeds), tol=args.tol)
    for r in reports:
        print(r)
    failed = [r for r in reports if not r.passed]
    if failed:
        raise CliError(f"gradient check failed for {len(failed)} of {len(reports)} ops")
    print(f"all {len(reports)} gradient checks passed")


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="worker/BLAS thread cap (1 = fully serial)")
    common.add_argument("--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="avt-retrieval", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic triplet or clip dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--triplets", type=int, default=512, help="training triplets")
    p.add_argument("--test-triplets", type=int, default=128)
    p.add_argument("--gallery-extra", type=int, default=128)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--preset", choices=sorted(PRESETS), default="default")
    p.add_argument("--dim", type=int)
    p.add_argument("--audio-dim", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--tokens", type=int)
    p.add_argument("--clips", type=int, default=0, help="write N pipeline clips instead of triplets")
    p.set_defaults(func=cmd_synth)

    for name, func, helptext in (("dedup", cmd_dedup, "drop near-duplicate clips"),
                                 ("mine", cmd_mine, "mine two-band candidate pairs")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--theta-v", type=float, default=0.92)
        p.add_argument("--theta-a", type=float, default=0.96)
        if name == "mine":
            p.add_argument("--dedup", action="store_true", help="run dedup before mining")
            p.add_argument("--visual-similar", type=float, nargs=4, default=[0.92, 0.96, 0.0, 0.85],
                           metavar=("V_LO", "V_HI", "A_LO", "A_HI"))
            p.add_argument("--visual-differ", type=float, nargs=4, default=[0.85, 0.88, 0.95, 1.0],
                           metavar=("V_LO", "V_HI", "A_LO", "A_HI"))
            p.add_argument("--combine", choices=("and", "or"), default="and")
        p.set_defaults(func=func)

    p = sub.add_parser("train", parents=[common], help="train the fusion model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="run")
    p.add_argument("--split", default="train")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--queries", type=int, default=8)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--av-fusion", choices=AV_FUSIONS, default="gft")
    p.add_argument("--text-fusion", choices=TEXT_FUSIONS, default="avt")
    p.add_argument("--freeze-resampler", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="rank a split against its gallery")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out")
    p.add_argument("--split", default="test")
    p.add_argument("--drop", nargs="*", choices=TEXT_COMPONENTS, default=[], help="ablate text components")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every gradient")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    if args.threads < 1:
        parser.print_usage(sys.stderr)
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            args.func(args, argv)
    except (CliError, LoadError, CheckpointError, NumericsError, ValueError, OSError, ArithmeticError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())
