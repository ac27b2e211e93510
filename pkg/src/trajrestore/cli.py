"""Command line: ``python -m trajrestore <verb> ...``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .degrade import CATEGORIES
from .harness.checkpoint import read_checkpoint, write_checkpoint
from .harness.config import load_config, parse_config_text
from .harness.experiment import (
    ExperimentError, apply_overrides, corrector_config_from, restore_images, run_experiment, sampler_config_from,
    train_config_from, _write_predictions,
)
from .harness.manifest import parse_manifest
from .harness.report import emit_report
from .harness.synth import make_source_dir, synth_dataset
from .imaging import read_image
from .metrics import aggregate, evaluate_set
from .trainer import apply_corrector, restore_batch, train_drift_corrector, train_run, write_trace


def _globals():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="experiment seed override")
    p.add_argument("--precision", choices=("f32", "f64"), default=argparse.SUPPRESS)
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads (1 = fully serial)")
    return p


def _config(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else parse_config_text("")
    return apply_overrides(cfg, {k: getattr(args, k, None) for k in ("seed", "precision", "threads")})


def cmd_synth(args):
    src = args.source
    if src is None:
        src = os.path.join(args.out, "src")
        make_source_dir(src, args.make_sources or args.n, getattr(args, "seed", 1), args.size, args.size)
    cats = CATEGORIES if args.categories == "all" else [c.strip() for c in args.categories.split(",")]
    m = synth_dataset(src, cats, args.n, getattr(args, "seed", 1), args.out)
    print(f"wrote {len(m)} pairs to {os.path.join(args.out, 'manifest.tsv')}")


def cmd_train(args):
    cfg = _config(args)
    tcfg = train_config_from(cfg)
    pairs = parse_manifest(args.manifest).load_pairs()
    res = train_run(tcfg, pairs, progress=_progress(tcfg.total_steps))
    write_checkpoint(res.params, res.model_config, args.out, {"seed": tcfg.seed, "steps": len(res.trace), "role": "base"}, res.optimizer)
    if args.trace:
        write_trace(res.trace, args.trace)
    print(f"wrote {args.out} after {len(res.trace)} steps, final loss {res.trace[-1].loss:.6g}")


def cmd_train_corrector(args):
    cfg = _config(args)
    base = read_checkpoint(args.base)
    ccfg = corrector_config_from(cfg, train_config_from(cfg))
    pairs = parse_manifest(args.manifest).load_pairs()
    res = train_drift_corrector((base.params, base.model_config), ccfg, pairs, sampler_config_from(cfg), K=cfg["corrector"]["intervals"])
    write_checkpoint(res.params, res.model_config, args.out, {"seed": ccfg.seed + 1, "steps": len(res.trace), "role": "corrector"}, res.optimizer)
    if args.trace:
        write_trace(res.trace, args.trace)
    print(f"wrote {args.out} after {len(res.trace)} steps")


def cmd_infer(args):
    cfg = _config(args)
    base = read_checkpoint(args.checkpoint)
    man = parse_manifest(args.manifest)
    scfg = sampler_config_from(cfg)
    scfg = type(scfg)(scfg.steps, scfg.guidance_scale, scfg.shift, base.model_config.mode)
    limit = cfg["eval"]["resize_limit"]
    images = [read_image(man.resolve(e.lq_path)) for e in man.entries]
    out = restore_images(images, lambda x: restore_batch(base.params, base.model_config, x, scfg, seed=cfg["experiment"]["seed"]), limit)
    if args.corrector:
        corr = read_checkpoint(args.corrector)
        out = restore_images(out, lambda x: apply_corrector((corr.params, corr.model_config), x), limit)
    _write_predictions(man, out, args.out)
    print(f"wrote {len(out)} predictions under {args.out}")


def _write_scores(rows, path):
    with open(path, "w") as fh:
        fh.write("category,name,psnr,ssim\n")
        for cat, name, p, s in rows:
            fh.write(f"{cat},{name},{p!r},{s!r}\n")


def _read_scores(path):
    rows = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            cat, name, p, s = line.rstrip("\n").split(",")
            rows.append((cat, name, float(p), float(s)))
    return rows


def cmd_eval(args):
    rep = evaluate_set(args.pred, args.manifest)
    _write_scores(rep.per_image, args.out)
    for cat, s in rep.categories.items():
        print(f"{cat:8s} n={s.count:3d} psnr={s.psnr:.2f} ssim={s.ssim:.4f}")
    print(f"Average  psnr={rep.overall_psnr:.2f} ssim={rep.overall_ssim:.4f}")


def cmd_report(args):
    rep = aggregate(_read_scores(args.scores))
    sys.stdout.write(emit_report(rep, args.format, args.out))


def cmd_experiment(args):
    overrides = {k: getattr(args, k, None) for k in ("seed", "precision", "threads")}
    runs = run_experiment(args.config, args.out, overrides, data_root=args.data_root, progress=lambda m: print(m, file=sys.stderr, flush=True))
    for r in runs:
        tag = ",".join(f"{k}={v}" for k, v in r.variant.items()) or "run"
        print(f"{tag}: lq {r.lq_psnr:.2f} dB -> {r.psnr:.2f} dB (gain {r.gain:+.2f}), ssim {r.ssim:.4f}")


def _progress(total):
    def show(row):
        if row.step % 100 == 0 or row.step == total - 1:
            print(f"step {row.step}/{total} res {row.resolution} loss {row.loss:.5f} lr {row.lr:.2e}", file=sys.stderr, flush=True)
    return show


def build_parser():
    g = _globals()
    p = argparse.ArgumentParser(prog="trajrestore", parents=[g], description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("synth", parents=[g], help="degrade clean images into a paired dataset")
    s.add_argument("--source", help="directory of clean images (generated when omitted)")
    s.add_argument("--make-sources", type=int, default=0, help="number of generated clean images (default: --n)")
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--categories", default="all")
    s.add_argument("--n", type=int, default=50, help="pairs per category")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("train", parents=[g], help="train a base model")
    s.add_argument("--config")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--trace")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("train-corrector", parents=[g], help="train a drift corrector on a base model's outputs")
    s.add_argument("--config")
    s.add_argument("--base", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--trace")
    s.set_defaults(fn=cmd_train_corrector)

    s = sub.add_parser("infer", parents=[g], help="restore every LQ image of a manifest")
    s.add_argument("--config")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--corrector")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="prediction directory (mirrors the manifest's LQ paths)")
    s.set_defaults(fn=cmd_infer)

    s = sub.add_parser("eval", parents=[g], help="score predictions against a manifest's HQ images")
    s.add_argument("--pred", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="per-image scores CSV")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("report", parents=[g], help="render per-category tables from a scores CSV")
    s.add_argument("--scores", required=True)
    s.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_report)

    s = sub.add_parser("experiment", parents=[g], help="run a config end to end")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--data-root", help="shared dataset cache (default: <out>/data)")
    s.set_defaults(fn=cmd_experiment)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0
