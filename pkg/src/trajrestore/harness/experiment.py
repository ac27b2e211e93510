"""End-to-end experiments: synth -> train -> corrector -> infer -> eval -> report.

A config without a ``[sweep]`` section runs once into ``out_dir``.  Each
non-empty sweep key multiplies the runs (cartesian product, in the order
frame_interval, resolutions, train_per_category, seeds); every run gets its
own subdirectory and the sweep adds ``sweep.csv`` plus a seed-averaged
``plot_data.csv`` at the top level.  Sweep values for ``resolutions`` are
separated by ``|``, e.g. ``16 | 16,24,32 | 24,16``.
"""
from __future__ import annotations

import copy
import csv
import itertools
import os
import platform
import shutil
import traceback
from dataclasses import dataclass, field, replace

import numpy as np

from .. import __version__
from ..imaging import read_image, write_image
from ..metrics import apply_resize_policy, evaluate_set, prediction_path
from ..model import ModelConfig
from ..sampler import SamplerConfig
from ..trainer import (
    TrainRunConfig, apply_corrector, build_schedule, restore_batch, train_drift_corrector, train_run, write_trace,
)
from .checkpoint import write_checkpoint
from .config import config_hash, parse_config_text
from .manifest import parse_manifest
from .report import emit_report, fmt_fixed
from .synth import make_source_dir, synth_dataset

STAGES = ("synth", "train", "corrector", "infer", "eval", "report")
SWEEP_KEYS = ("frame_interval", "resolutions", "train_per_category", "seeds")


class ExperimentError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunSummary:
    out_dir: str
    variant: dict
    lq_psnr: float
    lq_ssim: float
    psnr: float
    ssim: float
    base_psnr: float | None = None
    base_ssim: float | None = None
    reports: dict = field(default_factory=dict)

    @property
    def gain(self):
        return self.psnr - self.lq_psnr


# ------------------------------------------------------------ cfg -> objects

def train_config_from(cfg):
    s, m, e = cfg["schedule"], cfg["model"], cfg["experiment"]
    return TrainRunConfig(
        schedule=build_schedule(s["resolutions"], s["total_epochs"], allow_decreasing=s["allow_decreasing"]),
        frame_interval=m["frame_interval"],
        mode=m["mode"],
        seed=e["seed"],
        batch_size=s["batch_size"],
        steps_per_epoch=s["steps_per_epoch"],
        model=ModelConfig(
            patch_size=m["patch_size"], embed_dim=m["embed_dim"], layers=m["layers"], heads=m["heads"],
            condition_dropout_prob=m["condition_dropout_prob"], anchor_skip=m["anchor_skip"],
            image_size=cfg["dataset"]["image_size"],
        ),
        lr=s["lr"],
        weight_decay=s["weight_decay"],
        epsilon=s["epsilon"],
        warmup_steps=s["warmup_steps"],
        max_grad_norm=s["max_grad_norm"],
        data_mode=s["data_mode"],
        precision=e["precision"],
        threads=e["threads"],
    )


def corrector_config_from(cfg, base_config):
    c, s = cfg["corrector"], cfg["schedule"]
    epochs = c["total_epochs"] or s["total_epochs"]
    resolutions = c["resolutions"] or s["resolutions"]
    return replace(
        base_config,
        schedule=build_schedule(resolutions, epochs, allow_decreasing=s["allow_decreasing"]),
        steps_per_epoch=c["steps_per_epoch"] or s["steps_per_epoch"],
    )


def sampler_config_from(cfg):
    s = cfg["sampler"]
    return SamplerConfig(steps=s["steps"], guidance_scale=s["guidance_scale"], shift=s["shift"], mode=cfg["model"]["mode"])


def apply_overrides(cfg, overrides):
    cfg = copy.deepcopy(cfg)
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg["experiment"][key] = value
    return cfg


# ------------------------------------------------------------------ stages

def ensure_dataset(cfg, data_root):
    """Synthesize (or reuse) the train/test sets; returns (train manifest path, test manifest path)."""
    d = cfg["dataset"]
    if d["train_manifest"] and d["test_manifest"]:
        return d["train_manifest"], d["test_manifest"]
    n_train, n_test, size, seed = d["train_per_category"], d["test_per_category"], d["image_size"], d["seed"]
    cats = d["categories"]
    key = f"seed{seed}_n{n_train}_t{n_test}_s{size}_c{config_hash(','.join(cats))[:8]}"
    root = os.path.join(data_root, key)
    train_m = os.path.join(root, "train", "manifest.tsv")
    test_m = os.path.join(root, "test", "manifest.tsv")
    if os.path.exists(os.path.join(root, "DONE")):
        return train_m, test_m
    if os.path.exists(root):
        shutil.rmtree(root)
    # train and test draw from disjoint clean-image families
    make_source_dir(os.path.join(root, "src_train"), n_train, seed, size, size, stream=7)
    make_source_dir(os.path.join(root, "src_test"), n_test, seed, size, size, stream=8)
    synth_dataset(os.path.join(root, "src_train"), cats, n_train, seed, os.path.join(root, "train"))
    synth_dataset(os.path.join(root, "src_test"), cats, n_test, seed + 1, os.path.join(root, "test"))
    open(os.path.join(root, "DONE"), "w").close()
    return train_m, test_m


def restore_images(images, infer, limit):
    """Run ``infer(stack) -> stack`` on images grouped by working size, undoing the resize policy."""
    work = [apply_resize_policy(img, limit) for img in images]
    out = [None] * len(images)
    groups = {}
    for i, (w, _) in enumerate(work):
        groups.setdefault(w.shape, []).append(i)
    for idx in groups.values():
        res = infer(np.stack([work[i][0] for i in idx]))
        for i, r in zip(idx, res):
            out[i] = work[i][1](r)
    return out


def _write_predictions(manifest, images, pred_dir):
    for e, img in zip(manifest.entries, images):
        p = prediction_path(pred_dir, e)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        write_image(img, p)


def _write_plot_data(path, lq, out, base=None):
    cols = ["category", "lq_psnr", "lq_ssim"] + (["base_psnr", "base_ssim"] if base else []) + ["psnr", "ssim"]
    lines = [",".join(cols)]
    for cat in out.categories:
        row = [cat, fmt_fixed(lq.categories[cat].psnr, 4), fmt_fixed(lq.categories[cat].ssim, 6)]
        if base:
            row += [fmt_fixed(base.categories[cat].psnr, 4), fmt_fixed(base.categories[cat].ssim, 6)]
        row += [fmt_fixed(out.categories[cat].psnr, 4), fmt_fixed(out.categories[cat].ssim, 6)]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_provenance(path, cfg, config_text, overrides, variant):
    lines = [
        f"config_hash={config_hash(config_text)}",
        f"seed={cfg['experiment']['seed']}",
        f"dataset_seed={cfg['dataset']['seed']}",
        f"precision={cfg['experiment']['precision']}",
        f"threads={cfg['experiment']['threads']}",
        f"variant={','.join(f'{k}={v}' for k, v in variant.items())}",
        f"overrides={','.join(f'{k}={v}' for k, v in sorted((overrides or {}).items()) if v is not None)}",
        f"package={__version__}",
        f"python={platform.python_version()}",
        f"numpy={np.__version__}",
        "config=config.cfg",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run_single(cfg, out_dir, data_root, config_text="", overrides=None, variant=None, progress=None):
    """One pipeline pass; artifacts land in ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    variant = variant or {}
    marker = os.path.join(out_dir, "INCOMPLETE")
    with open(marker, "w") as fh:
        fh.write("stage=setup\n")
    with open(os.path.join(out_dir, "config.cfg"), "w") as fh:
        fh.write(config_text)
    write_provenance(os.path.join(out_dir, "provenance.txt"), cfg, config_text, overrides, variant)
    stage = "setup"

    def enter(name):
        nonlocal stage
        stage = name
        with open(marker, "w") as fh:
            fh.write(f"stage={name}\n")
        if progress:
            progress(f"{out_dir}: {name}")

    try:
        enter("synth")
        train_m, test_m = ensure_dataset(cfg, data_root)
        train_man = parse_manifest(train_m)
        test_man = parse_manifest(test_m)
        pairs = train_man.load_pairs()

        enter("train")
        tcfg = train_config_from(cfg)
        corr_on = cfg["corrector"]["enabled"]
        disjoint = corr_on and cfg["corrector"]["split"] == "disjoint"
        base_pairs = pairs[0::2] if disjoint else pairs
        base = train_run(tcfg, base_pairs)
        meta = {"seed": tcfg.seed, "steps": len(base.trace), "config_hash": config_hash(config_text), "role": "base"}
        write_checkpoint(base.params, base.model_config, os.path.join(out_dir, "base.vbck"), meta, base.optimizer)
        write_trace(base.trace, os.path.join(out_dir, "trace.csv"))

        corrector = None
        if corr_on:
            enter("corrector")
            ccfg = corrector_config_from(cfg, tcfg)
            corr_pairs = pairs[1::2] if disjoint else pairs
            corrector = train_drift_corrector(base, ccfg, corr_pairs, sampler_config_from(cfg), K=cfg["corrector"]["intervals"])
            meta = dict(meta, role="corrector", seed=ccfg.seed + 1, steps=len(corrector.trace))
            write_checkpoint(corrector.params, corrector.model_config, os.path.join(out_dir, "corrector.vbck"), meta, corrector.optimizer)
            write_trace(corrector.trace, os.path.join(out_dir, "corrector_trace.csv"))

        enter("infer")
        limit = cfg["eval"]["resize_limit"]
        scfg = sampler_config_from(cfg)
        lq_images = [read_image(test_man.resolve(e.lq_path)) for e in test_man.entries]
        base_out = restore_images(lq_images, lambda x: restore_batch(base.params, base.model_config, x, scfg, seed=tcfg.seed), limit)
        if corrector is not None:
            _write_predictions(test_man, base_out, os.path.join(out_dir, "pred_base"))
            final = restore_images(base_out, lambda x: apply_corrector(corrector, x), limit)
        else:
            final = base_out
        _write_predictions(test_man, final, os.path.join(out_dir, "pred"))

        enter("eval")
        lq_rep = evaluate_set(test_man.base_dir, test_man)
        out_rep = evaluate_set(os.path.join(out_dir, "pred"), test_man)
        base_rep = evaluate_set(os.path.join(out_dir, "pred_base"), test_man) if corrector is not None else None

        enter("report")
        reports = {}
        for name, rep in (("report", out_rep), ("lq_report", lq_rep), ("base_report", base_rep)):
            if rep is None:
                continue
            emit_report(rep, "csv", os.path.join(out_dir, f"{name}.csv"))
            emit_report(rep, "markdown", os.path.join(out_dir, f"{name}.md"))
            reports[name] = rep
        _write_plot_data(os.path.join(out_dir, "plot_data.csv"), lq_rep, out_rep, base_rep)
    except Exception as exc:
        with open(marker, "w") as fh:
            fh.write(f"stage={stage}\ncause={type(exc).__name__}: {exc}\n\n{traceback.format_exc()}")
        raise ExperimentError(stage, exc) from exc
    os.remove(marker)
    return RunSummary(
        out_dir, variant, lq_rep.overall_psnr, lq_rep.overall_ssim, out_rep.overall_psnr, out_rep.overall_ssim,
        base_rep.overall_psnr if base_rep else None, base_rep.overall_ssim if base_rep else None, reports,
    )


# ------------------------------------------------------------------ sweeps

def sweep_variants(cfg):
    axes = []
    sw = cfg["sweep"]
    if sw["frame_interval"]:
        axes.append([("frame_interval", v) for v in sw["frame_interval"]])
    if sw["resolutions"]:
        axes.append([("resolutions", v.strip().replace(" ", "")) for v in sw["resolutions"].split("|") if v.strip()])
    if sw["train_per_category"]:
        axes.append([("train_per_category", v) for v in sw["train_per_category"]])
    if sw["seeds"]:
        axes.append([("seed", v) for v in sw["seeds"]])
    return [dict(combo) for combo in itertools.product(*axes)] if axes else []


def variant_config(cfg, variant):
    cfg = copy.deepcopy(cfg)
    for k, v in variant.items():
        if k == "frame_interval":
            cfg["model"]["frame_interval"] = int(v)
        elif k == "resolutions":
            res = [int(x) for x in v.split(",")]
            cfg["schedule"]["resolutions"] = res
            build_schedule(res, cfg["schedule"]["total_epochs"], allow_decreasing=cfg["schedule"]["allow_decreasing"])
        elif k == "train_per_category":
            cfg["dataset"]["train_per_category"] = int(v)
        elif k == "seed":
            cfg["experiment"]["seed"] = int(v)
    return cfg


def variant_dirname(variant):
    return "_".join(f"{k}-{str(v).replace(',', '-')}" for k, v in variant.items())


def _fmt(x):
    return "" if x is None else fmt_fixed(x, 4)


def write_sweep_tables(out_dir, runs):
    keys = list(runs[0].variant)
    has_base = runs[0].base_psnr is not None
    metric_cols = ["lq_psnr", "psnr", "ssim", "gain"] + (["base_psnr"] if has_base else [])

    def metrics(r):
        vals = [r.lq_psnr, r.psnr, r.ssim, r.gain] + ([r.base_psnr] if has_base else [])
        return vals

    with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys + metric_cols)
        for r in runs:
            w.writerow([str(r.variant[k]) for k in keys] + [_fmt(v) for v in metrics(r)])

    # seed-averaged plot data, one row per non-seed setting
    group_keys = [k for k in keys if k != "seed"]
    groups = {}
    for r in runs:
        groups.setdefault(tuple(str(r.variant[k]) for k in group_keys), []).append(metrics(r))
    with open(os.path.join(out_dir, "plot_data.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((group_keys or ["setting"]) + ["runs"] + metric_cols)
        for g, vals in groups.items():
            mean = np.mean(np.array(vals, dtype=np.float64), axis=0)
            w.writerow(list(g or ("all",)) + [str(len(vals))] + [_fmt(v) for v in mean])


def run_experiment(config_path, out_dir, overrides=None, data_root=None, progress=None):
    """Run the config at ``config_path``; returns a list of RunSummary (one per run)."""
    try:
        with open(config_path) as fh:
            text = fh.read()
        cfg = apply_overrides(parse_config_text(text, source=config_path), overrides)
    except Exception as exc:
        raise ExperimentError("config", exc) from exc
    os.makedirs(out_dir, exist_ok=True)
    data_root = data_root or os.path.join(out_dir, "data")
    variants = sweep_variants(cfg)
    if not variants:
        return [run_single(cfg, out_dir, data_root, text, overrides, {}, progress)]
    marker = os.path.join(out_dir, "INCOMPLETE")
    runs = []
    for v in variants:
        try:
            vcfg = variant_config(cfg, v)
        except Exception as exc:
            with open(marker, "w") as fh:
                fh.write(f"stage=config\ncause={type(exc).__name__}: {exc}\n")
            raise ExperimentError("config", exc) from exc
        try:
            runs.append(run_single(vcfg, os.path.join(out_dir, variant_dirname(v)), data_root, text, overrides, v, progress))
        except ExperimentError as exc:
            with open(marker, "w") as fh:
                fh.write(f"stage={exc.stage}\nrun={variant_dirname(v)}\ncause={exc.cause}\n")
            raise
    write_sweep_tables(out_dir, runs)
    write_provenance(os.path.join(out_dir, "provenance.txt"), cfg, text, overrides, {})
    with open(os.path.join(out_dir, "config.cfg"), "w") as fh:
        fh.write(text)
    if os.path.exists(marker):
        os.remove(marker)
    return runs
