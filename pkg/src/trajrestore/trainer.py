"""Curriculum training over pseudo-clips and drift-corrector training."""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import numerics as nx
from .imaging import crop_offsets, down_up, resize, shorter_side_dims
from .model import ModelConfig, init_model, training_loss
from .numerics import OptimizerState, adamw_step, clip_grad_norm, lr_at_step
from .sampler import SamplerConfig, last_frames
from .sequence import DRIFT_INTERVALS, clip_frames_batch


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class CurriculumSchedule:
    stages: tuple  # ((resolution, epochs), ...)

    @property
    def total_epochs(self):
        return sum(e for _, e in self.stages)

    @property
    def resolutions(self):
        return [r for r, _ in self.stages]


def build_schedule(resolutions, total_epochs, allow_decreasing=False):
    """Split ``total_epochs`` evenly across stages; the remainder goes to earlier stages."""
    resolutions = [int(r) for r in resolutions]
    n = len(resolutions)
    if n == 0:
        raise ValueError("schedule needs at least one resolution")
    if any(r < 1 for r in resolutions):
        raise ValueError("resolutions must be positive")
    if not allow_decreasing and any(b <= a for a, b in zip(resolutions, resolutions[1:])):
        raise ValueError(f"resolutions must be strictly increasing: {resolutions}")
    if total_epochs < n:
        raise ValueError(f"total_epochs={total_epochs} is smaller than the number of stages ({n})")
    base, extra = divmod(int(total_epochs), n)
    return CurriculumSchedule(tuple((r, base + (1 if i < extra else 0)) for i, r in enumerate(resolutions)))


@dataclass(frozen=True)
class TrainRunConfig:
    schedule: CurriculumSchedule
    frame_interval: int = 8
    mode: str = "regress"
    seed: int = 42
    manifest: str = ""
    batch_size: int = 4
    steps_per_epoch: int = 10
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 2e-5
    weight_decay: float = 3e-2
    epsilon: float = 1e-10
    warmup_steps: int = 100
    max_grad_norm: float = 0.05
    data_mode: str = "crop"  # "crop": resize shorter side + random crop; "downup": DownUp at full size
    precision: str = "f32"
    threads: int = 1

    def validate(self):
        if self.frame_interval < 1:
            raise ValueError("frame_interval must be >= 1")
        if self.batch_size < 1 or self.steps_per_epoch < 1:
            raise ValueError("batch_size and steps_per_epoch must be >= 1")
        if self.data_mode not in ("crop", "downup"):
            raise ValueError(f"unknown data_mode {self.data_mode!r}")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be f32 or f64")
        return self

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    @property
    def total_steps(self):
        return self.schedule.total_epochs * self.steps_per_epoch

    def model_config(self):
        size = max(self.schedule.resolutions) if self.data_mode == "crop" else self.model.image_size
        return self.model.replace(frame_count=self.frame_interval + 1, image_size=size, mode=self.mode)

    def optimizer(self):
        return OptimizerState(
            base_lr=self.lr, weight_decay=self.weight_decay, epsilon=self.epsilon,
            warmup_steps=self.warmup_steps, max_grad_norm=self.max_grad_norm,
        )


@dataclass
class TraceRow:
    step: int
    stage: int
    resolution: int
    loss: float
    lr: float


@dataclass
class TrainResult:
    params: dict
    model_config: ModelConfig
    trace: list
    optimizer: OptimizerState


def _rng(*key):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in key])))


def prepare_pair(anchor, target, resolution, data_mode, crop_size, rng):
    """Stage-resolution view of one (anchor, target) pair, sharing one crop window."""
    h, w = anchor.shape[:2]
    if data_mode == "crop":
        nh, nw = shorter_side_dims(h, w, resolution)
        a = resize(anchor, nh, nw)
        t = resize(target, nh, nw)
        size = resolution
    else:
        a = down_up(anchor, min(resolution, min(h, w)))
        t = down_up(target, min(resolution, min(h, w)))
        size = crop_size
    row, col = crop_offsets(a.shape[0], a.shape[1], size, rng)
    return a[row:row + size, col:col + size], t[row:row + size, col:col + size]


def _stage_of_step(schedule, steps_per_epoch):
    for i, (r, e) in enumerate(schedule.stages):
        for _ in range(e * steps_per_epoch):
            yield i, r


def train_run(config, pairs, init_params=None, progress=None):
    """Train a fresh model on ``pairs`` (list of (anchor, target) images) under the curriculum.

    Deterministic given ``config.seed``: per-item randomness is keyed by
    (seed, step, item), so the worker count never changes the result.
    """
    config.validate()
    if not pairs:
        raise TrainingError("empty dataset")
    min_side = min(min(a.shape[:2]) for a, _ in pairs)
    mcfg = config.model_config()
    needed = max(config.schedule.resolutions) if config.data_mode == "crop" else mcfg.image_size
    if needed > min_side:
        raise TrainingError(f"crop/resolution {needed} larger than the smallest image side {min_side}")
    dtype = config.dtype
    params = init_params if init_params is not None else init_model(mcfg, config.seed, dtype=dtype)
    opt = config.optimizer().register(params)
    trace = []
    n = len(pairs)
    pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    try:
        for step, (stage, res) in enumerate(_stage_of_step(config.schedule, config.steps_per_epoch)):
            idx = _rng(config.seed, 1, step).integers(0, n, size=config.batch_size)

            def prep(i, _step=step, _res=res, _idx=idx):
                a, t = pairs[_idx[i]]
                return prepare_pair(a, t, _res, config.data_mode, mcfg.image_size, _rng(config.seed, 2, _step, i))

            items = list(pool.map(prep, range(config.batch_size))) if pool else [prep(i) for i in range(config.batch_size)]
            anchors = np.stack([a for a, _ in items]).astype(dtype)
            targets = np.stack([t for _, t in items]).astype(dtype)
            clips = clip_frames_batch(anchors, targets, config.frame_interval)

            for p in params.values():
                p.zero_grad()
            try:
                loss = training_loss(params, mcfg, clips, _rng(config.seed, 3, step))
            except nx.NonFiniteError as exc:
                raise TrainingError(f"non-finite loss at step {step} (stage {stage}, resolution {res})") from exc
            value = float(loss.data)
            nx.backward(loss)
            clip_grad_norm(params, config.max_grad_norm)
            lr = lr_at_step(opt, opt.step_count)
            adamw_step(opt, params, lr=lr)
            trace.append(TraceRow(step, stage, res, value, lr))
            if progress is not None:
                progress(trace[-1])
    finally:
        if pool:
            pool.shutdown()
    return TrainResult(params, mcfg, trace, opt)


def write_trace(trace, path):
    with open(path, "w") as fh:
        fh.write("step,stage,resolution,loss,lr\n")
        for r in trace:
            fh.write(f"{r.step},{r.stage},{r.resolution},{r.loss:.9g},{r.lr:.9g}\n")


def read_trace(path):
    rows = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            s, st, r, loss, lr = line.strip().split(",")
            rows.append(TraceRow(int(s), int(st), int(r), float(loss), float(lr)))
    return rows


def restore_batch(params, model_config, anchors, sampler_config=None, seed=0, batch_size=16):
    """Final-frame restorations for a stack of anchors."""
    sampler_config = sampler_config or SamplerConfig(mode=model_config.mode)
    return last_frames(params, model_config, np.asarray(anchors), sampler_config, _rng(seed, 4), batch_size)


def train_drift_corrector(base, config, pairs, sampler_config=None, K=DRIFT_INTERVALS, base_outputs=None):
    """Fit a fresh same-architecture model on short clips from base outputs to targets.

    ``base`` is the TrainResult (or ``(params, model_config)``) of the base model.
    ``base_outputs`` skips inference when the base restorations are already known.
    Returns the corrector's TrainResult.
    """
    if base is None and base_outputs is None:
        raise TrainingError("drift corrector needs a trained base model")
    if base_outputs is None:
        base_params, base_cfg = (base.params, base.model_config) if isinstance(base, TrainResult) else base
        anchors = np.stack([a for a, _ in pairs])
        drifted = restore_batch(base_params, base_cfg, anchors, sampler_config, seed=config.seed)
    else:
        drifted = list(base_outputs)
        if len(drifted) != len(pairs):
            raise TrainingError(f"{len(drifted)} base outputs for {len(pairs)} pairs")
    targets = [t for _, t in pairs]
    if all(np.array_equal(d, t) for d, t in zip(drifted, targets)):
        warnings.warn("base outputs equal the targets for every pair; the corrector will learn the identity")
    corr_cfg = replace(config, frame_interval=K, mode="regress", seed=config.seed + 1)
    return train_run(corr_cfg, list(zip(drifted, targets)))


def apply_corrector(corrector, outputs, batch_size=16):
    """Last frame of the corrector's trajectory started from each base output."""
    params, cfg = (corrector.params, corrector.model_config) if isinstance(corrector, TrainResult) else corrector
    return restore_batch(params, cfg, outputs, SamplerConfig(mode="regress"), batch_size=batch_size)
