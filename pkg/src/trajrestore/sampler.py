"""Trajectory generation: timestep shift, classifier-free guidance, Euler flow integration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import predict
from .sequence import PseudoClip, alpha_schedule


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    guidance_scale: float = 5.0
    shift: float = 5.0
    mode: str = "regress"

    def validate(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.guidance_scale < 0:
            raise ValueError("guidance_scale must be >= 0")
        if self.shift <= 0:
            raise ValueError("shift must be > 0")
        if self.mode not in ("regress", "flow"):
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        return self


def shift_timesteps(ts, shift):
    """t' = s*t / (1 + (s-1)*t): monotone, fixes 0 and 1."""
    if shift <= 0:
        raise ValueError("shift must be > 0")
    ts = np.asarray(ts, dtype=np.float64)
    if shift == 1.0:
        return ts.copy()
    out = np.clip(shift * ts / (1.0 + (shift - 1.0) * ts), 0.0, 1.0)
    # pin the fixed points exactly; round-off can move t=1 by an ulp
    return np.where(ts == 1.0, 1.0, out)


def cfg_combine(uncond, cond, scale):
    uncond = np.asarray(uncond)
    cond = np.asarray(cond)
    if uncond.shape != cond.shape:
        raise ValueError(f"cfg_combine: shape mismatch {uncond.shape} vs {cond.shape}")
    if scale == 1.0:
        return cond.copy()
    if scale == 0.0:
        return uncond.copy()
    return uncond + scale * (cond - uncond)


def flow_time_grid(steps, shift):
    """Flow times 0 (noise) -> 1 (data); the shift acts on the noise level 1 - tau."""
    noise_levels = shift_timesteps(1.0 - np.arange(steps + 1) / steps, shift)
    return 1.0 - noise_levels


def _check(x, where):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values during sampling ({where})")
    return x


def integrate_flow(velocity, x0, steps, shift):
    """Euler integration of ``velocity(x, tau)`` along the shifted grid."""
    taus = flow_time_grid(steps, shift)
    x = x0.copy()
    for k in range(steps):
        v = _check(np.asarray(velocity(x, taus[k])), f"step {k}")
        x = _check(x + (taus[k + 1] - taus[k]) * v, f"step {k}")
    return x


def sample_batch(params, model_config, anchors, config, rng, velocity_fn=None):
    """Generate clips (B, F, H, W, C) for a batch of anchors; values clamped to [0, 1].

    ``velocity_fn(anchors, x, tau) -> velocity`` replaces the model in flow mode
    (used for analytic oracles).
    """
    config.validate()
    anchors = np.asarray(anchors)
    if anchors.ndim == 3:
        anchors = anchors[None]
    if config.mode == "regress":
        if model_config.mode != "regress":
            raise ValueError("sampler mode does not match model mode")
        out = _check(predict(params, model_config, anchors), "regress forward")
        return np.clip(out, 0.0, 1.0)

    b, h, w, c = anchors.shape
    f = model_config.frame_count
    dtype = np.float64 if velocity_fn is not None else params["out.w"].dtype
    x0 = rng.standard_normal((b, f, h, w, c)).astype(dtype)
    g = config.guidance_scale

    if velocity_fn is None:
        if model_config.mode != "flow":
            raise ValueError("sampler mode does not match model mode")

        def velocity_fn(a, x, tau):
            if g == 1.0:
                return predict(params, model_config, a, tau=tau, noisy_clip=x)
            both = predict(
                params, model_config,
                np.concatenate([a, a]), tau=tau, noisy_clip=np.concatenate([x, x]),
                cond_mask=np.concatenate([np.zeros(len(a)), np.ones(len(a))]),
            )
            return cfg_combine(both[:len(a)], both[len(a):], g)

    x = integrate_flow(lambda x, tau: velocity_fn(anchors, x, tau), x0, config.steps, config.shift)
    return np.clip(x, 0.0, 1.0)


def sample_clip(params, model_config, anchor, config, rng, velocity_fn=None):
    """Single-anchor convenience wrapper returning a PseudoClip."""
    frames = sample_batch(params, model_config, np.asarray(anchor)[None], config, rng, velocity_fn)[0]
    T = frames.shape[0] - 1
    return PseudoClip([fr.astype(np.float64) for fr in frames], alpha_schedule(T), "base")


def last_frames(params, model_config, anchors, config, rng, batch_size=16):
    """Restoration outputs (the final generated frame) for a stack of anchors."""
    outs = []
    for i in range(0, len(anchors), batch_size):
        outs.append(sample_batch(params, model_config, anchors[i:i + batch_size], config, rng)[:, -1])
    return np.concatenate(outs).astype(np.float64) if outs else np.zeros((0,) + tuple(np.shape(anchors)[1:]))
