"""Pseudo-temporal clips: linear quality trajectories between two images."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .imaging import as_image, read_image, write_image

DRIFT_INTERVALS = 4


@dataclass
class PseudoClip:
    frames: list
    alphas: list
    kind: str = "base"

    @property
    def T(self):
        return len(self.frames) - 1

    def as_array(self):
        return np.stack(self.frames)


def alpha_schedule(T):
    if T < 1:
        raise ValueError("alpha_schedule: T must be >= 1")
    return [t / T for t in range(T + 1)]


def _interpolate(anchor, target, T, kind):
    anchor = as_image(anchor)
    target = as_image(target)
    if anchor.shape != target.shape:
        raise ValueError(f"clip endpoints differ in shape: {anchor.shape} vs {target.shape}")
    alphas = alpha_schedule(T)
    lo, hi = np.minimum(anchor, target), np.maximum(anchor, target)
    frames = [anchor.copy()]
    for a in alphas[1:-1]:
        # the clamp only removes float round-off, keeping frames convex
        frames.append(np.clip((1.0 - a) * anchor + a * target, lo, hi))
    frames.append(target.copy())
    return PseudoClip(frames, alphas, kind)


def build_pseudo_clip(lq, hq, T):
    return _interpolate(lq, hq, T, "base")


def build_drift_clip(base_output, hq, K=DRIFT_INTERVALS):
    return _interpolate(base_output, hq, K, "drift")


def clip_frames_batch(anchors, targets, T):
    """Vectorized clip construction: (B, H, W, C) x2 -> (B, T+1, H, W, C).

    Endpoints are copied, not interpolated, so they stay bit-exact.
    """
    a = np.asarray(alpha_schedule(T), dtype=anchors.dtype)[None, :, None, None, None]
    out = (1.0 - a) * anchors[:, None] + a * targets[:, None]
    np.clip(out, np.minimum(anchors, targets)[:, None], np.maximum(anchors, targets)[:, None], out=out)
    out[:, 0] = anchors
    out[:, -1] = targets
    return out


def write_clip(clip, directory, sources=("", "")):
    """Write frames as ``f000.png ...`` plus a one-line ``clip.meta`` file."""
    os.makedirs(directory, exist_ok=True)
    width = max(3, len(str(clip.T)))
    for t, frame in enumerate(clip.frames):
        write_image(frame, os.path.join(directory, f"f{t:0{width}d}.png"))
    with open(os.path.join(directory, "clip.meta"), "w") as fh:
        fh.write(f"T={clip.T}\tkind={clip.kind}\tanchor={sources[0]}\ttarget={sources[1]}\n")


def read_clip(directory):
    with open(os.path.join(directory, "clip.meta")) as fh:
        fields = dict(part.split("=", 1) for part in fh.readline().rstrip("\n").split("\t"))
    T = int(fields["T"])
    width = max(3, len(str(T)))
    frames = [read_image(os.path.join(directory, f"f{t:0{width}d}.png")) for t in range(T + 1)]
    return PseudoClip(frames, alpha_schedule(T), fields.get("kind", "base"))
