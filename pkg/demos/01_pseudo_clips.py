"""
Restoration as a clip
=====================

A degraded image and its clean original are the first and last frames of a
short clip. The frames in between are straight-line blends, so a model that
learns to roll the clip forward learns to restore.

Run:  python demos/01_pseudo_clips.py [out_dir]
"""
import os
import sys

import numpy as np

from trajrestore.degrade import apply_recipe, sample_recipe
from trajrestore.harness.synth import make_clean_image
from trajrestore.imaging import write_image
from trajrestore.sequence import build_drift_clip, build_pseudo_clip

out_dir = sys.argv[1] if len(sys.argv) > 1 else "demo_out/clips"
os.makedirs(out_dir, exist_ok=True)

# a clean procedural image and a coupled low-light + blur + noise version of it
rng = np.random.default_rng(0)
hq = make_clean_image(rng, 48, 48)
recipe = sample_recipe("L+B+N", rng)
lq = apply_recipe(hq, recipe)
print("recipe:", [s.kind for s in recipe.steps])

# T = 8 intervals gives 9 frames; alphas run 0 .. 1 in equal steps
clip = build_pseudo_clip(lq, hq, 8)
print("alphas:", clip.alphas)
assert np.array_equal(clip.frames[0], lq) and np.array_equal(clip.frames[-1], hq)

# every frame stays inside the per-pixel box spanned by the endpoints
lo, hi = np.minimum(lq, hq), np.maximum(lq, hq)
print("inside the endpoint box:", all(np.all((f >= lo) & (f <= hi)) for f in clip.frames))

# lay the frames side by side in one strip
write_image(np.concatenate(clip.frames, axis=1), os.path.join(out_dir, "base_clip.png"))

# a drift clip is the same construction, anchored on a model output with K = 4
rough = np.clip(hq + 0.08 * rng.normal(size=hq.shape), 0, 1)
drift = build_drift_clip(rough, hq)
write_image(np.concatenate(drift.frames, axis=1), os.path.join(out_dir, "drift_clip.png"))
print("wrote", out_dir)
