"""Procedural clean images and seeded synthetic LQ/HQ datasets."""
from __future__ import annotations

import os

import numpy as np

from ..degrade import CATEGORIES, apply_recipe, item_seed, sample_recipe
from ..imaging import quantize, read_image, write_image
from .manifest import Entry, Manifest, write_manifest


def make_clean_image(rng, h=32, w=32):
    """A smooth colour gradient with a few flat shapes and an optional stripe texture."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy /= max(h - 1, 1)
    xx /= max(w - 1, 1)
    c0, c1 = rng.uniform(0.15, 0.85, 3), rng.uniform(0.15, 0.85, 3)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(angle) * xx + np.sin(angle) * yy)
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
    img = c0 * (1 - ramp[..., None]) + c1 * ramp[..., None]
    for _ in range(int(rng.integers(2, 5))):
        color = rng.uniform(0.05, 0.95, 3)
        cy, cx = rng.uniform(0, 1, 2)
        ry, rx = rng.uniform(0.1, 0.35, 2)
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) < ry) & (np.abs(xx - cx) < rx)
        else:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1.0
        img[mask] = color
    if rng.random() < 0.5:
        freq = rng.uniform(3, 8)
        theta = rng.uniform(0, np.pi)
        stripes = 0.08 * np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy))
        img = img + stripes[..., None]
    return np.clip(img, 0.0, 1.0)


def make_source_dir(out_dir, count, seed, h=32, w=32, stream=7):
    """Write ``count`` clean PNGs ``src_00000.png ...`` and return their paths.

    Different ``stream`` values give disjoint image families for the same seed.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i in range(count):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream), i])))
        p = os.path.join(out_dir, f"src_{i:05d}.png")
        write_image(make_clean_image(rng, h, w), p)
        paths.append(p)
    return paths


def list_images(directory):
    exts = (".png", ".ppm", ".pgm", ".pnm")
    return sorted(os.path.join(directory, f) for f in os.listdir(directory) if f.lower().endswith(exts))


def _safe(category):
    return category.replace("+", "_")


def synth_dataset(source_hq_dir, categories, n_per_category, seed, out_dir, manifest_name="manifest.tsv"):
    """Degrade clean sources into LQ/HQ pairs per category and write a manifest.

    Each category draws ``n_per_category`` distinct sources (a seeded permutation),
    and item ``k`` overall uses recipe seed ``seed ^ k``.
    """
    sources = list_images(source_hq_dir)
    categories = list(categories)
    for c in categories:
        if c not in CATEGORIES:
            raise ValueError(f"unknown category {c!r}")
    if n_per_category > len(sources):
        raise ValueError(f"need {n_per_category} source images per category, found {len(sources)}")
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    item = 0
    for ci, cat in enumerate(categories):
        pick = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 11, ci]))).permutation(len(sources))
        for k in range(n_per_category):
            src = sources[pick[k]]
            hq = read_image(src)
            recipe = sample_recipe(cat, np.random.Generator(np.random.PCG64(item_seed(seed, item))))
            lq = apply_recipe(hq, recipe)
            rel_lq = os.path.join("lq", _safe(cat), f"{k:04d}.png")
            rel_hq = os.path.join("hq", _safe(cat), f"{k:04d}.png")
            for rel, img in ((rel_lq, lq), (rel_hq, hq)):
                os.makedirs(os.path.dirname(os.path.join(out_dir, rel)), exist_ok=True)
                write_image(img, os.path.join(out_dir, rel))
            with open(os.path.join(out_dir, "recipes.txt"), "a" if item else "w") as fh:
                fh.write(f"{rel_lq}\t{recipe.serialize()}\n")
            entries.append(Entry(cat, rel_lq, rel_hq))
            item += 1
    manifest = Manifest(entries, os.path.abspath(out_dir))
    write_manifest(manifest, os.path.join(out_dir, manifest_name))
    if not entries:
        open(os.path.join(out_dir, "recipes.txt"), "w").close()
    return manifest


def quantized(img):
    return quantize(img).astype(np.float64) / 255.0
