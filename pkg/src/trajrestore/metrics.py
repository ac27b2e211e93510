"""PSNR / SSIM on the 8-bit grid, the evaluation resize policy, per-category reports."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .degrade import CATEGORIES
from .imaging import as_image, quantize, resize

PSNR_CAP = 100.0


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    L: float = 255.0

    @property
    def c1(self):
        return (self.k1 * self.L) ** 2

    @property
    def c2(self):
        return (self.k2 * self.L) ** 2

    def kernel_1d(self):
        r = self.window // 2
        x = np.arange(-r, r + 1, dtype=np.float64)
        k = np.exp(-(x * x) / (2 * self.sigma ** 2))
        return k / k.sum()

    def kernel_2d(self):
        k = self.kernel_1d()
        return np.outer(k, k)


def _grid(img):
    return quantize(as_image(img)).astype(np.float64)


def _check_pair(gt, pred):
    gt = as_image(gt)
    pred = as_image(pred)
    if gt.shape != pred.shape:
        raise ValueError(f"dimension mismatch: {gt.shape} vs {pred.shape}")
    return gt, pred


def psnr(gt, pred):
    gt, pred = _check_pair(gt, pred)
    diff = _grid(gt) - _grid(pred)
    err = float(np.mean(diff * diff))
    if err == 0.0:
        return PSNR_CAP
    return 10.0 * math.log10(255.0 ** 2 / err)


def _filter_valid(x, k):
    # separable 'valid' correlation over the first two axes
    n = len(k)
    h = x.shape[0] - n + 1
    w = x.shape[1] - n + 1
    rows = np.zeros((h,) + x.shape[1:])
    for i in range(n):
        rows += k[i] * x[i:i + h]
    out = np.zeros((h, w) + x.shape[2:])
    for j in range(n):
        out += k[j] * rows[:, j:j + w]
    return out


def ssim_map(a, b, params=SsimParams()):
    """Local SSIM over valid window positions for (H, W, C) arrays on the 0..L scale."""
    k = params.kernel_1d()
    mu_a = _filter_valid(a, k)
    mu_b = _filter_valid(b, k)
    var_a = _filter_valid(a * a, k) - mu_a ** 2
    var_b = _filter_valid(b * b, k) - mu_b ** 2
    cov = _filter_valid(a * b, k) - mu_a * mu_b
    c1, c2 = params.c1, params.c2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(gt, pred, params=SsimParams()):
    gt, pred = _check_pair(gt, pred)
    if min(gt.shape[0], gt.shape[1]) < params.window:
        raise ValueError(f"image {gt.shape[:2]} smaller than the {params.window}x{params.window} window")
    a, b = _grid(gt), _grid(pred)
    if np.array_equal(a, b):
        return 1.0
    # mean over positions per channel, then over channels
    return float(ssim_map(a, b, params).mean(axis=(0, 1)).mean())


# ---------------------------------------------------------- resize policy

@dataclass(frozen=True)
class RestoreTransform:
    height: int
    width: int

    def __call__(self, img):
        img = as_image(img)
        if img.shape[:2] == (self.height, self.width):
            return img
        return resize(img, self.height, self.width)


def policy_dims(h, w, limit=2048):
    if max(h, w) <= limit:
        return h, w
    s = limit / max(h, w)
    return max(1, int(round(h * s))), max(1, int(round(w * s)))


def apply_resize_policy(img, limit=2048):
    """Shrink so the longer side is at most ``limit``; return (working image, restore)."""
    img = as_image(img)
    h, w = img.shape[:2]
    nh, nw = policy_dims(h, w, limit)
    work = img if (nh, nw) == (h, w) else resize(img, nh, nw)
    return work, RestoreTransform(h, w)


# ----------------------------------------------------------------- reports

@dataclass
class CategoryScore:
    count: int
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    categories: dict  # label -> CategoryScore, in table order
    meta: dict = field(default_factory=dict)
    per_image: list = field(default_factory=list)  # (category, name, psnr, ssim)

    @property
    def overall_psnr(self):
        return float(np.mean([c.psnr for c in self.categories.values()]))

    @property
    def overall_ssim(self):
        return float(np.mean([c.ssim for c in self.categories.values()]))


def table_order(labels):
    known = [c for c in CATEGORIES if c in labels]
    extra = sorted(set(labels) - set(CATEGORIES))
    return known + extra


def aggregate(rows, meta=None):
    """Build an EvalReport from ``(category, name, psnr, ssim)`` rows."""
    groups = {}
    for cat, name, p, s in rows:
        groups.setdefault(cat, []).append((p, s))
    cats = {}
    for cat in table_order(groups):
        vals = groups[cat]
        cats[cat] = CategoryScore(len(vals), float(np.mean([v[0] for v in vals])), float(np.mean([v[1] for v in vals])))
    return EvalReport(cats, dict(meta or {}), list(rows))


def score_pair(gt, pred, params=SsimParams()):
    return psnr(gt, pred), ssim(gt, pred, params)


# ------------------------------------------------------------- evaluation

def prediction_path(pred_dir, entry):
    """Predictions mirror the manifest's relative LQ path under ``pred_dir``."""
    import os

    rel = entry.lq_path if not os.path.isabs(entry.lq_path) else os.path.basename(entry.lq_path)
    return os.path.join(pred_dir, rel)


def evaluate_set(pred_dir, gt_manifest, params=SsimParams(), meta=None):
    """Score every manifest entry's prediction against its HQ image."""
    import os

    from .harness.manifest import parse_manifest
    from .imaging import read_image

    manifest = parse_manifest(gt_manifest) if isinstance(gt_manifest, str) else gt_manifest
    missing = [e.lq_path for e in manifest.entries if not os.path.exists(prediction_path(pred_dir, e))]
    if missing:
        raise FileNotFoundError(f"{len(missing)} missing predictions: {', '.join(missing[:5])}")
    rows = []
    for e in manifest.entries:
        gt = read_image(manifest.resolve(e.hq_path))
        pred = read_image(prediction_path(pred_dir, e))
        if gt.shape != pred.shape:
            raise ValueError(f"dimension mismatch for {e.lq_path}: {gt.shape} vs {pred.shape}")
        p, s = score_pair(gt, pred, params)
        rows.append((e.category, e.lq_path, p, s))
    return aggregate(rows, meta)
