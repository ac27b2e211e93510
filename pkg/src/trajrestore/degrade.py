"""Seeded synthetic degradations and their one-line text serialization.

Recipe grammar::

    recipe := step ("|" step)* "#" seed
    step   := Kind "(" [key "=" value ("," key "=" value)*] ")"
    value  := integer | float (Python repr) | identifier

Example: ``LowLight(gamma=2.5,scale=0.3,noise_sigma_255=4.0,seed=11)|GaussianBlur(sigma=1.2)#42``.
A step without a ``seed`` key draws its randomness from the recipe seed and
its position in the step list.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .imaging import as_image, clamp, pad_to_multiple

ISOLATED = ("Blur", "Noise", "JPEG", "Haze", "Rain", "Raindrop", "Lowlight")
COUPLED = (
    "B+N", "B+J", "N+J", "R+H", "L+H", "L+R", "L+B",
    "L+N", "L+J", "L+B+N", "L+B+J", "L+N+J", "B+N+J",
)
CATEGORIES = ISOLATED + COUPLED

LETTER_KIND = {
    "B": "GaussianBlur",
    "N": "GaussianNoise",
    "J": "BlockCompress",
    "H": "Haze",
    "R": "RainStreaks",
    "L": "LowLight",
}
ISOLATED_KIND = {
    "Blur": "GaussianBlur",
    "Noise": "GaussianNoise",
    "JPEG": "BlockCompress",
    "Haze": "Haze",
    "Rain": "RainStreaks",
    "Raindrop": "Raindrop",
    "Lowlight": "LowLight",
}

# kind -> {param: (type, lo, hi)}; for str params lo is the allowed set
SCHEMA = {
    "GaussianBlur": {"sigma": (float, 0.0, 5.0)},
    "GaussianNoise": {"sigma_255": (float, 0.0, 255.0)},
    "BlockCompress": {"quality": (int, 1, 100)},
    "Haze": {
        "beta": (float, 0.0, math.inf),
        "airlight": (float, 0.0, 1.0),
        "depth_mode": (str, ("constant", "vertical-gradient"), None),
    },
    "RainStreaks": {
        "count": (int, 0, 100000),
        "length_px": (float, 1.0, math.inf),
        "angle_deg": (float, -90.0, 90.0),
        "intensity": (float, 0.0, 1.0),
    },
    "LowLight": {
        "gamma": (float, 1.0, math.inf),
        "scale": (float, 0.0, 1.0),
        "noise_sigma_255": (float, 0.0, 255.0),
    },
    "Raindrop": {
        "count": (int, 0, 100000),
        "radius_px": (float, 0.5, math.inf),
        "alpha": (float, 0.0, 1.0),
    },
}

# sampling ranges used by sample_recipe
SAMPLE_RANGES = {
    "GaussianBlur": {"sigma": (1.0, 3.0)},
    "GaussianNoise": {"sigma_255": (5.0, 50.0)},
    "BlockCompress": {"quality": (10, 50)},
    "Haze": {"beta": (0.5, 2.0), "airlight": (0.7, 1.0), "depth_mode": ("constant", "vertical-gradient")},
    "RainStreaks": {"count": (10, 40), "length_px": (4.0, 10.0), "angle_deg": (-20.0, 20.0), "intensity": (0.3, 0.7)},
    "LowLight": {"gamma": (2.0, 3.0), "scale": (0.2, 0.5), "noise_sigma_255": (2.0, 8.0)},
    "Raindrop": {"count": (2, 6), "radius_px": (3.0, 8.0), "alpha": (0.3, 0.6)},
}

SEED_LIMIT = 2 ** 64

# standard JPEG luminance quantization table
LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


class RecipeError(ValueError):
    pass


@dataclass(frozen=True)
class Step:
    kind: str
    params: tuple = ()  # sorted (key, value) pairs, so steps are hashable and comparable

    def get(self, key, default=None):
        return dict(self.params).get(key, default)

    def as_dict(self):
        return dict(self.params)


def make_step(kind, **params):
    if kind not in SCHEMA:
        raise RecipeError(f"unknown degradation kind {kind!r}")
    schema = SCHEMA[kind]
    clean = {}
    for key, value in params.items():
        if key == "seed":
            value = int(value)
            if not 0 <= value < SEED_LIMIT:
                raise RecipeError(f"{kind}: seed out of range")
            clean[key] = value
            continue
        if key not in schema:
            raise RecipeError(f"{kind}: unknown parameter {key!r}")
        typ, lo, hi = schema[key]
        if typ is str:
            if value not in lo:
                raise RecipeError(f"{kind}.{key} must be one of {lo}, got {value!r}")
        else:
            value = typ(value)
            if not (lo <= value <= hi) or (typ is float and not math.isfinite(value)):
                raise RecipeError(f"{kind}.{key}={value} outside [{lo}, {hi}]")
        clean[key] = value
    missing = set(schema) - set(clean)
    if missing:
        raise RecipeError(f"{kind}: missing parameters {sorted(missing)}")
    if kind == "LowLight" and clean["scale"] <= 0.0:
        raise RecipeError("LowLight.scale must be in (0, 1]")
    return Step(kind, tuple(sorted(clean.items())))


@dataclass(frozen=True)
class DegradationRecipe:
    steps: tuple = field(default_factory=tuple)
    seed: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < SEED_LIMIT:
            raise RecipeError("recipe seed must be a 64-bit unsigned integer")

    def serialize(self):
        return "|".join(_format_step(s) for s in self.steps) + f"#{self.seed}"

    @classmethod
    def parse(cls, text):
        return parse_recipe(text)

    def __str__(self):
        return self.serialize()


def _format_value(v):
    if isinstance(v, str):
        return v
    if isinstance(v, bool):
        raise RecipeError("boolean parameters are not supported")
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def _format_step(step):
    body = ",".join(f"{k}={_format_value(v)}" for k, v in step.params)
    return f"{step.kind}({body})"


_STEP_RE = re.compile(r"^([A-Za-z]+)\((.*)\)$")


def parse_recipe(text):
    text = text.strip()
    if "#" not in text:
        raise RecipeError(f"recipe missing '#seed': {text!r}")
    body, _, seed_text = text.rpartition("#")
    try:
        seed = int(seed_text)
    except ValueError as exc:
        raise RecipeError(f"bad recipe seed {seed_text!r}") from exc
    steps = []
    for chunk in body.split("|") if body else []:
        m = _STEP_RE.match(chunk)
        if not m:
            raise RecipeError(f"malformed step {chunk!r}")
        kind, args = m.group(1), m.group(2)
        if kind not in SCHEMA:
            raise RecipeError(f"unknown degradation kind {kind!r}")
        params = {}
        for pair in filter(None, args.split(",")):
            key, sep, raw = pair.partition("=")
            if not sep:
                raise RecipeError(f"malformed parameter {pair!r} in {chunk!r}")
            if key == "seed":
                params[key] = int(raw)
                continue
            typ = SCHEMA[kind].get(key, (None,))[0]
            if typ is None:
                raise RecipeError(f"{kind}: unknown parameter {key!r}")
            params[key] = raw if typ is str else typ(raw)
        steps.append(make_step(kind, **params))
    return DegradationRecipe(tuple(steps), seed)


# ------------------------------------------------------------ randomness

def step_rng(recipe, index):
    step = recipe.steps[index]
    seed = step.get("seed")
    if seed is None:
        seed = step_seed(recipe.seed, index)
    return np.random.Generator(np.random.PCG64(seed))


def step_seed(recipe_seed, index):
    return int(np.random.SeedSequence([int(recipe_seed), int(index)]).generate_state(1, np.uint64)[0])


def item_seed(base_seed, index):
    return int(base_seed) ^ int(index)


# ------------------------------------------------------------ operators

def gaussian_kernel(sigma):
    if sigma <= 0:
        return np.ones(1)
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _correlate_axis(img, k, axis):
    r = (len(k) - 1) // 2
    if r == 0:
        return img * k[0]
    pad = [(0, 0)] * img.ndim
    pad[axis] = (r, r)
    padded = np.pad(img, pad, mode="symmetric")
    n = img.shape[axis]
    out = np.zeros_like(img)
    for i, w in enumerate(k):
        out += w * np.take(padded, np.arange(i, i + n), axis=axis)
    return out


def gaussian_blur(img, sigma):
    if sigma <= 0:
        return img.copy()
    k = gaussian_kernel(sigma)
    return _correlate_axis(_correlate_axis(img, k, 0), k, 1)


def dct_matrix(n=8):
    """Orthonormal DCT-II matrix: coefficients = D @ block @ D.T."""
    i = np.arange(n)
    d = np.cos(np.pi * (2 * i[None, :] + 1) * i[:, None] / (2 * n)) * math.sqrt(2.0 / n)
    d[0] /= math.sqrt(2.0)
    return d


def quality_table(quality):
    """IJG quality scaling of the luminance table; quality 100 gives all ones."""
    q = int(quality)
    s = 5000.0 / q if q < 50 else 200.0 - 2.0 * q
    return np.clip(np.floor((LUMA_TABLE * s + 50.0) / 100.0), 1.0, 255.0)


def block_compress(img, quality):
    h, w, c = img.shape
    x = pad_to_multiple(img, 8) * 255.0 - 128.0
    ph, pw = x.shape[0] // 8, x.shape[1] // 8
    blocks = x.reshape(ph, 8, pw, 8, c).transpose(0, 2, 4, 1, 3)
    d = dct_matrix(8)
    qt = quality_table(quality)
    coef = d @ blocks @ d.T
    coef = np.round(coef / qt) * qt
    rec = d.T @ coef @ d
    out = rec.transpose(0, 3, 1, 4, 2).reshape(ph * 8, pw * 8, c)[:h, :w]
    return clamp((out + 128.0) / 255.0)


def haze_depth(h, mode):
    if mode == "constant":
        return np.ones(h)
    rows = np.arange(h, dtype=np.float64)
    # far (depth 1) at the top, near (0.3) at the bottom
    return 1.0 - 0.7 * rows / max(h - 1, 1)


def haze(img, beta, airlight, depth_mode):
    t = np.exp(-beta * haze_depth(img.shape[0], depth_mode))[:, None, None]
    return clamp(img * t + airlight * (1.0 - t))


def _streak_mask(h, w, count, length, angle_deg, rng):
    mask = np.zeros((h, w))
    theta = math.radians(angle_deg)
    dy, dx = math.cos(theta), math.sin(theta)
    samples = max(2, int(math.ceil(length * 2)))
    s = np.linspace(0.0, length, samples)
    for _ in range(count):
        y0 = rng.uniform(-length, h)
        x0 = rng.uniform(0, w)
        ys = np.round(y0 + s * dy).astype(int)
        xs = np.round(x0 + s * dx).astype(int)
        ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        mask[ys[ok], xs[ok]] = 1.0
    return mask


def rain_streaks(img, count, length_px, angle_deg, intensity, rng):
    h, w, _ = img.shape
    mask = _streak_mask(h, w, count, length_px, angle_deg, rng)
    mask = np.clip(gaussian_blur(mask[:, :, None], 0.5) * 1.5, 0.0, 1.0)
    a = intensity * mask
    return clamp(img * (1.0 - a) + a)


def raindrops(img, count, radius_px, alpha, rng):
    h, w, _ = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    mask = np.zeros((h, w))
    for _ in range(count):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = radius_px * rng.uniform(0.7, 1.3)
        d2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / (r * r)
        mask = np.maximum(mask, np.clip(1.0 - d2, 0.0, 1.0))
    smeared = clamp(gaussian_blur(img, max(radius_px / 2.0, 0.5)) * 1.1 + 0.05)
    a = (alpha * mask)[:, :, None]
    return clamp(img * (1.0 - a) + smeared * a)


def add_noise(img, sigma_255, rng):
    noise = rng.standard_normal(img.shape) * (sigma_255 / 255.0)
    return clamp(img + noise)


def low_light(img, gamma, scale, noise_sigma_255, rng):
    out = np.power(img * scale, gamma)
    return add_noise(out, noise_sigma_255, rng)


def apply_step(img, step, rng):
    p = step.as_dict()
    kind = step.kind
    if kind == "GaussianBlur":
        return gaussian_blur(img, p["sigma"])
    if kind == "GaussianNoise":
        return add_noise(img, p["sigma_255"], rng)
    if kind == "BlockCompress":
        return block_compress(img, p["quality"])
    if kind == "Haze":
        return haze(img, p["beta"], p["airlight"], p["depth_mode"])
    if kind == "RainStreaks":
        return rain_streaks(img, p["count"], p["length_px"], p["angle_deg"], p["intensity"], rng)
    if kind == "LowLight":
        return low_light(img, p["gamma"], p["scale"], p["noise_sigma_255"], rng)
    if kind == "Raindrop":
        return raindrops(img, p["count"], p["radius_px"], p["alpha"], rng)
    raise RecipeError(f"unknown degradation kind {kind!r}")


def apply_recipe(hq, recipe):
    img = as_image(hq).copy()
    for i, step in enumerate(recipe.steps):
        img = apply_step(img, step, step_rng(recipe, i))
    return clamp(img)


# ------------------------------------------------------------ sampling

def category_kinds(category):
    if category in ISOLATED_KIND:
        return [ISOLATED_KIND[category]]
    if category not in CATEGORIES:
        raise RecipeError(f"unknown category {category!r}")
    return [LETTER_KIND[letter] for letter in category.split("+")]


def _draw(kind, rng):
    params = {}
    for key, rng_spec in SAMPLE_RANGES[kind].items():
        typ = SCHEMA[kind][key][0]
        if typ is str:
            params[key] = rng_spec[int(rng.integers(0, len(rng_spec)))]
        elif typ is int:
            params[key] = int(rng.integers(rng_spec[0], rng_spec[1] + 1))
        else:
            params[key] = float(rng.uniform(rng_spec[0], rng_spec[1]))
    return params


def sample_recipe(category, rng):
    """Draw a recipe for ``category``: one step per degradation letter, in label order."""
    kinds = category_kinds(category)
    seed = int(rng.integers(0, 2 ** 63))
    steps = []
    for i, kind in enumerate(kinds):
        params = _draw(kind, rng)
        params["seed"] = step_seed(seed, i)
        steps.append(make_step(kind, **params))
    return DegradationRecipe(tuple(steps), seed)


def compose(recipes):
    """Concatenate recipes; step seeds are pinned so composition equals sequential application."""
    recipes = list(recipes)
    if not recipes:
        raise RecipeError("compose: empty recipe list")
    if len(recipes) == 1:
        return recipes[0]
    steps = []
    for r in recipes:
        for i, step in enumerate(r.steps):
            if step.get("seed") is None:
                step = make_step(step.kind, **step.as_dict(), seed=step_seed(r.seed, i))
            steps.append(step)
    return DegradationRecipe(tuple(steps), recipes[0].seed)
