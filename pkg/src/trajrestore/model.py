"""Toy conditional spatio-temporal transformer over pixel patches.

Tokens are (frame, patch) pairs, so attention is joint over space and time.
Two readouts share the trunk:

* ``regress``: the anchor image alone (plus learned per-frame embeddings)
  predicts every frame of the clip.
* ``flow``: the anchor is channel-concatenated with a noisy clip and a
  sinusoidal embedding of the flow time is added; the output is a velocity.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from . import numerics as nx
from .imaging import bilinear_matrix
from .numerics import Tensor
from .sequence import PseudoClip

MODES = ("regress", "flow")
FREQ_DIM = 64


@dataclass(frozen=True)
class ModelConfig:
    patch_size: int = 4
    embed_dim: int = 64
    layers: int = 4
    heads: int = 4
    frame_count: int = 9
    image_size: int = 32
    channels: int = 3
    mode: str = "regress"
    condition_dropout_prob: float = 0.1
    mlp_ratio: int = 4
    # regress mode: frames = anchor + learned residual, so a fresh model copies the anchor
    anchor_skip: bool = False

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.patch_size < 1 or self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.heads < 1 or self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if self.frame_count < 2:
            raise ValueError("frame_count must be at least 2")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if not 0.0 <= self.condition_dropout_prob <= 1.0:
            raise ValueError("condition_dropout_prob must lie in [0, 1]")
        if self.layers < 0 or self.mlp_ratio < 1:
            raise ValueError("layers must be >= 0 and mlp_ratio >= 1")
        return self

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * self.channels

    @property
    def grid(self):
        return self.image_size // self.patch_size

    def to_dict(self):
        return asdict(self)

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return ModelConfig(**d)


def param_shapes(config):
    """Ordered ``{name: shape}`` for a config."""
    c = config.validate()
    d, p = c.embed_dim, c.patch_dim
    in_dim = p if c.mode == "regress" else 2 * p
    hidden = c.mlp_ratio * d
    shapes = {
        "patch_embed.w": (in_dim, d),
        "patch_embed.b": (d,),
        "pos_spatial": (c.grid * c.grid, d),
        "pos_temporal": (c.frame_count, d),
    }
    if c.mode == "flow":
        shapes.update({
            "time_mlp.w1": (FREQ_DIM, d),
            "time_mlp.b1": (d,),
            "time_mlp.w2": (d, d),
            "time_mlp.b2": (d,),
        })
    for i in range(c.layers):
        pre = f"blocks.{i}."
        shapes.update({
            pre + "ln1.g": (d,), pre + "ln1.b": (d,),
            pre + "attn.wq": (d, d), pre + "attn.bq": (d,),
            pre + "attn.wk": (d, d), pre + "attn.bk": (d,),
            pre + "attn.wv": (d, d), pre + "attn.bv": (d,),
            pre + "attn.wo": (d, d), pre + "attn.bo": (d,),
            pre + "ln2.g": (d,), pre + "ln2.b": (d,),
            pre + "mlp.w1": (d, hidden), pre + "mlp.b1": (hidden,),
            pre + "mlp.w2": (hidden, d), pre + "mlp.b2": (d,),
        })
    shapes["out.w"] = (d, p)
    shapes["out.b"] = (p,)
    return shapes


def param_count(params):
    return int(sum(t.size for t in params.values()))


def init_model(config, seed, dtype=np.float32):
    """Projections ~ N(0, 0.02^2), biases 0, layer-norm gains 1, output projection 0."""
    shapes = param_shapes(config)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0x6D6F64])))
    params = {}
    for name, shape in shapes.items():
        leaf = name.rsplit(".", 1)[-1]
        if name.startswith("out."):
            arr = np.zeros(shape)
        elif leaf == "g":
            arr = np.ones(shape)
        elif leaf.startswith("b"):
            arr = np.zeros(shape)
        else:
            arr = rng.normal(0.0, 0.02, size=shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    return params


# ------------------------------------------------------------ tensor plumbing

def patchify(x, p):
    """(..., H, W, C) -> (..., H/p * W/p, p*p*C)."""
    *lead, h, w, c = x.shape
    x = x.reshape(*lead, h // p, p, w // p, p, c)
    n = len(lead)
    x = np.moveaxis(x, n + 2, n + 1)  # (..., Hp, Wp, p, p, C)
    return x.reshape(*lead, (h // p) * (w // p), p * p * c)


def unpatchify(x, p, h, w, c):
    """Inverse of :func:`patchify` for plain arrays."""
    *lead, _, _ = x.shape
    n = len(lead)
    x = x.reshape(*lead, h // p, w // p, p, p, c)
    x = np.moveaxis(x, n + 1, n + 2)
    return x.reshape(*lead, h, w, c)


@lru_cache(maxsize=32)
def _pos_resample(src_grid, dst_h, dst_w):
    mh = bilinear_matrix(src_grid, dst_h)
    mw = bilinear_matrix(src_grid, dst_w)
    return np.kron(mh, mw)


def spatial_positions(params, config, gh, gw):
    pos = params["pos_spatial"]
    if (gh, gw) == (config.grid, config.grid):
        return pos
    m = _pos_resample(config.grid, gh, gw).astype(pos.dtype)
    return nx.matmul(Tensor(m), pos)


def timestep_embedding(tau, dim=FREQ_DIM, max_period=10000.0):
    """Sinusoidal features of flow time ``tau`` in [0, 1] (scaled by 1000)."""
    tau = np.asarray(tau, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = 1000.0 * tau[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1)


def _linear(x, params, w, b):
    return nx.add(nx.matmul(x, params[w]), params[b])


def _affine_norm(x, params, prefix):
    return nx.add(nx.mul(nx.layer_norm(x), params[prefix + ".g"]), params[prefix + ".b"])


def _attention(x, params, prefix, heads):
    b, s, d = x.shape
    dh = d // heads

    def split(t):
        return nx.transpose(nx.reshape(t, (b, s, heads, dh)), (0, 2, 1, 3))

    q = nx.scale(split(_linear(x, params, prefix + "wq", prefix + "bq")), 1.0 / math.sqrt(dh))
    k = nx.transpose(split(_linear(x, params, prefix + "wk", prefix + "bk")), (0, 1, 3, 2))
    v = split(_linear(x, params, prefix + "wv", prefix + "bv"))
    att = nx.softmax(nx.matmul(q, k))
    y = nx.matmul(att, v)
    y = nx.reshape(nx.transpose(y, (0, 2, 1, 3)), (b, s, d))
    return _linear(y, params, prefix + "wo", prefix + "bo")


def _block(h, params, i, heads):
    pre = f"blocks.{i}."
    h = nx.add(h, _attention(_affine_norm(h, params, pre + "ln1"), params, pre + "attn.", heads))
    m = nx.gelu(_linear(_affine_norm(h, params, pre + "ln2"), params, pre + "mlp.w1", pre + "mlp.b1"))
    return nx.add(h, _linear(m, params, pre + "mlp.w2", pre + "mlp.b2"))


def _as_batch(x, dtype):
    x = np.asarray(x, dtype=dtype)
    return x[None] if x.ndim == 3 else x


def forward(params, config, anchor, tau=None, noisy_clip=None, cond_mask=None, pos_spatial=None):
    """Predict a clip-shaped tensor (B, F, H, W, C).

    ``anchor`` is (B, H, W, C) or a single (H, W, C) image.  ``cond_mask`` is a
    per-item 0/1 vector multiplying the anchor (0 = unconditional).  In flow
    mode ``tau`` (scalar or (B,)) and ``noisy_clip`` (B, F, H, W, C) are required.
    ``pos_spatial`` overrides the spatial position table (used for equivariance checks).
    """
    config.validate()
    dtype = params["out.w"].dtype
    anchor = _as_batch(anchor, dtype)
    b, h, w, c = anchor.shape
    p = config.patch_size
    if c != config.channels or h % p or w % p:
        raise ValueError(f"anchor shape {anchor.shape} incompatible with patch {p} / channels {config.channels}")
    f = config.frame_count
    gh, gw = h // p, w // p
    if cond_mask is not None:
        anchor = anchor * np.asarray(cond_mask, dtype=dtype).reshape(b, 1, 1, 1)

    if config.mode == "regress":
        tok = _linear(Tensor(patchify(anchor, p)), params, "patch_embed.w", "patch_embed.b")
        tok = nx.reshape(tok, (b, 1, gh * gw, config.embed_dim))
    else:
        if noisy_clip is None or tau is None:
            raise ValueError("flow mode needs tau and noisy_clip")
        noisy = np.asarray(noisy_clip, dtype=dtype)
        if noisy.shape != (b, f, h, w, c):
            raise ValueError(f"noisy_clip shape {noisy.shape} != {(b, f, h, w, c)}")
        joint = np.concatenate([np.broadcast_to(anchor[:, None], noisy.shape), noisy], axis=-1)
        tok = _linear(Tensor(patchify(joint, p)), params, "patch_embed.w", "patch_embed.b")
        tau = np.broadcast_to(np.asarray(tau, dtype=np.float64).reshape(-1), (b,))
        temb = Tensor(timestep_embedding(tau).astype(dtype))
        temb = nx.gelu(_linear(temb, params, "time_mlp.w1", "time_mlp.b1"))
        temb = _linear(temb, params, "time_mlp.w2", "time_mlp.b2")
        tok = nx.add(tok, nx.reshape(temb, (b, 1, 1, config.embed_dim)))

    pos = pos_spatial if pos_spatial is not None else spatial_positions(params, config, gh, gw)
    tok = nx.add(tok, pos)
    tok = nx.add(tok, nx.reshape(params["pos_temporal"], (f, 1, config.embed_dim)))
    hseq = nx.reshape(tok, (b, f * gh * gw, config.embed_dim))
    for i in range(config.layers):
        hseq = _block(hseq, params, i, config.heads)
    out = _linear(hseq, params, "out.w", "out.b")
    out = nx.reshape(out, (b, f, gh, gw, p, p, c))
    out = nx.transpose(out, (0, 1, 2, 4, 3, 5, 6))
    out = nx.reshape(out, (b, f, h, w, c))
    if config.mode == "regress" and config.anchor_skip:
        out = nx.add(out, Tensor(np.ascontiguousarray(np.broadcast_to(anchor[:, None], (b, f, h, w, c)))))
    return out


def predict(params, config, anchor, tau=None, noisy_clip=None, cond_mask=None):
    """Forward pass returning a plain array (no graph kept)."""
    frozen = {k: Tensor(v.data) for k, v in params.items()}
    return forward(frozen, config, anchor, tau, noisy_clip, cond_mask).data


def condition_mask(batch, prob, rng):
    """1 keeps the anchor, 0 drops it; prob 0 never drops, prob 1 always drops."""
    if prob <= 0.0:
        return np.ones(batch)
    if prob >= 1.0:
        return np.zeros(batch)
    return (rng.random(batch) >= prob).astype(np.float64)


def training_loss(params, config, clip, rng, train=True):
    """Scalar MSE loss for a clip batch (B, F, H, W, C) or a single PseudoClip.

    The anchor is frame 0.  Regress mode regresses every frame (frame 0 is a
    copy task); flow mode regresses the velocity ``clip - noise`` at a
    uniformly drawn time on the straight noise-to-clip path.
    """
    dtype = params["out.w"].dtype
    if isinstance(clip, PseudoClip):
        clip = clip.as_array()[None]
    clip = np.asarray(clip, dtype=dtype)
    if clip.ndim == 4:
        clip = clip[None]
    b, f = clip.shape[:2]
    if f != config.frame_count:
        raise ValueError(f"clip has {f} frames, model expects {config.frame_count}")
    anchor = clip[:, 0]
    mask = condition_mask(b, config.condition_dropout_prob, rng) if train else None
    if config.mode == "regress":
        pred = forward(params, config, anchor, cond_mask=mask)
        return nx.mse(pred, Tensor(clip))
    tau = rng.random(b)
    noise = rng.standard_normal(clip.shape).astype(dtype)
    t = tau.reshape(b, 1, 1, 1, 1).astype(dtype)
    x_t = (1 - t) * noise + t * clip
    pred = forward(params, config, anchor, tau=tau, noisy_clip=x_t, cond_mask=mask)
    return nx.mse(pred, Tensor(clip - noise))
