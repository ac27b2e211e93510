"""Image buffers, 8-bit PNG/PNM I/O and bilinear resampling.

Images are numpy arrays of shape (H, W, C) with C in {1, 3} and values in
[0, 1].  Nothing here clamps silently: operations that could leave the
range call :func:`clamp` explicitly.
"""
from __future__ import annotations

import os
import struct
import zlib

import numpy as np

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(ValueError):
    pass


def as_image(arr, dtype=np.float64):
    img = np.asarray(arr, dtype=dtype)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, 1|3) image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be non-empty")
    return img


def clamp(img):
    return np.clip(img, 0.0, 1.0)


def validate(img):
    img = as_image(img)
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("pixel values must lie in [0, 1]")
    return img


def quantize(img):
    """Map [0, 1] floats to the 8-bit grid, rounding halves up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


# ------------------------------------------------------------------- PNM

def _read_pnm(raw, path):
    # header: magic, width, height, maxval, each separated by whitespace; '#' comments allowed
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise ImageFormatError(f"{path}: truncated header")
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed header") from exc
    if maxval != 255:
        raise ImageFormatError(f"{path}: only 8-bit PNM is supported (maxval {maxval})")
    channels = 3 if raw[:2] == b"P6" else 1
    n = width * height * channels
    data = raw[pos:pos + n]
    if len(data) < n:
        raise ImageFormatError(f"{path}: truncated data ({len(data)} of {n} bytes)")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width, channels)


def _write_pnm(q, fh):
    h, w, c = q.shape
    magic = b"P6" if c == 3 else b"P5"
    fh.write(magic + b"\n%d %d\n255\n" % (w, h))
    fh.write(q.tobytes())


# ------------------------------------------------------------------- PNG

def _png_chunks(raw, path):
    pos = len(PNG_SIGNATURE)
    while pos < len(raw):
        if pos + 8 > len(raw):
            raise ImageFormatError(f"{path}: truncated chunk header")
        length, ctype = struct.unpack(">I4s", raw[pos:pos + 8])
        body = raw[pos + 8:pos + 8 + length]
        if len(body) < length or pos + 12 + length > len(raw):
            raise ImageFormatError(f"{path}: truncated {ctype.decode('latin1')} chunk")
        yield ctype, body
        pos += 12 + length


def _paeth(a, b, c):
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(data, height, stride, bpp, path):
    out = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.int32)
    pos = 0
    for y in range(height):
        if pos + 1 + stride > len(data):
            raise ImageFormatError(f"{path}: truncated image data")
        ftype = data[pos]
        line = np.frombuffer(data, dtype=np.uint8, count=stride, offset=pos + 1).astype(np.int32)
        pos += 1 + stride
        if ftype == 0:
            cur = line
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype in (1, 3, 4):
            cur = line.copy()
            for i in range(stride):
                left = cur[i - bpp] if i >= bpp else 0
                up = prev[i]
                if ftype == 1:
                    cur[i] = (cur[i] + left) & 0xFF
                elif ftype == 3:
                    cur[i] = (cur[i] + ((left + up) >> 1)) & 0xFF
                else:
                    ul = prev[i - bpp] if i >= bpp else 0
                    cur[i] = (cur[i] + _paeth(left, up, ul)) & 0xFF
        else:
            raise ImageFormatError(f"{path}: bad filter type {ftype}")
        out[y] = cur
        prev = cur
    return out


def _read_png(raw, path):
    header, idat = None, []
    for ctype, body in _png_chunks(raw, path):
        if ctype == b"IHDR":
            header = struct.unpack(">IIBBBBB", body)
        elif ctype == b"IDAT":
            idat.append(body)
        elif ctype == b"IEND":
            break
    if header is None:
        raise ImageFormatError(f"{path}: missing IHDR")
    width, height, depth, color, _, _, interlace = header
    if depth != 8 or interlace != 0 or color not in (0, 2):
        raise ImageFormatError(f"{path}: only 8-bit non-interlaced gray/RGB PNG is supported")
    channels = 3 if color == 2 else 1
    try:
        data = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise ImageFormatError(f"{path}: truncated or corrupt image data") from exc
    rows = _unfilter(data, height, width * channels, channels, path)
    return rows.reshape(height, width, channels)


def _write_png(q, fh):
    h, w, c = q.shape
    color = 2 if c == 3 else 0

    def chunk(ctype, body):
        return struct.pack(">I", len(body)) + ctype + body + struct.pack(">I", zlib.crc32(ctype + body) & 0xFFFFFFFF)

    rows = np.concatenate([np.zeros((h, 1), dtype=np.uint8), q.reshape(h, w * c)], axis=1)
    fh.write(PNG_SIGNATURE)
    fh.write(chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, color, 0, 0, 0)))
    fh.write(chunk(b"IDAT", zlib.compress(rows.tobytes(), 9)))
    fh.write(chunk(b"IEND", b""))


def read_image(path):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw.startswith(PNG_SIGNATURE):
        q = _read_png(raw, path)
    elif raw[:2] in (b"P5", b"P6"):
        q = _read_pnm(raw, path)
    else:
        raise ImageFormatError(f"{path}: unsupported format")
    return q.astype(np.float64) / 255.0


def write_image(img, path):
    """Write an 8-bit PNG, or PPM/PGM when the extension is .ppm/.pgm/.pnm."""
    q = quantize(as_image(img))
    ext = os.path.splitext(path)[1].lower()
    with open(path, "wb") as fh:
        if ext in (".ppm", ".pgm", ".pnm"):
            _write_pnm(q, fh)
        else:
            _write_png(q, fh)


# ------------------------------------------------------------- resampling

def bilinear_matrix(n_in, n_out):
    """(n_out, n_in) interpolation weights with half-pixel centers and edge clamping."""
    if n_out < 1 or n_in < 1:
        raise ValueError("resize targets must be positive")
    m = np.zeros((n_out, n_in))
    if n_in == n_out:
        np.fill_diagonal(m, 1.0)
        return m
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def resize(img, target_h, target_w):
    img = as_image(img)
    if target_h < 1 or target_w < 1:
        raise ValueError("resize targets must be positive")
    h, w, _ = img.shape
    if (h, w) == (target_h, target_w):
        return img.copy()
    mh = bilinear_matrix(h, target_h)
    mw = bilinear_matrix(w, target_w)
    out = np.einsum("ih,hwc->iwc", mh, img)
    out = np.einsum("jw,iwc->ijc", mw, out)
    # convex weights keep the range; clip only float round-off
    return np.clip(out, 0.0, 1.0)


def shorter_side_dims(h, w, r):
    """Aspect-preserving (h, w) whose shorter side equals ``r``."""
    if h <= w:
        return r, max(1, int(round(w * r / h)))
    return max(1, int(round(h * r / w))), r


def resize_shorter_side(img, r):
    img = as_image(img)
    return resize(img, *shorter_side_dims(img.shape[0], img.shape[1], r))


def down_up(img, r):
    """Downsample so the shorter side is ``r``, then upsample back to the input size."""
    img = as_image(img)
    h, w, _ = img.shape
    if r > min(h, w):
        raise ValueError(f"down_up: r={r} exceeds shorter side {min(h, w)}")
    if r < 1:
        raise ValueError("down_up: r must be positive")
    small = resize_shorter_side(img, r)
    return resize(small, h, w)


def crop_offsets(h, w, size, rng):
    """Draw (row, col): row first, then col, each via ``rng.integers``."""
    if size > min(h, w) or size < 1:
        raise ValueError(f"crop size {size} exceeds image {h}x{w}")
    row = int(rng.integers(0, h - size + 1))
    col = int(rng.integers(0, w - size + 1))
    return row, col


def random_crop(img, size, rng, return_offsets=False):
    img = as_image(img)
    row, col = crop_offsets(img.shape[0], img.shape[1], size, rng)
    out = img[row:row + size, col:col + size].copy()
    return (out, (row, col)) if return_offsets else out


def laplacian_variance(img):
    """Variance of the 4-neighbour Laplacian (interior pixels), a high-frequency energy proxy."""
    img = as_image(img)
    lap = (img[1:-1, :-2] + img[1:-1, 2:] + img[:-2, 1:-1] + img[2:, 1:-1] - 4 * img[1:-1, 1:-1])
    return float(lap.var())


def ceil_div(a, b):
    return -(-a // b)


def pad_to_multiple(img, m):
    h, w, _ = img.shape
    ph, pw = ceil_div(h, m) * m - h, ceil_div(w, m) * m - w
    if ph == 0 and pw == 0:
        return img
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge")


__all__ = [
    "ImageFormatError",
    "as_image",
    "clamp",
    "validate",
    "quantize",
    "read_image",
    "write_image",
    "bilinear_matrix",
    "resize",
    "resize_shorter_side",
    "shorter_side_dims",
    "down_up",
    "crop_offsets",
    "random_crop",
    "laplacian_variance",
    "pad_to_multiple",
]
