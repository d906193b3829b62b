"""Procedural scene images with natural-image-like statistics.

Scenes combine a 1/f noise background, antialiased occluding shapes with
their own textures, a smooth illumination gradient and mild sensor noise.
Intensities stay clear of 0 and 255 so that light reduction never clips.
"""

from __future__ import annotations

import numpy as np

from .image import GrayImage


def _pink_noise(rng: np.random.Generator, h: int, w: int, beta: float) -> np.ndarray:
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    f = np.sqrt(fx**2 + fy**2)
    f[0, 0] = 1.0
    spectrum = (rng.standard_normal(f.shape) + 1j * rng.standard_normal(f.shape)) / f ** (beta / 2)
    spectrum[0, 0] = 0
    out = np.fft.irfft2(spectrum, s=(h, w))
    return (out - out.mean()) / (out.std() + 1e-12)


def _shape_mask(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray, h: int, w: int) -> np.ndarray:
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    size = rng.uniform(0.05, 0.3) * min(h, w)
    kind = rng.integers(3)
    theta = rng.uniform(0, np.pi)
    c, s = np.cos(theta), np.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    aspect = rng.uniform(0.4, 1.0)
    if kind == 0:
        return (np.abs(u) < size) & (np.abs(v) < size * aspect)
    if kind == 1:
        return (u / size) ** 2 + (v / (size * aspect)) ** 2 < 1
    # triangle-ish: half-planes
    return (v > -size * aspect) & (v < size * aspect - np.abs(u) * aspect * 1.5)


def synth_scene(rng: np.random.Generator | int, height: int = 128, width: int = 128) -> GrayImage:
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    ss = 2
    H, W = height * ss, width * ss
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)

    canvas = 0.5 + 0.15 * _pink_noise(rng, H, W, rng.uniform(1.6, 2.4))
    for _ in range(int(rng.integers(8, 30))):
        mask = _shape_mask(rng, yy, xx, H, W)
        level = rng.uniform(0.1, 0.9)
        tex_kind = rng.integers(3)
        if tex_kind == 0:
            tex = 0.08 * _pink_noise(rng, H, W, rng.uniform(1.0, 2.0))
        elif tex_kind == 1:
            period = rng.uniform(4, 16) * ss
            ang = rng.uniform(0, np.pi)
            tex = 0.1 * np.sin(2 * np.pi * (xx * np.cos(ang) + yy * np.sin(ang)) / period)
        else:
            tex = 0.0
        canvas = np.where(mask, level + tex, canvas)

    canvas = canvas.reshape(height, ss, width, ss).mean(axis=(1, 3))
    gy, gx = rng.uniform(-0.3, 0.3, size=2)
    ny, nx = np.mgrid[0:height, 0:width] / max(height, width)
    canvas = canvas * (1.0 + gy * (ny - 0.5) + gx * (nx - 0.5))
    lo, hi = np.percentile(canvas, [0.5, 99.5])
    canvas = (canvas - lo) / (hi - lo + 1e-12)
    canvas = 25 + 200 * np.clip(canvas, 0, 1)
    canvas += rng.normal(0, 1.0, canvas.shape)
    return GrayImage(np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8))


def synth_corpus(n: int, seed: int = 0, height: int = 128, width: int = 128) -> list[tuple[str, GrayImage]]:
    """``n`` scenes named ``scene000``.. drawn from independent child seeds."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [(f"scene{i:03d}", synth_scene(np.random.default_rng(c), height, width)) for i, c in enumerate(children)]
