"""Global features of a (reference, target) image pair.

The feature vector is ``[f_L, f_B, f_J]``:

* ``f_L`` -- ratio of target to reference mean intensity,
* ``f_B`` -- ratio of target to reference perceptual blur index (re-blur
  comparison of gradient energy),
* ``f_J`` -- no-reference JPEG quality score of the target, built from
  block-boundary discontinuity, in-block activity and zero-crossing rate
  of the horizontal and vertical pixel differentials.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .image import GrayImage, mean_intensity

WANG_ALPHA = -245.9
WANG_BETA = 261.9
WANG_GAMMAS = (-0.0240, 0.0160, 0.0064)
REBLUR_LENGTH = 9

FEATURE_NAMES = ("f_L", "f_B", "f_J")


class DegenerateInputError(ValueError):
    """A ratio feature has a zero denominator."""


@dataclass(frozen=True)
class FeatureVector:
    f_L: float
    f_B: float
    f_J: float

    def as_array(self) -> np.ndarray:
        return np.array([self.f_L, self.f_B, self.f_J], dtype=np.float64)

    def __iter__(self):
        return iter((self.f_L, self.f_B, self.f_J))


def light_feature(ref: GrayImage, tgt: GrayImage) -> float:
    ref_mean = mean_intensity(ref)
    if ref_mean <= 0:
        raise DegenerateInputError("reference image has zero mean intensity")
    return mean_intensity(tgt) / ref_mean


def _directional_blur(f: np.ndarray, axis: int, length: int) -> float | None:
    blurred = correlate1d(f, np.full(length, 1.0 / length), axis=axis, mode="nearest")
    d_f = np.abs(np.diff(f, axis=axis))
    d_b = np.abs(np.diff(blurred, axis=axis))
    s_f = d_f.sum()
    if s_f == 0:
        return None
    s_v = np.maximum(0.0, d_f - d_b).sum()
    return float((s_f - s_v) / s_f)


def perceptual_blur_index(img: GrayImage, reblur_length: int = REBLUR_LENGTH) -> float:
    """Re-blur blur index in [0, 1]; larger means blurrier.

    A sharp image loses much of its gradient energy when re-blurred with a
    strong averaging filter, a blurry one loses little. Constant images
    score 0.
    """
    if img.width < 3 or img.height < 3:
        raise ValueError("perceptual blur index needs images of at least 3x3 pixels")
    f = img.as_float()
    idx = [_directional_blur(f, axis, reblur_length) for axis in (1, 0)]
    idx = [v for v in idx if v is not None]
    return max(idx) if idx else 0.0


def blur_feature(ref: GrayImage, tgt: GrayImage, reblur_length: int = REBLUR_LENGTH) -> float:
    ref_index = perceptual_blur_index(ref, reblur_length)
    if ref_index <= 0:
        raise DegenerateInputError("reference image has zero perceptual blur index")
    return perceptual_blur_index(tgt, reblur_length) / ref_index


def _block_stats(x: np.ndarray) -> tuple[float, float, float]:
    """Blockiness, activity and zero-crossing rate along axis 1."""
    d = np.diff(x, axis=1)
    ad = np.abs(d)
    # d[:, j] straddles pixels j and j+1; block edges sit at j = 7, 15, ...
    boundary = ad[:, 7::8]
    B = boundary.mean() if boundary.size else 0.0
    A = (8.0 * ad.mean() - B) / 7.0
    Z = float(np.mean(d[:, :-1] * d[:, 1:] < 0))
    return float(B), float(A), Z


def jpeg_quality_index(
    img: GrayImage,
    alpha: float = WANG_ALPHA,
    beta: float = WANG_BETA,
    gammas: tuple[float, float, float] = WANG_GAMMAS,
    floor: float = 1e-6,
) -> float:
    """No-reference JPEG quality score; lower means stronger compression."""
    if img.width < 9 or img.height < 9:
        raise ValueError("JPEG quality index needs images of at least 9x9 pixels")
    x = img.as_float()
    bh, ah, zh = _block_stats(x)
    bv, av, zv = _block_stats(x.T)
    if bh == ah == zh == bv == av == zv == 0:
        return float(alpha)
    B = max((bh + bv) / 2, floor)
    A = max((ah + av) / 2, floor)
    Z = max((zh + zv) / 2, floor)
    g1, g2, g3 = gammas
    return float(alpha + beta * B**g1 * A**g2 * Z**g3)


def extract_features(
    ref: GrayImage,
    tgt: GrayImage,
    *,
    jpeg_normalized: bool = False,
    reblur_length: int = REBLUR_LENGTH,
    wang_params: dict | None = None,
) -> FeatureVector:
    if ref.shape != tgt.shape:
        raise ValueError(f"image size mismatch: reference {ref.width}x{ref.height}, target {tgt.width}x{tgt.height}")
    wang_params = wang_params or {}
    f_j = jpeg_quality_index(tgt, **wang_params)
    if jpeg_normalized:
        s_ref = jpeg_quality_index(ref, **wang_params)
        if s_ref == 0:
            raise DegenerateInputError("reference JPEG quality score is zero")
        f_j /= s_ref
    return FeatureVector(
        light_feature(ref, tgt),
        blur_feature(ref, tgt, reblur_length),
        f_j,
    )


@dataclass(frozen=True)
class FeatureSettings:
    """Feature-extraction parameters bound to :func:`extract_features`."""

    jpeg_normalized: bool = False
    reblur_length: int = REBLUR_LENGTH
    alpha: float = WANG_ALPHA
    beta: float = WANG_BETA
    gammas: tuple = WANG_GAMMAS

    def extract(self, ref: GrayImage, tgt: GrayImage) -> FeatureVector:
        return extract_features(
            ref,
            tgt,
            jpeg_normalized=self.jpeg_normalized,
            reblur_length=int(self.reblur_length),
            wang_params={"alpha": self.alpha, "beta": self.beta, "gammas": tuple(self.gammas)},
        )
