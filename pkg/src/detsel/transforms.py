"""Photometric degradations and synthetic dataset generation.

Three degradation kinds are supported: uniform light reduction, Gaussian
blur and a JPEG-style block-DCT quantization round-trip. Each kind has an
amount ladder; a dataset holds, per scene, the reference and one target per
ladder level.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import correlate1d

from .image import GrayImage, read_image, write_image


class Kind(str, Enum):
    LIGHT = "LIGHT"
    BLUR = "BLUR"
    JPEG = "JPEG"

    def __str__(self):
        return self.value

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            return cls.__members__.get(value.strip().upper())
        return None


KINDS = (Kind.LIGHT, Kind.BLUR, Kind.JPEG)

# LIGHT: percent of light removed. BLUR: sigma in pixels.
# JPEG: compression rate in percent (100 - quality), so quality runs 70 -> 10
# as the level index rises.
DEFAULT_LADDERS: dict[Kind, tuple[float, ...]] = {
    Kind.LIGHT: tuple(float(a) for a in range(30, 91, 5)),
    Kind.BLUR: tuple(0.5 * i for i in range(1, 10)),
    Kind.JPEG: tuple(float(100 - q) for q in range(70, 9, -5)),
}
LADDER_SIZES = {Kind.LIGHT: 13, Kind.BLUR: 9, Kind.JPEG: 13}


def check_ladders(ladders: dict[Kind, tuple[float, ...]]) -> None:
    for kind in KINDS:
        if kind not in ladders:
            raise ValueError(f"missing ladder for {kind}")
        if len(ladders[kind]) != LADDER_SIZES[kind]:
            raise ValueError(f"{kind} ladder must have {LADDER_SIZES[kind]} levels, got {len(ladders[kind])}")


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def _to_image(values: np.ndarray) -> GrayImage:
    return GrayImage(np.clip(_round_half_up(values), 0, 255).astype(np.uint8))


def light_reduce(img: GrayImage, amount_percent: float) -> GrayImage:
    if not 0 <= amount_percent < 100:
        raise ValueError(f"light reduction amount must lie in [0, 100), got {amount_percent}")
    return _to_image(img.as_float() * (1.0 - amount_percent / 100.0))


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized sampled Gaussian with radius ceil(3 sigma)."""
    radius = max(1, math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def smooth(values: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing of a float array, clamp-to-edge borders."""
    k = gaussian_kernel1d(sigma)
    out = correlate1d(values, k, axis=1, mode="nearest")
    return correlate1d(out, k, axis=0, mode="nearest")


def gaussian_blur(img: GrayImage, sigma: float) -> GrayImage:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return _to_image(smooth(img.as_float(), sigma))


# Standard JPEG luminance quantization table (ITU-T T.81, Annex K).
LUMINANCE_QTABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


def quantization_table(quality: int) -> np.ndarray:
    if not 1 <= quality <= 100:
        raise ValueError(f"JPEG quality must lie in [1, 100], got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(_round_half_up(LUMINANCE_QTABLE * scale / 100.0), 1, 255)


def jpeg_roundtrip(img: GrayImage, quality: int) -> GrayImage:
    """Quantize and dequantize 8x8 DCT blocks as a baseline JPEG encoder would."""
    if int(quality) != quality:
        raise ValueError(f"JPEG quality must be an integer, got {quality}")
    table = quantization_table(int(quality))
    h, w = img.shape
    ph, pw = -h % 8, -w % 8
    x = np.pad(img.as_float(), ((0, ph), (0, pw)), mode="edge") - 128.0
    H, W = x.shape
    blocks = x.reshape(H // 8, 8, W // 8, 8).transpose(0, 2, 1, 3)
    coef = dctn(blocks, type=2, axes=(2, 3), norm="ortho")
    coef = _round_half_up(coef / table) * table
    rec = idctn(coef, type=2, axes=(2, 3), norm="ortho")
    rec = rec.transpose(0, 2, 1, 3).reshape(H, W)[:h, :w] + 128.0
    return _to_image(rec)


def quality_for_rate(rate_percent: float) -> int:
    return int(round(100 - rate_percent))


@dataclass(frozen=True)
class TransformSpec:
    kind: Kind
    level_index: int
    amount: float

    @classmethod
    def from_ladder(cls, kind: Kind, level_index: int, ladders=None) -> TransformSpec:
        ladder = (ladders or DEFAULT_LADDERS)[kind]
        if not 0 <= level_index < len(ladder):
            raise ValueError(f"{kind} level {level_index} outside ladder of size {len(ladder)}")
        return cls(kind, level_index, ladder[level_index])

    def apply(self, img: GrayImage) -> GrayImage:
        if self.kind is Kind.LIGHT:
            return light_reduce(img, self.amount)
        if self.kind is Kind.BLUR:
            return gaussian_blur(img, self.amount)
        return jpeg_roundtrip(img, quality_for_rate(self.amount))


def iter_specs(ladders=None):
    ladders = ladders or DEFAULT_LADDERS
    for kind in KINDS:
        for i in range(len(ladders[kind])):
            yield TransformSpec.from_ladder(kind, i, ladders)


# -- datasets ----------------------------------------------------------------

MANIFEST_HEADER = ["scene_id", "kind", "level_index", "amount", "path"]
REFERENCE_NAME = "reference.pgm"


@dataclass(frozen=True)
class ManifestRow:
    scene_id: str
    kind: Kind
    level_index: int
    amount: float
    path: str


@dataclass
class DatasetManifest:
    """Targets of a generated dataset. Paths are relative to ``root``."""

    root: Path
    rows: list[ManifestRow] = field(default_factory=list)

    @property
    def scene_ids(self) -> list[str]:
        seen = dict.fromkeys(r.scene_id for r in self.rows)
        return list(seen)

    def reference_path(self, scene_id: str) -> Path:
        return self.root / scene_id / REFERENCE_NAME

    def target_path(self, row: ManifestRow) -> Path:
        return self.root / row.path

    def rows_for(self, scene_id: str) -> list[ManifestRow]:
        return [r for r in self.rows if r.scene_id == scene_id]

    def write(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(MANIFEST_HEADER)
            for r in self.rows:
                writer.writerow([r.scene_id, r.kind.value, r.level_index, repr(float(r.amount)), r.path])

    @classmethod
    def read(cls, path: str | os.PathLike) -> DatasetManifest:
        path = Path(path)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != MANIFEST_HEADER:
                raise ValueError(f"{path}: bad manifest header {header}")
            rows = []
            for lineno, rec in enumerate(reader, start=2):
                if len(rec) != 5:
                    raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(rec)}")
                try:
                    rows.append(ManifestRow(rec[0], Kind(rec[1]), int(rec[2]), float(rec[3]), rec[4]))
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from exc
        return cls(root=path.parent, rows=rows)


def generate_dataset(scenes, ladders=None, out_dir=".", *, manifest_name="manifest.csv") -> DatasetManifest:
    """Write references and degraded targets for ``scenes``.

    ``scenes`` is a sequence of ``(scene_id, GrayImage)`` pairs; a bare list of
    images gets ids ``scene000``, ``scene001``, ...
    """
    ladders = ladders or DEFAULT_LADDERS
    check_ladders(ladders)
    scenes = list(scenes)
    if scenes and isinstance(scenes[0], GrayImage):
        scenes = [(f"scene{i:03d}", img) for i, img in enumerate(scenes)]
    ids = [sid for sid, _ in scenes]
    dupes = sorted({s for s in ids if ids.count(s) > 1})
    if dupes:
        raise ValueError(f"duplicate scene ids: {', '.join(dupes)}")

    out = Path(out_dir)
    manifest = DatasetManifest(root=out)
    for scene_id, img in scenes:
        scene_dir = out / scene_id
        scene_dir.mkdir(parents=True, exist_ok=True)
        write_image(scene_dir / REFERENCE_NAME, img)
        for spec in iter_specs(ladders):
            rel = f"{scene_id}/{spec.kind.value.lower()}_{spec.level_index:02d}.pgm"
            write_image(out / rel, spec.apply(img))
            manifest.rows.append(ManifestRow(scene_id, spec.kind, spec.level_index, float(spec.amount), rel))
    if manifest_name:
        manifest.write(out / manifest_name)
    return manifest


def load_pair(manifest: DatasetManifest, row: ManifestRow) -> tuple[GrayImage, GrayImage]:
    return read_image(manifest.reference_path(row.scene_id)), read_image(manifest.target_path(row))
