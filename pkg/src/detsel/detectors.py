"""Keypoint detectors, the external-detector adapter and repeatability."""

from __future__ import annotations

import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter, minimum_filter, sobel
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.spatial import cKDTree

from .image import GrayImage
from .transforms import smooth

DEFAULT_EPS = 2.0
DOG_SIGMAS = (1.0, 1.6, 2.56, 4.096, 6.5536)


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float = 1.0
    score: float = 0.0


def keypoint_array(kps) -> np.ndarray:
    return np.array([(k.x, k.y) for k in kps], dtype=np.float64).reshape(-1, 2)


def _ordered(xs, ys, scales, scores, max_keypoints):
    # descending score, then row-major position
    order = np.lexsort((xs, ys, -scores))
    if max_keypoints is not None:
        order = order[:max_keypoints]
    return [Keypoint(float(xs[i]), float(ys[i]), float(scales[i]), float(scores[i])) for i in order]


def harris_response(img: GrayImage, sigma_w: float = 1.5, k: float = 0.04) -> np.ndarray:
    f = img.as_float()
    ix = sobel(f, axis=1, mode="nearest")
    iy = sobel(f, axis=0, mode="nearest")
    sxx = smooth(ix * ix, sigma_w)
    syy = smooth(iy * iy, sigma_w)
    sxy = smooth(ix * iy, sigma_w)
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def detect_harris(img: GrayImage, sigma_w=1.5, k=0.04, rel_thresh=0.01, max_keypoints=500) -> list[Keypoint]:
    r = harris_response(img, sigma_w, k)
    rmax = r.max()
    if rmax <= 0:
        return []
    peaks = (r == maximum_filter(r, size=3, mode="nearest")) & (r > rel_thresh * rmax)
    ys, xs = np.nonzero(peaks)
    return _ordered(xs, ys, np.full(len(xs), float(sigma_w)), r[ys, xs], max_keypoints)


def dog_stack(img: GrayImage, sigmas=DOG_SIGMAS) -> np.ndarray:
    f = img.as_float()
    blurred = [smooth(f, s) for s in sigmas]
    return np.stack([b1 - b0 for b0, b1 in zip(blurred, blurred[1:])])


def detect_dog(img: GrayImage, sigmas=DOG_SIGMAS, contrast_thresh=2.0, max_keypoints=500) -> list[Keypoint]:
    """Difference-of-Gaussians extrema over space and scale.

    Only interior DoG levels are tested, so ``sigmas`` needs at least four
    entries. A keypoint's scale is the smaller sigma of its DoG level.
    """
    if len(sigmas) < 4:
        raise ValueError("need at least four sigmas for a 3-D extremum test")
    d = dog_stack(img, sigmas)
    is_max = d == maximum_filter(d, size=3, mode="nearest")
    is_min = d == minimum_filter(d, size=3, mode="nearest")
    mask = (is_max | is_min) & (np.abs(d) >= contrast_thresh)
    mask[0] = mask[-1] = False
    ls, ys, xs = np.nonzero(mask)
    scales = np.asarray(sigmas, dtype=np.float64)[ls]
    return _ordered(xs, ys, scales, np.abs(d[ls, ys, xs]), max_keypoints)


BUILTIN_DETECTORS = {
    "harris": detect_harris,
    "dog": detect_dog,
}


# -- external detectors ------------------------------------------------------


class ExternalDetectorError(RuntimeError):
    def __init__(self, message: str, stderr: str = "", returncode: int | None = None):
        super().__init__(message if not stderr else f"{message}: {stderr.strip()}")
        self.stderr = stderr
        self.returncode = returncode


class KeypointParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def parse_keypoint_file(text: str) -> list[Keypoint]:
    """Parse ``N`` followed by ``N`` lines of ``x y scale``."""
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise KeypointParseError("missing keypoint count", 1)
    try:
        n = int(lines[0].strip())
    except ValueError:
        raise KeypointParseError(f"bad keypoint count {lines[0].strip()!r}", 1) from None
    if n < 0:
        raise KeypointParseError("negative keypoint count", 1)
    body = lines[1:]
    while body and not body[-1].strip():
        body.pop()
    kps = []
    for i in range(n):
        lineno = i + 2
        if i >= len(body):
            raise KeypointParseError(f"expected {n} keypoints, file ends after {len(body)}", lineno)
        parts = body[i].split()
        if len(parts) != 3:
            raise KeypointParseError(f"expected 'x y scale', got {body[i]!r}", lineno)
        try:
            x, y, s = (float(p) for p in parts)
        except ValueError:
            raise KeypointParseError(f"non-numeric field in {body[i]!r}", lineno) from None
        if not s > 0:
            raise KeypointParseError(f"scale must be positive, got {s}", lineno)
        kps.append(Keypoint(x, y, s))
    if len(body) > n:
        raise KeypointParseError(f"unexpected data after {n} keypoints", n + 2)
    return kps


def format_keypoint_file(kps) -> str:
    lines = [str(len(kps))]
    lines.extend(f"{k.x!r} {k.y!r} {k.scale!r}" for k in kps)
    return "\n".join(lines) + "\n"


def run_external_detector(cmd_template: str, image_path, timeout: float | None = 60.0) -> list[Keypoint]:
    """Run an external detector command and parse the keypoint file it writes.

    ``cmd_template`` must contain ``{input}`` and ``{output}`` placeholders.
    """
    if "{input}" not in cmd_template or "{output}" not in cmd_template:
        raise ValueError("command template needs {input} and {output} placeholders")
    with tempfile.TemporaryDirectory(prefix="detsel-") as tmp:
        out_path = os.path.join(tmp, "keypoints.txt")
        argv = [
            tok.replace("{input}", os.fspath(image_path)).replace("{output}", out_path)
            for tok in shlex.split(cmd_template)
        ]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
        except subprocess.TimeoutExpired as exc:
            raise ExternalDetectorError(f"{argv[0]} timed out after {timeout}s") from exc
        except OSError as exc:
            raise ExternalDetectorError(f"cannot run {argv[0]}: {exc}") from exc
        if proc.returncode != 0:
            raise ExternalDetectorError(f"{argv[0]} exited with status {proc.returncode}", proc.stderr, proc.returncode)
        try:
            with open(out_path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ExternalDetectorError(f"{argv[0]} wrote no keypoint file", proc.stderr) from exc
    return parse_keypoint_file(text)


# -- repeatability -----------------------------------------------------------


def _candidate_pairs(a: np.ndarray, b: np.ndarray, eps: float):
    neighbours = cKDTree(a).query_ball_tree(cKDTree(b), eps)
    rows = np.array([i for i, js in enumerate(neighbours) for _ in js], dtype=np.int64)
    cols = np.array([j for js in neighbours for j in js], dtype=np.int64)
    vals = np.hypot(*(a[rows] - b[cols]).T) if len(rows) else np.zeros(0)
    return rows, cols, vals


def match_count(ref, tgt, eps: float, method: str = "optimal") -> int:
    """Size of a one-to-one matching between points at most ``eps`` apart.

    ``"optimal"`` returns the maximum matching cardinality; ``"greedy"``
    accepts candidate pairs in order of increasing distance, which can fall
    short of the maximum.
    """
    a, b = keypoint_array(ref), keypoint_array(tgt)
    if len(a) == 0 or len(b) == 0:
        return 0
    rows, cols, vals = _candidate_pairs(a, b, eps)
    if len(rows) == 0:
        return 0
    if method == "greedy":
        used_a, used_b, n = set(), set(), 0
        for k in np.lexsort((cols, rows, vals)):
            i, j = rows[k], cols[k]
            if i not in used_a and j not in used_b:
                used_a.add(i)
                used_b.add(j)
                n += 1
        return n
    if method != "optimal":
        raise ValueError(f"unknown matching method {method!r}")
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(a), len(b)))
    graph.sum_duplicates()
    return int((maximum_bipartite_matching(graph, perm_type="column") >= 0).sum())


def repeatability(ref_kps, tgt_kps, eps: float = DEFAULT_EPS, method: str = "optimal") -> float:
    """Fraction of keypoints re-detected within ``eps`` pixels.

    Pixels do not move under photometric degradations, so correspondence is
    the identity map. The rate is ``matches / min(len(ref), len(tgt))``; two
    empty lists agree vacuously (1.0), one empty list scores 0.0.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    n_ref, n_tgt = len(ref_kps), len(tgt_kps)
    if n_ref == 0 and n_tgt == 0:
        return 1.0
    if n_ref == 0 or n_tgt == 0:
        return 0.0
    return match_count(ref_kps, tgt_kps, eps, method) / min(n_ref, n_tgt)
