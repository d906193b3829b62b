import shlex
import sys
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detsel.detectors import (
    ExternalDetectorError,
    Keypoint,
    KeypointParseError,
    detect_dog,
    detect_harris,
    format_keypoint_file,
    harris_response,
    match_count,
    parse_keypoint_file,
    repeatability,
    run_external_detector,
)
from detsel.image import GrayImage, write_image
from detsel.transforms import gaussian_kernel1d, light_reduce


def square_image(size=64, lo=50, hi=200, a=20, b=44):
    data = np.full((size, size), lo, dtype=np.uint8)
    data[a:b, a:b] = hi
    return GrayImage(data)


def loop_harris(a, sigma_w=1.5, k=0.04):
    """Harris response with explicit loops and clamped indexing."""
    a = a.astype(float)
    h, w = a.shape

    def px(y, x):
        return a[min(max(y, 0), h - 1), min(max(x, 0), w - 1)]

    ix = np.zeros((h, w))
    iy = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            ix[y, x] = sum(s * (px(y + dy, x + 1) - px(y + dy, x - 1)) for dy, s in ((-1, 1), (0, 2), (1, 1)))
            iy[y, x] = sum(s * (px(y + 1, x + dx) - px(y - 1, x + dx)) for dx, s in ((-1, 1), (0, 2), (1, 1)))
    g = gaussian_kernel1d(sigma_w)
    r = len(g) // 2

    def smooth(m):
        tmp = np.zeros_like(m)
        for y in range(h):
            for x in range(w):
                tmp[y, x] = sum(g[t + r] * m[y, min(max(x + t, 0), w - 1)] for t in range(-r, r + 1))
        out = np.zeros_like(m)
        for y in range(h):
            for x in range(w):
                out[y, x] = sum(g[t + r] * tmp[min(max(y + t, 0), h - 1), x] for t in range(-r, r + 1))
        return out

    sxx, syy, sxy = smooth(ix * ix), smooth(iy * iy), smooth(ix * iy)
    return sxx * syy - sxy**2 - k * (sxx + syy) ** 2


def brute_matching(a, b, eps):
    """Maximum one-to-one matching by exhaustive search over used-target bitmasks."""

    @lru_cache(maxsize=None)
    def best(i, used):
        if i == len(a):
            return 0
        out = best(i + 1, used)
        for j in range(len(b)):
            if not used >> j & 1 and np.hypot(a[i][0] - b[j][0], a[i][1] - b[j][1]) <= eps:
                out = max(out, 1 + best(i + 1, used | 1 << j))
        return out

    return best(0, 0)


def kps(points):
    return [Keypoint(float(x), float(y)) for x, y in points]


class TestHarris:
    def test_constant_image_has_no_corners(self):
        assert detect_harris(GrayImage(np.full((32, 32), 90, dtype=np.uint8))) == []

    def test_square_corners(self):
        found = detect_harris(square_image())
        assert len(found) >= 4
        corners = [(19.5, 19.5), (43.5, 19.5), (19.5, 43.5), (43.5, 43.5)]
        top = found[:4]
        for cx, cy in corners:
            assert min(np.hypot(k.x - cx, k.y - cy) for k in top) <= 2.0

    def test_response_matches_loop_oracle(self, rng):
        img = GrayImage(rng.integers(0, 256, size=(14, 17), dtype=np.uint8))
        np.testing.assert_allclose(harris_response(img), loop_harris(img.data), rtol=1e-9, atol=1e-6)

    def test_deterministic_and_ordered(self, scene):
        a, b = detect_harris(scene), detect_harris(scene)
        assert a == b
        scores = [k.score for k in a]
        assert scores == sorted(scores, reverse=True)
        assert len(detect_harris(scene, max_keypoints=10)) == 10


class TestDoG:
    def test_constant_image(self):
        assert detect_dog(GrayImage(np.full((40, 40), 128, dtype=np.uint8))) == []

    def test_blob_location(self):
        yy, xx = np.mgrid[0:64, 0:64]
        blob = 40 + 150 * np.exp(-((xx - 30) ** 2 + (yy - 34) ** 2) / (2 * 2.0**2))
        found = detect_dog(GrayImage(np.rint(blob).astype(np.uint8)))
        assert found
        assert np.hypot(found[0].x - 30, found[0].y - 34) <= 1.5

    def test_needs_four_sigmas(self, scene):
        with pytest.raises(ValueError):
            detect_dog(scene, sigmas=(1.0, 2.0, 4.0))

    def test_light_reduction_with_scaled_threshold(self, scene):
        # the DoG is linear, so halving intensities and the threshold keeps the extrema up to rounding
        ref = detect_dog(scene, contrast_thresh=2.0)
        tgt = detect_dog(light_reduce(scene, 50), contrast_thresh=1.0)
        assert repeatability(ref, tgt) >= 0.8


STUB_OK = "import sys\nopen(sys.argv[2], 'w').write('2\\n1.0 2.0 1.0\\n3.0 4.0 2.0\\n')\n"
STUB_FAIL = "import sys\nsys.stderr.write('detector exploded')\nsys.exit(4)\n"
STUB_SHORT = "import sys\nopen(sys.argv[2], 'w').write('3\\n1 2 1\\n3 4 1\\n')\n"
STUB_SLOW = "import time\ntime.sleep(5)\n"


class TestExternal:
    @pytest.fixture
    def image_path(self, tmp_path, scene):
        path = tmp_path / "in.pgm"
        write_image(path, scene)
        return path

    def template(self, tmp_path, body):
        script = tmp_path / "stub.py"
        script.write_text(body)
        return f"{shlex.quote(sys.executable)} {shlex.quote(str(script))} {{input}} {{output}}"

    def test_success(self, tmp_path, image_path):
        out = run_external_detector(self.template(tmp_path, STUB_OK), image_path)
        assert out == [Keypoint(1.0, 2.0, 1.0), Keypoint(3.0, 4.0, 2.0)]

    def test_nonzero_exit_carries_stderr(self, tmp_path, image_path):
        with pytest.raises(ExternalDetectorError) as info:
            run_external_detector(self.template(tmp_path, STUB_FAIL), image_path)
        assert info.value.returncode == 4
        assert "detector exploded" in info.value.stderr

    def test_short_file_reports_line(self, tmp_path, image_path):
        with pytest.raises(KeypointParseError) as info:
            run_external_detector(self.template(tmp_path, STUB_SHORT), image_path)
        assert info.value.line == 4

    def test_timeout(self, tmp_path, image_path):
        with pytest.raises(ExternalDetectorError, match="timed out"):
            run_external_detector(self.template(tmp_path, STUB_SLOW), image_path, timeout=0.5)

    def test_missing_program(self, image_path):
        with pytest.raises(ExternalDetectorError):
            run_external_detector("/nonexistent/detector {input} {output}", image_path)

    def test_placeholders_required(self, image_path):
        with pytest.raises(ValueError):
            run_external_detector("detector {input}", image_path)

    def test_file_round_trip(self):
        points = [Keypoint(0.5, 1.25, 2.0), Keypoint(10.0, 3.0, 1.0)]
        assert parse_keypoint_file(format_keypoint_file(points)) == points
        assert parse_keypoint_file("0\n") == []

    @pytest.mark.parametrize(
        "text, line",
        [("", 1), ("x\n", 1), ("1\n1 2\n", 2), ("1\n1 a 3\n", 2), ("1\n1 2 0\n", 2), ("1\n1 2 3\n4 5 6\n", 3)],
    )
    def test_parse_errors(self, text, line):
        with pytest.raises(KeypointParseError) as info:
            parse_keypoint_file(text)
        assert info.value.line == line


class TestRepeatability:
    def test_examples(self):
        ref = kps([(0, 0), (10, 10), (20, 20)])
        assert repeatability(ref, kps([(1, 0), (10, 11.5)])) == 1.0
        assert repeatability(ref, kps([(1, 0), (30, 30)])) == 0.5
        assert repeatability(ref, kps([(5, 5)])) == 0.0
        assert repeatability([], []) == 1.0
        assert repeatability(ref, []) == 0.0
        assert repeatability([], ref) == 0.0

    def test_distance_bound_is_inclusive(self):
        assert repeatability(kps([(0, 0)]), kps([(2, 0)]), eps=2.0) == 1.0
        assert repeatability(kps([(0, 0)]), kps([(2.001, 0)]), eps=2.0) == 0.0

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            repeatability(kps([(0, 0)]), kps([(0, 0)]), eps=0)

    def test_one_to_one(self):
        # two reference points near one target point count once
        assert match_count(kps([(0, 0), (0.5, 0)]), kps([(0.2, 0)]), 2.0) == 1

    def test_greedy_counterexample(self):
        ref = kps([(0, 0), (2.5, 0)])
        tgt = kps([(1.2, 0), (-1.9, 0)])
        assert match_count(ref, tgt, 2.0, method="greedy") == 1
        assert match_count(ref, tgt, 2.0) == 2

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.tuples(st.integers(0, 12), st.integers(0, 12)), max_size=8),
        st.lists(st.tuples(st.integers(0, 12), st.integers(0, 12)), max_size=8),
        st.sampled_from([1.0, 2.0, 3.5]),
    )
    def test_optimal_matches_brute_force(self, a, b, eps):
        assert match_count(kps(a), kps(b), eps) == brute_matching(tuple(a), tuple(b), eps)

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(st.tuples(st.floats(0, 50), st.floats(0, 50)), min_size=1, max_size=15),
        st.lists(st.tuples(st.floats(0, 50), st.floats(0, 50)), min_size=1, max_size=15),
    )
    def test_symmetry_range_and_eps_monotonicity(self, a, b):
        ra, rb = kps(a), kps(b)
        r = repeatability(ra, rb, 2.0)
        assert 0.0 <= r <= 1.0
        assert r == repeatability(rb, ra, 2.0)
        assert repeatability(ra, rb, 4.0) >= r
        assert match_count(ra, rb, 2.0, "greedy") <= match_count(ra, rb, 2.0)

    def test_self_repeatability(self, scene):
        found = detect_harris(scene)
        assert repeatability(found, found) == 1.0
