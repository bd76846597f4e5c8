import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fpfusion.errors import EmptyTemplate, NoLine, ParseError
from fpfusion.imgproc import GrayImage
from fpfusion.ridges import (CURVED, HIGHLY_CURVED, STRAIGHT, HoughLine, Ridge, RidgeFeature, _line_distance,
                             build_ridge_feature, classify_curvature, dumps, extract_ridge_features,
                             hough_lines, load, loads, save, thin, trace_ridges)
from fpfusion.synth import sinusoid


def _img(mask):
    return GrayImage(np.asarray(mask, dtype=float))


def _raster_line(x0, y0, x1, y1):
    n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    t = np.linspace(0, 1, n)
    pts = np.round(np.column_stack([x0 + t * (x1 - x0), y0 + t * (y1 - y0)])).astype(np.int64)
    _, first = np.unique(pts, axis=0, return_index=True)
    return pts[np.sort(first)]


def _arc(cx, cy, r, a0, a1):
    t = np.linspace(a0, a1, int(abs(a1 - a0) * r * 2) + 2)
    pts = np.round(np.column_stack([cx + r * np.cos(t), cy + r * np.sin(t)])).astype(np.int64)
    _, first = np.unique(pts, axis=0, return_index=True)
    return pts[np.sort(first)]


def _sound(line, pts, rho_step=1.0):
    return (_line_distance(pts.astype(float), line) <= rho_step).sum() >= 0.9 * line.votes


class TestThin:
    def test_thick_bar(self):
        m = np.zeros((40, 60))
        m[18:23, 10:50] = 1
        sk = thin(_img(m)).pixels > 0.5
        cols = sk.sum(axis=0)
        assert np.all(cols[14:46] == 1)
        rows = np.nonzero(sk.any(axis=1))[0]
        assert rows.min() >= 18 and rows.max() <= 22

    def test_thin_diagonal_unchanged(self):
        m = np.zeros((40, 40))
        for i in range(5, 35):
            m[i, i] = 1
        assert np.array_equal(thin(_img(m)).pixels, m)

    def test_empty(self):
        m = np.zeros((32, 32))
        assert np.array_equal(thin(_img(m)).pixels, m)

    @given(st.integers(0, 2**32 - 1), st.floats(0.3, 0.7))
    def test_idempotent_and_subset(self, seed, density):
        from scipy import ndimage
        rng = np.random.default_rng(seed)
        m = ndimage.binary_opening(rng.uniform(size=(40, 40)) < density)
        once = thin(_img(m))
        twice = thin(once)
        assert np.array_equal(once.pixels, twice.pixels)
        assert np.all(m[once.pixels > 0.5])


class TestTrace:
    def test_straight_line(self):
        m = np.zeros((40, 80))
        m[20, 10:60] = 1
        ridges = trace_ridges(_img(m))
        assert len(ridges) == 1 and len(ridges[0]) == 50

    def test_y_shape(self):
        m = np.zeros((100, 100))
        c = (50, 50)
        for t in range(1, 31):
            m[c[1], c[0] - t] = 1
            m[c[1] - t, c[0] + t] = 1
            m[c[1] + t, c[0] + t] = 1
        m[c[1], c[0]] = 1
        ridges = trace_ridges(_img(m))
        assert len(ridges) == 3
        for r in ridges:
            ends = r.points[[0, -1]]
            assert np.min(np.hypot(ends[:, 0] - c[0], ends[:, 1] - c[1])) <= 3

    def test_speck_dropped(self):
        m = np.zeros((32, 32))
        m[10, 10:15] = 1
        assert trace_ridges(_img(m), min_ridge_len=10) == []

    def test_paths_are_simple_and_on_skeleton(self):
        img = GrayImage(sinusoid(10, 35))
        from fpfusion.ridges import preprocess
        sk = preprocess(img).skeleton.pixels > 0.5
        for r in trace_ridges(GrayImage(sk.astype(float))):
            p = r.points
            assert len(np.unique(p, axis=0)) == len(p)
            assert np.all(np.abs(np.diff(p, axis=0)).max(axis=1) == 1)
            assert np.all(sk[p[:, 1], p[:, 0]])


class TestHough:
    def test_diagonal_through_origin(self):
        pts = np.array([(t, t) for t in range(40)])
        top = hough_lines(pts)[0]
        assert abs(top.theta_deg - 135) <= 1 and abs(top.rho) <= 1 and top.votes >= 38

    def test_quarter_arc_needs_two_lines(self):
        pts = _arc(60, 60, 30, 0, math.pi / 2)
        lines = hough_lines(pts)
        assert len(lines) >= 2
        for ln in lines:
            assert (_line_distance(pts.astype(float), ln) <= 1.0).mean() < 0.8

    def test_two_points_no_line(self):
        with pytest.raises(NoLine):
            hough_lines(np.array([[0, 0], [1, 1]]))

    def test_votes_threshold_and_order(self):
        pts = _arc(80, 80, 50, 0, math.pi)
        lines = hough_lines(pts)
        assert all(ln.votes >= max(5, math.ceil(0.1 * len(pts))) for ln in lines)
        assert [ln.votes for ln in lines] == sorted((ln.votes for ln in lines), reverse=True)
        assert len(lines) <= 8
        assert all(0 <= ln.theta_deg < 180 for ln in lines)

    @given(st.floats(0, 179), st.floats(-40, 40), st.integers(-30, 30), st.integers(-30, 30))
    def test_translation_equivariance(self, angle, offset, dx, dy):
        a = math.radians(angle)
        x0, y0 = 100 + offset * math.sin(a), 100 - offset * math.cos(a)
        pts = _raster_line(x0 - 30 * math.cos(a), y0 - 30 * math.sin(a), x0 + 30 * math.cos(a), y0 + 30 * math.sin(a))
        l1 = hough_lines(pts)[0]
        l2 = hough_lines(pts + np.array([dx, dy]))[0]
        # compare up to the (theta, rho) ~ (theta + 180, -rho) identification
        d = abs(l1.theta_deg - l2.theta_deg)
        rho1 = l1.rho + dx * math.cos(l1.theta) + dy * math.sin(l1.theta)
        if d > 90:
            d, rho1 = 180 - d, -rho1
        assert d <= 1.0 + 1e-9
        assert abs(rho1 - l2.rho) <= 1.0 + 2.0 * abs(d) * math.pi / 180 * 130

    @given(st.integers(0, 2**32 - 1))
    def test_soundness(self, seed):
        rng = np.random.default_rng(seed)
        if rng.uniform() < 0.5:
            a = rng.uniform(0, np.pi)
            L = rng.uniform(20, 120)
            pts = _raster_line(100, 100, 100 + L * math.cos(a), 100 + L * math.sin(a))
        else:
            r = rng.uniform(15, 80)
            a0 = rng.uniform(0, 2 * np.pi)
            pts = _arc(150, 150, r, a0, a0 + rng.uniform(0.3, 3.0))
        for ln in hough_lines(pts):
            assert _sound(ln, pts)


class TestCurvature:
    def test_straight(self):
        pts = _raster_line(0, 0, 60, 25)
        assert classify_curvature(hough_lines(pts), pts) == STRAIGHT

    def test_quarter_arc(self):
        pts = _arc(60, 60, 30, 0, math.pi / 2)
        assert classify_curvature(hough_lines(pts), pts) == HIGHLY_CURVED

    def test_shallow_s_curve(self):
        a = _raster_line(0, 0, 40, 0)
        b = _raster_line(40, 0, 40 + 40 * math.cos(math.radians(20)), 40 * math.sin(math.radians(20)))
        pts = np.concatenate([a, b[1:]])
        assert classify_curvature(hough_lines(pts), pts) == CURVED

    @given(st.integers(0, 2**32 - 1))
    def test_order_reversal(self, seed):
        rng = np.random.default_rng(seed)
        r = rng.uniform(15, 60)
        a0 = rng.uniform(0, 2 * np.pi)
        pts = _arc(100, 100, r, a0, a0 + rng.uniform(0.2, 2.5))
        lines = hough_lines(pts)
        assert classify_curvature(lines, pts) == classify_curvature(lines, pts[::-1])


class TestRidgeFeature:
    def test_parallel_fragment(self):
        feat = extract_ridge_features(GrayImage(sinusoid(9, 30)))
        assert len(feat.ridges) >= 10
        assert all(c == STRAIGHT for c in feat.curvature_class)
        top = max((ln for lines in feat.lines for ln in lines), key=lambda ln: ln.votes)
        assert abs(top.theta_deg - 120) <= 3
        for lines in feat.lines:
            assert lines

    def test_blank(self):
        with pytest.raises(EmptyTemplate):
            extract_ridge_features(GrayImage(np.full((64, 64), 0.5)))

    def test_drops_lineless_ridges(self):
        ridges = [Ridge(0, np.array([[0, 0], [1, 1]])), Ridge(1, _raster_line(0, 10, 40, 10))]
        feat = build_ridge_feature(ridges, (64, 64))
        assert len(feat.ridges) == 1 and feat.ridges[0].id == 0

    def test_file_round_trip(self, tmp_path):
        feat = extract_ridge_features(GrayImage(sinusoid(11, 70)))
        save(tmp_path / "r.txt", feat)
        assert load(tmp_path / "r.txt") == feat

    @given(st.lists(st.tuples(st.lists(st.tuples(st.integers(0, 300), st.integers(0, 300)), min_size=1, max_size=30),
                              st.lists(st.tuples(st.floats(0, 179.99), st.floats(-500, 500), st.integers(5, 999)),
                                       min_size=1, max_size=8),
                              st.sampled_from([STRAIGHT, CURVED, HIGHLY_CURVED])), max_size=6))
    def test_text_round_trip(self, spec):
        feat = RidgeFeature([Ridge(i, np.array(p, dtype=np.int64)) for i, (p, _, _) in enumerate(spec)],
                            [[HoughLine(*ln) for ln in lines] for _, lines, _ in spec],
                            [c for _, _, c in spec], (320, 240))
        assert loads(dumps(feat)) == feat

    @pytest.mark.parametrize("text", ["", "RIDGEFEAT v2 1 1\n", "RIDGEFEAT v1 10 10\nR 0 wobbly 1\n0 0\n",
                                      "RIDGEFEAT v1 10 10\nR 0 straight 3\n0 0\n"])
    def test_parse_errors(self, text):
        with pytest.raises(ParseError):
            loads(text)
