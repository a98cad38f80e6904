import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flakescan.core import (
    BBox,
    BitMask,
    DegeneratePolygonError,
    EmptyMaskError,
    MalformedRleError,
    Polygon,
    Rle,
    TaxonomyError,
    Thickness,
    bbox_from_mask,
    rasterize_polygon,
    rle_decode,
    rle_encode,
    thickness_category,
)


def point_in_polygon(px, py, verts):
    """Independent even-odd ray-casting oracle, scalar."""
    inside = False
    n = len(verts)
    for k in range(n):
        x1, y1 = verts[k]
        x2, y2 = verts[(k + 1) % n]
        if (y1 > py) != (y2 > py):
            x_at = (x2 - x1) * (py - y1) / (y2 - y1) + x1
            if px < x_at:
                inside = not inside
    return inside


class TestRasterize:
    def test_unit_rectangle(self):
        poly = Polygon([(0, 0), (2, 0), (2, 2), (0, 2)])
        mask = rasterize_polygon(poly, 4, 4)
        expected = np.zeros((4, 4), dtype=bool)
        expected[0, 0] = expected[0, 1] = expected[1, 0] = expected[1, 1] = True
        assert np.array_equal(mask.bits, expected)

    def test_polygon_outside_grid(self):
        poly = Polygon([(10, 10), (12, 10), (12, 12)])
        mask = rasterize_polygon(poly, 4, 4)
        assert mask.count() == 0

    def test_triangle_matches_bruteforce(self):
        verts = [(0, 0), (4, 0), (0, 4)]
        mask = rasterize_polygon(Polygon(verts), 4, 4)
        for j in range(4):
            for i in range(4):
                assert mask.bits[j, i] == point_in_polygon(i + 0.5, j + 0.5, verts), (i, j)

    def test_degenerate_rejected(self):
        with pytest.raises(DegeneratePolygonError):
            rasterize_polygon(Polygon([(0, 0), (1, 1)]), 4, 4)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_random_polygons_match_bruteforce(self, seed):
        rng = np.random.default_rng(seed)
        w = int(rng.integers(2, 33))
        h = int(rng.integers(2, 33))
        n = int(rng.integers(3, 9))
        verts = [(float(rng.uniform(-2, w + 2)), float(rng.uniform(-2, h + 2))) for _ in range(n)]
        mask = rasterize_polygon(Polygon(verts), w, h)
        for j in range(h):
            for i in range(w):
                assert mask.bits[j, i] == point_in_polygon(i + 0.5, j + 0.5, verts)


class TestRle:
    def test_all_zero(self):
        rle = rle_encode(BitMask.zeros(2, 2))
        assert rle.counts == (4,)

    def test_diagonal(self):
        mask = BitMask(np.array([[1, 0], [0, 1]], dtype=bool))
        assert rle_encode(mask).counts == (0, 1, 2, 1)

    def test_malformed_sum(self):
        with pytest.raises(MalformedRleError):
            Rle(2, 2, (3,))

    def test_zero_interior_run(self):
        with pytest.raises(MalformedRleError):
            Rle(2, 2, (1, 1, 0, 1, 1))

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 10**9))
    def test_roundtrip_identity(self, seed):
        rng = np.random.default_rng(seed)
        mask = BitMask(rng.random((16, 16)) < rng.uniform(0, 1))
        assert rle_decode(rle_encode(mask)) == mask


class TestBBoxFromMask:
    def test_single_pixel(self):
        bits = np.zeros((8, 8), dtype=bool)
        bits[5, 3] = True
        assert bbox_from_mask(BitMask(bits)) == BBox(3, 5, 1, 1)

    def test_full_mask(self):
        assert bbox_from_mask(BitMask(np.ones((4, 4), dtype=bool))) == BBox(0, 0, 4, 4)

    def test_two_pixels(self):
        bits = np.zeros((8, 8), dtype=bool)
        bits[1, 1] = bits[3, 2] = True
        assert bbox_from_mask(BitMask(bits)) == BBox(1, 1, 2, 3)

    def test_empty_mask_rejected(self):
        with pytest.raises(EmptyMaskError):
            bbox_from_mask(BitMask.zeros(4, 4))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**9))
    def test_tightness(self, seed):
        rng = np.random.default_rng(seed)
        bits = rng.random((12, 12)) < 0.2
        if not bits.any():
            bits[0, 0] = True
        box = bbox_from_mask(BitMask(bits))
        ys, xs = np.nonzero(bits)
        assert box.x == xs.min() and box.y == ys.min()
        assert box.x + box.w == xs.max() + 1 and box.y + box.h == ys.max() + 1


class TestThickness:
    def test_paper_definitions(self):
        assert thickness_category(1) is Thickness.mono
        assert thickness_category(5) is Thickness.few
        assert thickness_category(10) is Thickness.few  # boundary: lower category wins

    def test_partition_total_and_disjoint(self):
        seen = {Thickness.mono: 0, Thickness.few: 0, Thickness.thick: 0}
        for layers in range(1, 41):
            seen[thickness_category(layers)] += 1
        assert seen == {Thickness.mono: 1, Thickness.few: 9, Thickness.thick: 30}

    def test_out_of_taxonomy(self):
        with pytest.raises(TaxonomyError):
            thickness_category(41)
        with pytest.raises(TaxonomyError):
            thickness_category(0)
