import json

import numpy as np
import pytest

from polarkit.coco import (
    decode_rle,
    decode_rle_payload,
    decode_segmentation,
    counts_to_rle_string,
    parse_annotations,
    rasterize_polygon,
    rle_string_to_counts,
)
from polarkit.errors import FormatError, IntegrityError


def naive_rle_expand(counts, height, width):
    """Independent oracle: expand runs one by one, column-major."""
    flat = []
    value = False
    for run in counts:
        flat.extend([value] * run)
        value = not value
    mask = np.zeros((height, width), dtype=bool)
    for k, bit in enumerate(flat):
        mask[k % height, k // height] = bit
    return mask


def naive_point_in_polygon(pts, cx, cy):
    """Independent oracle: per-point even-odd crossing test with half-open
    vertical spans and strict 'center left of crossing'."""
    crossings = 0
    n = len(pts)
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        if y1 == y2:
            continue
        if min(y1, y2) <= cy < max(y1, y2):
            xint = x1 + (cy - y1) * (x2 - x1) / (y2 - y1)
            if cx < xint:
                crossings += 1
    return crossings % 2 == 1


def naive_rasterize(pts, height, width):
    mask = np.zeros((height, width), dtype=bool)
    for r in range(height):
        for c in range(width):
            mask[r, c] = naive_point_in_polygon(pts, c + 0.5, r + 0.5)
    return mask


MINIMAL_DOC = {
    "images": [{"id": 1, "width": 8, "height": 6, "file_name": "a.png"}],
    "annotations": [
        {
            "id": 10,
            "image_id": 1,
            "category_id": 3,
            "bbox": [1, 1, 3, 2],
            "segmentation": [[1.0, 1.0, 4.0, 1.0, 4.0, 3.0, 1.0, 3.0]],
        }
    ],
    "categories": [{"id": 3, "name": "glass"}],
}


class TestParse:
    def test_minimal_document(self):
        parsed = parse_annotations(json.dumps(MINIMAL_DOC))
        assert len(parsed.images) == 1
        assert len(parsed.annotations) == 1
        assert len(parsed.categories) == 1
        assert parsed.warnings == []
        assert parsed.image_by_id(1).width == 8

    def test_dangling_image_reference(self):
        doc = dict(MINIMAL_DOC)
        doc["annotations"] = [dict(MINIMAL_DOC["annotations"][0], image_id=99)]
        with pytest.raises(IntegrityError, match="99"):
            parse_annotations(doc)

    def test_malformed_payload_reports_location(self):
        with pytest.raises(FormatError, match="line"):
            parse_annotations('{"images": [,]}')

    def test_mixed_fixture_counts(self):
        # Hand-authored fixture: 3 images, 7 annotations, mixed RLE/polygon.
        images = [{"id": i, "width": 4, "height": 3} for i in (1, 2, 3)]
        annotations = []
        for k in range(7):
            seg = (
                {"size": [3, 4], "counts": [2, 3, 7]}
                if k % 2
                else [[0.5, 0.5, 2.5, 0.5, 2.5, 2.5]]
            )
            annotations.append(
                {"id": 100 + k, "image_id": (k % 3) + 1, "category_id": 1, "bbox": [0, 0, 2, 2], "segmentation": seg}
            )
        parsed = parse_annotations({"images": images, "annotations": annotations, "categories": []})
        assert len(parsed.images) == 3 and len(parsed.annotations) == 7
        n_rle = sum(1 for a in parsed.annotations if isinstance(a.segmentation, dict))
        assert n_rle == 3

    def test_out_of_bounds_bbox_warns_but_parses(self):
        doc = dict(MINIMAL_DOC)
        doc["annotations"] = [dict(MINIMAL_DOC["annotations"][0], bbox=[6, 4, 5, 5])]
        parsed = parse_annotations(doc)
        assert len(parsed.warnings) == 1
        assert "exceeds" in parsed.warnings[0]

    def test_unknown_fields_ignored(self):
        doc = json.loads(json.dumps(MINIMAL_DOC))
        doc["info"] = {"year": 2024}
        doc["images"][0]["license"] = 4
        parsed = parse_annotations(doc)
        assert len(parsed.images) == 1


class TestRle:
    def test_leading_zero_run_all_foreground(self):
        mask = decode_rle([0, 12], 3, 4)
        assert mask.bits.all() and mask.area == 12

    def test_single_run_all_background(self):
        mask = decode_rle([12], 3, 4)
        assert not mask.bits.any()

    def test_small_case_matches_naive_expander(self):
        counts = [2, 3, 7]
        mask = decode_rle(counts, 3, 4)
        assert (mask.bits == naive_rle_expand(counts, 3, 4)).all()
        # Column-major spot check: runs fill columns first.
        assert mask.bits[2, 0] and mask.bits[0, 1] and mask.bits[1, 1]

    def test_run_sum_mismatch(self):
        with pytest.raises(FormatError, match="sum"):
            decode_rle([2, 3], 3, 4)

    def test_randomized_agreement_with_naive_expander(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            h = int(rng.integers(1, 12))
            w = int(rng.integers(1, 12))
            total = h * w
            counts = []
            while total > 0:
                run = int(rng.integers(0 if not counts else 1, total + 1))
                counts.append(run)
                total -= run
            mask = decode_rle(counts, h, w)
            assert (mask.bits == naive_rle_expand(counts, h, w)).all()
            fg = sum(counts[1::2])
            assert mask.area == fg

    def test_string_round_trip(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            n = int(rng.integers(1, 12))
            counts = [int(rng.integers(0, 300)) for _ in range(n)]
            assert rle_string_to_counts(counts_to_rle_string(counts)) == counts

    def test_compressed_payload_decodes(self):
        counts = [2, 3, 7]
        encoded = counts_to_rle_string(counts)
        mask = decode_rle_payload({"size": [3, 4], "counts": encoded})
        assert (mask.bits == naive_rle_expand(counts, 3, 4)).all()

    def test_bad_rle_payload(self):
        with pytest.raises(FormatError):
            decode_rle_payload({"counts": [1]})


class TestPolygon:
    def test_rectangle_covering_pixel_centers(self):
        # Centers at 0.5/1.5 fall inside [0.5, 2.5) x [0.5, 2.5): a 2x2 block.
        pts = [(0.5, 0.5), (2.5, 0.5), (2.5, 2.5), (0.5, 2.5)]
        mask = rasterize_polygon(pts, 4, 4)
        expected = np.zeros((4, 4), dtype=bool)
        expected[0:2, 0:2] = True
        assert (mask.bits == expected).all()
        # Cross-check against the analytic center-in-rectangle test.
        for r in range(4):
            for c in range(4):
                inside = 0.5 <= c + 0.5 < 2.5 and 0.5 <= r + 0.5 < 2.5
                assert mask.bits[r, c] == inside

    def test_degenerate_zero_area_polygon(self):
        mask = rasterize_polygon([(1.0, 1.0), (2.0, 1.0), (1.0, 1.0)], 4, 4)
        assert not mask.bits.any()

    def test_triangle_matches_naive_even_odd(self):
        pts = [(0.2, 0.4), (6.7, 1.1), (2.3, 5.9)]
        mask = rasterize_polygon(pts, 7, 8)
        assert (mask.bits == naive_rasterize(pts, 7, 8)).all()

    def test_randomized_polygons_match_naive(self):
        rng = np.random.default_rng(14)
        for _ in range(60):
            n = int(rng.integers(3, 9))
            pts = [(float(rng.uniform(0, 10)), float(rng.uniform(0, 8))) for _ in range(n)]
            mask = rasterize_polygon(pts, 8, 10)
            assert (mask.bits == naive_rasterize(pts, 8, 10)).all()

    def test_rotation_invariance(self):
        rng = np.random.default_rng(15)
        pts = [(float(rng.uniform(0, 10)), float(rng.uniform(0, 8))) for _ in range(6)]
        base = rasterize_polygon(pts, 8, 10)
        for shift in range(1, len(pts)):
            rotated = pts[shift:] + pts[:shift]
            assert (rasterize_polygon(rotated, 8, 10).bits == base.bits).all()

    def test_multiple_rings_unioned(self):
        rings = [
            [0.5, 0.5, 2.5, 0.5, 2.5, 2.5, 0.5, 2.5],
            [4.5, 4.5, 6.5, 4.5, 6.5, 6.5, 4.5, 6.5],
        ]
        mask = rasterize_polygon(rings, 8, 8)
        assert mask.bits[0, 0] and mask.bits[4, 4]
        assert mask.area == 8

    def test_too_few_vertices(self):
        with pytest.raises(FormatError, match="3 vertices"):
            rasterize_polygon([(0, 0), (1, 1)], 4, 4)


class TestDecodeSegmentation:
    def test_dispatch_polygon_and_rle(self):
        parsed = parse_annotations(MINIMAL_DOC)
        ann = parsed.annotations[0]
        img = parsed.image_by_id(ann.image_id)
        mask = decode_segmentation(ann, img)
        assert (mask.height, mask.width) == (img.height, img.width)
        assert mask.annotation_id == ann.id

        rle_ann = dict(MINIMAL_DOC["annotations"][0])
        rle_ann["segmentation"] = {"size": [6, 8], "counts": [0, 48]}
        parsed2 = parse_annotations(
            {"images": MINIMAL_DOC["images"], "annotations": [rle_ann], "categories": []}
        )
        mask2 = decode_segmentation(parsed2.annotations[0], img)
        assert mask2.bits.all()

    def test_rle_size_mismatch(self):
        parsed = parse_annotations(MINIMAL_DOC)
        img = parsed.image_by_id(1)
        ann = parsed.annotations[0]
        ann.segmentation = {"size": [3, 4], "counts": [12]}
        with pytest.raises(FormatError, match="disagrees"):
            decode_segmentation(ann, img)
