import numpy as np
import pytest

from polarkit.errors import DataError, StructuralError, UsageError
from polarkit.mosaic import (
    DEFAULT_LAYOUT,
    RawMosaicFrame,
    interpolate_full_res,
    layout_offsets,
    split_mosaic,
    tile_stack,
)


def test_single_superpixel_reading_order():
    frame = RawMosaicFrame(samples=np.array([[1.0, 2.0], [3.0, 4.0]]))
    stack = split_mosaic(frame)
    assert stack.i0[0, 0] == 1.0
    assert stack.i45[0, 0] == 2.0
    assert stack.i90[0, 0] == 3.0
    assert stack.i135[0, 0] == 4.0


def test_constant_frame_splits_to_constant_planes():
    frame = RawMosaicFrame(samples=np.full((4, 4), 7.5))
    stack = split_mosaic(frame)
    for plane in (stack.i0, stack.i45, stack.i90, stack.i135):
        assert plane.shape == (2, 2)
        assert (plane == 7.5).all()


def test_split_matches_hand_indexed_gather():
    # Oracle: explicit per-pixel index arithmetic over the superpixel grid.
    rng = np.random.default_rng(0)
    samples = rng.uniform(0, 100, size=(4, 4))
    layout = (90, 0, 135, 45)
    frame = RawMosaicFrame(samples=samples, layout=layout)
    stack = split_mosaic(frame)
    offsets = layout_offsets(layout)
    for angle in (0, 45, 90, 135):
        dr, dc = offsets[angle]
        expected = np.empty((2, 2))
        for r in range(2):
            for c in range(2):
                expected[r, c] = samples[2 * r + dr, 2 * c + dc]
        assert (stack.plane(angle) == expected).all()


def test_split_then_tile_is_bit_exact():
    rng = np.random.default_rng(1)
    for layout in (DEFAULT_LAYOUT, (135, 90, 45, 0)):
        samples = rng.uniform(0, 65535, size=(8, 6))
        frame = RawMosaicFrame(samples=samples, layout=layout)
        rebuilt = tile_stack(split_mosaic(frame), layout=layout)
        assert (rebuilt.samples == samples).all()


def test_odd_dimensions_rejected():
    with pytest.raises(StructuralError):
        RawMosaicFrame(samples=np.zeros((3, 4)))


def test_bad_layout_rejected():
    with pytest.raises(DataError):
        RawMosaicFrame(samples=np.zeros((2, 2)), layout=(0, 45, 90, 90))


def test_unknown_method_rejected():
    frame = RawMosaicFrame(samples=np.zeros((2, 2)))
    with pytest.raises(UsageError):
        interpolate_full_res(frame, method="bicubic")


@pytest.mark.parametrize("method", ["nearest", "bilinear"])
def test_constant_frame_interpolates_to_constant(method):
    frame = RawMosaicFrame(samples=np.full((6, 6), 3.25))
    stack = interpolate_full_res(frame, method=method)
    for plane in (stack.i0, stack.i45, stack.i90, stack.i135):
        assert plane.shape == (6, 6)
        assert (plane == 3.25).all()


@pytest.mark.parametrize("method", ["nearest", "bilinear"])
def test_native_positions_preserved_exactly(method):
    rng = np.random.default_rng(2)
    samples = rng.uniform(0, 10, size=(8, 8))
    frame = RawMosaicFrame(samples=samples)
    stack = interpolate_full_res(frame, method=method)
    offsets = layout_offsets(frame.layout)
    for angle in (0, 45, 90, 135):
        dr, dc = offsets[angle]
        assert (stack.plane(angle)[dr::2, dc::2] == samples[dr::2, dc::2]).all()


def test_bilinear_reproduces_linear_ramp_in_interior():
    # Oracle: a linear ramp is reproduced exactly by linear interpolation
    # wherever no edge clamping occurs.
    h = w = 8
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    samples = 2.0 + 0.5 * rr + 0.25 * cc
    frame = RawMosaicFrame(samples=samples)
    stack = interpolate_full_res(frame, method="bilinear")
    offsets = layout_offsets(frame.layout)
    for angle in (0, 45, 90, 135):
        dr, dc = offsets[angle]
        # Interior: rows in [dr, h-2+dr], cols in [dc, w-2+dc] stay clamp-free.
        interior = np.s_[dr : h - 2 + dr + 1, dc : w - 2 + dc + 1]
        got = stack.plane(angle)[interior]
        want = samples[interior]
        assert np.allclose(got, want, atol=1e-12)


@pytest.mark.parametrize("method", ["nearest", "bilinear"])
def test_interpolation_preserves_global_bounds(method):
    rng = np.random.default_rng(4)
    for _ in range(10):
        samples = rng.uniform(5, 9, size=(6, 10))
        frame = RawMosaicFrame(samples=samples)
        stack = interpolate_full_res(frame, method=method)
        for plane in (stack.i0, stack.i45, stack.i90, stack.i135):
            assert plane.min() >= samples.min() - 1e-12
            assert plane.max() <= samples.max() + 1e-12
