"""Optical flow estimation, color coding, .flo format, clip preprocessing."""

import io

import numpy as np
import pytest

from twostream.errors import DataError
from twostream.flow import (
    FlowField,
    estimate_flow,
    flow_to_color,
    preprocess_clip,
    read_flo,
    subsample_indices,
    write_flo,
    _COLOR_WHEEL,
)


def sinusoid(n=64, period=16.0):
    y, x = np.mgrid[0:n, 0:n].astype(float)
    return 0.5 + 0.2 * np.sin(2 * np.pi * x / period) + 0.2 * np.sin(2 * np.pi * y / period)


def field_of(u, v, n=4):
    return FlowField(width=n, height=n, u=np.full((n, n), float(u)), v=np.full((n, n), float(v)))


class TestEstimateFlow:
    def test_identical_frames_zero_flow(self):
        img = sinusoid(32)
        field = estimate_flow(img, img)
        assert not field.u.any()
        assert not field.v.any()

    def test_one_pixel_right_shift(self):
        prev = sinusoid()
        curr = np.roll(prev, 1, axis=1)
        field = estimate_flow(prev, curr)
        assert 0.7 <= field.u.mean() <= 1.3
        assert abs(field.v).mean() < 0.3

    @pytest.mark.parametrize("shift,gt", [((0, 1), (1, 0)), ((0, -1), (-1, 0)),
                                          ((1, 0), (0, 1)), ((-1, 0), (0, -1))])
    def test_cardinal_translations_endpoint_error(self, shift, gt):
        prev = sinusoid()
        curr = np.roll(prev, shift, axis=(0, 1))
        field = estimate_flow(prev, curr)
        epe = np.sqrt((field.u - gt[0]) ** 2 + (field.v - gt[1]) ** 2).mean()
        assert epe <= 0.5

    def test_constant_images_zero_flow(self):
        prev = np.full((16, 16), 0.2)
        curr = np.full((16, 16), 0.8)
        field = estimate_flow(prev, curr)
        assert not field.u.any()
        assert not field.v.any()

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(DataError):
            estimate_flow(np.zeros((16, 16)), np.zeros((16, 18)))

    def test_too_small_rejected(self):
        with pytest.raises(DataError):
            estimate_flow(np.zeros((4, 4)), np.zeros((4, 4)))

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(0)
        prev = rng.uniform(size=(24, 24))
        curr = rng.uniform(size=(24, 24))
        a = estimate_flow(prev, curr)
        b = estimate_flow(prev, curr)
        np.testing.assert_array_equal(a.u, b.u)
        np.testing.assert_array_equal(a.v, b.v)

    def test_swap_negates_translation(self):
        prev = sinusoid()
        curr = np.roll(prev, 1, axis=1)
        fwd = estimate_flow(prev, curr)
        bwd = estimate_flow(curr, prev)
        assert abs((fwd.u + bwd.u).mean()) <= 0.3


class TestFlowToColor:
    def test_zero_vector_white(self):
        img = flow_to_color(field_of(0.0, 0.0))
        assert (img == 255).all()

    def test_max_magnitude_vector_is_wheel_color(self):
        # single uniform field: every pixel is at the maximum magnitude, so
        # saturation is full and the pixel equals the wheel color at that angle
        field = field_of(-1.0, 0.0)  # atan2(-v,-u) = atan2(0, 1) = 0 -> wheel middle
        img = flow_to_color(field)
        ncols = _COLOR_WHEEL.shape[0]
        fk = (0.0 + 1.0) / 2.0 * (ncols - 1)
        k0 = int(np.floor(fk))
        frac = fk - k0
        expected = np.floor(
            255.0 * ((1.0 - frac) * _COLOR_WHEEL[k0] / 255.0 + frac * _COLOR_WHEEL[(k0 + 1) % ncols] / 255.0)
        ).astype(np.uint8)
        assert (img.reshape(-1, 3) == expected).all()

    def test_opposite_directions_opposite_wheel_sides(self):
        n = 1
        a = FlowField(width=n, height=n, u=np.array([[2.0]]), v=np.array([[1.0]]))
        b = FlowField(width=n, height=n, u=np.array([[-2.0]]), v=np.array([[-1.0]]))
        ncols = _COLOR_WHEEL.shape[0]

        def wheel_pos(f):
            ang = np.arctan2(-f.v[0, 0], -f.u[0, 0]) / np.pi
            return (ang + 1.0) / 2.0 * (ncols - 1)

        gap = abs(wheel_pos(a) - wheel_pos(b))
        assert gap == pytest.approx((ncols - 1) / 2.0)
        assert not np.array_equal(flow_to_color(a, 3.0), flow_to_color(b, 3.0))

    def test_channels_in_range_and_uint8(self):
        rng = np.random.default_rng(1)
        field = FlowField(width=9, height=7, u=rng.normal(size=(7, 9)), v=rng.normal(size=(7, 9)))
        img = flow_to_color(field)
        assert img.dtype == np.uint8
        assert img.shape == (7, 9, 3)
        # with an external max smaller than the field max, out-of-range
        # vectors take the dimmed branch and must still be in range
        img2 = flow_to_color(field, max_magnitude=0.1)
        assert img2.min() >= 0 and img2.max() <= 255

    def test_zero_magnitude_pixels_white_in_mixed_field(self):
        u = np.array([[0.0, 1.0]])
        v = np.array([[0.0, 0.5]])
        img = flow_to_color(FlowField(width=2, height=1, u=u, v=v))
        assert img[0, 0].tolist() == [255, 255, 255]
        assert img[0, 1].tolist() != [255, 255, 255]


class TestFloFormat:
    def test_roundtrip_32bit_exact(self):
        rng = np.random.default_rng(2)
        field = FlowField(width=5, height=3, u=rng.normal(size=(3, 5)), v=rng.normal(size=(3, 5)))
        buf = io.BytesIO()
        write_flo(field, buf)
        back = read_flo(io.BytesIO(buf.getvalue()))
        np.testing.assert_array_equal(back.u, field.u.astype(np.float32).astype(np.float64))
        np.testing.assert_array_equal(back.v, field.v.astype(np.float32).astype(np.float64))
        assert (back.width, back.height) == (5, 3)

    def test_one_by_one_is_twenty_bytes(self):
        buf = io.BytesIO()
        write_flo(field_of(0.0, 0.0, n=1), buf)
        assert len(buf.getvalue()) == 20

    def test_bad_magic_rejected(self):
        buf = io.BytesIO()
        write_flo(field_of(1.0, 2.0, n=2), buf)
        corrupted = b"\x00\x00\x00\x00" + buf.getvalue()[4:]
        with pytest.raises(DataError, match="magic"):
            read_flo(io.BytesIO(corrupted))

    def test_truncated_rejected(self):
        buf = io.BytesIO()
        write_flo(field_of(1.0, 2.0, n=2), buf)
        with pytest.raises(DataError, match="truncated"):
            read_flo(io.BytesIO(buf.getvalue()[:-3]))

    def test_nonpositive_dims_rejected(self):
        import struct

        payload = struct.pack("<fii", 202021.25, 0, 4)
        with pytest.raises(DataError, match="positive"):
            read_flo(io.BytesIO(payload))


class FakeClip:
    def __init__(self, frames):
        self.frames = frames
        self.id = "fake"
        self.label = 0


def gray_frames(count, size=32, move=False):
    base = (sinusoid(size) * 255).astype(np.uint8)
    frames = []
    for t in range(count):
        img = np.roll(base, t, axis=1) if move else base
        frames.append(np.stack([img] * 3, axis=-1))
    return frames


class TestPreprocessClip:
    def test_pair_count_24_frames(self):
        clip = FakeClip(gray_frames(24))
        pairs = preprocess_clip(clip, target_frames=24, target_size=32)
        assert len(pairs) == 23

    def test_identical_two_frames_all_white_flow(self):
        clip = FakeClip(gray_frames(2))
        pairs = preprocess_clip(clip, target_frames=2, target_size=32)
        assert len(pairs) == 1
        frame, flow_img = pairs[0]
        assert frame.shape == (32, 32, 3)
        assert (flow_img == 255).all()

    def test_subsample_indices_48_to_24(self):
        indices = subsample_indices(48, 24)
        # oracle: evenly spaced, endpoints kept, strictly increasing,
        # steps of 2 except a single 3 where rounding lands
        assert indices[0] == 0 and indices[-1] == 47
        assert len(indices) == 24
        diffs = np.diff(indices)
        assert set(diffs.tolist()) <= {2, 3}
        expected = [int(i * 47 / 23 + 0.5) for i in range(24)]
        assert indices == expected

    def test_single_frame_rejected(self):
        with pytest.raises(DataError):
            preprocess_clip(FakeClip(gray_frames(1)), target_frames=2, target_size=32)

    def test_resizing_applied(self):
        clip = FakeClip(gray_frames(3, size=64))
        pairs = preprocess_clip(clip, target_frames=3, target_size=(16, 16))
        assert pairs[0][0].shape == (16, 16, 3)
        assert pairs[0][1].shape == (16, 16, 3)

    def test_moving_clip_nonwhite_flow(self):
        clip = FakeClip(gray_frames(4, move=True))
        pairs = preprocess_clip(clip, target_frames=4, target_size=32)
        assert any((flow_img != 255).any() for _, flow_img in pairs)
