import numpy as np
import pytest

from eggdetect import tensorops as T
from eggdetect.annotations import Box
from eggdetect.patches import (
    DEFAULT_FRAME_PAD,
    Frame,
    GridError,
    PatchSet,
    augment_rotations,
    build_labels,
    extra_padding_needed,
    extract_patches,
    make_grid,
    normalize_global,
    pad_frame,
    rotate_nn,
    stitch_tiles,
)

# padded 480x640 -> 496x656: stride -> patch count (stride 1 deviates from
# the published table's 358821, which no padding consistent with the other
# rows can produce; 308321 is the closed-form value)
TABLE_COUNTS = {1: 308321, 2: 77361, 4: 19481, 8: 4941, 16: 1271}


class TestNormalize:
    def test_full_range_maps_to_unit(self):
        frame = Frame("a", np.array([[0.0, 128.0], [64.0, 255.0]]))
        (out,) = normalize_global([frame])
        assert out.pixels.min() == 0.0 and out.pixels.max() == 1.0
        assert out.pixels[0, 1] == pytest.approx(128 / 255)

    def test_unit_range_is_fixed_point(self):
        frame = Frame("a", np.array([[0.0, 0.25], [0.5, 1.0]]))
        (out,) = normalize_global([frame])
        assert np.allclose(out.pixels, frame.pixels)

    def test_joint_map_across_frames(self):
        f1 = Frame("a", np.array([[10.0, 110.0]]))
        f2 = Frame("b", np.array([[210.0, 60.0]]))
        o1, o2 = normalize_global([f1, f2])
        assert o1.pixels[0, 1] == pytest.approx(0.5)  # (110-10)/200
        assert o2.pixels[0, 0] == pytest.approx(1.0)

    def test_constant_dataset_rejected(self):
        with pytest.raises(ValueError):
            normalize_global([Frame("a", np.full((4, 4), 7.0))])


class TestPadAndGrid:
    def test_default_pad_gives_table_counts(self):
        frame = pad_frame(Frame("a", np.zeros((480, 640))), DEFAULT_FRAME_PAD)
        assert frame.pixels.shape == (496, 656)
        for stride, count in TABLE_COUNTS.items():
            grid = make_grid(496, 656, 16, 16, stride, stride)
            assert grid.count == count, stride

    def test_oracle_counts_match_closed_form(self):
        # brute-force enumeration of valid top-left origins
        for stride in (1, 2, 4, 8, 16):
            rows = len(range(0, 496 - 16 + 1, stride))
            cols = len(range(0, 656 - 16 + 1, stride))
            assert TABLE_COUNTS[stride] == rows * cols

    def test_pad_zero_is_identity(self):
        frame = Frame("a", np.ones((8, 8)))
        assert pad_frame(frame, 0) is frame

    def test_pad_surrounds_with_zeros(self):
        frame = pad_frame(Frame("a", np.ones((2, 2))), 1)
        assert frame.pixels.shape == (4, 4)
        assert frame.pixels.sum() == 4.0
        assert frame.pixels[0].sum() == 0.0

    def test_single_patch_frame(self):
        grid = make_grid(16, 16, 16, 16, 1, 1)
        assert grid.count == 1

    def test_grid_error_reports_remainders(self):
        with pytest.raises(GridError) as err:
            make_grid(497, 659, 16, 16, 2, 2)
        assert err.value.remainder_rows == 1
        assert err.value.remainder_cols == 1
        assert extra_padding_needed(497, 659, 16, 16, 2, 2) == (1, 1)

    def test_grid_rejects_small_frame(self):
        with pytest.raises(ValueError):
            make_grid(8, 8, 16, 16, 2, 2)


class TestExtract:
    def test_tiling_roundtrip_is_identity(self):
        rng = np.random.default_rng(0)
        pixels = rng.random((48, 64))
        grid = make_grid(48, 64, 16, 16, 16, 16)
        patches = extract_patches(pixels, grid)
        assert np.array_equal(stitch_tiles(patches, grid), pixels)

    def test_counts_for_all_table_strides(self):
        pixels = np.zeros((496, 656))
        for stride, count in TABLE_COUNTS.items():
            grid = make_grid(496, 656, 16, 16, stride, stride)
            assert extract_patches(pixels, grid).shape == (count, 16, 16)

    def test_adjacent_patches_share_14_columns_at_stride_2(self):
        rng = np.random.default_rng(1)
        pixels = rng.random((16, 20))
        grid = make_grid(16, 20, 16, 16, 2, 2)
        patches = extract_patches(pixels, grid)
        assert np.array_equal(patches[0][:, 2:], patches[1][:, :14])

    def test_row_major_order_and_origins(self):
        pixels = np.arange(18 * 18, dtype=float).reshape(18, 18)
        grid = make_grid(18, 18, 16, 16, 2, 2)
        patches = extract_patches(pixels, grid)
        assert grid.count == 4
        assert patches[1][0, 0] == pixels[0, 2]
        assert patches[2][0, 0] == pixels[2, 0]

    def test_shape_mismatch_rejected(self):
        grid = make_grid(32, 32, 16, 16, 16, 16)
        with pytest.raises(ValueError):
            extract_patches(np.zeros((16, 16)), grid)


def _frame_with_egg(egg_box: Box, shape=(32, 32), value=0.8):
    pixels = np.full(shape, 0.1)
    x, y, w, h = (int(v) for v in egg_box.as_xywh())
    pixels[y : y + h, x : x + w] = value
    return pixels


class TestBuildLabels:
    def test_centered_egg_gets_silhouette(self):
        egg = Box(x=4, y=5, w=8, h=6)
        pixels = _frame_with_egg(egg, shape=(16, 16))
        grid = make_grid(16, 16, 16, 16, 16, 16)
        out = build_labels(pixels, [egg], grid)
        assert out.provenance[0] == "centered-egg"
        label = out.labels[0]
        assert label.max() == 1.0
        # silhouette confined to the box region
        assert label[:5, :].sum() == 0.0 and label[11:, :].sum() == 0.0
        assert label[:, :4].sum() == 0.0 and label[:, 12:].sum() == 0.0
        assert set(np.unique(label)) <= {0.0, 1.0}

    def test_egg_straddling_patch_edge_is_blocked(self):
        egg = Box(x=12, y=5, w=8, h=6)  # crosses column 16
        pixels = _frame_with_egg(egg, shape=(16, 32))
        grid = make_grid(16, 32, 16, 16, 16, 16)
        out = build_labels(pixels, [egg], grid)
        assert list(out.provenance) == ["blocked", "blocked"]
        assert out.labels.sum() == 0.0

    def test_empty_patch_is_background(self):
        grid = make_grid(16, 16, 16, 16, 16, 16)
        out = build_labels(np.zeros((16, 16)), [], grid)
        assert out.provenance[0] == "background"
        assert out.labels.sum() == 0.0

    def test_off_center_egg_is_blocked(self):
        egg = Box(x=0, y=0, w=6, h=6)  # center (3,3), patch center 8: off by 5
        pixels = _frame_with_egg(egg, shape=(16, 16))
        grid = make_grid(16, 16, 16, 16, 16, 16)
        out = build_labels(pixels, [egg], grid)
        assert out.provenance[0] == "blocked"

    def test_two_contained_eggs_are_blocked(self):
        eggs = [Box(x=4, y=6, w=4, h=4), Box(x=9, y=6, w=4, h=4)]
        grid = make_grid(16, 16, 16, 16, 16, 16)
        out = build_labels(np.zeros((16, 16)), eggs, grid)
        assert out.provenance[0] == "blocked"

    def test_near_identical_distractor_blocks(self):
        grid = make_grid(16, 16, 16, 16, 16, 16)
        out = build_labels(np.zeros((16, 16)), [],
                           grid, block_boxes=[Box(x=5, y=5, w=6, h=6)])
        assert out.provenance[0] == "blocked"

    def test_degenerate_box_rejected(self):
        grid = make_grid(16, 16, 16, 16, 16, 16)
        with pytest.raises(ValueError):
            build_labels(np.zeros((16, 16)), [Box(x=2, y=2, w=0, h=4)], grid)

    def test_out_of_bounds_box_rejected(self):
        grid = make_grid(16, 16, 16, 16, 16, 16)
        with pytest.raises(ValueError):
            build_labels(np.zeros((16, 16)), [Box(x=10, y=10, w=10, h=10)], grid)

    def test_stride2_multiple_positives_around_center(self):
        egg = Box(x=13, y=13, w=6, h=6)  # center (16, 16) of a 32x32 frame
        pixels = _frame_with_egg(egg)
        grid = make_grid(32, 32, 16, 16, 2, 2)
        out = build_labels(pixels, [egg], grid)
        positives = out.provenance == "centered-egg"
        assert positives.sum() > 0
        # every positive label lies inside the egg box, shifted per patch
        for idx in np.flatnonzero(positives):
            r0, c0 = grid.origin(int(idx))
            label = out.labels[idx]
            ys, xs = np.nonzero(label)
            assert ys.min() + r0 >= egg.y and ys.max() + r0 < egg.y + egg.h
            assert xs.min() + c0 >= egg.x and xs.max() + c0 < egg.x + egg.w


class TestRotation:
    def test_rotate_90_matches_quarter_turn_permutation(self):
        rng = np.random.default_rng(2)
        img = (rng.random((16, 16)) > 0.6).astype(float)
        assert np.array_equal(rotate_nn(img, 90.0), T.rotate90k(img, 1))
        assert np.array_equal(rotate_nn(img, 0.0), img)

    def test_augment_multiplies_positives_only(self):
        rng = np.random.default_rng(3)
        inputs = rng.random((5, 16, 16))
        labels = np.zeros_like(inputs)
        labels[:2, 6:10, 6:10] = 1.0
        prov = np.array(["centered-egg", "centered-egg", "blocked",
                         "background", "background"], dtype="<U16")
        ps = PatchSet(inputs=inputs, labels=labels, provenance=prov)
        out = augment_rotations(ps, k_rotations=10)
        # 2 positives x 10 + 3 passthrough
        assert len(out) == 23
        assert out.counts()["centered-egg"] == 20
        assert sorted(set(out.rotation_deg[out.provenance == "centered-egg"])) == [
            pytest.approx(18.0 * i) for i in range(10)
        ]

    def test_k1_is_identity(self):
        rng = np.random.default_rng(4)
        ps = PatchSet(
            inputs=rng.random((3, 16, 16)),
            labels=np.zeros((3, 16, 16)),
            provenance=np.array(["centered-egg", "blocked", "background"], dtype="<U16"),
        )
        out = augment_rotations(ps, k_rotations=1)
        assert np.array_equal(out.inputs, ps.inputs)
        assert np.array_equal(out.labels, ps.labels)

    def test_rotation_keeps_binary_labels(self):
        label = np.zeros((16, 16))
        label[5:10, 4:12] = 1.0
        for angle in (18.0, 45.0, 126.0):
            rotated = rotate_nn(label, angle)
            assert set(np.unique(rotated)) <= {0.0, 1.0}

    def test_table1_bookkeeping_shape(self):
        # 45432 positives x 10 rotations -> 454320 pairs, scaled down
        n_pos, k = 37, 10
        ps = PatchSet(
            inputs=np.zeros((n_pos, 16, 16)),
            labels=np.ones((n_pos, 16, 16)),
            provenance=np.full(n_pos, "centered-egg", dtype="<U16"),
        )
        assert len(augment_rotations(ps, k)) == n_pos * k
        assert 45432 * 10 == 454320
