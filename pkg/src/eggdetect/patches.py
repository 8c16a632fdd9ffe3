"""Frame normalization, patch grids, selective labels, and augmentation.

The patch grid follows U = (M - m + s_h) / s_h and V = (N - n + s_w) / s_w
for patch counts; both must divide exactly, otherwise the caller pads
first. Default frame padding is 8 pixels per side (16 total), the sizing
that makes a 480x640 frame a 496x656 grid for every power-of-two stride.

Labeling is selective: a patch gets the egg's filled silhouette as its
target only when exactly one ground-truth box is fully inside the patch
with its center inside the central half-size window. Patches with partial
eggs, off-center eggs, or flagged near-identical distractors are blocked
(all-zero target), everything else is background (also all-zero).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .annotations import Box
from .tensorops import FLOAT

PATCH_SIZE = 16
DEFAULT_FRAME_PAD = 8  # per side; 480x640 -> 496x656


@dataclass
class Frame:
    id: str
    pixels: np.ndarray  # 2-D grayscale, [0,255] raw or [0,1] normalized

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


class GridError(ValueError):
    """Grid geometry does not divide; carries the leftover remainders."""

    def __init__(self, message: str, remainder_rows: int, remainder_cols: int):
        super().__init__(message)
        self.remainder_rows = remainder_rows
        self.remainder_cols = remainder_cols


@dataclass(frozen=True)
class PatchGrid:
    height: int
    width: int
    patch_h: int
    patch_w: int
    stride_h: int
    stride_w: int
    rows: int  # U
    cols: int  # V

    @property
    def count(self) -> int:  # P
        return self.rows * self.cols

    def origin(self, index: int) -> tuple[int, int]:
        """Top-left (row, col) of the index-th patch in row-major order."""
        r, c = divmod(index, self.cols)
        return r * self.stride_h, c * self.stride_w


def make_grid(height: int, width: int, patch_h: int = PATCH_SIZE,
              patch_w: int = PATCH_SIZE, stride_h: int = 2,
              stride_w: int = 2) -> PatchGrid:
    if height < patch_h or width < patch_w:
        raise ValueError(
            f"frame {height}x{width} smaller than patch {patch_h}x{patch_w}"
        )
    if stride_h < 1 or stride_w < 1:
        raise ValueError(f"strides must be >= 1, got ({stride_h}, {stride_w})")
    rem_rows = (height - patch_h) % stride_h
    rem_cols = (width - patch_w) % stride_w
    if rem_rows or rem_cols:
        raise GridError(
            f"grid does not divide: ({height}-{patch_h}) % {stride_h} = {rem_rows}, "
            f"({width}-{patch_w}) % {stride_w} = {rem_cols}; pad "
            f"{(stride_h - rem_rows) % stride_h} rows and "
            f"{(stride_w - rem_cols) % stride_w} cols first",
            rem_rows, rem_cols,
        )
    rows = (height - patch_h + stride_h) // stride_h
    cols = (width - patch_w + stride_w) // stride_w
    return PatchGrid(height, width, patch_h, patch_w, stride_h, stride_w, rows, cols)


def extra_padding_needed(height: int, width: int, patch_h: int, patch_w: int,
                         stride_h: int, stride_w: int) -> tuple[int, int]:
    """(rows, cols) of bottom/right zero padding that make the grid divide."""
    rem_rows = (height - patch_h) % stride_h
    rem_cols = (width - patch_w) % stride_w
    return ((stride_h - rem_rows) % stride_h, (stride_w - rem_cols) % stride_w)


def normalize_global(frames: list[Frame]) -> list[Frame]:
    """One min-max affine map over every pixel of every supplied frame."""
    if not frames:
        raise ValueError("normalize_global: no frames supplied")
    lo = min(float(np.min(f.pixels)) for f in frames)
    hi = max(float(np.max(f.pixels)) for f in frames)
    if hi == lo:
        raise ValueError(f"normalize_global: constant dataset (min == max == {lo})")
    scale = 1.0 / (hi - lo)
    return [Frame(f.id, (f.pixels.astype(FLOAT) - lo) * scale) for f in frames]


def pad_frame(frame: Frame, pad: int = DEFAULT_FRAME_PAD,
              extra_bottom: int = 0, extra_right: int = 0) -> Frame:
    """Zero-pad `pad` pixels on every side (plus optional bottom/right)."""
    if pad < 0:
        raise ValueError(f"pad must be >= 0, got {pad}")
    if pad == 0 and extra_bottom == 0 and extra_right == 0:
        return frame
    pixels = np.pad(frame.pixels.astype(FLOAT),
                    ((pad, pad + extra_bottom), (pad, pad + extra_right)))
    return Frame(frame.id, pixels)


def extract_patches(pixels: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """All grid patches in row-major order, shape (P, m, n)."""
    if pixels.shape != (grid.height, grid.width):
        raise ValueError(
            f"frame shape {pixels.shape} does not match grid "
            f"({grid.height}, {grid.width})"
        )
    windows = np.lib.stride_tricks.sliding_window_view(
        pixels, (grid.patch_h, grid.patch_w)
    )[:: grid.stride_h, :: grid.stride_w]
    assert windows.shape[:2] == (grid.rows, grid.cols)
    return windows.reshape(grid.count, grid.patch_h, grid.patch_w).astype(FLOAT)


def stitch_tiles(patches: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Reassemble non-overlapping tiles (stride == patch size) exactly."""
    if (grid.stride_h, grid.stride_w) != (grid.patch_h, grid.patch_w):
        raise ValueError("stitch_tiles requires stride == patch size")
    out = np.zeros((grid.height, grid.width), dtype=patches.dtype)
    for index in range(grid.count):
        r, c = grid.origin(index)
        out[r : r + grid.patch_h, c : c + grid.patch_w] = patches[index]
    return out


# ---------------------------------------------------------------------------
# Selective labels
# ---------------------------------------------------------------------------

PROVENANCE_POSITIVE = "centered-egg"
PROVENANCE_BLOCKED = "blocked"
PROVENANCE_BACKGROUND = "background"


@dataclass
class PatchSet:
    """Columnar container of labeled patch pairs."""

    inputs: np.ndarray  # (P, m, n) in [0, 1]
    labels: np.ndarray  # (P, m, n) in [0, 1]
    provenance: np.ndarray  # (P,) unicode tags
    rotation_deg: np.ndarray = field(default=None)  # (P,) float degrees

    def __post_init__(self):
        if self.rotation_deg is None:
            self.rotation_deg = np.zeros(len(self.inputs), dtype=FLOAT)

    def __len__(self) -> int:
        return len(self.inputs)

    def counts(self) -> dict[str, int]:
        tags, counts = np.unique(self.provenance, return_counts=True)
        return {str(t): int(c) for t, c in zip(tags, counts)}

    @classmethod
    def concatenate(cls, sets: list["PatchSet"]) -> "PatchSet":
        return cls(
            inputs=np.concatenate([s.inputs for s in sets]),
            labels=np.concatenate([s.labels for s in sets]),
            provenance=np.concatenate([s.provenance for s in sets]),
            rotation_deg=np.concatenate([s.rotation_deg for s in sets]),
        )


def ellipse_mask(shape: tuple[int, int], cy: float, cx: float,
                 ry: float, rx: float, theta: float = 0.0) -> np.ndarray:
    """Filled-ellipse boolean mask; radii are semi-axes, theta in radians."""
    rows, cols = np.mgrid[0 : shape[0], 0 : shape[1]]
    dy = rows - cy
    dx = cols - cx
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    return (u / max(rx, 1e-9)) ** 2 + (v / max(ry, 1e-9)) ** 2 <= 1.0


def _box_silhouette(patch_shape, box: Box, origin_r: int, origin_c: int) -> np.ndarray:
    """Inscribed-ellipse silhouette of a box, in patch coordinates."""
    cy = box.y + box.h / 2.0 - origin_r - 0.5
    cx = box.x + box.w / 2.0 - origin_c - 0.5
    return ellipse_mask(patch_shape, cy, cx, box.h / 2.0, box.w / 2.0).astype(FLOAT)


def _fully_inside(box: Box, r0: int, c0: int, m: int, n: int) -> bool:
    return (box.y >= r0 and box.x >= c0
            and box.y + box.h <= r0 + m and box.x + box.w <= c0 + n)


def _intersects(box: Box, r0: int, c0: int, m: int, n: int) -> bool:
    return not (box.x + box.w <= c0 or box.x >= c0 + n
                or box.y + box.h <= r0 or box.y >= r0 + m)


def _centered(box: Box, r0: int, c0: int, m: int, n: int) -> bool:
    # box center inside the central (m/2) x (n/2) window of the patch
    cy = box.y + box.h / 2.0
    cx = box.x + box.w / 2.0
    return (abs(cy - (r0 + m / 2.0)) <= m / 4.0
            and abs(cx - (c0 + n / 2.0)) <= n / 4.0)


def build_labels(pixels: np.ndarray, egg_boxes: list[Box], grid: PatchGrid,
                 block_boxes: list[Box] | None = None) -> PatchSet:
    """Label every grid patch of a normalized, padded frame.

    `egg_boxes` and `block_boxes` are given in the same (padded) pixel
    space as `pixels`; callers working in unpadded coordinates shift the
    boxes by the pad first.
    """
    for box in egg_boxes:
        box.validate()
        if not (0 <= box.x and 0 <= box.y
                and box.x + box.w <= grid.width and box.y + box.h <= grid.height):
            raise ValueError(f"box {box.as_xywh()} outside frame bounds")
    block_boxes = block_boxes or []

    inputs = extract_patches(pixels, grid)
    labels = np.zeros_like(inputs)
    provenance = np.full(grid.count, PROVENANCE_BACKGROUND, dtype="<U16")
    m, n = grid.patch_h, grid.patch_w

    for index in range(grid.count):
        r0, c0 = grid.origin(index)
        touching = [b for b in egg_boxes if _intersects(b, r0, c0, m, n)]
        blocked_by_distractor = any(
            _intersects(b, r0, c0, m, n) for b in block_boxes
        )
        if not touching:
            if blocked_by_distractor:
                provenance[index] = PROVENANCE_BLOCKED
            continue
        contained = [b for b in touching if _fully_inside(b, r0, c0, m, n)]
        if (len(touching) == 1 and len(contained) == 1
                and _centered(contained[0], r0, c0, m, n)
                and not blocked_by_distractor):
            labels[index] = _box_silhouette((m, n), contained[0], r0, c0)
            provenance[index] = PROVENANCE_POSITIVE
        else:
            # partial egg, off-center egg, several eggs, or a flagged
            # near-identical distractor in frame: blocked
            provenance[index] = PROVENANCE_BLOCKED

    return PatchSet(inputs=inputs, labels=labels, provenance=provenance)


# ---------------------------------------------------------------------------
# Rotation augmentation
# ---------------------------------------------------------------------------


def rotate_nn(image: np.ndarray, degrees: float) -> np.ndarray:
    """Nearest-neighbor rotation about the array center, CCW positive.

    Exact index permutation at multiples of 90 degrees (matches rot90);
    out-of-bounds source pixels become 0, keeping binary labels binary.
    """
    theta = math.radians(degrees % 360.0)
    h, w = image.shape
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.mgrid[0:h, 0:w]
    di = rows - cr
    dj = cols - cc
    src_r = cr + di * math.cos(theta) + dj * math.sin(theta)
    src_c = cc - di * math.sin(theta) + dj * math.cos(theta)
    ri = np.rint(src_r).astype(np.int64)
    ci = np.rint(src_c).astype(np.int64)
    valid = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
    out = np.zeros_like(image)
    out[valid] = image[ri[valid], ci[valid]]
    return out


def augment_rotations(patch_set: PatchSet, k_rotations: int = 10) -> PatchSet:
    """Replicate each positive pair at k evenly spaced angles in [0, 180).

    Inputs and labels rotate identically; blocked and background pairs
    pass through once, unrotated.
    """
    if k_rotations < 1:
        raise ValueError(f"k_rotations must be >= 1, got {k_rotations}")
    angles = [180.0 * i / k_rotations for i in range(k_rotations)]

    out_inputs, out_labels, out_prov, out_rot = [], [], [], []
    for i in range(len(patch_set)):
        if patch_set.provenance[i] == PROVENANCE_POSITIVE:
            for angle in angles:
                if angle == 0.0:
                    out_inputs.append(patch_set.inputs[i])
                    out_labels.append(patch_set.labels[i])
                else:
                    out_inputs.append(rotate_nn(patch_set.inputs[i], angle))
                    out_labels.append(rotate_nn(patch_set.labels[i], angle))
                out_prov.append(PROVENANCE_POSITIVE)
                out_rot.append(angle)
        else:
            out_inputs.append(patch_set.inputs[i])
            out_labels.append(patch_set.labels[i])
            out_prov.append(patch_set.provenance[i])
            out_rot.append(patch_set.rotation_deg[i])

    return PatchSet(
        inputs=np.stack(out_inputs),
        labels=np.stack(out_labels),
        provenance=np.asarray(out_prov, dtype="<U16"),
        rotation_deg=np.asarray(out_rot, dtype=FLOAT),
    )
