"""Seeded generator of microscopy-like frames and labeled patch sets.

Eggs are smooth filled ellipses with a clearly eccentric silhouette;
near-egg distractors share the eggs' intensity statistics but are nearly
circular, so only shape separates the two classes. Rods, circles, and
irregular blobs fill out the clutter. Every random draw comes from a
PCG64 generator seeded through SeedSequence, with one spawned stream per
frame index, so datasets are reproducible across platforms and safe to
generate in parallel.

Axis ranges in the config are full axis lengths in pixels. The largest
egg (10 px major axis) therefore fits a 16x16 patch with room to center
it, which the selective-labeling scheme requires.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .annotations import Box, FrameAnnotations, save_annotations
from .imageio import save_pgm
from .patches import Frame, PatchSet, ellipse_mask
from .tensorops import FLOAT

DISTRACTOR_KINDS = ("near_egg", "circle", "rod", "blob")


@dataclass
class SynthConfig:
    seed: int = 0
    frame_height: int = 480
    frame_width: int = 640
    eggs_per_frame: tuple[int, int] = (1, 4)
    distractors_per_frame: tuple[int, int] = (60, 150)
    egg_minor_axis: tuple[float, float] = (4.0, 7.0)   # full axis, px
    egg_major_axis: tuple[float, float] = (6.0, 10.0)  # full axis, px
    min_egg_aspect: float = 1.5
    noise_level: float = 0.02
    illumination_gradient: bool = False
    background: tuple[float, float] = (0.08, 0.13)
    egg_intensity: tuple[float, float] = (0.55, 0.80)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ObjectMeta:
    kind: str  # "egg" or a distractor kind
    cx: float
    cy: float
    semi_major: float
    semi_minor: float
    theta: float
    peak: float

    def half_extents(self) -> tuple[float, float]:
        a, b, t = self.semi_major, self.semi_minor, self.theta
        ex = math.sqrt((a * math.cos(t)) ** 2 + (b * math.sin(t)) ** 2)
        ey = math.sqrt((a * math.sin(t)) ** 2 + (b * math.cos(t)) ** 2)
        return ex, ey

    def tight_box(self, source: str = "human",
                  clip_to: tuple[int, int] | None = None) -> Box:
        """Integer box enclosing every pixel index within the extents."""
        ex, ey = self.half_extents()
        x0 = math.floor(self.cx - ex)
        y0 = math.floor(self.cy - ey)
        x1 = math.floor(self.cx + ex) + 1
        y1 = math.floor(self.cy + ey) + 1
        if clip_to is not None:
            height, width = clip_to
            x0, x1 = max(x0, 0), min(x1, width)
            y0, y1 = max(y0, 0), min(y1, height)
        return Box(x=x0, y=y0, w=x1 - x0, h=y1 - y0, cls="egg", source=source)


@dataclass
class FrameSample:
    frame: Frame  # uint8 pixels
    eggs: list[Box]
    eggs_meta: list[ObjectMeta]
    distractors: list[ObjectMeta]
    boundary_case: bool = False

    @property
    def distractor_count(self) -> int:
        return len(self.distractors)


def _frame_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.PCG64(np.random.SeedSequence([seed, index])))


EDGE_SOFTNESS = 0.25  # fraction of the radius over which intensity fades


def _draw_soft_ellipse(canvas: np.ndarray, obj: ObjectMeta) -> None:
    ex, ey = obj.half_extents()
    r0 = max(0, math.floor(obj.cy - ey - 1))
    r1 = min(canvas.shape[0], math.ceil(obj.cy + ey + 2))
    c0 = max(0, math.floor(obj.cx - ex - 1))
    c1 = min(canvas.shape[1], math.ceil(obj.cx + ex + 2))
    if r0 >= r1 or c0 >= c1:
        return
    rows, cols = np.mgrid[r0:r1, c0:c1]
    dy = rows - obj.cy
    dx = cols - obj.cx
    u = dx * math.cos(obj.theta) + dy * math.sin(obj.theta)
    v = -dx * math.sin(obj.theta) + dy * math.cos(obj.theta)
    r = np.sqrt((u / obj.semi_major) ** 2 + (v / obj.semi_minor) ** 2)
    value = obj.peak * np.clip((1.0 - r) / EDGE_SOFTNESS, 0.0, 1.0)
    np.maximum(canvas[r0:r1, c0:c1], value, out=canvas[r0:r1, c0:c1])


def _draw_blob(canvas: np.ndarray, obj: ObjectMeta, rng: np.random.Generator) -> None:
    """Irregular radial-harmonic blob inside the object's nominal radius."""
    base = obj.semi_major
    amps = rng.uniform(0.0, 0.30, size=3)
    phases = rng.uniform(0.0, 2 * math.pi, size=3)
    reach = base * (1.0 + amps.sum())
    r0 = max(0, math.floor(obj.cy - reach - 1))
    r1 = min(canvas.shape[0], math.ceil(obj.cy + reach + 2))
    c0 = max(0, math.floor(obj.cx - reach - 1))
    c1 = min(canvas.shape[1], math.ceil(obj.cx + reach + 2))
    if r0 >= r1 or c0 >= c1:
        return
    rows, cols = np.mgrid[r0:r1, c0:c1]
    dy = rows - obj.cy
    dx = cols - obj.cx
    angle = np.arctan2(dy, dx)
    limit = base * (1.0 + sum(a * np.cos((k + 2) * angle + p)
                              for k, (a, p) in enumerate(zip(amps, phases))))
    limit = np.maximum(limit, 1.0)
    r = np.sqrt(dx * dx + dy * dy) / limit
    value = obj.peak * np.clip((1.0 - r) / EDGE_SOFTNESS, 0.0, 1.0)
    np.maximum(canvas[r0:r1, c0:c1], value, out=canvas[r0:r1, c0:c1])


def _sample_egg_geometry(rng: np.random.Generator, config: SynthConfig) -> tuple[float, float, float]:
    """(semi_major, semi_minor, theta) honoring the aspect separation."""
    for _ in range(64):
        minor = rng.uniform(*config.egg_minor_axis)
        major = rng.uniform(*config.egg_major_axis)
        if major >= config.min_egg_aspect * minor:
            return major / 2.0, minor / 2.0, rng.uniform(0.0, math.pi)
    # fall back to the guaranteed-feasible corner of the ranges
    minor = config.egg_minor_axis[0]
    major = max(config.egg_major_axis[0], config.min_egg_aspect * minor)
    return major / 2.0, minor / 2.0, rng.uniform(0.0, math.pi)


def _sample_distractor(rng: np.random.Generator, config: SynthConfig,
                       kind: str) -> ObjectMeta:
    lo, hi = config.egg_intensity
    if kind == "near_egg":
        # egg-like size and intensity, but nearly circular: the aspect gap
        # to the eggs (>= min_egg_aspect) is what makes the task learnable
        d = rng.uniform(5.0, 9.0)
        ratio = rng.uniform(1.0, 1.10)
        return ObjectMeta(kind, 0, 0, d * ratio / 2.0, d / 2.0,
                          rng.uniform(0.0, math.pi), rng.uniform(lo, hi))
    if kind == "circle":
        r = rng.uniform(4.0, 9.0) / 2.0
        return ObjectMeta(kind, 0, 0, r, r, 0.0, rng.uniform(0.50, 0.85))
    if kind == "rod":
        return ObjectMeta(kind, 0, 0, rng.uniform(10.0, 18.0) / 2.0,
                          rng.uniform(2.0, 3.5) / 2.0,
                          rng.uniform(0.0, math.pi), rng.uniform(0.50, 0.80))
    if kind == "blob":
        r = rng.uniform(5.0, 11.0) / 2.0
        return ObjectMeta(kind, 0, 0, r, r, 0.0, rng.uniform(0.35, 0.90))
    raise ValueError(f"unknown distractor kind {kind!r}")


def _place(rng: np.random.Generator, obj: ObjectMeta, placed: list[ObjectMeta],
           height: int, width: int, margin: float, retries: int = 200) -> bool:
    reach = obj.semi_major * 1.35 + 1.0  # blob harmonics stay under 1.30x
    for _ in range(retries):
        cy = rng.uniform(margin + reach, height - margin - reach)
        cx = rng.uniform(margin + reach, width - margin - reach)
        ok = True
        for other in placed:
            other_reach = other.semi_major * 1.35 + 1.0
            if (cy - other.cy) ** 2 + (cx - other.cx) ** 2 < (reach + other_reach + 2.0) ** 2:
                ok = False
                break
        if ok:
            obj.cy, obj.cx = cy, cx
            return True
    return False


def generate_frame(config: SynthConfig, index: int = 0,
                   boundary_case: bool = False) -> FrameSample:
    """Render one frame; deterministic in (config.seed, index)."""
    rng = _frame_rng(config.seed, index)
    height, width = config.frame_height, config.frame_width

    n_eggs = int(rng.integers(config.eggs_per_frame[0], config.eggs_per_frame[1] + 1))
    n_distractors = int(rng.integers(config.distractors_per_frame[0],
                                     config.distractors_per_frame[1] + 1))

    placed: list[ObjectMeta] = []
    eggs_meta: list[ObjectMeta] = []

    if boundary_case:
        # one egg tangent to a border, major axis parallel to it, so no
        # unpadded patch can both enclose and center it
        a, b, _ = _sample_egg_geometry(rng, config)
        side = int(rng.integers(0, 4))  # left, top, right, bottom
        peak = rng.uniform(*config.egg_intensity)
        if side in (0, 2):  # vertical border: major axis vertical
            theta = math.pi / 2.0
            cx = b if side == 0 else width - b
            cy = rng.uniform(40.0, height - 40.0)
        else:
            theta = 0.0
            cy = b if side == 1 else height - b
            cx = rng.uniform(40.0, width - 40.0)
        egg = ObjectMeta("egg", cx, cy, a, b, theta, peak)
        placed.append(egg)
        eggs_meta.append(egg)
        n_eggs = max(0, n_eggs - 1)

    for _ in range(n_eggs):
        a, b, theta = _sample_egg_geometry(rng, config)
        egg = ObjectMeta("egg", 0, 0, a, b, theta, rng.uniform(*config.egg_intensity))
        if not _place(rng, egg, placed, height, width, margin=2.0):
            raise RuntimeError(
                f"frame {index}: could not place egg after retries "
                f"({len(placed)} objects placed)"
            )
        placed.append(egg)
        eggs_meta.append(egg)

    distractors: list[ObjectMeta] = []
    kinds = rng.choice(DISTRACTOR_KINDS, size=n_distractors,
                       p=[0.30, 0.25, 0.25, 0.20])
    for kind in kinds:
        obj = _sample_distractor(rng, config, str(kind))
        if not _place(rng, obj, placed, height, width, margin=1.0):
            raise RuntimeError(
                f"frame {index}: could not place distractor after retries "
                f"({len(placed)} objects placed)"
            )
        placed.append(obj)
        distractors.append(obj)

    canvas = np.full((height, width), rng.uniform(*config.background), dtype=FLOAT)
    for obj in placed:
        if obj.kind == "blob":
            _draw_blob(canvas, obj, rng)
        else:
            _draw_soft_ellipse(canvas, obj)

    if config.illumination_gradient:
        phi = rng.uniform(0.0, 2 * math.pi)
        rows, cols = np.mgrid[0:height, 0:width]
        t = (rows * math.sin(phi) + cols * math.cos(phi))
        t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
        canvas *= 1.0 + 0.25 * (t - 0.5)

    canvas += rng.normal(0.0, config.noise_level, size=canvas.shape)
    pixels = np.clip(np.rint(np.clip(canvas, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)

    egg_boxes = [m.tight_box(clip_to=(height, width)) for m in eggs_meta]
    return FrameSample(
        frame=Frame(f"frame_{index:04d}", pixels),
        eggs=egg_boxes,
        eggs_meta=eggs_meta,
        distractors=distractors,
        boundary_case=boundary_case,
    )


def write_frames_dataset(root, config: SynthConfig, count: int,
                         boundary_cases: int = 0) -> dict:
    """Dataset layout: frames/*.pgm, annotations.json, manifest.json."""
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    records = []
    manifest_frames = []
    for index in range(count):
        sample = generate_frame(config, index,
                                boundary_case=index < boundary_cases)
        save_pgm(root / "frames" / f"{sample.frame.id}.pgm", sample.frame.pixels)
        records.append(FrameAnnotations(frame_id=sample.frame.id, boxes=sample.eggs))
        manifest_frames.append({
            "id": sample.frame.id,
            "eggs": len(sample.eggs),
            "distractors": sample.distractor_count,
            "distractor_kinds": {k: sum(1 for d in sample.distractors if d.kind == k)
                                 for k in DISTRACTOR_KINDS},
            "near_egg_boxes": [d.tight_box().as_xywh() for d in sample.distractors
                               if d.kind == "near_egg"],
            "boundary_case": sample.boundary_case,
        })
    save_annotations(records, root / "annotations.json")
    manifest = {
        "type": "frames",
        "seed": config.seed,
        "config": config.to_dict(),
        "count": count,
        "frames": manifest_frames,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# Direct patch-pair synthesis for training
# ---------------------------------------------------------------------------

PATCH = 16


def _patch_background(rng: np.random.Generator, config: SynthConfig) -> np.ndarray:
    base = rng.uniform(*config.background)
    return np.full((PATCH, PATCH), base, dtype=FLOAT)


def _finalize_patch(canvas: np.ndarray, rng: np.random.Generator,
                    config: SynthConfig) -> np.ndarray:
    canvas = canvas + rng.normal(0.0, config.noise_level, size=canvas.shape)
    return np.clip(canvas, 0.0, 1.0)


def _render_meta_in_patch(canvas, meta: ObjectMeta, rng) -> None:
    if meta.kind == "blob":
        _draw_blob(canvas, meta, rng)
    else:
        _draw_soft_ellipse(canvas, meta)


def generate_patch_dataset(config: SynthConfig, count: int,
                           positive_fraction: float = 0.4,
                           blocked_fraction: float = 0.3) -> tuple[PatchSet, dict]:
    """Curated centered-egg / blocked / background patch pairs.

    Positives carry the egg's true silhouette at intensity 1 with the
    center jittered up to 2 px; blocked pairs mix off-center eggs,
    partial eggs, and near-egg distractors; background pairs are clutter
    or plain noise. Labels of blocked and background pairs are all-zero.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if positive_fraction + blocked_fraction > 1.0:
        raise ValueError("fractions exceed 1")
    rng = np.random.default_rng(
        np.random.PCG64(np.random.SeedSequence([config.seed, 7_700_001]))
    )
    n_pos = int(round(count * positive_fraction))
    n_blocked = int(round(count * blocked_fraction))
    n_background = count - n_pos - n_blocked

    inputs = np.zeros((count, PATCH, PATCH), dtype=FLOAT)
    labels = np.zeros((count, PATCH, PATCH), dtype=FLOAT)
    provenance = np.empty(count, dtype="<U16")
    center = (PATCH - 1) / 2.0

    row = 0
    for _ in range(n_pos):
        a, b, theta = _sample_egg_geometry(rng, config)
        cy = center + rng.integers(-2, 3)
        cx = center + rng.integers(-2, 3)
        egg = ObjectMeta("egg", cx, cy, a, b, theta, rng.uniform(*config.egg_intensity))
        canvas = _patch_background(rng, config)
        _draw_soft_ellipse(canvas, egg)
        inputs[row] = _finalize_patch(canvas, rng, config)
        labels[row] = ellipse_mask((PATCH, PATCH), cy, cx, b, a, theta).astype(FLOAT)
        provenance[row] = "centered-egg"
        row += 1

    for i in range(n_blocked):
        canvas = _patch_background(rng, config)
        mode = i % 3
        if mode == 0:  # off-center egg, beyond the centering tolerance
            a, b, theta = _sample_egg_geometry(rng, config)
            angle = rng.uniform(0.0, 2 * math.pi)
            radius = rng.uniform(5.0, 8.0)
            egg = ObjectMeta("egg", center + radius * math.cos(angle),
                             center + radius * math.sin(angle), a, b, theta,
                             rng.uniform(*config.egg_intensity))
            _render_meta_in_patch(canvas, egg, rng)
        elif mode == 1:  # partial egg straddling the patch edge
            a, b, theta = _sample_egg_geometry(rng, config)
            side = rng.integers(0, 4)
            offset = rng.uniform(-3.0, 3.0)
            pos = {
                0: (center + offset, 0.0), 1: (center + offset, PATCH - 1.0),
                2: (0.0, center + offset), 3: (PATCH - 1.0, center + offset),
            }[int(side)]
            egg = ObjectMeta("egg", pos[1], pos[0], a, b, theta,
                             rng.uniform(*config.egg_intensity))
            _render_meta_in_patch(canvas, egg, rng)
        else:  # near-identical distractor, centered
            meta = _sample_distractor(rng, config, "near_egg")
            meta.cy = center + rng.integers(-2, 3)
            meta.cx = center + rng.integers(-2, 3)
            _render_meta_in_patch(canvas, meta, rng)
        inputs[row] = _finalize_patch(canvas, rng, config)
        provenance[row] = "blocked"
        row += 1

    for i in range(n_background):
        canvas = _patch_background(rng, config)
        if i % 2 == 0:  # clutter: a non-egg distractor anywhere in the patch
            kind = str(rng.choice(("circle", "rod", "blob")))
            meta = _sample_distractor(rng, config, kind)
            meta.cy = rng.uniform(0.0, PATCH - 1.0)
            meta.cx = rng.uniform(0.0, PATCH - 1.0)
            _render_meta_in_patch(canvas, meta, rng)
        inputs[row] = _finalize_patch(canvas, rng, config)
        provenance[row] = "background"
        row += 1

    patch_set = PatchSet(inputs=inputs, labels=labels, provenance=provenance)
    manifest = {
        "type": "patches",
        "seed": config.seed,
        "config": config.to_dict(),
        "set_types": patch_set.counts(),
        "total": count,
    }
    return patch_set, manifest


def save_patch_dataset(root, patch_set: PatchSet, manifest: dict) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        root / "patches.npz",
        inputs=patch_set.inputs, labels=patch_set.labels,
        provenance=patch_set.provenance, rotation_deg=patch_set.rotation_deg,
    )
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_patch_dataset(root) -> tuple[PatchSet, dict]:
    root = Path(root)
    data = np.load(root / "patches.npz")
    patch_set = PatchSet(
        inputs=data["inputs"], labels=data["labels"],
        provenance=data["provenance"], rotation_deg=data["rotation_deg"],
    )
    manifest = json.loads((root / "manifest.json").read_text())
    return patch_set, manifest
