"""Bounding-box annotation records and their JSON wire format.

An annotation file is a JSON array of per-frame records:

    [{"frame_id": "frame_0000",
      "boxes": [{"x": 10, "y": 20, "w": 8, "h": 6,
                 "class": "egg", "source": "human",
                 "verdict": "unreviewed"}]}]

Coordinates are unpadded pixel space, origin top-left, x along columns.
Model-produced boxes may carry an extra "score" field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

SOURCES = ("human", "model")
VERDICTS = ("accepted", "rejected", "unreviewed")


@dataclass
class Box:
    x: float
    y: float
    w: float
    h: float
    cls: str = "egg"
    source: str = "human"
    verdict: str = "unreviewed"
    score: float | None = None

    def validate(self) -> None:
        for name in ("x", "y", "w", "h"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ValueError(f"box field {name!r} must be a number, got {value!r}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"degenerate box: w={self.w}, h={self.h}")
        if self.source not in SOURCES:
            raise ValueError(f"box source must be one of {SOURCES}, got {self.source!r}")
        if self.verdict not in VERDICTS:
            raise ValueError(f"box verdict must be one of {VERDICTS}, got {self.verdict!r}")
        if not isinstance(self.cls, str) or not self.cls:
            raise ValueError(f"box class must be a non-empty string, got {self.cls!r}")

    def to_dict(self) -> dict:
        out = {"x": self.x, "y": self.y, "w": self.w, "h": self.h,
               "class": self.cls, "source": self.source, "verdict": self.verdict}
        if self.score is not None:
            out["score"] = self.score
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Box":
        unknown = set(data) - {"x", "y", "w", "h", "class", "source", "verdict", "score"}
        if unknown:
            raise ValueError(f"unknown box fields: {sorted(unknown)}")
        try:
            box = cls(x=data["x"], y=data["y"], w=data["w"], h=data["h"],
                      cls=data.get("class", "egg"),
                      source=data.get("source", "human"),
                      verdict=data.get("verdict", "unreviewed"),
                      score=data.get("score"))
        except KeyError as missing:
            raise ValueError(f"box record missing field {missing}") from None
        box.validate()
        return box

    def as_xywh(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass
class FrameAnnotations:
    frame_id: str
    boxes: list[Box] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"frame_id": self.frame_id, "boxes": [b.to_dict() for b in self.boxes]}

    @classmethod
    def from_dict(cls, data: dict) -> "FrameAnnotations":
        if not isinstance(data.get("frame_id"), str):
            raise ValueError("frame record needs a string frame_id")
        boxes = data.get("boxes", [])
        if not isinstance(boxes, list):
            raise ValueError("frame record boxes must be a list")
        return cls(frame_id=data["frame_id"],
                   boxes=[Box.from_dict(b) for b in boxes])


def dumps_annotations(records: list[FrameAnnotations]) -> str:
    """Canonical serialization: sorted keys, two-space indent."""
    return json.dumps([r.to_dict() for r in records], indent=2, sort_keys=True) + "\n"


def save_annotations(records: list[FrameAnnotations], path) -> None:
    Path(path).write_text(dumps_annotations(records))


def load_annotations(path) -> list[FrameAnnotations]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise ValueError(f"{path}: annotation file must be a JSON array")
    return [FrameAnnotations.from_dict(rec) for rec in data]


def annotations_by_frame(records: list[FrameAnnotations]) -> dict[str, FrameAnnotations]:
    return {rec.frame_id: rec for rec in records}
