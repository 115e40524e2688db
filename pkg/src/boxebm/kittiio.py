"""KITTI object-label and result-file text I/O.

Field order per line: type truncated occluded alpha bbox(4: left top right
bottom) dimensions(3: h w l) location(3: x y z, camera frame, y is the box
BOTTOM) rotation_y [score]. 15 fields for labels, 16 for results.

Camera frame -> library world frame: cx = z, cy = -x, cz = -y + h/2 (the
bottom-center location is lifted to the geometric center), yaw =
-rotation_y - pi/2 wrapped to [-pi, pi). This is a rigid ground-plane map,
so IoU and AP computed on converted boxes equal those computed in the
camera frame directly; nothing downstream depends on matching any
detector's internal frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InputError, ParseError
from .geometry import Box3D

N_LABEL_FIELDS = 15
N_RESULT_FIELDS = 16
DONT_CARE = "DontCare"


def wrap_angle(a: float) -> float:
    """Wrap to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class KittiLabel:
    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox_left: float
    bbox_top: float
    bbox_right: float
    bbox_bottom: float
    h: float
    w: float
    l: float
    x: float
    y: float
    z: float
    rotation_y: float
    score: float | None = None

    @property
    def is_evaluable(self) -> bool:
        return self.type != DONT_CARE and self.h > 0 and self.w > 0 and self.l > 0

    def numeric_fields(self):
        fields = [self.truncated, float(self.occluded), self.alpha,
                  self.bbox_left, self.bbox_top, self.bbox_right, self.bbox_bottom,
                  self.h, self.w, self.l, self.x, self.y, self.z, self.rotation_y]
        if self.score is not None:
            fields.append(self.score)
        return fields


def parse_label_file(text: str) -> list[KittiLabel]:
    """Parse label (15-field) or result (16-field) lines."""
    labels = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        tokens = line.split()
        if len(tokens) not in (N_LABEL_FIELDS, N_RESULT_FIELDS):
            raise ParseError(f"expected 15 or 16 fields, got {len(tokens)}", line=lineno)
        try:
            nums = [float(t) for t in tokens[1:]]
        except ValueError as exc:
            raise ParseError(f"unparsable number: {exc}", line=lineno) from None
        if nums[5] < nums[3] or nums[6] < nums[4]:
            raise ParseError("2D bbox has right < left or bottom < top", line=lineno)
        labels.append(KittiLabel(
            type=tokens[0],
            truncated=nums[0],
            occluded=int(nums[1]),
            alpha=nums[2],
            bbox_left=nums[3], bbox_top=nums[4], bbox_right=nums[5], bbox_bottom=nums[6],
            h=nums[7], w=nums[8], l=nums[9],
            x=nums[10], y=nums[11], z=nums[12],
            rotation_y=nums[13],
            score=nums[14] if len(nums) == 15 else None,
        ))
    return labels


def to_box3d(label: KittiLabel) -> Box3D:
    """Convert a camera-frame label to a world-frame box."""
    if not label.is_evaluable:
        raise InputError(f"cannot convert non-evaluable label of type {label.type!r}")
    return Box3D(
        cx=label.z,
        cy=-label.x,
        cz=-label.y + label.h / 2.0,
        h=label.h,
        w=label.w,
        l=label.l,
        yaw=wrap_angle(-label.rotation_y - math.pi / 2.0),
    )


def from_box3d(box: Box3D, score: float | None = None, type: str = "Car",
               truncated: float = 0.0, occluded: int = 0,
               bbox=(0.0, 0.0, 0.0, 0.0)) -> KittiLabel:
    """Inverse of to_box3d; alpha is derived from rotation_y and viewing ray."""
    x = -box.cy
    y = box.h / 2.0 - box.cz
    z = box.cx
    rotation_y = wrap_angle(-box.yaw - math.pi / 2.0)
    alpha = wrap_angle(rotation_y - math.atan2(x, z))
    return KittiLabel(
        type=type, truncated=truncated, occluded=occluded, alpha=alpha,
        bbox_left=bbox[0], bbox_top=bbox[1], bbox_right=bbox[2], bbox_bottom=bbox[3],
        h=box.h, w=box.w, l=box.l, x=x, y=y, z=z,
        rotation_y=rotation_y, score=score,
    )


def format_label(label: KittiLabel) -> str:
    nums = " ".join(f"{v:.6f}" for v in label.numeric_fields())
    return f"{label.type} {nums}"


def write_result_file(labels: list[KittiLabel]) -> str:
    """Result-file text: 16 fields per line, fixed 6-decimal formatting."""
    lines = []
    for i, label in enumerate(labels):
        if label.score is None:
            raise InputError(f"result line {i} is missing a score")
        lines.append(format_label(label))
    return "".join(line + "\n" for line in lines)


def write_label_file(labels: list[KittiLabel]) -> str:
    """Label-file text: 15 fields per line (scores dropped)."""
    out = []
    for label in labels:
        bare = KittiLabel(**{**label.__dict__, "score": None})
        out.append(format_label(bare))
    return "".join(line + "\n" for line in out)
