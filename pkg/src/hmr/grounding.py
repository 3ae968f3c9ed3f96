"""Text protocol of the grounding model.

Prompts are ``<img>{image_ref}</img>{instruction}``. Answers carry one or more
``<ref>NAME</ref><box>(x1,y1),(x2,y2)</box>`` groups whose coordinates are
integers in the normalized ``[0, 1000)`` frame.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

from .errors import InvalidBox, MalformedToken, OutOfRange, UnknownAcupoint
from .registry import AcupointRegistry

NORM = 1000
NORM_MAX = NORM - 1
UNKNOWN_ID = -1


@dataclass(frozen=True)
class NormalizedBox:
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(isinstance(c, int) and not isinstance(c, bool) for c in coords):
            raise InvalidBox(f"normalized coordinates must be integers: {coords}")
        if not all(0 <= c <= NORM_MAX for c in coords):
            raise OutOfRange(f"normalized coordinates must lie in [0, {NORM_MAX}]: {coords}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise InvalidBox(f"inverted box {coords}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def area(self) -> int:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True)
class GroundingRecord:
    """A named box from a model answer. ``acupoint_id == -1`` flags an unknown name."""

    acupoint_id: int
    name: str
    box: NormalizedBox

    @property
    def known(self) -> bool:
        return self.acupoint_id >= 0


@dataclass(frozen=True)
class PromptSample:
    image_ref: str
    instruction: str

    def __post_init__(self):
        if not self.instruction:
            raise ValueError("instruction must be non-empty")
        if "</img>" in self.image_ref:
            raise ValueError("image_ref may not contain '</img>'")


def serialize_prompt(sample: PromptSample) -> str:
    return f"<img>{sample.image_ref}</img>{sample.instruction}"


_PROMPT = re.compile(r"<img>(.*?)</img>(.+)\Z", re.DOTALL)


def parse_prompt(text: str) -> PromptSample:
    m = _PROMPT.match(text)
    if m is None:
        raise MalformedToken("prompt must look like <img>REF</img>INSTRUCTION")
    return PromptSample(m.group(1), m.group(2))


def format_box(box: NormalizedBox) -> str:
    return f"({box.x1},{box.y1}),({box.x2},{box.y2})"


def format_grounding_output(records: Sequence[GroundingRecord]) -> str:
    """Inverse of :func:`parse_grounding_output`."""
    return "".join(f"<ref>{r.name}</ref><box>{format_box(r.box)}</box>" for r in records)


_TAG = re.compile(r"<(/?)(ref|box)>")
_COORDS = re.compile(
    r"\s*\(\s*([-+]?\d+)\s*,\s*([-+]?\d+)\s*\)\s*,\s*\(\s*([-+]?\d+)\s*,\s*([-+]?\d+)\s*\)\s*\Z"
)


def _parse_box(content: str) -> NormalizedBox:
    m = _COORDS.match(content)
    if m is None:
        raise MalformedToken(f"box content {content[:40]!r} is not (x1,y1),(x2,y2) with integers")
    x1, y1, x2, y2 = (int(g) for g in m.groups())
    if not all(0 <= c <= NORM_MAX for c in (x1, y1, x2, y2)):
        raise OutOfRange(f"box coordinate outside [0, {NORM_MAX}]: {(x1, y1, x2, y2)}")
    if x1 > x2 or y1 > y2:
        raise MalformedToken(f"inverted box {(x1, y1, x2, y2)}")
    return NormalizedBox(x1, y1, x2, y2)


def parse_grounding_output(
    raw: str | bytes,
    registry: AcupointRegistry | None = None,
    strict: bool = False,
) -> list[GroundingRecord]:
    """Extract every ``<ref>..</ref><box>..</box>`` group in order.

    Text outside the tags is ignored. A ``<ref>`` that is not followed by a box
    is treated as a plain mention. Consecutive boxes share the preceding ref.
    Unknown names yield ``acupoint_id == -1`` unless ``strict`` is set, in which
    case :class:`UnknownAcupoint` is raised.
    """
    if isinstance(raw, (bytes, bytearray)):
        raw = bytes(raw).decode("utf-8", errors="replace")
    if registry is None:
        registry = _default_registry()

    records: list[GroundingRecord] = []
    current: str | None = None  # name a following <box> attaches to
    pos = 0
    while True:
        m = _TAG.search(raw, pos)
        if m is None:
            break
        closing, kind = m.group(1), m.group(2)
        if closing:
            raise MalformedToken(f"stray </{kind}> at offset {m.start()}")
        if current is not None and raw[pos:m.start()].strip():
            current = None  # prose between groups breaks the ref/box association
        end = raw.find(f"</{kind}>", m.end())
        if end < 0:
            raise MalformedToken(f"unclosed <{kind}> at offset {m.start()}")
        content = raw[m.end():end]
        inner = _TAG.search(content)
        if inner is not None:
            raise MalformedToken(f"unclosed <{kind}> at offset {m.start()}")
        if kind == "ref":
            name = content.strip()
            if not name:
                raise MalformedToken(f"empty <ref> at offset {m.start()}")
            current = name
        else:
            if current is None:
                raise MalformedToken(f"<box> at offset {m.start()} has no preceding <ref>")
            box = _parse_box(content)
            acupoint_id = registry.resolve(current)
            if acupoint_id is None:
                if strict:
                    raise UnknownAcupoint(current)
                acupoint_id = UNKNOWN_ID
            records.append(GroundingRecord(acupoint_id, current, box))
        pos = end + len(kind) + 3
    return records


_DEFAULT_REGISTRY: AcupointRegistry | None = None


def _default_registry() -> AcupointRegistry:
    global _DEFAULT_REGISTRY
    if _DEFAULT_REGISTRY is None:
        _DEFAULT_REGISTRY = AcupointRegistry.default()
    return _DEFAULT_REGISTRY


def _normalize_coord(c: float, extent: int) -> int:
    return min(max(math.floor(c * NORM / extent), 0), NORM_MAX)


def normalize_box(px_box: Sequence[float], width: int, height: int) -> NormalizedBox:
    """Pixel rectangle -> normalized integer box, ``clamp(floor(c*1000/D), 0, 999)``."""
    if width < 1 or height < 1:
        raise InvalidBox(f"image size must be >= 1, got {width}x{height}")
    x1, y1, x2, y2 = (float(c) for c in px_box)
    if not all(math.isfinite(c) for c in (x1, y1, x2, y2)):
        raise InvalidBox("non-finite pixel coordinate")
    if x1 > x2 or y1 > y2:
        raise InvalidBox(f"inverted pixel box {tuple(px_box)}")
    if x1 < 0 or y1 < 0 or x2 > width or y2 > height:
        raise InvalidBox(f"pixel box {tuple(px_box)} outside {width}x{height} image")
    return NormalizedBox(
        _normalize_coord(x1, width),
        _normalize_coord(y1, height),
        _normalize_coord(x2, width),
        _normalize_coord(y2, height),
    )


def denormalize_box(box: NormalizedBox, width: int, height: int) -> tuple[float, float, float, float]:
    """Normalized box -> pixel rectangle using the cell-centre convention ``(n+0.5)*D/1000``."""
    if width < 1 or height < 1:
        raise InvalidBox(f"image size must be >= 1, got {width}x{height}")
    return (
        (box.x1 + 0.5) * width / NORM,
        (box.y1 + 0.5) * height / NORM,
        (box.x2 + 0.5) * width / NORM,
        (box.y2 + 0.5) * height / NORM,
    )


def box_center(box: NormalizedBox, width: int, height: int) -> tuple[float, float]:
    x1, y1, x2, y2 = denormalize_box(box, width, height)
    return ((x1 + x2) / 2.0, (y1 + y2) / 2.0)
