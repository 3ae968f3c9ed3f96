"""Manifest loading/validation, geometric augmentation with box remapping, and
16-bit depth-map I/O."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path, PurePosixPath
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateResult, ParseError, ValidationError
from .registry import AcupointRegistry

LIGHTING = ("natural", "dim", "bright")

Box = tuple[float, float, float, float]


@dataclass(frozen=True)
class Annotation:
    acupoint_id: int
    name: str
    box_px: Box

    def to_dict(self) -> dict:
        return {"acupoint_id": self.acupoint_id, "name": self.name, "box_px": list(self.box_px)}


@dataclass(frozen=True)
class ManifestSample:
    image_ref: str
    width: int
    height: int
    depth_ref: str | None = None
    lighting: str = "natural"
    background: str = "plain"
    annotations: tuple[Annotation, ...] = field(default_factory=tuple)

    def __post_init__(self):
        _check_sample(self)

    def to_dict(self) -> dict:
        return {
            "image": self.image_ref,
            "width": self.width,
            "height": self.height,
            "depth": self.depth_ref,
            "lighting": self.lighting,
            "background": self.background,
            "annotations": [a.to_dict() for a in self.annotations],
        }


def _check_sample(s: ManifestSample) -> None:
    if not isinstance(s.width, int) or not isinstance(s.height, int) or s.width < 1 or s.height < 1:
        raise ValidationError(f"width/height must be integers >= 1, got {s.width}x{s.height}")
    if s.lighting not in LIGHTING:
        raise ValidationError(f"lighting must be one of {LIGHTING}, got {s.lighting!r}")
    for a in s.annotations:
        if a.acupoint_id < 0:
            raise ValidationError(f"acupoint_id must be >= 0, got {a.acupoint_id}")
        if not a.name:
            raise ValidationError("annotation name must be non-empty")
        x1, y1, x2, y2 = a.box_px
        if not (0 <= x1 <= x2 <= s.width and 0 <= y1 <= y2 <= s.height):
            raise ValidationError(
                f"box {tuple(a.box_px)} of {a.name!r} is outside the {s.width}x{s.height} image"
            )


@dataclass(frozen=True)
class ManifestSummary:
    images: int
    annotations: int
    by_lighting: dict[str, int]

    def as_tuple(self) -> tuple[int, int]:
        return self.images, self.annotations


def summarize(samples: Sequence[ManifestSample]) -> ManifestSummary:
    return ManifestSummary(
        images=len(samples),
        annotations=sum(len(s.annotations) for s in samples),
        by_lighting=dict(Counter(s.lighting for s in samples)),
    )


def _sample_from_obj(obj, line: int, registry: AcupointRegistry | None) -> ManifestSample:
    if not isinstance(obj, dict):
        raise ValidationError("manifest line must be a JSON object", line)
    for key in ("image", "width", "height", "lighting", "annotations"):
        if key not in obj:
            raise ValidationError(f"missing field {key!r}", line)
    if not isinstance(obj["image"], str) or not obj["image"]:
        raise ValidationError("'image' must be a non-empty string", line)
    depth = obj.get("depth")
    if depth is not None and not isinstance(depth, str):
        raise ValidationError("'depth' must be a string or null", line)
    if not isinstance(obj["annotations"], list):
        raise ValidationError("'annotations' must be a list", line)
    anns = []
    for a in obj["annotations"]:
        if not isinstance(a, dict):
            raise ValidationError("annotation must be an object", line)
        aid, name, box = a.get("acupoint_id"), a.get("name"), a.get("box_px")
        if not isinstance(aid, int) or isinstance(aid, bool):
            raise ValidationError("acupoint_id must be an integer", line)
        if not isinstance(name, str):
            raise ValidationError("annotation name must be a string", line)
        if (not isinstance(box, list) or len(box) != 4
                or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in box)):
            raise ValidationError("box_px must be a list of 4 numbers", line)
        if registry is not None and aid not in registry:
            raise ValidationError(f"acupoint_id {aid} is not in the registry", line)
        anns.append(Annotation(aid, name, tuple(box)))
    try:
        return ManifestSample(
            image_ref=obj["image"],
            width=obj["width"],
            height=obj["height"],
            depth_ref=depth,
            lighting=obj["lighting"],
            background=str(obj.get("background", "")),
            annotations=tuple(anns),
        )
    except ValidationError as exc:
        raise ValidationError(str(exc), line) from None


def load_manifest(path: str | Path, registry: AcupointRegistry | None = None) -> list[ManifestSample]:
    """Read a JSON Lines manifest. Blank lines are skipped; line numbers are 1-based."""
    samples = []
    with open(path, encoding="utf-8") as f:
        for lineno, text in enumerate(f, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, exc.msg) from None
            samples.append(_sample_from_obj(obj, lineno, registry))
    return samples


def dump_manifest(samples: Iterable[ManifestSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in samples:
            f.write(json.dumps(s.to_dict()) + "\n")


def fixture_manifest_path() -> Path:
    """Bundled synthetic test split shaped like the 100-image / 1,685-pair test set."""
    return Path(str(resources.files("hmr") / "data" / "test_manifest.jsonl"))


def make_fixture_manifest(n_images: int = 100, n_annotations: int = 1685, seed: int = 7,
                          registry: AcupointRegistry | None = None) -> list[ManifestSample]:
    """Deterministic synthetic manifest with exactly the requested counts.

    Each (image, acupoint) pair occurs at most once; acupoint frequencies are skewed.
    """
    registry = registry or AcupointRegistry.default()
    ids = registry.ids
    if n_annotations > n_images * len(ids):
        raise ValueError("too many annotations for one-per-acupoint images")
    rng = np.random.default_rng(seed)
    per_image = np.full(n_images, n_annotations // n_images)
    per_image[rng.permutation(n_images)[: n_annotations % n_images]] += 1
    weights = rng.gamma(2.0, 1.0, size=len(ids))
    weights /= weights.sum()
    sizes = [(1280, 720), (1920, 1080), (1024, 768)]
    backgrounds = ["plain", "clinic", "curtain", "cluttered"]
    samples = []
    for i in range(n_images):
        w, h = sizes[i % len(sizes)]
        chosen = rng.choice(len(ids), size=int(per_image[i]), replace=False, p=weights)
        anns = []
        for j in sorted(chosen):
            bw, bh = rng.uniform(0.02, 0.06) * w, rng.uniform(0.02, 0.06) * h
            x1 = float(np.round(rng.uniform(0, w - bw), 1))
            y1 = float(np.round(rng.uniform(0, h - bh), 1))
            box = (x1, y1, float(np.round(x1 + bw, 1)), float(np.round(y1 + bh, 1)))
            anns.append(Annotation(ids[j], registry.name_of(ids[j]), box))
        samples.append(ManifestSample(
            image_ref=f"test/{i:04d}.jpg",
            width=w,
            height=h,
            lighting=LIGHTING[int(rng.integers(len(LIGHTING)))],
            background=backgrounds[int(rng.integers(len(backgrounds)))],
            annotations=tuple(anns),
        ))
    return samples


# --- augmentation ---------------------------------------------------------

@dataclass(frozen=True)
class Rotate:
    """Counter-clockwise (as displayed) rotation about the image centre; the canvas expands."""

    degrees: float


@dataclass(frozen=True)
class Crop:
    x1: int
    y1: int
    x2: int
    y2: int


_RIGHT_ANGLES = {0: (1, 0), 90: (0, 1), 180: (-1, 0), -90: (0, -1)}


def _cos_sin(degrees: float) -> tuple[float, float]:
    r = round(degrees)
    if r == degrees and r in _RIGHT_ANGLES or degrees == 180.0:
        return _RIGHT_ANGLES[int(r)]
    rad = math.radians(degrees)
    return math.cos(rad), math.sin(rad)


def _rotated_canvas(w: int, h: int, c: float, s: float) -> tuple[int, int]:
    if s == 0 or c == 0:
        return (w, h) if s == 0 else (h, w)
    nw = math.ceil(abs(w * c) + abs(h * s) - 1e-9)
    nh = math.ceil(abs(w * s) + abs(h * c) - 1e-9)
    return nw, nh


def _rotate_points(pts: np.ndarray, w: int, h: int, nw: int, nh: int, c: float, s: float) -> np.ndarray:
    dx = pts[:, 0] - w / 2.0
    dy = pts[:, 1] - h / 2.0
    return np.column_stack([nw / 2.0 + c * dx + s * dy, nh / 2.0 - s * dx + c * dy])


def _rotate_image(image: np.ndarray, degrees: float, nw: int, nh: int, c: float, s: float) -> np.ndarray:
    if s == 0 or c == 0:
        k = int(round(degrees / 90.0)) % 4
        return np.ascontiguousarray(np.rot90(image, k))
    from scipy import ndimage

    h, w = image.shape[:2]
    # maps output (row, col) -> input (row, col); pixel i has its centre at i + 0.5
    M = np.array([[c, s], [-s, c]])
    off = np.array([
        h / 2.0 - 0.5 + s * (0.5 - nw / 2.0) + c * (0.5 - nh / 2.0),
        w / 2.0 - 0.5 + c * (0.5 - nw / 2.0) - s * (0.5 - nh / 2.0),
    ])
    if image.ndim == 2:
        return ndimage.affine_transform(image, M, off, output_shape=(nh, nw), order=1)
    chans = [ndimage.affine_transform(image[..., k], M, off, output_shape=(nh, nw), order=1)
             for k in range(image.shape[2])]
    return np.stack(chans, axis=-1)


def rotate_box(box: Box, w: int, h: int, degrees: float) -> Box:
    """Axis-aligned hull of the rotated corners, clipped to the rotated canvas."""
    c, s = _cos_sin(degrees)
    nw, nh = _rotated_canvas(w, h, c, s)
    x1, y1, x2, y2 = box
    corners = np.array([[x1, y1], [x2, y1], [x1, y2], [x2, y2]], dtype=float)
    p = _rotate_points(corners, w, h, nw, nh, c, s)
    return (
        float(np.clip(p[:, 0].min(), 0, nw)), float(np.clip(p[:, 1].min(), 0, nh)),
        float(np.clip(p[:, 0].max(), 0, nw)), float(np.clip(p[:, 1].max(), 0, nh)),
    )


def crop_box(box: Box, crop: Crop) -> Box | None:
    """Box in crop coordinates, or ``None`` when it does not overlap the crop."""
    x1, y1, x2, y2 = box
    ix1, iy1 = max(x1, crop.x1), max(y1, crop.y1)
    ix2, iy2 = min(x2, crop.x2), min(y2, crop.y2)
    if ix1 > ix2 or iy1 > iy2:
        return None
    # touching an edge is not overlap for a box with extent along that axis
    if (x2 > x1 and ix2 == ix1) or (y2 > y1 and iy2 == iy1):
        return None
    return (ix1 - crop.x1, iy1 - crop.y1, ix2 - crop.x1, iy2 - crop.y1)


def draw_op(sample: ManifestSample, rng: np.random.Generator,
            max_rotation: float = 30.0, crop_scale: tuple[float, float] = (0.6, 0.95),
            p_rotate: float = 0.5) -> Rotate | Crop:
    """Random rotation or crop for ``sample``."""
    if rng.random() < p_rotate:
        return Rotate(float(np.round(rng.uniform(-max_rotation, max_rotation), 2)))
    scale = rng.uniform(*crop_scale)
    cw = max(1, int(sample.width * scale))
    ch = max(1, int(sample.height * scale))
    x1 = int(rng.integers(0, sample.width - cw + 1))
    y1 = int(rng.integers(0, sample.height - ch + 1))
    return Crop(x1, y1, x1 + cw, y1 + ch)


def _derived_ref(ref: str, tag: str) -> str:
    p = PurePosixPath(ref)
    return str(p.with_name(f"{p.stem}_{tag}{p.suffix}"))


def augment_sample(sample: ManifestSample, op: Rotate | Crop | None = None, *,
                   seed: int | None = None,
                   image: np.ndarray | None = None) -> tuple[ManifestSample, np.ndarray | None]:
    """Apply one geometric transform to a sample (and optionally its image array).

    With ``op=None`` a transform is drawn from ``seed``. Depth references are dropped
    because the depth map is not transformed.
    """
    if op is None:
        op = draw_op(sample, np.random.default_rng(seed))
    w, h = sample.width, sample.height
    if isinstance(op, Rotate):
        if not -180.0 < op.degrees <= 180.0:
            raise ValueError("rotation must lie in (-180, 180] degrees")
        c, s = _cos_sin(op.degrees)
        nw, nh = _rotated_canvas(w, h, c, s)
        anns = []
        for a in sample.annotations:
            x1, y1, x2, y2 = rotate_box(a.box_px, w, h, op.degrees)
            anns.append(replace(a, box_px=(x1, y1, x2, y2)))
        new_image = _rotate_image(image, op.degrees, nw, nh, c, s) if image is not None else None
        tag = f"rot{op.degrees:g}"
    elif isinstance(op, Crop):
        if not (0 <= op.x1 < op.x2 <= w and 0 <= op.y1 < op.y2 <= h):
            raise ValueError(f"crop {op} is not inside the {w}x{h} image")
        nw, nh = op.x2 - op.x1, op.y2 - op.y1
        anns = []
        for a in sample.annotations:
            b = crop_box(a.box_px, op)
            if b is not None:
                anns.append(replace(a, box_px=b))
        new_image = image[op.y1:op.y2, op.x1:op.x2].copy() if image is not None else None
        tag = f"crop{op.x1}-{op.y1}-{op.x2}-{op.y2}"
    else:
        raise TypeError(f"unsupported augmentation {op!r}")
    if sample.annotations and not anns:
        raise DegenerateResult(f"{tag} removed every annotation of {sample.image_ref}")
    if tag == "rot0":
        return sample, (image.copy() if image is not None else None)
    out = replace(sample, image_ref=_derived_ref(sample.image_ref, tag), width=nw, height=nh,
                  depth_ref=None, annotations=tuple(anns))
    return out, new_image


def expand_manifest(samples: Sequence[ManifestSample], copies: int, seed: int,
                    **draw_kwargs) -> list[ManifestSample]:
    """``copies`` augmented variants per sample (ops that drop every box are redrawn)."""
    rng = np.random.default_rng(seed)
    out = []
    for s in samples:
        made = 0
        attempts = 0
        while made < copies and attempts < 20 * copies:
            attempts += 1
            op = draw_op(s, rng, **draw_kwargs)
            try:
                aug, _ = augment_sample(s, op)
            except DegenerateResult:
                continue
            out.append(aug)
            made += 1
    return out


# --- depth maps -----------------------------------------------------------

def write_pgm16(path: str | Path, depth_mm: np.ndarray) -> None:
    """Binary PGM, maxval 65535, big-endian; values are millimetres (0 = invalid)."""
    arr = np.asarray(depth_mm)
    if arr.ndim != 2:
        raise ValueError("depth map must be 2-D")
    data = np.clip(np.rint(np.nan_to_num(arr, nan=0.0)), 0, 65535).astype(">u2")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm16(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    if fields[0] != b"P5":
        raise ParseError(1, f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    dtype = ">u2" if maxval > 255 else "u1"
    n = w * h * np.dtype(dtype).itemsize
    if len(raw) - pos < n:
        raise ParseError(1, f"{path}: truncated raster")
    return np.frombuffer(raw[pos:pos + n], dtype=dtype).reshape(h, w).astype(np.uint16)
