"""Grounding benchmark: IoU and success rates across IoU thresholds."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyGroundTruth, HMRError, UnknownImage
from .grounding import NormalizedBox, normalize_box, parse_grounding_output
from .dataset import ManifestSample
from .registry import AcupointRegistry

DEFAULT_THRESHOLDS = (0.3, 0.5, 0.75)


def iou(a: NormalizedBox, b: NormalizedBox) -> float:
    """Intersection over union of two boxes taken as continuous rectangles.

    Zero-area boxes score 0, except two identical degenerate boxes which score 1.
    """
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    area_a = (a.x2 - a.x1) * (a.y2 - a.y1)
    area_b = (b.x2 - b.x1) * (b.y2 - b.y1)
    if area_a == 0 or area_b == 0:
        return 1.0 if area_a == area_b == 0 and a == b else 0.0
    inter = max(iw, 0) * max(ih, 0)
    return inter / (area_a + area_b - inter)


@dataclass(frozen=True)
class Prediction:
    image_ref: str
    acupoint_id: int
    box: NormalizedBox


@dataclass
class ScoreReport:
    rates: dict[float, float]
    matched: dict[float, int]
    total: int
    label: str = ""
    spurious: int = 0
    unparseable: int = 0
    breakdown: dict[str, dict[str, dict[float, float]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "rates": {str(t): r for t, r in self.rates.items()},
            "matched": {str(t): m for t, m in self.matched.items()},
            "total": self.total,
            "spurious": self.spurious,
            "unparseable": self.unparseable,
            "breakdown": {
                k: {g: {str(t): r for t, r in v.items()} for g, v in groups.items()}
                for k, groups in self.breakdown.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreReport":
        return cls(
            rates={float(t): r for t, r in d["rates"].items()},
            matched={float(t): m for t, m in d.get("matched", {}).items()},
            total=d.get("total", 0),
            label=d.get("label", ""),
            spurious=d.get("spurious", 0),
            unparseable=d.get("unparseable", 0),
        )


def ground_truth(manifest: Sequence[ManifestSample]) -> dict[tuple[str, int], tuple[NormalizedBox, ManifestSample]]:
    """One normalized box per (image, acupoint); later duplicates in a sample are ignored."""
    gt = {}
    for s in manifest:
        for a in s.annotations:
            gt.setdefault((s.image_ref, a.acupoint_id), (normalize_box(a.box_px, s.width, s.height), s))
    return gt


def evaluate(predictions: Iterable[Prediction], manifest: Sequence[ManifestSample],
             thresholds: Sequence[float] = DEFAULT_THRESHOLDS, label: str = "",
             unparseable: int = 0) -> ScoreReport:
    """Success at threshold t means IoU >= t against the matching ground-truth box.

    The denominator is the number of ground-truth pairs, so missing predictions fail.
    When several predictions target the same pair, the best IoU counts.
    """
    gt = ground_truth(manifest)
    if not gt:
        raise EmptyGroundTruth("manifest has no annotations")
    images = {s.image_ref for s in manifest}
    best: dict[tuple[str, int], float] = {}
    spurious = 0
    for p in predictions:
        if p.image_ref not in images:
            raise UnknownImage(p.image_ref)
        key = (p.image_ref, p.acupoint_id)
        if key not in gt:
            spurious += 1
            continue
        best[key] = max(best.get(key, 0.0), iou(p.box, gt[key][0]))
    thresholds = tuple(sorted(thresholds))

    def tally(keys) -> tuple[dict[float, int], int]:
        keys = list(keys)
        return {t: sum(1 for k in keys if best.get(k, -1.0) >= t) for t in thresholds}, len(keys)

    matched, total = tally(gt)
    breakdown: dict[str, dict[str, dict[float, float]]] = {}
    for attr in ("lighting", "background"):
        groups = defaultdict(list)
        for key, (_, sample) in gt.items():
            groups[getattr(sample, attr)].append(key)
        breakdown[attr] = {}
        for g, keys in sorted(groups.items()):
            m, n = tally(keys)
            breakdown[attr][g] = {t: m[t] / n for t in thresholds}
    return ScoreReport(
        rates={t: matched[t] / total for t in thresholds},
        matched=matched,
        total=total,
        label=label,
        spurious=spurious,
        unparseable=unparseable,
        breakdown=breakdown,
    )


def sweep(prediction_sets: Sequence[tuple[str, Iterable[Prediction]]], manifest: Sequence[ManifestSample],
          thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> list[ScoreReport]:
    """One report per labelled prediction set, in the given order."""
    return [evaluate(preds, manifest, thresholds, label=label) for label, preds in prediction_sets]


def format_rates(rates: dict[float, float]) -> str:
    return " | ".join(f"{100.0 * rates[t]:.2f}%" for t in sorted(rates))


def render_report(reports: ScoreReport | Sequence[ScoreReport], title: str = "Model") -> str:
    """Text table: one row per system, one column per IoU threshold.

    The label column is padded to a fixed width; rate cells are ``xx.xx%`` joined by ``|``.
    """
    if isinstance(reports, ScoreReport):
        reports = [reports]
    thresholds = sorted({t for r in reports for t in r.rates})
    labels = [r.label or "-" for r in reports]
    width = max(len(title), *(len(s) for s in labels))
    header = f"{title:<{width}} | " + " | ".join(f"IoU={t:g}" for t in thresholds)
    lines = [header, "-" * len(header)]
    for label, r in zip(labels, reports):
        lines.append(f"{label:<{width}} | " + format_rates({t: r.rates.get(t, 0.0) for t in thresholds}))
    return "\n".join(lines)


# --- prediction files --------------------------------------------------------

def predictions_from_records(image_ref: str, raw: str, registry: AcupointRegistry | None = None) -> list[Prediction]:
    return [Prediction(image_ref, r.acupoint_id, r.box) for r in parse_grounding_output(raw, registry)]


def load_predictions(path: str | Path, registry: AcupointRegistry | None = None) -> tuple[list[Prediction], int]:
    """Read a predictions JSONL file; returns (predictions, number of unparseable raw answers).

    Lines hold either ``box_norm`` with an ``acupoint_id`` or ``raw`` model text.
    """
    preds, bad = [], 0
    with open(path, encoding="utf-8") as f:
        for text in f:
            if not text.strip():
                continue
            obj = json.loads(text)
            if "raw" in obj:
                try:
                    preds.extend(predictions_from_records(obj["image"], obj["raw"], registry))
                except HMRError:
                    bad += 1
            else:
                preds.append(Prediction(obj["image"], int(obj["acupoint_id"]), NormalizedBox(*obj["box_norm"])))
    return preds, bad
