"""Acupoint name <-> integer id registry."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import ValidationError

DEFAULT_COUNT = 60
# Zusanli is ST36 in the standard meridian numbering; the slot is arbitrary otherwise.
ZUSANLI_ID = 36


def _key(name: str) -> str:
    return " ".join(name.split()).casefold()


@dataclass(frozen=True)
class AcupointEntry:
    id: int
    name: str
    aliases: tuple[str, ...] = field(default_factory=tuple)


class AcupointRegistry:
    """Injective mapping between acupoint ids and canonical names (plus aliases).

    Name lookup ignores case and repeated whitespace.
    """

    def __init__(self, entries: Iterable[AcupointEntry], expected_count: int | None = DEFAULT_COUNT):
        self._by_id: dict[int, AcupointEntry] = {}
        self._by_name: dict[str, int] = {}
        for entry in entries:
            if entry.id < 0:
                raise ValidationError(f"acupoint id must be >= 0, got {entry.id}")
            if entry.id in self._by_id:
                raise ValidationError(f"duplicate acupoint id {entry.id}")
            self._by_id[entry.id] = entry
            for label in (entry.name, *entry.aliases):
                if not label.strip() or any(ch in label for ch in "<>"):
                    raise ValidationError(f"invalid acupoint name {label!r}")
                k = _key(label)
                if self._by_name.get(k, entry.id) != entry.id:
                    raise ValidationError(f"name {label!r} maps to two ids")
                self._by_name[k] = entry.id
        if expected_count is not None and len(self._by_id) != expected_count:
            raise ValidationError(
                f"registry has {len(self._by_id)} entries, expected {expected_count}"
            )

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, acupoint_id: int) -> bool:
        return acupoint_id in self._by_id

    def __getitem__(self, acupoint_id: int) -> AcupointEntry:
        return self._by_id[acupoint_id]

    @property
    def ids(self) -> list[int]:
        return sorted(self._by_id)

    def resolve(self, name: str) -> int | None:
        return self._by_name.get(_key(name))

    def name_of(self, acupoint_id: int) -> str:
        return self._by_id[acupoint_id].name

    @classmethod
    def default(cls) -> "AcupointRegistry":
        entries = []
        for i in range(DEFAULT_COUNT):
            if i == ZUSANLI_ID:
                entries.append(AcupointEntry(i, "Zusanli", ("ST36", "Zu San Li")))
            else:
                entries.append(AcupointEntry(i, f"Acupoint-{i:02d}"))
        return cls(entries)

    @classmethod
    def from_dict(cls, data: dict, expected_count: int | None = DEFAULT_COUNT) -> "AcupointRegistry":
        entries = []
        for key, value in data.items():
            try:
                acupoint_id = int(key)
            except ValueError:
                raise ValidationError(f"registry key {key!r} is not an integer id") from None
            if not isinstance(value, dict) or not isinstance(value.get("name"), str):
                raise ValidationError(f"registry entry {key!r} needs a string 'name'")
            aliases = value.get("aliases", [])
            if not isinstance(aliases, list) or not all(isinstance(a, str) for a in aliases):
                raise ValidationError(f"registry entry {key!r}: aliases must be strings")
            entries.append(AcupointEntry(acupoint_id, value["name"], tuple(aliases)))
        return cls(entries, expected_count)

    @classmethod
    def load(cls, path: str | Path, expected_count: int | None = DEFAULT_COUNT) -> "AcupointRegistry":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f), expected_count)

    def to_dict(self) -> dict:
        return {
            str(i): {"name": e.name, "aliases": list(e.aliases)}
            for i, e in sorted(self._by_id.items())
        }
