"""Landmark naming: canonical indices, name variants, and resolution.

Fourteen upper-body skeletal landmarks are indexed 1..14. Only part of
the index/name assignment is externally fixed (elbows 6/7, wrists 8/9,
T1 = 10, Right Hemidiaphragm = 12, plus the skull/humeral-head/scapula/
hemidiaphragm structures); the remaining slots below are a documented
default assumption of this simulator, overridable by loading a custom
table.

Each landmark carries 3-4 semantic name variants (the first is
canonical). All variants across all landmarks are mutually distinct, so
any variant resolves unambiguously back to its index.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import ValidationError

LANDMARK_COUNT = 14

DEFAULT_LANDMARK_NAMES: dict[int, tuple[str, ...]] = {
    1: ("Skull", "Cranium", "Cranial vault", "Calvarium"),
    2: ("Right Humeral Head", "Head of Right Humerus", "Right Proximal Humerus"),
    3: ("Left Humeral Head", "Head of Left Humerus", "Left Proximal Humerus"),
    4: ("Right Scapula", "Right Shoulder Blade", "Right Scapular Body"),
    5: ("Left Scapula", "Left Shoulder Blade", "Left Scapular Body"),
    6: ("Right Elbow", "Right Elbow Joint", "Right Cubital Joint", "Right Olecranon"),
    7: ("Left Elbow", "Left Elbow Joint", "Left Cubital Joint", "Left Olecranon"),
    8: ("Right Wrist", "Right Wrist Joint", "Right Carpus", "Right Radiocarpal Joint"),
    9: ("Left Wrist", "Left Wrist Joint", "Left Carpus", "Left Radiocarpal Joint"),
    10: ("T1", "T1 Vertebra", "First Thoracic Vertebra"),
    11: ("Sternum", "Breastbone", "Sternal Body"),
    12: ("Right Hemidiaphragm", "Right Diaphragm", "Right Diaphragmatic Dome"),
    13: ("Left Hemidiaphragm", "Left Diaphragm", "Left Diaphragmatic Dome"),
    14: ("Sacrum", "Sacral Bone", "Sacral Base"),
}

_WS = re.compile(r"[\s_]+")


def normalize_name(name: str) -> str:
    """Case/whitespace-insensitive key; underscores count as spaces."""
    return _WS.sub(" ", name.strip()).lower()


@dataclass(frozen=True)
class NameTable:
    """Bidirectional index <-> variant-name mapping for one landmark schema."""

    variants_by_index: dict[int, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_LANDMARK_NAMES)
    )

    def __post_init__(self):
        if set(self.variants_by_index) != set(range(1, LANDMARK_COUNT + 1)):
            raise ValidationError(
                f"name table must cover indices 1..{LANDMARK_COUNT} exactly"
            )
        lookup: dict[str, int] = {}
        for index, variants in self.variants_by_index.items():
            if not variants:
                raise ValidationError(f"landmark {index} has no name variants")
            for variant in variants:
                key = normalize_name(variant)
                if key in lookup and lookup[key] != index:
                    raise ValidationError(
                        f"name variant {variant!r} is ambiguous between "
                        f"landmarks {lookup[key]} and {index}"
                    )
                lookup[key] = index
        object.__setattr__(self, "_lookup", lookup)

    def canonical(self, index: int) -> str:
        return self.variants_by_index[index][0]

    def variants(self, index: int) -> tuple[str, ...]:
        return self.variants_by_index[index]

    def resolve(self, name: str) -> int | None:
        """Index for any registered variant, or None if unknown."""
        return self._lookup.get(normalize_name(name))


DEFAULT_TABLE = NameTable()
