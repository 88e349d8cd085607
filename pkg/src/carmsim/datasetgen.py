"""Spatial-grounding dataset construction.

Each sampled view is labeled with the three landmarks closest to its
isocenter in 3-D Euclidean distance, ordered closest-first, and
formatted as ``[index1: name1, index2: name2, index3: name3]``. For
robustness to phrasing, each name is drawn uniformly from that
landmark's semantic variants under a per-record seed, so augmentation is
reproducible. ``parse_label`` is the scoring-side inverse: it accepts
any registered variant, case-insensitively, and maps back to canonical
indices.

Distances are isocenter-to-landmark in mm (no projective weighting);
exact ties are broken by ascending landmark index. Squared distances are
compared (documented: the comparison key is d^2, which is monotone in d)
and the square root is taken only for reporting.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass

import numpy as np
import yaml

from .errors import AlignmentError, ConfigError, LabelError, ValidationError
from .geometry import CArmPose, SamplerConfig, sample_isocenters
from .nametable import NameTable
from .phantom import LandmarkSet, Volume
from .projector import DEFAULT_STEP_FRACTION, DEFAULT_WINDOW, render
from .seeds import derive_seed, rng as _rng

DEFAULT_PROMPT_TEMPLATE_ID = "nearest3-v1"


@dataclass(frozen=True)
class RankedEntry:
    index: int
    name: str
    distance_mm: float | None = None


@dataclass(frozen=True)
class RankedLandmarks:
    """Ordered nearest-landmark ranking (closest first)."""

    entries: tuple[RankedEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        indices = [e.index for e in self.entries]
        if len(set(indices)) != len(indices):
            raise ValidationError(f"ranked landmarks contain duplicates: {indices}")
        distances = [e.distance_mm for e in self.entries]
        if all(d is not None for d in distances) and len(distances) > 1:
            if any(a > b for a, b in zip(distances, distances[1:])):
                raise ValidationError("ranked distances are not non-decreasing")

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(e.index for e in self.entries)


def nearest_k(pose: CArmPose | np.ndarray, landmark_set: LandmarkSet, k: int = 3) -> RankedLandmarks:
    """The k landmarks nearest the isocenter, ascending; index breaks ties."""
    if k > len(landmark_set.landmarks):
        raise ValidationError(f"k={k} exceeds landmark count")
    point = np.asarray(pose.isocenter if isinstance(pose, CArmPose) else pose, dtype=float)
    positions = landmark_set.positions_array()
    diff = positions - point[None, :]
    # fixed association order keeps the key reproducible across ports
    d2 = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
    order = sorted(range(len(d2)), key=lambda i: (d2[i], i))
    entries = tuple(
        RankedEntry(
            index=landmark_set.landmarks[i].index,
            name=landmark_set.landmarks[i].name,
            distance_mm=float(np.sqrt(d2[i])),
        )
        for i in order[:k]
    )
    return RankedLandmarks(entries=entries)


def format_label(
    ranked: RankedLandmarks,
    variant_seed: int,
    table: NameTable | None = None,
    landmark_set: LandmarkSet | None = None,
) -> str:
    """Bracketed label text with per-slot uniform variant draws."""
    if table is None:
        table = landmark_set.name_table() if landmark_set is not None else NameTable()
    generator = _rng(variant_seed, "label-variants")
    parts = []
    for entry in ranked.entries:
        variants = table.variants(entry.index)
        name = variants[int(generator.integers(len(variants)))]
        parts.append(f"{entry.index}: {name}")
    return "[" + ", ".join(parts) + "]"


_LABEL_ENTRY = re.compile(r"\s*(\d+)\s*:\s*([^,\]]+?)\s*$")


def parse_label(
    text: str, table: NameTable | None = None, expected_k: int = 3
) -> RankedLandmarks:
    """Inverse of format_label; raises LabelError with a position on failure."""
    if table is None:
        table = NameTable()
    stripped = text.strip()
    start = text.find("[")
    end = text.rfind("]")
    if start < 0 or end < 0 or end <= start:
        raise LabelError("label must be bracketed [ ... ]", max(start, 0))
    if stripped != text[start : end + 1].strip() and (
        text[:start].strip() or text[end + 1 :].strip()
    ):
        # tolerated: surrounding whitespace only
        raise LabelError("unexpected text outside brackets", 0)
    body = text[start + 1 : end]
    if not body.strip():
        raise LabelError("empty label", start)
    entries = []
    cursor = start + 1
    for chunk in body.split(","):
        m = _LABEL_ENTRY.match(chunk)
        if m is None:
            raise LabelError(f"malformed entry {chunk.strip()!r}", cursor)
        index = int(m.group(1))
        name = m.group(2)
        resolved = table.resolve(name)
        if resolved is None:
            raise LabelError(f"unknown landmark name {name!r}", cursor + m.start(2))
        if resolved != index:
            raise LabelError(
                f"name {name!r} resolves to index {resolved}, not {index}",
                cursor + m.start(2),
            )
        entries.append(RankedEntry(index=index, name=table.canonical(index)))
        cursor += len(chunk) + 1
    if len(entries) != expected_k:
        raise LabelError(
            f"expected {expected_k} entries, got {len(entries)}", start
        )
    try:
        return RankedLandmarks(entries=tuple(entries))
    except ValidationError as e:
        raise LabelError(str(e), start) from e


@dataclass(frozen=True)
class DatasetRecord:
    record_id: str
    image_path: str
    volume_id: str
    sample_id: int
    split: str
    isocenter_mm: tuple[float, float, float]
    ranked: RankedLandmarks
    label_text: str
    prompt_template_id: str = DEFAULT_PROMPT_TEMPLATE_ID

    def to_json_obj(self) -> dict:
        return {
            "record_id": self.record_id,
            "image_path": self.image_path,
            "volume_id": self.volume_id,
            "sample_id": self.sample_id,
            "split": self.split,
            "isocenter_mm": list(self.isocenter_mm),
            "ranked": [
                {"index": e.index, "name": e.name, "distance_mm": e.distance_mm}
                for e in self.ranked.entries
            ],
            "label_text": self.label_text,
            "prompt_template_id": self.prompt_template_id,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "DatasetRecord":
        return cls(
            record_id=obj["record_id"],
            image_path=obj["image_path"],
            volume_id=obj["volume_id"],
            sample_id=int(obj["sample_id"]),
            split=obj["split"],
            isocenter_mm=tuple(obj["isocenter_mm"]),
            ranked=RankedLandmarks(
                entries=tuple(
                    RankedEntry(
                        index=int(e["index"]),
                        name=e["name"],
                        distance_mm=e.get("distance_mm"),
                    )
                    for e in obj["ranked"]
                )
            ),
            label_text=obj["label_text"],
            prompt_template_id=obj.get("prompt_template_id", DEFAULT_PROMPT_TEMPLATE_ID),
        )


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[DatasetRecord, ...]
    manifest_path: str | None = None

    @property
    def train_records(self) -> tuple[DatasetRecord, ...]:
        return tuple(r for r in self.records if r.split == "train")

    @property
    def test_records(self) -> tuple[DatasetRecord, ...]:
        return tuple(r for r in self.records if r.split == "test")


@dataclass(frozen=True)
class DatasetVolume:
    volume_id: str
    volume: Volume
    landmarks: LandmarkSet


def expected_record_counts(n_train_volumes: int, n_test_volumes: int, per_volume: int) -> tuple[int, int]:
    """Record-count law: |volumes| x per_volume, per split."""
    return n_train_volumes * per_volume, n_test_volumes * per_volume


def build_dataset(
    volumes: list[DatasetVolume],
    per_volume: int,
    train_ids: set[str],
    test_ids: set[str],
    seed: int,
    out_dir: str | os.PathLike,
    *,
    sampler: SamplerConfig | None = None,
    pose_template: CArmPose | None = None,
    window: float = DEFAULT_WINDOW,
    step_fraction: float = DEFAULT_STEP_FRACTION,
    write_images: bool = True,
    prompt_template_id: str = DEFAULT_PROMPT_TEMPLATE_ID,
) -> DatasetManifest:
    """Render per_volume views per volume and emit manifest + PNGs.

    Deterministic under (seed, config): pose streams and variant draws
    are derived per (volume_id, sample_id), and manifest order is keyed
    by (volume order, sample_id).
    """
    if per_volume < 1:
        raise ValidationError(f"per_volume must be >= 1, got {per_volume}")
    overlap = train_ids & test_ids
    if overlap:
        raise ConfigError(
            f"volumes assigned to both splits: {sorted(overlap)}"
        )
    ids = [dv.volume_id for dv in volumes]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate volume ids in {ids}")
    unassigned = set(ids) - train_ids - test_ids
    if unassigned:
        raise ConfigError(f"volumes with no split assignment: {sorted(unassigned)}")

    out_dir = str(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    records: list[DatasetRecord] = []
    for dv in volumes:
        split = "train" if dv.volume_id in train_ids else "test"
        config = sampler if sampler is not None else SamplerConfig()
        pose_seed = derive_seed(seed, "dataset-poses", dv.volume_id)
        poses = sample_isocenters(
            dv.volume,
            dv.landmarks,
            per_volume,
            SamplerConfig(
                si_band_fraction=config.si_band_fraction,
                lr_sigma_mm=config.lr_sigma_mm,
                ap_sigma_mm=config.ap_sigma_mm,
                seed=pose_seed,
            ),
            template=pose_template,
        )
        image_dir = os.path.join(out_dir, "images", dv.volume_id)
        if write_images:
            os.makedirs(image_dir, exist_ok=True)
        table = dv.landmarks.name_table()
        for sample_id, pose in enumerate(poses):
            ranked = nearest_k(pose, dv.landmarks, 3)
            variant_seed = derive_seed(seed, "label-variant", dv.volume_id, sample_id)
            label = format_label(ranked, variant_seed, table=table)
            rel_image = f"images/{dv.volume_id}/{sample_id:05d}.png"
            if write_images:
                image = render(dv.volume, pose, window=window, step_fraction=step_fraction)
                image.save_png(os.path.join(out_dir, rel_image))
            records.append(
                DatasetRecord(
                    record_id=f"{dv.volume_id}/{sample_id:05d}",
                    image_path=rel_image,
                    volume_id=dv.volume_id,
                    sample_id=sample_id,
                    split=split,
                    isocenter_mm=pose.isocenter,
                    ranked=ranked,
                    label_text=label,
                    prompt_template_id=prompt_template_id,
                )
            )

    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    write_manifest(records, manifest_path)
    config_echo = {
        "seed": seed,
        "per_volume": per_volume,
        "train_ids": sorted(train_ids),
        "test_ids": sorted(test_ids),
        "sampler": (sampler or SamplerConfig()).to_dict(),
        "window": window,
        "step_fraction": step_fraction,
        "prompt_template_id": prompt_template_id,
    }
    with open(os.path.join(out_dir, "dataset_config.yaml"), "w") as f:
        yaml.safe_dump(config_echo, f, sort_keys=False)
    return DatasetManifest(records=tuple(records), manifest_path=manifest_path)


def write_manifest(records, path) -> None:
    with open(path, "w") as f:
        for record in records:
            f.write(json.dumps(record.to_json_obj(), separators=(",", ":")) + "\n")


def read_manifest(path) -> list[DatasetRecord]:
    records = []
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(DatasetRecord.from_json_obj(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as e:
                raise AlignmentError(f"{path}:{line_no}: bad manifest line: {e}") from e
    return records
