"""Source manifests: sharp images with per-object segmentation masks.

A manifest is one JSON document::

    {
      "class_taxonomy": {"person": "person", "car": "vehicle", "lamp": "illumination"},
      "entries": [
        {
          "id": "000123",
          "image": "images/000123.png",
          "objects": [{"mask": "masks/000123_0.png", "class": "person"}],
          "saturation_mask": "sat/000123.png"
        }
      ]
    }

Relative paths resolve against the manifest's directory. ``saturation_mask``
is optional.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ManifestError

log = logging.getLogger(__name__)

_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


@dataclass(frozen=True)
class ObjectAnnotation:
    mask_path: Path
    label: str
    supercategory: str


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    image_path: Path
    objects: tuple = ()
    saturation_mask_path: Path | None = None

    def to_dict(self):
        return {
            "id": self.id,
            "image": str(self.image_path),
            "objects": [{"mask": str(o.mask_path), "class": o.label} for o in self.objects],
            "saturation_mask": None if self.saturation_mask_path is None else str(self.saturation_mask_path),
        }


@dataclass
class SourceManifest:
    entries: list = field(default_factory=list)
    class_taxonomy: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def subset(self, entries):
        return SourceManifest(list(entries), dict(self.class_taxonomy))

    def to_dict(self):
        return {"class_taxonomy": dict(self.class_taxonomy), "entries": [e.to_dict() for e in self.entries]}


def _resolve(root, p):
    p = Path(p)
    return (p if p.is_absolute() else root / p).resolve()


def parse_manifest(data, root):
    """Validate a decoded manifest document; every problem is reported at once."""
    root = Path(root)
    if not isinstance(data, dict):
        raise ManifestError("manifest must be a JSON object")
    taxonomy = data.get("class_taxonomy", {})
    raw_entries = data.get("entries", [])
    if not isinstance(taxonomy, dict) or not isinstance(raw_entries, list):
        raise ManifestError("'class_taxonomy' must be an object and 'entries' a list")

    problems, entries, seen = [], [], set()
    for n, raw in enumerate(raw_entries):
        where = f"entry {n}"
        if not isinstance(raw, dict) or "id" not in raw or "image" not in raw:
            problems.append(f"{where}: malformed record (needs 'id' and 'image')")
            continue
        eid = str(raw["id"])
        where = f"entry {eid!r}"
        if not _ID_RE.match(eid):
            problems.append(f"{where}: id must match {_ID_RE.pattern}")
        if eid in seen:
            problems.append(f"{where}: duplicate id")
        seen.add(eid)

        image = _resolve(root, raw["image"])
        if not image.is_file():
            problems.append(f"{where}: missing image {image}")
        objects = []
        for j, obj in enumerate(raw.get("objects", [])):
            if not isinstance(obj, dict) or "mask" not in obj or "class" not in obj:
                problems.append(f"{where}: object {j} malformed (needs 'mask' and 'class')")
                continue
            mask = _resolve(root, obj["mask"])
            if not mask.is_file():
                problems.append(f"{where}: missing mask {mask}")
            label = str(obj["class"])
            if label not in taxonomy:
                problems.append(f"{where}: unknown class {label!r}")
            objects.append(ObjectAnnotation(mask, label, str(taxonomy.get(label, ""))))
        sat = raw.get("saturation_mask")
        if sat is not None:
            sat = _resolve(root, sat)
            if not sat.is_file():
                problems.append(f"{where}: missing saturation mask {sat}")
        entries.append(ManifestEntry(eid, image, tuple(objects), sat))

    if problems:
        raise ManifestError(f"invalid manifest ({len(problems)} problems)", problems)
    return SourceManifest(entries, {str(k): str(v) for k, v in taxonomy.items()})


def load_manifest(path):
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        log.warning("manifest %s is empty", path)
        return SourceManifest()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from None
    manifest = parse_manifest(data, path.parent)
    if not manifest.entries:
        log.warning("manifest %s has no entries", path)
    return manifest


def save_manifest(manifest, path):
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
