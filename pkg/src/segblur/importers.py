"""Convert third-party segmentation annotations into a source manifest.

Both importers write one binary PNG per object under ``<out>/masks`` and a
``<out>/manifest.json`` that references the original images by absolute
path.
"""

from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path

import cv2
import numpy as np

from .imageio import read_raw, write_mask
from .manifest import ManifestEntry, ObjectAnnotation, SourceManifest, save_manifest

# Light sources and lighting artifacts treated as saturation candidates in
# ADE20K-style data; override through the index's "taxonomy".
ADE_ILLUMINATION_CLASSES = (
    "light",
    "lamp",
    "light bulb",
    "bulb",
    "spotlight",
    "ceiling spotlight",
    "pendant lamp",
    "chandelier",
    "sconce",
    "streetlight",
    "street lamp",
    "traffic light",
    "table lamp",
    "floor lamp",
    "candle",
    "lantern",
    "fluorescent tube",
    "neon sign",
)


def rle_counts_from_string(s):
    """Decode the compressed COCO RLE string into run lengths."""
    counts, p = [], 0
    while p < len(s):
        x, k, more = 0, 0, True
        while more:
            c = ord(s[p]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def rle_decode(rle):
    """Binary (H, W) mask from an uncompressed or compressed COCO RLE."""
    h, w = rle["size"]
    counts = rle["counts"]
    if isinstance(counts, (str, bytes)):
        counts = rle_counts_from_string(counts.decode() if isinstance(counts, bytes) else counts)
    flat = np.zeros(h * w, dtype=bool)
    pos, val = 0, False
    for n in counts:
        if val:
            flat[pos : pos + n] = True
        pos += n
        val = not val
    return flat.reshape(w, h).T


def polygons_to_mask(polygons, height, width):
    mask = np.zeros((height, width), dtype=np.uint8)
    shift = 4
    for poly in polygons:
        pts = np.round(np.asarray(poly, dtype=np.float64).reshape(-1, 2) * (1 << shift)).astype(np.int32)
        if len(pts) >= 3:
            cv2.fillPoly(mask, [pts], 1, lineType=cv2.LINE_8, shift=shift)
    return mask.astype(bool)


def annotation_mask(ann, height, width):
    seg = ann["segmentation"]
    if isinstance(seg, list):
        return polygons_to_mask(seg, height, width)
    return rle_decode(seg)


def coco_to_manifest(annotations_path, image_dir, out_dir, limit=None, skip_crowd=True):
    """Build a manifest from a COCO instances file. Returns the entry count."""
    data = json.loads(Path(annotations_path).read_text())
    image_dir = Path(image_dir).resolve()
    out_dir = Path(out_dir)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    cats = {c["id"]: c for c in data.get("categories", [])}
    by_image = defaultdict(list)
    for ann in data.get("annotations", []):
        if skip_crowd and ann.get("iscrowd", 0):
            continue
        by_image[ann["image_id"]].append(ann)

    entries = []
    for img in sorted(data.get("images", []), key=lambda i: i["id"]):
        if limit is not None and len(entries) >= limit:
            break
        objects = []
        for ann in sorted(by_image.get(img["id"], []), key=lambda a: a["id"]):
            mask_path = (out_dir / "masks" / f"{img['id']}_{ann['id']}.png").resolve()
            write_mask(mask_path, annotation_mask(ann, img["height"], img["width"]))
            cat = cats[ann["category_id"]]
            objects.append(ObjectAnnotation(mask_path, cat["name"], cat.get("supercategory", "")))
        entries.append(ManifestEntry(str(img["id"]), image_dir / img["file_name"], tuple(objects)))

    taxonomy = {c["name"]: c.get("supercategory", "") for c in cats.values()}
    save_manifest(SourceManifest(entries, taxonomy), out_dir / "manifest.json")
    return len(entries)


def decode_ade_segmentation(raw):
    """Class and instance maps from an ADE20K ``*_seg.png`` (RGB order).

    Class index is ``R / 10 * 256 + G``; the blue channel labels instances.
    """
    r = raw[:, :, 0].astype(np.int64)
    g = raw[:, :, 1].astype(np.int64)
    b = raw[:, :, 2].astype(np.int64)
    return (r // 10) * 256 + g, b


def ade20k_to_manifest(index_path, out_dir, limit=None):
    """Build a manifest from an ADE20K-style index.

    The index is JSON::

        {"class_names": {"1": "wall", ...},
         "taxonomy": {"lamp": "illumination", ...},     # optional
         "images": [{"id": "...", "image": "...", "segmentation": "..._seg.png"}]}

    Classes missing from the taxonomy map to ``illumination`` when listed in
    :data:`ADE_ILLUMINATION_CLASSES`, ``person`` for persons, else ``other``.
    """
    index_path = Path(index_path)
    index = json.loads(index_path.read_text())
    root = index_path.parent
    out_dir = Path(out_dir)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    names = {int(k): v for k, v in index["class_names"].items()}
    taxonomy = dict(index.get("taxonomy", {}))

    def supercategory(name):
        if name not in taxonomy:
            if name in ADE_ILLUMINATION_CLASSES:
                taxonomy[name] = "illumination"
            elif name == "person":
                taxonomy[name] = "person"
            else:
                taxonomy[name] = "other"
        return taxonomy[name]

    entries = []
    for item in index["images"]:
        if limit is not None and len(entries) >= limit:
            break
        raw, _ = read_raw(root / item["segmentation"])
        classes, instances = decode_ade_segmentation(raw)
        objects = []
        pairs = np.unique(np.stack([classes.ravel(), instances.ravel()]), axis=1).T
        for cls, inst in pairs:
            if cls == 0 or cls not in names:
                continue
            mask = (classes == cls) & (instances == inst)
            mask_path = (out_dir / "masks" / f"{item['id']}_{cls}_{inst}.png").resolve()
            write_mask(mask_path, mask)
            objects.append(ObjectAnnotation(mask_path, names[cls], supercategory(names[cls])))
        image = Path(item["image"])
        image = image if image.is_absolute() else (root / image).resolve()
        entries.append(ManifestEntry(str(item["id"]), image, tuple(objects)))

    save_manifest(SourceManifest(entries, taxonomy), out_dir / "manifest.json")
    return len(entries)
