"""End-to-end dataset runs: filtering, seeded pair generation, persistence
and bit-exact re-verification.

Output layout under the run directory::

    blurred/<id>_<k>.png     sharp/<id>_<k>.png
    kernels/<id>_<k>_r<b>.bin (+ .png preview)
    masks/<id>_<k>.npy       (B, H, W) float32 soft masks, background first
    records/<id>_<k>.json    PairRecord
    config.json              resolved GenerationConfig
    summary.json             run summary
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .blur import BOUNDARIES, BlurConfig, PairRecord, blur_pair
from .errors import ConfigError, InvalidParameterError, SegblurError
from .illumination import IllumAugment
from .imageio import bright_fraction, quantize, read_image, read_mask, read_raw, write_image
from .kernels import MODELS, KernelSpec, kernel_to_bytes, kernel_violations, read_kernel, write_kernel, write_kernel_png
from .manifest import SourceManifest

log = logging.getLogger(__name__)

GENERATION_MODES = ("dynamic_scenes", "varying_illum")

_MODE_DEFAULTS = {
    "dynamic_scenes": {"pairs_per_image": 1, "kernel_sizes": {65: 1.0}, "require_moving_object": True},
    "varying_illum": {"pairs_per_image": 8, "kernel_sizes": {33: 0.5, 65: 0.5}, "require_moving_object": False},
}

SUBDIRS = ("blurred", "sharp", "kernels", "masks", "records")


@dataclass(frozen=True)
class GenerationConfig:
    """One dataset run. ``None`` fields take the mode's default on :meth:`resolved`."""

    mode: str = "dynamic_scenes"
    gamma: float = 2.2
    kernel_model: str = "tremor"
    kernel_sizes: dict | None = None
    exposure_range: tuple = (1 / 100, 1 / 4)
    noise_std: float = 0.0
    pairs_per_image: int | None = None
    max_objects: int = 2
    min_object_area: int = 400
    moving_supercategories: tuple = ("person", "vehicle", "animal")
    illumination_supercategories: tuple = ("illumination",)
    excluded_supercategories: tuple = ("person",)
    bright_threshold: int = 250
    max_bright_fraction: float = 0.001
    require_moving_object: bool | None = None
    boundary: str = "replicate"
    output_bit_depth: int = 8
    kernel_previews: bool = True
    seed: int = 0
    output_dir: str | None = None

    def __post_init__(self):
        problems = []
        if self.mode not in GENERATION_MODES:
            problems.append(f"mode must be one of {GENERATION_MODES}")
        if self.kernel_model not in MODELS:
            problems.append(f"kernel_model must be one of {MODELS}")
        if not self.gamma > 0:
            problems.append("gamma must be > 0")
        if not self.noise_std >= 0:
            problems.append("noise_std must be >= 0")
        if self.pairs_per_image is not None and self.pairs_per_image < 1:
            problems.append("pairs_per_image must be >= 1")
        if self.min_object_area < 0:
            problems.append("min_object_area must be >= 0")
        if self.max_objects < 0:
            problems.append("max_objects must be >= 0")
        if self.boundary not in BOUNDARIES:
            problems.append(f"boundary must be one of {list(BOUNDARIES)}")
        if self.output_bit_depth not in (8, 16):
            problems.append("output_bit_depth must be 8 or 16")
        if not 0 <= self.max_bright_fraction <= 1:
            problems.append("max_bright_fraction must lie in [0, 1]")
        if self.kernel_sizes is not None:
            try:
                sizes = {int(k): float(v) for k, v in dict(self.kernel_sizes).items()}
            except (TypeError, ValueError):
                problems.append("kernel_sizes must map sizes to proportions")
            else:
                if not sizes or any(v < 0 for v in sizes.values()) or sum(sizes.values()) <= 0:
                    problems.append("kernel_sizes proportions must be >= 0 with a positive total")
                elif any(k < 3 or k % 2 == 0 for k in sizes):
                    problems.append("kernel sizes must be odd and >= 3")
                object.__setattr__(self, "kernel_sizes", sizes)
        lo, hi = self.exposure_range
        if not 0 < lo <= hi:
            problems.append("exposure_range must satisfy 0 < lo <= hi")
        for name in ("moving_supercategories", "illumination_supercategories", "excluded_supercategories"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "exposure_range", (float(lo), float(hi)))
        if problems:
            raise ConfigError("invalid generation config: " + "; ".join(problems))

    def resolved(self):
        defaults = _MODE_DEFAULTS[self.mode]
        return replace(self, **{k: v for k, v in defaults.items() if getattr(self, k) is None})

    def to_dict(self):
        d = asdict(self)
        d["exposure_range"] = list(self.exposure_range)
        for name in ("moving_supercategories", "illumination_supercategories", "excluded_supercategories"):
            d[name] = list(d[name])
        if self.kernel_sizes is not None:
            d["kernel_sizes"] = {str(k): v for k, v in sorted(self.kernel_sizes.items())}
        return d

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path):
        """Load a YAML (or JSON) config file."""
        data = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping")
        return cls.from_dict(data)


def derive_seed(run_seed, image_id, pair_index):
    """64-bit pair seed from (run seed, image id, pair index)."""
    digest = hashlib.sha256(f"{int(run_seed)}/{image_id}/{int(pair_index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


# ---------------------------------------------------------------------------
# filtering
# ---------------------------------------------------------------------------


def select_object_annotations(entry, cfg):
    """Moving objects of at least ``min_object_area`` px, largest ``max_objects`` first.

    Returns ``(annotation, mask)`` pairs.
    """
    candidates = []
    for i, obj in enumerate(entry.objects):
        if obj.supercategory not in cfg.moving_supercategories:
            continue
        mask = read_mask(obj.mask_path)
        area = int(np.count_nonzero(mask))
        if area >= cfg.min_object_area:
            candidates.append((-area, i, obj, mask))
    candidates.sort(key=lambda c: (c[0], c[1]))
    return [(obj, mask) for _, _, obj, mask in candidates[: cfg.max_objects]]


def select_objects(entry, cfg):
    return [mask for _, mask in select_object_annotations(entry, cfg)]


def illum_rejection_reason(entry, cfg):
    """Why ``entry`` is unfit for the varying-illumination set, or None."""
    supers = {o.supercategory for o in entry.objects}
    labels = {o.label for o in entry.objects}
    excluded = set(cfg.excluded_supercategories)
    if supers & excluded or labels & excluded:
        return "contains excluded class"
    if not supers & set(cfg.illumination_supercategories):
        return "no illumination object"
    raw, maxval = read_raw(entry.image_path)
    frac = bright_fraction(raw, maxval, cfg.bright_threshold)
    if frac > cfg.max_bright_fraction:
        return f"bright area {frac:.4%} exceeds {cfg.max_bright_fraction:.4%}"
    return None


def select_illum_images(manifest, cfg):
    keep = []
    for entry in manifest.entries:
        reason = illum_rejection_reason(entry, cfg)
        if reason is None:
            keep.append(entry)
        else:
            log.info("rejecting %s: %s", entry.id, reason)
    return manifest.subset(keep)


def saturation_mask_paths(entry, cfg):
    if entry.saturation_mask_path is not None:
        return [entry.saturation_mask_path]
    return [o.mask_path for o in entry.objects if o.supercategory in cfg.illumination_supercategories]


def _union_masks(paths, shape):
    mask = np.zeros(shape, dtype=bool)
    for p in paths:
        m = read_mask(p)
        if m.shape != shape:
            raise InvalidParameterError(f"mask {p} has shape {m.shape}, image is {shape}")
        mask |= m
    return mask


# ---------------------------------------------------------------------------
# pair synthesis
# ---------------------------------------------------------------------------


def generator_params(cfg):
    """Subset of a resolved config that determines pixel content."""
    return {
        "mode": cfg.mode,
        "gamma": float(cfg.gamma),
        "kernel_model": cfg.kernel_model,
        "kernel_sizes": {str(k): float(v) for k, v in sorted(cfg.kernel_sizes.items())},
        "exposure_range": list(cfg.exposure_range),
        "noise_std": float(cfg.noise_std),
        "boundary": cfg.boundary,
        "output_bit_depth": int(cfg.output_bit_depth),
    }


def _draw_size(kernel_sizes, rng):
    sizes = sorted(int(k) for k in kernel_sizes)
    weights = np.array([float(kernel_sizes[str(s)]) for s in sizes])
    u = rng.uniform()
    idx = int(np.searchsorted(np.cumsum(weights) / weights.sum(), u, side="right"))
    return sizes[min(idx, len(sizes) - 1)]


def synthesize_pair(sharp, masks, sat_mask, params, pair_seed):
    """Deterministic pair from loaded inputs, generator params and a pair seed."""
    rng = np.random.default_rng(pair_seed)
    size = _draw_size(params["kernel_sizes"], rng)
    spec = KernelSpec(params["kernel_model"], size, exposure_range=tuple(params["exposure_range"]))
    illum = IllumAugment(params["mode"], sat_mask if params["mode"] == "varying_illum" else None)
    cfg = BlurConfig(gamma=params["gamma"], noise_std=params["noise_std"], boundary=params["boundary"])
    return blur_pair(sharp, masks, spec, cfg, illum, rng)


def _pair_name(entry_id, k):
    return f"{entry_id}_{k:02d}"


def _process_entry(entry, cfg, out_dir):
    """Generate and write every pair of one entry; returns record dicts."""
    out_dir = Path(out_dir)
    params = generator_params(cfg)
    sharp = read_image(entry.image_path)
    selected = select_object_annotations(entry, cfg)
    masks = [m for _, m in selected]
    sat_paths = saturation_mask_paths(entry, cfg) if cfg.mode == "varying_illum" else []
    sat_mask = _union_masks(sat_paths, sharp.shape[:2]) if cfg.mode == "varying_illum" else None
    source = {
        "image": str(entry.image_path),
        "objects": [{"mask": str(o.mask_path), "class": o.label} for o, _ in selected],
        "saturation_masks": [str(p) for p in sat_paths],
    }

    pairs = []
    for k in range(cfg.pairs_per_image):
        seed = derive_seed(cfg.seed, entry.id, k)
        pairs.append((k, seed, synthesize_pair(sharp, masks, sat_mask, params, seed)))

    records = []
    for k, seed, pair in pairs:
        name = _pair_name(entry.id, k)
        outputs = {
            "blurred": f"blurred/{name}.png",
            "sharp": f"sharp/{name}.png",
            "masks": f"masks/{name}.npy",
            "kernels": [f"kernels/{name}_r{b}.bin" for b in range(len(pair.regions))],
        }
        write_image(out_dir / outputs["blurred"], pair.blurred, cfg.output_bit_depth)
        write_image(out_dir / outputs["sharp"], pair.sharp, cfg.output_bit_depth)
        np.save(out_dir / outputs["masks"], np.stack(pair.regions.masks).astype(np.float32))
        for path, kern in zip(outputs["kernels"], pair.regions.kernels):
            write_kernel(out_dir / path, kern)
            if cfg.kernel_previews:
                write_kernel_png(out_dir / path.replace(".bin", ".png"), kern)

        record = replace(
            pair.record,
            source_id=entry.id,
            pair_index=k,
            pair_seed=seed,
            source=source,
            outputs=outputs,
            generator=params,
        )
        (out_dir / "records" / f"{name}.json").write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n")
        records.append(name)
    return records


def _run_entry(args):
    entry, cfg, out_dir = args
    try:
        return entry.id, _process_entry(entry, cfg, out_dir), None
    except (SegblurError, OSError, ValueError) as exc:
        log.error("entry %s failed: %s", entry.id, exc)
        return entry.id, [], f"{type(exc).__name__}: {exc}"


@dataclass
class RunSummary:
    mode: str
    seed: int
    entries_total: int
    entries_accepted: int
    pairs: int
    rejected: dict = field(default_factory=dict)
    failed: dict = field(default_factory=dict)
    records: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.failed

    def to_dict(self):
        return asdict(self)


def accepted_entries(manifest, cfg):
    """Entries that pass the mode's filters, and rejection reasons for the rest."""
    accepted, rejected = [], {}
    for entry in manifest.entries:
        if cfg.mode == "varying_illum":
            reason = illum_rejection_reason(entry, cfg)
        elif cfg.require_moving_object and not select_object_annotations(entry, cfg):
            reason = "no qualifying moving object"
        else:
            reason = None
        if reason is None:
            accepted.append(entry)
        else:
            rejected[entry.id] = reason
    return accepted, rejected


def generate_dataset(manifest: SourceManifest, cfg: GenerationConfig, output_dir=None, jobs=1):
    """Generate all pairs for ``manifest`` and write them under ``output_dir``.

    Per-entry failures are logged and recorded in the summary; the run only
    raises on config problems.
    """
    cfg = cfg.resolved()
    target = output_dir or cfg.output_dir
    if not target:
        raise ConfigError("no output directory given")
    out = Path(target)
    for sub in SUBDIRS:
        (out / sub).mkdir(parents=True, exist_ok=True)

    accepted, rejected = accepted_entries(manifest, cfg)
    tasks = [(e, cfg, str(out)) for e in accepted]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_entry, tasks, chunksize=1))
    else:
        results = [_run_entry(t) for t in tasks]

    failed = {eid: err for eid, _, err in results if err is not None}
    records = sorted(name for _, names, _ in results for name in names)
    summary = RunSummary(
        mode=cfg.mode,
        seed=int(cfg.seed),
        entries_total=len(manifest.entries),
        entries_accepted=len(accepted),
        pairs=len(records),
        rejected=dict(sorted(rejected.items())),
        failed=dict(sorted(failed.items())),
        records=records,
    )
    written_cfg = replace(cfg, output_dir=None).to_dict()
    (out / "config.json").write_text(json.dumps(written_cfg, indent=2, sort_keys=True) + "\n")
    (out / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
    return summary


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


def regenerate_pair(record):
    """Recompute a pair from its record and the source files it names."""
    src = record.source
    sharp = read_image(src["image"])
    masks = [read_mask(o["mask"]) for o in src["objects"]]
    params = record.generator
    sat_mask = None
    if params["mode"] == "varying_illum":
        sat_mask = _union_masks(src["saturation_masks"], sharp.shape[:2])
    return synthesize_pair(sharp, masks, sat_mask, params, record.pair_seed)


@dataclass
class VerificationReport:
    results: dict = field(default_factory=dict)

    def _count(self, status):
        return sum(1 for r in self.results.values() if r["status"] == status)

    @property
    def passed(self):
        return self._count("pass")

    @property
    def failed(self):
        return self._count("fail")

    @property
    def missing(self):
        return self._count("missing-artifact")

    @property
    def ok(self):
        return bool(self.results) and self.passed == len(self.results)

    def to_dict(self):
        return {
            "pairs": len(self.results),
            "passed": self.passed,
            "failed": self.failed,
            "missing": self.missing,
            "results": self.results,
        }


def _verify_record(out, record):
    outputs = record.outputs
    paths = [outputs["blurred"], outputs["sharp"], outputs["masks"], *outputs["kernels"]]
    missing = [p for p in paths if not (out / p).is_file()]
    if missing:
        return {"status": "missing-artifact", "problems": [f"missing {p}" for p in missing]}

    problems = []
    pair = regenerate_pair(record)
    depth = record.generator["output_bit_depth"]
    for key, img in (("blurred", pair.blurred), ("sharp", pair.sharp)):
        raw, _ = read_raw(out / outputs[key])
        if not np.array_equal(raw, quantize(img, depth)):
            problems.append(f"{key} image differs from regeneration")

    stored = np.load(out / outputs["masks"])
    if not np.array_equal(stored, np.stack(pair.regions.masks).astype(np.float32)):
        problems.append("masks differ from regeneration")
    err = float(np.abs(stored.astype(np.float64).sum(axis=0) - 1).max())
    if err >= 1e-6:
        problems.append(f"masks violate partition of unity ({err:.2e})")

    if len(outputs["kernels"]) != len(pair.regions.kernels):
        problems.append("kernel count differs from regeneration")
    for path, kern in zip(outputs["kernels"], pair.regions.kernels):
        data = (out / path).read_bytes()
        if data != kernel_to_bytes(kern):
            problems.append(f"{path} differs from regeneration")
        problems.extend(f"{path}: {p}" for p in kernel_violations(read_kernel(out / path)))
    return {"status": "fail" if problems else "pass", "problems": problems}


def verify_dataset(output_dir):
    """Recompute every pair from its record and compare against the files on disk."""
    out = Path(output_dir)
    report = VerificationReport()
    for path in sorted((out / "records").glob("*.json")):
        name = path.stem
        try:
            record = PairRecord.from_dict(json.loads(path.read_text()))
            report.results[name] = _verify_record(out, record)
        except (OSError, KeyError, TypeError, ValueError, SegblurError) as exc:
            status = "missing-artifact" if isinstance(exc, OSError) else "fail"
            report.results[name] = {"status": status, "problems": [f"{type(exc).__name__}: {exc}"]}
    return report
