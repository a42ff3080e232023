"""Command line entry point: ``segblur <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .dataset import GenerationConfig, generate_dataset, verify_dataset
from .errors import SegblurError
from .imageio import read_image
from .kernels import MODELS, KernelSpec, generate_kernels, write_kernel, write_kernel_png
from .manifest import load_manifest
from .metrics import compare

log = logging.getLogger("segblur")


def _gen_kernels(args):
    spec = KernelSpec(model=args.model, size=args.size, exposure=args.exposure, seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    width = len(str(max(args.count - 1, 0)))
    for i, k in enumerate(generate_kernels(spec, args.count)):
        stem = out / f"{args.model}_{args.size}_{i:0{width}d}"
        write_kernel(stem.with_suffix(".bin"), k)
        if args.png:
            write_kernel_png(stem.with_suffix(".png"), k)
    print(f"wrote {args.count} kernels to {out}")
    return 0


def _gen_dataset(args):
    cfg = GenerationConfig.from_file(args.config) if args.config else GenerationConfig()
    overrides = {"output_dir": args.out}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = replace(cfg, **overrides)
    manifest = load_manifest(args.manifest)
    summary = generate_dataset(manifest, cfg, args.out, jobs=args.jobs)
    print(
        f"{summary.pairs} pairs from {summary.entries_accepted}/{summary.entries_total} entries"
        f" ({len(summary.rejected)} rejected, {len(summary.failed)} failed)"
    )
    for eid, err in summary.failed.items():
        print(f"  failed {eid}: {err}", file=sys.stderr)
    return 0 if summary.ok else 1


def _verify(args):
    report = verify_dataset(args.dir)
    for name, res in report.results.items():
        if res["status"] != "pass":
            print(f"{res['status'].upper()} {name}: " + "; ".join(res["problems"]))
    print(f"{report.passed}/{len(report.results)} pairs verified")
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0 if report.ok else 1


def _metrics(args):
    report = compare(read_image(args.a, dtype="float64"), read_image(args.b, dtype="float64"))
    d = report.to_dict()
    print(f"PSNR {d['psnr'] if isinstance(d['psnr'], str) else format(d['psnr'], '.4f')} dB  SSIM {d['ssim']:.6f}")
    if args.report:
        Path(args.report).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
    return 0


def _import_coco(args):
    from .importers import coco_to_manifest

    n = coco_to_manifest(args.annotations, args.images, args.out, limit=args.limit)
    print(f"wrote manifest with {n} entries to {args.out}")
    return 0


def _import_ade20k(args):
    from .importers import ade20k_to_manifest

    n = ade20k_to_manifest(args.index, args.out, limit=args.limit)
    print(f"wrote manifest with {n} entries to {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="segblur", description="Segmentation-based motion blur pair synthesis")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("gen-kernels", help="sample random blur kernels")
    k.add_argument("--model", choices=MODELS, default="tremor")
    k.add_argument("--size", type=int, default=65)
    k.add_argument("--exposure", type=float, default=None, help="seconds (tremor); drawn per kernel if omitted")
    k.add_argument("--count", type=int, default=1)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--out-dir", required=True)
    k.add_argument("--no-png", dest="png", action="store_false", help="skip 16-bit PNG previews")
    k.set_defaults(func=_gen_kernels)

    d = sub.add_parser("gen-dataset", help="generate blurred/sharp pairs from a manifest")
    d.add_argument("--manifest", required=True)
    d.add_argument("--config", default=None, help="YAML/JSON generation config")
    d.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    d.add_argument("--out", required=True)
    d.add_argument("--jobs", type=int, default=1)
    d.set_defaults(func=_gen_dataset)

    v = sub.add_parser("verify", help="regenerate every pair and compare with the files on disk")
    v.add_argument("--dir", required=True)
    v.add_argument("--report", default=None)
    v.set_defaults(func=_verify)

    m = sub.add_parser("metrics", help="PSNR/SSIM between two images")
    m.add_argument("--a", required=True)
    m.add_argument("--b", required=True)
    m.add_argument("--report", default=None)
    m.set_defaults(func=_metrics)

    c = sub.add_parser("import-coco", help="convert COCO instance annotations to a manifest")
    c.add_argument("--annotations", required=True)
    c.add_argument("--images", required=True)
    c.add_argument("--out", required=True, help="output directory for masks and manifest.json")
    c.add_argument("--limit", type=int, default=None)
    c.set_defaults(func=_import_coco)

    a = sub.add_parser("import-ade20k", help="convert ADE20K-style index to a manifest")
    a.add_argument("--index", required=True, help="JSON index of images, segmentation PNGs and class names")
    a.add_argument("--out", required=True)
    a.add_argument("--limit", type=int, default=None)
    a.set_defaults(func=_import_ade20k)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SegblurError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
