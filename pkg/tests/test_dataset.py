import hashlib
import json

import numpy as np
import pytest

from segblur.dataset import (
    GenerationConfig,
    _draw_size,
    derive_seed,
    generate_dataset,
    illum_rejection_reason,
    select_illum_images,
    select_objects,
    verify_dataset,
)
from segblur.errors import ConfigError
from segblur.imageio import read_raw, write_raw
from segblur.kernels import kernel_violations, read_kernel
from segblur.manifest import load_manifest
from synth import rect_mask, write_manifest

SHAPE = (100, 100)


def gray(value=128):
    return np.full(SHAPE + (3,), value, np.uint8)


def with_bright(n, value=251):
    raw = gray()
    raw.reshape(-1, 3)[:n, 1] = value
    return raw


@pytest.fixture
def object_manifest(tmp_path):
    entries = [
        ("area399", gray(), [(rect_mask(SHAPE, 0, 0, 21, 19), "person")]),
        ("area400", gray(), [(rect_mask(SHAPE, 0, 0, 20, 20), "person")]),
        (
            "three",
            gray(),
            [
                (rect_mask(SHAPE, 0, 0, 20, 20), "person"),
                (rect_mask(SHAPE, 30, 0, 25, 25), "person"),
                (rect_mask(SHAPE, 60, 0, 30, 30), "person"),
            ],
        ),
        ("tree", gray(), [(rect_mask(SHAPE, 0, 0, 90, 90), "tree")]),
        ("mixed", gray(), [(rect_mask(SHAPE, 0, 0, 20, 30), "dog"), (rect_mask(SHAPE, 50, 50, 40, 40), "tree")]),
    ]
    return load_manifest(write_manifest(tmp_path, entries))


def by_id(manifest):
    return {e.id: e for e in manifest.entries}


def test_min_area_boundary(object_manifest):
    cfg = GenerationConfig()
    e = by_id(object_manifest)
    assert select_objects(e["area399"], cfg) == []
    assert len(select_objects(e["area400"], cfg)) == 1


def test_object_cap_keeps_largest(object_manifest):
    masks = select_objects(by_id(object_manifest)["three"], GenerationConfig())
    assert [int(m.sum()) for m in masks] == [900, 625]


def test_non_moving_class_rejected(object_manifest):
    e = by_id(object_manifest)
    assert select_objects(e["tree"], GenerationConfig()) == []
    masks = select_objects(e["mixed"], GenerationConfig())
    assert [int(m.sum()) for m in masks] == [600]


@pytest.fixture
def illum_manifest(tmp_path):
    lamp = rect_mask(SHAPE, 40, 40, 5, 5)
    entries = [
        ("bright020", with_bright(20), [(lamp, "lamp")]),
        ("bright010", with_bright(10), [(lamp, "lamp")]),
        ("bright005", with_bright(5), [(lamp, "lamp")]),
        ("at250", with_bright(500, value=250), [(lamp, "lamp")]),
        ("person", with_bright(0), [(lamp, "lamp"), (rect_mask(SHAPE, 0, 0, 30, 30), "person")]),
        ("nolamp", with_bright(0), [(rect_mask(SHAPE, 0, 0, 30, 30), "car")]),
    ]
    return load_manifest(write_manifest(tmp_path, entries))


def test_illum_filtering(illum_manifest):
    cfg = GenerationConfig(mode="varying_illum")
    kept = [e.id for e in select_illum_images(illum_manifest, cfg).entries]
    assert kept == ["bright010", "bright005", "at250"]
    reasons = {e.id: illum_rejection_reason(e, cfg) for e in illum_manifest.entries}
    assert "bright area" in reasons["bright020"]
    assert reasons["person"] == "contains excluded class"
    assert reasons["nolamp"] == "no illumination object"


def test_derive_seed_is_sha256_prefix():
    expected = int.from_bytes(hashlib.sha256(b"7/img001/3").digest()[:8], "little")
    assert derive_seed(7, "img001", 3) == expected
    assert derive_seed(7, "img001", 3) != derive_seed(7, "img001", 4)


def test_draw_size_proportions():
    rng = np.random.default_rng(0)
    draws = [_draw_size({"33": 0.5, "65": 0.5}, rng) for _ in range(4000)]
    assert set(draws) == {33, 65}
    assert abs(draws.count(33) / 4000 - 0.5) < 0.03
    assert {_draw_size({"33": 1.0, "65": 0.0}, rng) for _ in range(50)} == {33}


def test_config_validation_and_files(tmp_path):
    with pytest.raises(ConfigError):
        GenerationConfig(mode="nope")
    with pytest.raises(ConfigError):
        GenerationConfig(kernel_sizes={32: 1})
    with pytest.raises(ConfigError):
        GenerationConfig.from_dict({"bogus": 1})
    p = tmp_path / "c.yaml"
    p.write_text("mode: varying_illum\nkernel_sizes: {33: 1}\nnoise_std: 0.02\n")
    cfg = GenerationConfig.from_file(p).resolved()
    assert cfg.pairs_per_image == 8 and cfg.kernel_sizes == {33: 1.0} and cfg.noise_std == 0.02
    assert GenerationConfig.from_dict(cfg.to_dict()) == cfg
    dyn = GenerationConfig().resolved()
    assert dyn.pairs_per_image == 1 and dyn.kernel_sizes == {65: 1.0}


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()


SMALL = GenerationConfig(kernel_sizes={33: 1.0}, seed=3)


def test_dynamic_run_layout(fixture_manifest, tmp_path):
    manifest = load_manifest(fixture_manifest)
    summary = generate_dataset(manifest, SMALL, tmp_path / "out")
    out = tmp_path / "out"
    assert summary.pairs == 10 and summary.ok and not summary.rejected
    assert len(list((out / "records").glob("*.json"))) == 10
    assert len(list((out / "blurred").glob("*.png"))) == 10
    rec = json.loads((out / "records" / "img000_00.json").read_text())
    assert rec["num_regions"] == 3
    assert rec["generator"]["mode"] == "dynamic_scenes"
    assert rec["pair_seed"] == derive_seed(3, "img000", 0)
    for kpath in rec["outputs"]["kernels"]:
        assert kernel_violations(read_kernel(out / kpath)) == []
        assert (out / kpath.replace(".bin", ".png")).is_file()
    masks = np.load(out / rec["outputs"]["masks"])
    assert masks.shape == (3, 96, 128)
    assert np.abs(masks.astype(np.float64).sum(axis=0) - 1).max() < 1e-6
    saved = json.loads((out / "summary.json").read_text())
    assert saved["pairs"] == 10 and saved["entries_accepted"] == 10


def test_varying_run_pairs(lamp_manifest, tmp_path):
    cfg = GenerationConfig(mode="varying_illum", seed=1)
    summary = generate_dataset(load_manifest(lamp_manifest), cfg, tmp_path / "vi")
    assert summary.pairs == 16, summary
    recs = [json.loads(p.read_text()) for p in sorted((tmp_path / "vi" / "records").glob("*.json"))]
    assert {r["kernel_size"] for r in recs} <= {33, 65}
    assert len({(r["illumination"]["l"], r["illumination"]["s"]) for r in recs}) == 16
    assert all(r["source"]["saturation_masks"] for r in recs)
    assert verify_dataset(tmp_path / "vi").ok


def test_pair_independence(fixture_manifest, tmp_path):
    manifest = load_manifest(fixture_manifest)
    generate_dataset(manifest, SMALL, tmp_path / "all")
    generate_dataset(manifest.subset(manifest.entries[3:6]), SMALL, tmp_path / "some")
    for name in ("img003_00", "img004_00", "img005_00"):
        for sub in ("blurred", "sharp"):
            a = (tmp_path / "all" / sub / f"{name}.png").read_bytes()
            b = (tmp_path / "some" / sub / f"{name}.png").read_bytes()
            assert a == b


def test_parallel_matches_serial(fixture_manifest, tmp_path):
    manifest = load_manifest(fixture_manifest)
    generate_dataset(manifest, SMALL, tmp_path / "serial")
    generate_dataset(manifest, SMALL, tmp_path / "parallel", jobs=3)
    assert tree_digest(tmp_path / "serial") == tree_digest(tmp_path / "parallel")


def test_verify_detects_tamper_and_missing(fixture_manifest, tmp_path):
    out = tmp_path / "run"
    generate_dataset(load_manifest(fixture_manifest), SMALL, out)
    assert verify_dataset(out).passed == 10

    raw, _ = read_raw(out / "blurred" / "img002_00.png")
    raw[5, 5, 0] ^= 1
    write_raw(out / "blurred" / "img002_00.png", raw)
    (out / "kernels" / "img007_00_r1.bin").unlink()

    rep = verify_dataset(out)
    assert rep.results["img002_00"]["status"] == "fail"
    assert rep.results["img007_00"]["status"] == "missing-artifact"
    assert rep.passed == 8 and rep.failed == 1 and rep.missing == 1
    assert not rep.ok


def test_failed_entry_is_skipped(tmp_path):
    raw = gray()
    big = rect_mask(SHAPE, 10, 10, 30, 30)
    path = write_manifest(tmp_path, [("ok", raw, [(big, "car")]), ("bad", raw, [(big, "car")])])
    # corrupt one image after validation
    manifest = load_manifest(path)
    (tmp_path / "images" / "bad.png").write_bytes(b"not a png")
    summary = generate_dataset(manifest, SMALL, tmp_path / "out")
    assert summary.pairs == 1
    assert list(summary.failed) == ["bad"]
    assert not summary.ok


def test_require_moving_object(object_manifest, tmp_path):
    summary = generate_dataset(object_manifest, SMALL, tmp_path / "a")
    assert set(summary.rejected) == {"area399", "tree"}
    cfg = GenerationConfig(kernel_sizes={33: 1.0}, require_moving_object=False)
    summary = generate_dataset(object_manifest, cfg, tmp_path / "b")
    assert summary.rejected == {} and summary.pairs == 5


def test_missing_output_dir(fixture_manifest):
    with pytest.raises(ConfigError):
        generate_dataset(load_manifest(fixture_manifest), SMALL)
