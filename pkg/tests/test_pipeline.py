"""End-to-end pipeline: manifests, the ground-truth oracle, paired arms,
report emission, determinism.
"""

import warnings

import numpy as np
import pytest

import adasample.pipeline as pipeline_mod
from adasample.core import LabelMap, PixelGrid, TargetClassSet
from adasample.io import read_label_png, read_tensor, sha256_of_file, write_image_png, write_label_png
from adasample.pipeline import (
    DatasetManifest,
    PipelineConfig,
    center_crop_square,
    load_manifest,
    oracle_classify,
    process_image_pair,
    run_pipeline,
    save_manifest,
)
from adasample.scenes import SceneSpec, disk_label_map, generate_scene
from adasample.solver import uniform_tensor


def write_dataset(root, count=4, height=48, width=48, num_classes=2, constant=None):
    """Scene PNG pairs plus a manifest file under root; returns the manifest."""
    root.mkdir(parents=True, exist_ok=True)
    pairs = []
    for i in range(count):
        img, lab = generate_scene(SceneSpec(seed=[100, i], height=height, width=width,
                                            num_classes=num_classes))
        if constant is not None:
            lab = LabelMap(grid=lab.grid,
                           labels=np.full(lab.grid.shape, constant, dtype=np.int64))
        ip, lp = f"img_{i}.png", f"lab_{i}.png"
        write_image_png(root / ip, img)
        write_label_png(root / lp, lab)
        pairs.append((ip, lp))
    class_names = {c: f"class{c}" for c in range(num_classes + 1)}
    save_manifest(root / "manifest.json", pairs, class_names,
                  target_ids=list(range(1, num_classes + 1)))
    return load_manifest(root / "manifest.json")


def quiet_run(*args, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return run_pipeline(*args, **kwargs)


class TestPipelineConfig:
    def test_defaults_valid(self):
        cfg = PipelineConfig()
        assert cfg.noise_p == 0.0

    def test_noisy_mode_parsed(self):
        assert PipelineConfig(oracle="noisy:0.25").noise_p == 0.25

    def test_rejections(self):
        with pytest.raises(ValueError):
            PipelineConfig(lam=-1.0)
        with pytest.raises(ValueError):
            PipelineConfig(tensor_h=1)
        with pytest.raises(ValueError):
            PipelineConfig(oracle="magic")
        with pytest.raises(ValueError):
            PipelineConfig(oracle="noisy:1.5")
        with pytest.raises(ValueError):
            PipelineConfig(recall_bins=0)


class TestManifest:
    def test_round_trip(self, tmp_path):
        m = write_dataset(tmp_path / "ds")
        assert len(m.pairs) == 4
        assert m.ignore_id == 255
        assert m.num_classes == 3
        assert m.target_ids == (1, 2)
        for ip, lp in m.pairs:
            assert ip.is_file() and lp.is_file()

    def test_null_ignore_id_preserved(self, tmp_path):
        root = tmp_path / "ds"
        write_dataset(root, count=1)
        save_manifest(root / "manifest.json", [("img_0.png", "lab_0.png")],
                      {0: "bg", 1: "fg"}, target_ids=[1], ignore_id=None)
        assert load_manifest(root / "manifest.json").ignore_id is None

    def test_missing_file_rejected(self, tmp_path):
        root = tmp_path / "ds"
        root.mkdir()
        save_manifest(root / "manifest.json", [("ghost.png", "ghost_lab.png")],
                      {0: "bg", 1: "fg"}, target_ids=[1])
        with pytest.raises(FileNotFoundError):
            load_manifest(root / "manifest.json")

    def test_unknown_target_rejected(self, tmp_path):
        root = tmp_path / "ds"
        write_dataset(root, count=1)
        save_manifest(root / "manifest.json", [("img_0.png", "lab_0.png")],
                      {0: "bg", 1: "fg"}, target_ids=[9])
        with pytest.raises(ValueError, match="not in the class table"):
            load_manifest(root / "manifest.json")


class TestOracleClassify:
    def test_full_resolution_reproduces_labels(self):
        rng = np.random.default_rng(0)
        lab = LabelMap(grid=PixelGrid(12, 12),
                       labels=rng.integers(0, 3, size=(12, 12)))
        scores = oracle_classify(lab, uniform_tensor(12, 12), 3)
        np.testing.assert_array_equal(scores.argmax_labels(), lab.labels)

    def test_scores_are_one_hot_except_ignore(self):
        lab_arr = np.zeros((8, 8), dtype=np.int64)
        lab_arr[:, 4:] = 1
        lab_arr[0, 0] = 255
        lab = LabelMap(grid=PixelGrid(8, 8), labels=lab_arr, ignore_id=255)
        scores = oracle_classify(lab, uniform_tensor(8, 8), 2)
        ignored = lab_arr == 255
        np.testing.assert_array_equal(scores.scores[:, ignored], 0.5)
        assert set(np.unique(scores.scores[:, ~ignored])) == {0.0, 1.0}
        np.testing.assert_array_equal(scores.scores.sum(axis=0), 1.0)

    def test_small_disk_slips_between_samples(self):
        shape = disk_label_map(64, 64, radius=1.3, center=(6.3, 6.3))
        assert (shape.labels == 1).any()
        scores = oracle_classify(shape, uniform_tensor(16, 16), 2)
        assert scores.scores[1].sum() == 0.0  # class 1 never sampled

    def test_flip_rate_and_values(self):
        lab = LabelMap(grid=PixelGrid(64, 64),
                       labels=np.zeros((64, 64), dtype=np.int64))
        rng = np.random.default_rng(1)
        scores = oracle_classify(lab, uniform_tensor(64, 64), 3, rng, flip_p=0.3)
        flipped = scores.argmax_labels() != 0
        assert abs(flipped.mean() - 0.3) < 0.05
        assert set(np.unique(scores.argmax_labels()[flipped])) <= {1, 2}

    def test_full_flip_never_keeps_label(self):
        rng = np.random.default_rng(2)
        lab = LabelMap(grid=PixelGrid(16, 16),
                       labels=rng.integers(0, 4, size=(16, 16)))
        out = oracle_classify(lab, uniform_tensor(16, 16), 4,
                              np.random.default_rng(3), flip_p=1.0)
        got = out.argmax_labels()
        assert (got != lab.labels).all()
        assert got.max() < 4

    def test_error_paths(self):
        lab = LabelMap(grid=PixelGrid(4, 4), labels=np.zeros((4, 4), dtype=np.int64))
        with pytest.raises(ValueError, match="random generator"):
            oracle_classify(lab, uniform_tensor(4, 4), 2, None, flip_p=0.5)
        with pytest.raises(ValueError, match="single class"):
            oracle_classify(lab, uniform_tensor(4, 4), 1,
                            np.random.default_rng(0), flip_p=0.5)
        big = LabelMap(grid=PixelGrid(4, 4), labels=np.full((4, 4), 5))
        with pytest.raises(ValueError, match="num_classes"):
            oracle_classify(big, uniform_tensor(4, 4), 3)


def test_center_crop_square():
    lab = LabelMap(grid=PixelGrid(10, 16),
                   labels=np.arange(160).reshape(10, 16) % 7, ignore_id=None)
    cropped = center_crop_square(lab)
    assert cropped.grid.shape == (10, 10)
    np.testing.assert_array_equal(cropped.labels, lab.labels[:, 3:13])


class TestProcessImagePair:
    def test_result_structure(self):
        img, lab = generate_scene(SceneSpec(seed=7, height=48, width=48, num_classes=2))
        cfg = PipelineConfig(out_h=24, out_w=24)
        res = process_image_pair(img, lab, TargetClassSet([1, 2]), cfg, 3,
                                 np.random.default_rng(0))
        assert set(res) == {"solved_tensor", "arms", "timings"}
        for arm in ("adaptive", "uniform"):
            a = res["arms"][arm]
            assert a["pred"].grid.shape == (48, 48)
            assert a["confusion"].shape == (3, 3)
            assert a["sampled"].values.shape == (3, 24, 24)
        np.testing.assert_array_equal(res["arms"]["uniform"]["tensor"].phi,
                                      uniform_tensor(24, 24).phi)

    def test_image_optional(self):
        _, lab = generate_scene(SceneSpec(seed=8, height=32, width=32, num_classes=2))
        res = process_image_pair(None, lab, TargetClassSet([1, 2]),
                                 PipelineConfig(), 3, np.random.default_rng(0))
        assert "sampled" not in res["arms"]["adaptive"]

    def test_uniform_arm_never_solves(self, monkeypatch):
        calls = []
        real = pipeline_mod.solve_sampling_tensor

        def counting(*args, **kwargs):
            calls.append(1)
            return real(*args, **kwargs)

        monkeypatch.setattr(pipeline_mod, "solve_sampling_tensor", counting)
        _, lab = generate_scene(SceneSpec(seed=9, height=32, width=32, num_classes=2))
        process_image_pair(None, lab, TargetClassSet([1, 2]), PipelineConfig(), 3,
                           np.random.default_rng(0))
        assert len(calls) == 1  # adaptive arm only

    def test_huge_lambda_arms_agree_bitwise(self):
        img, lab = generate_scene(SceneSpec(seed=42, height=64, width=64, num_classes=2))
        cfg = PipelineConfig(lam=1e9, out_h=32, out_w=32)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = process_image_pair(img, lab, TargetClassSet([1, 2]), cfg, 3,
                                     np.random.default_rng(0))
        a, u = res["arms"]["adaptive"], res["arms"]["uniform"]
        np.testing.assert_array_equal(a["pred"].labels, u["pred"].labels)
        np.testing.assert_array_equal(a["confusion"], u["confusion"])
        for x, y in zip(a["trimap"], u["trimap"]):
            np.testing.assert_array_equal(x, y)

    def test_noisy_oracle_is_seed_deterministic(self):
        _, lab = generate_scene(SceneSpec(seed=10, height=32, width=32, num_classes=2))
        cfg = PipelineConfig(oracle="noisy:0.2")
        outs = [process_image_pair(None, lab, TargetClassSet([1, 2]), cfg, 3,
                                   np.random.default_rng([5, 0])) for _ in range(2)]
        np.testing.assert_array_equal(outs[0]["arms"]["adaptive"]["pred"].labels,
                                      outs[1]["arms"]["adaptive"]["pred"].labels)
        np.testing.assert_array_equal(outs[0]["arms"]["uniform"]["pred"].labels,
                                      outs[1]["arms"]["uniform"]["pred"].labels)


class TestRunPipeline:
    def test_constant_label_dataset_perfect_everywhere(self, tmp_path):
        m = write_dataset(tmp_path / "ds", count=2, height=16, width=16, constant=1)
        report = quiet_run(m, PipelineConfig(tensor_h=4, tensor_w=4, out_h=8, out_w=8))
        for arm in ("adaptive", "uniform"):
            assert report.iou[arm].mean_target == 1.0
            assert report.iou[arm].per_class == {1: 1.0}

    def test_report_and_emission(self, tmp_path):
        m = write_dataset(tmp_path / "ds")
        out = tmp_path / "out"
        report = quiet_run(m, PipelineConfig(out_h=24, out_w=24), out_dir=out)
        assert report.num_images == 4 and report.failures == []
        assert len(report.per_image) == 4
        for name in ("iou.csv", "trimap.csv", "recall.csv", "per_image.csv",
                     "timings.csv", "run_manifest.json"):
            assert (out / name).is_file()
        for i in range(4):
            assert (out / "tensors" / f"solved_{i:04d}.smpt").is_file()
            pred = read_label_png(out / "preds" / f"adaptive_{i:04d}.png")
            assert pred.grid.shape == (48, 48)

    def test_manifest_hashes_cover_everything_but_timings(self, tmp_path):
        import json

        m = write_dataset(tmp_path / "ds", count=2)
        out = tmp_path / "out"
        quiet_run(m, PipelineConfig(), out_dir=out)
        doc = json.loads((out / "run_manifest.json").read_text())
        assert "timings.csv" not in doc["hashes"]
        assert (out / "timings.csv").is_file()
        for rel, digest in doc["hashes"].items():
            assert sha256_of_file(out / rel) == digest

    def test_two_runs_byte_identical(self, tmp_path):
        m = write_dataset(tmp_path / "ds")
        cfg = PipelineConfig(oracle="noisy:0.2", seed=3)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        quiet_run(m, cfg, out_dir=out_a)
        quiet_run(m, cfg, out_dir=out_b)
        files_a = sorted(p.relative_to(out_a) for p in out_a.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(out_b) for p in out_b.rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            if rel.name == "timings.csv":  # wall clock, exempt by contract
                continue
            assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), rel

    def test_worker_pool_matches_serial(self, tmp_path):
        m = write_dataset(tmp_path / "ds")
        cfg = PipelineConfig(out_h=24, out_w=24)
        serial = quiet_run(m, cfg, workers=1)
        pooled = quiet_run(m, cfg, workers=3)
        assert serial.per_image == pooled.per_image
        for arm in ("adaptive", "uniform"):
            assert serial.iou[arm] == pooled.iou[arm]
            assert serial.trimap[arm] == pooled.trimap[arm]
            assert serial.recall[arm].per_bin == pooled.recall[arm].per_bin

    def test_decode_failure_recorded_not_fatal(self, tmp_path):
        m = write_dataset(tmp_path / "ds")
        (m.root / "lab_2.png").write_bytes(b"this is no png")
        report = quiet_run(m, PipelineConfig())
        assert report.num_images == 3
        assert len(report.failures) == 1
        assert report.failures[0]["index"] == 2

    def test_emitted_tensor_matches_recompute(self, tmp_path):
        m = write_dataset(tmp_path / "ds", count=1)
        out = tmp_path / "out"
        cfg = PipelineConfig()
        quiet_run(m, cfg, out_dir=out)
        from adasample.io import read_image_png

        lab = read_label_png(m.pairs[0][1], m.ignore_id)
        res = process_image_pair(read_image_png(m.pairs[0][0]), lab,
                                 TargetClassSet(m.target_ids), cfg, m.num_classes,
                                 np.random.default_rng([cfg.seed, 0]))
        stored = read_tensor(out / "tensors" / "solved_0000.smpt")
        np.testing.assert_array_equal(stored.phi, res["solved_tensor"].phi)

    def test_center_crop_flag(self, tmp_path):
        m = write_dataset(tmp_path / "ds", count=1, height=40, width=56)
        out = tmp_path / "out"
        quiet_run(m, PipelineConfig(center_crop_square=True), out_dir=out)
        pred = read_label_png(out / "preds" / "uniform_0000.png")
        assert pred.grid.shape == (40, 40)

    def test_adaptive_recall_reported_relative_to_uniform(self, tmp_path):
        m = write_dataset(tmp_path / "ds")
        report = quiet_run(m, PipelineConfig(recall_bins=2))
        assert report.recall["adaptive"].relative is not None
        assert report.recall["uniform"].relative is None
