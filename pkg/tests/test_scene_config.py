"""Tests for scene, run and metrics configuration."""

import json
from pathlib import Path

import pytest
from pydantic import ValidationError

from errors import ConfigError, ResourceError
from scene_config import AvatarPlacement, MetricsConfig, RunConfig, SceneConfig, load_scene_config

MINIMAL = {
    "models": {"female": "models/female"},
    "atlas": "atlas",
    "backgrounds": "backgrounds",
    "textures": {"female": "textures/female"},
    "clips": ["clips/walk.bvh"],
}


def write_config(tmp_path, **overrides):
    path = tmp_path / "scene.json"
    path.write_text(json.dumps({**MINIMAL, **overrides}))
    return path


class TestSceneConfig:
    """Test loading and validating scene configs."""

    def test_relative_paths_resolved(self, tmp_path):
        config = load_scene_config(write_config(tmp_path))
        assert Path(config.atlas) == (tmp_path / "atlas").resolve()
        assert Path(config.models["female"]) == (tmp_path / "models" / "female").resolve()
        assert config.occluders is None

    def test_absolute_paths_kept(self, tmp_path):
        config = load_scene_config(write_config(tmp_path, atlas="/data/atlas"))
        assert config.atlas == str(Path("/data/atlas"))

    def test_defaults(self, tmp_path):
        config = load_scene_config(write_config(tmp_path))
        assert config.n_points == 196
        assert config.iuv_mode == "barycentric"
        assert config.workers == 1
        assert config.gender_tags == ["female"]

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError):
            load_scene_config(write_config(tmp_path, colour="red"))

    def test_gender_without_textures(self, tmp_path):
        with pytest.raises(ConfigError):
            load_scene_config(write_config(tmp_path, models={"female": "a", "male": "b"}))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "scene.json"
        path.write_text("{")
        with pytest.raises(ConfigError):
            load_scene_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ResourceError):
            load_scene_config(tmp_path / "scene.json")

    def test_ranges_must_be_ordered(self):
        with pytest.raises(ValidationError):
            AvatarPlacement(depth_range=(4.0, 3.0))

    def test_supersample_bounds(self):
        with pytest.raises(ValidationError):
            SceneConfig(**MINIMAL, supersample=5)


class TestRunConfig:
    """Test CLI overrides."""

    def test_apply(self, tmp_path):
        scene = load_scene_config(write_config(tmp_path))
        run = RunConfig(command="generate", seed=3, workers=4, no_occluders=True, harmonize_lambda=0.2,
                        occlusion_aware_labels=False, supersample=2)
        updated = run.apply(scene)
        assert (updated.master_seed, updated.workers, updated.supersample) == (3, 4, 2)
        assert not updated.occluders_enabled
        assert not updated.occlusion_aware_labels
        assert updated.harmonize_lambda == 0.2
        assert scene.master_seed == 0

    def test_frame_indices(self, tmp_path):
        scene = load_scene_config(write_config(tmp_path, num_frames=4))
        assert list(RunConfig(command="generate").frame_indices(scene)) == [0, 1, 2, 3]
        assert list(RunConfig(command="generate", frames=(1, 3)).frame_indices(scene)) == [1, 2]

    def test_empty_range(self):
        with pytest.raises(ValidationError):
            RunConfig(command="generate", frames=(3, 3))

    def test_workers_positive(self):
        with pytest.raises(ValidationError):
            RunConfig(command="generate", workers=0)


class TestMetricsConfig:
    def test_default_thresholds(self):
        assert MetricsConfig().iou_thresholds == [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95]
        assert MetricsConfig().kappa == 0.255

    def test_thresholds_increasing(self):
        with pytest.raises(ValidationError):
            MetricsConfig(iou_thresholds=[0.7, 0.5])
        with pytest.raises(ValidationError):
            MetricsConfig(iou_thresholds=[])

    def test_kappa_positive(self):
        with pytest.raises(ValidationError):
            MetricsConfig(kappa=0.0)
