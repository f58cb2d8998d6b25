"""Tests for the corrgen command line: exit codes, JSON output and reports."""

import argparse
import json

import pytest

import cli
from atlas import UvAtlas, load_atlas, save_atlas


@pytest.fixture(scope="module")
def toy_root(tmp_path_factory):
    """Toy resources with three frames, written through the CLI."""
    root = tmp_path_factory.mktemp("cli_toy")
    assert cli.main(["init-toy", str(root), "--frames", "3", "--seed", "5"]) == 0
    return root


@pytest.fixture(scope="module")
def generated(toy_root, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_out")
    code = cli.main(["generate", "--config", str(toy_root / "scene.json"), "--out", str(out), "--no-progress"])
    assert code == 0
    return out


def output_json(capsys):
    return json.loads(capsys.readouterr().out)


class TestParseFrameRange:
    def test_half_open(self):
        assert cli.parse_frame_range("0..10") == (0, 10)
        assert list(range(*cli.parse_frame_range("3..5"))) == [3, 4]

    def test_rejects_garbage(self):
        for text in ("10", "a..b", "1-3"):
            with pytest.raises(argparse.ArgumentTypeError):
                cli.parse_frame_range(text)

    def test_parse_bool(self):
        assert cli.parse_bool("True") is True
        assert cli.parse_bool("off") is False
        with pytest.raises(argparse.ArgumentTypeError):
            cli.parse_bool("maybe")


class TestInitToy:
    def test_writes_config(self, tmp_path, capsys):
        assert cli.main(["init-toy", str(tmp_path), "--frames", "2"]) == 0
        doc = output_json(capsys)
        assert doc["config"].endswith("scene.json")
        assert (tmp_path / "scene.json").is_file()
        assert (tmp_path / "atlas").is_dir()


class TestGenerate:
    """Test the generate subcommand."""

    def test_frame_subset(self, toy_root, tmp_path, capsys):
        code = cli.main(["generate", "--config", str(toy_root / "scene.json"), "--out", str(tmp_path),
                         "--frames", "0..2", "--no-progress"])
        assert code == 0
        doc = output_json(capsys)
        assert doc["generated"] + len(doc["skipped"]) == 2
        assert (tmp_path / "annotations.json").is_file()
        assert (tmp_path / "manifest.json").is_file()

    def test_bad_frames_is_usage_error(self, toy_root, tmp_path):
        code = cli.main(["generate", "--config", str(toy_root / "scene.json"), "--out", str(tmp_path),
                         "--frames", "two"])
        assert code == 2

    def test_empty_frame_range(self, toy_root, tmp_path, capsys):
        code = cli.main(["generate", "--config", str(toy_root / "scene.json"), "--out", str(tmp_path / "o"),
                         "--frames", "2..1"])
        assert code == 2
        assert output_json(capsys)["error"] == "usage"

    def test_frames_beyond_config(self, toy_root, tmp_path, capsys):
        code = cli.main(["generate", "--config", str(toy_root / "scene.json"), "--out", str(tmp_path / "o"),
                         "--frames", "0..99"])
        assert code == 5
        assert output_json(capsys)["error"] == "frame_range"
        assert not (tmp_path / "o").exists()

    def test_missing_config(self, tmp_path, capsys):
        code = cli.main(["generate", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path / "o")])
        assert code == 3
        doc = output_json(capsys)
        assert doc["error"] == "missing_resource"
        assert "absent.json" in doc["message"]

    def test_invalid_config(self, tmp_path, capsys):
        path = tmp_path / "scene.json"
        path.write_text(json.dumps({"atlas": "a"}))
        assert cli.main(["generate", "--config", str(path), "--out", str(tmp_path / "o")]) == 4
        assert output_json(capsys)["error"] == "invalid_config"

    def test_seed_override_changes_manifest(self, toy_root, generated, tmp_path):
        code = cli.main(["generate", "--config", str(toy_root / "scene.json"), "--out", str(tmp_path),
                         "--seed", "99", "--no-progress"])
        assert code == 0
        reseeded = json.loads((tmp_path / "manifest.json").read_text())
        original = json.loads((generated / "manifest.json").read_text())
        assert reseeded["config"]["master_seed"] == 99
        assert reseeded["files"] != original["files"]


class TestPreview:
    def test_writes_png(self, toy_root, tmp_path, capsys):
        out = tmp_path / "preview.png"
        assert cli.main(["preview", "--config", str(toy_root / "scene.json"), "--frame", "1",
                         "--out", str(out)]) == 0
        assert out.is_file()
        assert output_json(capsys)["frame"] == 1

    def test_frame_out_of_range(self, toy_root, tmp_path):
        assert cli.main(["preview", "--config", str(toy_root / "scene.json"), "--frame", "3",
                         "--out", str(tmp_path / "p.png")]) == 5


class TestEvaluate:
    """Test the evaluate subcommand."""

    def test_writes_report(self, toy_root, generated, tmp_path, capsys):
        """The table goes to stdout and both report files land in --out."""
        gt = str(generated / "annotations.json")
        code = cli.main(["evaluate", gt, gt, "--config", str(toy_root / "scene.json"), "--out", str(tmp_path)])
        assert code == 0
        assert capsys.readouterr().out.splitlines()[0].split()[0] == "Task"
        report = json.loads((tmp_path / "report.json").read_text())
        assert sorted(report["tasks"]) == ["bbox", "gps", "gpsm", "segm"]
        assert (tmp_path / "report.txt").read_text().splitlines()[0].split()[0] == "Task"

    def test_model_and_atlas_flags(self, toy_root, generated, capsys):
        gt = str(generated / "annotations.json")
        code = cli.main(["evaluate", gt, gt, "--model", str(toy_root / "models" / "male"),
                         "--atlas", str(toy_root / "atlas"), "--workers", "2"])
        assert code == 0

    def test_negative_kappa(self, toy_root, generated, capsys):
        gt = str(generated / "annotations.json")
        code = cli.main(["evaluate", gt, gt, "--config", str(toy_root / "scene.json"), "--kappa", "-1"])
        assert code == 2
        assert "--kappa" in output_json(capsys)["message"]

    def test_needs_surface(self, generated, capsys):
        gt = str(generated / "annotations.json")
        assert cli.main(["evaluate", gt, gt]) == 2

    def test_missing_predictions(self, toy_root, generated, tmp_path, capsys):
        gt = str(generated / "annotations.json")
        code = cli.main(["evaluate", gt, str(tmp_path / "absent.json"), "--config", str(toy_root / "scene.json")])
        assert code == 3


class TestValidateModel:
    """Test container and atlas checks."""

    def test_toy_passes(self, toy_root, capsys):
        code = cli.main(["validate-model", str(toy_root / "models" / "female"), str(toy_root / "atlas")])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines and all(line.startswith("PASS") for line in lines)

    def test_uncovered_face(self, toy_root, tmp_path, capsys):
        atlas = load_atlas(toy_root / "atlas")
        short = UvAtlas(faces=atlas.faces[:-1], face_chart=atlas.face_chart[:-1], corner_uv=atlas.corner_uv[:-1],
                        chart_to_part=atlas.chart_to_part, part_names=atlas.part_names)
        save_atlas(short, tmp_path / "atlas")
        code = cli.main(["validate-model", str(toy_root / "models" / "female"), str(tmp_path / "atlas")])
        assert code == 4
        out = capsys.readouterr().out
        assert f"face {atlas.num_faces - 1} has no atlas triangle" in out
        assert "FAIL" in out

    def test_missing_model(self, toy_root, tmp_path, capsys):
        assert cli.main(["validate-model", str(tmp_path / "nothing"), str(toy_root / "atlas")]) == 4
        assert capsys.readouterr().out.startswith("FAIL")


class TestPackage:
    def test_missing_post_dir(self, generated, tmp_path, capsys):
        code = cli.main(["package", "--out", str(generated), "--post-rgb-dir", str(tmp_path / "absent")])
        assert code == 3
        assert output_json(capsys)["error"] == "missing_resource"

    def test_nothing_to_replace(self, generated, tmp_path, capsys):
        post = tmp_path / "post"
        post.mkdir()
        assert cli.main(["package", "--out", str(generated), "--post-rgb-dir", str(post)]) == 0
        assert output_json(capsys)["replaced"] == []
