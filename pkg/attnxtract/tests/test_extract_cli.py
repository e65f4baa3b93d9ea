"""Extractor command line: annotation parsing, subcommands, exit codes."""

from __future__ import annotations

import json

import pytest

pytest.importorskip("attnxtract.hooks")

from attnxtract.cli import main, parse_annotation


def run(capsys, *argv: str) -> tuple[int, str, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestAnnotationParsing:
    def test_phrase_and_id(self):
        ann = parse_annotation("black cat=3", frozenset())
        assert ann.phrase == "black cat"
        assert ann.class_id == 3
        assert ann.is_background is False

    def test_background_membership_sets_flag(self):
        ann = parse_annotation("sky=2", frozenset({2}))
        assert ann.is_background is True

    def test_surrounding_whitespace_is_trimmed(self):
        assert parse_annotation(" sky =2", frozenset()).phrase == "sky"

    @pytest.mark.parametrize("raw", ["cat", "=3", "cat=", "cat=three"])
    def test_malformed_values_are_rejected(self, raw):
        with pytest.raises(ValueError, match="annotation"):
            parse_annotation(raw, frozenset())


class TestProfilesCommand:
    def test_lists_documented_profiles_as_json(self, capsys):
        code, out, err = run(capsys, "profiles")
        assert code == 0 and err == ""
        doc = json.loads(out)
        assert doc["sd15"]["timestep"] == 100
        assert doc["sd15"]["image_size"] == [512, 512]
        assert doc["sd15"]["cross_attention_layers"] == 11


class TestExtractCommand:
    def test_writes_a_bundle_quietly(self, capsys, tmp_path, image_factory):
        image = tmp_path / "img.png"
        image_factory(128, 128).save(image)
        out = tmp_path / "bundle"
        code, stdout, stderr = run(
            capsys,
            "extract",
            "--image", str(image),
            "--prompt", "a cat by a mat",
            "--content", "cat=1",
            "--content", "mat=2",
            "--background", "2",
            "--profile", "sd15-small",
            "--out", str(out),
            "--seed", "4",
        )
        assert (code, stdout, stderr) == (0, "", "")
        doc = json.loads((out / "manifest.json").read_text())
        assert doc["classes"] == [
            {"class_id": 1, "name": "cat", "is_background": False},
            {"class_id": 2, "name": "mat", "is_background": True},
        ]

    def test_unknown_profile_exits_one(self, capsys, tmp_path, image_factory):
        image = tmp_path / "img.png"
        image_factory(32, 32).save(image)
        code, _, err = run(
            capsys,
            "extract",
            "--image", str(image),
            "--prompt", "a cat",
            "--content", "cat=1",
            "--profile", "sd99",
            "--out", str(tmp_path / "b"),
        )
        assert code == 1
        assert err.startswith("error:")
        assert "sd15" in err  # the available profiles are listed

    def test_missing_image_exits_one(self, capsys, tmp_path):
        code, _, err = run(
            capsys,
            "extract",
            "--image", str(tmp_path / "nope.png"),
            "--prompt", "a cat",
            "--content", "cat=1",
            "--profile", "sd15-small",
            "--out", str(tmp_path / "b"),
        )
        assert code == 1
        assert "not found" in err

    def test_bad_annotation_exits_one(self, capsys, tmp_path, image_factory):
        image = tmp_path / "img.png"
        image_factory(32, 32).save(image)
        code, _, err = run(
            capsys,
            "extract",
            "--image", str(image),
            "--prompt", "a cat",
            "--content", "cat",
            "--profile", "sd15-small",
            "--out", str(tmp_path / "b"),
        )
        assert code == 1
        assert "phrase=class_id" in err

    def test_stray_background_id_exits_one(self, capsys, tmp_path, image_factory):
        image = tmp_path / "img.png"
        image_factory(32, 32).save(image)
        code, _, err = run(
            capsys,
            "extract",
            "--image", str(image),
            "--prompt", "a cat",
            "--content", "cat=1",
            "--background", "9",
            "--profile", "sd15-small",
            "--out", str(tmp_path / "b"),
        )
        assert code == 1
        assert "match no --content" in err

    def test_absent_phrase_exits_one(self, capsys, tmp_path, image_factory):
        image = tmp_path / "img.png"
        image_factory(32, 32).save(image)
        code, _, err = run(
            capsys,
            "extract",
            "--image", str(image),
            "--prompt", "a dog",
            "--content", "cat=1",
            "--profile", "sd15-small",
            "--out", str(tmp_path / "b"),
        )
        assert code == 1
        assert "does not occur" in err

    def test_existing_output_directory_exits_two(
        self, capsys, tmp_path, image_factory
    ):
        image = tmp_path / "img.png"
        image_factory(32, 32).save(image)
        out = tmp_path / "b"
        out.mkdir()
        code, _, err = run(
            capsys,
            "extract",
            "--image", str(image),
            "--prompt", "a cat",
            "--content", "cat=1",
            "--profile", "sd15-small",
            "--out", str(out),
        )
        assert code == 2
        assert err.startswith("i/o error:")
