"""Bundle writing: schema fidelity, self-checks, and atomicity."""

from __future__ import annotations

import copy
import json
import os

import numpy as np
import pytest

pytest.importorskip("attnxtract.hooks")

from attnxtract import ClassAnnotation, write_bundle
from attnxtract.errors import CaptureError
from attnxtract.tokenizer import tokenize
from attnxtract.writer import manifest_doc

# The session capture ran over a 4-token text sequence, so the prompt
# here must tokenize to exactly 4 entries for the shapes to agree.
TOKENS = tokenize(
    "black cat",
    [ClassAnnotation("black cat", 1)],
    special_token_rule="sos",
    pad_to_length=4,
)
CLASSES = [
    ClassAnnotation("black cat", 1),
    ClassAnnotation("mat", 2, is_background=True),
]


def write(tmp_path, captures, name="bundle", tokens=TOKENS):
    return write_bundle(
        tmp_path / name,
        model_id="test-model",
        timestep=42,
        image_height=96,
        image_width=80,
        tokens=tokens,
        classes=CLASSES,
        captures=captures,
    )


@pytest.fixture()
def captures(capture_run):
    """A mutable deep copy of the session-scoped capture set."""
    return copy.deepcopy(capture_run.captures)


class TestLayout:
    def test_file_set_is_exactly_the_manifest_contents(self, tmp_path, captures):
        out = write(tmp_path, captures)
        expected = {"manifest.json", "feat.bin"}
        for i in range(len(captures.cross)):
            expected |= {f"cross_{i}_attn.bin", f"cross_{i}_out.bin"}
        expected |= {f"self_{i}.bin" for i in range(len(captures.selfs))}
        assert {p.name for p in out.iterdir()} == expected

    def test_manifest_is_canonical_json(self, tmp_path, captures):
        out = write(tmp_path, captures)
        text = (out / "manifest.json").read_text()
        assert text == json.dumps(json.loads(text), indent=2, sort_keys=True) + "\n"

    def test_tensor_files_hold_exact_float32_payloads(self, tmp_path, captures):
        out = write(tmp_path, captures)
        doc = json.loads((out / "manifest.json").read_text())
        first = doc["cross_layers"][0]
        raw = np.fromfile(out / first["attn_file"], dtype="<f4")
        shape = (
            first["heads"],
            first["height"] * first["width"],
            first["token_count"],
        )
        assert raw.size == np.prod(shape)
        np.testing.assert_array_equal(raw.reshape(shape), captures.cross[0].attn)

    def test_every_tensor_file_size_matches_its_shape(self, tmp_path, captures):
        out = write(tmp_path, captures)
        doc = json.loads((out / "manifest.json").read_text())
        for i, layer in enumerate(doc["cross_layers"]):
            pixels = layer["height"] * layer["width"]
            assert (out / layer["attn_file"]).stat().st_size == 4 * layer[
                "heads"
            ] * pixels * layer["token_count"]
            assert (out / layer["head_out_file"]).stat().st_size == 4 * layer[
                "heads"
            ] * pixels * layer["head_dim"]
        for layer in doc["self_layers"]:
            pixels = layer["height"] * layer["width"]
            assert (out / layer["map_file"]).stat().st_size == 4 * pixels * pixels
        feat = doc["dense_feature"]
        assert (out / feat["file"]).stat().st_size == 4 * feat["height"] * feat[
            "width"
        ] * feat["channels"]


class TestManifestContent:
    def test_top_level_records(self, tmp_path, captures):
        doc = json.loads((write(tmp_path, captures) / "manifest.json").read_text())
        assert doc["manifest_version"] == 1
        assert doc["model_id"] == "test-model"
        assert doc["timestep"] == 42
        assert doc["image_size"] == {"height": 96, "width": 80}

    def test_token_records_carry_class_ids_only_on_content(self, tmp_path, captures):
        doc = json.loads((write(tmp_path, captures) / "manifest.json").read_text())
        for record, token in zip(doc["tokens"], TOKENS):
            assert record["index"] == token.index
            assert record["text"] == token.text
            assert record["category"] == token.category
            assert ("class_id" in record) == (token.category == "content")

    def test_class_records_mirror_annotations(self, tmp_path, captures):
        doc = json.loads((write(tmp_path, captures) / "manifest.json").read_text())
        assert doc["classes"] == [
            {"class_id": 1, "name": "black cat", "is_background": False},
            {"class_id": 2, "name": "mat", "is_background": True},
        ]

    def test_layer_records_name_their_modules(self, capture_run, captures):
        doc = manifest_doc(
            model_id="m",
            timestep=1,
            image_height=8,
            image_width=8,
            tokens=TOKENS,
            classes=CLASSES,
            captures=captures,
        )
        assert [c["name"] for c in doc["cross_layers"]] == list(
            capture_run.profile.cross_attention_layers
        )
        assert [s["name"] for s in doc["self_layers"]] == list(
            capture_run.profile.self_attention_layers
        )


class TestSelfChecks:
    def test_non_stochastic_attention_is_refused(self, tmp_path, captures):
        captures.cross[2].attn[1, 3, :] *= 2.0
        with pytest.raises(CaptureError, match="sum 1"):
            write(tmp_path, captures)

    def test_non_stochastic_self_map_is_refused(self, tmp_path, captures):
        captures.selfs[0].attn_mean[0, :] += 0.5
        with pytest.raises(CaptureError, match="sum 1"):
            write(tmp_path, captures)

    def test_non_finite_values_are_refused(self, tmp_path, captures):
        captures.feature.values[0, 0] = np.nan
        with pytest.raises(CaptureError, match="finite"):
            write(tmp_path, captures)

    def test_token_count_mismatch_is_refused(self, tmp_path, captures):
        with pytest.raises(CaptureError, match="prompt tokens"):
            write(tmp_path, captures, tokens=TOKENS[:-1])

    def test_truncated_capture_is_refused(self, tmp_path, captures):
        captures.cross[0].attn = captures.cross[0].attn[:, :-1, :]
        with pytest.raises(CaptureError, match="attention shape"):
            write(tmp_path, captures)


class TestAtomicity:
    def test_existing_destination_is_never_touched(self, tmp_path, captures):
        target = tmp_path / "bundle"
        target.mkdir()
        sentinel = target / "keep.txt"
        sentinel.write_text("precious")
        with pytest.raises(FileExistsError):
            write(tmp_path, captures)
        assert sentinel.read_text() == "precious"

    def test_success_leaves_no_temp_directories(self, tmp_path, captures):
        write(tmp_path, captures)
        assert {p.name for p in tmp_path.iterdir()} == {"bundle"}

    def test_failed_write_leaves_nothing_behind(self, tmp_path, captures, monkeypatch):
        def explode(src, dst):
            raise OSError("simulated rename failure")

        monkeypatch.setattr(os, "replace", explode)
        with pytest.raises(OSError, match="simulated"):
            write(tmp_path, captures)
        assert list(tmp_path.iterdir()) == []

    def test_validation_failure_creates_no_files(self, tmp_path, captures):
        captures.cross[0].attn = captures.cross[0].attn * 3.0
        with pytest.raises(CaptureError):
            write(tmp_path, captures)
        assert list(tmp_path.iterdir()) == []
