"""The extract() entry point and image loading."""

from __future__ import annotations

import numpy as np
import pytest

pytest.importorskip("attnxtract.hooks")

from PIL import Image

from attnxtract import ClassAnnotation, extract, load_image
from attnxtract.errors import ImageError, PromptError, UnknownProfileError


class TestLoadImage:
    def test_maps_pixels_into_unit_range(self, image_factory):
        tensor, h, w = load_image(image_factory(64, 48), (64, 48))
        assert tensor.shape == (1, 3, 64, 48)
        assert (h, w) == (64, 48)
        assert float(tensor.min()) >= -1.0
        assert float(tensor.max()) <= 1.0

    def test_extreme_values_hit_the_range_ends(self):
        array = np.zeros((4, 4, 3), dtype=np.uint8)
        array[0, 0] = 255
        tensor, _, _ = load_image(Image.fromarray(array), (4, 4))
        assert float(tensor.max()) == pytest.approx(1.0)
        assert float(tensor.min()) == pytest.approx(-1.0)

    def test_resizes_but_reports_source_dimensions(self, image_factory):
        tensor, h, w = load_image(image_factory(200, 100), (64, 64))
        assert tensor.shape == (1, 3, 64, 64)
        assert (h, w) == (200, 100)

    def test_grayscale_becomes_three_channels(self):
        gray = Image.new("L", (32, 32), 128)
        tensor, _, _ = load_image(gray, (32, 32))
        assert tensor.shape == (1, 3, 32, 32)

    def test_reads_from_a_file_path(self, tmp_path, image_factory):
        path = tmp_path / "img.png"
        image_factory(40, 40).save(path)
        tensor, h, w = load_image(path, (40, 40))
        assert tensor.shape == (1, 3, 40, 40)
        assert (h, w) == (40, 40)

    def test_missing_file_is_an_image_error(self, tmp_path):
        with pytest.raises(ImageError, match="not found"):
            load_image(tmp_path / "ghost.png", (32, 32))

    def test_unreadable_file_is_an_image_error(self, tmp_path):
        path = tmp_path / "fake.png"
        path.write_text("this is not an image")
        with pytest.raises(ImageError, match="cannot read"):
            load_image(path, (32, 32))


class TestExtractErrors:
    def test_unknown_profile(self, tmp_path, image_factory):
        with pytest.raises(UnknownProfileError, match="unknown profile"):
            extract(
                image_factory(32, 32),
                "a cat",
                [ClassAnnotation("cat", 1)],
                "no-such-profile",
                tmp_path / "b",
            )

    def test_prompt_annotation_mismatch(self, tmp_path, image_factory):
        with pytest.raises(PromptError, match="does not occur"):
            extract(
                image_factory(32, 32),
                "a dog",
                [ClassAnnotation("cat", 1)],
                "sd15-small",
                tmp_path / "b",
            )

    def test_failures_leave_no_output_directory(self, tmp_path, image_factory):
        with pytest.raises(PromptError):
            extract(
                image_factory(32, 32),
                "a dog",
                [ClassAnnotation("cat", 1)],
                "sd15-small",
                tmp_path / "b",
            )
        assert not (tmp_path / "b").exists()


class TestExtractOutput:
    def test_returns_the_bundle_path(self, small_bundle):
        assert (small_bundle / "manifest.json").is_file()

    def test_profile_object_and_name_are_equivalent(
        self, tmp_path, image_factory, small_inputs, small_bundle
    ):
        from attnxtract import get_profile

        prompt, annotations = small_inputs
        by_object = extract(
            image_factory(128, 128),
            prompt,
            annotations,
            get_profile("sd15-small"),
            tmp_path / "by_object",
            seed=11,
        )
        assert (
            (by_object / "manifest.json").read_bytes()
            == (small_bundle / "manifest.json").read_bytes()
        )
