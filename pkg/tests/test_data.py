"""Data ingestion, preprocessing, and toy-dataset tests.

The preprocessing oracle reimplements center-crop plus bilinear resize
with scalar loops so the tensor implementation is checked against an
independent computation, not against itself.
"""

import io
import math

import numpy as np
import pytest
import torch

from clsgan.config import DEFAULT_CELEBA_ATTRIBUTES
from clsgan import data as d


# ---------------------------------------------------------------------------
# oracles


def crop_resize_oracle(arr_hwc, crop, out_size):
    """Scalar-loop center crop + bilinear resize + [-1,1] scaling.

    Bilinear sampling uses half-pixel centers with source coordinates
    clamped at zero, matching the standard no-antialias convention.
    """
    h, w, _ = arr_hwc.shape
    top = (h - crop) // 2
    left = (w - crop) // 2
    cropped = arr_hwc[top : top + crop, left : left + crop, :].astype(np.float64)

    scale = crop / out_size
    out = np.zeros((3, out_size, out_size), dtype=np.float64)
    for c in range(3):
        for oy in range(out_size):
            sy = max(0.0, (oy + 0.5) * scale - 0.5)
            y0 = int(math.floor(sy))
            y1 = min(y0 + 1, crop - 1)
            fy = sy - y0
            for ox in range(out_size):
                sx = max(0.0, (ox + 0.5) * scale - 0.5)
                x0 = int(math.floor(sx))
                x1 = min(x0 + 1, crop - 1)
                fx = sx - x0
                val = (
                    cropped[y0, x0, c] * (1 - fy) * (1 - fx)
                    + cropped[y0, x1, c] * (1 - fy) * fx
                    + cropped[y1, x0, c] * fy * (1 - fx)
                    + cropped[y1, x1, c] * fy * fx
                )
                out[c, oy, ox] = val
    return out / 127.5 - 1.0


def annotation_text(names, rows):
    lines = [str(len(rows)), " ".join(names)]
    for fname, vals in rows:
        lines.append(fname + " " + " ".join(str(v) for v in vals))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# annotation parsing


class TestParseAnnotations:
    def test_round_trip(self):
        text = annotation_text(
            ["Bangs", "Male"], [("a.jpg", [1, -1]), ("b.jpg", [-1, 1])]
        )
        table = d.parse_annotations(io.StringIO(text))
        assert table.attribute_names == ["Bangs", "Male"]
        assert len(table) == 2
        assert table.entries[0] == ("a.jpg", {"Bangs": 1, "Male": -1})

    def test_plus_prefixed_values(self):
        text = annotation_text(["A"], [("x.png", ["+1"])])
        table = d.parse_annotations(io.StringIO(text))
        assert table.entries[0][1]["A"] == 1

    def test_count_mismatch(self):
        text = "3\nA\nx.png 1\n"
        with pytest.raises(d.AnnotationFormatError, match="declares 3"):
            d.parse_annotations(io.StringIO(text))

    def test_bad_value_names_line(self):
        text = "1\nA B\nx.png 1 2\n"
        with pytest.raises(d.AnnotationFormatError, match="line 3"):
            d.parse_annotations(io.StringIO(text))

    def test_column_count_names_line(self):
        text = "2\nA B\nx.png 1 -1\ny.png 1\n"
        with pytest.raises(d.AnnotationFormatError, match="line 4"):
            d.parse_annotations(io.StringIO(text))

    def test_malformed_header(self):
        with pytest.raises(d.AnnotationFormatError, match="header"):
            d.parse_annotations(io.StringIO("not-a-count\nA\n"))

    def test_empty_stream(self):
        with pytest.raises(d.AnnotationFormatError):
            d.parse_annotations(io.StringIO(""))

    def test_duplicate_attribute_names(self):
        with pytest.raises(d.AnnotationFormatError, match="duplicate"):
            d.parse_annotations(io.StringIO("0\nA A\n"))


class TestSelectAttributes:
    def _table(self):
        names = ["Bald", "Male", "Mouth_Slightly_Open", "Young"]
        rows = [("a.jpg", [1, -1, 1, -1]), ("b.jpg", [-1, 1, -1, 1])]
        return d.parse_annotations(io.StringIO(annotation_text(names, rows)))

    def test_selection_order_and_mapping(self):
        table = self._table()
        pairs = d.select_attributes(table, ["Young", "Bald"])
        assert [p[0] for p in pairs] == ["a.jpg", "b.jpg"]
        assert pairs[0][1].tolist() == [0.0, 1.0]
        assert pairs[1][1].tolist() == [1.0, 0.0]
        assert pairs[0][1].dtype == torch.float32

    def test_aliases_resolve(self):
        table = self._table()
        assert d.resolve_attribute_name(table, "Gender") == "Male"
        assert d.resolve_attribute_name(table, "Mouth_Open") == "Mouth_Slightly_Open"
        assert d.resolve_attribute_name(table, "age") == "Young"

    def test_unknown_name(self):
        with pytest.raises(d.AttributeLookupError):
            d.select_attributes(self._table(), ["NoSuchThing"])

    def test_duplicate_request(self):
        with pytest.raises(d.AttributeLookupError, match="duplicate"):
            d.select_attributes(self._table(), ["Bald", "Bald"])

    def test_default_selection_is_the_editing_set(self):
        names = list(DEFAULT_CELEBA_ATTRIBUTES)
        rows = [("a.jpg", [1] * len(names))]
        table = d.parse_annotations(io.StringIO(annotation_text(names, rows)))
        pairs = d.select_attributes(table)
        assert pairs[0][1].shape == (13,)


# ---------------------------------------------------------------------------
# preprocessing


class TestPreprocess:
    def test_matches_scalar_oracle_celeba_geometry(self):
        rng = np.random.default_rng(0)
        arr = rng.integers(0, 256, size=(218, 178, 3), dtype=np.uint8)
        got = d.preprocess_image(arr, resolution=32).double().numpy()
        want = crop_resize_oracle(arr, 170, 32)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-6)

    def test_matches_scalar_oracle_other_sizes(self):
        rng = np.random.default_rng(1)
        for h, w, crop, res in [(50, 60, 40, 16), (41, 41, 41, 24)]:
            arr = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
            got = d.preprocess_image(arr, resolution=res, crop_size=crop)
            want = crop_resize_oracle(arr, crop, res)
            np.testing.assert_allclose(got.double().numpy(), want, atol=1e-6)

    def test_crop_offsets_floor(self):
        # 5x4 image, crop 2: offsets floor((5-2)/2)=1, floor((4-2)/2)=1
        arr = np.arange(5 * 4 * 3, dtype=np.uint8).reshape(5, 4, 3)
        got = d.preprocess_image(arr, resolution=2, crop_size=2)
        want = arr[1:3, 1:3, :].transpose(2, 0, 1) / 127.5 - 1.0
        np.testing.assert_allclose(got.double().numpy(), want, atol=1e-6)

    def test_too_small_raises(self):
        arr = np.zeros((100, 100, 3), dtype=np.uint8)
        with pytest.raises(d.DimensionError):
            d.preprocess_image(arr, resolution=64, crop_size=170)

    def test_output_range_and_shape(self):
        arr = np.zeros((218, 178, 3), dtype=np.uint8)
        out = d.preprocess_image(arr, resolution=128)
        assert out.shape == (3, 128, 128)
        assert torch.all(out == -1.0)
        arr255 = np.full((218, 178, 3), 255, dtype=np.uint8)
        out255 = d.preprocess_image(arr255, resolution=128)
        assert torch.allclose(out255, torch.ones_like(out255))

    def test_chw_input_accepted(self):
        rng = np.random.default_rng(2)
        hwc = rng.integers(0, 256, size=(44, 44, 3), dtype=np.uint8)
        chw = hwc.transpose(2, 0, 1)
        a = d.preprocess_image(hwc, resolution=16, crop_size=40)
        b = d.preprocess_image(chw, resolution=16, crop_size=40)
        assert torch.equal(a, b)

    def test_uint8_round_trip(self):
        rng = np.random.default_rng(3)
        arr = rng.integers(0, 256, size=(3, 20, 20), dtype=np.uint8)
        tensor = d.image_to_unit_range(arr)
        back = d.tensor_to_image_array(tensor)
        np.testing.assert_array_equal(back, arr.transpose(1, 2, 0))


# ---------------------------------------------------------------------------
# target sampling


class TestSampleTargets:
    def test_is_a_permutation(self, rng):
        labels = (torch.rand(16, 5, generator=rng) < 0.5).float()
        targets = d.sample_target_labels(labels, rng)
        assert targets.shape == labels.shape
        # same multiset of rows
        key = lambda t: sorted(map(tuple, t.tolist()))
        assert key(targets) == key(labels)

    def test_deterministic_under_seed(self):
        labels = torch.eye(8)
        g1 = torch.Generator().manual_seed(7)
        g2 = torch.Generator().manual_seed(7)
        assert torch.equal(
            d.sample_target_labels(labels, g1),
            d.sample_target_labels(labels, g2),
        )

    def test_empty_batch_rejected(self, rng):
        with pytest.raises(ValueError):
            d.sample_target_labels(torch.zeros(0, 3), rng)

    def test_bad_rank_rejected(self, rng):
        with pytest.raises(ValueError):
            d.sample_target_labels(torch.zeros(4), rng)


# ---------------------------------------------------------------------------
# toy dataset


def toy_threshold_classify(image: torch.Tensor) -> list[float]:
    """Hand-written pixel-threshold classifier for the 3 toy factors."""
    size = image.shape[1]
    frame = max(2, size // 16)
    unit = (image.double() + 1.0) / 2.0
    # background probe: above the disc, below the frame
    bg = unit[:, frame + 2 : frame + 4, size // 2 - 2 : size // 2 + 2].mean(dim=(1, 2))
    center = unit[:, size // 2 - 2 : size // 2 + 2, size // 2 - 2 : size // 2 + 2].mean(
        dim=(1, 2)
    )
    frame_px = unit[:, : frame - 1, size // 2 - 2 : size // 2 + 2].mean(dim=(1, 2))
    bright = 1.0 if bg[1] > 0.5 else 0.0
    disc = 1.0 if abs(center[1] - bg[1]) > 0.05 else 0.0
    red = 1.0 if frame_px[0] > frame_px[2] else 0.0
    return [bright, disc, red]


class TestToyDataset:
    def test_deterministic(self):
        cfg = d.ToyConfig(train_count=6, test_count=2)
        g1 = torch.Generator().manual_seed(3)
        g2 = torch.Generator().manual_seed(3)
        s1 = d.make_toy_dataset(cfg, g1)
        s2 = d.make_toy_dataset(cfg, g2)
        for a, b in zip(s1.train + s1.test, s2.train + s2.test):
            assert torch.equal(a.image, b.image)
            assert torch.equal(a.label, b.label)
            assert a.name == b.name

    def test_threshold_oracle_recovers_labels(self, rng):
        cfg = d.ToyConfig(train_count=40, test_count=0)
        split = d.make_toy_dataset(cfg, rng)
        for item in split.train:
            assert toy_threshold_classify(item.image) == item.label.tolist()

    def test_renderer_label_example(self):
        # bright background, accent-coloured (blue) disc present
        img = d.render_toy_image([1.0, 1.0, 0.0], size=64, noise_std=0.0)
        size = 64
        unit = (img.double() + 1.0) / 2.0
        bg = unit[:, 6, 32]
        center = unit[:, 32, 32]
        assert bg[1] > 0.7  # bright
        assert center[2] > center[0]  # blue accent disc
        assert abs(center[1] - bg[1]) > 0.3  # disc differs from background

    def test_renderer_rejects_bad_length(self):
        with pytest.raises(d.ConfigErrorForToy):
            d.render_toy_image([0.0] * 9)

    def test_value_range(self, rng):
        img = d.render_toy_image([1, 1, 1], noise_std=0.05, generator=rng)
        assert img.min() >= -1.0 and img.max() <= 1.0
        assert img.dtype == torch.float32

    def test_continuous_factors_move_pixels_monotonically(self):
        values = [0.0, 0.25, 0.5, 0.75, 1.0]
        brightness = []
        for v in values:
            img = d.render_toy_image([v, 0.0, 0.0], noise_std=0.0)
            unit = (img.double() + 1.0) / 2.0
            brightness.append(float(unit[1, 6, 32]))
        assert brightness == sorted(brightness)
        assert brightness[-1] - brightness[0] > 0.4


class TestDatasetDirIO:
    def test_save_load_round_trip(self, tmp_path, rng):
        cfg = d.ToyConfig(train_count=6, test_count=3)
        split = d.make_toy_dataset(cfg, rng)
        root = d.save_dataset_dir(split, tmp_path / "ds")
        loaded = d.load_dataset_dir(root, resolution=64, test_count=3)
        assert len(loaded.train) == 6 and len(loaded.test) == 3
        for orig, back in zip(split.train + split.test, loaded.train + loaded.test):
            assert torch.equal(orig.label, back.label)
            # uint8 quantization bounds the error by half a level
            assert (orig.image - back.image).abs().max() <= (1.0 / 127.5)

    def test_split_takes_trailing_rows(self, tmp_path, rng):
        cfg = d.ToyConfig(train_count=5, test_count=2)
        split = d.make_toy_dataset(cfg, rng)
        root = d.save_dataset_dir(split, tmp_path / "ds")
        loaded = d.load_dataset_dir(root, resolution=64, test_count=4)
        assert [i.name for i in loaded.test] == [
            f"toy_{k:05d}.png" for k in range(3, 7)
        ]

    def test_test_count_too_large(self, tmp_path, rng):
        cfg = d.ToyConfig(train_count=3, test_count=1)
        root = d.save_dataset_dir(d.make_toy_dataset(cfg, rng), tmp_path / "ds")
        with pytest.raises(ValueError, match="test_count"):
            d.load_dataset_dir(root, resolution=64, test_count=10)

    def test_load_image_file_branches(self, tmp_path, rng):
        from PIL import Image

        # exact size: no crop
        img = d.render_toy_image([1, 0, 1], size=64, noise_std=0.0)
        p1 = tmp_path / "exact.png"
        Image.fromarray(d.tensor_to_image_array(img)).save(p1)
        loaded = d.load_image_file(p1, 64)
        assert (loaded - img).abs().max() <= (1.0 / 127.5)

        # large: standard crop path
        big = np.random.default_rng(0).integers(
            0, 256, size=(218, 178, 3), dtype=np.uint8
        )
        p2 = tmp_path / "big.png"
        Image.fromarray(big).save(p2)
        got = d.load_image_file(p2, 32)
        want = d.preprocess_image(big, resolution=32)
        assert torch.equal(got, want)

        # mid-size: crop to min side
        mid = np.random.default_rng(1).integers(
            0, 256, size=(100, 90, 3), dtype=np.uint8
        )
        p3 = tmp_path / "mid.png"
        Image.fromarray(mid).save(p3)
        got = d.load_image_file(p3, 64)
        want = d.preprocess_image(mid, resolution=64, crop_size=90)
        assert torch.equal(got, want)

        # too small
        small = np.zeros((20, 20, 3), dtype=np.uint8)
        p4 = tmp_path / "small.png"
        Image.fromarray(small).save(p4)
        with pytest.raises(d.DimensionError):
            d.load_image_file(p4, 64)

    def test_iterate_batches_keeps_tail(self):
        images = torch.arange(10).view(10, 1, 1, 1).float()
        labels = torch.arange(10).view(10, 1).float()
        sizes = [b[0].shape[0] for b in d.iterate_batches(images, labels, 4)]
        assert sizes == [4, 4, 2]

    def test_iterate_batches_order(self):
        images = torch.arange(6).view(6, 1, 1, 1).float()
        labels = torch.arange(6).view(6, 1).float()
        order = torch.tensor([5, 3, 1, 0, 2, 4])
        batches = list(d.iterate_batches(images, labels, 3, order))
        assert batches[0][1].flatten().tolist() == [5.0, 3.0, 1.0]
        assert batches[1][1].flatten().tolist() == [0.0, 2.0, 4.0]
