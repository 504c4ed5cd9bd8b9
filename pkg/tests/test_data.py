import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuseseg.dataset import load_dataset, save_dataset
from fuseseg.errors import DataFormatError, GenerationError
from fuseseg.ppm import read_ppm, read_pgm, write_pgm, write_ppm
from fuseseg.rle import rle_decode, rle_encode
from fuseseg.synth import (DIFFICULTIES, PALETTE, SHAPES, SIZE_FRACTIONS,
                           generate_dataset, generate_sample, matching_objects,
                           rasterize)

SPATIAL_WORDS = {"on", "the", "left", "right", "above"}


def resolve_expression(expression, scene):
    """Independent string-level evaluator for the grammar's semantics."""
    words = expression.split()
    half = scene.canvas_size / 2.0
    if "above" in words:
        shape_a, color_l, shape_l = words[0], words[3], words[4]
        assert words[1:3] == ["above", "the"]
        landmarks = [o for o in scene.objects
                     if o.color == color_l and o.shape == shape_l]
        if len(landmarks) != 1:
            return []
        l = landmarks[0]
        return [o for o in scene.objects
                if o.shape == shape_a and o.center[1] < l.center[1]]
    if "on" in words:
        color, shape, side = words[0], words[1], words[4]
        assert words[2:4] == ["on", "the"]

        def on_side(o):
            return o.center[0] < half if side == "left" else o.center[0] > half

        return [o for o in scene.objects
                if o.color == color and o.shape == shape and on_side(o)]
    if len(words) == 2:
        color, shape = words
        return [o for o in scene.objects if o.color == color and o.shape == shape]
    size, color, shape = words
    return [o for o in scene.objects
            if o.size == size and o.color == color and o.shape == shape]


# --- RLE ---

def test_rle_encode_hand_example():
    assert rle_encode(np.array([0, 0, 1, 1, 1, 0])) == [2, 3, 1]


def test_rle_encode_all_zeros():
    assert rle_encode(np.zeros(6, dtype=int)) == [6]


def test_rle_encode_all_ones_leads_with_zero_count():
    assert rle_encode(np.ones(6, dtype=int)) == [0, 6]


def test_rle_decode_fixtures():
    assert np.array_equal(rle_decode([6], (2, 3)), np.zeros((2, 3), dtype=bool))
    assert np.array_equal(rle_decode([0, 6], (2, 3)), np.ones((2, 3), dtype=bool))


def test_rle_is_column_major():
    mask = np.array([[1, 0], [0, 1]])
    # column-major scan: 1,0,0,1 -> [0,1,2,1]
    assert rle_encode(mask) == [0, 1, 2, 1]
    assert np.array_equal(rle_decode([0, 1, 2, 1], (2, 2)), mask.astype(bool))


def test_rle_sum_mismatch_errors():
    with pytest.raises(DataFormatError):
        rle_decode([3, 2], (2, 3))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2 ** 32 - 1))
def test_rle_roundtrip_property(h, w, seed):
    mask = np.random.default_rng(seed).random((h, w)) > 0.5
    assert np.array_equal(rle_decode(rle_encode(mask), (h, w)), mask)


# --- NetPBM ---

def test_ppm_roundtrip_within_quantization(tmp_path):
    rng = np.random.default_rng(0)
    image = rng.random((10, 12, 3))
    path = tmp_path / "img.ppm"
    write_ppm(path, image)
    back = read_ppm(path)
    assert back.shape == image.shape
    assert np.max(np.abs(back - image)) <= 1.0 / 255.0


def test_ppm_rejects_truncated_file(tmp_path):
    path = tmp_path / "bad.ppm"
    path.write_bytes(b"P6\n4 4\n255\n\x00\x00")
    with pytest.raises(DataFormatError):
        read_ppm(path)


def test_pgm_roundtrip(tmp_path):
    mask = np.random.default_rng(1).random((7, 9)) > 0.5
    path = tmp_path / "mask.pgm"
    write_pgm(path, mask)
    assert np.array_equal(read_pgm(path), mask)


# --- generator ---

def test_generation_is_bitwise_deterministic():
    a = generate_dataset(seed=7, n_samples=6, canvas_size=32)
    b = generate_dataset(seed=7, n_samples=6, canvas_size=32)
    for s1, s2 in zip(a, b):
        assert s1.expression == s2.expression
        assert s1.sample_id == s2.sample_id
        assert np.array_equal(s1.image, s2.image)
        assert np.array_equal(s1.mask, s2.mask)


def test_different_seeds_differ():
    a = generate_dataset(seed=1, n_samples=4, canvas_size=32)
    b = generate_dataset(seed=2, n_samples=4, canvas_size=32)
    assert any(s1.expression != s2.expression or not np.array_equal(s1.image, s2.image)
               for s1, s2 in zip(a, b))


@pytest.mark.parametrize("difficulty", DIFFICULTIES)
def test_every_expression_has_unique_referent(difficulty):
    for index in range(30):
        sample, scene = generate_sample(11, index, canvas_size=48,
                                        difficulty=difficulty)
        matches = resolve_expression(sample.expression, scene)
        assert len(matches) == 1, (sample.expression, len(matches))
        assert np.array_equal(rasterize(matches[0], scene.canvas_size), sample.mask)
        assert sample.mask.any()


def test_attribute_difficulty_has_no_spatial_words():
    samples = generate_dataset(seed=3, n_samples=25, canvas_size=48,
                               difficulty="attributes")
    for sample in samples:
        assert not SPATIAL_WORDS & set(sample.expression.split()), sample.expression


def test_spatial_difficulty_produces_spatial_expressions():
    samples = generate_dataset(seed=4, n_samples=40, canvas_size=48,
                               difficulty="spatial")
    assert any(SPATIAL_WORDS & set(s.expression.split()) for s in samples)


def test_objects_respect_overlap_cap():
    for index in range(10):
        _, scene = generate_sample(5, index, canvas_size=48)
        masks = [rasterize(o, scene.canvas_size) for o in scene.objects]
        for i in range(len(masks)):
            for j in range(i + 1, len(masks)):
                inter = np.count_nonzero(masks[i] & masks[j])
                union = np.count_nonzero(masks[i] | masks[j])
                assert inter / union <= 0.05


def test_expression_vocabulary_is_closed():
    from fuseseg.synth import VOCABULARY
    vocab = set(VOCABULARY)
    for sample in generate_dataset(seed=6, n_samples=30):
        assert set(sample.expression.split()) <= vocab


def test_matching_objects_side_semantics():
    _, scene = generate_sample(8, 0, canvas_size=48)
    half = scene.canvas_size / 2.0
    lefts = matching_objects(scene, side="left")
    assert all(o.center[0] < half for o in lefts)


def test_generate_dataset_validates_n():
    with pytest.raises(GenerationError):
        generate_dataset(seed=0, n_samples=0)


# --- dataset I/O ---

def test_dataset_roundtrip(tmp_path):
    samples = generate_dataset(seed=9, n_samples=5, canvas_size=32)
    index = save_dataset(samples, tmp_path / "ds")
    loaded = load_dataset(index)
    assert len(loaded) == len(samples)
    for orig, back in zip(samples, loaded):
        assert back.sample_id == orig.sample_id
        assert back.expression == orig.expression
        assert np.array_equal(back.mask, orig.mask)
        assert np.max(np.abs(back.image - orig.image)) <= 1.0 / 255.0


def test_saved_dataset_is_byte_deterministic(tmp_path):
    samples = generate_dataset(seed=10, n_samples=3, canvas_size=32)
    index_a = save_dataset(samples, tmp_path / "a")
    index_b = save_dataset(samples, tmp_path / "b")
    assert index_a.read_bytes() == index_b.read_bytes()
    for sample in samples:
        pa = (tmp_path / "a" / "images" / f"{sample.sample_id}.ppm").read_bytes()
        pb = (tmp_path / "b" / "images" / f"{sample.sample_id}.ppm").read_bytes()
        assert pa == pb


def test_truncated_rle_reports_line_number(tmp_path):
    samples = generate_dataset(seed=11, n_samples=2, canvas_size=32)
    index = save_dataset(samples, tmp_path / "ds")
    lines = index.read_text().splitlines()
    import json

    record = json.loads(lines[1])
    record["mask_rle"]["counts"] = record["mask_rle"]["counts"][:-1]
    lines[1] = json.dumps(record)
    index.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataFormatError, match=":2:"):
        load_dataset(index)


def test_missing_field_reports_line_number(tmp_path):
    (tmp_path / "index.jsonl").write_text('{"id": "x"}\n')
    with pytest.raises(DataFormatError, match=":1:.*image"):
        load_dataset(tmp_path)


def test_empty_index_is_empty_dataset(tmp_path):
    (tmp_path / "index.jsonl").write_text("")
    assert load_dataset(tmp_path) == []
