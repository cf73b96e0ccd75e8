import hashlib
import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

import oracles
from gffmgan import data as D
from gffmgan.errors import ConfigurationError

# sha256 of render_shape(0, 32) float64 bytes, recorded from the renderer once
CIRCLE_32_SHA256 = "212dd57ff74a5bc6b5c3ba97f38c9424c467b8c6218d6f4632268678ceff1627"


def _png(path, rgb, size=(8, 8), mode="RGB"):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.new(mode, size, rgb).save(path)


# -- preprocessing --------------------------------------------------------------------------------
def test_value_endpoints():
    img = np.zeros((32, 32, 3), np.uint8)
    img[0, 0] = 255
    out = D.preprocess(img, D.DatasetSpec("x", 32))
    assert out.dtype == np.float32 and out.shape == (3, 32, 32)
    assert out[:, 0, 0].tolist() == [1.0] * 3 and out[:, 1, 1].tolist() == [-1.0] * 3


def test_center_crop_then_resize():
    img = np.zeros((100, 200, 3), np.uint8)
    img[:, 50:150] = 255  # exactly the central square
    out = D.preprocess(img, D.DatasetSpec("x", 32))
    np.testing.assert_array_equal(out, 1.0)
    assert D.center_crop_square(np.zeros((7, 3))).shape == (3, 3)


def test_checkerboard_bilinear_hand():
    board = (np.indices((4, 4)).sum(axis=0) % 2).astype(float) * 255
    out = D.resize_bilinear(board, (2, 2))
    # half-pixel centres land on the middle of each 2x2 block: plain average
    np.testing.assert_array_equal(out, np.full((2, 2), 127.5))


def test_bilinear_matches_sampling_oracle(rng):
    img = rng.uniform(0, 1, (5, 7))
    out = D.resize_bilinear(img, (3, 4))
    for r in range(3):
        for c in range(4):
            y = (r + 0.5) * 5 / 3 - 0.5
            x = (c + 0.5) * 7 / 4 - 0.5
            assert out[r, c] == pytest.approx(oracles.bilinear_sample(img, y, x), abs=1e-14)


def test_preprocess_converts_modes_and_rejects_empty():
    spec = D.DatasetSpec("x", 32)
    assert D.preprocess(Image.new("L", (10, 10), 255), spec).shape == (3, 32, 32)
    assert D.preprocess(np.zeros((10, 10), np.uint8), spec).min() == -1.0
    with pytest.raises(ConfigurationError, match="zero-area"):
        D.preprocess(np.zeros((0, 5, 3), np.uint8), spec)


def test_image_batch_range():
    with pytest.raises(ValueError, match=r"\[-1, 1\]"):
        D.ImageBatch(np.full((1, 3, 2, 2), 1.5))


def test_spec_validation():
    with pytest.raises(ConfigurationError, match="resolution"):
        D.DatasetSpec("x", 64)


# -- directory corpora -------------------------------------------------------------------------------
def test_class_labels_sorted(tmp_path):
    for name, colour in (("dog", (0, 0, 255)), ("cat", (255, 0, 0))):
        for i in range(2):
            _png(tmp_path / name / f"{i}.png", colour)
    ds = D.scan_and_decode(D.DatasetSpec(str(tmp_path), 32, 2))
    assert ds.class_names == ["cat", "dog"]
    assert ds.labels.tolist() == [0, 0, 1, 1]
    assert ds.batch([0]).pixels[0, 0, 0, 0] == 1.0  # red cat
    with pytest.raises(ConfigurationError, match="2 class directories"):
        D.scan_and_decode(D.DatasetSpec(str(tmp_path), 32, 3))


def test_flat_unconditional(tmp_path):
    for i in range(3):
        _png(tmp_path / f"{i}.png", (10, 20, 30))
    ds = D.scan_and_decode(D.DatasetSpec(str(tmp_path), 32, 0))
    assert len(ds) == 3 and ds.labels is None


def test_corrupt_file_skipped(tmp_path, caplog):
    for i in range(9):
        _png(tmp_path / f"{i}.png", (i, i, i))
    (tmp_path / "9.png").write_bytes(b"not an image")
    with caplog.at_level(logging.WARNING):
        ds = D.scan_and_decode(D.DatasetSpec(str(tmp_path), 32))
    assert len(ds) == 9 and ds.skipped == 1
    assert "skipped 1" in caplog.text


def test_empty_corpus(tmp_path):
    with pytest.raises(ConfigurationError, match="no decodable"):
        D.scan_and_decode(D.DatasetSpec(str(tmp_path), 32))
    with pytest.raises(ConfigurationError, match="does not exist"):
        D.scan_and_decode(D.DatasetSpec(str(tmp_path / "missing"), 32))


# -- synthetic shapes ----------------------------------------------------------------------------------
def test_golden_class0_template():
    assert hashlib.sha256(D.render_shape(0, 32).tobytes()).hexdigest() == CIRCLE_32_SHA256


def test_synthetic_deterministic_and_balanced():
    a = D.synthetic_shapes(400, 4, 32, seed=3)
    b = D.synthetic_shapes(400, 4, 32, seed=3)
    assert a.pixels.tobytes() == b.pixels.tobytes()
    assert np.bincount(a.labels).tolist() == [100] * 4
    assert a.pixels.min() >= -1 and a.pixels.max() <= 1
    assert not np.array_equal(a.pixels, D.synthetic_shapes(400, 4, 32, seed=4).pixels)


def test_synthetic_uri():
    ds = D.scan_and_decode(D.DatasetSpec("synthetic://shapes?n=12&classes=3&seed=1", 32, 3))
    assert len(ds) == 12 and ds.num_classes == 3
    unc = D.scan_and_decode(D.DatasetSpec("synthetic://shapes?n=12&classes=3", 32, 0))
    assert unc.labels is None
    with pytest.raises(ConfigurationError, match="unknown synthetic parameters"):
        D.parse_synthetic_uri("synthetic://shapes?colour=3")


# -- batch iteration --------------------------------------------------------------------------------------
def _indexed(n):
    pixels = np.zeros((n, 3, 1, 1), np.float32)
    pixels[:, 0, 0, 0] = np.arange(n) / n
    return D.ArrayDataset(pixels, np.arange(n))


def test_drop_last_policy():
    it = D.batch_iterator(_indexed(10), 3, seed=0)
    first_epoch = [next(it).labels for _ in range(3)]
    assert [len(b) for b in first_epoch] == [3, 3, 3]
    next(it)
    assert it.epoch == 1


@given(st.integers(1, 40), st.integers(0, 1000), st.data())
def test_epoch_batches_disjoint_and_cover(n, seed, data):
    bs = data.draw(st.integers(1, n))
    it = D.BatchIterator(_indexed(n), bs, seed)
    seen = np.concatenate([next(it).labels for _ in range(it.batches_per_epoch)])
    assert len(set(seen.tolist())) == len(seen) == (n // bs) * bs
    dropped = set(range(n)) - set(seen.tolist())
    assert dropped == set(it.permutation(0)[len(seen):].tolist())


def test_same_seed_same_order_and_resume():
    a, b = D.BatchIterator(_indexed(10), 4, 5), D.BatchIterator(_indexed(10), 4, 5)
    for _ in range(5):
        assert np.array_equal(next(a).labels, next(b).labels)
    state = a.state_dict()
    expected = [next(a).labels for _ in range(4)]
    c = D.BatchIterator(_indexed(10), 4, 0)
    c.load_state_dict(state)
    assert all(np.array_equal(x, next(c).labels) for x in expected)
    with pytest.raises(ConfigurationError):
        D.BatchIterator(_indexed(3), 4)
