"""Image type, quantizer, PNM/IDX formats, RNG, and glyph dataset tests."""

import os
import struct
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deobfusc.tensorio import (
    IdxError,
    ImageTensor,
    LabeledDataset,
    Mask,
    PnmError,
    SeededRng,
    canonical_glyphs,
    dequantize,
    load_idx,
    load_pnm,
    pnm_bytes,
    quantize,
    save_pnm,
    synth_glyphs,
)


# ---------------------------------------------------------------------------
# ImageTensor / Mask / quantize


def test_image_validates_range_and_shape():
    with pytest.raises(ValueError):
        ImageTensor(np.full((1, 2, 2), 1.5))
    with pytest.raises(ValueError):
        ImageTensor(np.full((1, 2, 2), np.nan))
    with pytest.raises(ValueError):
        ImageTensor(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ImageTensor(np.zeros((2, 2, 2)))  # 2 channels


def test_image_is_immutable():
    im = ImageTensor(np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        im.data[0, 0, 0] = 1.0


def test_from_bytes_lands_on_byte_grid():
    im = ImageTensor.from_bytes(np.array([[[0, 255], [128, 64]]], dtype=np.uint8))
    assert im.data.flatten().tolist() == [0.0, 1.0, 128 / 255, 64 / 255]


def test_quantize_rounds_half_away_from_zero():
    im = ImageTensor(np.array([[[0.5, 1.0, 0.0, 127.4 / 255]]]))
    assert quantize(im).flatten().tolist() == [128, 255, 0, 127]


def test_quantize_dequantize_idempotent():
    rng = np.random.default_rng(0)
    vals = rng.random((1, 10, 100))
    q1 = quantize(ImageTensor(vals))
    q2 = quantize(dequantize(q1))
    assert np.array_equal(q1, q2)


def test_mask_validation():
    with pytest.raises(ValueError):
        Mask(np.array([[0, 2]]))
    m = Mask(np.array([[0, 1], [1, 0]]))
    assert m.width == 2 and m.height == 2
    with pytest.raises(ValueError):
        m.check_matches(ImageTensor(np.zeros((1, 3, 3))))


# ---------------------------------------------------------------------------
# PNM


def test_load_p5_example(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    im = load_pnm(p)
    assert im.channels == 1
    assert im.data.flatten().tolist() == [0.0, 1.0, 128 / 255, 64 / 255]


def test_load_p6_example(tmp_path):
    p = tmp_path / "a.ppm"
    p.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
    im = load_pnm(p)
    assert im.channels == 3
    assert im.data.flatten().tolist() == [1.0, 0.0, 0.0]


def test_truncated_payload_names_offset(tmp_path):
    p = tmp_path / "t.pgm"
    p.write_bytes(b"P5\n4 4\n255\n" + bytes(8))
    with pytest.raises(PnmError, match=r"byte 19: payload truncated"):
        load_pnm(p)


def test_bad_maxval_names_offset(tmp_path):
    p = tmp_path / "m.pgm"
    p.write_bytes(b"P5\n2 2\n63\n" + bytes(4))
    with pytest.raises(PnmError, match=r"byte 7: unsupported maxval 63"):
        load_pnm(p)


def test_bad_magic(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P4\n2 2\n255\n" + bytes(4))
    with pytest.raises(PnmError, match="magic"):
        load_pnm(p)


def test_header_comments_allowed(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5 # comment\n2 1 # another\n255\n" + bytes([7, 9]))
    assert quantize(load_pnm(p)).flatten().tolist() == [7, 9]


def test_save_examples(tmp_path):
    p = tmp_path / "h.pgm"
    save_pnm(ImageTensor(np.full((1, 1, 1), 0.5)), p)
    assert p.read_bytes() == b"P5\n1 1\n255\n" + bytes([128])
    save_pnm(ImageTensor(np.zeros((1, 3, 3))), tmp_path / "z.pgm")
    assert (tmp_path / "z.pgm").read_bytes().endswith(bytes(9))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.booleans(), st.integers(0, 2 ** 32 - 1))
def test_pnm_round_trip(w, h, color, seed):
    rng = np.random.default_rng(seed)
    c = 3 if color else 1
    q = rng.integers(0, 256, (c, h, w), dtype=np.uint8)
    im = ImageTensor.from_bytes(q)
    blob = pnm_bytes(im)
    import io, tempfile
    with tempfile.NamedTemporaryFile(suffix=".pnm", delete=False) as fh:
        fh.write(blob)
        path = fh.name
    try:
        back = load_pnm(path)
    finally:
        os.unlink(path)
    assert np.array_equal(quantize(back), q)


# ---------------------------------------------------------------------------
# SeededRng


def test_same_seed_same_stream():
    a = SeededRng(123).normal(10_000)
    b = SeededRng(123).normal(10_000)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, SeededRng(124).normal(10_000))


def test_cross_process_determinism():
    code = (
        "from deobfusc.tensorio import SeededRng; import hashlib;"
        "print(hashlib.sha256(SeededRng(9).normal(10_000).tobytes()).hexdigest())"
    )
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    import hashlib
    local = hashlib.sha256(SeededRng(9).normal(10_000).tobytes()).hexdigest()
    assert out.stdout.strip() == local


def test_normal_is_the_documented_box_muller():
    rng = SeededRng(77)
    u = rng.uniform(8)
    z = rng.normal(4)
    expect = np.sqrt(-2 * np.log(1.0 - u[0::2])) * np.cos(2 * np.pi * u[1::2])
    assert np.array_equal(z, expect)


def test_derived_streams_are_stable_and_disjoint():
    a = SeededRng(5).derive(1, 2).uniform(4)
    assert np.array_equal(a, SeededRng(5).derive(1, 2).uniform(4))
    assert not np.array_equal(a, SeededRng(5).derive(2, 1).uniform(4))
    # heavy consumption of one sibling must not run into the next
    long0 = SeededRng(5).derive(0).raw(10_000)
    first1 = SeededRng(5).derive(1).raw(4)
    assert not np.isin(first1, long0).any()


def test_permutation_and_integers():
    p = SeededRng(3).permutation(50)
    assert sorted(p.tolist()) == list(range(50))
    v = SeededRng(3).integers(1000, 7)
    assert v.min() >= 0 and v.max() < 7


# ---------------------------------------------------------------------------
# IDX


def _write_idx_pair(tmp_path, images, labels):
    n, h, w = images.shape
    ip = tmp_path / "imgs.idx"
    lp = tmp_path / "lbls.idx"
    ip.write_bytes(struct.pack(">IIII", 0x803, n, h, w) + images.tobytes())
    lp.write_bytes(struct.pack(">II", 0x801, len(labels)) + bytes(labels))
    return ip, lp


def test_load_idx_round_trip(tmp_path):
    imgs = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4)
    ip, lp = _write_idx_pair(tmp_path, imgs, [1, 3])
    ds = load_idx(ip, lp)
    assert len(ds) == 2 and ds.K == 4
    assert ds.labels == (1, 3)
    assert np.array_equal(quantize(ds.images[0])[0], imgs[0])


def test_load_idx_magic_mismatch(tmp_path):
    imgs = np.zeros((1, 2, 2), np.uint8)
    ip, lp = _write_idx_pair(tmp_path, imgs, [0])
    with pytest.raises(IdxError, match="magic"):
        load_idx(lp, lp)  # labels file in the images slot


def test_load_idx_count_mismatch(tmp_path):
    imgs = np.zeros((2, 2, 2), np.uint8)
    ip, _ = _write_idx_pair(tmp_path, imgs, [0, 1])
    lp2 = tmp_path / "short.idx"
    lp2.write_bytes(struct.pack(">II", 0x801, 1) + bytes([0]))
    with pytest.raises(IdxError, match="does not match"):
        load_idx(ip, lp2)


_MNIST_DIR = os.environ.get("DEOBFUSC_MNIST")


@pytest.mark.skipif(not _MNIST_DIR, reason="official IDX files not present (set DEOBFUSC_MNIST)")
def test_official_test_set():
    ds = load_idx(os.path.join(_MNIST_DIR, "t10k-images-idx3-ubyte"),
                  os.path.join(_MNIST_DIR, "t10k-labels-idx1-ubyte"))
    assert len(ds) == 10_000
    assert ds.labels[0] == 7


# ---------------------------------------------------------------------------
# Synthetic glyphs


def test_zero_perturbation_gives_canonical_bitmaps():
    ds = synth_glyphs(2, 1, jitter=0, noise_sd=0.0, rng=SeededRng(0))
    ref = canonical_glyphs()
    assert np.array_equal(ds.images[0].data[0], ref[0])
    assert np.array_equal(ds.images[1].data[0], ref[1])


def test_glyphs_deterministic():
    a = synth_glyphs(10, 3, jitter=2, noise_sd=0.05, rng=SeededRng(11))
    b = synth_glyphs(10, 3, jitter=2, noise_sd=0.05, rng=SeededRng(11))
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a.images, b.images))
    assert a.labels == b.labels


def test_glyphs_shape_and_clamping():
    ds = synth_glyphs(10, 100, jitter=2, noise_sd=0.05, rng=SeededRng(1))
    assert len(ds) == 1000
    stacked = ds.stack()
    assert stacked.min() >= 0.0 and stacked.max() <= 1.0
    assert ds.labels.count(0) == 100


def test_glyphs_equal_ink_mass():
    # load-bearing for the discrimination benchmark: a 1x1 pixelization
    # (the image mean) must carry no class signal
    ref = canonical_glyphs()
    counts = {int(g.sum()) for g in ref}
    assert len(counts) == 1


def test_glyph_jitter_bounds():
    with pytest.raises(ValueError):
        synth_glyphs(10, 1, jitter=9, noise_sd=0.0, rng=SeededRng(0))
    ds = synth_glyphs(3, 4, jitter=4, noise_sd=0.0, rng=SeededRng(2))
    # shifts preserve ink because the margin absorbs the jitter
    ref_count = canonical_glyphs()[0].sum()
    for im in ds.images:
        assert im.data.sum() == ref_count


def test_dataset_validation():
    im = ImageTensor(np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        LabeledDataset(images=(im,), labels=(0, 1), K=2)
    with pytest.raises(ValueError):
        LabeledDataset(images=(im,), labels=(5,), K=2)
