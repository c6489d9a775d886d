"""Core image and mask types, quantization, file formats, RNG, datasets.

Images are unit-range real tensors with an 8-bit quantized view. The
quantizer here is the package's own rounding rule (half away from zero);
the blur pipelines in the obfuscation module carry their separate pinned
rounding rules and do not share this one.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np


class PnmError(ValueError):
    """Malformed PNM input. The message names the offending byte offset."""

    def __init__(self, offset: int, message: str):
        self.offset = offset
        super().__init__(f"byte {offset}: {message}")


class IdxError(ValueError):
    """Malformed or mismatched IDX input."""


def _as_float_image(data: np.ndarray) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"image data must be 3-d (channels, height, width), got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("image data contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image data outside unit range [0, 1]")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ImageTensor:
    """A channels x height x width image with real values in [0, 1].

    Row-major per channel. 1 channel is grayscale, 3 channels is RGB.
    Immutable after construction and safe to share across threads.
    """

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_float_image(self.data))
        if self.channels not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {self.channels}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @classmethod
    def from_bytes(cls, q: np.ndarray) -> "ImageTensor":
        """Build from an 8-bit (channels, height, width) array."""
        q = np.asarray(q)
        if q.dtype != np.uint8:
            raise ValueError(f"expected uint8 input, got {q.dtype}")
        return cls(q.astype(np.float64) / 255.0)

    @classmethod
    def from_gray(cls, a: np.ndarray) -> "ImageTensor":
        """Build a 1-channel image from a (height, width) float array."""
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError(f"expected 2-d array, got shape {a.shape}")
        return cls(a[None, :, :])

    def to_bytes(self) -> np.ndarray:
        return quantize(self)

    def channel(self, c: int) -> np.ndarray:
        return self.data[c]

    def same_shape(self, other: "ImageTensor") -> bool:
        return self.data.shape == other.data.shape


@dataclass(frozen=True)
class Mask:
    """A height x width binary matrix marking the region to obfuscate."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ValueError(f"mask must be 2-d, got shape {bits.shape}")
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        bits = bits.astype(np.uint8)
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @classmethod
    def full(cls, height: int, width: int) -> "Mask":
        return cls(np.ones((height, width), dtype=np.uint8))

    @classmethod
    def empty(cls, height: int, width: int) -> "Mask":
        return cls(np.zeros((height, width), dtype=np.uint8))

    def check_matches(self, image: ImageTensor) -> None:
        if (self.height, self.width) != (image.height, image.width):
            raise ValueError(
                f"mask {self.height}x{self.width} does not match image "
                f"{image.height}x{image.width}")


def quantize(image: ImageTensor | np.ndarray) -> np.ndarray:
    """Map unit-range values to bytes, rounding half away from zero.

    Inputs are clamped to [0, 1] first, so 0.5 -> 128 and 1.0 -> 255.
    """
    arr = image.data if isinstance(image, ImageTensor) else np.asarray(image, dtype=np.float64)
    v = np.clip(arr, 0.0, 1.0)
    # values are non-negative here, so half away from zero == floor(v*255 + 0.5)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def dequantize(q: np.ndarray) -> ImageTensor:
    """Inverse view of quantize: bytes back to the unit-range grid."""
    return ImageTensor.from_bytes(q)


def quantize_unit(arr: np.ndarray) -> np.ndarray:
    """quantize followed by dequantize, on a bare array. Snaps to the byte grid."""
    v = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5) / 255.0


# ---------------------------------------------------------------------------
# Deterministic RNG


_U64 = np.uint64
_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SeededRng:
    """Counter-based deterministic RNG (Philox 4x64).

    The stream is a pure function of (seed, key path): identical seeds give
    identical streams on every platform, and `derive` yields independent
    streams keyed by integer coordinates, so e.g. per-block noise does not
    depend on the order blocks are visited.

    Gaussian variates use an explicit Box-Muller transform of the uniform
    stream (documented here, not delegated to numpy's ziggurat) so that the
    exact values are part of this contract: with u1 in (0, 1], u2 in [0, 1)
    taken from consecutive 53-bit uniforms,
        z = sqrt(-2 ln u1) * cos(2 pi u2).
    Only the cosine branch is used; one pair of uniforms per variate.
    """

    seed: int
    _path: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ValueError("seed must be an unsigned 64-bit integer")

    algorithm = "philox4x64-boxmuller"

    def derive(self, *indices: int) -> "SeededRng":
        """A child stream keyed by integer coordinates, e.g. (block_i, block_j)."""
        return SeededRng(self.seed, self._path + tuple(int(i) for i in indices))

    def _bit_generator(self) -> np.random.Philox:
        # key = seed; the derivation path fills the HIGH counter words, so the
        # low word is free to count blocks and sibling streams cannot collide
        # (consuming a stream only increments from the low word upward)
        if len(self._path) > 3:
            raise ValueError("derivation path deeper than 3 levels")
        counter = [0, 0, 0, 0]
        for k, idx in enumerate(self._path):
            counter[3 - k] = idx % (2 ** 64)
        return np.random.Philox(counter=counter, key=self.seed)

    def raw(self, n: int) -> np.ndarray:
        """First n uint64 words of the stream."""
        return self._bit_generator().random_raw(n)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1) with 53-bit resolution."""
        return (self.raw(n) >> _U64(11)) * (2.0 ** -53)

    def normal(self, shape: tuple[int, ...] | int) -> np.ndarray:
        """Standard normal variates via the documented Box-Muller transform."""
        if isinstance(shape, int):
            shape = (shape,)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = self.uniform(2 * n)
        u1 = u[0::2]
        u2 = u[1::2]
        u1 = 1.0 - u1  # move from [0,1) to (0,1] so the log is finite
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)
        return z.reshape(shape)

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers in [0, bound) by 64-bit modular reduction.

        The modulo bias is below 2**-50 for any bound that fits practical
        use here (shuffles, jitter offsets); acceptable for this artifact.
        """
        if bound <= 0:
            raise ValueError("bound must be positive")
        return (self.raw(n) % _U64(bound)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic Fisher-Yates permutation of range(n)."""
        idx = np.arange(n)
        words = self.raw(max(n - 1, 0))
        for i in range(n - 1, 0, -1):
            j = int(words[n - 1 - i] % _U64(i + 1))
            idx[i], idx[j] = idx[j], idx[i]
        return idx


# ---------------------------------------------------------------------------
# PNM (binary PGM P5 / PPM P6)


def _parse_pnm_header(buf: bytes):
    pos = 0
    n = len(buf)

    def skip_ws(pos: int, what: str) -> int:
        saw = False
        while pos < n:
            b = buf[pos:pos + 1]
            if b.isspace():
                pos += 1
                saw = True
            elif b == b"#":
                while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
                saw = True
            else:
                break
        if not saw:
            raise PnmError(pos, f"expected whitespace before {what}")
        return pos

    def read_int(pos: int, what: str) -> tuple[int, int]:
        start = pos
        while pos < n and buf[pos:pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise PnmError(start, f"expected decimal {what}")
        return int(buf[start:pos]), pos

    if buf[:2] not in (b"P5", b"P6"):
        raise PnmError(0, "not a binary PGM/PPM file (magic must be P5 or P6)")
    channels = 1 if buf[:2] == b"P5" else 3
    pos = 2
    pos = skip_ws(pos, "width")
    width, pos = read_int(pos, "width")
    pos = skip_ws(pos, "height")
    height, pos = read_int(pos, "height")
    pos = skip_ws(pos, "maxval")
    maxval_at = pos
    maxval, pos = read_int(pos, "maxval")
    if maxval != 255:
        raise PnmError(maxval_at, f"unsupported maxval {maxval}, only 255")
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise PnmError(pos, "expected single whitespace byte after maxval")
    pos += 1
    if width <= 0 or height <= 0:
        raise PnmError(2, f"non-positive dimensions {width}x{height}")
    return channels, width, height, pos


def load_pnm(path: str | os.PathLike) -> ImageTensor:
    """Load a binary PGM (P5) or PPM (P6) file with maxval 255.

    P5 yields 1 channel, P6 yields 3. Values are scaled to [0, 1].
    Malformed input raises PnmError naming the byte offset.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    channels, width, height, pos = _parse_pnm_header(buf)
    need = channels * width * height
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise PnmError(pos + len(payload),
                       f"payload truncated: expected {need} bytes, got {len(payload)}")
    flat = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        q = flat.reshape(1, height, width)
    else:
        # P6 interleaves RGB per pixel
        q = flat.reshape(height, width, 3).transpose(2, 0, 1)
    return ImageTensor.from_bytes(q)


def _atomic_write(path: str | os.PathLike, payload: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-pnm-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def pnm_bytes(image: ImageTensor) -> bytes:
    q = quantize(image)
    if image.channels == 1:
        magic = b"P5"
        payload = q[0].tobytes()
    else:
        magic = b"P6"
        payload = q.transpose(1, 2, 0).tobytes()
    header = magic + b"\n%d %d\n255\n" % (image.width, image.height)
    return header + payload


def save_pnm(image: ImageTensor, path: str | os.PathLike) -> None:
    """Write P5 (1 channel) or P6 (3 channels), quantizing to bytes.

    Round trip: load_pnm after save_pnm equals quantize-then-dequantize of
    the original, bit-exactly. The write is atomic (temp file + rename).
    """
    _atomic_write(path, pnm_bytes(image))


# ---------------------------------------------------------------------------
# Labeled datasets: IDX ingestion and synthetic glyphs


@dataclass(frozen=True)
class LabeledDataset:
    """Images of one uniform shape plus class labels in [0, K)."""

    images: tuple[ImageTensor, ...]
    labels: tuple[int, ...]
    K: int

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels must have equal length")
        if self.K <= 0:
            raise ValueError("K must be positive")
        shapes = {im.data.shape for im in self.images}
        if len(shapes) > 1:
            raise ValueError(f"images must share one shape, got {sorted(shapes)}")
        for lbl in self.labels:
            if not (0 <= lbl < self.K):
                raise ValueError(f"label {lbl} outside [0, {self.K})")
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "labels", tuple(int(l) for l in self.labels))

    def __len__(self) -> int:
        return len(self.images)

    def stack(self) -> np.ndarray:
        """All images as one (n, channels, height, width) array."""
        return np.stack([im.data for im in self.images])


_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def load_idx(images_path: str | os.PathLike, labels_path: str | os.PathLike) -> LabeledDataset:
    """Load an IDX image/label file pair (big-endian, magics 0x803/0x801).

    Grayscale images scaled to [0, 1]; label values become class indices.
    """
    with open(images_path, "rb") as fh:
        ibuf = fh.read()
    with open(labels_path, "rb") as fh:
        lbuf = fh.read()
    if len(ibuf) < 16:
        raise IdxError(f"{images_path}: header truncated")
    magic, n, h, w = (int(v) for v in np.frombuffer(ibuf[:16], dtype=">u4"))
    if magic != _IDX_IMAGES_MAGIC:
        raise IdxError(f"{images_path}: magic 0x{magic:08x}, expected 0x{_IDX_IMAGES_MAGIC:08x}")
    if len(ibuf) != 16 + n * h * w:
        raise IdxError(f"{images_path}: expected {16 + n * h * w} bytes, got {len(ibuf)}")
    if len(lbuf) < 8:
        raise IdxError(f"{labels_path}: header truncated")
    lmagic, ln = (int(v) for v in np.frombuffer(lbuf[:8], dtype=">u4"))
    if lmagic != _IDX_LABELS_MAGIC:
        raise IdxError(f"{labels_path}: magic 0x{lmagic:08x}, expected 0x{_IDX_LABELS_MAGIC:08x}")
    if ln != n:
        raise IdxError(f"image count {n} does not match label count {ln}")
    if len(lbuf) != 8 + ln:
        raise IdxError(f"{labels_path}: expected {8 + ln} bytes, got {len(lbuf)}")
    pixels = np.frombuffer(ibuf[16:], dtype=np.uint8).reshape(n, h, w)
    labels = np.frombuffer(lbuf[8:], dtype=np.uint8)
    images = tuple(ImageTensor.from_bytes(pixels[i][None]) for i in range(n))
    K = int(labels.max()) + 1 if len(labels) else 1
    return LabeledDataset(images=images, labels=tuple(int(v) for v in labels), K=K)


# ---------------------------------------------------------------------------
# Synthetic digit glyphs
#
# Ten 28x28 digit bitmaps built from seven-segment strokes and then padded
# to one shared on-pixel count. Equal ink mass is load-bearing: it keeps a
# 1x1 pixelization (the image mean) exactly uninformative about the class.

_CANVAS = 28
# segment geometry inside a 16-wide, 20-tall glyph box
_SEG_BOXES = {
    "top":      (0, 0, 3, 16),
    "mid":      (8, 0, 3, 16),
    "bot":      (17, 0, 3, 16),
    "ul":       (0, 0, 10, 3),
    "ur":       (0, 13, 10, 3),
    "ll":       (10, 0, 10, 3),
    "lr":       (10, 13, 10, 3),
}
_DIGIT_SEGS = {
    0: ("top", "bot", "ul", "ur", "ll", "lr"),
    1: ("ur", "lr"),
    2: ("top", "mid", "bot", "ur", "ll"),
    3: ("top", "mid", "bot", "ur", "lr"),
    4: ("mid", "ul", "ur", "lr"),
    5: ("top", "mid", "bot", "ul", "lr"),
    6: ("top", "mid", "bot", "ul", "ll", "lr"),
    7: ("top", "ur", "lr"),
    8: ("top", "mid", "bot", "ul", "ur", "ll", "lr"),
    9: ("top", "mid", "bot", "ul", "ur", "lr"),
}
_GLYPH_MARGIN = 4  # blank border, also the maximum legal jitter


def _draw_digit(d: int) -> np.ndarray:
    box = np.zeros((20, 16), dtype=np.uint8)
    for name in _DIGIT_SEGS[d]:
        r, c, dh, dw = _SEG_BOXES[name]
        box[r:r + dh, c:c + dw] = 1
    canvas = np.zeros((_CANVAS, _CANVAS), dtype=np.uint8)
    canvas[_GLYPH_MARGIN:_GLYPH_MARGIN + 20, 6:6 + 16] = box
    return canvas


def _equalize_ink(glyphs: list[np.ndarray]) -> list[np.ndarray]:
    """Grow every glyph to the maximum on-pixel count by deterministic dilation."""
    target = max(int(g.sum()) for g in glyphs)
    out = []
    for g in glyphs:
        g = g.copy()
        while int(g.sum()) < target:
            # off-pixels 4-adjacent to the shape, in scan order
            nb = np.zeros_like(g)
            nb[1:, :] |= g[:-1, :]
            nb[:-1, :] |= g[1:, :]
            nb[:, 1:] |= g[:, :-1]
            nb[:, :-1] |= g[:, 1:]
            ring = np.argwhere((nb == 1) & (g == 0))
            need = target - int(g.sum())
            for r, c in ring[:need]:
                g[r, c] = 1
        out.append(g)
    return out


def canonical_glyphs() -> np.ndarray:
    """The ten fixed digit bitmaps, shape (10, 28, 28), values {0, 1}."""
    glyphs = _equalize_ink([_draw_digit(d) for d in range(10)])
    arr = np.stack(glyphs).astype(np.float64)
    arr.flags.writeable = False
    return arr


_GLYPH_CACHE: np.ndarray | None = None


def _glyphs() -> np.ndarray:
    global _GLYPH_CACHE
    if _GLYPH_CACHE is None:
        _GLYPH_CACHE = canonical_glyphs()
    return _GLYPH_CACHE


def synth_glyphs(K: int, n_per_class: int, jitter: int, noise_sd: float,
                 rng: SeededRng) -> LabeledDataset:
    """Deterministic synthetic digit dataset.

    Each image is a fixed digit bitmap shifted by at most `jitter` pixels in
    each axis and perturbed by Gaussian noise, then clamped to [0, 1].
    Classes are balanced; the stream for image (k, i) is derived from the
    class and item indices, so the dataset is independent of build order.
    """
    if not (1 <= K <= 10):
        raise ValueError("K must be between 1 and 10")
    if jitter < 0 or jitter > _GLYPH_MARGIN:
        raise ValueError(f"jitter must be in [0, {_GLYPH_MARGIN}] for the 28x28 canvas")
    if noise_sd < 0:
        raise ValueError("noise_sd must be non-negative")
    glyphs = _glyphs()
    images = []
    labels = []
    for k in range(K):
        for i in range(n_per_class):
            sub = rng.derive(k, i)
            if jitter > 0:
                offs = sub.derive(0).integers(2, 2 * jitter + 1) - jitter
                dy, dx = int(offs[0]), int(offs[1])
            else:
                dy = dx = 0
            img = np.roll(glyphs[k], (dy, dx), axis=(0, 1))
            if noise_sd > 0:
                img = img + noise_sd * sub.derive(1).normal((_CANVAS, _CANVAS))
            img = np.clip(img, 0.0, 1.0)
            images.append(ImageTensor.from_gray(img))
            labels.append(k)
    return LabeledDataset(images=tuple(images), labels=tuple(labels), K=K)
