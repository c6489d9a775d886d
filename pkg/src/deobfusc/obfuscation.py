"""Bit-exact forward implementations of the four obfuscation operators.

The two blur pipelines reproduce widely deployed C implementations down to
the byte. Their semantics were reverse-engineered empirically and are pinned
by the golden fixtures checked into fixtures/ (see gen-fixtures-check). The
constants below document what the fixtures enforce.

Blur pipeline A ("pil"): three horizontal then three vertical box passes on
8-bit data. The box radius is derived from the Gaussian radius with 32-bit
float intermediate semantics, matching the reference C code op for op. Each
pass accumulates a clamp-to-edge window sum and renormalizes in 24.8-style
fixed point: out = (acc*ww + far*fw + 2^23) >> 24.

Blur pipeline B ("box"): a single normalized box filter with reflect-101
padding. Kernel area d <= 257 normalizes in 32-bit fixed point
(out = (s + delta) * q >> 32 with q ~= 2^32/d); d >= 258 multiplies the sum
by the float32 reciprocal of d and rounds half to even, in float32.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .tensorio import ImageTensor, Mask, quantize, SeededRng

_U64 = np.uint64


# ---------------------------------------------------------------------------
# Pipeline A: iterated box approximation of a Gaussian


def _f32(v) -> np.float32:
    return np.float32(v)


def _pil_gauss_box_radius(radius: float, passes: int = 3) -> float:
    """Float box radius shared by all passes, from the Gaussian radius.

    Mirrors the reference C arithmetic exactly: products and quotients in
    float32, the square root and the floor in double, results truncated
    back to float32 step by step. Do not "simplify" the expression; the
    rounding of each intermediate is observable in the output bytes.
    """
    f32, f64 = np.float32, np.float64
    radius = f32(radius)
    sigma2 = f32(f32(radius * radius) / f32(passes))
    L = f32(np.sqrt(f64(12.0) * f64(sigma2) + f64(1.0)))
    l = f32(np.floor((f64(L) - f64(1.0)) / f64(2.0)))
    num = f32(f32(f32(2) * l + f32(1)) * f32(f32(l * f32(l + f32(1))) - f32(f32(3) * sigma2)))
    den = f32(f32(6) * f32(sigma2 - f32(l + f32(1)) * f32(l + f32(1))))
    a = f32(num / den)
    return float(f32(l + a))


def _pil_box_params(fradius: float) -> tuple[int, int, int]:
    """Integer window radius and the fixed-point bulk/edge weights."""
    r = int(_f32(fradius))
    ww = int(_f32(1 << 24) / (_f32(fradius) * _f32(2) + _f32(1)))
    fw = ((1 << 24) - (2 * r + 1) * ww) // 2
    return r, ww, fw


def _pil_pass(a: np.ndarray, fradius: float) -> np.ndarray:
    """One horizontal box pass over (rows, cols) uint8 data."""
    r, ww, fw = _pil_box_params(fradius)
    w = a.shape[-1]
    last = w - 1
    idx = np.arange(w)
    au = a.astype(np.uint64)
    acc = np.zeros(a.shape, np.uint64)
    for d in range(-r, r + 1):
        acc += au[..., np.clip(idx + d, 0, last)]
    far = au[..., np.clip(idx - r - 1, 0, last)] + au[..., np.clip(idx + r + 1, 0, last)]
    bulk = acc * _U64(ww) + far * _U64(fw)
    return ((bulk + _U64(1 << 23)) >> _U64(24)).astype(np.uint8)


def _pil_box_blur_u8(a: np.ndarray, rx: float, ry: float, passes: int) -> np.ndarray:
    out = a
    if rx != 0.0:
        for _ in range(passes):
            out = _pil_pass(out, rx)
    if ry != 0.0:
        out = np.swapaxes(out, -1, -2)
        for _ in range(passes):
            out = _pil_pass(out, ry)
        out = np.swapaxes(out, -1, -2)
    return np.ascontiguousarray(out)


@dataclass(frozen=True)
class BlurProfile:
    """Resolved per-pass plan of pipeline A for one radius."""

    passes: int
    box_widths: tuple[int, ...]
    per_pass_rounding: str
    padding: str
    box_radius: float  # fractional radius driving the edge weights

    def __post_init__(self):
        for wdt in self.box_widths:
            if wdt % 2 != 1:
                raise ValueError(f"box widths must be odd, got {wdt}")


def derive_pil_profile(radius: float) -> BlurProfile:
    """Resolve the box-pass plan pipeline A uses for a Gaussian radius."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    br = _pil_gauss_box_radius(radius)
    width = 2 * int(_f32(br)) + 1
    return BlurProfile(
        passes=3,
        box_widths=(width,) * 3,
        per_pass_rounding="fixedpoint24-half-up",
        padding="clamp-to-edge",
        box_radius=br,
    )


def pil_blur(x: ImageTensor, radius: float) -> ImageTensor:
    """Gaussian blur of the quantized input, bit-exact with pipeline A.

    Radius 0 is the identity on the quantized input, matching the
    reference library. Each channel is filtered independently.
    """
    if radius < 0:
        raise ValueError(f"radius must be non-negative, got {radius}")
    q = quantize(x)
    if radius == 0:
        return ImageTensor.from_bytes(q)
    br = derive_pil_profile(radius).box_radius
    out = np.stack([_pil_box_blur_u8(q[c], br, br, 3) for c in range(x.channels)])
    return ImageTensor.from_bytes(out)


# ---------------------------------------------------------------------------
# Pipeline B: single normalized box filter


def _reflect101(p: int, n: int) -> int:
    if n == 1:
        return 0
    while p < 0 or p >= n:
        p = -p if p < 0 else 2 * n - 2 - p
    return p


def _box_indices(size: int, k: int) -> np.ndarray:
    anchor = k // 2
    return np.array([[_reflect101(x - anchor + i, size) for x in range(size)]
                     for i in range(k)])


def _cv_box_u8(a: np.ndarray, kw: int, kh: int) -> np.ndarray:
    h, w = a.shape
    xs = _box_indices(w, kw)
    ys = _box_indices(h, kh)
    au = a.astype(np.uint64)
    acc = np.zeros((h, w), np.uint64)
    for j in range(kh):
        rows = au[ys[j]]
        for i in range(kw):
            acc += rows[:, xs[i]]
    d = kw * kh
    if d == 1:
        return a.copy()
    if d <= 257:
        # 32-bit fixed-point reciprocal; the 0.5 test decides whether the
        # correction lands in the quotient or in the pre-added delta
        scalef = float(1 << 32) / d
        q = int(np.floor(scalef))
        delta = d >> 1
        if scalef - q < 0.5:
            delta += 1
        else:
            q += 1
        v = (acc + _U64(delta)) * _U64(q) >> _U64(32)
    else:
        p = np.float32(acc.astype(np.float32) * (np.float32(1.0) / np.float32(d)))
        v = np.rint(p.astype(np.float64))
    return np.minimum(v, 255).astype(np.uint8)


def box_blur(x: ImageTensor, kw: int, kh: int) -> ImageTensor:
    """Normalized box filter of the quantized input, bit-exact with pipeline B."""
    if kw < 1 or kh < 1:
        raise ValueError(f"kernel dims must be >= 1, got {kw}x{kh}")
    if kw > 2 * x.width or kh > 2 * x.height:
        raise ValueError(
            f"kernel {kw}x{kh} larger than twice the image {x.width}x{x.height}")
    q = quantize(x)
    out = np.stack([_cv_box_u8(q[c], kw, kh) for c in range(x.channels)])
    return ImageTensor.from_bytes(out)


# ---------------------------------------------------------------------------
# Crop, pixelize, noisy pixelize


def crop_obfuscate(x: ImageTensor, mask: Mask) -> ImageTensor:
    """Zero out the masked region, keep the rest bit-identical."""
    mask.check_matches(x)
    keep = 1.0 - mask.bits.astype(np.float64)
    return ImageTensor(x.data * keep[None])


def block_edges(size: int, blocks: int) -> np.ndarray:
    """Boundaries of a near-equal partition, remainders in trailing blocks."""
    base, rem = divmod(size, blocks)
    sizes = [base] * (blocks - rem) + [base + 1] * rem
    return np.concatenate([[0], np.cumsum(sizes)])


def _block_mean_expand(data: np.ndarray, m: int, n: int) -> np.ndarray:
    """Replace every m x n grid block with its mean. Works on (..., h, w)."""
    h, w = data.shape[-2:]
    re = block_edges(h, m)
    ce = block_edges(w, n)
    rs = np.diff(re)
    cs = np.diff(ce)
    sums = np.add.reduceat(np.add.reduceat(data, re[:-1], axis=-2), ce[:-1], axis=-1)
    means = sums / (rs[:, None] * cs[None, :])
    return np.repeat(np.repeat(means, rs, axis=-2), cs, axis=-1)


def pixelize(x: ImageTensor, m: int, n: int) -> ImageTensor:
    """Replace each block of an m x n grid by its mean. Real-valued, idempotent."""
    if m < 1 or n < 1:
        raise ValueError(f"block grid must be at least 1x1, got {m}x{n}")
    if m > x.height or n > x.width:
        raise ValueError(f"grid {m}x{n} exceeds image {x.height}x{x.width}")
    return ImageTensor(_block_mean_expand(x.data, m, n))


def dp_pix(x: ImageTensor, m: int, n: int, sigma: float, seed: int) -> ImageTensor:
    """Pixelize plus per-block Gaussian noise, clamped back to [0, 1].

    The noise of block (i, j) is a pure function of (seed, i, j); channels
    share the block draw. sigma = 0 degenerates to pixelize exactly.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    base = pixelize(x, m, n)
    if sigma == 0:
        return base
    rng = SeededRng(seed)
    noise_blocks = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            noise_blocks[i, j] = rng.derive(i, j).normal(1)[0]
    re = block_edges(x.height, m)
    ce = block_edges(x.width, n)
    noise = np.repeat(np.repeat(noise_blocks, np.diff(re), axis=0),
                      np.diff(ce), axis=1)
    out = np.clip(base.data + sigma * noise[None], 0.0, 1.0)
    return ImageTensor(out)


# ---------------------------------------------------------------------------
# Obfuscation specs and masked application


_METHODS = ("crop", "pil_blur", "box_blur", "pixelize", "dp_pix")


@dataclass(frozen=True)
class ObfuscationSpec:
    """Tagged method plus exactly the parameters that method takes.

    mask and mask_blur_radius configure masked application; mask_path is
    carried for serialization when the mask came from a file.
    """

    method: str
    radius: float | None = None
    kernel_dims: tuple[int, int] | None = None
    blocks: tuple[int, int] | None = None
    sigma: float | None = None
    seed: int | None = None
    mask: Mask | None = None
    mask_blur_radius: float | None = None
    mask_path: str | None = None

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {_METHODS}")
        need = {
            "crop": set(),
            "pil_blur": {"radius"},
            "box_blur": {"kernel_dims"},
            "pixelize": {"blocks"},
            "dp_pix": {"blocks", "sigma", "seed"},
        }[self.method]
        present = {f for f in ("radius", "kernel_dims", "blocks", "sigma", "seed")
                   if getattr(self, f) is not None}
        if present != need:
            raise ValueError(
                f"method {self.method} takes exactly {sorted(need)}, got {sorted(present)}")
        if self.radius is not None and self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.blocks is not None:
            m, n = self.blocks
            if m < 1 or n < 1:
                raise ValueError("blocks must be >= 1 in both axes")
            object.__setattr__(self, "blocks", (int(m), int(n)))
        if self.kernel_dims is not None:
            kw, kh = self.kernel_dims
            if kw < 1 or kh < 1:
                raise ValueError("kernel dims must be >= 1")
            object.__setattr__(self, "kernel_dims", (int(kw), int(kh)))
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.mask_blur_radius is not None:
            if self.mask_blur_radius < 0:
                raise ValueError("mask_blur_radius must be non-negative")
            if self.method not in ("pil_blur", "box_blur"):
                raise ValueError("mask_blur_radius applies to blur methods only")

    @property
    def is_randomized(self) -> bool:
        return self.method == "dp_pix" and (self.sigma or 0.0) > 0.0

    def to_dict(self) -> dict:
        d: dict = {"method": self.method}
        if self.radius is not None:
            d["radius"] = self.radius
        if self.kernel_dims is not None:
            d["kernel_dims"] = list(self.kernel_dims)
        if self.blocks is not None:
            d["blocks"] = list(self.blocks)
        if self.sigma is not None:
            d["sigma"] = self.sigma
        if self.seed is not None:
            d["seed"] = self.seed
        d["mask"] = self.mask_path
        d["mask_blur_radius"] = self.mask_blur_radius
        return d

    def to_json(self) -> str:
        if self.mask is not None and self.mask_path is None:
            raise ValueError("mask has no file path; save it before serializing")
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | None = None) -> "ObfuscationSpec":
        d = dict(d)
        method = d.pop("method", None)
        mask_path = d.pop("mask", None)
        mask = None
        if mask_path is not None:
            resolved = mask_path if os.path.isabs(mask_path) or base_dir is None \
                else os.path.join(base_dir, mask_path)
            mask = load_mask(resolved)
        kernel_dims = tuple(d.pop("kernel_dims")) if d.get("kernel_dims") is not None else d.pop("kernel_dims", None)
        blocks = tuple(d.pop("blocks")) if d.get("blocks") is not None else d.pop("blocks", None)
        known = {k: d.pop(k) for k in ("radius", "sigma", "seed", "mask_blur_radius") if k in d}
        if d:
            raise ValueError(f"unknown spec fields: {sorted(d)}")
        return cls(method=method, kernel_dims=kernel_dims, blocks=blocks,
                   mask=mask, mask_path=mask_path, **known)

    @classmethod
    def from_json(cls, text: str, base_dir: str | None = None) -> "ObfuscationSpec":
        return cls.from_dict(json.loads(text), base_dir=base_dir)

    def with_mask(self, mask: Mask | None, mask_path: str | None = None) -> "ObfuscationSpec":
        return replace(self, mask=mask, mask_path=mask_path)

    def with_seed(self, seed: int) -> "ObfuscationSpec":
        if self.method != "dp_pix":
            return self
        return replace(self, seed=seed)


def load_mask(path: str | os.PathLike) -> Mask:
    """Read a mask stored as a P5 file with bytes 0 (keep) and 255 (obfuscate)."""
    from .tensorio import load_pnm
    img = load_pnm(path)
    if img.channels != 1:
        raise ValueError(f"{path}: mask must be grayscale P5")
    q = quantize(img)[0]
    if not np.isin(q, (0, 255)).all():
        raise ValueError(f"{path}: mask bytes must be exactly 0 or 255")
    return Mask((q == 255).astype(np.uint8))


def apply_full(x: ImageTensor, spec: ObfuscationSpec) -> ImageTensor:
    """The operator itself, over the whole image, ignoring any mask."""
    if spec.method == "crop":
        return ImageTensor(np.zeros_like(x.data))
    if spec.method == "pil_blur":
        return pil_blur(x, spec.radius)
    if spec.method == "box_blur":
        return box_blur(x, *spec.kernel_dims)
    if spec.method == "pixelize":
        return pixelize(x, *spec.blocks)
    if spec.method == "dp_pix":
        return dp_pix(x, *spec.blocks, spec.sigma, spec.seed)
    raise AssertionError(spec.method)


def blend_mask(spec: ObfuscationSpec) -> np.ndarray:
    """The effective blending weights Mt in [0, 1] for masked application.

    Blur methods soften the hard mask by blurring it (pipeline A) at
    mask_blur_radius; the other methods use the hard mask unchanged.
    """
    if spec.mask is None:
        raise ValueError("spec has no mask")
    hard = spec.mask.bits.astype(np.float64)
    if spec.method in ("pil_blur", "box_blur"):
        if spec.mask_blur_radius is None:
            raise ValueError("masked blur requires mask_blur_radius")
        if spec.mask_blur_radius > 0:
            mimg = ImageTensor(hard[None])
            return pil_blur(mimg, spec.mask_blur_radius).data[0]
    return hard


def masked_apply(x: ImageTensor, spec: ObfuscationSpec) -> ImageTensor:
    """Blend the obfuscated image into the original under the (soft) mask.

    out = x * (1 - Mt) + G(x) * Mt, pointwise. Pixels with Mt = 0 stay
    bit-identical to the input.
    """
    if spec.mask is None:
        raise ValueError("masked_apply requires spec.mask")
    spec.mask.check_matches(x)
    mt = blend_mask(spec)
    gx = apply_full(x, spec)
    out = x.data * (1.0 - mt[None]) + gx.data * mt[None]
    return ImageTensor(out)


def apply_spec(x: ImageTensor, spec: ObfuscationSpec) -> ImageTensor:
    """Dispatch: masked application when a mask is present, else full image.

    A crop spec without a mask crops everything (full-image mask).
    """
    if spec.mask is not None:
        return masked_apply(x, spec)
    if spec.method == "crop":
        return crop_obfuscate(x, Mask.full(x.height, x.width))
    return apply_full(x, spec)


# ---------------------------------------------------------------------------
# Parameter presets
#
# Radius presets scale with the image diagonal: digits use diag/10 (Small)
# and diag/7 (Large); license plates use diag/50 and diag/40.


def _diag(width: int, height: int) -> float:
    return math.hypot(width, height)


def preset_spec(name: str, width: int, height: int, seed: int | None = None) -> ObfuscationSpec:
    """Materialize a named preset for a given image size."""
    d = _diag(width, height)
    table: dict[str, ObfuscationSpec] = {
        "blur-small": ObfuscationSpec("pil_blur", radius=d / 10.0),
        "blur-large": ObfuscationSpec("pil_blur", radius=d / 7.0),
        "plate-blur-small": ObfuscationSpec("pil_blur", radius=d / 50.0),
        "plate-blur-large": ObfuscationSpec("pil_blur", radius=d / 40.0),
        "box-7x7": ObfuscationSpec("box_blur", kernel_dims=(7, 7)),
        "pixelize-1x1": ObfuscationSpec("pixelize", blocks=(1, 1)),
        "pixelize-2x2": ObfuscationSpec("pixelize", blocks=(2, 2)),
        "pixelize-4x4": ObfuscationSpec("pixelize", blocks=(4, 4)),
        "dppix-2x2": ObfuscationSpec("dp_pix", blocks=(2, 2), sigma=0.04,
                                     seed=seed if seed is not None else 0),
        "dppix-4x4": ObfuscationSpec("dp_pix", blocks=(4, 4), sigma=0.04,
                                     seed=seed if seed is not None else 0),
        "crop": ObfuscationSpec("crop"),
    }
    if name not in table:
        raise ValueError(f"unknown preset {name!r}, expected one of {sorted(table)}")
    return table[name]


PRESET_NAMES = ("blur-small", "blur-large", "plate-blur-small", "plate-blur-large",
                "box-7x7", "pixelize-1x1", "pixelize-2x2", "pixelize-4x4",
                "dppix-2x2", "dppix-4x4", "crop")

# the eight-row benchmark grid used by the discrimination report
TABLE_ROWS = ("blur-small", "blur-large", "pixelize-4x4", "pixelize-2x2",
              "pixelize-1x1", "dppix-4x4", "dppix-2x2", "crop")


# ---------------------------------------------------------------------------
# Golden fixture checking
#
# Layout: fixtures/<lib>/<case>/{input.pnm, params.json, output.pnm} with an
# optional mask.pgm for masked blend cases. The DEOBFUSC_FIXTURES environment
# variable overrides the default directory.


def default_fixture_dir() -> str:
    env = os.environ.get("DEOBFUSC_FIXTURES")
    if env:
        return env
    here = os.path.dirname(os.path.abspath(__file__))
    return os.path.normpath(os.path.join(here, "..", "..", "fixtures"))


def list_fixture_cases(fixture_dir: str | None = None) -> list[str]:
    root = fixture_dir or default_fixture_dir()
    cases = []
    if not os.path.isdir(root):
        return cases
    for lib in sorted(os.listdir(root)):
        libdir = os.path.join(root, lib)
        if not os.path.isdir(libdir):
            continue
        for name in sorted(os.listdir(libdir)):
            case = os.path.join(libdir, name)
            if os.path.isfile(os.path.join(case, "params.json")):
                cases.append(case)
    return cases


def run_fixture_case(case_dir: str) -> tuple[bool, str]:
    """Recompute one golden case and byte-compare against its output file."""
    from .tensorio import load_pnm
    with open(os.path.join(case_dir, "params.json")) as fh:
        params = json.load(fh)
    x = load_pnm(os.path.join(case_dir, "input.pnm"))
    lib = params["library"]
    if lib == "pil":
        got = pil_blur(x, params["radius"])
    elif lib == "opencv":
        got = box_blur(x, *params["kernel"])
    elif lib == "masked":
        mask = load_mask(os.path.join(case_dir, params["mask"]))
        if params["method"] == "pil_blur":
            spec = ObfuscationSpec("pil_blur", radius=params["radius"], mask=mask,
                                   mask_blur_radius=params["mask_blur_radius"])
        else:
            spec = ObfuscationSpec("box_blur", kernel_dims=tuple(params["kernel"]),
                                   mask=mask, mask_blur_radius=params["mask_blur_radius"])
        got = masked_apply(x, spec)
    else:
        return False, f"unknown fixture library {lib!r}"
    want = quantize(load_pnm(os.path.join(case_dir, "output.pnm")))
    got_q = quantize(got)
    if got_q.shape != want.shape:
        return False, f"shape {got_q.shape} vs expected {want.shape}"
    if not np.array_equal(got_q, want):
        ndiff = int((got_q != want).sum())
        worst = int(np.abs(got_q.astype(np.int16) - want.astype(np.int16)).max())
        return False, f"{ndiff} bytes differ (max abs {worst})"
    return True, "ok"
