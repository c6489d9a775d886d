"""Emit golden (input, params, output) triples from the reference libraries.

Every input image is procedural integer arithmetic (no library RNG), so the
fixture set is a pure function of this file plus the pinned library
versions. Regenerating with matching versions is byte-identical; a version
mismatch refuses to emit rather than silently shifting bytes.

Masked cases: the blend itself is the documented formula
    out = x * (1 - mt) + blur(x) * mt
computed in float64 on unit-range values and quantized half away from zero,
where mt is the reference Gaussian blur of the {0,255} mask rescaled to
[0, 1]. The reference libraries contribute the blur components.
"""

from __future__ import annotations

import argparse
import json
import math
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

PINNED_VERSIONS = {
    "pillow": "12.2.0",
    "opencv": "5.0.0",
}


def _installed_versions() -> dict:
    import PIL
    import cv2
    return {"pillow": PIL.__version__, "opencv": cv2.__version__, "numpy": np.__version__}


def check_versions() -> dict:
    got = _installed_versions()
    bad = {k: (v, got[k]) for k, v in PINNED_VERSIONS.items() if got[k] != v}
    if bad:
        detail = ", ".join(f"{k}: pinned {p} vs installed {i}" for k, (p, i) in bad.items())
        raise RuntimeError(f"refusing to emit fixtures, version mismatch: {detail}")
    return got


# ---------------------------------------------------------------------------
# Procedural input images (all deterministic integer arithmetic)


def _lcg_bytes(n: int, state: int = 12345) -> np.ndarray:
    out = np.empty(n, dtype=np.uint8)
    for i in range(n):
        state = (1664525 * state + 1013904223) % (1 << 32)
        out[i] = state >> 24
    return out


def noise_image(h: int, w: int, channels: int = 1, state: int = 12345) -> np.ndarray:
    return _lcg_bytes(h * w * channels, state).reshape(h, w) if channels == 1 \
        else _lcg_bytes(h * w * channels, state).reshape(h, w, channels)


def gradient_image(h: int, w: int) -> np.ndarray:
    y = np.arange(h)[:, None]
    x = np.arange(w)[None, :]
    return (((x + y) * 255) // (h + w - 2)).astype(np.uint8)


def disk_image(h: int, w: int, value: int = 230, bg: int = 25) -> np.ndarray:
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    r = min(h, w) * 0.32
    y = np.arange(h)[:, None]
    x = np.arange(w)[None, :]
    img = np.full((h, w), bg, np.uint8)
    img[(y - cy) ** 2 + (x - cx) ** 2 <= r * r] = value
    return img


def rings_image(h: int, w: int) -> np.ndarray:
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    y = np.arange(h)[:, None]
    x = np.arange(w)[None, :]
    d = np.sqrt((y - cy) ** 2 + (x - cx) ** 2)
    return np.where((d.astype(np.int64) // 3) % 2 == 0, 240, 15).astype(np.uint8)


def plate_image(size: int = 210, rgb: bool = False) -> np.ndarray:
    """A license-plate-like card: bright field, dark border, blocky glyphs."""
    img = np.full((size, size), 225, np.uint8)
    b = size // 21
    img[:b, :] = 40
    img[-b:, :] = 40
    img[:, :b] = 40
    img[:, -b:] = 40
    # six glyph slots in the middle band
    top, bot = int(size * 0.38), int(size * 0.62)
    slot = (size - 4 * b) // 6
    for k in range(6):
        x0 = 2 * b + k * slot + slot // 5
        x1 = 2 * b + (k + 1) * slot - slot // 5
        img[top:bot, x0:x1] = 35
        # carve a horizontal notch so glyphs differ
        if k % 2 == 0:
            mid = (top + bot) // 2
            img[mid - 2:mid + 2, x0:x1] = 225
        else:
            img[top:top + 4, x0:x1] = 225
    if not rgb:
        return img
    rgbv = np.stack([img, np.roll(img, 3, axis=1), np.roll(img, -3, axis=0)], axis=-1)
    return rgbv


def circle_mask(h: int, w: int, frac: float = 0.3) -> np.ndarray:
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    r = min(h, w) * frac
    y = np.arange(h)[:, None]
    x = np.arange(w)[None, :]
    return ((y - cy) ** 2 + (x - cx) ** 2 <= r * r).astype(np.uint8)


def rect_mask(h: int, w: int) -> np.ndarray:
    m = np.zeros((h, w), np.uint8)
    m[h // 4: 3 * h // 4, w // 4: 3 * w // 4] = 1
    return m


# ---------------------------------------------------------------------------
# PNM writing (the shared on-disk interface with the main package)


def write_pnm(path: str, arr: np.ndarray) -> None:
    if arr.ndim == 2:
        header = b"P5\n%d %d\n255\n" % (arr.shape[1], arr.shape[0])
        payload = arr.astype(np.uint8).tobytes()
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = b"P6\n%d %d\n255\n" % (arr.shape[1], arr.shape[0])
        payload = arr.astype(np.uint8).tobytes()
    else:
        raise ValueError(f"cannot write shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(header + payload)


def quantize_unit(v: np.ndarray) -> np.ndarray:
    """Unit-range floats to bytes, half away from zero (values are >= 0)."""
    return np.floor(np.clip(v, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


# ---------------------------------------------------------------------------
# Reference pipelines


def pil_gaussian(arr: np.ndarray, radius: float) -> np.ndarray:
    from PIL import Image, ImageFilter
    mode = "L" if arr.ndim == 2 else "RGB"
    im = Image.fromarray(arr, mode).filter(ImageFilter.GaussianBlur(radius))
    return np.asarray(im)


def cv_box(arr: np.ndarray, kw: int, kh: int) -> np.ndarray:
    import cv2
    return cv2.blur(arr, (kw, kh))


def blend_output(inp: np.ndarray, blurred: np.ndarray, mask: np.ndarray,
                 mask_blur_radius: float) -> np.ndarray:
    mt = pil_gaussian((mask * 255).astype(np.uint8), mask_blur_radius).astype(np.float64) / 255.0
    if inp.ndim == 3:
        mt = mt[..., None]
    x = inp.astype(np.float64) / 255.0
    g = blurred.astype(np.float64) / 255.0
    return quantize_unit(x * (1.0 - mt) + g * mt)


# ---------------------------------------------------------------------------
# Case table


_DIGIT_DIAG = math.hypot(28, 28)
_PLATE_DIAG = math.hypot(210, 210)


@dataclass(frozen=True)
class FixtureCase:
    name: str
    library: str  # pil | opencv | masked
    build_input: Callable[[], np.ndarray]
    params: dict
    build_mask: Callable[[], np.ndarray] | None = None

    def compute_output(self, inp: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
        if self.library == "pil":
            return pil_gaussian(inp, self.params["radius"])
        if self.library == "opencv":
            kw, kh = self.params["kernel"]
            return cv_box(inp, kw, kh)
        if self.library == "masked":
            if self.params["method"] == "pil_blur":
                blurred = pil_gaussian(inp, self.params["radius"])
            else:
                kw, kh = self.params["kernel"]
                blurred = cv_box(inp, kw, kh)
            return blend_output(inp, blurred, mask, self.params["mask_blur_radius"])
        raise AssertionError(self.library)


CASES: tuple[FixtureCase, ...] = (
    # pipeline A, radii spanning the digit and plate presets
    FixtureCase("gradient-64-r4", "pil", lambda: gradient_image(64, 64),
                {"radius": 4.0}),
    FixtureCase("digit-small", "pil", lambda: disk_image(28, 28),
                {"radius": _DIGIT_DIAG / 10.0}),
    FixtureCase("digit-large", "pil", lambda: rings_image(28, 28),
                {"radius": _DIGIT_DIAG / 7.0}),
    FixtureCase("plate-small", "pil", lambda: plate_image(210),
                {"radius": _PLATE_DIAG / 50.0}),
    FixtureCase("plate-large", "pil", lambda: plate_image(210),
                {"radius": _PLATE_DIAG / 40.0}),
    FixtureCase("rgb-noise-r2.5", "pil", lambda: noise_image(32, 48, 3, state=77),
                {"radius": 2.5}),
    FixtureCase("tiny-clamp-r12", "pil", lambda: noise_image(5, 4, state=99),
                {"radius": 12.0}),
    FixtureCase("radius-zero", "pil", lambda: noise_image(16, 16, state=5),
                {"radius": 0.0, "note": "reference treats radius 0 as identity"}),
    FixtureCase("constant-r6", "pil", lambda: np.full((24, 24), 77, np.uint8),
                {"radius": 6.0}),
    # pipeline B, both normalization paths and the required plate case
    FixtureCase("plate-7x7", "opencv", lambda: plate_image(210),
                {"kernel": [7, 7]}),
    FixtureCase("plate-rgb-7x7", "opencv", lambda: plate_image(210, rgb=True),
                {"kernel": [7, 7]}),
    FixtureCase("identity-1x1", "opencv", lambda: noise_image(16, 16, state=31),
                {"kernel": [1, 1]}),
    FixtureCase("asym-3x17", "opencv", lambda: noise_image(40, 40, state=41),
                {"kernel": [3, 17]}),
    FixtureCase("area256-16x16", "opencv", lambda: noise_image(64, 64, state=53),
                {"kernel": [16, 16]}),
    FixtureCase("area400-20x20", "opencv", lambda: noise_image(48, 48, state=67),
                {"kernel": [20, 20]}),
    FixtureCase("constant-5x5", "opencv", lambda: np.full((24, 24), 200, np.uint8),
                {"kernel": [5, 5]}),
    # masked blends
    FixtureCase("blend-gray-blur", "masked", lambda: disk_image(64, 64, value=245, bg=60),
                {"method": "pil_blur", "radius": 6.0, "mask_blur_radius": 3.0,
                 "mask": "mask.pgm"},
                build_mask=lambda: circle_mask(64, 64)),
    FixtureCase("blend-rgb-blur", "masked", lambda: noise_image(48, 48, 3, state=83),
                {"method": "pil_blur", "radius": 4.0, "mask_blur_radius": 2.0,
                 "mask": "mask.pgm"},
                build_mask=lambda: rect_mask(48, 48)),
    FixtureCase("blend-box-blur", "masked", lambda: rings_image(40, 40),
                {"method": "box_blur", "kernel": [7, 7], "mask_blur_radius": 2.5,
                 "mask": "mask.pgm"},
                build_mask=lambda: rect_mask(40, 40)),
)


def generate_fixtures(out_dir: str) -> list[str]:
    """Write every case under out_dir/<library>/<name>/. Returns case dirs."""
    versions = check_versions()
    written = []
    for case in CASES:
        case_dir = os.path.join(out_dir, case.library, case.name)
        os.makedirs(case_dir, exist_ok=True)
        inp = case.build_input()
        mask = case.build_mask() if case.build_mask else None
        out = case.compute_output(inp, mask)
        write_pnm(os.path.join(case_dir, "input.pnm"), inp)
        write_pnm(os.path.join(case_dir, "output.pnm"), out)
        if mask is not None:
            write_pnm(os.path.join(case_dir, "mask.pgm"), (mask * 255).astype(np.uint8))
        params = dict(case.params)
        params["library"] = case.library
        params["versions"] = versions
        with open(os.path.join(case_dir, "params.json"), "w") as fh:
            json.dump(params, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(case_dir)
    return written


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="fixtures", help="output directory (default: fixtures)")
    args = ap.parse_args(argv)
    dirs = generate_fixtures(args.out)
    print(f"wrote {len(dirs)} fixture cases under {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
