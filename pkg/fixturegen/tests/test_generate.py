"""Generator-side checks: determinism, version pinning, case coverage."""

import filecmp
import math
import os

import numpy as np
import pytest

from fixturegen.generate import (
    CASES,
    PINNED_VERSIONS,
    check_versions,
    generate_fixtures,
    noise_image,
    write_pnm,
)


def tree_files(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dirpath, f)
            out[os.path.relpath(p, root)] = p
    return out


def test_regeneration_is_byte_identical(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    generate_fixtures(str(a))
    generate_fixtures(str(b))
    fa, fb = tree_files(a), tree_files(b)
    assert fa.keys() == fb.keys()
    for rel in fa:
        assert filecmp.cmp(fa[rel], fb[rel], shallow=False), f"{rel} differs between runs"


def test_committed_fixtures_match_regeneration(tmp_path):
    repo_fixtures = os.path.join(os.path.dirname(__file__), "..", "..", "fixtures")
    repo_fixtures = os.path.normpath(repo_fixtures)
    if not os.path.isdir(repo_fixtures):
        pytest.skip("no committed fixtures directory")
    fresh = tmp_path / "fresh"
    generate_fixtures(str(fresh))
    fa, fb = tree_files(fresh), tree_files(repo_fixtures)
    assert fa.keys() == fb.keys(), "committed fixture set diverged from the case table"
    for rel in fa:
        assert filecmp.cmp(fa[rel], fb[rel], shallow=False), f"{rel} differs from committed"


def test_version_mismatch_refuses(monkeypatch):
    monkeypatch.setitem(PINNED_VERSIONS, "pillow", "0.0.0")
    with pytest.raises(RuntimeError, match="version mismatch"):
        check_versions()


def test_case_coverage():
    by_lib = {}
    for c in CASES:
        by_lib.setdefault(c.library, []).append(c)
    assert len(by_lib["pil"]) >= 5
    assert len(by_lib["opencv"]) >= 5
    assert len(by_lib["masked"]) >= 3

    # the 210x210 kernel-7 case must exist
    plate7 = [c for c in by_lib["opencv"] if c.params.get("kernel") == [7, 7]
              and c.build_input().shape[:2] == (210, 210)]
    assert plate7, "missing 210x210 kernel-7 case"

    # radii must span the small and large digit presets
    diag = math.hypot(28, 28)
    radii = {c.params["radius"] for c in by_lib["pil"]}
    assert diag / 10.0 in radii
    assert diag / 7.0 in radii


def test_masked_cases_carry_mask_and_multiplier():
    for c in CASES:
        if c.library != "masked":
            continue
        assert c.build_mask is not None
        assert c.params["mask"] == "mask.pgm"
        assert c.params["mask_blur_radius"] > 0


def test_pnm_writer_header(tmp_path):
    p = tmp_path / "x.pgm"
    write_pnm(str(p), np.arange(6, dtype=np.uint8).reshape(2, 3))
    data = p.read_bytes()
    assert data == b"P5\n3 2\n255\n" + bytes(range(6))


def test_noise_image_is_version_free():
    # frozen first bytes of the LCG stream; protects against accidental
    # switches to a library RNG
    assert noise_image(2, 3, state=12345).flatten().tolist() == [5, 4, 139, 162, 232, 28]
    assert np.array_equal(noise_image(4, 4, state=1), noise_image(4, 4, state=1))
