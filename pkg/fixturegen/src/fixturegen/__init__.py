"""Golden fixture generator for the deobfusc blur pipelines.

Invokes the reference image libraries at pinned versions and writes
(input, params, output) triples. Never imported by the main package;
the two only share the fixture directory layout and the PNM format.
"""

from .generate import CASES, PINNED_VERSIONS, generate_fixtures

__all__ = ["CASES", "PINNED_VERSIONS", "generate_fixtures"]
