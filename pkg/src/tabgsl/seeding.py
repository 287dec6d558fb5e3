"""Deterministic seed derivation.

A single root seed is expanded into independent component seeds (split,
anchor classifier, model init, per-epoch augmentation, search trials) by
hashing the root together with a text label. The rule is stable across
platforms and Python versions, so any run can be replayed from its
manifest.
"""

from __future__ import annotations

import hashlib

SEED_RULE = "sha256(root:label) mod 2**31"


def derive_seed(root: int, label: str) -> int:
    """Derive a component seed from a root seed and a label."""
    digest = hashlib.sha256(f"{root}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (2**31)
