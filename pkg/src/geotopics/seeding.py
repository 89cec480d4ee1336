"""Labeled seed derivation: one master seed, stable per-subsystem streams."""

import hashlib


def derive_seed(master: int, label: str) -> int:
    """Derive a 32-bit seed from a master seed and a purpose label.

    The mapping is a fixed hash, so the same (master, label) pair yields the
    same stream on every platform and run.
    """
    digest = hashlib.sha256(f"{master}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")
