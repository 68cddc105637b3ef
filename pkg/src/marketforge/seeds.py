"""Deterministic seed derivation.

Sub-seeds are derived by XOR-ing a master seed with a stable 63-bit hash of
string parts, so results never depend on registration order or process state.
"""

import hashlib


def stable_hash(*parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little") & (2**63 - 1)


def derive_seed(seed: int, *parts) -> int:
    return (int(seed) ^ stable_hash(*parts)) & (2**63 - 1)
