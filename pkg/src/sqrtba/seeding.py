"""Deterministic seed derivation for independent RNG streams.

Builtin ``hash()`` is salted per process, so all stream seeds are derived
with sha256 over a canonical tag path instead.
"""

import hashlib


def derive_seed(master: int, *parts) -> int:
    """Derive a 64-bit child seed from a master seed and a tag path.

    Stable across runs, platforms and Python versions. Parts may be ints,
    strings or (nested) tuples of those.
    """
    h = hashlib.sha256()
    h.update(str(int(master)).encode())
    for p in parts:
        h.update(b"/")
        h.update(repr(p).encode())
    return int.from_bytes(h.digest()[:8], "big")
