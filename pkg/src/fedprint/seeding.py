"""Per-component seeds derived from one global seed.

``derive_seed(seed, "local-train", 3, 17)`` hashes the string
``"<seed>/local-train/3/17"`` with SHA-256 and keeps the first 8 bytes
(little-endian) as an unsigned 64-bit seed. Changing any path element gives an
unrelated stream; the same path always gives the same seed.
"""

import hashlib


def derive_seed(seed: int, *path) -> int:
    key = "/".join([str(int(seed))] + [str(p) for p in path])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")
