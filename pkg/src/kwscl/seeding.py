"""Master-seed splitting.

Every random draw in the toolkit is keyed off one master seed with
``derive_seed(master, *keys)``; the rule is blake2b over the
colon-joined string form of the key tuple, truncated to 63 bits.
"""

import hashlib

import numpy as np


def derive_seed(master: int, *keys) -> int:
    text = ":".join([str(int(master))] + [str(k) for k in keys])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & ((1 << 63) - 1)


def rng_for(master: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))
