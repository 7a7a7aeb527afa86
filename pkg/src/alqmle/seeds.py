"""Stable derivation of child seeds from a master seed.

``derive_seed(master, [(name, index), ...])`` folds each label into the
state with BLAKE2b (8-byte digest):

    state <- blake2b(state as 8 LE bytes
                     || len(name) as 4 LE bytes || name as UTF-8
                     || index as 8 LE bytes, signed)

The result is the final state, so an empty label list returns ``master``.
Only byte-level operations are involved, so the output is the same on every
platform.
"""

import hashlib

__all__ = ["derive_seed"]

_MASK = 2 ** 64


def derive_seed(master, labels=()):
    master = int(master)
    if not 0 <= master < _MASK:
        raise ValueError(f"master seed must fit in 64 unsigned bits, got {master}")
    state = master
    for name, index in labels:
        raw = str(name).encode("utf-8")
        h = hashlib.blake2b(digest_size=8)
        h.update(state.to_bytes(8, "little"))
        h.update(len(raw).to_bytes(4, "little"))
        h.update(raw)
        h.update(int(index).to_bytes(8, "little", signed=True))
        state = int.from_bytes(h.digest(), "little")
    return state
