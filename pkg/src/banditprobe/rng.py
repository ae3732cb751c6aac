"""Seed derivation and generator construction.

All randomness flows from numpy's Philox-4x64 counter-based generator, whose
output for a given key is fixed by the Random123 reference vectors and is
identical across platforms. Keys are derived from a SHA-256 digest of the
seed path, e.g. ``(master_seed, condition_id, run_id, "env")``.
"""

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Hash an arbitrary path of ints/strings into a 128-bit integer seed."""
    text = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def make_generator(*parts) -> np.random.Generator:
    """Return a Philox generator keyed by ``derive_seed(*parts)``.

    A single integer argument is used as the key directly, so that
    ``make_generator(derive_seed(...))`` and ``make_generator(...)`` agree.
    """
    if len(parts) == 1 and isinstance(parts[0], (int, np.integer)) and not isinstance(parts[0], bool):
        key = int(parts[0]) % (1 << 128)
    else:
        key = derive_seed(*parts)
    return np.random.Generator(np.random.Philox(key=key))


def run_seeds(master_seed: int, condition_id: str, run_id: int) -> tuple[int, int]:
    """(env_seed, agent_seed) for one run of one condition."""
    base = derive_seed(master_seed, condition_id, run_id)
    return derive_seed(base, "env"), derive_seed(base, "agent")
