"""Named, order-independent random substreams derived from one master seed.

``substream(seed, "fit.cell.4.5411")`` always yields the same generator no
matter which other streams were requested before it, so adding a cell or a
district never perturbs the draws of the existing ones.
"""

import hashlib

import numpy as np


def _name_key(name: str) -> list[int]:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return [int.from_bytes(digest[k:k + 4], "little") for k in range(0, 16, 4)]


def seed_sequence(seed: int, name: str) -> np.random.SeedSequence:
    if seed is None:
        raise ValueError("a master seed is required")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=_name_key(name))


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, name))


def substream_seed(seed: int, name: str) -> int:
    """Integer seed for APIs that take a plain int (e.g. the swarm optimizer)."""
    return int(seed_sequence(seed, name).generate_state(1, dtype=np.uint64)[0] >> 1)
