"""
Named, reproducible random substreams derived from one master seed.
"""
import hashlib

import numpy as np


def stream_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:4], "big")


def seed_sequence(master_seed: int, name: str, *indices: int) -> np.random.SeedSequence:
    """SeedSequence for (name, indices); independent of how many other streams were drawn."""
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(stream_key(name), *map(int, indices)))


def make_rng(master_seed: int, name: str, *indices: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master_seed, name, *indices))


def derive_seed(master_seed: int, name: str, *indices: int) -> int:
    """A 63-bit integer seed for APIs that take ints (e.g. gymnasium reset)."""
    state = seed_sequence(master_seed, name, *indices).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
