"""Deterministic seed derivation: every RNG in the pipeline is a named child
of one experiment seed, so reruns are reproducible end to end."""

import zlib

import numpy as np


def sub_seed(root_seed: int, name: str) -> int:
    """Derive a stable 32-bit sub-seed from a root seed and a stage name."""
    return (int(root_seed) * 0x9E3779B1 + zlib.crc32(name.encode("utf-8"))) % (2**32)


def rng_for(root_seed: int, name: str) -> np.random.Generator:
    """Seeded generator for a named pipeline stage."""
    return np.random.default_rng(sub_seed(root_seed, name))
