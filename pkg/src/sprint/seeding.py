"""Seed splitting.

Every random stream is derived from one integer seed and a role label:
the first 8 bytes (little-endian) of ``sha256(f"{seed}:{label}")`` form a
64-bit sub-seed, which is fed to ``numpy.random.default_rng``. Labels in use:
``init``, ``shuffle``, ``split``, ``synth``, ``random-heads/<k>``.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, label))
