"""Stable seed partitioning for experiments.

``sub_seed(master, experiment, grid_index, trial_index)`` is the first 8 bytes
(little-endian unsigned) of BLAKE2b with ``digest_size=8`` applied to the ASCII
string ``"{master}|{experiment}|{grid_index}|{trial_index}"``.
``component_seed(seed, label)`` applies the same hash to ``"{seed}|{label}"``.
Both can be reproduced from any language with a BLAKE2b implementation.
"""

from __future__ import annotations

import hashlib

DICTIONARY = "dictionary"
COEFFICIENTS = "coefficients"
NOISE = "noise"


def _hash64(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("ascii"), digest_size=8).digest(), "little")


def sub_seed(master_seed: int, experiment: str, grid_index: int, trial_index: int) -> int:
    return _hash64(f"{int(master_seed)}|{experiment}|{int(grid_index)}|{int(trial_index)}")


def component_seed(seed: int, label: str) -> int:
    return _hash64(f"{int(seed)}|{label}")
