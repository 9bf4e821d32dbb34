"""Project-wide random number generation.

Every randomized routine takes an integer seed and builds a PCG64 generator
from it, so results are pure functions of (inputs, seed). ``child_seeds``
derives independent streams for sub-jobs.
"""

from __future__ import annotations

from typing import List

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def child_seeds(seed: int, n: int) -> List[int]:
    seqs = np.random.SeedSequence(int(seed)).spawn(n)
    return [int(s.generate_state(1, dtype=np.uint32)[0]) for s in seqs]
