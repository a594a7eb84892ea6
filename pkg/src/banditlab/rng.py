"""Seeding helpers.

All randomness flows through numpy Generators backed by the Philox
counter-based engine, keyed on (base_seed, stream_index).  Philox keys are
splittable: distinct (seed, trial) pairs give statistically independent
streams, and the mapping is stable across processes and thread counts,
which is what makes reruns byte-identical.
"""

from __future__ import annotations

import numpy as np

__all__ = ["generator", "trial_generator"]


def generator(seed: int) -> np.random.Generator:
    """Deterministic generator for structure-level sampling."""
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, 0]))


def trial_generator(base_seed: int, trial: int) -> np.random.Generator:
    """Independent per-trial stream; stable under any execution order."""
    return np.random.Generator(
        np.random.Philox(key=[base_seed & 0xFFFFFFFFFFFFFFFF, trial & 0xFFFFFFFFFFFFFFFF])
    )
