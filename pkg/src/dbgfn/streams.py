"""Counter-based random streams keyed by (seed, phase, round, slot).

Each stream is a Philox generator whose key comes from a ``SeedSequence``
spawned at ``(phase, round, slot)``, so a slot's randomness never depends on
how many other slots exist or in which order they are processed.
"""

from __future__ import annotations

import numpy as np

INIT, SAMPLE, REVISE, REPLAY, EVAL = range(5)


def seed_streams(master_seed: int, round: int, slot: int, phase: int = SAMPLE) -> np.random.Generator:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(phase), int(round), int(slot)))
    return np.random.Generator(np.random.Philox(ss))


def slot_streams(master_seed: int, round: int, n: int, phase: int = SAMPLE) -> list[np.random.Generator]:
    return [seed_streams(master_seed, round, i, phase) for i in range(n)]
