"""Counter-based derivation of independent random streams.

Every random draw in an experiment comes from a stream keyed by the tuple
(master_seed, purpose, worker, round).  Streams are created on demand, so
results never depend on the order in which workers or seeds are processed.

Purpose tags:

    DATA    synthetic dataset generation (per worker)
    INIT    local model initialization (per worker)
    NOISE   output-noise injection into shared real datasets (per worker)
    PSEUDO  pseudo-input generation and reference-worker draw (per experiment;
            deliberately independent of the round counter so the same
            pseudo-input sequence is regenerated every round)
"""

from __future__ import annotations

import numpy as np

DATA = 0
INIT = 1
NOISE = 2
PSEUDO = 3


def substream(master_seed: int, purpose: int, worker: int = 0, round_: int = 0) -> np.random.Generator:
    """Independent generator for one (seed, purpose, worker, round) cell."""
    if master_seed < 0:
        raise ValueError("master seed must be nonnegative")
    key = (int(master_seed), int(purpose), int(worker), int(round_))
    return np.random.default_rng(np.random.SeedSequence(key))
