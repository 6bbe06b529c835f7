"""Deterministic seed derivation helpers.

All randomness in the package flows through explicit seeds. These helpers
derive independent child seeds from a root seed (or a tuple of keys) so
that separate consumers never share or collide streams.
"""

from __future__ import annotations

import numpy as np

_MAX_SEED = 2**31 - 1


def derive_seed(*keys: int) -> int:
    """Derive a single seed from an ordered tuple of integer keys."""
    ss = np.random.SeedSequence(list(keys))
    return int(ss.generate_state(1)[0]) % _MAX_SEED


def spawn_seeds(seed: int, n: int) -> list[int]:
    """Derive ``n`` independent child seeds from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1)[0]) % _MAX_SEED for c in children]
