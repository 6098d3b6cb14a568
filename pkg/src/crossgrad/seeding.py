"""Counter-based RNGs constructed from structured seeds.

All randomness in the package flows through Philox generators keyed by
a master seed plus integer tags (purpose, agent index, epoch, ...), so
any stream can be reconstructed in isolation and results never depend
on draw order elsewhere in the program.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def seed_sequence(*entropy: int) -> np.random.SeedSequence:
    """SeedSequence over the given integer tags (wrapped to uint64)."""
    if not entropy:
        raise ValueError("at least one entropy term is required")
    return np.random.SeedSequence([int(e) & _MASK64 for e in entropy])


def make_rng(*entropy: int) -> np.random.Generator:
    """A Philox generator keyed by the given integer tags."""
    return np.random.Generator(np.random.Philox(seed_sequence(*entropy)))


def subseed(*entropy: int) -> int:
    """A derived 64-bit seed, for APIs that take a single integer."""
    return int(seed_sequence(*entropy).generate_state(1, np.uint64)[0])
