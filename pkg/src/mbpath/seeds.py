"""Deterministic seed derivation for independent replication streams.

A child seed is the ``index``-th output of a SplitMix64 generator whose
state starts at ``master``.  With ``master = 0`` the children are the
published SplitMix64 reference sequence (0xE220A8397B1DCDAF, ...), so the
scheme can be reproduced in any language from those vectors.
"""

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64_mix(z):
    """SplitMix64 output finalizer applied to a 64-bit state."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master, index):
    """Return the child seed number ``index`` of ``master`` (both >= 0)."""
    if index < 0:
        raise ValueError("seed index must be non-negative")
    state = (int(master) + (int(index) + 1) * GOLDEN_GAMMA) & MASK64
    return splitmix64_mix(state)


def derive_seeds(master, count):
    return [derive_seed(master, i) for i in range(count)]
