# core/rng.py
"""
Seed handling.

SplitMix64 is only used to derive independent 64-bit seeds from a root seed
and a purpose (a pixel index, a method name, an epoch). The derived seeds
feed numpy's PCG64 generator, which gives identical streams on every
platform.
"""
import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(state):
    """One SplitMix64 output for the given 64-bit state."""
    z = (state + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _token(part):
    if isinstance(part, (int, np.integer)):
        return int(part) & MASK64
    # FNV-1a keeps string tokens stable across interpreter runs (no hash())
    value = 0xCBF29CE484222325
    for byte in str(part).encode('utf-8'):
        value = ((value ^ byte) * 0x100000001B3) & MASK64
    return value


def derive_seed(seed, *parts):
    """Mix a root seed with any number of int/str parts into a new seed."""
    state = splitmix64(int(seed) & MASK64)
    for part in parts:
        state = splitmix64(state ^ _token(part))
    return state


def make_rng(seed, *parts):
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *parts)))
