"""Seed mixing shared by every stochastic component.

All randomness in the package flows through :func:`rng_for`, which folds a
tuple of integers into one 64-bit seed with the SplitMix64 finalizer and
hands it to numpy's PCG64. The mixing is fixed so seeds mean the same thing
on every platform.
"""
import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x):
    """One SplitMix64 output for state ``x`` (state advanced by the golden gamma)."""
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def mix_seed(*parts):
    """Fold integers left to right: ``h = splitmix64(h ^ part)`` starting from 0."""
    h = 0
    for p in parts:
        h = splitmix64(h ^ (int(p) & _MASK))
    return h


def rng_for(*parts):
    return np.random.Generator(np.random.PCG64(mix_seed(*parts)))
