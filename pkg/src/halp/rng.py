"""Seedable xorshift64* generator used for stochastic rounding and sampling.

The generator is Vigna's xorshift64* (shifts 12, 25, 27; output multiplier
0x2545F4914F6CDD1D), seeded through one round of splitmix64 so that any
64-bit seed, including 0, yields a nonzero state.  Uniform doubles take the
top 53 bits of each output.  Indices in ``[0, n)`` are ``floor(u * n)``.

These choices are frozen: changing any of them changes every trace.

The state lives in a one-element ``uint64`` array so numba kernels can
advance it in place.
"""
from __future__ import annotations

import numpy as np
from numba import njit

_MASK64 = (1 << 64) - 1
_MULT = np.uint64(0x2545F4914F6CDD1D)
_S12 = np.uint64(12)
_S25 = np.uint64(25)
_S27 = np.uint64(27)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, stream: int) -> int:
    """Deterministic child seed for stream ``stream`` of a run seeded with ``seed``."""
    return splitmix64((seed & _MASK64) ^ splitmix64(stream & _MASK64))


@njit(cache=True)
def next_u64(state):
    x = state[0]
    x ^= x >> _S12
    x ^= x << _S25
    x ^= x >> _S27
    state[0] = x
    return x * _MULT


@njit(cache=True)
def next_double(state):
    return np.float64(next_u64(state) >> _S11) * _INV53


@njit(cache=True)
def next_index(state, n):
    return np.int64(next_double(state) * n)


@njit(cache=True)
def _fill_doubles(state, out):
    for j in range(out.shape[0]):
        out[j] = next_double(state)


@njit(cache=True)
def _fill_u64(state, out):
    for j in range(out.shape[0]):
        out[j] = next_u64(state)


@njit(cache=True)
def _fill_indices(state, n, out):
    for j in range(out.shape[0]):
        out[j] = next_index(state, n)


class QuantRng:
    """Single-owner xorshift64* stream.

    Two instances built from the same seed produce identical outputs for
    identical call sequences.  Not safe for concurrent use; give each worker
    its own instance via :func:`derive_seed`.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _MASK64
        s = splitmix64(self.seed)
        self.state = np.array([s if s else 0x9E3779B97F4A7C15], dtype=np.uint64)

    def next_u64(self) -> int:
        return int(next_u64(self.state))

    def random(self, size: int | None = None):
        if size is None:
            return float(next_double(self.state))
        out = np.empty(int(size), dtype=np.float64)
        _fill_doubles(self.state, out)
        return out

    def integers(self, n: int, size: int | None = None):
        """Uniform indices in ``[0, n)``."""
        if n < 1:
            raise ValueError("n must be >= 1")
        if size is None:
            return int(next_index(self.state, n))
        out = np.empty(int(size), dtype=np.int64)
        _fill_indices(self.state, n, out)
        return out

    def raw(self, size: int) -> np.ndarray:
        out = np.empty(int(size), dtype=np.uint64)
        _fill_u64(self.state, out)
        return out

    def getstate(self) -> int:
        return int(self.state[0])

    def setstate(self, value: int) -> None:
        self.state[0] = np.uint64(value & _MASK64)

    def __repr__(self):
        return f"QuantRng(seed={self.seed})"
