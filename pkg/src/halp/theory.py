"""Closed-form step sizes, epoch lengths, bit requirements and error floors.

``gamma`` in (0, 1) is the per-epoch contraction target: larger values mean
shorter epochs and a looser guarantee.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


class InfeasiblePrecisionError(ValueError):
    """The bit width is too small for the requested contraction."""


@dataclass(frozen=True)
class ProblemConstants:
    L: float
    mu: float
    d: int

    def __post_init__(self):
        if not (self.mu > 0 and self.L >= self.mu):
            raise ValueError(f"need L >= mu > 0, got L={self.L}, mu={self.mu}")
        if self.d < 1:
            raise ValueError("d must be >= 1")

    @property
    def kappa(self) -> float:
        return self.L / self.mu


def _check_gamma(gamma):
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")


def step_size(gamma: float, L: float) -> float:
    _check_gamma(gamma)
    if not L > 0:
        raise ValueError("L must be > 0")
    return gamma / (4 * L * (1 + gamma))


def epoch_length_lpsvrg(gamma: float, kappa: float) -> int:
    _check_gamma(gamma)
    if not kappa >= 1:
        raise ValueError("kappa must be >= 1")
    return math.ceil(8 * kappa * (1 + gamma) / gamma**2)


def halp_bit_bound(gamma: float, kappa: float, d: int) -> float:
    """Real-valued lower bound that the bit width must strictly exceed."""
    _check_gamma(gamma)
    return 1 + math.log2(1 + math.sqrt(2 * kappa**2 * d * (1 + gamma) / gamma**2))


def min_bits_halp(gamma: float, kappa: float, d: int) -> int:
    bound = halp_bit_bound(gamma, kappa, d)
    b = math.floor(bound) + 1
    # strict inequality also has to hold for the epoch-length denominator
    while _halp_denominator(gamma, kappa, d, b) <= 0:
        b += 1
    return b


def _halp_denominator(gamma, kappa, d, b):
    return gamma**2 - 2 * kappa**2 * d * (1 + gamma) / float((1 << (b - 1)) - 1) ** 2


def epoch_length_halp(gamma: float, kappa: float, d: int, b: int) -> int:
    _check_gamma(gamma)
    if b < 2:
        raise InfeasiblePrecisionError("need at least 2 bits")
    den = _halp_denominator(gamma, kappa, d, b)
    if den <= 0:
        raise InfeasiblePrecisionError(
            f"{b} bits cannot reach contraction {gamma} at kappa={kappa}, d={d}")
    return math.ceil(8 * kappa * (1 + gamma) / den)


def accuracy_floor(delta: float, d: int, L: float, gamma: float) -> float:
    """Objective-gap plateau of LP-SVRG on a fixed (delta, b) lattice."""
    _check_gamma(gamma)
    return 2 * d * delta**2 * L / (gamma * (1 - gamma))


def halp_scale(grad_norm: float, mu: float, b: int) -> float:
    """Lattice spacing whose largest value is exactly ``grad_norm / mu``."""
    if not mu > 0:
        raise ValueError("mu must be > 0")
    return grad_norm / (mu * ((1 << (b - 1)) - 1))
