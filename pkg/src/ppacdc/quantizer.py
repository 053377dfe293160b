"""Uniform saturating b-bit quantizer with a movable midpoint.

A frame ``(b, delta, sigma)`` has ``2**b - 1`` output levels
``sigma + delta * l`` for ``|l| <= 2**(b-1) - 1``. Level ``l`` travels on the
wire as the unsigned code ``l + 2**(b-1) - 1``.

The ``*_levels`` / ``*_values`` helpers broadcast over numpy arrays (including
per-agent ``delta`` and ``sigma`` arrays) and are what the round engine uses;
the frame-based functions are thin scalar front ends over the same arithmetic,
so both paths produce bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_BITS = 52  # every level index stays exactly representable in a float64


def top_level(b: int) -> int:
    return 2 ** (b - 1) - 1


def range_factor(b: int) -> float:
    return 2 ** (b - 1) - 0.5


@dataclass(frozen=True)
class QuantizerFrame:
    b: int
    delta: float
    sigma: float = 0.0

    def __post_init__(self) -> None:
        if not 2 <= self.b <= MAX_BITS:
            raise ValueError(f"b must be in [2, {MAX_BITS}], got {self.b}")
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise ValueError(f"delta must be finite and positive, got {self.delta}")
        if not np.isfinite(self.sigma):
            raise ValueError(f"sigma must be finite, got {self.sigma}")

    @property
    def top(self) -> int:
        return top_level(self.b)

    @property
    def dynamic_range(self) -> float:
        """Half-width q of the unsaturated input interval."""
        return range_factor(self.b) * self.delta

    def with_sigma(self, sigma: float) -> "QuantizerFrame":
        return QuantizerFrame(self.b, self.delta, sigma)


def quantize_levels(x, b: int, delta, sigma):
    """Signed level indices (as floats) of Q(x) for broadcastable inputs."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize a non-finite value")
    top = top_level(b)
    half = delta * range_factor(b)
    upper = sigma + half
    lower = sigma - half
    # Clamp only matters at x == upper exactly, where floor gives top + 1.
    idx = np.clip(np.floor((x - sigma) / delta + 0.5), -top, top)
    idx = np.where(x > upper, top, idx)
    return np.where(x <= lower, -top, idx)


def level_values(levels, delta, sigma):
    return sigma + delta * levels


def quantize_values(x, b: int, delta, sigma):
    return level_values(quantize_levels(x, b, delta, sigma), delta, sigma)


def encode_values(x, b: int, delta, sigma):
    return quantize_levels(x, b, delta, sigma).astype(np.int64) + top_level(b)


def decode_values(codes, b: int, delta, sigma):
    codes = np.asarray(codes, dtype=np.int64)
    if np.any(codes < 0) or np.any(codes > 2 * top_level(b)):
        raise ValueError(f"code outside [0, {2 * top_level(b)}] for b={b}: corrupted message")
    return level_values((codes - top_level(b)).astype(float), delta, sigma)


# -- frame-level scalar API ----------------------------------------------------


def quantize(x: float, f: QuantizerFrame) -> float:
    return float(quantize_values(x, f.b, f.delta, f.sigma))


def encode(x: float, f: QuantizerFrame) -> int:
    return int(encode_values(x, f.b, f.delta, f.sigma))


def decode(code: int, f: QuantizerFrame) -> float:
    return float(decode_values(code, f.b, f.delta, f.sigma))


def frame_limits(f: QuantizerFrame) -> tuple[float, float]:
    half = f.delta * range_factor(f.b)
    return f.sigma - half, f.sigma + half


def zoom_delta(delta, zeta, alpha: float):
    """Step-size update: grow by (1 + alpha) on +1, shrink on -1, hold on 0."""
    grown = delta * (1 + alpha)
    shrunk = delta / (1 + alpha)
    return np.where(zeta == 1, grown, np.where(zeta == -1, shrunk, delta))


def zoom(f: QuantizerFrame, zeta: int, alpha: float) -> QuantizerFrame:
    if zeta not in (-1, 0, 1):
        raise ValueError(f"zoom decision must be -1, 0 or 1, got {zeta}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return QuantizerFrame(f.b, float(zoom_delta(f.delta, zeta, alpha)), f.sigma)
