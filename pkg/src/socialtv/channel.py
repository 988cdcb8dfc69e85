"""Fading channel states: rate, per-bit communication cost, and segment delays.

Power gains are drawn directly from an exponential distribution, which is the
power-domain law of a Rayleigh amplitude. Rates use ``log2`` (bits/s).

The per-bit cost keeps the bandwidth in the denominator so that the units
work out (cost/s divided by bits/s). With the default constants
(``power_cost_rate * tx_power == bandwidth_hz``) this gives
``b = 1 / log2(1 + h)``, i.e. an order-one per-bit cost comparable to the
storage cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ChannelError(ValueError):
    """Raised for dead (zero-rate) channels."""


@dataclass(frozen=True)
class ChannelConstants:
    bandwidth_hz: float = 2e6
    tx_power: float = 1.0
    power_cost_rate: float = 2e6
    mean_gain: float = 1.0

    def __post_init__(self):
        for name in ("bandwidth_hz", "tx_power", "power_cost_rate", "mean_gain"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class ChannelState:
    gain_to_noise: float
    rate_bps: float
    cost_per_bit: float


def sample_gain(rng: np.random.Generator, constants: ChannelConstants, size=None):
    """Draw gain-to-noise ratio(s), exponential with mean ``constants.mean_gain``."""
    return rng.exponential(constants.mean_gain, size=size)


def transmission_rate(h, constants: ChannelConstants):
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("gain_to_noise must be nonnegative")
    rate = constants.bandwidth_hz * np.log2(1.0 + h * constants.tx_power)
    return float(rate) if rate.ndim == 0 else rate


def cost_per_bit(h, constants: ChannelConstants):
    rate = np.asarray(transmission_rate(h, constants))
    if np.any(rate <= 0):
        raise ChannelError("zero-rate channel")
    cost = constants.power_cost_rate * constants.tx_power / rate
    return float(cost) if cost.ndim == 0 else cost


def channel_state(h: float, constants: ChannelConstants) -> ChannelState:
    rate = transmission_rate(h, constants)
    cost = cost_per_bit(h, constants) if rate > 0 else float("inf")
    return ChannelState(float(h), rate, cost)


def transmission_delay(segment_bits, rate_bps):
    rate = np.asarray(rate_bps, dtype=float)
    if np.any(rate <= 0):
        raise ChannelError("zero-rate channel")
    delay = np.asarray(segment_bits, dtype=float) / rate
    return float(delay) if delay.ndim == 0 else delay


def play_delay(transmission_delay, segment_duration):
    """Stall experienced beyond the segment's own playback time, ``(D - T)+``."""
    out = np.maximum(np.asarray(transmission_delay, dtype=float) - segment_duration, 0.0)
    return float(out) if out.ndim == 0 else out
