"""Radio topology, Rayleigh fading, SNR/BER/rate math, and bit-level corruption.

Uplink: each client transmits its R-bit quantized model over one OFDMA
subchannel with M-QAM modulation. Downlink: the base station broadcasts the
quantized global model; every client receives it through its own fading
draw. Errors are realized as independent per-bit flips of the level indices,
which reproduces the element error probability 1-(1-ber)^R exactly.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .dpq import QuantizedVector, gaussian_tail
from .errors import ConfigError


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class RadioConfig:
    """OFDMA cell parameters. Defaults match the simulated 10 MHz / 10-subchannel cell."""

    n_clients: int = 20
    n_subchannels: int = 10
    subchannel_bandwidth: float = 1e6     # Hz
    noise_density_dbm: float = -169.0     # dBm/Hz
    client_power_dbm: float = 23.0        # per-client max transmit power
    bs_power_dbm: float = 30.0            # broadcast power
    modulation_order: int = 256           # square M-QAM
    pathloss_ref_db: float = -30.0        # at 1 m
    pathloss_exponent: float = 2.8
    cell_radius_m: float = 100.0
    min_distance_m: float = 10.0
    tau_max: float = 0.01                 # max upload delay, seconds

    def __post_init__(self):
        if self.n_subchannels < 1:
            raise ConfigError("need at least one subchannel")
        if self.subchannel_bandwidth <= 0:
            raise ConfigError("bandwidth must be positive")
        root = round(math.sqrt(self.modulation_order))
        if root * root != self.modulation_order or root & (root - 1):
            raise ConfigError("modulation order must be a perfect-square power of 4")
        if not self.min_distance_m < self.cell_radius_m:
            raise ConfigError("min distance must be below the cell radius")

    @property
    def noise_power_w(self) -> float:
        return dbm_to_watts(self.noise_density_dbm) * self.subchannel_bandwidth

    @property
    def client_power_w(self) -> float:
        return dbm_to_watts(self.client_power_dbm)

    @property
    def bs_power_w(self) -> float:
        return dbm_to_watts(self.bs_power_dbm)


def path_loss_linear(d_m: float, cfg: RadioConfig) -> float:
    """Mean power gain at distance d meters (log-distance model, no shadowing)."""
    if d_m < 1.0:
        raise ValueError("path loss model valid for d >= 1 m")
    return 10.0 ** ((cfg.pathloss_ref_db - 10.0 * cfg.pathloss_exponent * math.log10(d_m)) / 10.0)


def draw_fading(mean_gain, rng: np.random.Generator):
    """Exponential |h|^2 draw (unit Rayleigh envelope scaled by path loss)."""
    mean_gain = np.asarray(mean_gain, dtype=float)
    if np.any(mean_gain <= 0):
        raise ValueError("mean gain must be positive")
    return rng.exponential(mean_gain)


def snr(p_tx_w: float, gain, noise_w: float):
    return p_tx_w * np.asarray(gain, dtype=float) / noise_w


def ber_mqam(gamma, m_order: int):
    """Bit error rate of square M-QAM at SNR ``gamma``; clamped to [0, 0.5]."""
    root = round(math.sqrt(m_order))
    if root * root != m_order or root & (root - 1) or m_order < 4:
        raise ConfigError("modulation order must be a perfect-square power of 4")
    gamma = np.asarray(gamma, dtype=float)
    coef = 2.0 * (root - 1) / (root * math.log2(root))
    arg = np.sqrt(3.0 * gamma * math.log2(m_order) / (m_order - 1))
    return np.clip(coef * gaussian_tail(arg), 0.0, 0.5)


def element_error_prob(ber, r_bits: int):
    """Probability that at least one of an element's R bits is corrupted."""
    ber = np.asarray(ber, dtype=float)
    if np.any(ber < 0) or np.any(ber > 1):
        raise ValueError("ber must be in [0, 1]")
    return 1.0 - (1.0 - ber) ** r_bits


def rate(gamma, b_hz: float):
    return b_hz * np.log2(1.0 + np.asarray(gamma, dtype=float))


def min_rate(model_size: int, r_bits: int, tau_max: float) -> float:
    """Rate needed to push the whole quantized model within the delay budget."""
    if model_size <= 0 or r_bits <= 0 or tau_max <= 0:
        raise ValueError("model_size, r_bits and tau_max must be positive")
    return model_size * r_bits / tau_max


@dataclass(frozen=True)
class ChannelRealization:
    """One round of fading and everything derived from it."""

    uplink_gain: np.ndarray       # (N, K)
    downlink_gain: np.ndarray     # (N,)
    uplink_snr: np.ndarray        # (N, K), at full client power
    uplink_ber: np.ndarray        # (N, K)
    uplink_elem_err: np.ndarray   # (N, K)
    uplink_rate: np.ndarray       # (N, K)
    downlink_snr: np.ndarray      # (N,)
    downlink_ber: np.ndarray      # (N,)
    downlink_elem_err: np.ndarray  # (N,)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.uplink_gain).tobytes())
        h.update(np.ascontiguousarray(self.downlink_gain).tobytes())
        return h.hexdigest()[:16]


def realize_round(cfg: RadioConfig, distances_m: np.ndarray, r_bits: int,
                  rng: np.random.Generator) -> ChannelRealization:
    """Fresh fading for every (client, subchannel) uplink pair and every downlink.

    Uplink SNR is evaluated at the client's full power (the power-control
    optimum); downlink at the base-station broadcast power over one
    subchannel bandwidth.
    """
    n = len(distances_m)
    mean_gain = np.array([path_loss_linear(d, cfg) for d in distances_m])
    up_gain = draw_fading(np.repeat(mean_gain[:, None], cfg.n_subchannels, axis=1), rng)
    down_gain = draw_fading(mean_gain, rng)
    noise = cfg.noise_power_w
    up_snr = snr(cfg.client_power_w, up_gain, noise)
    down_snr = snr(cfg.bs_power_w, down_gain, noise)
    up_ber = ber_mqam(up_snr, cfg.modulation_order)
    down_ber = ber_mqam(down_snr, cfg.modulation_order)
    return ChannelRealization(
        uplink_gain=up_gain,
        downlink_gain=down_gain,
        uplink_snr=up_snr,
        uplink_ber=up_ber,
        uplink_elem_err=element_error_prob(up_ber, r_bits),
        uplink_rate=rate(up_snr, cfg.subchannel_bandwidth),
        downlink_snr=down_snr,
        downlink_ber=down_ber,
        downlink_elem_err=element_error_prob(down_ber, r_bits),
    )


def transmit(qv: QuantizedVector, ber: float, rng: np.random.Generator) -> QuantizedVector:
    """Flip each bit of each R-bit index independently with probability ``ber``."""
    if not 0.0 <= ber <= 1.0:
        raise ValueError("ber must be in [0, 1]")
    if ber == 0.0:
        return QuantizedVector(indices=qv.indices.copy(), spec=qv.spec)
    r = qv.spec.r_bits
    n = qv.indices.shape[0]
    flips = rng.random((n, r)) < ber
    weights = (1 << np.arange(r, dtype=np.uint32)).astype(np.uint32)
    mask = (flips.astype(np.uint32) * weights).sum(axis=1, dtype=np.uint64).astype(np.uint32)
    return QuantizedVector(indices=qv.indices ^ mask, spec=qv.spec)
