"""Clipping, uniform quantization, Gaussian perturbation, and the privacy accountant.

The upload mechanism is: clip the parameter vector to L2 norm C, add i.i.d.
Gaussian noise of scale sigma_dp, then round every element to the nearest
level of a uniform R-bit grid covering [-(C+3*sigma), C+3*sigma]. Because the
rounding itself destroys information, the noise scale needed for a given
(epsilon, delta) target is far smaller than for the plain Gaussian mechanism;
``delta_q_of_sigma`` evaluates the resulting delta and ``search_sigma``
inverts it by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import erfc

from .errors import ConfigError, InfeasiblePrivacyError

_SQRT2 = math.sqrt(2.0)


def gaussian_tail(x):
    """Upper tail Q(x) = P[N(0,1) > x] of the standard normal.

    Accepts scalars or arrays. Double precision throughout; underflows to
    0.0 for x beyond ~38 where the tail is below the smallest double.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("gaussian_tail requires finite input")
    out = 0.5 * erfc(arr / _SQRT2)
    if np.ndim(x) == 0:
        return float(out)
    return out


def clip_model(v: np.ndarray, c: float) -> np.ndarray:
    """Scale ``v`` onto the L2 ball of radius ``c`` (direction preserved)."""
    if c <= 0:
        raise ValueError("clip threshold must be positive")
    norm = float(np.linalg.norm(v))
    return v / max(1.0, norm / c)


@dataclass(frozen=True)
class PrivacySpec:
    """Privacy budget plus the clipping/quantization configuration it refers to.

    ``sigma_dp`` starts unresolved (None) and is filled in by calibration.
    """

    epsilon_q: float
    delta_q_target: float
    t0: int
    clip_c: float
    r_bits: int
    q_sample: float
    sigma_dp: float | None = None

    def __post_init__(self):
        if not self.epsilon_q > 0:
            raise ConfigError("epsilon_q must be > 0")
        if not 0.0 <= self.delta_q_target <= 1.0:
            raise ConfigError("delta_q_target must be in [0, 1]")
        if self.t0 < 1:
            raise ConfigError("t0 must be a positive integer")
        if not self.clip_c > 0:
            raise ConfigError("clip_c must be > 0")
        if not 2 <= self.r_bits <= 32:
            raise ConfigError("r_bits must be in [2, 32]")
        if not 0.0 <= self.q_sample <= 1.0:
            raise ConfigError("q_sample must be in [0, 1]")
        if self.sigma_dp is not None and self.sigma_dp < 0:
            raise ConfigError("sigma_dp must be >= 0")

    def with_sigma(self, sigma: float) -> "PrivacySpec":
        return replace(self, sigma_dp=float(sigma))

    @property
    def resolved_sigma(self) -> float:
        if self.sigma_dp is None:
            raise ConfigError("sigma_dp not resolved; run calibration first")
        return self.sigma_dp


@dataclass(frozen=True)
class QuantizerSpec:
    """Uniform grid of 2**r_bits levels spanning [lo, hi] inclusive."""

    lo: float
    hi: float
    r_bits: int
    delta: float = field(init=False)
    levels: int = field(init=False)

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError("quantizer range must satisfy lo < hi")
        levels = 2 ** self.r_bits
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "delta", (self.hi - self.lo) / (levels - 1))

    def level(self, i):
        return self.lo + np.asarray(i, dtype=float) * self.delta

    @property
    def e_max(self) -> float:
        """Maximum rounding error delta/2 for in-range values."""
        return self.delta / 2.0


@dataclass(frozen=True)
class QuantizedVector:
    indices: np.ndarray  # uint32 level indices
    spec: QuantizerSpec


def make_local_quantizer(spec: PrivacySpec) -> QuantizerSpec:
    """Grid for uploaded local models: covers the clip ball plus 3 noise sigmas."""
    half = spec.clip_c + 3.0 * spec.resolved_sigma
    return QuantizerSpec(lo=-half, hi=half, r_bits=spec.r_bits)


def make_global_quantizer(clip_c: float, r_bits: int) -> QuantizerSpec:
    """Grid for the broadcast global model: covers [-C, C] (no noise added)."""
    return QuantizerSpec(lo=-clip_c, hi=clip_c, r_bits=r_bits)


def quantize(v: np.ndarray, spec: QuantizerSpec) -> QuantizedVector:
    """Round each element to the nearest level; ties go to the higher index.

    Out-of-range values saturate to the boundary levels.
    """
    raw = np.floor((np.asarray(v, dtype=float) - spec.lo) / spec.delta + 0.5)
    idx = np.clip(raw, 0, spec.levels - 1).astype(np.uint32)
    return QuantizedVector(indices=idx, spec=spec)


def dequantize(qv: QuantizedVector) -> np.ndarray:
    if np.any(qv.indices >= qv.spec.levels):
        raise ValueError("corrupted quantized vector: index out of range")
    return qv.spec.lo + qv.indices.astype(float) * qv.spec.delta


def perturb(v: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) noise to every element."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return np.array(v, dtype=float, copy=True)
    return np.asarray(v, dtype=float) + rng.normal(0.0, sigma, size=np.shape(v))


def mechanism_mq(v: np.ndarray, spec: PrivacySpec, rng: np.random.Generator) -> QuantizedVector:
    """Clip -> add Gaussian noise -> quantize onto the local grid."""
    clipped = clip_model(np.asarray(v, dtype=float), spec.clip_c)
    noisy = perturb(clipped, spec.resolved_sigma, rng)
    return quantize(noisy, make_local_quantizer(spec))


def level_probability(u: float, chi_index: int, spec: PrivacySpec) -> float:
    """Probability that the mechanism emits level ``chi_index`` for input value ``u``.

    Interior levels collect the noise mass within half a step of the level;
    the two boundary levels absorb the entire saturated tails, so the
    probabilities over all levels sum to one.
    """
    quant = make_local_quantizer(spec)
    if not 0 <= chi_index < quant.levels:
        raise ValueError("chi_index out of range")
    sigma = spec.resolved_sigma
    chi = float(quant.level(chi_index))
    e = quant.e_max
    if sigma == 0:
        return 1.0 if int(quantize(np.array([u]), quant).indices[0]) == chi_index else 0.0
    if chi_index == 0:
        return 1.0 - gaussian_tail((chi + e - u) / sigma)
    if chi_index == quant.levels - 1:
        return gaussian_tail((chi - e - u) / sigma)
    return gaussian_tail((chi - e - u) / sigma) - gaussian_tail((chi + e - u) / sigma)


def level_distribution(u: float, spec: PrivacySpec) -> np.ndarray:
    """Vector of ``level_probability`` over every level (vectorized)."""
    quant = make_local_quantizer(spec)
    sigma = spec.resolved_sigma
    if sigma == 0:
        out = np.zeros(quant.levels)
        out[int(quantize(np.array([u]), quant).indices[0])] = 1.0
        return out
    chis = quant.level(np.arange(quant.levels))
    e = quant.e_max
    upper = gaussian_tail((chis - e - u) / sigma)
    lower = gaussian_tail((chis + e - u) / sigma)
    probs = upper - lower
    probs[0] = 1.0 - lower[0]
    probs[-1] = upper[-1]
    return probs


def delta_q_of_sigma(spec: PrivacySpec, sigma: float) -> float:
    """Delta achieved by the quantization-assisted mechanism at noise scale ``sigma``.

    Composed linearly over the t0 upload rounds; the per-round budget is
    epsilon_q / t0. Negative values of the inner expression are clamped to 0
    (a probability mass cannot be negative) and the result is capped at 1.
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    c, r, q, t0 = spec.clip_c, spec.r_bits, spec.q_sample, spec.t0
    e = (c + 3.0 * sigma) / (2 ** r - 1)
    growth = math.exp(spec.epsilon_q / t0)
    psi1 = gaussian_tail((2 * c + 3 * sigma - e) / sigma) - gaussian_tail((2 * c + 3 * sigma + e) / sigma)
    psi = (1 - q) * psi1 + q * (1.0 - 2.0 * gaussian_tail(e / sigma))
    psi1p = gaussian_tail((2 * c + 3 * sigma - e) / sigma)
    psip = (1 - q) * psi1p + q * gaussian_tail((3 * sigma - e) / sigma)
    value = t0 * max(psi - psi1 * growth, psip - psi1p * growth)
    return min(1.0, max(0.0, value))


def delta_plain_gaussian_of_sigma(spec: PrivacySpec, sigma: float) -> float:
    """Delta for the plain (continuous) Gaussian mechanism at scale ``sigma``.

    Baseline that ignores the privacy contribution of quantization: the
    worst-case shift of a clipped model is 2C, subsampling at rate q uses the
    usual mixture argument, and composition over t0 rounds is linear, exactly
    mirroring the structure of ``delta_q_of_sigma``.
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    q = spec.q_sample
    sens = 2.0 * spec.clip_c
    eps_round = spec.epsilon_q / spec.t0
    if q == 0:
        return 0.0
    # subsampling amplification: the effective per-round budget on the
    # un-subsampled pair of Gaussians
    eps_eff = math.log1p(math.expm1(eps_round) / q)
    a = sigma * eps_eff / sens
    b = sens / (2.0 * sigma)
    delta_gauss = gaussian_tail(a - b) - math.exp(eps_eff) * gaussian_tail(a + b)
    value = spec.t0 * q * max(0.0, delta_gauss)
    return min(1.0, max(0.0, value))


def search_sigma(spec: PrivacySpec, delta_fn=delta_q_of_sigma, bracket_lo: float = 1e-6,
                 rel_tol: float = 1e-6) -> float:
    """Smallest sigma with delta_fn(sigma) <= delta_q_target, by bisection.

    delta is non-increasing in sigma for both accountants, so bisection on
    [bracket_lo, 10*C] (expanded if needed) is exact up to ``rel_tol``.
    """
    target = spec.delta_q_target
    if not 0.0 < target < 1.0:
        raise ConfigError("delta_q_target must lie in (0, 1) for calibration")
    lo = bracket_lo
    if delta_fn(spec, lo) <= target:
        return lo
    hi = 10.0 * spec.clip_c
    expansions = 0
    while delta_fn(spec, hi) > target:
        hi *= 10.0
        expansions += 1
        if expansions > 6:
            raise InfeasiblePrivacyError(
                f"no sigma up to {hi:.3g} meets delta target {target:.3g}")
    while (hi - lo) > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if delta_fn(spec, mid) <= target:
            hi = mid
        else:
            lo = mid
    return hi
