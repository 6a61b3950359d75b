"""Finite-blocklength rate expressions for a single AWGN link.

All rates are in bits delivered within one phase of ``duration * bandwidth``
channel uses. Gains are normalized SNR per watt, so ``gain * power`` is the
received SNR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

LN2 = math.log(2.0)

# perspective terms with an indicator below this contribute exactly zero
PHI_CLAMP = 1e-12

# 2**x overflows a double just above this
MAX_EXPONENT = 1024.0


class PayloadTooLargeError(ValueError):
    """Raised when a payload cannot be carried by any finite power."""


@dataclass(frozen=True)
class LinkBudget:
    """Gain (1/W), phase duration (s), bandwidth (Hz) and decoding error probability."""

    gain: float
    duration: float
    bandwidth: float
    error_prob: float

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError(f"gain must be positive, got {self.gain}")
        if not self.duration > 0 or not self.bandwidth > 0:
            raise ValueError("duration and bandwidth must be positive")
        if not 0.0 < self.error_prob < 1.0:
            raise ValueError(f"error_prob must lie in (0, 1), got {self.error_prob}")
        if self.blocklength < 1.0:
            raise ValueError(f"blocklength {self.blocklength} is below one channel use")

    @property
    def blocklength(self) -> float:
        return self.duration * self.bandwidth


def q_func(x):
    """Gaussian tail probability Q(x)."""
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def q_inv(eps):
    """Inverse of the Gaussian tail function.

    Starts from ``sqrt(2) * erfcinv(2 eps)`` and applies two Newton steps on
    ``Q(x) - eps`` in log space, which keeps full relative accuracy far into
    the tail.

    Parameters
    ----------
    eps : float or array_like
        Tail probability, strictly inside (0, 1).

    Returns
    -------
    float or ndarray
        ``x`` with ``Q(x) = eps``.
    """
    e = np.asarray(eps, dtype=float)
    if np.any(~((e > 0.0) & (e < 1.0))):
        raise ValueError("q_inv is defined on the open interval (0, 1)")
    x = math.sqrt(2.0) * special.erfcinv(2.0 * e)
    for _ in range(2):
        # d/dx log Q(x) = -pdf(x) / Q(x); log_ndtr(-x) = log Q(x)
        log_q = special.log_ndtr(-x)
        log_pdf = -0.5 * x * x - 0.5 * math.log(2.0 * math.pi)
        x = x + (log_q - np.log(e)) * np.exp(log_q - log_pdf)
    if x.ndim == 0:
        return float(x)
    return x


def dispersion(snr):
    """Channel dispersion ``1 - (1 + snr)^-2`` of a real-valued AWGN link."""
    s = np.asarray(snr, dtype=float)
    v = -np.expm1(-2.0 * np.log1p(s))
    return float(v) if v.ndim == 0 else v


def backoff_bits(lb: LinkBudget) -> float:
    """Per-channel-use rate loss ``Q^-1(eps) / (sqrt(n) ln 2)`` with V set to one."""
    return q_inv(lb.error_prob) / (math.sqrt(lb.blocklength) * LN2)


def rate_exact(lb: LinkBudget, power):
    """Normal-approximation bits with the exact dispersion.

    May be negative at low SNR; callers decide what a negative payload means.
    """
    p = np.asarray(power, dtype=float)
    if np.any(p < 0):
        raise ValueError("power must be non-negative")
    n = lb.blocklength
    snr = lb.gain * p
    v = dispersion(snr)
    r = n * (np.log1p(snr) / LN2 - np.sqrt(v / n) * q_inv(lb.error_prob) / LN2)
    return float(r) if np.ndim(r) == 0 else r


def rate_approx(lb: LinkBudget, power):
    """Bits with the dispersion approximated by one (a lower bound on ``rate_exact``)."""
    p = np.asarray(power, dtype=float)
    if np.any(p < 0):
        raise ValueError("power must be non-negative")
    n = lb.blocklength
    r = n * (np.log1p(lb.gain * p) / LN2 - backoff_bits(lb))
    return float(r) if np.ndim(r) == 0 else r


def required_snr(bits, blocklength, error_prob):
    """SNR at which ``rate_approx`` delivers exactly ``bits``.

    Vectorized over all arguments. Raises ``PayloadTooLargeError`` when the
    exponent leaves the double range.
    """
    bits = np.asarray(bits, dtype=float)
    n = np.asarray(blocklength, dtype=float)
    expo = bits / n + q_inv(error_prob) / (np.sqrt(n) * LN2)
    if np.any(expo > MAX_EXPONENT):
        raise PayloadTooLargeError(
            f"payload needs 2**{float(np.max(expo)):.1f} SNR; blocklength too short")
    snr = np.expm1(expo * LN2)
    return float(snr) if snr.ndim == 0 else snr


def invert_power(lb: LinkBudget, target_bits: float) -> float:
    """Smallest power for which ``rate_approx(lb, p) == target_bits``."""
    if not target_bits > 0:
        raise ValueError("target_bits must be positive")
    return required_snr(target_bits, lb.blocklength, lb.error_prob) / lb.gain


def perspective_rate(phi, power, lb: LinkBudget):
    """Indicator-weighted rate ``phi * rate_approx(lb, power / phi)``.

    This is the form used once the transmit power is absorbed into
    ``phi * p``. It is jointly concave in ``(phi, power)`` and continuously
    extended by zero at ``phi = 0``.
    """
    phi = np.asarray(phi, dtype=float)
    p = np.asarray(power, dtype=float)
    if np.any((phi < 0) | (phi > 1)):
        raise ValueError("phi must lie in [0, 1]")
    if np.any(p < 0):
        raise ValueError("power must be non-negative")
    n = lb.blocklength
    live = phi >= PHI_CLAMP
    safe_phi = np.where(live, phi, 1.0)
    r = n * (safe_phi * np.log1p(lb.gain * p / safe_phi) / LN2 - safe_phi * backoff_bits(lb))
    r = np.where(live, r, 0.0)
    return float(r) if r.ndim == 0 else r
