"""Classical precoding baselines and the sum-rate objective.

Everything here is plain numpy on complex128 arrays: these functions are
the non-learned reference path (perfect-CSI PZF, fully-digital MMSE,
random-vector-quantization limited feedback) and double as independent
oracles for the differentiable network objective.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .channels import as_channel_array
from .complexmat import cinv_array
from .errors import ConfigError

MODULUS_TOL = 1e-9
POWER_WARN_TOL = 1e-6


@dataclass
class AnalogPrecoder:
    """Phase-shifter stage: Nt x K with every entry of modulus 1/sqrt(Nt)."""

    f: np.ndarray

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=np.complex128)
        if self.f.ndim != 2:
            raise ConfigError(f"analog precoder must be rank 2, got {self.f.shape}")
        target = 1.0 / math.sqrt(self.f.shape[0])
        err = float(np.max(np.abs(np.abs(self.f) - target)))
        if err > MODULUS_TOL:
            raise ConfigError(f"analog precoder violates constant modulus by {err:.3e}")

    @property
    def nt(self) -> int:
        return self.f.shape[0]

    @property
    def k(self) -> int:
        return self.f.shape[1]


@dataclass
class DigitalPrecoder:
    """Baseband stage: K x K, jointly normalized with F so ||FD||_F^2 = K."""

    d: np.ndarray

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=np.complex128)
        if self.d.ndim != 2 or self.d.shape[0] != self.d.shape[1]:
            raise ConfigError(f"digital precoder must be square, got {self.d.shape}")


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, AnalogPrecoder):
        return x.f
    if isinstance(x, DigitalPrecoder):
        return x.d
    return np.asarray(x, dtype=np.complex128)


def pzf_analog(h) -> AnalogPrecoder:
    """Conjugate-phase analog stage: F_{n,k} = e^{-j angle(H_{k,n})} / sqrt(Nt).

    Aligns each user's beam with its channel phases; the constant-modulus
    constraint holds by construction. A zero channel entry gets phase 0.
    """
    h = as_channel_array(h)
    nt = h.shape[1]
    f = np.exp(-1j * np.angle(h)).T / math.sqrt(nt)
    return AnalogPrecoder(f)


def pzf_digital(h_used, f, diagonal_loading: float = 0.0) -> DigitalPrecoder:
    """Zero-forcing baseband stage on the equivalent channel H_eq = H F.

    D = H_eq^H (H_eq H_eq^H)^{-1} Lambda with Lambda scaling each column of
    F D to unit norm, which also lands ||FD||_F^2 = K. With the same CSI
    used for design and evaluation the effective channel H F D is diagonal.
    Raises SingularMatrixError when H_eq H_eq^H has a pivot below tolerance;
    callers may retry with ``diagonal_loading`` added to its diagonal.
    """
    h_used = as_channel_array(h_used)
    fm = _as_matrix(f)
    k = h_used.shape[0]
    heq = h_used @ fm
    gram = heq @ heq.conj().T
    if diagonal_loading:
        gram = gram + diagonal_loading * np.eye(k)
    d0 = heq.conj().T @ cinv_array(gram)
    col_norms = np.linalg.norm(fm @ d0, axis=0)
    d = d0 / col_norms
    d *= math.sqrt(k) / np.linalg.norm(fm @ d)
    return DigitalPrecoder(d)


def mmse_fully_digital(h, p: float) -> np.ndarray:
    """Regularized fully-digital precoder W = H^H (H H^H + (K/P) I)^{-1}, ||W||_F^2 = K."""
    h = as_channel_array(h)
    if p <= 0:
        raise ConfigError(f"transmit power must be positive, got {p}")
    k = h.shape[0]
    w = h.conj().T @ cinv_array(h @ h.conj().T + (k / p) * np.eye(k))
    return w * (math.sqrt(k) / np.linalg.norm(w))


@dataclass
class Codebook:
    """2^bits unit-norm complex Nt-vectors for direction quantization."""

    entries: np.ndarray  # (2^bits, Nt)
    bits: int

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.complex128)
        if self.entries.shape[0] != 2 ** self.bits:
            raise ConfigError(
                f"codebook with {self.bits} bits needs {2 ** self.bits} entries, "
                f"got {self.entries.shape[0]}")
        norms = np.linalg.norm(self.entries, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-9:
            raise ConfigError("codebook entries must be unit norm")

    @classmethod
    def random(cls, nt: int, bits: int, seed: int) -> "Codebook":
        rng = np.random.default_rng(seed)
        c = rng.standard_normal((2 ** bits, nt)) + 1j * rng.standard_normal((2 ** bits, nt))
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        return cls(c, bits)


def quantize_channel(h, codebook: Codebook) -> np.ndarray:
    """Per-user RVQ reconstruction: best-aligned codeword scaled by the true gain."""
    h = as_channel_array(h)
    scores = np.abs(h.conj() @ codebook.entries.T)  # (K, 2^B)
    best = np.argmax(scores, axis=1)
    gains = np.linalg.norm(h, axis=1)
    return gains[:, None] * codebook.entries[best]


def codebook_feedback_precode(h, codebook: Codebook, p: float) -> tuple[AnalogPrecoder, DigitalPrecoder]:
    """Limited-feedback baseline: RVQ the channel directions, then PZF on the
    reconstruction. Feedback budget: ``codebook.bits`` bits plus one real
    gain per user."""
    h_hat = quantize_channel(h, codebook)
    f = pzf_analog(h_hat)
    return f, pzf_digital(h_hat, f)


def effective_channel(h, f, d=None) -> np.ndarray:
    """H F D (or H W for a fully digital W passed as ``f``)."""
    h = as_channel_array(h)
    w = _as_matrix(f)
    if d is not None:
        w = w @ _as_matrix(d)
    return h @ w


def _sinr_all(h, f, d, p: float) -> np.ndarray:
    if p <= 0:
        raise ConfigError(f"transmit power must be positive, got {p}")
    t = effective_channel(h, f, d)
    k = t.shape[0]
    w = _as_matrix(f) if d is None else _as_matrix(f) @ _as_matrix(d)
    power = float(np.linalg.norm(w) ** 2)
    if abs(power - k) > POWER_WARN_TOL * k:
        warnings.warn(f"precoder power ||FD||_F^2 = {power:.6f} deviates from K = {k}",
                      stacklevel=3)
    s = np.abs(t) ** 2 * (p / k)
    sig = np.diagonal(s)
    interference = s.sum(axis=1) - sig
    return sig / (1.0 + interference)


def sinr_k(h, f, d, p: float, k: int) -> float:
    """Per-user SINR under hybrid precoding (true channel, unit noise)."""
    sinr = _sinr_all(h, f, d, p)
    if not 0 <= k < sinr.shape[0]:
        raise IndexError(f"user index {k} out of range for K={sinr.shape[0]}")
    return float(sinr[k])


def sum_rate(h, f, d, p: float) -> float:
    """Downlink sum rate in bits/s/Hz: sum_k log2(1 + SINR_k)."""
    return float(np.sum(np.log2(1.0 + _sinr_all(h, f, d, p))))


def sum_rate_digital(h, w, p: float) -> float:
    """Sum rate for a fully digital precoder W (no analog stage)."""
    return float(np.sum(np.log2(1.0 + _sinr_all(h, w, None, p))))


def batch_sum_rates(h_block: np.ndarray, w_block: np.ndarray, p: float) -> np.ndarray:
    """Sum rates for a block: (B, K, Nt) channels x (B, Nt, K) full precoders.

    Skips the per-call power warning; callers own the constraint upstream.
    """
    t = np.matmul(h_block, w_block)  # (B, K, K)
    k = t.shape[1]
    s = (p / k) * np.abs(t) ** 2
    sig = np.diagonal(s, axis1=1, axis2=2)
    interference = s.sum(axis=2) - sig
    return np.log2(1.0 + sig / (1.0 + interference)).sum(axis=1)
