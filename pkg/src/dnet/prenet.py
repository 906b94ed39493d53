"""Precoding networks at the base station.

RFNet maps the reconstructed CSI to a K x Nt phase matrix through one 3x3
conv layer (2 kernels, zero padding, LeakyReLU) and one FC layer; the
analog precoder is then (cos(theta) + j sin(theta)) / sqrt(Nt) transposed
to Nt x K, so the constant-modulus constraint holds for every parameter
value by construction. Deployed phase shifters are quantized to a uniform
grid after training, never during it.

BBNet computes the digital precoder from the equivalent channel
H_eq = H~ F~. Net a takes the full H_eq (realified to 2K^2), Net b takes
its diagonal (realified to 2K), each through a single affine layer and
LeakyReLU applied independently to real and imaginary parts; their sum is
rescaled to sqrt(K) / ||F~ D_u||_F so the transmit power constraint
||F D||_F^2 = K holds whenever the output is nondegenerate. Complex
vectors realify as [Re; Im] and reshape row-major throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .channels import ChannelMatrix, as_channel_array
from .complexmat import cmatmul
from .disnet import EncoderParams, DecoderParams, disnet_apply
from .errors import ConfigError, DegenerateOutputError, ShapeError
from .params import uniform_init, zeros_param

DEGENERATE_NORM_TOL = 1e-12


@dataclass
class RFNetParams:
    conv_w: Tensor  # (2, 2, 3, 3)
    conv_b: Tensor  # (2,)
    fc_w: Tensor    # (K*Nt, 2*K*Nt)
    fc_b: Tensor    # (K*Nt,)

    @property
    def k_nt(self) -> int:
        return self.fc_w.shape[0]

    def named(self):
        return [("rf.conv.w", self.conv_w), ("rf.conv.b", self.conv_b),
                ("rf.fc.w", self.fc_w), ("rf.fc.b", self.fc_b)]

    @classmethod
    def from_named(cls, arrays: dict) -> "RFNetParams":
        return cls(Tensor(arrays["rf.conv.w"], True), Tensor(arrays["rf.conv.b"], True),
                   Tensor(arrays["rf.fc.w"], True), Tensor(arrays["rf.fc.b"], True))


@dataclass
class BBNetParams:
    a_w: Tensor  # (2*K^2, 2*K^2)
    a_b: Tensor  # (2*K^2,)
    b_w: Tensor  # (2*K^2, 2*K)
    b_b: Tensor  # (2*K^2,)

    @property
    def k(self) -> int:
        return self.b_w.shape[1] // 2

    def named(self):
        return [("bb.a.w", self.a_w), ("bb.a.b", self.a_b),
                ("bb.b.w", self.b_w), ("bb.b.b", self.b_b)]

    @classmethod
    def from_named(cls, arrays: dict) -> "BBNetParams":
        return cls(Tensor(arrays["bb.a.w"], True), Tensor(arrays["bb.a.b"], True),
                   Tensor(arrays["bb.b.w"], True), Tensor(arrays["bb.b.b"], True))


def init_rfnet(k: int, nt: int, rng: np.random.Generator) -> RFNetParams:
    return RFNetParams(
        conv_w=uniform_init(rng, (2, 2, 3, 3), fan_in=2 * 9),
        conv_b=uniform_init(rng, (2,), fan_in=2 * 9),
        fc_w=uniform_init(rng, (k * nt, 2 * k * nt), fan_in=2 * k * nt),
        fc_b=uniform_init(rng, (k * nt,), fan_in=2 * k * nt),
    )


def init_bbnet(k: int, rng: np.random.Generator) -> BBNetParams:
    # zero biases; weights uniform in +-1/sqrt(fan_in)
    return BBNetParams(
        a_w=uniform_init(rng, (2 * k * k, 2 * k * k), fan_in=2 * k * k),
        a_b=zeros_param((2 * k * k,)),
        b_w=uniform_init(rng, (2 * k * k, 2 * k), fan_in=2 * k),
        b_b=zeros_param((2 * k * k,)),
    )


# ---------------------------------------------------------------------------
# batched tensor-graph forward

def rfnet_apply(h_re: Tensor, h_im: Tensor,
                params: RFNetParams) -> tuple[Tensor, Tensor, Tensor]:
    """(B, K, Nt) reconstructed CSI -> (theta (B,K,Nt), f_re, f_im (B,Nt,K))."""
    b, k, nt = h_re.shape
    if k * nt != params.k_nt:
        raise ShapeError(f"RFNet built for K*Nt={params.k_nt}, input has {k}x{nt}")
    x = ad.stack([h_re, h_im], axis=1)  # (B, 2, K, Nt)
    y = ad.leaky_relu(ad.conv2d(x, params.conv_w, params.conv_b))
    y = ad.reshape(y, (b, 2 * k * nt))
    theta = ad.reshape(ad.affine(y, params.fc_w, params.fc_b), (b, k, nt))
    scale = 1.0 / math.sqrt(nt)
    f_re = ad.permute(ad.mul(ad.cos(theta), scale), (0, 2, 1))
    f_im = ad.permute(ad.mul(ad.sin(theta), scale), (0, 2, 1))
    return theta, f_re, f_im


def bbnet_apply(h_re: Tensor, h_im: Tensor, f_re: Tensor, f_im: Tensor,
                params: BBNetParams) -> tuple[Tensor, Tensor]:
    """Digital precoder from reconstructed CSI and analog stage: (B, K, K) pair."""
    b, k, _ = h_re.shape
    if params.k != k:
        raise ShapeError(f"BBNet built for K={params.k}, input has K={k}")
    heq_re, heq_im = cmatmul(h_re, h_im, f_re, f_im)  # (B, K, K)
    flat = ad.concat([ad.reshape(heq_re, (b, k * k)),
                      ad.reshape(heq_im, (b, k * k))], axis=1)
    d_a = ad.leaky_relu(ad.affine(flat, params.a_w, params.a_b))
    diag = ad.concat([ad.diagonal(heq_re), ad.diagonal(heq_im)], axis=1)  # (B, 2K)
    d_b = ad.leaky_relu(ad.affine(diag, params.b_w, params.b_b))
    d_u = ad.add(d_a, d_b)  # (B, 2*K^2) as [Re; Im]
    du_re = ad.reshape(ad.narrow(d_u, 1, 0, k * k), (b, k, k))
    du_im = ad.reshape(ad.narrow(d_u, 1, k * k, k * k), (b, k, k))
    fd_re, fd_im = cmatmul(f_re, f_im, du_re, du_im)  # (B, Nt, K)
    sq = ad.add(ad.square(fd_re), ad.square(fd_im))
    norm = ad.sqrt(ad.sum_axes(sq, (1, 2), keepdims=True))  # (B, 1, 1)
    low = norm.data.min()
    if low < DEGENERATE_NORM_TOL:
        idx = int(norm.data.reshape(-1).argmin())
        raise DegenerateOutputError(
            f"||F D_u||_F = {low:.3e} at batch index {idx}; cannot normalize")
    scale = math.sqrt(k)
    return ad.div(ad.mul(du_re, scale), norm), ad.div(ad.mul(du_im, scale), norm)


@dataclass
class DnetOutput:
    """End-to-end forward products as graph tensors (batched)."""

    h_re: Tensor
    h_im: Tensor
    theta: Tensor
    f_re: Tensor
    f_im: Tensor
    d_re: Tensor
    d_im: Tensor

    def h_tilde(self, i: int = 0) -> np.ndarray:
        return self.h_re.data[i] + 1j * self.h_im.data[i]

    def f_tilde(self, i: int = 0) -> np.ndarray:
        return self.f_re.data[i] + 1j * self.f_im.data[i]

    def d_tilde(self, i: int = 0) -> np.ndarray:
        return self.d_re.data[i] + 1j * self.d_im.data[i]


def dnet_apply(h: np.ndarray, enc: EncoderParams, dec: DecoderParams,
               rf: RFNetParams, bb: BBNetParams,
               noise: np.ndarray | None = None,
               quantize_bits: int = 0) -> DnetOutput:
    """Full pipeline on a (B, K, Nt) block; differentiable end to end.

    ``quantize_bits`` > 0 snaps the analog phases to the deployment grid,
    which detaches the graph (quantization is evaluation-only).
    """
    h_re, h_im = disnet_apply(h, enc, dec, noise)
    theta, f_re, f_im = rfnet_apply(h_re, h_im, rf)
    if quantize_bits:
        theta = Tensor(quantize_phases(theta.data, quantize_bits))
        nt = theta.shape[-1]
        f_re = ad.permute(ad.mul(ad.cos(theta), 1.0 / math.sqrt(nt)), (0, 2, 1))
        f_im = ad.permute(ad.mul(ad.sin(theta), 1.0 / math.sqrt(nt)), (0, 2, 1))
    d_re, d_im = bbnet_apply(h_re, h_im, f_re, f_im, bb)
    return DnetOutput(h_re, h_im, theta, f_re, f_im, d_re, d_im)


# ---------------------------------------------------------------------------
# deployment-grade value-level surface

def quantize_phases(theta, bits: int = 4) -> np.ndarray:
    """Snap each phase (mod 2*pi) to the nearest of 2^bits uniform levels.

    Idempotent; the wrapped perturbation never exceeds pi / 2^bits.
    """
    if bits < 1:
        raise ConfigError(f"need at least one quantization bit, got {bits}")
    theta = np.asarray(theta, dtype=np.float64)
    step = 2.0 * np.pi / (2 ** bits)
    return np.mod(step * np.round(theta / step), 2.0 * np.pi)


def analog_from_phases(theta: np.ndarray):
    """Build the constant-modulus Nt x K precoder from a K x Nt phase matrix."""
    from .precoding import AnalogPrecoder

    theta = np.asarray(theta, dtype=np.float64)
    nt = theta.shape[1]
    return AnalogPrecoder((np.cos(theta) + 1j * np.sin(theta)).T / math.sqrt(nt))


def rfnet_forward(h_tilde, params: RFNetParams):
    """Value-level analog design from reconstructed CSI: (theta, AnalogPrecoder)."""
    hm = as_channel_array(h_tilde)
    theta, _, _ = rfnet_apply(Tensor(hm.real[None]), Tensor(hm.imag[None]), params)
    th = theta.data[0]
    return th, analog_from_phases(th)


def bbnet_forward(h_tilde, f_tilde, params: BBNetParams):
    """Value-level digital design from reconstructed CSI and the analog stage."""
    from .precoding import AnalogPrecoder, DigitalPrecoder

    hm = as_channel_array(h_tilde)
    fm = f_tilde.f if isinstance(f_tilde, AnalogPrecoder) else np.asarray(f_tilde)
    d_re, d_im = bbnet_apply(Tensor(hm.real[None]), Tensor(hm.imag[None]),
                             Tensor(fm.real[None]), Tensor(fm.imag[None]), params)
    return DigitalPrecoder(d_re.data[0] + 1j * d_im.data[0])


def dnet_forward(h, enc: EncoderParams, dec: DecoderParams, rf: RFNetParams,
                 bb: BBNetParams, sigma_f: float = 0.0, seed: int = 0,
                 quantize_bits: int = 0) -> DnetOutput:
    """Single-sample full pipeline: CSI matrix in, (H~, F~, D~) tensors out."""
    hm = as_channel_array(h)
    noise = None
    if sigma_f < 0:
        raise ConfigError(f"noise level must be >= 0, got {sigma_f}")
    if sigma_f > 0.0:
        noise = np.random.default_rng(seed).normal(
            0.0, sigma_f, size=(hm.shape[0], 2 * enc.mt))
    return dnet_apply(hm[None], enc, dec, rf, bb, noise, quantize_bits)
