"""Distributed CSI compression: per-user encoder/decoder with shared parameters.

One encoder instance runs at every user and one decoder instance per user
at the base station, but all of them read the same parameter storage, so
the trainable parameter count is independent of the user count and
gradients from all users accumulate into the shared tensors. Users are
therefore processed as extra batch rows: a block of B channel matrices
with K users becomes B*K independent encoder inputs.

Encoder: realify h_k to a 2 x Nt tensor [Re; Im], one width-3 conv layer
(4 kernels, zero padding, LeakyReLU), flatten, one FC layer down to the
2*Mt-dimensional codeword. The codeword stays unconstrained (no
activation after the FC).

Decoder: FC up to 2*Nt, reshape to 2 x Nt, then two residual blocks with
conv channel counts 4, 8, 16, 2 (LeakyReLU between conv layers, none
after the last so the correction is sign-complete) and an additive skip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .channels import ChannelMatrix, as_channel_array
from .complexmat import ComplexMatrix
from .errors import ConfigError, ShapeError
from .params import uniform_init

RES_CHANNELS = (4, 8, 16, 2)  # conv kernel counts inside each residual block


@dataclass
class EncoderParams:
    conv_w: Tensor  # (4, 2, 3)
    conv_b: Tensor  # (4,)
    fc_w: Tensor    # (2*Mt, 4*Nt)
    fc_b: Tensor    # (2*Mt,)

    @property
    def nt(self) -> int:
        return self.fc_w.shape[1] // 4

    @property
    def mt(self) -> int:
        return self.fc_w.shape[0] // 2

    def named(self):
        return [("enc.conv.w", self.conv_w), ("enc.conv.b", self.conv_b),
                ("enc.fc.w", self.fc_w), ("enc.fc.b", self.fc_b)]

    @classmethod
    def from_named(cls, arrays: dict) -> "EncoderParams":
        return cls(Tensor(arrays["enc.conv.w"], True), Tensor(arrays["enc.conv.b"], True),
                   Tensor(arrays["enc.fc.w"], True), Tensor(arrays["enc.fc.b"], True))


@dataclass
class DecoderParams:
    fc_w: Tensor  # (2*Nt, 2*Mt)
    fc_b: Tensor  # (2*Nt,)
    blocks: list  # 2 blocks x 4 conv layers of (w, b)

    @property
    def nt(self) -> int:
        return self.fc_w.shape[0] // 2

    @property
    def mt(self) -> int:
        return self.fc_w.shape[1] // 2

    def named(self):
        out = [("dec.fc.w", self.fc_w), ("dec.fc.b", self.fc_b)]
        for bi, block in enumerate(self.blocks, start=1):
            for ci, (w, b) in enumerate(block, start=1):
                out.append((f"dec.res{bi}.conv{ci}.w", w))
                out.append((f"dec.res{bi}.conv{ci}.b", b))
        return out

    @classmethod
    def from_named(cls, arrays: dict) -> "DecoderParams":
        blocks = []
        for bi in (1, 2):
            block = []
            for ci in range(1, len(RES_CHANNELS) + 1):
                block.append((Tensor(arrays[f"dec.res{bi}.conv{ci}.w"], True),
                              Tensor(arrays[f"dec.res{bi}.conv{ci}.b"], True)))
            blocks.append(block)
        return cls(Tensor(arrays["dec.fc.w"], True), Tensor(arrays["dec.fc.b"], True), blocks)


def init_encoder(nt: int, mt: int, rng: np.random.Generator) -> EncoderParams:
    return EncoderParams(
        conv_w=uniform_init(rng, (4, 2, 3), fan_in=2 * 3),
        conv_b=uniform_init(rng, (4,), fan_in=2 * 3),
        fc_w=uniform_init(rng, (2 * mt, 4 * nt), fan_in=4 * nt),
        fc_b=uniform_init(rng, (2 * mt,), fan_in=4 * nt),
    )


def init_decoder(nt: int, mt: int, rng: np.random.Generator) -> DecoderParams:
    blocks = []
    for _ in range(2):
        block = []
        c_in = 2
        for c_out in RES_CHANNELS:
            block.append((uniform_init(rng, (c_out, c_in, 3), fan_in=c_in * 3),
                          uniform_init(rng, (c_out,), fan_in=c_in * 3)))
            c_in = c_out
        blocks.append(block)
    return DecoderParams(
        fc_w=uniform_init(rng, (2 * nt, 2 * mt), fan_in=2 * mt),
        fc_b=uniform_init(rng, (2 * nt,), fan_in=2 * mt),
        blocks=blocks,
    )


# ---------------------------------------------------------------------------
# batched tensor-graph forward

def realify_rows(h: np.ndarray) -> Tensor:
    """(B, K, Nt) complex -> (B*K, 2, Nt) constant tensor of [Re; Im] rows."""
    b, k, nt = h.shape
    flat = h.reshape(b * k, nt)
    return Tensor(np.stack([flat.real, flat.imag], axis=1))


def encode_rows(x: Tensor, params: EncoderParams) -> Tensor:
    """(B*K, 2, Nt) realified rows -> (B*K, 2*Mt) codewords."""
    if x.shape[-1] != params.nt:
        raise ShapeError(f"encoder built for Nt={params.nt}, input has Nt={x.shape[-1]}")
    y = ad.leaky_relu(ad.conv1d(x, params.conv_w, params.conv_b))
    y = ad.reshape(y, (x.shape[0], 4 * params.nt))
    return ad.affine(y, params.fc_w, params.fc_b)


def _res_block(x: Tensor, block) -> Tensor:
    y = x
    last = len(block) - 1
    for i, (w, b) in enumerate(block):
        y = ad.conv1d(y, w, b)
        if i < last:
            y = ad.leaky_relu(y)
    return ad.add(x, y)


def decode_rows(q: Tensor, params: DecoderParams) -> Tensor:
    """(B*K, 2*Mt) codewords -> (B*K, 2, Nt) realified reconstructions."""
    if q.shape[-1] != 2 * params.mt:
        raise ShapeError(f"decoder built for Mt={params.mt}, codeword length {q.shape[-1]}")
    y = ad.affine(q, params.fc_w, params.fc_b)
    y = ad.reshape(y, (q.shape[0], 2, params.nt))
    for block in params.blocks:
        y = _res_block(y, block)
    return y


def disnet_apply(h: np.ndarray, enc: EncoderParams, dec: DecoderParams,
                 noise: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Reconstruct a block of channels: (B, K, Nt) complex -> (re, im) tensors.

    ``noise`` is an optional (B*K, 2*Mt) additive perturbation of the
    codewords, modeling feedback error.
    """
    b, k, nt = h.shape
    q = encode_rows(realify_rows(h), enc)
    if noise is not None:
        q = ad.add(q, Tensor(noise))
    y = decode_rows(q, dec)
    h_re = ad.reshape(ad.select(y, 1, 0), (b, k, nt))
    h_im = ad.reshape(ad.select(y, 1, 1), (b, k, nt))
    return h_re, h_im


# ---------------------------------------------------------------------------
# per-user surface

def encode(h_k, params: EncoderParams) -> Tensor:
    """Compress one user's channel (1 x Nt) to its 2*Mt-dimensional codeword."""
    h = _one_row(h_k)
    return ad.select(encode_rows(realify_rows(h[None]), params), 0, 0)


def inject_feedback_noise(q, sigma_f: float, seed: int):
    """Additive white Gaussian perturbation of a codeword; identity at sigma_f = 0."""
    if sigma_f < 0:
        raise ConfigError(f"noise level must be >= 0, got {sigma_f}")
    if sigma_f == 0.0:
        return q
    arr = q.data if isinstance(q, Tensor) else np.asarray(q, dtype=np.float64)
    noise = np.random.default_rng(seed).normal(0.0, sigma_f, size=arr.shape)
    if isinstance(q, Tensor):
        return ad.add(q, Tensor(noise))
    return arr + noise


def decode(q, params: DecoderParams) -> ComplexMatrix:
    """Reconstruct one user's channel (1 x Nt) from its codeword."""
    qt = q if isinstance(q, Tensor) else Tensor(np.asarray(q, dtype=np.float64))
    if qt.ndim != 1:
        raise ShapeError(f"codeword must be a vector, got shape {qt.shape}")
    y = decode_rows(ad.reshape(qt, (1, qt.shape[0])), params)
    re = ad.reshape(ad.select(y, 1, 0), (1, params.nt))
    im = ad.reshape(ad.select(y, 1, 1), (1, params.nt))
    return ComplexMatrix(re, im)


def reconstruct_all(h, enc: EncoderParams, dec: DecoderParams,
                    sigma_f: float = 0.0, seed: int = 0) -> ChannelMatrix:
    """Run every user's encode/inject/decode chain and restack the CSI matrix."""
    if sigma_f < 0:
        raise ConfigError(f"noise level must be >= 0, got {sigma_f}")
    hm = as_channel_array(h)
    k = hm.shape[0]
    noise = None
    if sigma_f > 0.0:
        noise = np.random.default_rng(seed).normal(
            0.0, sigma_f, size=(k, 2 * enc.mt))
    h_re, h_im = disnet_apply(hm[None], enc, dec, noise)
    return ChannelMatrix(h_re.data[0] + 1j * h_im.data[0])


def _one_row(h_k) -> np.ndarray:
    if isinstance(h_k, ComplexMatrix):
        a = h_k.to_array()
    else:
        a = np.asarray(h_k, dtype=np.complex128)
        if a.ndim == 1:
            a = a[None]
    if a.ndim != 2 or a.shape[0] != 1:
        raise ShapeError(f"expected one 1 x Nt channel row, got shape {a.shape}")
    return a
