"""Two-stage training: supervised pre-training, then joint rate maximization.

Stage 1 fits the compression network to reconstruct CSI (loss L1, scaled
Frobenius distance). Stage 2 fits the analog-design network against
conjugate-phase PZF labels computed from perfect CSI (loss L2), with the
compression network frozen. The joint stage then fine-tunes everything,
including a freshly initialized digital-design network, on the negative
sum rate (loss L3) evaluated against the true channels.

All randomness derives from the config seed, so a fixed seed makes every
stage bit-reproducible (wall-clock readings aside). Stage functions never
mutate the parameter groups they receive; they return trained copies.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .channels import ChannelDataset, split
from .complexmat import ComplexMatrix, cmatmul
from .disnet import (DecoderParams, EncoderParams, disnet_apply, encode_rows,
                     init_decoder, init_encoder, realify_rows)
from .errors import ConfigError, DegenerateOutputError, DivergenceError
from .params import clone_group
from .precoding import batch_sum_rates
from .prenet import (BBNetParams, RFNetParams, bbnet_apply, init_bbnet,
                     init_rfnet, rfnet_apply)

LN2 = math.log(2.0)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    sigma_f: float | None = 0.0  # None -> calibrate to 0.1 * RMS codeword per stage
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    power_db: float = 10.0  # transmit power inside the rate objective
    grad_clip: float | None = None
    val_fraction: float = 0.1
    squared_frobenius: bool = False

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.sigma_f is not None and self.sigma_f < 0:
            raise ConfigError(f"sigma_f must be >= 0, got {self.sigma_f}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val fraction must be in (0, 1), got {self.val_fraction}")

    @property
    def power(self) -> float:
        return 10.0 ** (self.power_db / 10.0)


@dataclass
class TrainReport:
    stage: str
    losses: list = field(default_factory=list)       # train loss per epoch
    val_metric: list = field(default_factory=list)   # val loss (min is best) or val rate (max)
    seconds: list = field(default_factory=list)
    best_epoch: int = -1
    init_val_metric: float | None = None
    sigma_f: float = 0.0


class Adam:
    """Adaptive moment estimation over a fixed-order parameter list."""

    def __init__(self, named_params, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 grad_clip: float | None = None):
        self.params = [t for _, t in named_params]
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.grad_clip = grad_clip
        self.m = [np.zeros_like(t.data) for t in self.params]
        self.v = [np.zeros_like(t.data) for t in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for t in self.params:
            t.zero_grad()

    def step(self) -> None:
        scale = 1.0
        if self.grad_clip is not None:
            gnorm = math.sqrt(sum(float(np.sum(t.grad * t.grad)) for t in self.params))
            if gnorm > self.grad_clip:
                scale = self.grad_clip / gnorm
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for t, m, v in zip(self.params, self.m, self.v):
            g = t.grad if scale == 1.0 else t.grad * scale
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            t.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# losses

def _const_pair(x) -> tuple[Tensor, Tensor]:
    """Complex array-like -> constant (re, im) tensors with a batch axis."""
    if isinstance(x, ComplexMatrix):
        a = x.to_array()
    else:
        a = np.asarray(x, dtype=np.complex128)
    if a.ndim == 2:
        a = a[None]
    return Tensor(a.real), Tensor(a.imag)


def _graph_pair(x) -> tuple[Tensor, Tensor]:
    """(re, im) tensor pair / ComplexMatrix / complex array -> batched pair."""
    if isinstance(x, (tuple, list)) and len(x) == 2 and isinstance(x[0], Tensor):
        re, im = x
        if re.ndim == 2:
            re = ad.reshape(re, (1,) + re.shape)
            im = ad.reshape(im, (1,) + im.shape)
        return re, im
    return _const_pair(x)


def _scaled_frobenius(d_re: Tensor, d_im: Tensor, squared: bool) -> Tensor:
    b = d_re.shape[0]
    denom = d_re.shape[1] * d_re.shape[2]
    per = ad.sum_axes(ad.add(ad.square(d_re), ad.square(d_im)), (1, 2))
    if not squared:
        per = ad.sqrt(per)
    return ad.mul(ad.sum_all(per), 1.0 / (b * denom))


def loss_l1(h_true, h_rec, squared: bool = False) -> Tensor:
    """CSI reconstruction loss: mean over samples of ||H - H~||_F / (K Nt).

    The norm is unsquared as printed in the training objective;
    ``squared`` switches to the squared-norm variant.
    """
    t_re, t_im = _const_pair(h_true)
    r_re, r_im = _graph_pair(h_rec)
    return _scaled_frobenius(ad.sub(t_re, r_re), ad.sub(t_im, r_im), squared)


def loss_l2(f_label, f_rec, squared: bool = False) -> Tensor:
    """Analog-stage loss: mean over samples of ||F - F~||_F / (K Nt)."""
    t_re, t_im = _const_pair(f_label)
    r_re, r_im = _graph_pair(f_rec)
    return _scaled_frobenius(ad.sub(t_re, r_re), ad.sub(t_im, r_im), squared)


def loss_l3(h_true, f_tilde, d_tilde, power: float) -> Tensor:
    """Negative sum rate of the true channel under the designed precoders."""
    h_re, h_im = _const_pair(h_true)
    f_re, f_im = _graph_pair(f_tilde)
    d_re, d_im = _graph_pair(d_tilde)
    b, k = h_re.shape[0], h_re.shape[1]
    fd_re, fd_im = cmatmul(f_re, f_im, d_re, d_im)
    t_re, t_im = cmatmul(h_re, h_im, fd_re, fd_im)  # (B, K, K)
    s = ad.mul(ad.add(ad.square(t_re), ad.square(t_im)), power / k)
    sig = ad.diagonal(s)
    interference = ad.sub(ad.sum_axes(s, (2,)), sig)
    sinr = ad.div(sig, ad.add(interference, 1.0))
    rate = ad.mul(ad.sum_all(ad.log(ad.add(sinr, 1.0))), 1.0 / LN2)
    return ad.mul(rate, -1.0 / b)


# ---------------------------------------------------------------------------
# stage machinery

def _streams(seed: int, stage: int) -> list[np.random.Generator]:
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, stage])
    return [np.random.default_rng(c) for c in ss.spawn(4)]


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield perm[lo:lo + batch_size]


def _resolve_sigma_f(cfg: TrainConfig, enc: EncoderParams,
                     data: np.ndarray) -> float:
    """Explicit sigma_f, or 0.1 * RMS codeword over the training set."""
    if cfg.sigma_f is not None:
        return cfg.sigma_f
    frozen = clone_group(enc, requires_grad=False)
    total, count = 0.0, 0
    for lo in range(0, data.shape[0], 256):
        h = data[lo:lo + 256].astype(np.complex128)
        q = encode_rows(realify_rows(h), frozen).data
        total += float(np.sum(q * q))
        count += q.size
    return 0.1 * math.sqrt(total / count)


def _noise_block(rng, sigma_f: float, n_rows: int, mt: int) -> np.ndarray | None:
    if sigma_f == 0.0:
        return None
    return rng.normal(0.0, sigma_f, size=(n_rows, 2 * mt))


def _check_finite(value: float, epoch: int, stage: str) -> None:
    if not math.isfinite(value):
        raise DivergenceError(epoch, stage)


def pretrain_disnet(ds: ChannelDataset, mt: int,
                    cfg: TrainConfig) -> tuple[EncoderParams, DecoderParams, TrainReport]:
    """Stage 1: minimize the reconstruction loss; returns the best-validation copy."""
    train, val = split(ds, 1.0 - cfg.val_fraction, cfg.seed)
    init_rng, shuffle_rng, noise_rng, val_rng = _streams(cfg.seed, 1)
    k, nt = ds.k, ds.nt
    enc = init_encoder(nt, mt, init_rng)
    dec = init_decoder(nt, mt, init_rng)
    sigma_f = _resolve_sigma_f(cfg, enc, train.data)
    val_noise = _noise_block(val_rng, sigma_f, len(val) * k, mt)
    opt = Adam(enc.named() + dec.named(), cfg.learning_rate, cfg.beta1, cfg.beta2,
               cfg.eps, cfg.grad_clip)
    report = TrainReport(stage="disnet", sigma_f=sigma_f)
    best = (clone_group(enc), clone_group(dec))
    best_val = math.inf
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        batch_losses = []
        for idx in _batches(len(train), cfg.batch_size, shuffle_rng):
            h = train.data[idx].astype(np.complex128)
            noise = _noise_block(noise_rng, sigma_f, h.shape[0] * k, mt)
            loss = loss_l1(h, disnet_apply(h, enc, dec, noise), cfg.squared_frobenius)
            _check_finite(loss.item(), epoch, "disnet")
            opt.zero_grad()
            loss.backward()
            opt.step()
            batch_losses.append(loss.item())
        val_loss = _disnet_val_loss(val, enc, dec, val_noise, cfg)
        report.losses.append(float(np.mean(batch_losses)))
        report.val_metric.append(val_loss)
        report.seconds.append(time.perf_counter() - t0)
        if val_loss < best_val:
            best_val = val_loss
            best = (clone_group(enc), clone_group(dec))
            report.best_epoch = epoch
    return best[0], best[1], report


def _disnet_val_loss(val: ChannelDataset, enc, dec, val_noise, cfg) -> float:
    frozen_enc = clone_group(enc, requires_grad=False)
    frozen_dec = clone_group(dec, requires_grad=False)
    total = 0.0
    k = val.k
    for lo in range(0, len(val), 256):
        h = val.data[lo:lo + 256].astype(np.complex128)
        noise = None if val_noise is None else val_noise[lo * k:(lo + h.shape[0]) * k]
        loss = loss_l1(h, disnet_apply(h, frozen_enc, frozen_dec, noise),
                       cfg.squared_frobenius)
        total += loss.item() * h.shape[0]
    return total / len(val)


def pzf_analog_labels(h_block: np.ndarray) -> np.ndarray:
    """Vectorized conjugate-phase analog labels for a (B, K, Nt) block."""
    nt = h_block.shape[2]
    return np.exp(-1j * np.angle(h_block)).transpose(0, 2, 1) / math.sqrt(nt)


def pretrain_rfnet(ds: ChannelDataset, enc: EncoderParams, dec: DecoderParams,
                   cfg: TrainConfig) -> tuple[RFNetParams, TrainReport]:
    """Stage 2: fit the analog stage to perfect-CSI PZF labels, compression frozen."""
    train, val = split(ds, 1.0 - cfg.val_fraction, cfg.seed)
    init_rng, shuffle_rng, noise_rng, val_rng = _streams(cfg.seed, 2)
    k, nt = ds.k, ds.nt
    frozen_enc = clone_group(enc, requires_grad=False)
    frozen_dec = clone_group(dec, requires_grad=False)
    mt = frozen_enc.mt
    sigma_f = _resolve_sigma_f(cfg, frozen_enc, train.data)
    val_noise = _noise_block(val_rng, sigma_f, len(val) * k, mt)
    rf = init_rfnet(k, nt, init_rng)
    opt = Adam(rf.named(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, cfg.grad_clip)
    report = TrainReport(stage="rfnet", sigma_f=sigma_f)
    best, best_val = clone_group(rf), math.inf

    def forward(h_block, noise):
        h_re, h_im = disnet_apply(h_block, frozen_enc, frozen_dec, noise)
        _, f_re, f_im = rfnet_apply(h_re, h_im, rf)
        return loss_l2(pzf_analog_labels(h_block), (f_re, f_im), cfg.squared_frobenius)

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        batch_losses = []
        for idx in _batches(len(train), cfg.batch_size, shuffle_rng):
            h = train.data[idx].astype(np.complex128)
            loss = forward(h, _noise_block(noise_rng, sigma_f, h.shape[0] * k, mt))
            _check_finite(loss.item(), epoch, "rfnet")
            opt.zero_grad()
            loss.backward()
            opt.step()
            batch_losses.append(loss.item())
        total = 0.0
        for lo in range(0, len(val), 256):
            h = val.data[lo:lo + 256].astype(np.complex128)
            noise = None if val_noise is None else val_noise[lo * k:(lo + h.shape[0]) * k]
            total += forward(h, noise).item() * h.shape[0]
        val_loss = total / len(val)
        report.losses.append(float(np.mean(batch_losses)))
        report.val_metric.append(val_loss)
        report.seconds.append(time.perf_counter() - t0)
        if val_loss < best_val:
            best_val, best = val_loss, clone_group(rf)
            report.best_epoch = epoch
    return best, report


def joint_train(ds: ChannelDataset, enc: EncoderParams, dec: DecoderParams,
                rf: RFNetParams, bb: BBNetParams | None, cfg: TrainConfig,
                ) -> tuple[EncoderParams, DecoderParams, RFNetParams, BBNetParams, TrainReport]:
    """Joint stage: fine-tune everything on the negative sum rate.

    ``bb`` is freshly initialized when None (redrawn if the very first
    batch degenerates). Inputs are never mutated; best-validation copies
    are returned.
    """
    train, val = split(ds, 1.0 - cfg.val_fraction, cfg.seed)
    init_rng, shuffle_rng, noise_rng, val_rng = _streams(cfg.seed, 3)
    k, nt = ds.k, ds.nt
    enc, dec, rf = clone_group(enc), clone_group(dec), clone_group(rf)
    bb = clone_group(bb) if bb is not None else init_bbnet(k, init_rng)
    mt = enc.mt
    sigma_f = _resolve_sigma_f(cfg, enc, train.data)
    val_noise = _noise_block(val_rng, sigma_f, len(val) * k, mt)
    power = cfg.power

    def batch_loss(h_block, noise):
        h_re, h_im = disnet_apply(h_block, enc, dec, noise)
        _, f_re, f_im = rfnet_apply(h_re, h_im, rf)
        d_re, d_im = bbnet_apply(h_re, h_im, f_re, f_im, bb)
        return loss_l3(h_block, (f_re, f_im), (d_re, d_im), power)

    def val_rate() -> float:
        frozen = [clone_group(g, requires_grad=False) for g in (enc, dec, rf, bb)]
        total = 0.0
        for lo in range(0, len(val), 256):
            h = val.data[lo:lo + 256].astype(np.complex128)
            noise = None if val_noise is None else val_noise[lo * k:(lo + h.shape[0]) * k]
            h_re, h_im = disnet_apply(h, frozen[0], frozen[1], noise)
            _, f_re, f_im = rfnet_apply(h_re, h_im, frozen[2])
            d_re, d_im = bbnet_apply(h_re, h_im, f_re, f_im, frozen[3])
            fd = (f_re.data + 1j * f_im.data) @ (d_re.data + 1j * d_im.data)
            total += float(np.sum(batch_sum_rates(h, fd, power)))
        return total / len(val)

    report = TrainReport(stage="joint", sigma_f=sigma_f)
    report.init_val_metric = val_rate()
    best = tuple(clone_group(g) for g in (enc, dec, rf, bb))
    best_val = report.init_val_metric
    opt = Adam(enc.named() + dec.named() + rf.named() + bb.named(),
               cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, cfg.grad_clip)
    first_step = True
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        batch_losses = []
        for idx in _batches(len(train), cfg.batch_size, shuffle_rng):
            h = train.data[idx].astype(np.complex128)
            noise = _noise_block(noise_rng, sigma_f, h.shape[0] * k, mt)
            if first_step:
                for retry in range(5):
                    try:
                        loss = batch_loss(h, noise)
                        break
                    except DegenerateOutputError:
                        bb_new = init_bbnet(k, init_rng)
                        for (_, dst), (_, src) in zip(bb.named(), bb_new.named()):
                            dst.data[...] = src.data
                else:
                    raise
                first_step = False
            else:
                try:
                    loss = batch_loss(h, noise)
                except DegenerateOutputError as e:
                    raise DegenerateOutputError(f"epoch {epoch}: {e}") from e
            _check_finite(loss.item(), epoch, "joint")
            opt.zero_grad()
            loss.backward()
            opt.step()
            batch_losses.append(loss.item())
        rate = val_rate()
        report.losses.append(float(np.mean(batch_losses)))
        report.val_metric.append(rate)
        report.seconds.append(time.perf_counter() - t0)
        if rate > best_val:
            best_val, best = rate, tuple(clone_group(g) for g in (enc, dec, rf, bb))
            report.best_epoch = epoch
    return best[0], best[1], best[2], best[3], report


def write_reports_csv(reports: list[TrainReport], path) -> None:
    """Concatenated per-epoch curves: epoch, l1, l2, l3, val_rate, seconds."""
    col = {"disnet": "l1", "rfnet": "l2", "joint": "l3"}
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "l1", "l2", "l3", "val_rate", "seconds"])
        for rep in reports:
            for e, (loss, sec) in enumerate(zip(rep.losses, rep.seconds)):
                row = {"epoch": e, "l1": "", "l2": "", "l3": "",
                       "val_rate": "", "seconds": repr(sec)}
                row[col[rep.stage]] = repr(loss)
                if rep.stage == "joint":
                    row["val_rate"] = repr(rep.val_metric[e])
                w.writerow([row[c] for c in ("epoch", "l1", "l2", "l3",
                                             "val_rate", "seconds")])
