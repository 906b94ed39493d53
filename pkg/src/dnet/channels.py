"""Synthetic multiuser mmWave channels and dataset handling.

Channels follow a sparse geometric (Saleh-Valenzuela style) model over a
half-wavelength ULA: each user's row is a sum of L plane-wave paths with
i.i.d. complex-normal gains. The ``clustered`` mode packs all users'
angles into one narrow cluster to produce strongly non-orthogonal
channels; the default mode draws user angles independently over the
sector, which keeps them quasi-orthogonal for large antenna counts.

Datasets are stored on disk in the DNCH format: little-endian, magic
"DNCH", u32 version=1, u32 K, u32 Nt, u64 n_samples, then per sample
K*Nt complex entries row-major as (re f32, im f32). In-memory samples
are complex64 to match, so save/load round trips are bit-exact.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateDataError, FormatError

MAGIC = b"DNCH"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")


@dataclass
class ChannelMatrix:
    """Downlink CSI for one sample: row k is user k's conjugated channel."""

    h: np.ndarray  # (K, Nt) complex
    subcarrier: int | None = None

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.complex128)
        if self.h.ndim != 2:
            raise ConfigError(f"channel matrix must be rank 2, got shape {self.h.shape}")
        k, nt = self.h.shape
        if k < 1 or nt < k:
            raise ConfigError(f"need K >= 1 and Nt >= K, got K={k}, Nt={nt}")
        if not np.all(np.isfinite(self.h.view(np.float64))):
            raise ConfigError("channel matrix contains non-finite entries")

    @property
    def k(self) -> int:
        return self.h.shape[0]

    @property
    def nt(self) -> int:
        return self.h.shape[1]


def as_channel_array(h) -> np.ndarray:
    """Coerce a ChannelMatrix or array-like to a (K, Nt) complex128 array."""
    if isinstance(h, ChannelMatrix):
        return h.h
    a = np.asarray(h, dtype=np.complex128)
    if a.ndim != 2:
        raise ConfigError(f"expected a (K, Nt) channel matrix, got shape {a.shape}")
    return a


@dataclass
class GeometryConfig:
    """Knobs of the geometric channel generator.

    By default channels come from a fixed "scenario": a finite grid of
    candidate user positions, each with its own frozen multipath geometry
    (angles and path magnitudes), while per-sample randomness enters only
    through position choice and path phases. That mirrors how flat-fading
    samples drawn from one ray-traced deployment behave and gives the
    networks a learnable channel distribution. Set ``positions=None`` for
    fully continuous i.i.d. path angles and complex-normal gains.
    """

    paths: int = 3
    angle_spread: float = 0.1        # per-path deviation around the user center, radians
    mode: str = "geo"                # "geo" (independent users) or "clustered"
    cluster_halfwidth: float = 0.05  # user-center deviation around the cluster, radians
    sector_halfwidth: float = math.pi / 3
    positions: int | None = 64       # candidate-position grid size; None -> continuous
    scenario_seed: int = 7           # fixes the grid geometry across datasets

    def __post_init__(self):
        if self.paths < 1:
            raise ConfigError(f"need at least one path, got {self.paths}")
        if self.angle_spread < 0:
            raise ConfigError(f"angle spread must be >= 0, got {self.angle_spread}")
        if self.mode not in ("geo", "clustered"):
            raise ConfigError(f"unknown clustering mode {self.mode!r}")
        if self.positions is not None and self.positions < 1:
            raise ConfigError(f"need at least one grid position, got {self.positions}")


@dataclass
class ChannelDataset:
    """Block of channel samples with shared (K, Nt); immutable by convention."""

    data: np.ndarray  # (n, K, Nt) complex64
    norm_scale: float = 1.0

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.complex64)
        if self.data.ndim != 3:
            raise ConfigError(f"dataset block must be rank 3, got {self.data.shape}")

    @property
    def k(self) -> int:
        return self.data.shape[1]

    @property
    def nt(self) -> int:
        return self.data.shape[2]

    def __len__(self) -> int:
        return self.data.shape[0]

    def channel(self, i: int) -> ChannelMatrix:
        return ChannelMatrix(self.data[i].astype(np.complex128))


def steering_vector(theta, nt: int) -> np.ndarray:
    """Half-wavelength ULA steering vector(s), unit norm: a_n = e^{j pi n sin(theta)} / sqrt(Nt)."""
    theta = np.asarray(theta, dtype=np.float64)
    phase = np.pi * np.multiply.outer(np.sin(theta), np.arange(nt))
    return np.exp(1j * phase) / math.sqrt(nt)


def generate_geometric(config: GeometryConfig, k: int, nt: int, n_samples: int,
                       seed: int) -> ChannelDataset:
    """Draw ``n_samples`` i.i.d. channel matrices; deterministic given seed."""
    if k < 1 or k > nt:
        raise ConfigError(f"need 1 <= K <= Nt, got K={k}, Nt={nt}")
    if n_samples < 1:
        raise ConfigError(f"need at least one sample, got {n_samples}")
    rng = np.random.default_rng(seed)
    ell = config.paths
    if config.mode == "clustered":
        cluster = rng.uniform(-config.sector_halfwidth, config.sector_halfwidth,
                              size=(n_samples, 1))
        centers = cluster + rng.uniform(-config.cluster_halfwidth, config.cluster_halfwidth,
                                        size=(n_samples, k))
    else:
        centers = rng.uniform(-config.sector_halfwidth, config.sector_halfwidth,
                              size=(n_samples, k))
    angles = centers[:, :, None] + rng.uniform(-config.angle_spread, config.angle_spread,
                                               size=(n_samples, k, ell))
    gains = (rng.standard_normal((n_samples, k, ell))
             + 1j * rng.standard_normal((n_samples, k, ell))) / math.sqrt(2.0)
    # h_k = sqrt(Nt/L) * sum_l alpha_l a(theta_l)^H; the 1/sqrt(Nt) of the
    # steering vector cancels, leaving per-entry unit power in expectation.
    phase = -1j * np.pi * np.sin(angles)[..., None] * np.arange(nt)
    h = np.einsum("skl,skln->skn", gains, np.exp(phase)) / math.sqrt(ell)
    return ChannelDataset(h.astype(np.complex64))


def normalize(ds: ChannelDataset) -> ChannelDataset:
    """Scale the whole dataset by one scalar so mean per-entry power is 1."""
    power = float(np.mean(np.abs(ds.data.astype(np.complex128)) ** 2))
    if power == 0.0:
        raise DegenerateDataError("cannot normalize an all-zero dataset")
    scale = 1.0 / math.sqrt(power)
    scaled = (ds.data.astype(np.complex128) * scale).astype(np.complex64)
    return ChannelDataset(scaled, norm_scale=scale)


def split(ds: ChannelDataset, train_fraction: float, seed: int) -> tuple[ChannelDataset, ChannelDataset]:
    """Disjoint shuffled train/validation split, deterministic by seed."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train fraction must be in (0, 1), got {train_fraction}")
    n = len(ds)
    n_train = int(round(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise ConfigError(f"split of {n} samples at {train_fraction} leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    left = ChannelDataset(ds.data[perm[:n_train]], norm_scale=ds.norm_scale)
    right = ChannelDataset(ds.data[perm[n_train:]], norm_scale=ds.norm_scale)
    return left, right


def save_dataset(ds: ChannelDataset, path) -> None:
    n = len(ds)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, ds.k, ds.nt, n))
        f.write(ds.data.astype("<c8").tobytes())


def load_dataset(path) -> ChannelDataset:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FormatError("file too short for DNCH header", len(raw))
    magic, version, k, nt, n = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if k < 1:
        raise FormatError(f"invalid K={k}", 8)
    if nt < k:
        raise FormatError(f"invalid Nt={nt} for K={k}", 12)
    expected = _HEADER.size + 8 * n * k * nt
    if len(raw) < expected:
        raise FormatError(f"truncated payload, expected {expected} bytes", len(raw))
    if len(raw) > expected:
        raise FormatError("trailing bytes after payload", expected)
    data = np.frombuffer(raw, dtype="<c8", offset=_HEADER.size).reshape(n, k, nt)
    return ChannelDataset(data.copy())
