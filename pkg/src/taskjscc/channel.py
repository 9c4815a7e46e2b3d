"""Transmit chain: power normalization, block-fading channel, equalization,
rescaling and detection.

Blocks are complex arrays whose last axis holds the k symbols of one
transmission; a leading axis, when present, indexes independent blocks.
Every block gets its own channel coefficient and its own power scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constellation import Constellation, nearest_index
from .errors import DegenerateChannel

CHANNEL_KINDS = ("awgn", "rayleigh")


@dataclass(frozen=True)
class ChannelConfig:
    kind: str = "awgn"
    snr_db: float = 10.0
    p_target: float = 1.0

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"channel kind must be one of {CHANNEL_KINDS}, got {self.kind!r}")
        if not self.p_target > 0:
            raise ValueError("p_target must be positive")
        # +inf is accepted as the noiseless sentinel
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError(f"invalid snr_db {self.snr_db}")

    @property
    def noise_var(self) -> float:
        return snr_to_noise_variance(self.snr_db, self.p_target)


@dataclass
class ChannelRealization:
    h: np.ndarray        # one coefficient per block
    noise: np.ndarray    # realized n, same shape as the block(s)
    p_zbar: np.ndarray   # transmitter-side power before normalization, per block


def snr_to_noise_variance(snr_db: float, p_target: float = 1.0) -> float:
    """Total complex noise variance for ``SNR = 10 log10(p_target / var)``."""
    return p_target * 10.0 ** (-snr_db / 10.0)


def block_power(z) -> np.ndarray:
    z = np.asarray(z)
    return np.mean(z.real ** 2 + z.imag ** 2, axis=-1)


def normalize_power(z_bar, p_target: float = 1.0):
    """Scale each block to average symbol power ``p_target``.

    Returns ``(z_in, p_zbar)`` where ``p_zbar`` is the pre-scaling power.
    """
    z_bar = np.asarray(z_bar, dtype=np.complex128)
    p = block_power(z_bar)
    if np.any(p <= 0):
        raise ValueError("cannot normalize an all-zero block")
    scale = np.sqrt(p_target / p)
    return z_bar * scale[..., None], p


def draw_h(kind: str, n_blocks: tuple, rng: np.random.Generator) -> np.ndarray:
    if kind == "awgn":
        return np.ones(n_blocks, dtype=np.complex128)
    re = rng.standard_normal(n_blocks)
    im = rng.standard_normal(n_blocks)
    return (re + 1j * im) * math.sqrt(0.5)


def draw_noise(shape: tuple, noise_var: float, rng: np.random.Generator) -> np.ndarray:
    # always consume the stream, even when noiseless, so runs stay aligned
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) * math.sqrt(noise_var / 2.0)


def transmit(z_in, cfg: ChannelConfig, rng: np.random.Generator, p_zbar=None):
    """Send power-normalized block(s) through ``z_out = h * z_in + n``.

    ``p_zbar`` is only carried into the returned realization as side
    information for the receiver.
    """
    z_in = np.asarray(z_in, dtype=np.complex128)
    h = draw_h(cfg.kind, z_in.shape[:-1], rng)
    n = draw_noise(z_in.shape, cfg.noise_var, rng)
    z_out = h[..., None] * z_in + n
    if p_zbar is None:
        p_zbar = np.full(z_in.shape[:-1], cfg.p_target)
    return z_out, ChannelRealization(h, n, np.asarray(p_zbar, dtype=np.float64))


def equalize(z_out, h) -> np.ndarray:
    h = np.asarray(h, dtype=np.complex128)
    mag2 = h.real ** 2 + h.imag ** 2
    if np.any(np.sqrt(mag2) < 1e-12):
        raise DegenerateChannel("channel coefficient magnitude below 1e-12")
    return (np.conj(h) / mag2)[..., None] * z_out


def receive(z_out, real: ChannelRealization, p_target: float = 1.0,
            c: Constellation | None = None) -> np.ndarray:
    """Equalize with full CSI, undo the power scaling, then detect on ``c``.

    With ``c=None`` (analog mode) the rescaled soft symbols are returned.
    """
    z_check = equalize(z_out, real.h)
    z_tilde = np.sqrt(real.p_zbar / p_target)[..., None] * z_check
    if c is None:
        return z_tilde
    return c.points[nearest_index(z_tilde, c)]


def analog_pass(z, cfg: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    z_in, p = normalize_power(z, cfg.p_target)
    z_out, real = transmit(z_in, cfg, rng, p)
    return receive(z_out, real, cfg.p_target)


def modulated_pass(z, cfg: ChannelConfig, c: Constellation, rng: np.random.Generator):
    """Quantize, normalize, transmit, equalize, rescale, detect.

    Returns ``(z_hat, z_bar, realization)``.
    """
    z_bar = c.points[nearest_index(z, c)]
    z_in, p = normalize_power(z_bar, cfg.p_target)
    z_out, real = transmit(z_in, cfg, rng, p)
    return receive(z_out, real, cfg.p_target, c), z_bar, real


# -- differentiable paths used in training ----------------------------------
#
# Forward values come from the functions above. For the backward pass the
# received soft block is written as z_tilde = z + w * sqrt(p(z)), with the
# realized noise folded into the constant w = conj(h) n / (|h|^2 sqrt(P)).
# Gradients are complex: dL/dRe + 1j * dL/dIm.

def _through_power(g, z, w):
    k = z.shape[-1]
    sp = np.sqrt(block_power(z))
    s = np.sum(g.real * w.real + g.imag * w.imag, axis=-1)
    return g + (s / (k * sp))[..., None] * z


def _noise_constant(real: ChannelRealization, p_target: float):
    h = real.h
    mag2 = h.real ** 2 + h.imag ** 2
    return (np.conj(h) / mag2)[..., None] * real.noise / math.sqrt(p_target)


class AnalogPath:
    """Unquantized transmission used for pre-training."""

    quantized = False

    def __init__(self, cfg: ChannelConfig):
        self.cfg = cfg

    def forward(self, z, rng):
        z_in, p = normalize_power(z, self.cfg.p_target)
        z_out, real = transmit(z_in, self.cfg, rng, p)
        z_hat = receive(z_out, real, self.cfg.p_target)
        return z_hat, (z, _noise_constant(real, self.cfg.p_target), real)

    def backward(self, ctx, g):
        z, w, _ = ctx
        return _through_power(g, z, w)


class ModulatedPath:
    """Transmission with grid quantization at both ends.

    Both quantizers pass gradients straight through, except that a
    coordinate lying beyond the outermost grid row or column gets no
    gradient (the quantizer saturates there). ``clip=False`` gives the plain
    identity estimator. ``quantize=False`` turns this into
    :class:`AnalogPath` (debug switch).
    """

    def __init__(self, cfg: ChannelConfig, c: Constellation, quantize: bool = True,
                 clip: bool = True):
        self.cfg = cfg
        self.c = c
        self.quantized = quantize
        self.clip = clip

    def forward(self, z, rng):
        if not self.quantized:
            return AnalogPath.forward(self, z, rng)
        z_hat, z_bar, real = modulated_pass(z, self.cfg, self.c, rng)
        return z_hat, (z_bar, _noise_constant(real, self.cfg.p_target), real, z)

    def backward(self, ctx, g):
        if not self.quantized:
            return AnalogPath.backward(self, ctx, g)
        z_bar, w, _, z = ctx
        g = _through_power(g, z_bar, w)
        if self.clip:
            edge = self.c.r / 2
            g = (np.where(np.abs(z.real) > edge, 0.0, g.real)
                 + 1j * np.where(np.abs(z.imag) > edge, 0.0, g.imag))
        return g
