"""Square QAM grids scaled by a single learnable side length ``r``.

Symbols are plain ``complex128`` numpy arrays. A block is 1-D of length k;
a batch of blocks is 2-D ``(n_blocks, k)``; every function here treats the
trailing axes element-wise and averages over all symbols.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import _kernels
from .errors import ConstellationDivergence

SUPPORTED_ORDERS = (4, 16, 64, 256)


@dataclass(frozen=True)
class Constellation:
    """A u-point square grid whose corner-to-corner side length is ``r``.

    Only ``(u, r)`` is state; ``points`` is always regenerated from it.
    """

    u: int
    r: float
    points: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.u not in SUPPORTED_ORDERS:
            raise ValueError(f"unsupported QAM order {self.u}; expected one of {SUPPORTED_ORDERS}")
        if not (self.r > 0 and math.isfinite(self.r)):
            raise ValueError(f"constellation parameter r must be positive and finite, got {self.r}")
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "points", _grid(self.u, self.r))
        self.points.setflags(write=False)

    @property
    def side(self) -> int:
        return math.isqrt(self.u)

    @property
    def spacing(self) -> float:
        return self.r / (self.side - 1)

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.u))

    def to_dict(self) -> dict:
        return {"u": self.u, "r": self.r}

    @classmethod
    def from_dict(cls, d: dict) -> "Constellation":
        return cls(int(d["u"]), float(d["r"]))


def _grid(u: int, r: float) -> np.ndarray:
    m = math.isqrt(u)
    j = np.arange(u)
    step = r / (m - 1)
    re = -r / 2 + (j % m) * step
    im = r / 2 - (j // m) * step
    return re + 1j * im


def build_qam(u: int, r: float) -> Constellation:
    """Build the u-QAM grid with side length r (0-based point index j)."""
    return Constellation(u, r)


def unit_grid(u: int) -> np.ndarray:
    """Points of the grid at r = 1; every grid is ``r * unit_grid(u)``."""
    return _grid(u, 1.0)


def nearest_index(z, c: Constellation) -> np.ndarray:
    z = np.asarray(z, dtype=np.complex128)
    idx, _ = _kernels.nearest(z, c.points)
    return idx.reshape(z.shape)


def quantize_symbol(z: complex, c: Constellation) -> tuple[int, complex]:
    idx, _ = _kernels.nearest(np.array([z], dtype=np.complex128), c.points)
    j = int(idx[0])
    return j, complex(c.points[j])


def quantize_block(z, c: Constellation) -> np.ndarray:
    """Replace every symbol by its nearest grid point (lowest index on ties)."""
    return c.points[nearest_index(z, c)]


def quantization_loss(z, c: Constellation) -> float:
    """Mean un-squared distance from each symbol to its nearest grid point."""
    z = np.asarray(z, dtype=np.complex128)
    _, d2 = _kernels.nearest(z, c.points)
    return float(np.sqrt(d2).sum() / d2.shape[0])


def quantization_loss_grad_r(z, c: Constellation) -> float:
    """Derivative of :func:`quantization_loss` in ``r``.

    Each symbol's nearest point is held fixed, so ties use the lowest-index
    assignment; symbols sitting exactly on a point contribute zero.
    """
    return _kernels.qloss_grad_r(z, c.points, c.r)[1]


def quantization_loss_and_grad_r(z, c: Constellation) -> tuple[float, float]:
    return _kernels.qloss_grad_r(z, c.points, c.r)


def quantization_loss_grad_z(z, c: Constellation) -> np.ndarray:
    """Per-symbol gradient of the summed distance ``sum_i |z_i - Q(z_i)|``.

    Returned as a complex array ``dL/dRe + 1j * dL/dIm``; zero for symbols
    already on the grid.
    """
    z = np.asarray(z, dtype=np.complex128)
    diff = z - quantize_block(z, c)
    dist = np.abs(diff)
    out = np.zeros_like(diff)
    nz = dist > 0
    out[nz] = diff[nz] / dist[nz]
    return out


@dataclass
class FitSchedule:
    lr: float = 1e-2
    tol: float = 1e-5
    patience: int = 50
    max_steps: int = 10_000
    r_min: float = 1e-3
    r_max: float = 1e3


@dataclass
class FitResult:
    r_star: float
    steps: int
    converged: bool
    r_history: list[float]
    loss_history: list[float]


def fit_constellation(symbol_source: Iterable, u: int, r_init: float,
                      schedule: FitSchedule | None = None) -> FitResult:
    """Fit the grid side length to a stream of symbol batches by plain SGD.

    ``symbol_source`` yields complex arrays (one block or a batch of blocks);
    each step uses the batch-mean quantization loss. Stops once
    ``|delta r| < tol`` for ``patience`` consecutive steps, or after
    ``max_steps``. Raises :class:`ConstellationDivergence` if ``r`` leaves
    ``(r_min, r_max)``.
    """
    s = schedule or FitSchedule()
    if r_init <= 0:
        raise ValueError("r_init must be positive")
    if u not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported QAM order {u}")
    r = float(r_init)
    r_hist, l_hist = [r], []
    calm = 0
    step = 0
    converged = False
    source = iter(symbol_source)
    while step < s.max_steps:
        z = next(source)
        loss, g = _kernels.qloss_grad_r(z, _grid(u, r), r)
        l_hist.append(loss)
        r_new = r - s.lr * g
        if not (s.r_min < r_new < s.r_max) or not math.isfinite(r_new):
            raise ConstellationDivergence(
                f"r left ({s.r_min}, {s.r_max}) at step {step}: {r_new!r}")
        calm = calm + 1 if abs(r_new - r) < s.tol else 0
        r = r_new
        r_hist.append(r)
        step += 1
        if calm >= s.patience:
            converged = True
            break
    return FitResult(r, step, converged, r_hist, l_hist)
