"""Fixed analog beamforming: ULA steering, DFT codebooks, EGT, genie search, link budget."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError

PATTERN_FLOOR_DB = -60.0


@dataclass(frozen=True)
class ArrayConfig:
    n_ant: int = 64
    spacing_ratio: float = 0.5  # element spacing over wavelength

    def __post_init__(self):
        if self.n_ant < 1:
            raise ConfigError("n_ant must be >= 1")
        if self.spacing_ratio <= 0:
            raise ConfigError("spacing_ratio must be positive")


@dataclass(frozen=True)
class LinkBudget:
    """Table-style link parameters; all SNRs are computed from these."""
    tx_power_dbm: float = 40.0
    noise_psd_dbm_hz: float = -161.0
    bandwidth_hz: float = 50e6
    spreading_gain: float = 32.0

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ConfigError("bandwidth_hz must be positive")
        if self.spreading_gain < 1:
            raise ConfigError("spreading_gain must be >= 1")

    @property
    def noise_power_dbm(self) -> float:
        return self.noise_psd_dbm_hz + 10.0 * math.log10(self.bandwidth_hz)

    @property
    def noise_power_mw(self) -> float:
        return 10.0 ** (self.noise_power_dbm / 10.0)

    @property
    def tx_power_mw(self) -> float:
        return 10.0 ** (self.tx_power_dbm / 10.0)


@dataclass
class Codebook:
    """N x M matrix of unit-modulus beams (columns), each entry of modulus 1/sqrt(N)."""
    beams: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.beams = np.asarray(self.beams, dtype=np.complex128)
        if self.beams.ndim != 2:
            raise ShapeError("codebook must be a 2-D matrix")
        n = self.beams.shape[0]
        if np.abs(np.abs(self.beams) - 1.0 / math.sqrt(n)).max() > 1e-12:
            raise ValueError("codebook entries violate the unit-modulus constraint")

    @property
    def n_ant(self) -> int:
        return self.beams.shape[0]

    @property
    def size(self) -> int:
        return self.beams.shape[1]


def array_response(sin_theta, cfg: ArrayConfig = ArrayConfig()) -> np.ndarray:
    """Unnormalized ULA steering vector(s) ``exp(j 2 pi d/lambda n sin(theta))``.

    A scalar input gives a length-N vector; an array of shape S gives S x N.
    """
    s = np.asarray(sin_theta, dtype=np.float64)
    if (np.abs(s) > 1.0 + 1e-12).any():
        raise ValueError("|sin(theta)| must not exceed 1")
    n = np.arange(cfg.n_ant)
    return np.exp(1j * 2.0 * np.pi * cfg.spacing_ratio * np.multiply.outer(s, n))


def dft_codebook(n_ant: int, size: int) -> Codebook:
    """Oversampled DFT codebook; column k is ``exp(-j 2 pi n k / M) / sqrt(N)``."""
    if size < n_ant:
        raise ConfigError(f"codebook size {size} smaller than antenna count {n_ant}")
    n = np.arange(n_ant)[:, None]
    k = np.arange(size)[None, :]
    beams = np.exp(-2j * np.pi * n * k / size) / math.sqrt(n_ant)
    return Codebook(beams, label=f"dft{n_ant}x{size}")


def dft_grid_sin(size: int) -> np.ndarray:
    """sin(theta) each DFT column points to (half-wavelength spacing), wrapped to [-1, 1)."""
    s = -2.0 * np.arange(size) / size
    return (s + 1.0) % 2.0 - 1.0


def beam_gain(w: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``|w^H h|^2``; broadcasts over leading batch dimensions."""
    w = np.asarray(w)
    h = np.asarray(h)
    if w.shape[-1] != h.shape[-1]:
        raise ShapeError(f"beam length {w.shape[-1]} != channel length {h.shape[-1]}")
    return np.abs(np.sum(np.conj(w) * h, axis=-1)) ** 2


def codebook_gains(h: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Gains of every codebook beam for each channel row: B x M (or M for one channel)."""
    return np.abs(np.asarray(h) @ np.conj(codebook.beams)) ** 2


def genie_index(h: np.ndarray, codebook: Codebook):
    """Best codebook beam for the true channel; ties go to the lowest index.

    Works on a single channel (returns ints/floats) or a B x N batch (arrays).
    """
    gains = codebook_gains(h, codebook)
    idx = np.argmax(gains, axis=-1)
    best = np.take_along_axis(gains, np.expand_dims(idx, -1), axis=-1)[..., 0]
    if np.ndim(idx) == 0:
        return int(idx), float(best)
    return idx, best


def egt_beam(h: np.ndarray) -> np.ndarray:
    """Equal-gain transmit beam ``h/|h| / sqrt(N)``; zero entries get phase 0.

    Under the ``w^H h`` convention this co-phases every term of the inner
    product, so ``beam_gain(egt_beam(h), h) == egt_gain(h)``.
    """
    h = np.asarray(h, dtype=np.complex128)
    mag = np.abs(h)
    unit = np.where(mag > 0, h / np.where(mag > 0, mag, 1.0), 1.0)
    return unit / math.sqrt(h.shape[-1])


def egt_gain(h: np.ndarray) -> np.ndarray:
    """``(sum |h_n|)^2 / N``, the analog-constrained upper bound."""
    h = np.asarray(h)
    return np.abs(h).sum(axis=-1) ** 2 / h.shape[-1]


def snr_db(gain, budget: LinkBudget = LinkBudget(), probing: bool = False):
    """Link SNR in dB for a linear beamforming gain (pathloss included)."""
    g = np.asarray(gain, dtype=np.float64)
    if (g <= 0).any():
        raise ValueError("gain must be positive to express in dB")
    snr = budget.tx_power_dbm + 10.0 * np.log10(g) - budget.noise_power_dbm
    if probing:
        snr = snr + 10.0 * math.log10(budget.spreading_gain)
    return float(snr) if np.ndim(snr) == 0 else snr


def uniform_sin_grid(points: int = 1024) -> np.ndarray:
    """``points`` values of sin(theta) evenly spaced over [-1, 1)."""
    return -1.0 + 2.0 * np.arange(points) / points


def pattern_linear(w: np.ndarray, sin_grid, cfg: ArrayConfig | None = None) -> np.ndarray:
    """Linear ``|w^H a(theta)|^2`` for beam(s) ``w`` (N or N x K) over the grid: G (x K)."""
    w = np.asarray(w)
    grid = np.asarray(sin_grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("empty angle grid")
    cfg = cfg or ArrayConfig(n_ant=w.shape[0])
    a = array_response(grid, cfg)  # G x N
    return np.abs(a @ np.conj(w)) ** 2


def beam_pattern(w: np.ndarray, sin_grid, cfg: ArrayConfig | None = None) -> np.ndarray:
    """Beam pattern in dB, floored at -60 dB."""
    lin = pattern_linear(w, sin_grid, cfg)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(lin)
    return np.maximum(db, PATTERN_FLOOR_DB)


def pattern_energy(w: np.ndarray, sin_grid=None) -> np.ndarray:
    """Mean linear gain over a uniform sin(theta) grid (1 for any unit-modulus beam)."""
    w = np.asarray(w)
    grid = uniform_sin_grid(max(4 * w.shape[0], 256)) if sin_grid is None else sin_grid
    return pattern_linear(w, grid).mean(axis=0)


def sector_energy_fraction(beams: np.ndarray, sectors, sin_grid=None) -> float:
    """Share of the aggregate pattern energy of ``beams`` (N x K) falling in ``sectors``.

    ``sectors`` is a list of ``(sin_lo, sin_hi)`` intervals.
    """
    beams = np.asarray(beams)
    if beams.ndim == 1:
        beams = beams[:, None]
    grid = uniform_sin_grid(max(16 * beams.shape[0], 1024)) if sin_grid is None else np.asarray(sin_grid)
    total = pattern_linear(beams, grid).sum(axis=1)
    inside = np.zeros(grid.shape, dtype=bool)
    for lo, hi in sectors:
        inside |= (grid >= lo) & (grid <= hi)
    return float(total[inside].sum() / total.sum())


def export_pattern_csv(beams: np.ndarray, sin_grid, path) -> Path:
    """Write ``sin_theta,beam_0_db,...`` rows with 9 significant digits."""
    beams = np.asarray(beams)
    if beams.ndim == 1:
        beams = beams[:, None]
    grid = np.asarray(sin_grid, dtype=np.float64)
    db = beam_pattern(beams, grid)
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sin_theta"] + [f"beam_{k}_db" for k in range(beams.shape[1])])
        for s, row in zip(grid, db):
            writer.writerow([f"{s:.9g}"] + [f"{v:.9g}" for v in row])
    return path
