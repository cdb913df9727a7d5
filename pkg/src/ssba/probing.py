"""Channel sensing: probing codebooks, noisy power measurements, standardized features."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .beams import LinkBudget
from .errors import NumericError, ShapeError
from .numerics import Tensor

MODES = ("phase", "complex", "fixed")
DEAD_PROBE_STD = 1e-9


class ProbingCodebook:
    """K probing beams over N antennas under the per-element unit-modulus constraint.

    ``phase`` mode learns one phase per entry; ``complex`` mode learns an
    unconstrained complex matrix that is projected entry-wise; ``fixed`` mode
    holds constant beams and exposes no trainable parameters.
    """

    def __init__(self, mode: str, n_ant: int, n_probe: int, params: list[np.ndarray]):
        if mode not in MODES:
            raise ValueError(f"unknown probing mode {mode!r}")
        self.mode = mode
        self.n_ant = n_ant
        self.n_probe = n_probe
        if mode == "fixed":
            beams = np.asarray(params[0], dtype=np.complex128)
            if beams.shape != (n_ant, n_probe):
                raise ShapeError("fixed beams must be N x K")
            if np.abs(np.abs(beams) - 1 / math.sqrt(n_ant)).max() > 1e-12:
                raise ValueError("fixed probing beams violate the unit-modulus constraint")
            self._fixed = (Tensor(beams.real), Tensor(beams.imag))
            self.params: list[Tensor] = []
        else:
            for p in params:
                if p.shape != (n_ant, n_probe):
                    raise ShapeError(f"probing parameter shape {p.shape} != {(n_ant, n_probe)}")
            self.params = [Tensor(np.array(p, dtype=np.float64), requires_grad=True) for p in params]

    @classmethod
    def random(cls, mode: str, n_ant: int, n_probe: int, rng: np.random.Generator) -> ProbingCodebook:
        phi = rng.uniform(0.0, 2.0 * math.pi, size=(n_ant, n_probe))
        if mode == "phase":
            return cls("phase", n_ant, n_probe, [phi])
        if mode == "complex":
            return cls("complex", n_ant, n_probe, [np.cos(phi), np.sin(phi)])
        raise ValueError("random initialisation needs a trainable mode")

    @classmethod
    def fixed(cls, beams: np.ndarray) -> ProbingCodebook:
        beams = np.asarray(beams)
        return cls("fixed", beams.shape[0], beams.shape[1], [beams])

    @property
    def trainable(self) -> bool:
        return self.mode != "fixed"

    def effective(self) -> tuple[Tensor, Tensor]:
        """Constraint-satisfying beams as a differentiable (re, im) pair."""
        if self.mode == "phase":
            return nx.phase_parameterize(self.params[0], self.n_ant)
        if self.mode == "complex":
            return nx.cplx_unit_normalize(self.params[0], self.params[1], self.n_ant)
        return self._fixed

    def beams(self) -> np.ndarray:
        re, im = self.effective()
        return re.data + 1j * im.data

    def repair(self, rng: np.random.Generator) -> int:
        """Re-draw complex-mode entries whose modulus fell below the floor."""
        if self.mode != "complex":
            return 0
        re, im = self.params[0].data, self.params[1].data
        bad = np.hypot(re, im) < nx.tensor.MODULUS_FLOOR
        count = int(bad.sum())
        if count:
            phi = rng.uniform(0.0, 2.0 * math.pi, size=count)
            re[bad] = np.cos(phi)
            im[bad] = np.sin(phi)
        return count

    def raw_arrays(self) -> list[np.ndarray]:
        """Arrays persisted in checkpoints (fixed beams are stored as re/im pairs)."""
        if self.mode == "fixed":
            return [self._fixed[0].data, self._fixed[1].data]
        return [p.data for p in self.params]


@dataclass
class MeasurementConfig:
    budget: LinkBudget = field(default_factory=LinkBudget)
    noise: bool = True

    @property
    def probe_scale(self) -> float:
        """Linear factor applied to ``|w^H h|^2``: transmit power times spreading gain."""
        return self.budget.tx_power_mw * self.budget.spreading_gain

    @property
    def noise_power(self) -> float:
        return self.budget.noise_power_mw

    @property
    def p_floor(self) -> float:
        return self.budget.noise_power_mw * 1e-2


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if (self.std <= 0).any():
            raise ValueError("feature std must be positive")


def noise_draws(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    """Unit-variance circular complex Gaussian samples, n x k."""
    z = rng.standard_normal((n, k, 2))
    return (z[..., 0] + 1j * z[..., 1]) / math.sqrt(2.0)


def probe_signals(H: np.ndarray, beams: np.ndarray, cfg: MeasurementConfig) -> np.ndarray:
    """Noiseless received probe amplitudes ``sqrt(P G) w_k^H h``: B x K."""
    H = np.atleast_2d(H)
    if H.shape[1] != beams.shape[0]:
        raise ShapeError(f"channel length {H.shape[1]} != beam length {beams.shape[0]}")
    return math.sqrt(cfg.probe_scale) * (H @ np.conj(beams))


def probe_powers(H: np.ndarray, beams: np.ndarray, cfg: MeasurementConfig,
                 noise: np.ndarray | None = None) -> np.ndarray:
    """Measured powers ``|sqrt(P G) w^H h + n|^2`` for a batch (B x K).

    ``noise`` holds unit-variance complex draws (B x K); it is scaled by the
    noise power and ignored when the config disables noise.
    """
    s = probe_signals(H, beams, cfg)
    if cfg.noise and noise is not None:
        s = s + math.sqrt(cfg.noise_power) * noise
    return np.abs(s) ** 2


def probe(h: np.ndarray, pc: ProbingCodebook, cfg: MeasurementConfig, noise_seed=None) -> np.ndarray:
    """K measured powers for one channel; deterministic given ``noise_seed``."""
    h = np.asarray(h)
    if h.ndim != 1 or h.shape[0] != pc.n_ant:
        raise ShapeError(f"channel must be a length-{pc.n_ant} vector")
    noise = None
    if cfg.noise:
        noise = noise_draws(np.random.default_rng(noise_seed), 1, pc.n_probe)
    return probe_powers(h[None, :], pc.beams(), cfg, noise)[0]


def noise_offsets(H: np.ndarray, beams: np.ndarray, cfg: MeasurementConfig,
                  noise: np.ndarray | None) -> np.ndarray:
    """``|s + n|^2 - |s|^2``: the additive noise term used inside the training graph."""
    if not cfg.noise or noise is None:
        return np.zeros((np.atleast_2d(H).shape[0], beams.shape[1]))
    s = probe_signals(H, beams, cfg)
    n = math.sqrt(cfg.noise_power) * noise
    return np.abs(s + n) ** 2 - np.abs(s) ** 2


def power_tensor(H: np.ndarray, pc: ProbingCodebook, cfg: MeasurementConfig,
                 offsets: np.ndarray | None = None) -> Tensor:
    """Differentiable probe powers (B x K); noise enters as a constant offset."""
    w_re, w_im = pc.effective()
    y_re, y_im = nx.cplx_matvec(w_re, w_im, Tensor(H.real), Tensor(H.imag))
    p = nx.mul(nx.abs_squared(y_re, y_im), cfg.probe_scale)
    if offsets is not None:
        p = nx.add(p, offsets)
    return p


def to_features(powers: np.ndarray, stats: FeatureStats, cfg: MeasurementConfig) -> np.ndarray:
    return (10.0 * np.log10(powers + cfg.p_floor) - stats.mean) / stats.std


def features(powers: np.ndarray, stats: FeatureStats, cfg: MeasurementConfig = MeasurementConfig()) -> np.ndarray:
    """Standardized dB features ``(10 log10(p + p_floor) - mean) / std`` per probe."""
    return to_features(np.asarray(powers, dtype=np.float64), stats, cfg)


def feature_tensor(powers: Tensor, stats: FeatureStats, cfg: MeasurementConfig) -> Tensor:
    db = nx.to_db(powers, cfg.p_floor)
    return nx.mul(nx.sub(db, stats.mean), 1.0 / stats.std)


def stats_from_powers(powers: np.ndarray, cfg: MeasurementConfig) -> FeatureStats:
    if powers.shape[0] < 2:
        raise ValueError("need at least two training samples for feature statistics")
    db = 10.0 * np.log10(powers + cfg.p_floor)
    std = db.std(axis=0)
    if (std < DEAD_PROBE_STD).any():
        dead = np.flatnonzero(std < DEAD_PROBE_STD).tolist()
        raise NumericError(f"degenerate feature std for probe(s) {dead}: dead probing beam")
    return FeatureStats(db.mean(axis=0), std)


def fit_feature_stats(H: np.ndarray, pc: ProbingCodebook, cfg: MeasurementConfig,
                      seed=None) -> FeatureStats:
    """Per-probe mean/std of dB powers over a training set (noise drawn from ``seed``)."""
    H = np.atleast_2d(H)
    noise = noise_draws(np.random.default_rng(seed), H.shape[0], pc.n_probe) if cfg.noise else None
    return stats_from_powers(probe_powers(H, pc.beams(), cfg, noise), cfg)
