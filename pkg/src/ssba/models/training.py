"""Training loop, beam prediction and top-k over-the-air refinement."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..beams import genie_index
from ..errors import ConfigError, NumericError
from ..numerics import Adam
from ..probing import (MeasurementConfig, fit_feature_stats, noise_draws, noise_offsets,
                       probe_powers, stats_from_powers)
from .nets import BeamModel, GFModel, build_model

log = logging.getLogger(__name__)

# independent random streams derived from the training seed
_SHUFFLE, _NOISE, _STATS, _REPAIR = 1, 2, 3, 4


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 512
    lr: float = 1e-3
    seed: int = 0
    train_noise: bool = True
    train_fraction: float = 0.8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    test_metric: list[float] = field(default_factory=list)
    metric_name: str = ""


def _epoch_noise(seed: int, epoch: int, n: int, k: int, cfg: MeasurementConfig):
    if not cfg.noise:
        return None
    return noise_draws(np.random.default_rng([seed, _NOISE, epoch]), n, k)


def refit_stats(model: BeamModel, H: np.ndarray, mcfg: MeasurementConfig, seed) -> None:
    model.stats = fit_feature_stats(H, model.probing, mcfg, seed)


def fit(model: BeamModel, H_train: np.ndarray, config: TrainConfig, mcfg: MeasurementConfig,
        labels: np.ndarray | None = None, H_test: np.ndarray | None = None,
        labels_test: np.ndarray | None = None) -> History:
    """Train ``model`` in place with Adam.

    Each epoch re-draws the probing noise (when ``config.train_noise``),
    refits the feature statistics to the current probing beams and walks a
    seeded permutation of the training set. Gradients flow through the noiseless
    powers; the noise enters as a constant additive term.

    Raises:
        NumericError: if the loss or any gradient becomes non-finite.
    """
    H_train = np.atleast_2d(H_train)
    n = H_train.shape[0]
    is_cb = not isinstance(model, GFModel)
    if is_cb and labels is None:
        labels = genie_index(H_train, model.codebook)[0]
    if is_cb and H_test is not None and labels_test is None:
        labels_test = genie_index(H_test, model.codebook)[0]
    train_cfg = MeasurementConfig(mcfg.budget, noise=mcfg.noise and config.train_noise)
    params = model.parameters()
    opt = Adam(params, lr=config.lr)
    repair_rng = np.random.default_rng([config.seed, _REPAIR])
    n_batches = max(1, math.ceil(n / config.batch_size))
    if getattr(model, "bn_states", None) and n < 2 * n_batches:
        raise ConfigError("batch norm needs at least two samples per batch")
    hist = History(metric_name="top1_acc" if is_cb else "norm_gain")
    k = model.n_probe

    for epoch in range(config.epochs):
        noise = _epoch_noise(config.seed, epoch, n, k, train_cfg)
        beams = model.probing.beams()
        model.stats = stats_from_powers(probe_powers(H_train, beams, train_cfg, noise), train_cfg)
        order = np.random.default_rng([config.seed, _SHUFFLE, epoch]).permutation(n)
        total = 0.0
        for idx in np.array_split(order, n_batches):
            model.probing.repair(repair_rng)
            Hb = H_train[idx]
            offsets = None
            if noise is not None:
                offsets = noise_offsets(Hb, model.probing.beams(), train_cfg, noise[idx])
            out = model.forward(Hb, train_cfg, offsets, training=True)
            loss = model.loss(out, Hb, None if labels is None else labels[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value * idx.size
        hist.train_loss.append(total / n)
        if H_test is not None:
            refit_stats(model, H_train, mcfg, [config.seed, _STATS])
            hist.test_metric.append(_test_metric(model, H_test, mcfg, labels_test, config.seed))
        log.info("epoch %d loss %.6f", epoch, hist.train_loss[-1])

    refit_stats(model, H_train, mcfg, [config.seed, _STATS])
    return hist


def _test_metric(model: BeamModel, H: np.ndarray, mcfg: MeasurementConfig, labels, seed) -> float:
    rng = np.random.default_rng([seed, 99])
    if isinstance(model, GFModel):
        v = predict_beams(model, H, mcfg, rng)
        num = np.abs(np.sum(np.conj(v) * H, axis=1)) ** 2
        return float(np.mean(num / np.sum(np.abs(H) ** 2, axis=1)))
    scores = predict_scores(model, H, mcfg, rng)
    return float(np.mean(np.argmax(scores, axis=1) == labels))


def train(kind: str, H_train: np.ndarray, config: TrainConfig, n_probe: int,
          mcfg: MeasurementConfig | None = None, *, codebook_size: int = 256, hidden=None,
          fixed_beams: np.ndarray | None = None, H_test: np.ndarray | None = None):
    """Build a fresh model of ``kind`` and train it; returns ``(model, history)``."""
    mcfg = mcfg or MeasurementConfig()
    H_train = np.atleast_2d(H_train)
    model = build_model(kind, H_train.shape[1], n_probe, codebook_size, hidden=hidden,
                        fixed_beams=fixed_beams, seed=config.seed)
    hist = fit(model, H_train, config, mcfg, H_test=H_test)
    return model, hist


# inference -------------------------------------------------------------------------

def _measure(model: BeamModel, H: np.ndarray, mcfg: MeasurementConfig, rng) -> np.ndarray:
    noise = None
    if mcfg.noise:
        noise = noise_draws(rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng),
                            H.shape[0], model.n_probe)
    return probe_powers(H, model.probing.beams(), mcfg, noise)


def _infer(model: BeamModel, H: np.ndarray, mcfg: MeasurementConfig, rng, chunk: int = 4096):
    H = np.atleast_2d(H)
    powers = _measure(model, H, mcfg, rng)
    offsets = powers - probe_powers(H, model.probing.beams(), MeasurementConfig(mcfg.budget, noise=False))
    outs = []
    for s in range(0, H.shape[0], chunk):
        sl = slice(s, s + chunk)
        outs.append(model.forward(H[sl], mcfg, offsets[sl], training=False))
    return outs


def predict_scores(model: BeamModel, H: np.ndarray, mcfg: MeasurementConfig, rng=None) -> np.ndarray:
    """Beam posterior scores (B x M) of a CB model."""
    return np.concatenate([model.scores(o) for o in _infer(model, H, mcfg, rng)])


def predict_beams(model: BeamModel, H: np.ndarray, mcfg: MeasurementConfig, rng=None) -> np.ndarray:
    """Beamforming vectors (B x N): codebook column at the argmax, or the GF output."""
    if isinstance(model, GFModel):
        outs = _infer(model, H, mcfg, rng)
        return np.concatenate([re.data + 1j * im.data for re, im in outs])
    idx = np.argmax(predict_scores(model, H, mcfg, rng), axis=1)
    return model.codebook.beams[:, idx].T


def predict_beam(model: BeamModel, h: np.ndarray, mcfg: MeasurementConfig, noise_seed=None) -> np.ndarray:
    """Beamforming vector for one channel; deterministic given ``noise_seed``."""
    return predict_beams(model, np.asarray(h)[None, :], mcfg, noise_seed)[0]


def refine_from_scores(scores: np.ndarray, H: np.ndarray, codebook, k: int, mcfg: MeasurementConfig,
                       rng=None) -> np.ndarray:
    """Measure the k highest-scoring beams per UE (data mode) and keep the strongest.

    Noise, when enabled, has the data-mode power (no spreading gain).
    """
    H = np.atleast_2d(H)
    m = scores.shape[1]
    if not 1 <= k <= m:
        raise ValueError(f"k must lie in [1, {m}]")
    # stable sort: equal scores keep the lower index first
    top = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    if k == 1:
        return top[:, 0]
    cand = codebook.beams.T[top]  # B x k x N
    s = math.sqrt(mcfg.budget.tx_power_mw) * np.einsum("bkn,bn->bk", np.conj(cand), H)
    if mcfg.noise:
        r = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        s = s + math.sqrt(mcfg.noise_power) * noise_draws(r, H.shape[0], k)
    return top[np.arange(H.shape[0]), np.argmax(np.abs(s) ** 2, axis=1)]


def topk_refine(model: BeamModel, H: np.ndarray, k: int, mcfg: MeasurementConfig, noise_seed=None):
    """Refined beam indices for a CB model; each UE spends ``K + k`` measurements.

    A single channel gives an int, a batch gives an index array.
    """
    if isinstance(model, GFModel):
        raise TypeError("top-k refinement applies to codebook-based models only")
    single = np.ndim(H) == 1
    H = np.atleast_2d(H)
    rng = np.random.default_rng(noise_seed)
    scores = predict_scores(model, H, mcfg, rng)
    idx = refine_from_scores(scores, H, model.codebook, k, mcfg, rng)
    return int(idx[0]) if single else idx
