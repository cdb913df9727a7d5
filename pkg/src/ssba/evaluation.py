"""Metrics, baselines and probe-count sweeps."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .beams import (Codebook, LinkBudget, beam_gain, dft_codebook, egt_beam, egt_gain,
                    export_pattern_csv, genie_index, snr_db, uniform_sin_grid)
from .errors import NumericError, SSBAError
from .models import BeamModel, GFModel, TrainConfig, fit, build_model
from .models.training import predict_scores, refine_from_scores, predict_beams
from .probing import MeasurementConfig, ProbingCodebook
from .scene import ChannelDataset, split_indices

log = logging.getLogger(__name__)

CSV_HEADER = ["method", "probes", "avg_snr_db", "p5_snr_db", "p50_snr_db", "top1_acc",
              "topk_acc", "egt_gap_db", "meas_per_ue"]
GAIN_FLOOR = 1e-30


@dataclass
class MetricsRecord:
    method: str
    probes: int
    avg_snr_db: float
    p5_snr_db: float
    p50_snr_db: float
    top1_acc: float | None
    topk_acc: float | None
    egt_gap_db: float
    meas_per_ue: int


# predictors ------------------------------------------------------------------------

@dataclass
class Selection:
    beams: np.ndarray            # B x N chosen beams
    top1: np.ndarray | None = None   # predicted codebook index
    topk: np.ndarray | None = None   # B x k candidate indices


class EGTPredictor:
    label = "egt"
    probes = 0
    meas_per_ue = 0
    codebook = None

    def select(self, H: np.ndarray, rng) -> Selection:
        return Selection(egt_beam(H))


class GeniePredictor:
    """Best codebook beam on the true channel; equivalent to a noiseless exhaustive sweep."""
    label = "genie"
    probes = 0

    def __init__(self, codebook: Codebook):
        self.codebook = codebook
        self.meas_per_ue = codebook.size

    def select(self, H: np.ndarray, rng) -> Selection:
        idx, _ = genie_index(H, self.codebook)
        return Selection(self.codebook.beams[:, idx].T, idx, idx[:, None])


class ModelPredictor:
    """Wraps a trained model; CB kinds optionally refine their top-k beams."""

    def __init__(self, model: BeamModel, mcfg: MeasurementConfig, refine_k: int = 1,
                 label: str | None = None):
        self.model = model
        self.mcfg = mcfg
        self.refine_k = refine_k
        self.label = label or model.kind
        self.probes = model.n_probe
        self.codebook = getattr(model, "codebook", None)
        extra = refine_k if (self.codebook is not None and refine_k > 1) else 0
        self.meas_per_ue = model.n_probe + extra

    def select(self, H: np.ndarray, rng) -> Selection:
        if isinstance(self.model, GFModel):
            return Selection(predict_beams(self.model, H, self.mcfg, rng))
        scores = predict_scores(self.model, H, self.mcfg, rng)
        top1 = np.argmax(scores, axis=1)
        k = max(self.refine_k, 1)
        topk = np.argsort(-scores, axis=1, kind="stable")[:, :k]
        idx = refine_from_scores(scores, H, self.codebook, k, self.mcfg, rng)
        return Selection(self.codebook.beams[:, idx].T, top1, topk)


def evaluate(predictor, H: np.ndarray, budget: LinkBudget = LinkBudget(), seed=0,
             codebook: Codebook | None = None) -> MetricsRecord:
    """Per-UE data SNR statistics of ``predictor`` on the channels ``H``.

    Average SNR is the mean of per-UE dB values. Accuracies are reported for
    predictors that choose from a codebook, against the genie labels of that
    codebook; otherwise they are ``None``.
    """
    H = np.atleast_2d(H)
    if H.shape[0] == 0:
        raise ValueError("empty test set")
    rng = np.random.default_rng(seed)
    sel = predictor.select(H, rng)
    gains = np.maximum(beam_gain(sel.beams, H), GAIN_FLOOR)
    snr = snr_db(gains, budget)
    snr_egt = snr_db(egt_gain(H), budget)
    top1 = topk = None
    cb = codebook or predictor.codebook
    if sel.top1 is not None and cb is not None:
        labels, _ = genie_index(H, cb)
        top1 = float(np.mean(sel.top1 == labels))
        topk = float(np.mean((sel.topk == labels[:, None]).any(axis=1)))
    return MetricsRecord(
        method=predictor.label,
        probes=int(predictor.probes),
        avg_snr_db=float(np.mean(snr)),
        p5_snr_db=float(np.percentile(snr, 5)),
        p50_snr_db=float(np.percentile(snr, 50)),
        top1_acc=top1,
        topk_acc=topk,
        egt_gap_db=float(np.mean(snr_egt - snr)),
        meas_per_ue=int(predictor.meas_per_ue),
    )


def make_site_agnostic_probing(n_probe: int, n_ant: int, oversampling: int = 1) -> ProbingCodebook:
    """Frozen narrow DFT beams evenly spaced in sin(theta), spacing 2/K."""
    if n_probe < 1:
        raise ValueError("need at least one probing beam")
    if n_probe > n_ant * oversampling:
        raise ValueError(f"{n_probe} beams exceed N x oversampling = {n_ant * oversampling}")
    n = np.arange(n_ant)[:, None]
    k = np.arange(n_probe)[None, :]
    beams = np.exp(-2j * np.pi * n * k / n_probe) / math.sqrt(n_ant)
    return ProbingCodebook.fixed(beams)


# sweep ---------------------------------------------------------------------------

@dataclass
class SweepConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    budget: LinkBudget = field(default_factory=LinkBudget)
    noise: bool = True
    refine_k: int = 4
    codebook_size: int = 256
    eval_seed: int = 1234
    hidden: dict | None = None  # per-kind hidden sizes override


@dataclass
class SweepResult:
    records: list[MetricsRecord]
    failures: dict[str, str] = field(default_factory=dict)
    models: dict[str, BeamModel] = field(default_factory=dict)


def _train_cell(kind: str, K: int, fixed: ProbingCodebook | None, H_train: np.ndarray,
                cfg: SweepConfig, mcfg: MeasurementConfig) -> BeamModel:
    hidden = (cfg.hidden or {}).get(kind)
    model = build_model(kind, H_train.shape[1], K, cfg.codebook_size, hidden=hidden,
                        fixed_beams=None if fixed is None else fixed.beams(), seed=cfg.train.seed)
    fit(model, H_train, cfg.train, mcfg)
    return model


def sweep(dataset: ChannelDataset | np.ndarray, kinds, probe_counts, cfg: SweepConfig = SweepConfig(),
          keep_models: bool = False) -> SweepResult:
    """Train every (kind, K) with learned and site-agnostic probing; add EGT/genie rows.

    All cells share the same split and evaluation noise seed, so learned and
    site-agnostic probing are compared on identical measurements. A failing
    cell is logged and recorded in ``failures``; the sweep carries on.
    """
    probe_counts = list(probe_counts)
    if probe_counts != sorted(probe_counts):
        raise ValueError("probe counts must be sorted ascending")
    H = dataset.channels if isinstance(dataset, ChannelDataset) else np.asarray(dataset)
    tr, te = split_indices(H.shape[0], cfg.train.train_fraction, cfg.train.seed)
    H_train, H_test = H[tr], H[te]
    mcfg = MeasurementConfig(cfg.budget, noise=cfg.noise)
    cb = dft_codebook(H.shape[1], cfg.codebook_size)
    result = SweepResult([])
    result.records.append(evaluate(EGTPredictor(), H_test, cfg.budget, cfg.eval_seed))
    result.records.append(evaluate(GeniePredictor(cb), H_test, cfg.budget, cfg.eval_seed))
    for kind in kinds:
        for K in probe_counts:
            for variant in ("learned", "agnostic"):
                label = f"{kind}-{variant}"
                fixed = make_site_agnostic_probing(K, H.shape[1]) if variant == "agnostic" else None
                try:
                    model = _train_cell(kind, K, fixed, H_train, cfg, mcfg)
                    pred = ModelPredictor(model, mcfg, cfg.refine_k, label)
                    result.records.append(evaluate(pred, H_test, cfg.budget, cfg.eval_seed))
                    if keep_models:
                        result.models[f"{label}@{K}"] = model
                except (NumericError, SSBAError, FloatingPointError) as exc:
                    log.warning("sweep cell %s K=%d failed: %s", label, K, exc)
                    result.failures[f"{label}@{K}"] = str(exc)
                    nan = float("nan")
                    result.records.append(MetricsRecord(label, K, nan, nan, nan, None, None, nan, 0))
    return result


# CSV -----------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def export_sweep_csv(records, path) -> Path:
    records = list(records)
    if not records:
        raise ValueError("no records to export")
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            d = asdict(r)
            w.writerow([_fmt(d[k]) for k in CSV_HEADER])
    return path


def read_sweep_csv(path) -> list[MetricsRecord]:
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected sweep CSV header {reader.fieldnames}")
        for row in reader:
            def opt(key):
                return None if row[key] == "" else float(row[key])
            out.append(MetricsRecord(
                method=row["method"], probes=int(row["probes"]),
                avg_snr_db=float(row["avg_snr_db"]), p5_snr_db=float(row["p5_snr_db"]),
                p50_snr_db=float(row["p50_snr_db"]), top1_acc=opt("top1_acc"),
                topk_acc=opt("topk_acc"), egt_gap_db=float(row["egt_gap_db"]),
                meas_per_ue=int(row["meas_per_ue"])))
    return out


def export_patterns(model_or_beams, path, grid=None) -> Path:
    """Probing beam patterns of a model (or an N x K beam matrix) as CSV."""
    if grid is None:
        grid = uniform_sin_grid(1024)
    beams = model_or_beams.probing.beams() if hasattr(model_or_beams, "probing") else model_or_beams
    if np.size(beams) == 0:
        raise ValueError("no beams to export")
    return export_pattern_csv(beams, grid, path)


def latency_reduction(codebook_size: int, meas_per_ue: int) -> float:
    """Measurement-count ratio of an exhaustive sweep to a scheme."""
    return codebook_size / meas_per_ue
