"""The three end-to-end beam alignment networks and their losses.

All share a probing front-end (``ProbingCodebook``) followed by standardized
dB power features. The heads differ:

* ``cb1`` -- phase-parameterized probing, K -> 512 -> 1024 with ReLU then
  batch norm after each hidden layer, M sigmoid outputs, binary cross-entropy.
* ``cb2`` -- complex-normalized probing, K -> 520 -> 520 ReLU, M logits,
  softmax cross-entropy.
* ``gf``  -- complex-normalized probing, K -> 520 -> 520 ReLU, 2N outputs
  read as a complex beam and projected to unit modulus; loss is the negated
  channel-norm-normalized beamforming gain.
"""
from __future__ import annotations

import math

import numpy as np

from .. import numerics as nx
from ..beams import Codebook, dft_codebook
from ..errors import ShapeError
from ..numerics import BatchNormState, Tensor
from ..probing import (FeatureStats, MeasurementConfig, ProbingCodebook, feature_tensor,
                       power_tensor)

KINDS = ("cb1", "cb2", "gf")
KIND_CODES = {"cb1": 1, "cb2": 2, "gf": 3}
DEFAULT_HIDDEN = {"cb1": (512, 1024), "cb2": (520, 520), "gf": (520, 520)}
PROBING_MODE = {"cb1": "phase", "cb2": "complex", "gf": "complex"}


def _dense(rng: np.random.Generator, fan_in: int, fan_out: int) -> tuple[Tensor, Tensor]:
    bound = 1.0 / math.sqrt(fan_in)
    w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
    b = Tensor(rng.uniform(-bound, bound, size=(fan_out,)), requires_grad=True)
    return w, b


class BeamModel:
    """Probing front-end plus MLP; subclasses define the head."""

    kind = ""

    def __init__(self, probing: ProbingCodebook, hidden: tuple[int, int], out_dim: int,
                 rng: np.random.Generator):
        self.probing = probing
        self.n_ant = probing.n_ant
        self.n_probe = probing.n_probe
        self.hidden = tuple(int(h) for h in hidden)
        self.stats: FeatureStats | None = None
        dims = (self.n_probe, *self.hidden, out_dim)
        self.layers = [_dense(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]

    # parameters ----------------------------------------------------------------
    def parameters(self) -> list[Tensor]:
        """Trainable leaves: probing parameters first, then layers in depth order."""
        out = list(self.probing.params)
        for w, b in self.layers:
            out += [w, b]
        return out + self._extra_parameters()

    def _extra_parameters(self) -> list[Tensor]:
        return []

    # forward ------------------------------------------------------------------------
    def features(self, H: np.ndarray, mcfg: MeasurementConfig,
                 offsets: np.ndarray | None = None) -> Tensor:
        if self.stats is None:
            raise RuntimeError("feature statistics have not been fitted")
        H = np.atleast_2d(H)
        if H.shape[1] != self.n_ant:
            raise ShapeError(f"channel length {H.shape[1]} != {self.n_ant}")
        return feature_tensor(power_tensor(H, self.probing, mcfg, offsets), self.stats, mcfg)

    def trunk(self, x: Tensor, training: bool) -> Tensor:
        for w, b in self.layers[:-1]:
            x = nx.relu(nx.linear(x, w, b))
        w, b = self.layers[-1]
        return nx.linear(x, w, b)

    def forward(self, H: np.ndarray, mcfg: MeasurementConfig, offsets: np.ndarray | None = None,
                training: bool = False):
        return self.head(self.trunk(self.features(H, mcfg, offsets), training))

    def head(self, z: Tensor):
        return z

    def loss(self, output, H: np.ndarray, labels: np.ndarray | None) -> Tensor:
        raise NotImplementedError


class CBModelV1(BeamModel):
    kind = "cb1"

    def __init__(self, probing: ProbingCodebook, codebook: Codebook, hidden=DEFAULT_HIDDEN["cb1"],
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        super().__init__(probing, hidden, codebook.size, rng)
        self.codebook = codebook
        self.bn_params = [(Tensor(np.ones(h), requires_grad=True), Tensor(np.zeros(h), requires_grad=True))
                          for h in self.hidden]
        self.bn_states = [BatchNormState.fresh(h) for h in self.hidden]

    def _extra_parameters(self) -> list[Tensor]:
        return [t for pair in self.bn_params for t in pair]

    def trunk(self, x: Tensor, training: bool) -> Tensor:
        for (w, b), (g, beta), st in zip(self.layers[:-1], self.bn_params, self.bn_states):
            x = nx.batchnorm(nx.relu(nx.linear(x, w, b)), g, beta, st, training)
        w, b = self.layers[-1]
        return nx.linear(x, w, b)

    def head(self, z: Tensor) -> Tensor:
        return nx.sigmoid(z)

    def scores(self, output: Tensor) -> np.ndarray:
        return output.data

    def loss(self, output: Tensor, H, labels) -> Tensor:
        return loss_cb_v1(output, labels)


class CBModelV2(BeamModel):
    kind = "cb2"

    def __init__(self, probing: ProbingCodebook, codebook: Codebook, hidden=DEFAULT_HIDDEN["cb2"],
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        super().__init__(probing, hidden, codebook.size, rng)
        self.codebook = codebook

    def scores(self, output: Tensor) -> np.ndarray:
        return nx.softmax(output.data)

    def loss(self, output: Tensor, H, labels) -> Tensor:
        return loss_cb_v2(output, labels)


class GFModel(BeamModel):
    kind = "gf"

    def __init__(self, probing: ProbingCodebook, hidden=DEFAULT_HIDDEN["gf"],
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        super().__init__(probing, hidden, 2 * probing.n_ant, rng)
        self.codebook = None

    def head(self, z: Tensor) -> tuple[Tensor, Tensor]:
        n = self.n_ant
        return nx.cplx_unit_normalize(nx.columns(z, 0, n), nx.columns(z, n, 2 * n), n)

    def loss(self, output, H, labels=None) -> Tensor:
        return loss_gf(output[0], output[1], H)


def loss_cb_v1(probs: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.zeros(probs.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    return nx.binary_cross_entropy(probs, onehot)


def loss_cb_v2(logits: Tensor, labels) -> Tensor:
    return nx.softmax_cross_entropy(logits, labels)


def loss_gf(v_re: Tensor, v_im: Tensor, H: np.ndarray) -> Tensor:
    """``-mean |v^H h|^2 / ||h||^2`` over the batch; lies in [-1, 0] for unit-modulus v."""
    H = np.atleast_2d(H)
    norms = np.linalg.norm(H, axis=1)
    if (norms == 0).any():
        raise ValueError("zero-norm channel in loss_gf")
    hn = H / norms[:, None]
    hr, hi = hn.real, hn.imag
    # v^H h = sum conj(v) h
    re = nx.tsum(nx.add(nx.mul(v_re, hr), nx.mul(v_im, hi)), axis=1)
    im = nx.tsum(nx.sub(nx.mul(v_re, hi), nx.mul(v_im, hr)), axis=1)
    return nx.mul(nx.mean(nx.abs_squared(re, im)), -1.0)


def build_model(kind: str, n_ant: int, n_probe: int, codebook_size: int = 256, *,
                hidden=None, fixed_beams: np.ndarray | None = None, seed: int = 0) -> BeamModel:
    """Fresh model with randomly initialised probing (or the given fixed beams)."""
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    rng = np.random.default_rng([seed, 0xB0B])
    if fixed_beams is not None:
        probing = ProbingCodebook.fixed(fixed_beams)
    else:
        probing = ProbingCodebook.random(PROBING_MODE[kind], n_ant, n_probe, rng)
    hidden = tuple(hidden) if hidden is not None else DEFAULT_HIDDEN[kind]
    if kind == "gf":
        return GFModel(probing, hidden, rng)
    codebook = dft_codebook(n_ant, codebook_size)
    cls = CBModelV1 if kind == "cb1" else CBModelV2
    return cls(probing, codebook, hidden, rng)
