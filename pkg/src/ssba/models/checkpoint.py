"""Binary checkpoints (``SSBM``), little-endian.

Layout::

    "SSBM" u16 version=1 u8 kind u32 N u32 K u32 M(0 for gf)
    f64[K] feature mean, f64[K] feature std
    tensors: u8 rank, u32 dims[rank], f64 payload (row-major)

Tensor order: probing parameters (cb1: phases N x K; cb2/gf: real then
imaginary N x K), then for each hidden layer its weight and bias, followed by
batch-norm gamma, beta, running mean and running variance on cb1, and finally
the output weight and bias. Fixed probing beams are stored in the same slots,
so a reloaded model treats them as trainable.
"""
from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from ..beams import dft_codebook
from ..errors import FormatError, TruncatedFileError
from ..numerics import BatchNormState, Tensor
from ..probing import FeatureStats, ProbingCodebook
from .nets import KIND_CODES, BeamModel, CBModelV1, CBModelV2, GFModel

MAGIC = b"SSBM"
VERSION = 1
_HEAD = struct.Struct("<4sHBIII")
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}


class KindMismatchError(FormatError):
    """Checkpoint holds a different model kind than requested."""


def _tensors(model: BeamModel) -> list[np.ndarray]:
    out = list(model.probing.raw_arrays())
    if model.probing.mode == "fixed" and model.kind == "cb1":
        beams = model.probing.beams() * math.sqrt(model.n_ant)
        out = [np.angle(beams)]
    for i, (w, b) in enumerate(model.layers):
        out += [w.data, b.data]
        if isinstance(model, CBModelV1) and i < len(model.hidden):
            g, beta = model.bn_params[i]
            st = model.bn_states[i]
            out += [g.data, beta.data, st.running_mean, st.running_var]
    return out


def save_model(model: BeamModel, path) -> None:
    if model.stats is None:
        raise ValueError("cannot save a model without fitted feature statistics")
    m = 0 if isinstance(model, GFModel) else model.codebook.size
    chunks = [_HEAD.pack(MAGIC, VERSION, KIND_CODES[model.kind], model.n_ant, model.n_probe, m),
              np.asarray(model.stats.mean, dtype="<f8").tobytes(),
              np.asarray(model.stats.std, dtype="<f8").tobytes()]
    for arr in _tensors(model):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def _read_tensors(buf: bytes, off: int) -> list[np.ndarray]:
    out = []
    while off < len(buf):
        idx = len(out)
        if off + 1 > len(buf):
            raise TruncatedFileError(f"checkpoint truncated in tensor {idx}", idx)
        rank = buf[off]
        off += 1
        if off + 4 * rank > len(buf):
            raise TruncatedFileError(f"checkpoint truncated in tensor {idx} header", idx)
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        if off + 8 * count > len(buf):
            raise TruncatedFileError(f"checkpoint truncated in tensor {idx} payload", idx)
        out.append(np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(dims).copy())
        off += 8 * count
    return out


def load_model(path, expected_kind: str | None = None) -> BeamModel:
    """Rebuild a model from ``path``; ``expected_kind`` guards against mix-ups."""
    buf = Path(path).read_bytes()
    if len(buf) < _HEAD.size:
        raise TruncatedFileError("checkpoint shorter than its header")
    magic, version, code, n, k, m = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if code not in CODE_KINDS:
        raise FormatError(f"unknown model kind code {code}")
    kind = CODE_KINDS[code]
    if expected_kind is not None and kind != expected_kind:
        raise KindMismatchError(f"checkpoint holds a {kind} model, expected {expected_kind}")
    off = _HEAD.size
    if off + 16 * k > len(buf):
        raise TruncatedFileError("checkpoint truncated in feature statistics")
    mean = np.frombuffer(buf, dtype="<f8", count=k, offset=off).copy()
    std = np.frombuffer(buf, dtype="<f8", count=k, offset=off + 8 * k).copy()
    tensors = _read_tensors(buf, off + 16 * k)
    try:
        model = _assemble(kind, n, k, m, tensors)
        model.stats = FeatureStats(mean, std)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"checkpoint tensors inconsistent with a {kind} model: {exc}") from exc
    return model


def _expect(arr: np.ndarray, shape: tuple, what: str) -> np.ndarray:
    if arr.shape != shape:
        raise FormatError(f"{what}: shape {arr.shape}, expected {shape}")
    return arr


def _assemble(kind: str, n: int, k: int, m: int, t: list[np.ndarray]) -> BeamModel:
    expected = 15 if kind == "cb1" else 8
    if len(t) != expected:
        raise FormatError(f"{kind} checkpoint needs {expected} tensors, found {len(t)}")
    it = iter(t)
    if kind == "cb1":
        probing = ProbingCodebook("phase", n, k, [_expect(next(it), (n, k), "probing phases")])
    else:
        re = _expect(next(it), (n, k), "probing real part")
        im = _expect(next(it), (n, k), "probing imaginary part")
        probing = ProbingCodebook("complex", n, k, [re, im])
    layers, bn = [], []
    fan_in = k
    for depth in range(2):
        w = next(it)
        if w.ndim != 2 or w.shape[0] != fan_in:
            raise FormatError(f"hidden layer {depth} weight has shape {w.shape}")
        b = _expect(next(it), (w.shape[1],), f"hidden layer {depth} bias")
        layers.append((w, b))
        if kind == "cb1":
            d = w.shape[1]
            bn.append([_expect(next(it), (d,), f"batch norm {depth} {name}")
                       for name in ("gamma", "beta", "running mean", "running var")])
        fan_in = w.shape[1]
    out_dim = 2 * n if kind == "gf" else m
    w = _expect(next(it), (fan_in, out_dim), "output weight")
    b = _expect(next(it), (out_dim,), "output bias")
    layers.append((w, b))
    hidden = (layers[0][0].shape[1], layers[1][0].shape[1])
    if kind == "gf":
        if m != 0:
            raise FormatError("gf checkpoints carry M = 0")
        model: BeamModel = GFModel(probing, hidden)
    else:
        cb = dft_codebook(n, m)
        model = (CBModelV1 if kind == "cb1" else CBModelV2)(probing, cb, hidden)
    model.layers = [(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)) for w, b in layers]
    if kind == "cb1":
        model.bn_params = [(Tensor(g, requires_grad=True), Tensor(be, requires_grad=True))
                           for g, be, _, _ in bn]
        model.bn_states = [BatchNormState(rm, rv) for _, _, rm, rv in bn]
    return model
