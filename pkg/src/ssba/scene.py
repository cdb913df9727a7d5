"""Street-canyon channel synthesis and the ``.ssba`` dataset file.

Geometry: two perpendicular streets cross at the origin where the BS stands.
Street "x" runs along the x axis with walls at ``y = +-W/2``; street "y" runs
along the y axis with walls at ``x = +-W/2``. Buildings start at axial
distance ``ue_min_distance / 2`` from the BS (the open square around the
intersection) and UEs are dropped at axial distance ``[ue_min_distance, L]``,
which guarantees every UE at least one valid first-order wall reflection.
Reflections follow the image method in the horizontal plane; path lengths
include the BS/UE height difference.
"""
from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ShapeError, TruncatedFileError

SPEED_OF_LIGHT = 299_792_458.0
SPACING_RATIO = 0.5

MAGIC = b"SSBA"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIdQ")
_UE_HEAD = struct.Struct("<dddBH")


@dataclass(frozen=True)
class SceneConfig:
    street_half_length: float = 250.0
    street_width: float = 20.0
    bs_height: float = 10.0
    ue_height: float = 1.5
    n_ue: int = 20_000
    los_decay_length: float = 236.0  # tuned for ~52% LOS over the default street layout
    reflection_loss_db: float = 6.0
    max_reflection_order: int = 2
    nlos_extra_loss_db: float = 6.0
    carrier_hz: float = 28e9
    boresight_rad: float = math.pi / 4
    ue_min_distance: float = 60.0
    n_ant: int = 64

    def __post_init__(self):
        for name in ("street_half_length", "street_width", "bs_height", "ue_height",
                     "los_decay_length", "carrier_hz", "ue_min_distance"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_reflection_order not in (0, 1, 2):
            raise ConfigError("max_reflection_order must be 0, 1 or 2")
        if self.max_reflection_order == 0 and math.isfinite(self.los_decay_length):
            raise ConfigError("reflection order 0 leaves blocked UEs without paths; "
                              "set los_decay_length = inf")
        if self.n_ue < 1:
            raise ConfigError("n_ue must be >= 1")
        if self.n_ant < 1:
            raise ConfigError("n_ant must be >= 1")
        if self.ue_min_distance >= self.street_half_length:
            raise ConfigError("ue_min_distance must be below street_half_length")
        if self.reflection_loss_db < 0 or self.nlos_extra_loss_db < 0:
            raise ConfigError("losses are given as non-negative dB")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def wall_start(self) -> float:
        return self.ue_min_distance / 2.0


@dataclass(frozen=True)
class PathComponent:
    gain: complex
    theta: float  # departure azimuth relative to boresight, (-pi, pi]


@dataclass
class UERecord:
    position: np.ndarray
    los: bool
    paths: list[PathComponent]
    h: np.ndarray


@dataclass
class ChannelDataset:
    n_ant: int
    carrier_hz: float
    records: list[UERecord]
    seed: int
    config: SceneConfig | None = field(default=None, compare=False)

    def __post_init__(self):
        for i, r in enumerate(self.records):
            if r.h.shape != (self.n_ant,):
                raise ShapeError(f"record {i}: channel length {r.h.shape} != {self.n_ant}")
            if not np.any(r.h):
                raise ValueError(f"record {i}: all-zero channel")

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChannelDataset):
            return NotImplemented
        if (self.n_ant, self.carrier_hz, self.seed, len(self)) != \
                (other.n_ant, other.carrier_hz, other.seed, len(other)):
            return False
        for a, b in zip(self.records, other.records):
            if a.los != b.los or a.paths != b.paths:
                return False
            if not (np.array_equal(a.position, b.position) and np.array_equal(a.h, b.h)):
                return False
        return True

    @property
    def channels(self) -> np.ndarray:
        """U x N complex channel matrix."""
        return np.stack([r.h for r in self.records]) if self.records else np.zeros((0, self.n_ant), complex)

    @property
    def los_flags(self) -> np.ndarray:
        return np.array([r.los for r in self.records], dtype=bool)

    @property
    def positions(self) -> np.ndarray:
        return np.stack([r.position for r in self.records])

    def subset(self, indices) -> ChannelDataset:
        return ChannelDataset(self.n_ant, self.carrier_hz, [self.records[i] for i in indices],
                              self.seed, self.config)


def synthesize_channel(paths, n_ant: int, spacing_ratio: float = SPACING_RATIO) -> np.ndarray:
    """``h[n] = sum_p gain_p * exp(j 2 pi spacing_ratio n sin(theta_p))``."""
    if len(paths) == 0:
        raise ValueError("at least one path is required")
    gains = np.array([p.gain for p in paths], dtype=np.complex128)
    sines = np.sin(np.array([p.theta for p in paths], dtype=np.float64))
    n = np.arange(n_ant)
    steer = np.exp(1j * 2.0 * np.pi * spacing_ratio * np.outer(sines, n))
    return gains @ steer


def free_space_amplitude(distance: float, wavelength: float) -> float:
    return wavelength / (4.0 * math.pi * distance)


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    return math.pi if w == -math.pi else w


# geometry ----------------------------------------------------------------------

def _walls(street: int, half_width: float):
    """Walls of a street as (coordinate index, value); street 0 runs along x."""
    lateral = 1 if street == 0 else 0
    return [(lateral, half_width), (lateral, -half_width)]


def _reflect(p: np.ndarray, wall) -> np.ndarray:
    axis, c = wall
    q = p.copy()
    q[axis] = 2.0 * c - q[axis]
    return q


def _hit(a: np.ndarray, b: np.ndarray, wall):
    """Point where segment a->b meets the wall line, or None if it does not."""
    axis, c = wall
    da = b[axis] - a[axis]
    if da == 0.0:
        return None
    t = (c - a[axis]) / da
    if not 0.0 < t < 1.0:
        return None
    return a + t * (b - a)


def reflection_paths(ue_xy: np.ndarray, street: int, cfg: SceneConfig):
    """Image-method wall reflections up to the configured order.

    Returns ``(order, horizontal_length, first_bounce_point)`` tuples for every
    geometrically valid bounce sequence (alternating walls, bounce points on
    existing wall segments).
    """
    bs = np.zeros(2)
    axial = 0 if street == 0 else 1
    walls = _walls(street, cfg.street_width / 2.0)
    out = []
    for order in range(1, cfg.max_reflection_order + 1):
        for seq in product(range(2), repeat=order):
            if any(seq[i] == seq[i + 1] for i in range(order - 1)):
                continue  # consecutive bounces on the same wall are impossible
            seq_walls = [walls[i] for i in seq]
            images = [bs]
            for w in seq_walls:
                images.append(_reflect(images[-1], w))
            points = []
            target = ue_xy
            ok = True
            for k in range(order, 0, -1):
                p = _hit(images[k], target, seq_walls[k - 1])
                if p is None:
                    ok = False
                    break
                points.append(p)
                target = p
            if not ok:
                continue
            points.reverse()
            if any(abs(p[axial]) < cfg.wall_start or abs(p[axial]) > cfg.street_half_length
                   for p in points):
                continue
            length = float(np.hypot(*(ue_xy - images[order])))
            out.append((order, length, points[0]))
    return out


def street_sectors(cfg: SceneConfig) -> list[tuple[float, float]]:
    """Departure-angle intervals (relative to boresight) covered by the street canyons.

    Each street arm is seen from the BS within ``atan((W/2) / wall_start)`` of
    its axis; every LOS and reflected path departs inside one of these.
    """
    half = math.atan2(cfg.street_width / 2.0, cfg.wall_start)
    out = []
    for axis in (0.0, math.pi / 2, math.pi, -math.pi / 2):
        c = wrap_angle(axis - cfg.boresight_rad)
        out.append((c - half, c + half))
    return out


def street_sin_sectors(cfg: SceneConfig) -> list[tuple[float, float]]:
    """The street sectors mapped to sin(theta), merged where they overlap."""
    intervals = []
    for lo, hi in street_sectors(cfg):
        grid = np.linspace(lo, hi, 2001)
        s = np.sin(grid)
        intervals.append((float(s.min()), float(s.max())))
    intervals.sort()
    merged: list[list[float]] = []
    for lo, hi in intervals:
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [tuple(m) for m in merged]


def angle_in_sectors(theta: float, sectors) -> bool:
    for lo, hi in sectors:
        # compare on the circle
        if abs(wrap_angle(theta - 0.5 * (lo + hi))) <= 0.5 * (hi - lo) + 1e-12:
            return True
    return False


# generation ----------------------------------------------------------------------

def _ue_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def _generate_ue(cfg: SceneConfig, seed: int, index: int) -> UERecord:
    rng = _ue_rng(seed, index)
    street = int(rng.integers(2))
    side = 1.0 if rng.random() < 0.5 else -1.0
    axial = rng.uniform(cfg.ue_min_distance, cfg.street_half_length)
    margin = min(1.0, cfg.street_width / 4.0)
    lateral = rng.uniform(-cfg.street_width / 2.0 + margin, cfg.street_width / 2.0 - margin)
    xy = np.array([side * axial, lateral]) if street == 0 else np.array([lateral, side * axial])
    dz = cfg.bs_height - cfg.ue_height
    dist3 = math.sqrt(float(xy @ xy) + dz * dz)
    los = bool(rng.random() < math.exp(-dist3 / cfg.los_decay_length))

    lam = cfg.wavelength
    geo = []
    if los:
        geo.append((0, float(np.hypot(*xy)), xy))
    geo.extend(reflection_paths(xy, street, cfg))
    phases = rng.uniform(0.0, 2.0 * math.pi, size=len(geo))
    paths = []
    for (order, hlen, toward), phase in zip(geo, phases):
        length = math.sqrt(hlen * hlen + dz * dz)
        loss_db = order * cfg.reflection_loss_db + (0.0 if los else cfg.nlos_extra_loss_db)
        amp = free_space_amplitude(length, lam) * 10.0 ** (-loss_db / 20.0)
        theta = wrap_angle(math.atan2(toward[1], toward[0]) - cfg.boresight_rad)
        paths.append(PathComponent(complex(amp * math.cos(phase), amp * math.sin(phase)), theta))
    h = synthesize_channel(paths, cfg.n_ant)
    return UERecord(np.array([xy[0], xy[1], cfg.ue_height]), los, paths, h)


def generate_scene(cfg: SceneConfig, seed: int, threads: int = 1) -> ChannelDataset:
    """Drop ``cfg.n_ue`` UEs on the two streets and synthesize their channels.

    Every UE draws from its own generator seeded by ``(seed, ue_index)`` so the
    result does not depend on ``threads``.
    """
    if threads <= 1:
        records = [_generate_ue(cfg, seed, i) for i in range(cfg.n_ue)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(lambda i: _generate_ue(cfg, seed, i), range(cfg.n_ue),
                                    chunksize=256))
    return ChannelDataset(cfg.n_ant, cfg.carrier_hz, records, int(seed), cfg)


def split_dataset(ds: ChannelDataset, train_fraction: float, seed: int):
    """Seeded shuffle split into disjoint (train, test) datasets."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = len(ds)
    if n < 2:
        raise ValueError("need at least two UEs to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = min(max(int(round(train_fraction * n)), 1), n - 1)
    return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))


def split_indices(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = min(max(int(round(train_fraction * n)), 1), n - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


# persistence ---------------------------------------------------------------------

def save_dataset(ds: ChannelDataset, path) -> None:
    chunks = [_HEADER.pack(MAGIC, VERSION, 0, ds.n_ant, len(ds), float(ds.carrier_hz), int(ds.seed))]
    for r in ds.records:
        x, y, z = (float(v) for v in r.position)
        chunks.append(_UE_HEAD.pack(x, y, z, 1 if r.los else 0, len(r.paths)))
        if r.paths:
            arr = np.array([(p.gain.real, p.gain.imag, p.theta) for p in r.paths], dtype="<f8")
            chunks.append(arr.tobytes())
        h = np.empty((ds.n_ant, 2), dtype="<f8")
        h[:, 0] = r.h.real
        h[:, 1] = r.h.imag
        chunks.append(h.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_dataset(path) -> ChannelDataset:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise TruncatedFileError("file shorter than the dataset header")
    magic, version, _reserved, n_ant, n_ue, carrier, seed = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    if n_ant < 1:
        raise FormatError("antenna count must be positive")
    off = _HEADER.size
    records = []
    h_bytes = 16 * n_ant
    for i in range(n_ue):
        if off + _UE_HEAD.size > len(buf):
            raise TruncatedFileError(f"file truncated in record {i}", record_index=i)
        x, y, z, los, n_paths = _UE_HEAD.unpack_from(buf, off)
        off += _UE_HEAD.size
        need = 24 * n_paths + h_bytes
        if off + need > len(buf):
            raise TruncatedFileError(f"file truncated in record {i}", record_index=i)
        pa = np.frombuffer(buf, dtype="<f8", count=3 * n_paths, offset=off).reshape(n_paths, 3)
        off += 24 * n_paths
        ha = np.frombuffer(buf, dtype="<f8", count=2 * n_ant, offset=off).reshape(n_ant, 2)
        off += h_bytes
        if los > 1:
            raise FormatError(f"record {i}: LOS flag {los} is not 0/1")
        paths = [PathComponent(complex(a, b), float(t)) for a, b, t in pa]
        h = ha[:, 0] + 1j * ha[:, 1]
        records.append(UERecord(np.array([x, y, z]), bool(los), paths, h))
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after the last record")
    try:
        return ChannelDataset(n_ant, carrier, records, seed)
    except (ShapeError, ValueError) as exc:
        raise FormatError(f"inconsistent dataset: {exc}") from exc


def with_overrides(cfg: SceneConfig, **kw) -> SceneConfig:
    return replace(cfg, **kw)
