"""Physics-video datasets: generation, the PVD1 file format and eval helpers.

A PVD1 file is ``b"PVD1"`` followed by u32 little-endian fields
(version=1, n_traj, traj_len, height, width, channels, metadata length),
the UTF-8 JSON metadata, then ``n_traj * traj_len * H * W * C`` raw bytes
ordered trajectory, time, row, column, channel.
"""

import dataclasses
import json
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .physics2d import WorldConfig, sample_world, step
from .raster import BACKGROUND, WALL_COLOR, rasterize
from .rng import LaneXoshiro, splitmix64

MAGIC = b"PVD1"
VERSION = 1
_HEADER = struct.Struct("<7I")


class DatasetError(ValueError):
    pass


class BadMagicError(DatasetError):
    pass


class VersionError(DatasetError):
    pass


class TruncatedError(DatasetError):
    pass


@dataclass
class GenConfig:
    n_traj: int = 5000
    traj_len: int = 125
    height: int = 84
    width: int = 84
    n_bodies: tuple = (4, 8)
    size: tuple = (0.04, 0.08)
    speed: tuple = (0.2, 0.5)
    elasticity: float = 0.95
    friction: float = 0.9
    drag: float = 0.0
    n_walls: tuple = (0, 3)
    master_seed: int = 0

    def __post_init__(self):
        for name in ("n_bodies", "size", "speed", "n_walls"):
            setattr(self, name, tuple(getattr(self, name)))

    @classmethod
    def desk(cls, **overrides):
        """Desk-scale profile: 64 trajectories of 40 frames at 42x42."""
        base = dict(n_traj=64, traj_len=40, height=42, width=42)
        base.update(overrides)
        return cls(**base)

    def validate(self):
        if self.n_traj < 1 or self.traj_len < 1:
            raise ValueError(f"n_traj and traj_len must be positive, got {self.n_traj}, {self.traj_len}")
        self.world_config().validate()

    def world_config(self):
        return WorldConfig(
            n_bodies=self.n_bodies, n_walls=self.n_walls, size=self.size, speed=self.speed,
            elasticity=self.elasticity, friction=self.friction, drag=self.drag,
        )

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown dataset config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class DatasetHeader:
    n_traj: int
    traj_len: int
    height: int
    width: int
    channels: int
    metadata: dict
    version: int = VERSION

    @property
    def frame_bytes(self):
        return self.height * self.width * self.channels

    @property
    def payload_bytes(self):
        return self.n_traj * self.traj_len * self.frame_bytes

    def encode(self):
        meta = json.dumps(self.metadata, sort_keys=True).encode("utf-8")
        return MAGIC + _HEADER.pack(self.version, self.n_traj, self.traj_len, self.height,
                                    self.width, self.channels, len(meta)) + meta


def trajectory_seed(master_seed, index):
    return splitmix64((master_seed ^ index) & ((1 << 64) - 1))


def generate_trajectory(seed, config):
    """``traj_len`` frames (uint8, T x H x W x 3), rendering before each step."""
    world = sample_world(seed, config.world_config())
    frames = np.empty((config.traj_len, config.height, config.width, 3), dtype=np.uint8)
    for t in range(config.traj_len):
        frames[t] = rasterize(world, config.height, config.width)
        step(world)
    return frames


def _generate_indexed(args):
    config, index = args
    try:
        return generate_trajectory(trajectory_seed(config.master_seed, index), config)
    except RuntimeError as exc:
        raise RuntimeError(f"trajectory {index}: {exc}") from exc


def _write_file(path, config, first, count, threads):
    header = DatasetHeader(
        n_traj=count, traj_len=config.traj_len, height=config.height, width=config.width,
        channels=3, metadata={"config": config.to_dict(), "master_seed": config.master_seed,
                              "first_index": first},
    )
    jobs = [(config, first + i) for i in range(count)]
    try:
        with open(path, "wb") as fh:
            fh.write(header.encode())
            if threads > 1:
                with ProcessPoolExecutor(max_workers=threads) as pool:
                    for frames in pool.map(_generate_indexed, jobs, chunksize=4):
                        fh.write(frames.tobytes())
            else:
                for job in jobs:
                    fh.write(_generate_indexed(job).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write dataset {path}: {exc}") from exc
    return header


def split_paths(path):
    stem, ext = os.path.splitext(str(path))
    ext = ext or ".pvd"
    return f"{stem}.train{ext}", f"{stem}.test{ext}"


def generate_dataset(config, path, split=None, threads=1):
    """Write one PVD1 file, or train/test files when ``split`` trajectories go to train.

    Trajectory ``i`` always uses ``splitmix64(master_seed ^ i)``, so a split
    file pair holds exactly the trajectories of the unsplit file.
    Returns a list of ``(path, header)``.
    """
    config.validate()
    if split is None:
        return [(str(path), _write_file(path, config, 0, config.n_traj, threads))]
    if not 0 < split < config.n_traj:
        raise ValueError(f"split {split} must lie strictly between 0 and n_traj={config.n_traj}")
    train_path, test_path = split_paths(path)
    return [
        (train_path, _write_file(train_path, config, 0, split, threads)),
        (test_path, _write_file(test_path, config, split, config.n_traj - split, threads)),
    ]


class PVDReader:
    """Random access to frames of a PVD1 file through a memory map."""

    def __init__(self, path):
        self.path = str(path)
        size = os.path.getsize(self.path)
        with open(self.path, "rb") as fh:
            head = fh.read(4 + _HEADER.size)
            if len(head) < 4 or head[:4] != MAGIC:
                raise BadMagicError(f"{self.path}: not a PVD1 dataset (bad magic)")
            if len(head) < 4 + _HEADER.size:
                raise TruncatedError(f"{self.path}: truncated header")
            version, n_traj, traj_len, h, w, c, meta_len = _HEADER.unpack(head[4:])
            if version != VERSION:
                raise VersionError(f"{self.path}: unsupported PVD version {version}")
            meta = fh.read(meta_len)
            if len(meta) < meta_len:
                raise TruncatedError(f"{self.path}: truncated metadata")
        try:
            metadata = json.loads(meta.decode("utf-8"))
        except ValueError as exc:
            raise DatasetError(f"{self.path}: corrupt metadata: {exc}") from exc
        self.header = DatasetHeader(n_traj, traj_len, h, w, c, metadata, version)
        self.offset = 4 + _HEADER.size + meta_len
        expected = self.offset + self.header.payload_bytes
        if size < expected:
            raise TruncatedError(f"{self.path}: payload truncated ({size} of {expected} bytes)")
        self._data = np.memmap(self.path, dtype=np.uint8, mode="r", offset=self.offset,
                               shape=(n_traj, traj_len, h, w, c))

    def __len__(self):
        return self.header.n_traj

    @property
    def frame_shape(self):
        return (self.header.height, self.header.width, self.header.channels)

    def frame(self, i, t):
        return np.array(self._data[i, t])

    def trajectory(self, i):
        return np.array(self._data[i])

    def frames(self):
        """All data as one ``N x T x H x W x C`` uint8 array (loads it)."""
        return np.array(self._data)


def read_dataset(path):
    reader = PVDReader(path)
    return reader.header, reader


# --------------------------------------------------------------- evaluation


def gaussian_noise(shape, eps, seed):
    n = int(np.prod(shape))
    return (eps * LaneXoshiro(seed).standard_normal(n)).reshape(shape)


def corrupt_gaussian(frames, eps, seed):
    """Add ``eps``-scaled standard normal noise to [0, 1] values and clamp."""
    if eps < 0:
        raise ValueError(f"noise magnitude must be non-negative, got {eps}")
    x = np.asarray(frames)
    if x.dtype == np.uint8:
        x = x.astype(np.float32) / np.float32(255.0)
    else:
        x = x.astype(np.float32, copy=True)
    if eps == 0:
        return x
    noisy = x + gaussian_noise(x.shape, eps, seed).astype(np.float32)
    return np.clip(noisy, 0.0, 1.0)


GENERALIZATION_VARIANTS = ("small_fast", "large_scene")


def make_generalization_config(base, variant):
    """Held-out regimes: half-size/double-speed bodies, or a 168x168 crowded scene.

    ``large_scene`` renders the room at 168x168 with 16-32 bodies. The
    pixel resolution doubles relative to the 84x84 training regime, so body
    size and speed are halved in room units: bodies keep their pixel size
    and four times the bodies fill four times the pixel area.
    """
    if variant not in GENERALIZATION_VARIANTS:
        raise ValueError(f"unknown generalization variant {variant!r}; expected one of {GENERALIZATION_VARIANTS}")
    if variant == "small_fast":
        return dataclasses.replace(
            base, size=(base.size[0] / 2, base.size[1] / 2), speed=(base.speed[0] * 2, base.speed[1] * 2))
    scale = 0.5
    return dataclasses.replace(
        base, height=168, width=168, n_bodies=(16, 32),
        size=(base.size[0] * scale, base.size[1] * scale),
        speed=(base.speed[0] * scale, base.speed[1] * scale),
    )


_RESERVED = np.array([BACKGROUND, WALL_COLOR], dtype=np.float32) / 255.0


def foreground_mask(frame, threshold=16 / 255):
    x = np.asarray(frame)
    x = x.astype(np.float32) / 255.0 if x.dtype == np.uint8 else x.astype(np.float32)
    far = np.ones(x.shape[:2], dtype=bool)
    for color in _RESERVED:
        far &= np.abs(x - color).max(axis=-1) > threshold
    return far


def count_objects(frame, min_area=4):
    """Number of 4-connected foreground blobs with at least ``min_area`` pixels."""
    labels, n = ndimage.label(foreground_mask(frame))
    if n == 0:
        return 0
    areas = np.bincount(labels.ravel())[1:]
    return int(np.sum(areas >= min_area))
