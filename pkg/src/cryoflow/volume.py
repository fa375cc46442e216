"""Density volumes: MRC2014-subset I/O, atom-distance and percentile masks.

Grids are stored Z-major, i.e. ``grid[d, h, w]`` sits at world position
``origin + voxel_size * (w, h, d)``; that matches the MRC section/row/column
layout so files interchange bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import DimensionError, InputError, UnsupportedFormatError

_HEADER_SIZE = 1024
_MODE_FLOAT32 = 2


@dataclass
class Volume:
    """A 3-D scalar density grid with isotropic voxel size and world origin."""

    grid: nm.Tensor
    voxel_size: float
    origin: np.ndarray

    def __init__(self, grid, voxel_size: float, origin=(0.0, 0.0, 0.0)):
        g = grid if isinstance(grid, nm.Tensor) else nm.Tensor(grid)
        if g.data.ndim != 3:
            raise DimensionError(f"volume grid must be 3-D, got shape {g.data.shape}")
        if not voxel_size > 0:
            raise InputError(f"voxel_size must be positive, got {voxel_size}")
        if not np.isfinite(g.data).all():
            raise InputError("volume grid contains non-finite values")
        self.grid = g
        self.voxel_size = float(voxel_size)
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.grid.data.shape

    @property
    def values(self) -> np.ndarray:
        return self.grid.data

    def congruent_with(self, other: "Volume") -> bool:
        return (
            self.shape == other.shape
            and abs(self.voxel_size - other.voxel_size) < 1e-9
            and np.allclose(self.origin, other.origin, atol=1e-6)
        )

    def voxel_centers_world(self) -> np.ndarray:
        """(D, H, W, 3) array of voxel-center world coordinates (x, y, z)."""
        d, h, w = self.shape
        zz, yy, xx = np.meshgrid(np.arange(d), np.arange(h), np.arange(w), indexing="ij")
        pts = np.stack([xx, yy, zz], axis=-1) * self.voxel_size + self.origin
        return pts

    def world_to_index(self, points: np.ndarray) -> np.ndarray:
        """World (x, y, z) coordinates -> continuous (d, h, w) grid indices."""
        p = (np.asarray(points, dtype=np.float64) - self.origin) / self.voxel_size
        return p[:, ::-1]


@dataclass
class VoxelMask:
    """Boolean grid congruent with a Volume."""

    mask: np.ndarray

    def __init__(self, mask: np.ndarray):
        m = np.asarray(mask)
        if m.dtype != bool or m.ndim != 3:
            raise DimensionError(f"mask must be a 3-D boolean grid, got {m.dtype} {m.shape}")
        self.mask = m

    @property
    def shape(self):
        return self.mask.shape

    def count(self) -> int:
        return int(self.mask.sum())

    def __or__(self, other: "VoxelMask") -> "VoxelMask":
        if self.shape != other.shape:
            raise DimensionError(f"mask shapes differ: {self.shape} vs {other.shape}")
        return VoxelMask(self.mask | other.mask)

    def __and__(self, other: "VoxelMask") -> "VoxelMask":
        if self.shape != other.shape:
            raise DimensionError(f"mask shapes differ: {self.shape} vs {other.shape}")
        return VoxelMask(self.mask & other.mask)


# ---------------------------------------------------------------------------
# MRC2014 subset
# ---------------------------------------------------------------------------


def read_mrc_subset(data: bytes) -> Volume:
    """Read a mode-2 little-endian MRC2014 map with orthogonal isotropic voxels."""
    if len(data) < _HEADER_SIZE:
        raise UnsupportedFormatError(f"file too short for an MRC header ({len(data)} bytes)")
    nx, ny, nz, mode = struct.unpack_from("<4i", data, 0)
    mx, my, mz = struct.unpack_from("<3i", data, 28)
    cella = struct.unpack_from("<3f", data, 40)
    cellb = struct.unpack_from("<3f", data, 52)
    mapc, mapr, maps_ = struct.unpack_from("<3i", data, 64)
    nsymbt = struct.unpack_from("<i", data, 92)[0]
    origin = struct.unpack_from("<3f", data, 196)
    if mode != _MODE_FLOAT32:
        raise UnsupportedFormatError(f"unsupported MRC MODE {mode}; only MODE 2 is handled")
    if (mapc, mapr, maps_) != (1, 2, 3):
        raise UnsupportedFormatError(
            f"unsupported axis order MAPC/MAPR/MAPS = {(mapc, mapr, maps_)}; expected (1, 2, 3)"
        )
    if any(abs(b - 90.0) > 1e-3 for b in cellb):
        raise UnsupportedFormatError(f"non-orthogonal cell angles {cellb}")
    if min(nx, ny, nz) < 1 or (mx, my, mz) != (nx, ny, nz):
        raise UnsupportedFormatError(
            f"grid sampling (MX, MY, MZ) = {(mx, my, mz)} must equal (NX, NY, NZ) = {(nx, ny, nz)}"
        )
    vx, vy, vz = (cella[0] / nx, cella[1] / ny, cella[2] / nz)
    if abs(vx - vy) > 1e-4 * vx or abs(vx - vz) > 1e-4 * vx:
        raise UnsupportedFormatError(f"anisotropic voxels {(vx, vy, vz)} are not supported")
    start = _HEADER_SIZE + nsymbt
    count = nx * ny * nz
    raw = np.frombuffer(data, dtype="<f4", count=count, offset=start)
    if raw.size != count:
        raise UnsupportedFormatError(
            f"truncated data section: expected {count} voxels, got {raw.size}"
        )
    grid = raw.reshape(nz, ny, nx).astype(np.float64)
    return Volume(grid, float(vx), np.array(origin, dtype=np.float64))


def write_mrc_subset(v: Volume) -> bytes:
    """Serialize as a minimal mode-2 little-endian MRC2014 map."""
    d, h, w = v.shape
    header = bytearray(_HEADER_SIZE)
    struct.pack_into("<4i", header, 0, w, h, d, _MODE_FLOAT32)
    struct.pack_into("<3i", header, 16, 0, 0, 0)  # NXSTART/NYSTART/NZSTART
    struct.pack_into("<3i", header, 28, w, h, d)
    struct.pack_into(
        "<3f", header, 40, w * v.voxel_size, h * v.voxel_size, d * v.voxel_size
    )
    struct.pack_into("<3f", header, 52, 90.0, 90.0, 90.0)
    struct.pack_into("<3i", header, 64, 1, 2, 3)
    data32 = v.values.astype("<f4")
    struct.pack_into(
        "<3f", header, 76, float(data32.min()), float(data32.max()), float(data32.mean())
    )
    struct.pack_into("<i", header, 88, 1)  # ISPG: 3-D volume
    struct.pack_into("<i", header, 92, 0)  # NSYMBT
    struct.pack_into("<4s", header, 104, b"MRCO")
    struct.pack_into("<i", header, 108, 20140)  # NVERSION
    struct.pack_into("<3f", header, 196, *[float(x) for x in v.origin])
    struct.pack_into("<4s", header, 208, b"MAP ")
    header[212:216] = bytes([0x44, 0x44, 0x00, 0x00])  # little-endian MACHST
    rms = float(data32.std())
    struct.pack_into("<f", header, 216, rms)
    struct.pack_into("<i", header, 220, 0)  # NLABL
    return bytes(header) + data32.tobytes()


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------


def atom_mask(v: Volume, s, radius: float) -> VoxelMask:
    """Voxels whose centers lie within ``radius`` of any atom."""
    if not radius > 0:
        raise InputError(f"radius must be positive, got {radius}")
    d, h, w = v.shape
    mask = np.zeros((d, h, w), dtype=bool)
    r_vox = radius / v.voxel_size
    axes = [np.arange(n, dtype=np.float64) for n in (d, h, w)]
    for pos in s.coords:
        idx = (pos - v.origin) / v.voxel_size  # (x, y, z) order
        ctr = idx[::-1]  # (d, h, w)
        lo = np.maximum(np.ceil(ctr - r_vox).astype(int), 0)
        hi = np.minimum(np.floor(ctr + r_vox).astype(int), np.array([d, h, w]) - 1)
        if np.any(lo > hi):
            continue
        dz = axes[0][lo[0] : hi[0] + 1] - ctr[0]
        dy = axes[1][lo[1] : hi[1] + 1] - ctr[1]
        dx = axes[2][lo[2] : hi[2] + 1] - ctr[2]
        dist2 = dz[:, None, None] ** 2 + dy[None, :, None] ** 2 + dx[None, None, :] ** 2
        mask[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1] |= dist2 <= r_vox**2
    return VoxelMask(mask)


def percentile_mask(v: Volume, percentile: float) -> VoxelMask:
    """Voxels with value >= the given percentile; ties are all included."""
    if not 0.0 <= percentile <= 100.0:
        raise InputError(f"percentile must be in [0, 100], got {percentile}")
    threshold = np.percentile(v.values, percentile)
    return VoxelMask(v.values >= threshold)
