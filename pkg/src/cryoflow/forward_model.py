"""Differentiable rendering of atomic structures into density volumes.

Each atom contributes an isotropic Gaussian evaluated at voxel centers and
truncated beyond ``cutoff_sigmas`` standard deviations. The Gaussian width is
set by interpreting ``resolution`` as the FWHM of the point-spread function.
Rendering is linear in atoms and exactly differentiable with respect to atom
coordinates (gradients are consistent with the truncated kernel).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .errors import DimensionError, EmptyRenderError, InputError
from .volume import Volume

_FWHM_TO_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

ATOMIC_NUMBERS = {"H": 1, "C": 6, "N": 7, "O": 8, "P": 15, "S": 16}


@dataclass
class RenderSpec:
    """Target grid geometry and kernel parameters for the forward model."""

    grid_shape: tuple[int, int, int]
    voxel_size: float
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    resolution: float = 8.0
    amplitude_mode: str = "uniform"
    cutoff_sigmas: float = 5.0

    def __post_init__(self):
        self.grid_shape = tuple(int(n) for n in self.grid_shape)
        if len(self.grid_shape) != 3 or min(self.grid_shape) < 1:
            raise InputError(f"grid_shape must be three positive ints, got {self.grid_shape}")
        if not self.voxel_size > 0:
            raise InputError(f"voxel_size must be positive, got {self.voxel_size}")
        if not self.resolution > 0:
            raise InputError(f"resolution must be positive, got {self.resolution}")
        if self.cutoff_sigmas < 3:
            raise InputError(f"cutoff_sigmas must be >= 3, got {self.cutoff_sigmas}")
        if self.amplitude_mode not in ("uniform", "atomic_number"):
            raise InputError(f"unknown amplitude_mode {self.amplitude_mode!r}")
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)

    @property
    def sigma(self) -> float:
        """Gaussian width from resolution interpreted as FWHM."""
        return self.resolution / _FWHM_TO_SIGMA

    def amplitudes(self, s) -> np.ndarray:
        if self.amplitude_mode == "uniform":
            return np.ones(s.n_atoms)
        try:
            return np.array([float(ATOMIC_NUMBERS[e]) for e in s.elements])
        except KeyError as exc:
            raise InputError(f"no atomic number for element {exc.args[0]!r}") from None

    def centered_on(self, s) -> "RenderSpec":
        """Same spec with the origin chosen so the grid is centered on the structure."""
        centroid = s.coords.mean(axis=0)
        n_xyz = np.array([self.grid_shape[2], self.grid_shape[1], self.grid_shape[0]])
        origin = centroid - self.voxel_size * (n_xyz - 1) / 2.0
        return RenderSpec(
            self.grid_shape, self.voxel_size, origin, self.resolution,
            self.amplitude_mode, self.cutoff_sigmas,
        )

    def index_coords(self, coords: np.ndarray) -> np.ndarray:
        """World (x, y, z) -> continuous (d, h, w) grid indices."""
        p = (np.asarray(coords, dtype=np.float64) - self.origin) / self.voxel_size
        return p[:, ::-1]


def _render_core(coords: np.ndarray, spec: RenderSpec, amps: np.ndarray):
    """Accumulate truncated Gaussians; returns (grid, per-atom cache)."""
    d, h, w = spec.grid_shape
    sigma = spec.sigma
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    r_cut = spec.cutoff_sigmas * sigma
    r_vox = r_cut / spec.voxel_size
    grid = np.zeros((d, h, w))
    axes_world = [
        spec.origin[2] + spec.voxel_size * np.arange(d),  # z along D
        spec.origin[1] + spec.voxel_size * np.arange(h),  # y along H
        spec.origin[0] + spec.voxel_size * np.arange(w),  # x along W
    ]
    cache = []
    touched = False
    for pos, a in zip(coords, amps):
        ctr = ((pos - spec.origin) / spec.voxel_size)[::-1]  # (d, h, w)
        lo = np.maximum(np.ceil(ctr - r_vox).astype(int), 0)
        hi = np.minimum(np.floor(ctr + r_vox).astype(int), np.array([d, h, w]) - 1)
        if np.any(lo > hi):
            cache.append(None)
            continue
        dz = axes_world[0][lo[0] : hi[0] + 1] - pos[2]
        dy = axes_world[1][lo[1] : hi[1] + 1] - pos[1]
        dx = axes_world[2][lo[2] : hi[2] + 1] - pos[0]
        dist2 = dz[:, None, None] ** 2 + dy[None, :, None] ** 2 + dx[None, None, :] ** 2
        inside = dist2 <= r_cut * r_cut
        if not inside.any():
            cache.append(None)
            continue
        touched = True
        contrib = a * np.exp(-dist2 * inv2s2) * inside
        grid[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1] += contrib
        cache.append((lo, hi, dx, dy, dz, contrib))
    if not touched:
        raise EmptyRenderError("no atom lies within cutoff of the target grid")
    return grid, cache


def _grad_from_cache(cache, upstream: np.ndarray, sigma: float) -> np.ndarray:
    inv_s2 = 1.0 / (sigma * sigma)
    grads = np.zeros((len(cache), 3))
    for k, entry in enumerate(cache):
        if entry is None:
            continue
        lo, hi, dx, dy, dz, contrib = entry
        weighted = upstream[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1] * contrib
        # d/dp exp(-|x - p|^2 / 2s^2) = exp * (x - p) / s^2; dx holds (x - p)
        grads[k, 0] = inv_s2 * (weighted.sum(axis=(0, 1)) @ dx)
        grads[k, 1] = inv_s2 * (weighted.sum(axis=(0, 2)) @ dy)
        grads[k, 2] = inv_s2 * (weighted.sum(axis=(1, 2)) @ dz)
    return grads


def render(s, spec: RenderSpec) -> Volume:
    """Render a structure into a Volume; differentiable w.r.t. atom positions."""
    if s.n_atoms == 0:
        raise InputError("cannot render an empty structure")
    amps = spec.amplitudes(s)
    positions = s.positions
    grid, cache = _render_core(positions.data, spec, amps)
    out = nm.Tensor(grid, positions.requires_grad)

    def backward_fn(g):
        nm._accumulate(positions, _grad_from_cache(cache, g, spec.sigma))

    nm._record(out, backward_fn)
    return Volume(out, spec.voxel_size, spec.origin.copy())


def render_grad(s, spec: RenderSpec, upstream) -> np.ndarray:
    """Gradient of sum(upstream * render(s)) with respect to atom positions."""
    up = upstream.data if isinstance(upstream, nm.Tensor) else np.asarray(upstream, dtype=np.float64)
    if up.shape != spec.grid_shape:
        raise DimensionError(
            f"upstream shape {up.shape} does not match render grid {spec.grid_shape}"
        )
    amps = spec.amplitudes(s)
    _, cache = _render_core(s.coords, spec, amps)
    return _grad_from_cache(cache, up, spec.sigma)
