"""Finite-difference verification for every differentiable kernel and loss.

Each check compares taped gradients against central differences on fixed,
seeded fixtures and reports the max relative error |analytic - fd| /
max(1, |fd|). Probes that would straddle the renderer's hard truncation
boundary are skipped (the kernel is intentionally discontinuous there at a
level of exp(-cutoff^2 / 2)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import biomol as bm
from . import numerics as nm
from .forward_model import RenderSpec, render
from .losses import (
    LossWeights,
    StereoParams,
    backbone_loss,
    clash_loss,
    kl_div,
    ncc,
    rama_loss,
    rota_loss,
    vae_total_loss,
)
from .rng import stream

DEFAULT_TOLERANCE = 1e-4


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance


def _truncation_filter(spec: RenderSpec, coords_of):
    """Veto probe sites where moving one coordinate crosses the kernel cutoff."""
    d, h, w = spec.grid_shape
    zz, yy, xx = np.meshgrid(
        spec.origin[2] + spec.voxel_size * np.arange(d),
        spec.origin[1] + spec.voxel_size * np.arange(h),
        spec.origin[0] + spec.voxel_size * np.arange(w),
        indexing="ij",
    )
    centers = np.stack([xx, yy, zz], axis=-1).reshape(-1, 3)
    r_cut = spec.cutoff_sigmas * spec.sigma

    def probe_filter(t, flat):
        coords = coords_of(t)
        if coords is None:
            return True
        atom = flat // 3
        dist = np.linalg.norm(centers - coords[atom], axis=1)
        return float(np.min(np.abs(dist - r_cut))) > 5e-4

    return probe_filter


def check_conv3d(seed: int = 0) -> float:
    rng = stream(seed, "gradcheck.conv3d")
    worst = 0.0
    for stride in (1, 2):
        x = nm.Tensor(rng.normal(size=(2, 6, 6, 6)), requires_grad=True)
        k = nm.Tensor(rng.normal(size=(3, 2, 3, 3, 3)), requires_grad=True)
        od = (6 + 2 - 3) // stride + 1
        up = rng.normal(size=(3, od, od, od))

        def f():
            return nm.tsum(nm.mul(nm.conv3d(x, k, stride=stride, padding=1), nm.Tensor(up)))

        worst = max(worst, nm.finite_difference_check(f, [x, k], n_probes=100, h=1e-5, rng=rng))
    return worst


def check_trilinear(seed: int = 0) -> float:
    rng = stream(seed, "gradcheck.trilinear")
    grid = nm.Tensor(rng.normal(size=(3, 6, 6, 6)), requires_grad=True)
    base = rng.integers(0, 5, size=(25, 3)).astype(np.float64)
    frac = rng.uniform(0.2, 0.8, size=(25, 3))  # keep probes away from cell boundaries
    points = nm.Tensor(base + frac, requires_grad=True)
    up = rng.normal(size=(25, 3))

    def f():
        return nm.tsum(nm.mul(nm.trilinear_sample(grid, points), nm.Tensor(up)))

    return nm.finite_difference_check(f, [grid, points], n_probes=120, h=1e-5, rng=rng)


def check_dense(seed: int = 0) -> float:
    rng = stream(seed, "gradcheck.dense")
    x = nm.Tensor(rng.normal(size=(5, 7)), requires_grad=True)
    w = nm.Tensor(rng.normal(size=(4, 7)), requires_grad=True)
    b = nm.Tensor(rng.normal(size=4), requires_grad=True)
    up = rng.normal(size=(5, 4))

    def f():
        return nm.tsum(nm.mul(nm.dense(x, w, b), nm.Tensor(up)))

    return nm.finite_difference_check(f, [x, w, b], n_probes=100, h=1e-5, rng=rng)


def _render_fixture(seed: int):
    rng = stream(seed, "gradcheck.render")
    spec = RenderSpec((14, 14, 14), 1.0, origin=np.zeros(3), resolution=3.0, cutoff_sigmas=5.0)
    coords = rng.uniform(4.0, 9.0, size=(6, 3))
    s = bm.AtomicStructure(
        ["C"] * 6, [f"C{i}" for i in range(6)], ["A"] * 6, [1] * 6, ["LIG"] * 6, coords,
        validate=False,
    )
    pos = nm.Tensor(coords.copy(), requires_grad=True)
    up = rng.normal(size=spec.grid_shape)
    return spec, s, pos, up, rng


def check_render(seed: int = 0) -> float:
    spec, s, pos, up, rng = _render_fixture(seed)

    def f():
        v = render(s.with_positions(pos), spec)
        return nm.tsum(nm.mul(v.grid, nm.Tensor(up)))

    flt = _truncation_filter(spec, lambda t: t.data if t is pos else None)
    return nm.finite_difference_check(f, [pos], n_probes=100, h=1e-4, rng=rng, probe_filter=flt)


def check_ncc(seed: int = 0) -> float:
    rng = stream(seed, "gradcheck.ncc")
    a = nm.Tensor(rng.normal(size=(5, 5, 5)), requires_grad=True)
    b = nm.Tensor(rng.normal(size=(5, 5, 5)), requires_grad=True)

    def f():
        return ncc(a, b)

    return nm.finite_difference_check(f, [a, b], n_probes=100, h=1e-5, rng=rng)


def check_kl_div(seed: int = 0) -> float:
    rng = stream(seed, "gradcheck.kl")
    mu = nm.Tensor(rng.normal(size=(3, 2, 2, 2)), requires_grad=True)
    logvar = nm.Tensor(0.5 * rng.normal(size=(3, 2, 2, 2)), requires_grad=True)

    def f():
        return kl_div(mu, logvar)

    return nm.finite_difference_check(f, [mu, logvar], n_probes=100, h=1e-5, rng=rng)


def check_backbone_loss(seed: int = 0) -> float:
    rng = stream(seed, "gradcheck.backbone")
    s = bm.synth_helix(7)
    windows = bm.backbone_windows(s)
    pos = nm.Tensor(s.coords + 0.4 * rng.normal(size=s.coords.shape), requires_grad=True)

    def f():
        return backbone_loss(s.with_positions(pos), s, windows)

    return nm.finite_difference_check(f, [pos], n_probes=100, h=1e-5, rng=rng)


def check_clash_loss(seed: int = 0) -> float:
    rng = stream(seed, "gradcheck.clash")
    # compact random cluster guarantees overlapping non-excluded pairs
    coords = rng.uniform(0.0, 4.5, size=(10, 3))
    s = bm.AtomicStructure(
        ["C", "N", "O", "C", "S", "C", "N", "O", "C", "C"],
        [f"X{i}" for i in range(10)],
        ["A"] * 10,
        list(range(1, 11)),
        ["LIG"] * 10,
        coords,
        validate=False,
    )
    p = StereoParams()
    pos = nm.Tensor(coords.copy(), requires_grad=True)

    def f():
        return clash_loss(s.with_positions(pos), p)

    return nm.finite_difference_check(f, [pos], n_probes=100, h=1e-5, rng=rng)


def check_rama_loss(seed: int = 0) -> float:
    rng = stream(seed, "gradcheck.rama")
    s = bm.synth_helix(8)
    p = StereoParams()
    pos = nm.Tensor(s.coords + 0.5 * rng.normal(size=s.coords.shape), requires_grad=True)

    def f():
        return rama_loss(bm.compute_dihedrals(s.with_positions(pos)), p)

    return nm.finite_difference_check(f, [pos], n_probes=100, h=1e-5, rng=rng)


def _chi_fixture(seed: int):
    rng = stream(seed, "gradcheck.rota")
    atoms = []
    for i in range(1, 6):
        base = np.array([6.0 * i, 0.0, 0.0])
        n = base
        ca = base + np.array([1.46, 0.0, 0.0])
        c = ca + np.array([0.55, 1.42, 0.0])
        o = c + np.array([0.0, 1.0, 0.8])
        cb = bm._place_cb(n, ca, c)
        chi = float(rng.uniform(-175.0, 175.0))
        cg = bm._nerf(n, ca, cb, 1.52, 114.0, chi)
        for name, el, pp in (
            ("N", "N", n), ("CA", "C", ca), ("C", "C", c), ("O", "O", o),
            ("CB", "C", cb), ("CG", "C", cg),
        ):
            atoms.append(bm.Atom(el, name, "A", i, "XXX", pp))
    return bm.AtomicStructure.from_atoms(atoms), rng


def check_rota_loss(seed: int = 0) -> float:
    s, rng = _chi_fixture(seed)
    p = StereoParams()
    pos = nm.Tensor(s.coords.copy(), requires_grad=True)

    def f():
        return rota_loss(bm.compute_dihedrals(s.with_positions(pos)), p)

    return nm.finite_difference_check(f, [pos], n_probes=100, h=1e-5, rng=rng)


def check_vae_total_loss(seed: int = 0) -> float:
    """End-to-end composite: structure -> render -> NCC plus all regularizers."""
    rng = stream(seed, "gradcheck.total")
    x_ref = bm.synth_helix(6)
    spec = RenderSpec((16, 16, 16), 1.5, resolution=5.0, cutoff_sigmas=5.0).centered_on(x_ref)
    windows = bm.backbone_windows(x_ref)
    p = StereoParams()
    w = LossWeights()
    observed = render(bm.hinge_deform(x_ref, 3, np.array([1.0, 0.0, 0.0]), 0.3), spec)
    pos = nm.Tensor(x_ref.coords + 0.3 * rng.normal(size=x_ref.coords.shape), requires_grad=True)
    mu = nm.Tensor(0.3 * rng.normal(size=(2, 2, 2, 2)), requires_grad=True)
    logvar = nm.Tensor(0.3 * rng.normal(size=(2, 2, 2, 2)), requires_grad=True)

    def f():
        x_hat = x_ref.with_positions(pos)
        pred = render(x_hat, spec)
        total, _ = vae_total_loss([pred], [observed], mu, logvar, x_hat, x_ref, windows, p, w)
        return total

    flt = _truncation_filter(spec, lambda t: t.data if t is pos else None)
    return nm.finite_difference_check(
        f, [pos, mu, logvar], n_probes=100, h=1e-4, rng=rng, probe_filter=flt
    )


ALL_CHECKS = (
    ("conv3d", check_conv3d),
    ("trilinear_sample", check_trilinear),
    ("dense", check_dense),
    ("render", check_render),
    ("ncc", check_ncc),
    ("kl_div", check_kl_div),
    ("backbone_loss", check_backbone_loss),
    ("clash_loss", check_clash_loss),
    ("rama_loss", check_rama_loss),
    ("rota_loss", check_rota_loss),
    ("vae_total_loss", check_vae_total_loss),
)


def run_all(seed: int = 0, tolerance: float = DEFAULT_TOLERANCE) -> list[GradCheckResult]:
    return [GradCheckResult(name, fn(seed), tolerance) for name, fn in ALL_CHECKS]
