"""Training objectives: NCC reconstruction, KL divergence, backbone window
restraints, and differentiable stereochemistry penalties.

All losses return scalar tensors built from taped kernels, so gradients flow
back to atom coordinates (and through the renderer to network parameters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nm
from .biomol import AtomicStructure, BackboneWindowSet, DihedralSet, compute_dihedrals
from .errors import DimensionError, InputError
from .volume import Volume

NCC_EPS = 1e-8
_TINY = 1e-300  # keeps sqrt differentiable at exact zeros under hinge gates


@dataclass
class LossWeights:
    lambda_kl: float = 1e-4
    lambda_molprob: float = 1e-6
    lambda_backbone: float = 1e2

    def __post_init__(self):
        for name in ("lambda_kl", "lambda_molprob", "lambda_backbone"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be >= 0")


@dataclass
class StereoParams:
    """Stereochemistry penalty parameters. All angles are stored in radians."""

    vdw_radii: dict[str, float] = field(
        default_factory=lambda: {"C": 1.70, "N": 1.55, "O": 1.52, "S": 1.80}
    )
    clash_tolerance: float = 0.4
    rama_basins: tuple[tuple[float, float, float], ...] = (
        (math.radians(-63.0), math.radians(-43.0), math.radians(30.0)),
        (math.radians(-120.0), math.radians(130.0), math.radians(40.0)),
    )
    chi_targets: tuple[float, ...] = (
        math.radians(-60.0),
        math.radians(60.0),
        math.radians(180.0),
    )
    chi_tolerance: float = math.radians(30.0)
    exclusion_bonds: int = 3  # pairs within this many bonds are skipped

    def __post_init__(self):
        if any(r <= 0 for r in self.vdw_radii.values()):
            raise InputError("vdw radii must be positive")
        if self.clash_tolerance <= 0 or self.chi_tolerance <= 0:
            raise InputError("tolerances must be positive")

    @classmethod
    def from_degrees(
        cls,
        vdw_radii: dict[str, float],
        clash_tolerance: float,
        rama_basins_deg: Sequence[tuple[float, float, float]],
        chi_targets_deg: Sequence[float],
        chi_tolerance_deg: float,
    ) -> "StereoParams":
        return cls(
            vdw_radii=dict(vdw_radii),
            clash_tolerance=float(clash_tolerance),
            rama_basins=tuple(
                (math.radians(p), math.radians(q), math.radians(r))
                for p, q, r in rama_basins_deg
            ),
            chi_targets=tuple(math.radians(t) for t in chi_targets_deg),
            chi_tolerance=math.radians(chi_tolerance_deg),
        )


# ---------------------------------------------------------------------------
# volume losses
# ---------------------------------------------------------------------------


def _grid_tensor(v) -> nm.Tensor:
    if isinstance(v, Volume):
        return v.grid
    return nm.as_tensor(v)


def ncc(a, b) -> nm.Tensor:
    """Voxel-wise Pearson correlation with epsilon-stabilized denominators."""
    ta, tb = _grid_tensor(a), _grid_tensor(b)
    if ta.data.shape != tb.data.shape:
        raise DimensionError(f"ncc grids differ in shape: {ta.data.shape} vs {tb.data.shape}")
    da = nm.sub(ta, nm.tmean(ta))
    db = nm.sub(tb, nm.tmean(tb))
    num = nm.tsum(nm.mul(da, db))
    den_a = nm.sqrt(nm.add(nm.tsum(nm.mul(da, da)), NCC_EPS))
    den_b = nm.sqrt(nm.add(nm.tsum(nm.mul(db, db)), NCC_EPS))
    return nm.div(num, nm.add(nm.mul(den_a, den_b), NCC_EPS))


def loss_recon(predicted: Sequence, observed: Sequence) -> nm.Tensor:
    """Mean over ensemble members of 1 - NCC(predicted_i, observed_i)."""
    predicted, observed = list(predicted), list(observed)
    if not predicted or len(predicted) != len(observed):
        raise InputError(
            f"need equal-length non-empty ensembles, got {len(predicted)} and {len(observed)}"
        )
    terms = [nm.sub(1.0, ncc(p, o)) for p, o in zip(predicted, observed)]
    total = terms[0]
    for t in terms[1:]:
        total = nm.add(total, t)
    return nm.mul(total, 1.0 / len(terms))


def kl_div(mu, logvar) -> nm.Tensor:
    """KL(N(mu, exp(logvar)) || N(0, 1)), summed over latent entries."""
    tm, tl = nm.as_tensor(mu), nm.as_tensor(logvar)
    if tm.data.shape != tl.data.shape:
        raise DimensionError(f"mu/logvar shapes differ: {tm.data.shape} vs {tl.data.shape}")
    inner = nm.sub(nm.add(nm.mul(tm, tm), nm.exp(tl)), nm.add(1.0, tl))
    return nm.mul(nm.tsum(inner), 0.5)


# ---------------------------------------------------------------------------
# backbone window loss
# ---------------------------------------------------------------------------


def backbone_loss(
    x_hat: AtomicStructure, x_ref: AtomicStructure, windows: BackboneWindowSet
) -> nm.Tensor:
    """Mean squared deviation of within-window pair distances from the reference."""
    if windows.n_windows == 0:
        raise InputError("backbone_loss needs at least one window")
    if x_hat.n_atoms != x_ref.n_atoms:
        raise InputError(f"structures differ in size: {x_hat.n_atoms} vs {x_ref.n_atoms}")
    i, j = windows.pair_i, windows.pair_j
    ref = x_ref.coords
    d_ref = np.sqrt(np.sum((ref[i] - ref[j]) ** 2, axis=1))
    diff = nm.sub(nm.take_rows(x_hat.positions, i), nm.take_rows(x_hat.positions, j))
    d_hat = nm.norm_rows(diff)
    dev = nm.sub(d_hat, nm.Tensor(d_ref))
    return nm.tmean(nm.mul(dev, dev))


# ---------------------------------------------------------------------------
# stereochemistry penalties
# ---------------------------------------------------------------------------

_INTRA_BONDS = (
    ("N", "CA"),
    ("CA", "C"),
    ("C", "O"),
    ("CA", "CB"),
    ("CB", "CG"),
    ("CB", "CG1"),
    ("CB", "CG2"),
    ("CB", "OG"),
    ("CB", "OG1"),
    ("CB", "SG"),
    ("CG", "CD"),
    ("CG", "CD1"),
    ("CG", "CD2"),
    ("CG", "OD1"),
    ("CG", "ND2"),
    ("CG", "SD"),
)


@dataclass
class StereoTopology:
    """Precomputed non-excluded atom pairs for the clash penalty."""

    pair_i: np.ndarray
    pair_j: np.ndarray
    overlap_ref: np.ndarray  # r_i + r_j - clash_tolerance per pair

    @classmethod
    def build(cls, s: AtomicStructure, p: StereoParams) -> "StereoTopology":
        n = s.n_atoms
        adj: list[list[int]] = [[] for _ in range(n)]

        def connect(a: int, b: int):
            adj[a].append(b)
            adj[b].append(a)

        residues = s.residues()
        for _, _, _, amap in residues:
            for a, b in _INTRA_BONDS:
                if a in amap and b in amap:
                    connect(amap[a], amap[b])
        by_chain: dict[str, list[dict[str, int]]] = {}
        for chain, _, _, amap in residues:
            by_chain.setdefault(chain, []).append(amap)
        for maps in by_chain.values():
            for prev, cur in zip(maps, maps[1:]):
                if "C" in prev and "N" in cur:
                    connect(prev["C"], cur["N"])

        excluded: set[tuple[int, int]] = set()
        max_depth = p.exclusion_bonds
        for start in range(n):
            frontier = {start}
            seen = {start}
            for _ in range(max_depth):
                frontier = {nb for a in frontier for nb in adj[a]} - seen
                seen |= frontier
            for other in seen:
                if other > start:
                    excluded.add((start, other))

        ii, jj = np.triu_indices(n, k=1)
        keep = np.array([(a, b) not in excluded for a, b in zip(ii, jj)])
        ii, jj = ii[keep], jj[keep]
        try:
            radii = np.array([p.vdw_radii[e] for e in s.elements])
        except KeyError as exc:
            raise InputError(f"no vdW radius for element {exc.args[0]!r}") from None
        return cls(ii, jj, radii[ii] + radii[jj] - p.clash_tolerance)


def clash_loss(s: AtomicStructure, p: StereoParams, topology: StereoTopology | None = None) -> nm.Tensor:
    """Sum of squared vdW overlaps over non-excluded atom pairs."""
    topo = topology if topology is not None else StereoTopology.build(s, p)
    if topo.pair_i.size == 0:
        return nm.Tensor(0.0)
    diff = nm.sub(nm.take_rows(s.positions, topo.pair_i), nm.take_rows(s.positions, topo.pair_j))
    dist = nm.norm_rows(diff)
    overlap = nm.relu(nm.sub(nm.Tensor(topo.overlap_ref), dist))
    return nm.tsum(nm.mul(overlap, overlap))


def wrap_angle(a: nm.Tensor) -> nm.Tensor:
    """Wrap angles to (-pi, pi], differentiable away from the boundary."""
    return nm.atan2(nm.sin(a), nm.cos(a))


def rama_loss(d: DihedralSet, p: StereoParams) -> nm.Tensor:
    """Hinged squared distance from (phi, psi) to the nearest basin."""
    i_phi, i_psi = d.rama_pairs()
    if i_phi.size == 0:
        return nm.Tensor(0.0)
    phi = nm.take_rows(d.phi, i_phi)
    psi = nm.take_rows(d.psi, i_psi)
    hinges = []
    for phi0, psi0, radius in p.rama_basins:
        dphi = wrap_angle(nm.sub(phi, phi0))
        dpsi = wrap_angle(nm.sub(psi, psi0))
        dist = nm.sqrt(nm.add(nm.add(nm.mul(dphi, dphi), nm.mul(dpsi, dpsi)), _TINY))
        h = nm.relu(nm.sub(dist, radius))
        hinges.append(nm.mul(h, h))
    return nm.tsum(nm.amin(nm.stack(hinges, axis=0), axis=0))


def rota_loss(d: DihedralSet, p: StereoParams) -> nm.Tensor:
    """Hinged squared wraparound distance from chi1 to the nearest rotamer target."""
    if d.chi1.data.size == 0:
        return nm.Tensor(0.0)
    dists = []
    for target in p.chi_targets:
        delta = wrap_angle(nm.sub(d.chi1, target))
        dists.append(nm.absolute(delta))
    nearest = nm.amin(nm.stack(dists, axis=0), axis=0)
    h = nm.relu(nm.sub(nearest, p.chi_tolerance))
    return nm.tsum(nm.mul(h, h))


def molprob_loss(
    s: AtomicStructure,
    p: StereoParams,
    topology: StereoTopology | None = None,
    dihedrals: DihedralSet | None = None,
) -> nm.Tensor:
    """Unweighted sum of the clash, Ramachandran and rotamer penalties."""
    d = dihedrals if dihedrals is not None else compute_dihedrals(s)
    return nm.add(nm.add(clash_loss(s, p, topology), rama_loss(d, p)), rota_loss(d, p))


def structural_loss(
    x_hat: AtomicStructure,
    x_ref: AtomicStructure,
    windows: BackboneWindowSet,
    p: StereoParams,
    w: LossWeights,
    topology: StereoTopology | None = None,
) -> nm.Tensor:
    molprob = molprob_loss(x_hat, p, topology)
    bb = backbone_loss(x_hat, x_ref, windows)
    return nm.add(nm.mul(molprob, w.lambda_molprob), nm.mul(bb, w.lambda_backbone))


# ---------------------------------------------------------------------------
# combined objective
# ---------------------------------------------------------------------------


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def vae_total_loss(
    pred_vols,
    obs_vols,
    mu,
    logvar,
    x_hat,
    x_ref: AtomicStructure,
    windows: BackboneWindowSet,
    p: StereoParams,
    w: LossWeights,
    topology: StereoTopology | None = None,
) -> tuple[nm.Tensor, dict[str, float]]:
    """Reconstruction + KL + structural objective with a component breakdown.

    ``mu``/``logvar``/``x_hat`` may be single items or per-map sequences; the
    KL and structural terms are averaged over ensemble members. The breakdown
    holds the already-weighted contributions, which sum exactly to the total.
    """
    mus, logvars, x_hats = _as_list(mu), _as_list(logvar), _as_list(x_hat)
    recon = loss_recon(_as_list(pred_vols), _as_list(obs_vols))

    kl_sum = kl_div(mus[0], logvars[0])
    for m, lv in zip(mus[1:], logvars[1:]):
        kl_sum = nm.add(kl_sum, kl_div(m, lv))
    kl_term = nm.mul(kl_sum, w.lambda_kl / len(mus))

    mp_sum = molprob_loss(x_hats[0], p, topology)
    bb_sum = backbone_loss(x_hats[0], x_ref, windows)
    for xh in x_hats[1:]:
        mp_sum = nm.add(mp_sum, molprob_loss(xh, p, topology))
        bb_sum = nm.add(bb_sum, backbone_loss(xh, x_ref, windows))
    mp_term = nm.mul(mp_sum, w.lambda_molprob / len(x_hats))
    bb_term = nm.mul(bb_sum, w.lambda_backbone / len(x_hats))

    total = nm.add(nm.add(nm.add(recon, kl_term), mp_term), bb_term)
    breakdown = {
        "recon": float(recon.data),
        "kl": float(kl_term.data),
        "molprob": float(mp_term.data),
        "backbone": float(bb_term.data),
        "total": float(total.data),
    }
    return total, breakdown
