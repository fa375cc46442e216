"""Atomic structures: PDB-subset I/O, backbone windows, dihedrals, synthetic
conformations and rigid-body superposition.

Structures hold their coordinates in a :class:`~cryoflow.numerics.Tensor`, so
deformed copies created under a tape stay differentiable end to end; metadata
arrays are shared between copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from . import numerics as nm
from .errors import (
    DegenerateInputError,
    EmptyStructureError,
    FormatOverflowError,
    InputError,
    ParseError,
    StructureCompletenessError,
)

BACKBONE_ATOMS = ("N", "CA", "C", "O")
_GAMMA_ATOMS = ("CG", "CG1", "OG", "OG1", "SG")

# ideal backbone geometry (angstrom, degrees)
BOND_N_CA = 1.458
BOND_CA_C = 1.525
BOND_C_N = 1.329
BOND_C_O = 1.231
BOND_CA_CB = 1.521
ANGLE_N_CA_C = 111.2
ANGLE_CA_C_N = 116.2
ANGLE_C_N_CA = 121.7
ANGLE_CA_C_O = 120.5
ANGLE_N_CA_CB = 110.4
OMEGA_TRANS = 180.0

ALPHA_PHI = -57.8
ALPHA_PSI = -47.0


@dataclass(frozen=True)
class Atom:
    element: str
    atom_name: str
    chain_id: str
    residue_index: int
    residue_name: str
    position: np.ndarray

    def __post_init__(self):
        if not self.atom_name:
            raise InputError("atom_name must be nonempty")
        pos = np.asarray(self.position, dtype=np.float64)
        if pos.shape != (3,) or not np.isfinite(pos).all():
            raise InputError(f"atom position must be a finite 3-vector, got {self.position!r}")
        object.__setattr__(self, "position", pos)


class AtomicStructure:
    """Ordered atom records with coordinates in a shared (N, 3) tensor."""

    def __init__(
        self,
        elements: Sequence[str],
        atom_names: Sequence[str],
        chain_ids: Sequence[str],
        residue_indices: Sequence[int],
        residue_names: Sequence[str],
        positions,
        validate: bool = True,
    ):
        n = len(atom_names)
        if n == 0:
            raise EmptyStructureError("structure must contain at least one atom")
        self.elements = tuple(elements)
        self.atom_names = tuple(atom_names)
        self.chain_ids = tuple(chain_ids)
        self.residue_indices = np.asarray(residue_indices, dtype=np.int64)
        self.residue_names = tuple(residue_names)
        pos = positions if isinstance(positions, nm.Tensor) else nm.Tensor(positions)
        if pos.data.shape != (n, 3):
            raise InputError(f"positions must be ({n}, 3), got {pos.data.shape}")
        self.positions = pos
        if validate:
            self._validate()

    def _validate(self):
        if not np.isfinite(self.positions.data).all():
            raise InputError("structure contains non-finite coordinates")
        last_index: dict[str, int] = {}
        seen: set[tuple[str, int, str]] = set()
        for name, chain, resi in zip(self.atom_names, self.chain_ids, self.residue_indices):
            if not name:
                raise InputError("atom_name must be nonempty")
            if chain in last_index and resi < last_index[chain]:
                raise InputError(
                    f"residue order violation in chain {chain!r}: index {resi} after {last_index[chain]}"
                )
            last_index[chain] = int(resi)
            key = (chain, int(resi), name)
            if key in seen:
                raise InputError(f"duplicate atom {name!r} in chain {chain!r} residue {resi}")
            seen.add(key)

    # -- accessors -------------------------------------------------------
    @property
    def n_atoms(self) -> int:
        return len(self.atom_names)

    @property
    def coords(self) -> np.ndarray:
        return self.positions.data

    @property
    def backbone_mask(self) -> np.ndarray:
        return np.array([n in BACKBONE_ATOMS for n in self.atom_names], dtype=bool)

    def atoms(self) -> Iterable[Atom]:
        for i in range(self.n_atoms):
            yield Atom(
                self.elements[i],
                self.atom_names[i],
                self.chain_ids[i],
                int(self.residue_indices[i]),
                self.residue_names[i],
                self.coords[i].copy(),
            )

    @classmethod
    def from_atoms(cls, atoms: Sequence[Atom]) -> "AtomicStructure":
        if not atoms:
            raise EmptyStructureError("structure must contain at least one atom")
        return cls(
            [a.element for a in atoms],
            [a.atom_name for a in atoms],
            [a.chain_id for a in atoms],
            [a.residue_index for a in atoms],
            [a.residue_name for a in atoms],
            np.stack([a.position for a in atoms]),
        )

    def with_positions(self, positions) -> "AtomicStructure":
        """Same topology, new coordinates (may be a taped tensor)."""
        s = AtomicStructure.__new__(AtomicStructure)
        s.elements = self.elements
        s.atom_names = self.atom_names
        s.chain_ids = self.chain_ids
        s.residue_indices = self.residue_indices
        s.residue_names = self.residue_names
        pos = positions if isinstance(positions, nm.Tensor) else nm.Tensor(positions)
        if pos.data.shape != (self.n_atoms, 3):
            raise InputError(f"positions must be ({self.n_atoms}, 3), got {pos.data.shape}")
        s.positions = pos
        return s

    def select(self, indices) -> "AtomicStructure":
        idx = np.asarray(indices, dtype=np.intp)
        return AtomicStructure(
            [self.elements[i] for i in idx],
            [self.atom_names[i] for i in idx],
            [self.chain_ids[i] for i in idx],
            self.residue_indices[idx],
            [self.residue_names[i] for i in idx],
            self.coords[idx].copy(),
            validate=False,
        )

    def select_atom_name(self, atom_name: str) -> "AtomicStructure":
        idx = [i for i, n in enumerate(self.atom_names) if n == atom_name]
        if not idx:
            raise InputError(f"no atoms named {atom_name!r}")
        return self.select(idx)

    def residues(self) -> list[tuple[str, int, str, dict[str, int]]]:
        """Residues in atom order: (chain_id, residue_index, residue_name, name->atom idx)."""
        out: list[tuple[str, int, str, dict[str, int]]] = []
        key_to_slot: dict[tuple[str, int], int] = {}
        for i in range(self.n_atoms):
            key = (self.chain_ids[i], int(self.residue_indices[i]))
            if key not in key_to_slot:
                key_to_slot[key] = len(out)
                out.append((key[0], key[1], self.residue_names[i], {}))
            out[key_to_slot[key]][3][self.atom_names[i]] = i
        return out

    def chains(self) -> dict[str, list[tuple[int, str, dict[str, int]]]]:
        per_chain: dict[str, list[tuple[int, str, dict[str, int]]]] = {}
        for chain, resi, resn, amap in self.residues():
            per_chain.setdefault(chain, []).append((resi, resn, amap))
        return per_chain


# ---------------------------------------------------------------------------
# PDB-subset I/O (fixed-column ATOM records only)
# ---------------------------------------------------------------------------


def parse_pdb_subset(data) -> AtomicStructure:
    """Parse ATOM records from a PDB byte/text stream; everything else is ignored."""
    if isinstance(data, bytes):
        text = data.decode("ascii", errors="replace")
    else:
        text = data
    atoms: list[Atom] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.startswith("ATOM"):
            continue
        if len(line) < 54:
            raise ParseError(f"line {lineno}: ATOM record too short ({len(line)} columns)")
        try:
            name = line[12:16].strip()
            resname = line[17:20].strip()
            chain = line[21]
            resi = int(line[22:26])
            x = float(line[30:38])
            y = float(line[38:46])
            z = float(line[46:54])
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
        element = line[76:78].strip() if len(line) >= 78 else ""
        if not element:
            element = next((c for c in name if c.isalpha()), "C")
        atoms.append(Atom(element, name, chain, resi, resname, np.array([x, y, z])))
    if not atoms:
        raise EmptyStructureError("no ATOM records found")
    return AtomicStructure.from_atoms(atoms)


def write_pdb_subset(s: AtomicStructure) -> bytes:
    """Serialize as fixed-column ATOM records, coordinates at 3 decimals."""
    lines = []
    for serial, atom in enumerate(s.atoms(), start=1):
        if serial > 99999:
            raise FormatOverflowError("more than 99999 atoms")
        fields = []
        for v in atom.position:
            text = f"{v:8.3f}"
            if len(text) > 8:
                raise FormatOverflowError(
                    f"coordinate {v:.3f} does not fit the fixed 8.3 column format"
                )
            fields.append(text)
        name = atom.atom_name
        if len(atom.element) == 1 and len(name) < 4:
            name_field = f" {name:<3}"
        else:
            name_field = f"{name:<4}"
        lines.append(
            f"ATOM  {serial:>5} {name_field} {atom.residue_name:>3} {atom.chain_id}"
            f"{atom.residue_index:>4}    {fields[0]}{fields[1]}{fields[2]}"
            f"{1.0:6.2f}{0.0:6.2f}          {atom.element:>2}"
        )
    lines.append("END")
    return ("\n".join(lines) + "\n").encode("ascii")


# ---------------------------------------------------------------------------
# backbone windows
# ---------------------------------------------------------------------------


@dataclass
class BackboneWindowSet:
    """Sliding backbone windows and their within-window atom pairs.

    ``pair_i``/``pair_j`` are flattened global atom indices covering every
    (window, unordered pair) combination, ready for vectorized losses.
    """

    window_atom_indices: np.ndarray  # (M, 4*W)
    pair_i: np.ndarray  # (M * C(4W, 2),)
    pair_j: np.ndarray
    window_residues: int = 5

    @property
    def n_windows(self) -> int:
        return int(self.window_atom_indices.shape[0])

    @property
    def pairs_per_window(self) -> int:
        k = self.window_atom_indices.shape[1]
        return k * (k - 1) // 2


def backbone_windows(s: AtomicStructure, window_residues: int = 5) -> BackboneWindowSet:
    """All per-chain sliding windows of ``window_residues`` consecutive residues."""
    if window_residues < 1:
        raise InputError(f"window_residues must be >= 1, got {window_residues}")
    w = window_residues
    windows: list[np.ndarray] = []
    for chain, residues in s.chains().items():
        if len(residues) < w:
            continue
        bb_idx = []
        for resi, resn, amap in residues:
            missing = [a for a in BACKBONE_ATOMS if a not in amap]
            if missing:
                raise StructureCompletenessError(
                    f"chain {chain!r} residue {resi} lacks backbone atom(s) {missing}"
                )
            bb_idx.append([amap[a] for a in BACKBONE_ATOMS])
        bb_idx = np.asarray(bb_idx, dtype=np.intp)  # (n_res, 4)
        for m in range(len(residues) - w + 1):
            windows.append(bb_idx[m : m + w].reshape(-1))
    if windows:
        window_atoms = np.stack(windows)
    else:
        window_atoms = np.zeros((0, 4 * w), dtype=np.intp)
    local_pairs = np.array(list(combinations(range(4 * w), 2)), dtype=np.intp)
    if window_atoms.shape[0]:
        pair_i = window_atoms[:, local_pairs[:, 0]].reshape(-1)
        pair_j = window_atoms[:, local_pairs[:, 1]].reshape(-1)
    else:
        pair_i = np.zeros(0, dtype=np.intp)
        pair_j = np.zeros(0, dtype=np.intp)
    return BackboneWindowSet(window_atoms, pair_i, pair_j, window_residues=w)


# ---------------------------------------------------------------------------
# dihedral angles
# ---------------------------------------------------------------------------


def torsion_angles(positions: nm.Tensor, quads: np.ndarray) -> nm.Tensor:
    """Signed dihedral angles, in (-pi, pi], for (K, 4) atom index quadruples."""
    quads = np.asarray(quads, dtype=np.intp)
    p0 = nm.take_rows(positions, quads[:, 0])
    p1 = nm.take_rows(positions, quads[:, 1])
    p2 = nm.take_rows(positions, quads[:, 2])
    p3 = nm.take_rows(positions, quads[:, 3])
    b1 = nm.sub(p1, p0)
    b2 = nm.sub(p2, p1)
    b3 = nm.sub(p3, p2)
    n1 = nm.cross3(b1, b2)
    n2 = nm.cross3(b2, b3)
    u2 = nm.div(b2, nm.reshape(nm.norm_rows(b2), (-1, 1)))
    y = nm.dot_rows(nm.cross3(n1, n2), u2)
    x = nm.dot_rows(n1, n2)
    return nm.atan2(y, x)


@dataclass
class DihedralSet:
    """Per-residue phi/psi and chi1 torsions with residue bookkeeping.

    Angle values are tensors so the set stays differentiable when built from
    taped coordinates. ``residue_keys`` lists (chain_id, residue_index) in
    structure order; the ``*_residues`` arrays index into it.
    """

    residue_keys: list[tuple[str, int]]
    phi: nm.Tensor
    phi_residues: np.ndarray
    psi: nm.Tensor
    psi_residues: np.ndarray
    chi1: nm.Tensor
    chi1_residues: np.ndarray

    def _by_residue(self, values: nm.Tensor, residues: np.ndarray) -> np.ndarray:
        out = np.full(len(self.residue_keys), np.nan)
        out[residues] = values.data
        return out

    def phi_by_residue(self) -> np.ndarray:
        return self._by_residue(self.phi, self.phi_residues)

    def psi_by_residue(self) -> np.ndarray:
        return self._by_residue(self.psi, self.psi_residues)

    def chi1_by_residue(self) -> np.ndarray:
        return self._by_residue(self.chi1, self.chi1_residues)

    def rama_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Positions into phi/psi value arrays for residues having both."""
        phi_slot = {int(r): k for k, r in enumerate(self.phi_residues)}
        psi_slot = {int(r): k for k, r in enumerate(self.psi_residues)}
        common = sorted(set(phi_slot) & set(psi_slot))
        return (
            np.array([phi_slot[r] for r in common], dtype=np.intp),
            np.array([psi_slot[r] for r in common], dtype=np.intp),
        )


def dihedral_quadruples(s: AtomicStructure):
    """Atom index quadruples for phi, psi and chi1 plus residue slots."""
    residues = s.residues()
    keys = [(chain, resi) for chain, resi, _, _ in residues]
    by_chain: dict[str, list[int]] = {}
    for slot, (chain, _, _, _) in enumerate(residues):
        by_chain.setdefault(chain, []).append(slot)

    def need(slot: int, name: str) -> int:
        chain, resi, resn, amap = residues[slot]
        if name not in amap:
            raise StructureCompletenessError(
                f"chain {chain!r} residue {resi} lacks backbone atom(s) ['{name}']"
            )
        return amap[name]

    phi_q, phi_r, psi_q, psi_r, chi_q, chi_r = [], [], [], [], [], []
    for chain, slots in by_chain.items():
        for k, slot in enumerate(slots):
            _, _, _, amap = residues[slot]
            if k > 0:
                prev = slots[k - 1]
                phi_q.append([need(prev, "C"), need(slot, "N"), need(slot, "CA"), need(slot, "C")])
                phi_r.append(slot)
            if k < len(slots) - 1:
                nxt = slots[k + 1]
                psi_q.append([need(slot, "N"), need(slot, "CA"), need(slot, "C"), need(nxt, "N")])
                psi_r.append(slot)
            if "CB" in amap:
                gamma = next((g for g in _GAMMA_ATOMS if g in amap), None)
                if gamma is not None:
                    chi_q.append([need(slot, "N"), need(slot, "CA"), amap["CB"], amap[gamma]])
                    chi_r.append(slot)

    def arr(q, r):
        return (
            np.asarray(q, dtype=np.intp).reshape(-1, 4),
            np.asarray(r, dtype=np.intp),
        )

    return keys, arr(phi_q, phi_r), arr(psi_q, psi_r), arr(chi_q, chi_r)


def compute_dihedrals(s: AtomicStructure) -> DihedralSet:
    """phi/psi for every interior residue and chi1 where a gamma atom exists."""
    keys, (phi_q, phi_r), (psi_q, psi_r), (chi_q, chi_r) = dihedral_quadruples(s)
    empty = nm.Tensor(np.zeros(0))

    def angles(q):
        return torsion_angles(s.positions, q) if q.shape[0] else empty

    return DihedralSet(keys, angles(phi_q), phi_r, angles(psi_q), psi_r, angles(chi_q), chi_r)


# ---------------------------------------------------------------------------
# synthetic helices and deformations
# ---------------------------------------------------------------------------


def _nerf(a: np.ndarray, b: np.ndarray, c: np.ndarray, bond: float, angle_deg: float, torsion_deg: float) -> np.ndarray:
    """Place the next atom from three reference points and internal coordinates."""
    theta = math.radians(angle_deg)
    chi = math.radians(torsion_deg)
    b1 = b - a
    b2 = c - b
    u2 = b2 / np.linalg.norm(b2)
    n = np.cross(b1, b2)
    n /= np.linalg.norm(n)
    m = np.cross(n, u2)
    d = np.array(
        [-bond * math.cos(theta), bond * math.sin(theta) * math.cos(chi), bond * math.sin(theta) * math.sin(chi)]
    )
    return c + d[0] * u2 + d[1] * m + d[2] * n


def _place_cb(n: np.ndarray, ca: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Ideal L-configuration beta carbon from the N, CA, C triad."""
    u_n = (n - ca) / np.linalg.norm(n - ca)
    u_c = (c - ca) / np.linalg.norm(c - ca)
    bis = u_n + u_c
    bis /= np.linalg.norm(bis)
    perp = np.cross(u_c, u_n)
    perp /= np.linalg.norm(perp)
    half = math.acos(float(np.clip(np.dot(u_n, u_c), -1.0, 1.0))) / 2.0
    cos_tau = -math.cos(math.radians(ANGLE_N_CA_CB)) / math.cos(half)
    tau = math.acos(float(np.clip(cos_tau, -1.0, 1.0)))
    direction = -bis * math.cos(tau) + perp * math.sin(tau)
    return ca + BOND_CA_CB * direction


def _build_polyala(n_res: int, phi_deg: float, psi_deg: float) -> AtomicStructure:
    """Poly-alanine backbone from repeating ideal internal coordinates."""
    n0 = np.array([0.0, 0.0, 0.0])
    ca0 = np.array([BOND_N_CA, 0.0, 0.0])
    ang = math.radians(ANGLE_N_CA_C)
    c0 = ca0 + BOND_CA_C * np.array([math.cos(math.pi - ang), math.sin(math.pi - ang), 0.0])
    backbone = [(n0, ca0, c0)]
    for _ in range(1, n_res):
        n_prev, ca_prev, c_prev = backbone[-1]
        n_i = _nerf(n_prev, ca_prev, c_prev, BOND_C_N, ANGLE_CA_C_N, psi_deg)
        ca_i = _nerf(ca_prev, c_prev, n_i, BOND_N_CA, ANGLE_C_N_CA, OMEGA_TRANS)
        c_i = _nerf(c_prev, n_i, ca_i, BOND_CA_C, ANGLE_N_CA_C, phi_deg)
        backbone.append((n_i, ca_i, c_i))

    atoms: list[Atom] = []
    for i, (n_i, ca_i, c_i) in enumerate(backbone):
        o_i = _nerf(n_i, ca_i, c_i, BOND_C_O, ANGLE_CA_C_O, psi_deg + 180.0)
        cb_i = _place_cb(n_i, ca_i, c_i)
        resi = i + 1
        atoms.append(Atom("N", "N", "A", resi, "ALA", n_i))
        atoms.append(Atom("C", "CA", "A", resi, "ALA", ca_i))
        atoms.append(Atom("C", "C", "A", resi, "ALA", c_i))
        atoms.append(Atom("O", "O", "A", resi, "ALA", o_i))
        atoms.append(Atom("C", "CB", "A", resi, "ALA", cb_i))
    return AtomicStructure.from_atoms(atoms)


def _screw_parameters(s: AtomicStructure) -> tuple[float, float, np.ndarray, np.ndarray]:
    """(rise, twist_deg, axis, point) of the residue-to-residue screw transform."""
    res = s.residues()
    if len(res) < 2:
        raise InputError("need at least 2 residues to measure the helix transform")
    names = BACKBONE_ATOMS + ("CB",)
    a = np.stack([s.coords[res[0][3][n]] for n in names])
    b = np.stack([s.coords[res[1][3][n]] for n in names])
    rot, trans = _kabsch_transform(a, b)
    # rotation angle and axis from R
    cos_t = float(np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0))
    twist = math.acos(cos_t)
    w, v = np.linalg.eig(rot)
    axis = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    axis /= np.linalg.norm(axis)
    # fix axis sign so it matches the rotation sense
    probe = np.array([1.0, 0.0, 0.0])
    probe = probe - axis * np.dot(probe, axis)
    if np.linalg.norm(probe) < 1e-8:
        probe = np.array([0.0, 1.0, 0.0])
        probe = probe - axis * np.dot(probe, axis)
    sense = np.dot(np.cross(probe, rot @ probe), axis)
    if sense < 0:
        axis = -axis
    rise = float(np.dot(trans, axis))
    if rise < 0:
        axis, rise, twist = -axis, -rise, -twist
    # a point on the screw axis: solve (I - R) p = t_perp
    t_perp = trans - rise * axis
    mat = np.eye(3) - rot
    point = np.linalg.lstsq(mat + 1e-12 * np.eye(3), t_perp, rcond=None)[0]
    return rise, math.degrees(twist), axis, point


def _kabsch_transform(mobile: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Optimal rotation R and translation t with target ~ R @ mobile + t."""
    mc = mobile.mean(axis=0)
    tc = target.mean(axis=0)
    h = (mobile - mc).T @ (target - tc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    corr = np.diag([1.0, 1.0, d])
    rot = vt.T @ corr @ u.T
    return rot, tc - rot @ mc


def synth_helix(n_res: int, rise: float | None = None, twist: float | None = None) -> AtomicStructure:
    """Ideal poly-alanine helix, axis along +z, centroid at the origin.

    With default arguments the backbone uses the alpha-helix torsions
    (phi, psi) = (-57.8, -47.0) degrees; passing ``rise`` (angstrom per
    residue) and ``twist`` (degrees per residue) solves for the torsions
    that realize that screw geometry instead.
    """
    if n_res < 5:
        raise InputError(f"n_res must be >= 5, got {n_res}")
    if (rise is None) != (twist is None):
        raise InputError("rise and twist must be given together")
    if rise is None:
        phi, psi = ALPHA_PHI, ALPHA_PSI
    else:
        from scipy.optimize import root

        def residual(x):
            probe = _build_polyala(3, x[0], x[1])
            r, t, _, _ = _screw_parameters(probe)
            dt = (t - twist + 180.0) % 360.0 - 180.0
            return [r - rise, dt]

        sol = root(residual, x0=[ALPHA_PHI, ALPHA_PSI], tol=1e-12)
        if not sol.success or max(abs(np.asarray(residual(sol.x)))) > 1e-8:
            raise InputError(f"no torsion solution for rise={rise}, twist={twist}")
        phi, psi = float(sol.x[0]), float(sol.x[1])

    s = _build_polyala(n_res, phi, psi)
    _, _, axis, point = _screw_parameters(s)
    # rigidly reorient: screw axis -> +z, centroid -> origin
    z = axis
    ref = np.array([1.0, 0.0, 0.0])
    if abs(np.dot(ref, z)) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    x = ref - z * np.dot(ref, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.stack([x, y, z])  # rows: world axes of the new frame
    coords = (s.coords - point) @ rot.T
    coords -= coords.mean(axis=0)
    return s.with_positions(coords)


def _rotation_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(axis)
    if not np.isfinite(norm) or norm < 1e-12:
        raise InputError("rotation axis must be a nonzero finite vector")
    x, y, z = axis / norm
    c, s = math.cos(angle), math.sin(angle)
    t = 1.0 - c
    return np.array(
        [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]
    )


def hinge_deform(s: AtomicStructure, pivot_residue: int, axis, angle: float) -> AtomicStructure:
    """Rigidly rotate all residues after the pivot about an axis through its CA."""
    pivot_chain = None
    pivot_ca = None
    for chain, resi, _, amap in s.residues():
        if resi == pivot_residue:
            if "CA" not in amap:
                raise StructureCompletenessError(
                    f"chain {chain!r} residue {resi} lacks backbone atom(s) ['CA']"
                )
            pivot_chain = chain
            pivot_ca = s.coords[amap["CA"]]
            break
    if pivot_chain is None:
        raise InputError(f"pivot residue {pivot_residue} not found")
    rot = _rotation_matrix(axis, angle)
    moving = np.array(
        [c == pivot_chain and r > pivot_residue for c, r in zip(s.chain_ids, s.residue_indices)]
    )
    coords = s.coords.copy()
    coords[moving] = (coords[moving] - pivot_ca) @ rot.T + pivot_ca
    return s.with_positions(coords)


def kabsch_align(mobile: AtomicStructure, target: AtomicStructure) -> tuple[AtomicStructure, float]:
    """Least-RMSD rigid superposition of ``mobile`` onto ``target``."""
    if mobile.n_atoms != target.n_atoms:
        raise InputError(
            f"atom counts differ: {mobile.n_atoms} vs {target.n_atoms}"
        )
    if mobile.n_atoms < 3:
        raise DegenerateInputError("rigid superposition needs at least 3 atoms")
    rot, trans = _kabsch_transform(mobile.coords, target.coords)
    aligned = mobile.coords @ rot.T + trans
    rmsd = float(np.sqrt(np.mean(np.sum((aligned - target.coords) ** 2, axis=1))))
    return mobile.with_positions(aligned), rmsd


def coord_rmsd(a: AtomicStructure, b: AtomicStructure) -> float:
    """Plain shared-frame RMSD (no superposition)."""
    if a.n_atoms != b.n_atoms:
        raise InputError(f"atom counts differ: {a.n_atoms} vs {b.n_atoms}")
    return float(np.sqrt(np.mean(np.sum((a.coords - b.coords) ** 2, axis=1))))
