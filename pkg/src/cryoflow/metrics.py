"""Map-model fit metrics and ensemble-level evaluation.

The four cross-correlation variants are simplified, fully pinned analogs of
the usual real-space fit scores: each restricts the voxel-wise Pearson
correlation between the map and the rendered model to a different mask.
Ensemble comparisons use sqrt(1 - CC_volume) as the pairwise distance and
reduce it to precision, recall and an exact Wasserstein-2 distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .biomol import AtomicStructure
from .errors import DegenerateMetricError, DimensionError, InputError
from .forward_model import RenderSpec, render
from .volume import Volume, atom_mask, percentile_mask

NCC_EPS = 1e-8

CC_MASK_RADIUS = 3.0  # angstrom around atoms for CC_mask
CC_VOLUME_SUPPORT = 0.10  # fraction of the render max defining model support
CC_PEAKS_PERCENTILE = 90.0


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    num = float((da * db).sum())
    den = math.sqrt(float((da * da).sum()) + NCC_EPS) * math.sqrt(
        float((db * db).sum()) + NCC_EPS
    )
    return num / (den + NCC_EPS)


def masked_ncc(a: Volume, b: Volume, mask: np.ndarray, metric_name: str) -> float:
    if a.shape != b.shape or mask.shape != a.shape:
        raise DimensionError(
            f"incongruent grids for {metric_name}: {a.shape}, {b.shape}, mask {mask.shape}"
        )
    if not mask.any():
        raise DegenerateMetricError(f"{metric_name}: empty voxel selection")
    return _pearson(a.values[mask], b.values[mask])


@dataclass
class CcReport:
    cc_box: float
    cc_mask: float
    cc_volume: float
    cc_peaks: float

    def as_dict(self) -> dict[str, float]:
        return {
            "cc_box": self.cc_box,
            "cc_mask": self.cc_mask,
            "cc_volume": self.cc_volume,
            "cc_peaks": self.cc_peaks,
        }


def cc_suite(map_volume: Volume, model: AtomicStructure, spec: RenderSpec) -> CcReport:
    """All four cross-correlation variants between a map and a rendered model."""
    rendered = render(model, spec)
    if rendered.shape != map_volume.shape:
        raise DimensionError(
            f"render grid {rendered.shape} does not match map {map_volume.shape}"
        )
    full = np.ones(map_volume.shape, dtype=bool)
    cc_box = masked_ncc(map_volume, rendered, full, "cc_box")
    near = atom_mask(map_volume, model, CC_MASK_RADIUS).mask
    cc_mask = masked_ncc(map_volume, rendered, near, "cc_mask")
    support = rendered.values >= CC_VOLUME_SUPPORT * rendered.values.max()
    cc_volume = masked_ncc(map_volume, rendered, support, "cc_volume")
    peaks = (
        percentile_mask(map_volume, CC_PEAKS_PERCENTILE)
        | percentile_mask(rendered, CC_PEAKS_PERCENTILE)
    ).mask
    cc_peaks = masked_ncc(map_volume, rendered, peaks, "cc_peaks")
    return CcReport(cc_box, cc_mask, cc_volume, cc_peaks)


def cc_volume_only(map_volume: Volume, rendered: Volume) -> float:
    support = rendered.values >= CC_VOLUME_SUPPORT * rendered.values.max()
    return masked_ncc(map_volume, rendered, support, "cc_volume")


def ensemble_distance(s: AtomicStructure, m: Volume, spec: RenderSpec) -> float:
    """sqrt(1 - CC_volume), clipped at zero."""
    rendered = render(s, spec)
    return math.sqrt(max(0.0, 1.0 - cc_volume_only(m, rendered)))


def distance_matrix(
    samples: Sequence[AtomicStructure], refs: Sequence[Volume], spec: RenderSpec
) -> np.ndarray:
    """(n_samples, n_refs) matrix of sqrt(1 - CC_volume) distances."""
    if not samples or not refs:
        raise InputError("need non-empty sample and reference sets")
    out = np.zeros((len(samples), len(refs)))
    for i, s in enumerate(samples):
        rendered = render(s, spec)
        for j, m in enumerate(refs):
            out[i, j] = math.sqrt(max(0.0, 1.0 - cc_volume_only(m, rendered)))
    return out


def precision_recall_from_matrix(d: np.ndarray) -> tuple[float, float]:
    """Max-similarity means: precision over samples, recall over references."""
    if d.ndim != 2 or d.size == 0:
        raise InputError(f"distance matrix must be non-empty 2-D, got shape {d.shape}")
    sim = 1.0 - d
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    return precision, recall


def precision_recall(
    samples: Sequence[AtomicStructure], refs: Sequence[Volume], spec: RenderSpec
) -> tuple[float, float]:
    return precision_recall_from_matrix(distance_matrix(samples, refs, spec))


def wasserstein2_from_matrix(d: np.ndarray) -> float:
    """Exact W2 between uniform distributions with pairwise distances ``d``.

    Scales both uniform weight vectors to integers via lcm(|S|, |M|), expands
    to unit supplies/demands, and solves the resulting assignment problem
    exactly; by integrality of the transportation polytope this equals the
    optimal coupling cost.
    """
    if d.ndim != 2 or d.size == 0:
        raise InputError(f"distance matrix must be non-empty 2-D, got shape {d.shape}")
    ns, nr = d.shape
    scale = math.lcm(ns, nr)
    if scale > 20000:
        raise InputError(f"lcm({ns}, {nr}) = {scale} is too large for exact expansion")
    rows = np.repeat(np.arange(ns), scale // ns)
    cols = np.repeat(np.arange(nr), scale // nr)
    cost = (d**2)[np.ix_(rows, cols)]
    ri, cj = linear_sum_assignment(cost)
    total = float(cost[ri, cj].sum()) / scale
    return math.sqrt(max(0.0, total))


def wasserstein2(
    samples: Sequence[AtomicStructure], refs: Sequence[Volume], spec: RenderSpec
) -> float:
    return wasserstein2_from_matrix(distance_matrix(samples, refs, spec))


@dataclass
class EnsembleReport:
    """Pairwise distances plus precision/recall/W2 for a generated set vs maps."""

    distance_matrix: np.ndarray
    precision: float
    recall: float
    w2: float

    @classmethod
    def evaluate(
        cls,
        samples: Sequence[AtomicStructure],
        refs: Sequence[Volume],
        spec: RenderSpec,
    ) -> "EnsembleReport":
        d = distance_matrix(samples, refs, spec)
        precision, recall = precision_recall_from_matrix(d)
        return cls(d, precision, recall, wasserstein2_from_matrix(d))

    def as_document(self) -> dict:
        return {
            "kind": "ensemble_report",
            "n_samples": int(self.distance_matrix.shape[0]),
            "n_references": int(self.distance_matrix.shape[1]),
            "distance_matrix": [[float(x) for x in row] for row in self.distance_matrix],
            "precision": float(self.precision),
            "recall": float(self.recall),
            "w2": float(self.w2),
        }
