"""Ground-truth-checkable spatial questions answered from a built map.

The map stores no labels. Object identity is recovered by matching each
cell's visual slice against known object signatures supplied out of band.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .mapping import CognitiveMap

APPEARANCE_ORDER = "appearance-order"
OBJECT_DISTANCE = "object-distance"
VOXEL_COUNT = "voxel-count"
QUERY_KINDS = (APPEARANCE_ORDER, OBJECT_DISTANCE, VOXEL_COUNT)


@dataclass
class QueryResult:
    kind: str
    answer: object
    assignment: np.ndarray  # per-cell object id, -1 where unassignable
    cells_per_object: list[int] = field(default_factory=list)
    unplaced: list[int] = field(default_factory=list)

    def line(self) -> str:
        if isinstance(self.answer, (list, tuple)):
            ans = ",".join(str(a) for a in self.answer)
        elif isinstance(self.answer, float):
            ans = repr(self.answer)
        else:
            ans = str(self.answer)
        cells = ",".join(str(c) for c in self.cells_per_object)
        unplaced = ",".join(str(u) for u in self.unplaced) or "none"
        return f"kind={self.kind} answer={ans} cells_per_object={cells} unplaced={unplaced}"


def assign_cells(cmap: CognitiveMap, signatures: np.ndarray) -> np.ndarray:
    """Index of the best-matching signature (cosine, visual slice) for every cell.

    Ties go to the lowest object id. Cells whose visual slice is zero match
    nothing and get ``-1``.
    """
    signatures = np.asarray(signatures, dtype=np.float64)
    if signatures.ndim != 2 or signatures.shape[1] > cmap.feature_dim:
        raise ContractError("signatures must be (K, D_v) with D_v <= map feature width")
    if len(cmap) == 0:
        return np.zeros(0, dtype=np.int64)
    vis = cmap.features[:, : signatures.shape[1]].astype(np.float64)
    vis_norm = np.linalg.norm(vis, axis=1)
    sig_norm = np.linalg.norm(signatures, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = (vis @ signatures.T) / np.outer(vis_norm, np.where(sig_norm > 0, sig_norm, 1.0))
    out = np.argmax(cos, axis=1).astype(np.int64)
    out[vis_norm == 0] = -1
    return out


def _per_object(cmap, signatures):
    if len(cmap) == 0:
        raise ContractError("query on an empty map")
    assignment = assign_cells(cmap, signatures)
    K = len(signatures)
    counts = [int(np.count_nonzero(assignment == k)) for k in range(K)]
    unplaced = [k for k in range(K) if counts[k] == 0]
    return assignment, counts, unplaced


def query_appearance_order(cmap: CognitiveMap, signatures: np.ndarray) -> QueryResult:
    """Objects ordered by the earliest first-observed timestamp among their cells.

    Unplaced objects are left out of the ordering and listed separately.
    """
    if len(signatures) < 2:
        raise ContractError("appearance order needs at least two objects")
    assignment, counts, unplaced = _per_object(cmap, signatures)
    first = {k: int(cmap.timestamps[assignment == k].min())
             for k in range(len(signatures)) if counts[k]}
    order = sorted(first, key=lambda k: (first[k], k))
    return QueryResult(APPEARANCE_ORDER, order, assignment, counts, unplaced)


def object_centroid(cmap: CognitiveMap, assignment: np.ndarray, k: int) -> np.ndarray:
    """Occupancy-weighted mean of the cell coordinates assigned to object ``k``."""
    rows = assignment == k
    if not np.any(rows):
        raise ContractError(f"object {k} has no assigned cells")
    w = cmap.occupancy[rows].astype(np.float64)
    return (w[:, None] * cmap.coords[rows]).sum(axis=0) / w.sum()


def query_object_distance(cmap: CognitiveMap, signatures: np.ndarray, a: int, b: int) -> QueryResult:
    assignment, counts, unplaced = _per_object(cmap, signatures)
    ca = object_centroid(cmap, assignment, a)
    cb = ca if a == b else object_centroid(cmap, assignment, b)
    diff = ca - cb if a <= b else cb - ca
    dist = float(np.sqrt(np.dot(diff, diff)))
    return QueryResult(OBJECT_DISTANCE, dist, assignment, counts, unplaced)


def query_voxel_count(cmap: CognitiveMap, signatures: np.ndarray) -> QueryResult:
    """Number of occupied cells attributed to each object."""
    assignment, counts, unplaced = _per_object(cmap, signatures)
    return QueryResult(VOXEL_COUNT, list(counts), assignment, counts, unplaced)
