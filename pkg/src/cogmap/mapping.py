"""Voxelized cognitive map construction.

Tokens with reliable geometry define a scene center; every token is expressed
relative to it, quantized into a D^3 grid of edge ``r``, keyed by a flat hash
and grouped. Each group is reduced to one cell after dropping observations
whose concatenated feature disagrees with the group consensus. Large maps are
thinned by uniform sampling.

All reductions run in float64 in ascending global-index order so that the
result does not depend on how tokens were presented.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigurationError, ContractError, NoConfidentGeometryError
from .geometry import FrameBundle
from .tensor import ordered_sum


@dataclass(frozen=True)
class MapConfig:
    grid_extent: int = 100
    resolution: float = 0.04
    conf_threshold: float = 0.3
    sim_threshold: float = 0.5
    max_voxels: int = 5000
    seed: int = 0
    insert_low_confidence: bool = False

    def __post_init__(self):
        if self.grid_extent < 2 or self.grid_extent % 2:
            raise ConfigurationError(f"grid_extent must be even and >= 2, got {self.grid_extent}")
        if not self.resolution > 0:
            raise ConfigurationError(f"resolution must be positive, got {self.resolution}")
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise ConfigurationError("conf_threshold must lie in [0, 1]")
        if not -1.0 <= self.sim_threshold <= 1.0:
            raise ConfigurationError("sim_threshold must lie in [-1, 1]")
        if self.max_voxels < 1:
            raise ConfigurationError("max_voxels must be >= 1")
        if self.seed < 0:
            raise ConfigurationError("seed must be nonnegative")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class VoxelCell:
    feature: np.ndarray
    coordinate: np.ndarray
    timestamp: int
    occupancy: int
    voxel_index: tuple[int, int, int]
    hash: int


@dataclass
class BuildStats:
    tokens_in: int = 0
    dropped_low_confidence: int = 0
    dropped_out_of_bounds: int = 0
    outliers_removed: int = 0
    inserted: int = 0
    bins: int = 0
    sampled: int = 0

    def line(self) -> str:
        return " ".join(f"{f.name}={getattr(self, f.name)}" for f in fields(self))


@dataclass
class CognitiveMap:
    """Scene center plus hash-sorted voxel cells, stored column-wise."""

    center: np.ndarray  # (3,) float64
    resolution: float
    grid_extent: int
    indices: np.ndarray  # (M, 3) int64
    hashes: np.ndarray  # (M,) int64, strictly increasing
    coords: np.ndarray  # (M, 3) float64, recentered frame
    timestamps: np.ndarray  # (M,) int64
    occupancy: np.ndarray  # (M,) int64
    features: np.ndarray  # (M, dim) float32
    config: MapConfig | None = None
    stats: BuildStats | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return int(self.hashes.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def cells(self) -> list[VoxelCell]:
        return [
            VoxelCell(self.features[j], self.coords[j], int(self.timestamps[j]),
                      int(self.occupancy[j]), tuple(int(x) for x in self.indices[j]),
                      int(self.hashes[j]))
            for j in range(len(self))
        ]

    def subset(self, rows: np.ndarray) -> "CognitiveMap":
        return CognitiveMap(self.center, self.resolution, self.grid_extent,
                            self.indices[rows], self.hashes[rows], self.coords[rows],
                            self.timestamps[rows], self.occupancy[rows], self.features[rows],
                            self.config, self.stats)

    def same_as(self, other: "CognitiveMap") -> bool:
        """Bit-level equality of everything that is serialized."""
        if (self.resolution != other.resolution or self.grid_extent != other.grid_extent
                or self.center.tobytes() != other.center.tobytes()):
            return False
        pairs = [(self.indices, other.indices), (self.hashes, other.hashes),
                 (self.coords, other.coords), (self.timestamps, other.timestamps),
                 (self.occupancy, other.occupancy), (self.features, other.features)]
        return all(a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()
                   for a, b in pairs)

    def check_invariants(self) -> None:
        D, r = self.grid_extent, self.resolution
        if np.any(np.diff(self.hashes) <= 0):
            raise ContractError("hashes are not strictly increasing")
        if np.any(self.occupancy < 1):
            raise ContractError("empty cell")
        if np.any((self.indices < 0) | (self.indices >= D)):
            raise ContractError("voxel index out of range")
        if not np.array_equal(hash_voxels(self.indices, D), self.hashes):
            raise ContractError("hash does not match voxel index")
        lo = (self.indices - D // 2) * r
        hi = (self.indices - D // 2 + 1) * r
        if np.any((self.coords < lo) | (self.coords > hi)):
            raise ContractError("cell coordinate outside its voxel")
        if self.config is not None and len(self) > self.config.max_voxels:
            raise ContractError("more cells than max_voxels")


# ---------------------------------------------------------------------------
# stages


def confident(confidence: np.ndarray, conf_threshold: float) -> np.ndarray:
    """Strict ``C > tau`` mask, with ``tau`` rounded to the confidences' own dtype.

    Bundles store confidence as float32, so a token written with confidence
    equal to the threshold holds ``float32(tau)``; comparing at that precision
    keeps such tokens on the excluded side of the boundary.
    """
    confidence = np.asarray(confidence)
    if not np.issubdtype(confidence.dtype, np.floating):
        confidence = confidence.astype(np.float64)
    return confidence > np.asarray(conf_threshold, dtype=np.float64).astype(confidence.dtype)


def _center_sums(coords: np.ndarray, confidence: np.ndarray, conf_threshold: float):
    valid = confident(confidence, conf_threshold)
    n = int(np.count_nonzero(valid))
    if n == 0:
        raise NoConfidentGeometryError(
            f"no token has confidence above {conf_threshold}; cannot place the scene center"
        )
    total = ordered_sum(np.asarray(coords, dtype=np.float64)[valid], axis=0)
    return total, n, valid


def compute_scene_center(coords: np.ndarray, confidence: np.ndarray,
                         conf_threshold: float) -> np.ndarray:
    """Mean coordinate over tokens with confidence strictly above the threshold."""
    total, n, _ = _center_sums(coords, confidence, conf_threshold)
    return total / n


def recenter(coords: np.ndarray, confidence: np.ndarray, conf_threshold: float):
    """Return ``(center, offsets, valid)`` with ``offsets = coords - center``.

    Offsets are evaluated as ``(n * P - S) / n`` where ``S`` is the sum of the
    ``n`` confident coordinates. For inputs whose sums are exact in float64
    (every float32 cloud of moderate size and dynamic range) a rigid shift of
    the cloud cancels before the single rounding step, so the offsets are
    bit-identical under translation.
    """
    total, n, valid = _center_sums(coords, confidence, conf_threshold)
    p = np.asarray(coords, dtype=np.float64)
    return total / n, (n * p - total) / n, valid


def quantize_offsets(offsets: np.ndarray, resolution: float, grid_extent: int):
    """Voxel indices ``floor(offset / r) + D/2`` and an all-axes in-bounds mask."""
    u = np.floor(np.asarray(offsets, dtype=np.float64) / resolution).astype(np.int64)
    u += grid_extent // 2
    in_bounds = np.all((u >= 0) & (u <= grid_extent - 1), axis=-1)
    return u, in_bounds


def quantize(point, center, resolution: float, grid_extent: int):
    """Quantize an absolute point against a scene center. Returns ``(u, in_bounds)``."""
    offset = np.asarray(point, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    u, ok = quantize_offsets(offset, resolution, grid_extent)
    if u.ndim == 1:
        return tuple(int(x) for x in u), bool(ok)
    return u, ok


def hash_voxels(u: np.ndarray, grid_extent: int) -> np.ndarray:
    u = np.asarray(u, dtype=np.int64)
    D = np.int64(grid_extent)
    if u.size and (u.min() < 0 or u.max() >= grid_extent):
        raise ContractError(f"voxel index outside [0, {grid_extent - 1}]")
    return u[..., 0] * D * D + u[..., 1] * D + u[..., 2]


def hash_voxel(u, grid_extent: int) -> int:
    return int(hash_voxels(np.asarray(u).reshape(1, 3), grid_extent)[0])


def _cosine_to_centroid(x: np.ndarray, mu: np.ndarray):
    """Row-wise cosine between ``x`` and ``mu`` plus the norm of ``mu``.

    Zero-norm ``x`` rows get cosine 0.
    """
    dot = np.zeros(x.shape[0])
    xx = np.zeros(x.shape[0])
    mm = np.zeros(x.shape[0])
    for k in range(x.shape[1]):
        dot = dot + x[:, k] * mu[:, k]
        xx = xx + x[:, k] * x[:, k]
        mm = mm + mu[:, k] * mu[:, k]
    nx, nm = np.sqrt(xx), np.sqrt(mm)
    denom = nx * nm
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0, dot / np.where(denom > 0, denom, 1.0), 0.0)
    return cos, nm


def _aggregate_sorted(features, offsets, timestamps, bin_ids, n_bins, sim_threshold):
    """Reduce tokens already sorted by (hash, global index).

    Returns per-bin (feature sums / counts etc.) and the refined mask.
    """
    dim = features.shape[1]
    counts = np.bincount(bin_ids, minlength=n_bins)
    sums = np.zeros((n_bins, dim))
    np.add.at(sums, bin_ids, features)
    mu = sums / counts[:, None]

    cos, mu_norm = _cosine_to_centroid(features, mu[bin_ids])
    keep = cos > sim_threshold
    kept_per_bin = np.bincount(bin_ids, weights=keep.astype(np.float64), minlength=n_bins)
    degenerate = (kept_per_bin == 0) | (mu_norm[np.searchsorted(bin_ids, np.arange(n_bins))] == 0)
    keep |= degenerate[bin_ids]

    ids = bin_ids[keep]
    occ = np.bincount(ids, minlength=n_bins)
    fsum = np.zeros((n_bins, dim))
    psum = np.zeros((n_bins, 3))
    np.add.at(fsum, ids, features[keep])
    np.add.at(psum, ids, offsets[keep])
    t = np.full(n_bins, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(t, ids, timestamps[keep])
    return fsum / occ[:, None], psum / occ[:, None], t, occ, keep


def aggregate_bin(features, offsets, timestamps, sim_threshold: float) -> VoxelCell:
    """Reduce one voxel's tokens (given in ascending global-index order) to a cell.

    The returned cell carries no voxel index or hash (both set to ``-1``
    placeholders); its feature is float64.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    offsets = np.atleast_2d(np.asarray(offsets, dtype=np.float64))
    timestamps = np.atleast_1d(np.asarray(timestamps, dtype=np.int64))
    if features.shape[0] == 0:
        raise ContractError("cannot aggregate an empty bin")
    if not features.shape[0] == offsets.shape[0] == timestamps.shape[0]:
        raise ContractError("bin arrays disagree in length")
    bins = np.zeros(features.shape[0], dtype=np.int64)
    v, p, t, occ, _ = _aggregate_sorted(features, offsets, timestamps, bins, 1, sim_threshold)
    return VoxelCell(v[0], p[0], int(t[0]), int(occ[0]), (-1, -1, -1), -1)


def sample_map(cmap: CognitiveMap, max_voxels: int, seed: int) -> CognitiveMap:
    """Uniform subset of ``max_voxels`` cells without replacement, re-sorted by hash.

    Draws come from ``numpy.random.Generator(PCG64(seed)).choice``; maps that
    already fit are returned unchanged.
    """
    if len(cmap) <= max_voxels:
        return cmap
    rng = np.random.Generator(np.random.PCG64(seed))
    rows = np.sort(rng.choice(len(cmap), size=max_voxels, replace=False))
    return cmap.subset(rows)


def build_map_from_tokens(coords, confidence, features, timestamps, global_index,
                          cfg: MapConfig) -> CognitiveMap:
    """Build a map from token columns in any order; ``global_index`` fixes the order."""
    global_index = np.asarray(global_index, dtype=np.int64)
    order = np.argsort(global_index, kind="stable")
    coords = np.asarray(coords)[order]
    confidence = np.asarray(confidence)[order]
    features = np.asarray(features, dtype=np.float64)[order]
    timestamps = np.asarray(timestamps, dtype=np.int64)[order]
    global_index = global_index[order]

    stats = BuildStats(tokens_in=int(coords.shape[0]))
    center, offsets, valid = recenter(coords, confidence, cfg.conf_threshold)
    insert = np.ones_like(valid) if cfg.insert_low_confidence else valid
    stats.dropped_low_confidence = int(np.count_nonzero(~insert))

    u, in_bounds = quantize_offsets(offsets, cfg.resolution, cfg.grid_extent)
    stats.dropped_out_of_bounds = int(np.count_nonzero(insert & ~in_bounds))
    sel = np.flatnonzero(insert & in_bounds)

    hashes = hash_voxels(u[sel], cfg.grid_extent)
    # group by hash; ties keep ascending global index
    grouping = np.lexsort((global_index[sel], hashes))
    sel, hashes = sel[grouping], hashes[grouping]
    uniq, first = np.unique(hashes, return_index=True)
    bin_ids = np.searchsorted(uniq, hashes)
    n_bins = int(uniq.shape[0])

    v, p, t, occ, keep = _aggregate_sorted(features[sel], offsets[sel], timestamps[sel],
                                           bin_ids, n_bins, cfg.sim_threshold)
    stats.inserted = int(np.count_nonzero(keep))
    stats.outliers_removed = int(sel.shape[0] - stats.inserted)
    stats.bins = n_bins

    cmap = CognitiveMap(
        center=center,
        resolution=float(cfg.resolution),
        grid_extent=int(cfg.grid_extent),
        indices=u[sel][first].reshape(-1, 3),
        hashes=uniq.astype(np.int64),
        coords=p.reshape(-1, 3),
        timestamps=t,
        occupancy=occ.astype(np.int64),
        features=v.astype(np.float32).reshape(n_bins, features.shape[1]),
        config=cfg,
        stats=stats,
    )
    cmap = sample_map(cmap, cfg.max_voxels, cfg.seed)
    stats.sampled = len(cmap)
    return cmap


def build_map(bundle: FrameBundle, cfg: MapConfig | None = None) -> CognitiveMap:
    cfg = cfg or MapConfig()
    return build_map_from_tokens(bundle.coords, bundle.confidence, bundle.features,
                                 bundle.timestamps, np.arange(len(bundle)), cfg)
