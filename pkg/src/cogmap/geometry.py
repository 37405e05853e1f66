"""Patch-level token containers and dense-to-patch pooling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ContractError, FormatError


@dataclass(frozen=True)
class PatchToken:
    visual_feature: np.ndarray
    spatial_feature: np.ndarray
    coordinate: np.ndarray
    confidence: float
    timestamp: int
    global_index: int


@dataclass
class FrameBundle:
    """N frames of M_v patch tokens, stored as column arrays.

    Token ``i`` belongs to frame ``i // patches_per_frame``; its global index
    is its position. All frame contents are float32 (the on-disk precision);
    ``frame_timestamps`` holds one integer per frame.
    """

    visual: np.ndarray  # (L, D_v) float32
    spatial: np.ndarray  # (L, D_s) float32
    coords: np.ndarray  # (L, 3) float32
    confidence: np.ndarray  # (L,) float32
    frame_timestamps: np.ndarray  # (N,) int64
    patches_per_frame: int

    def __post_init__(self):
        self.visual = np.ascontiguousarray(self.visual, dtype=np.float32)
        self.spatial = np.ascontiguousarray(self.spatial, dtype=np.float32)
        self.coords = np.ascontiguousarray(self.coords, dtype=np.float32)
        self.confidence = np.ascontiguousarray(self.confidence, dtype=np.float32)
        self.frame_timestamps = np.ascontiguousarray(self.frame_timestamps, dtype=np.int64)
        self.validate()

    def validate(self) -> None:
        n, m = self.frame_count, self.patches_per_frame
        L = n * m
        if m < 0:
            raise ContractError("patches_per_frame must be nonnegative")
        if self.visual.ndim != 2 or self.spatial.ndim != 2:
            raise ContractError("feature arrays must be 2-D")
        for name, arr in (("visual", self.visual), ("spatial", self.spatial),
                          ("coords", self.coords), ("confidence", self.confidence)):
            if arr.shape[0] != L:
                raise ContractError(f"{name} has {arr.shape[0]} rows, expected {L}")
        if self.coords.shape[1:] != (3,):
            raise ContractError("coords must be (L, 3)")
        if not np.all(np.isfinite(self.coords)):
            raise ContractError("non-finite coordinate")
        if np.any(~((self.confidence >= 0) & (self.confidence <= 1))):
            raise ContractError("confidence outside [0, 1]")
        if np.any(self.frame_timestamps < 0) or np.any(np.diff(self.frame_timestamps) < 0):
            raise ContractError("frame timestamps must be nonnegative and nondecreasing")

    @property
    def frame_count(self) -> int:
        return int(self.frame_timestamps.shape[0])

    @property
    def visual_dim(self) -> int:
        return int(self.visual.shape[1])

    @property
    def spatial_dim(self) -> int:
        return int(self.spatial.shape[1])

    def __len__(self) -> int:
        return self.frame_count * self.patches_per_frame

    @property
    def timestamps(self) -> np.ndarray:
        """Per-token timestamps."""
        return np.repeat(self.frame_timestamps, self.patches_per_frame)

    @property
    def features(self) -> np.ndarray:
        """Concatenated [visual; spatial] features as float64, shape (L, D_v + D_s)."""
        return np.concatenate([self.visual, self.spatial], axis=1).astype(np.float64)

    def __iter__(self) -> Iterator[PatchToken]:
        ts = self.timestamps
        for i in range(len(self)):
            yield PatchToken(self.visual[i], self.spatial[i], self.coords[i],
                             float(self.confidence[i]), int(ts[i]), i)

    @classmethod
    def empty(cls, visual_dim: int, spatial_dim: int, patches_per_frame: int = 0) -> "FrameBundle":
        return cls(np.zeros((0, visual_dim)), np.zeros((0, spatial_dim)), np.zeros((0, 3)),
                   np.zeros(0), np.zeros(0, dtype=np.int64), patches_per_frame)

    def same_as(self, other: "FrameBundle") -> bool:
        return (self.patches_per_frame == other.patches_per_frame
                and np.array_equal(self.frame_timestamps, other.frame_timestamps)
                and all(a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in (
                    (self.visual, other.visual), (self.spatial, other.spatial),
                    (self.coords, other.coords), (self.confidence, other.confidence))))


@dataclass
class DenseFrame:
    point_map: np.ndarray  # (H, W, 3)
    confidence_map: np.ndarray  # (H, W)
    patch_size: int


def pool_dense_to_patches(frame: DenseFrame) -> tuple[np.ndarray, np.ndarray]:
    """Average-pool a per-pixel point map and confidence map to patch resolution.

    Returns ``(coords, confidence)`` with shapes ``(P, 3)`` and ``(P,)`` where
    ``P = (H / patch_size) * (W / patch_size)``, patches in raster order. Each
    block mean is an unweighted float64 mean accumulated in raster order
    within the block.
    """
    pts = np.asarray(frame.point_map, dtype=np.float64)
    conf = np.asarray(frame.confidence_map, dtype=np.float64)
    s = int(frame.patch_size)
    if pts.ndim != 3 or pts.shape[2] != 3 or conf.shape != pts.shape[:2]:
        raise FormatError(f"point map {pts.shape} and confidence map {conf.shape} disagree")
    H, W = conf.shape
    if s <= 0 or H % s or W % s:
        raise FormatError(f"patch size {s} does not divide frame {H}x{W}")
    ph, pw = H // s, W // s
    # (ph, pw, s*s, ...) with each block's pixels in raster order
    blocks = pts.reshape(ph, s, pw, s, 3).transpose(0, 2, 1, 3, 4).reshape(ph * pw, s * s, 3)
    cblocks = conf.reshape(ph, s, pw, s).transpose(0, 2, 1, 3).reshape(ph * pw, s * s)
    n = float(s * s)
    coords = np.cumsum(blocks, axis=1)[:, -1] / n
    confidence = np.cumsum(cblocks, axis=1)[:, -1] / n
    return coords, confidence
