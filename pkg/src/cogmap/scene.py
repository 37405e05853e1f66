"""Procedural scenes with known answers.

Objects are spheres of radius 0.15 with fixed feature signatures. Each object
becomes visible at a scheduled frame and from then on emits a fixed number of
noisy surface tokens per frame. Frames always carry one token slot per
(object, sample); slots of objects that are not yet visible hold placeholder
tokens with zero features and zero confidence, so every frame has the same
width.

Random streams
--------------
All randomness is drawn from numpy's PCG64 bit generator seeded through
``SeedSequence(seed, spawn_key=key)``. Keys used:

* ``(0, object, attempt)`` visual signature
* ``(1, object, attempt)`` spatial signature
* ``(2,)`` object placement
* ``(3,)`` visibility schedule permutation
* ``(4, frame, object)`` per-frame surface samples and noise
* ``(5, object)`` surface samples reused every frame when ``static_surface``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigurationError, ContractError, GenerationError
from .geometry import FrameBundle

OBJECT_RADIUS = 0.15
MIN_SEPARATION = 0.5
MAX_PLACEMENT_ATTEMPTS = 1000
MAX_SIGNATURE_ATTEMPTS = 100
SIGNATURE_MAX_ABS_COSINE = 0.9


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class SceneSpec:
    object_count: int = 4
    scene_extent: float = 1.2
    points_per_object_per_frame: int = 16
    feature_noise_sigma: float = 0.05
    coordinate_noise_sigma: float = 0.01
    frames: int = 8
    seed: int = 0
    visual_dim: int = 16
    spatial_dim: int = 8
    static_surface: bool = False

    def __post_init__(self):
        if self.object_count < 2:
            raise ConfigurationError("a scene needs at least two objects")
        if self.feature_noise_sigma < 0 or self.coordinate_noise_sigma < 0:
            raise ConfigurationError("noise sigmas must be nonnegative")
        if not self.scene_extent > 0:
            raise ConfigurationError("scene_extent must be positive")
        if self.points_per_object_per_frame < 1:
            raise ConfigurationError("points_per_object_per_frame must be >= 1")
        if self.frames < self.object_count:
            raise ConfigurationError(
                f"{self.frames} frames cannot stagger {self.object_count} distinct first appearances"
            )
        if self.visual_dim < 2 or self.spatial_dim < 2:
            raise ConfigurationError("feature dims must be >= 2")
        if self.seed < 0:
            raise ConfigurationError("seed must be nonnegative")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class GroundTruth:
    object_centers: np.ndarray  # (K, 3) float64
    object_signatures: np.ndarray  # (K, D_v) float64, unit norm
    spatial_signatures: np.ndarray  # (K, D_s) float64, unit norm
    first_visible_frame: np.ndarray  # (K,) int64, distinct
    pairwise_center_distances: np.ndarray  # (K, K)
    token_object: np.ndarray  # (L,) int64, -1 for placeholder slots

    @property
    def appearance_order(self) -> list[int]:
        return [int(k) for k in np.argsort(self.first_visible_frame, kind="stable")]


def object_signature(object_id: int, dim: int, seed: int, attempt: int = 0,
                     kind: int = 0) -> np.ndarray:
    """Deterministic unit vector for one object (one draw; see :func:`object_signatures`)."""
    if dim < 2:
        raise ContractError("signature dim must be >= 2")
    v = stream(seed, kind, object_id, attempt).standard_normal(dim)
    return v / math.sqrt(float(np.dot(v, v)))


def object_signatures(count: int, dim: int, seed: int, kind: int = 0) -> np.ndarray:
    """Signatures for objects ``0..count-1``.

    An object's vector is redrawn (next ``attempt``) while its absolute cosine
    to any earlier object reaches 0.9. After a bounded number of redraws the
    least-correlated draw is kept, which only happens for very small dims.
    """
    out = np.zeros((count, dim))
    for k in range(count):
        best, best_cos = None, math.inf
        for attempt in range(MAX_SIGNATURE_ATTEMPTS):
            v = object_signature(k, dim, seed, attempt, kind)
            worst = float(np.max(np.abs(out[:k] @ v))) if k else 0.0
            if worst < best_cos:
                best, best_cos = v, worst
            if worst < SIGNATURE_MAX_ABS_COSINE:
                break
        out[k] = best
    return out


def place_objects(count: int, extent: float, seed: int) -> np.ndarray:
    rng = stream(seed, 2)
    centers: list[np.ndarray] = []
    for k in range(count):
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            c = rng.uniform(-extent, extent, size=3)
            if all(np.linalg.norm(c - o) >= MIN_SEPARATION for o in centers):
                centers.append(c)
                break
        else:
            raise GenerationError(
                f"could not place object {k} with separation {MIN_SEPARATION} "
                f"inside extent {extent} after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )
    return np.array(centers)


def stagger_frames(count: int, frames: int) -> np.ndarray:
    """First-appearance frames spread evenly over the clip: ``floor(k * N / K)``."""
    return np.array([k * frames // count for k in range(count)], dtype=np.int64)


def _surface_points(center: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """float32 points on the sphere around ``center``, never outside its radius."""
    d = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    pts = (center + OBJECT_RADIUS * d).astype(np.float32)
    scale = np.ones(len(d))
    outside = np.linalg.norm(pts.astype(np.float64) - center, axis=1) > OBJECT_RADIUS
    while np.any(outside):
        # float32 rounding pushed a point past the surface; pull it in by a few ulps
        scale[outside] *= 1.0 - 2.0 ** -22
        pts[outside] = (center + OBJECT_RADIUS * scale[outside, None] * d[outside]).astype(np.float32)
        outside = np.linalg.norm(pts.astype(np.float64) - center, axis=1) > OBJECT_RADIUS
    return pts


def generate_scene(spec: SceneSpec) -> tuple[FrameBundle, GroundTruth]:
    K, N, P = spec.object_count, spec.frames, spec.points_per_object_per_frame
    Dv, Ds = spec.visual_dim, spec.spatial_dim
    sig_v = object_signatures(K, Dv, spec.seed, kind=0)
    sig_s = object_signatures(K, Ds, spec.seed, kind=1)
    centers = place_objects(K, spec.scene_extent, spec.seed)
    first = stagger_frames(K, N)[stream(spec.seed, 3).permutation(K)]

    M = K * P
    L = N * M
    visual = np.zeros((L, Dv), dtype=np.float32)
    spatial = np.zeros((L, Ds), dtype=np.float32)
    coords = np.zeros((L, 3), dtype=np.float32)
    conf = np.zeros(L, dtype=np.float32)
    owner = np.full(L, -1, dtype=np.int64)

    static_dirs = None
    if spec.static_surface:
        static_dirs = [stream(spec.seed, 5, k).standard_normal((P, 3)) for k in range(K)]

    sigma_c, sigma_f = spec.coordinate_noise_sigma, spec.feature_noise_sigma
    for f in range(N):
        for k in range(K):
            rows = slice(f * M + k * P, f * M + (k + 1) * P)
            if f < first[k]:
                coords[rows] = centers[k].astype(np.float32)
                continue
            rng = stream(spec.seed, 4, f, k)
            dirs = rng.standard_normal((P, 3)) if static_dirs is None else static_dirs[k]
            surface = _surface_points(centers[k], dirs)
            noise = rng.standard_normal((P, 3)) * sigma_c
            if sigma_c > 0:
                coords[rows] = (surface.astype(np.float64) + noise).astype(np.float32)
                c = np.exp(-np.linalg.norm(noise, axis=1) / sigma_c)
            else:
                coords[rows] = surface
                c = np.ones(P)
            conf[rows] = np.clip(c, 0.0, 1.0)

            if sigma_f > 0:
                v = sig_v[k] + rng.standard_normal((P, Dv)) * sigma_f
                visual[rows] = v / np.linalg.norm(v, axis=1, keepdims=True)
                spatial[rows] = sig_s[k] + rng.standard_normal((P, Ds)) * sigma_f
            else:
                visual[rows] = sig_v[k]
                spatial[rows] = sig_s[k]
            owner[rows] = k

    diff = centers[:, None, :] - centers[None, :, :]
    truth = GroundTruth(
        object_centers=centers,
        object_signatures=sig_v,
        spatial_signatures=sig_s,
        first_visible_frame=first.astype(np.int64),
        pairwise_center_distances=np.sqrt(np.sum(diff * diff, axis=-1)),
        token_object=owner,
    )
    bundle = FrameBundle(visual, spatial, coords, conf, np.arange(N, dtype=np.int64), M)
    return bundle, truth
