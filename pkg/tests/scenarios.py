"""Small bundle builders shared by several test modules."""

import numpy as np

from cogmap.geometry import FrameBundle
from cogmap.scene import SceneSpec


def lattice_bundle(cells: int, dim: int = 4, seed: int = 0) -> FrameBundle:
    """One confident token per unit-lattice point; with r = 1 every token is its own cell."""
    side = int(np.ceil(cells ** (1 / 3)))
    grid = np.array(np.unravel_index(np.arange(cells), (side, side, side))).T.astype(np.float64)
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((cells, dim))
    return FrameBundle(feats[:, : dim // 2], feats[:, dim // 2:], grid + 0.25,
                       np.ones(cells), [0], cells)


def static_scene(frames: int, seed: int = 0) -> SceneSpec:
    """Zero-noise two-object scene whose surface points never change between frames."""
    return SceneSpec(object_count=2, frames=frames, feature_noise_sigma=0.0,
                     coordinate_noise_sigma=0.0, static_surface=True, seed=seed)


SHIFT = np.array([4.0, -8.0, 16.0])


def shifted(bundle: FrameBundle, shift=SHIFT) -> FrameBundle:
    return FrameBundle(bundle.visual, bundle.spatial, bundle.coords.astype(np.float64) + shift,
                       bundle.confidence, bundle.frame_timestamps, bundle.patches_per_frame)
