import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cogmap.errors import ConfigurationError
from cogmap.scene import (
    OBJECT_RADIUS,
    SceneSpec,
    generate_scene,
    object_signature,
    object_signatures,
    stagger_frames,
)


def test_signature_deterministic_and_unit():
    a, b = object_signature(3, 32, seed=11), object_signature(3, 32, seed=11)
    assert a.tobytes() == b.tobytes()
    assert abs(np.linalg.norm(a) - 1.0) <= 1e-6
    assert not np.array_equal(a, object_signature(4, 32, seed=11))


def test_signatures_are_decorrelated():
    sig = object_signatures(8, 32, seed=0)
    cos = np.abs(sig @ sig.T)[np.triu_indices(8, 1)]
    assert cos.max() < 0.9
    np.testing.assert_allclose(np.linalg.norm(sig, axis=1), 1.0, atol=1e-6)


def test_zero_noise_tokens_on_surface_with_exact_features():
    spec = SceneSpec(object_count=2, points_per_object_per_frame=1, frames=2,
                     feature_noise_sigma=0.0, coordinate_noise_sigma=0.0, seed=4)
    bundle, truth = generate_scene(spec)
    live = truth.token_object >= 0
    k = truth.token_object[live]
    dist = np.linalg.norm(bundle.coords[live].astype(np.float64) - truth.object_centers[k], axis=1)
    assert np.all(np.abs(dist - OBJECT_RADIUS) <= 1e-6)
    assert np.all(dist <= OBJECT_RADIUS)
    np.testing.assert_array_equal(bundle.visual[live], truth.object_signatures[k].astype(np.float32))
    np.testing.assert_array_equal(bundle.spatial[live], truth.spatial_signatures[k].astype(np.float32))
    assert np.all(bundle.confidence[live] == 1.0)
    assert np.all(bundle.confidence[~live] == 0.0)


def test_first_visible_is_permutation_of_stagger_set():
    for seed in range(5):
        spec = SceneSpec(seed=seed, frames=10)
        _, truth = generate_scene(spec)
        assert sorted(truth.first_visible_frame.tolist()) == stagger_frames(4, 10).tolist()
    assert stagger_frames(4, 8).tolist() == [0, 2, 4, 6]


def test_pairwise_distances_match_centers():
    _, truth = generate_scene(SceneSpec(seed=2, object_count=5, frames=5))
    for a, b in itertools.combinations(range(5), 2):
        d = np.sqrt(np.sum((truth.object_centers[a] - truth.object_centers[b]) ** 2))
        assert truth.pairwise_center_distances[a, b] == pytest.approx(d, abs=1e-15)
        assert truth.pairwise_center_distances[a, b] >= 0.5


def test_token_count_matches_header():
    bundle, _ = generate_scene(SceneSpec(frames=6, object_count=3, points_per_object_per_frame=5))
    assert bundle.patches_per_frame == 15
    assert len(bundle) == 6 * 15


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        SceneSpec(object_count=1)
    with pytest.raises(ConfigurationError):
        SceneSpec(object_count=4, frames=3)
    with pytest.raises(ConfigurationError):
        SceneSpec(feature_noise_sigma=-1.0)


scene_specs = st.builds(
    SceneSpec,
    object_count=st.integers(2, 5),
    points_per_object_per_frame=st.integers(1, 6),
    frames=st.integers(5, 9),
    seed=st.integers(0, 2**31),
    visual_dim=st.integers(2, 8),
    spatial_dim=st.integers(2, 4),
    static_surface=st.booleans(),
)


@settings(max_examples=25, deadline=None)
@given(scene_specs)
def test_generation_is_bit_identical(spec):
    b1, t1 = generate_scene(spec)
    b2, t2 = generate_scene(spec)
    assert b1.same_as(b2)
    for name in ("object_centers", "object_signatures", "spatial_signatures",
                 "first_visible_frame", "pairwise_center_distances", "token_object"):
        assert getattr(t1, name).tobytes() == getattr(t2, name).tobytes()


@settings(max_examples=25, deadline=None)
@given(scene_specs)
def test_zero_noise_radius_and_timestamp_bounds(spec):
    from dataclasses import replace
    spec = replace(spec, feature_noise_sigma=0.0, coordinate_noise_sigma=0.0)
    bundle, truth = generate_scene(spec)
    live = truth.token_object >= 0
    k = truth.token_object[live]
    dist = np.linalg.norm(bundle.coords[live].astype(np.float64) - truth.object_centers[k], axis=1)
    assert np.all(dist <= OBJECT_RADIUS + 1e-9)
    assert np.all(bundle.timestamps[live] >= truth.first_visible_frame[k])
    # an object contributes tokens in every frame from its first appearance on
    frames = np.repeat(np.arange(spec.frames), bundle.patches_per_frame)
    for obj in range(spec.object_count):
        assert frames[truth.token_object == obj].min() == truth.first_visible_frame[obj]
