import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cogmap.cdif import (
    CdifLayerParams,
    FusionState,
    Rope3dConfig,
    attention_logits,
    cdif_forward,
    cdif_layer,
    gate_values,
    gated_update,
    init_layer,
    init_stack,
    map_reading,
    map_reasoning,
    rope3d_apply,
    split_axis_pairs,
)
from cogmap.errors import ConfigurationError
from cogmap.reference import naive_cdif_layer, naive_linear, naive_mlp, naive_rope
from cogmap.tensor import LinearParams, MlpParams
from cogmap.verify import gradient_errors, grad_check_instance


def _instance(rng, dv=6, ds=2, cells=3, tokens=4, heads=2, dtype=np.float64):
    p = init_layer(dv, ds, heads, rng, dtype=dtype)
    return (p, rng.standard_normal((tokens, dv)).astype(dtype), rng.uniform(-1, 1, (tokens, 3)),
            rng.standard_normal((cells, dv + ds)).astype(dtype), rng.uniform(-1, 1, (cells, 3)))


def test_axis_pair_split():
    assert split_axis_pairs(2) == (1, 0, 0)
    assert split_axis_pairs(8) == (2, 1, 1)
    assert split_axis_pairs(10) == (2, 2, 1)
    assert split_axis_pairs(12) == (2, 2, 2)
    with pytest.raises(ConfigurationError):
        split_axis_pairs(5)


def test_rope_zero_coordinates_is_identity(rng):
    x = rng.standard_normal((5, 12))
    out = rope3d_apply(x, np.zeros((5, 3)), Rope3dConfig(6))
    np.testing.assert_array_equal(out, x)


def test_rope_matches_pairwise_loop(rng):
    cfg = Rope3dConfig(10, frequency_base=100.0, coordinate_scale=0.5)
    x, c = rng.standard_normal((3, 20)), rng.uniform(-2, 2, (3, 3))
    np.testing.assert_allclose(rope3d_apply(x, c, cfg),
                               naive_rope(x, c, 10, cfg.axis_pairs, 100.0, 0.5), atol=1e-13)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 4, 6, 8, 16]))
def test_rope_preserves_norm_and_relative_identity(seed, hd):
    r = np.random.default_rng(seed)
    cfg = Rope3dConfig(hd)
    q, k = r.standard_normal((1, hd)), r.standard_normal((1, hd))
    p1, p2, delta = r.uniform(-5, 5, (3, 1, 3))
    rq = rope3d_apply(q, p1, cfg)
    assert abs(np.linalg.norm(rq) - np.linalg.norm(q)) <= 1e-6
    before = float((rq @ rope3d_apply(k, p2, cfg).T)[0, 0])
    after = float((rope3d_apply(q, p1 + delta, cfg) @ rope3d_apply(k, p2 + delta, cfg).T)[0, 0])
    assert abs(before - after) <= 1e-10


def test_logits_invariant_under_x_shift(rng):
    cfg = Rope3dConfig(8)
    q, k = rng.standard_normal((4, 16)), rng.standard_normal((5, 16))
    pq, pk = rng.uniform(-2, 2, (4, 3)), rng.uniform(-2, 2, (5, 3))
    dx = np.array([3.7, 0.0, 0.0])
    a = attention_logits(rope3d_apply(q, pq, cfg), rope3d_apply(k, pk, cfg), 2)
    b = attention_logits(rope3d_apply(q, pq + dx, cfg), rope3d_apply(k, pk + dx, cfg), 2)
    assert np.max(np.abs(a - b)) <= 1e-10


def test_layer_matches_naive_reference(rng):
    p, vis, vc, cells, cc = _instance(rng)
    state = cdif_layer(FusionState(vis, vc, cells, cc), p)
    want_vis, want_cells = naive_cdif_layer(vis, vc, cells, cc, p)
    np.testing.assert_allclose(state.map_tokens, want_cells, atol=1e-12)
    np.testing.assert_allclose(state.visual_tokens, want_vis, atol=1e-12)


def test_two_layers_match_unrolled_reference(rng):
    layers = [init_layer(4, 4, 2, rng, dtype=np.float64) for _ in range(2)]
    vis, vc = rng.standard_normal((3, 4)), rng.uniform(-1, 1, (3, 3))
    cells, cc = rng.standard_normal((4, 8)), rng.uniform(-1, 1, (4, 3))
    v1, c1 = naive_cdif_layer(vis, vc, cells, cc, layers[0])
    v2, _ = naive_cdif_layer(v1, vc, c1, cc, layers[1])
    np.testing.assert_allclose(cdif_forward(vis, vc, cells, cc, layers), v2, atol=1e-12)


def test_one_layer_is_the_three_steps(rng):
    p, vis, vc, cells, cc = _instance(rng)
    state = FusionState(vis, vc, cells, cc)
    new_map = map_reasoning(state, p)
    fused = map_reading(state, new_map, p)
    manual = gated_update(vis, fused, p)
    assert cdif_forward(vis, vc, cells, cc, [p]).tobytes() == manual.tobytes()


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("layers", [1, 2, 3])
def test_zero_init_is_identity(rng, dtype, layers):
    stack = init_stack(layers, 8, 4, heads=2, zero=True, dtype=dtype)
    vis = rng.standard_normal((5, 8)).astype(dtype)
    out = cdif_forward(vis, rng.standard_normal((5, 3)), rng.standard_normal((6, 12)).astype(dtype),
                       rng.standard_normal((6, 3)), stack)
    assert out.dtype == dtype and out.tobytes() == vis.tobytes()


def test_zero_ffn_is_identity_with_random_weights(rng):
    stack = init_stack(2, 8, 4, heads=2, seed=5, zero_ffn=True)
    vis = rng.standard_normal((5, 8)).astype(np.float32)
    out = cdif_forward(vis, rng.standard_normal((5, 3)), rng.standard_normal((6, 12)).astype(np.float32),
                       rng.standard_normal((6, 3)), stack)
    assert out.tobytes() == vis.tobytes()


def test_single_cell_map_reasoning_and_reading(rng):
    p = init_layer(4, 4, 2, zero=True, dtype=np.float64)
    cell = rng.standard_normal((1, 8))
    state = FusionState(rng.standard_normal((3, 4)), rng.standard_normal((3, 3)), cell, np.zeros((1, 3)))
    np.testing.assert_array_equal(map_reasoning(state, p), cell)

    p = init_layer(4, 4, 2, rng, dtype=np.float64)
    fused = map_reading(state, cell, p)
    want = naive_linear(naive_linear(cell, p.cross_v), p.cross_out)
    np.testing.assert_allclose(fused, np.tile(want, (3, 1)), atol=1e-12)


def test_identical_cells_give_identical_rows(rng):
    p = init_layer(4, 4, 2, rng, dtype=np.float64)
    cell, where = rng.standard_normal((1, 8)), rng.standard_normal((1, 3))
    state = FusionState(rng.standard_normal((2, 4)), rng.standard_normal((2, 3)),
                        np.vstack([cell, cell]), np.vstack([where, where]))
    out = map_reasoning(state, p)
    assert out[0].tobytes() == out[1].tobytes()


def test_gate_examples(rng):
    p = init_layer(4, 4, 2, rng, dtype=np.float64)
    p.gate_mlp = MlpParams.zeros(4, 4, np.float64)
    np.testing.assert_array_equal(gate_values(rng.standard_normal((3, 4)), p), np.full((3, 4), 0.5))
    p = init_layer(4, 4, 2, rng, dtype=np.float64)
    vis, fused = rng.standard_normal((3, 4)), rng.standard_normal((3, 8))
    gate = 1.0 / (1.0 + np.exp(-naive_mlp(vis, p.gate_mlp)))
    np.testing.assert_allclose(gated_update(vis, fused, p), vis + gate * naive_mlp(fused, p.ffn),
                               atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-20, 20))
def test_gate_strictly_inside_unit_interval(seed, scale):
    r = np.random.default_rng(seed)
    p = init_layer(4, 4, 2, r, dtype=np.float64)
    g = gate_values(r.standard_normal((3, 4)) * scale, p)
    assert np.all((g > 0) & (g < 1))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_map_permutation_equivariance(seed):
    r = np.random.default_rng(seed)
    p, vis, vc, cells, cc = _instance(r, cells=5)
    perm = r.permutation(5)
    a = FusionState(vis, vc, cells, cc)
    b = FusionState(vis, vc, cells[perm], cc[perm])
    ma, mb = map_reasoning(a, p), map_reasoning(b, p)
    np.testing.assert_allclose(mb, ma[perm], atol=1e-12)
    np.testing.assert_allclose(map_reading(b, mb, p), map_reading(a, ma, p), atol=1e-12)


def test_attention_rows_sum_to_one_at_both_sites(rng):
    p, vis, vc, cells, cc = _instance(rng, cells=6, dtype=np.float32)
    state = FusionState(vis, vc.astype(np.float32), cells, cc.astype(np.float32))
    new_map, w_self = map_reasoning(state, p.astype(np.float32), return_weights=True)
    _, w_cross = map_reading(state, new_map, p.astype(np.float32), return_weights=True)
    for w in (w_self, w_cross):
        assert np.max(np.abs(w.sum(axis=-1) - 1.0)) <= 1e-6


def test_attention_concentrates_on_co_located_cell(rng):
    # one head of width 8 gives every axis at least one rotation pair
    dv, ds, heads = 4, 4, 1
    dm = dv + ds
    zero_mlp = lambda i, o: MlpParams.zeros(i, o, np.float64)  # noqa: E731
    w = rng.standard_normal(dm)
    # queries and keys both collapse to w, so logits peak at zero displacement
    p = init_layer(dv, ds, heads, rng, dtype=np.float64, coordinate_scale=0.05, frequency_base=4.0)
    p.map_coord_mlp, p.visual_coord_mlp = zero_mlp(3, dm), zero_mlp(3, dv)
    p.self_out = LinearParams.zeros(dm, dm, np.float64)
    p.cross_q = LinearParams(np.zeros((dm, dv)), w)
    p.cross_k = LinearParams(np.zeros((dm, dm)), w.copy())
    cc = np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, -3.0, 0.0], [0.0, 0.0, 3.0], [2.0, 2.0, 2.0]])
    cells = np.tile(rng.standard_normal((1, dm)), (5, 1))
    for target in range(5):
        state = FusionState(rng.standard_normal((1, dv)), cc[target:target + 1], cells, cc)
        _, weights = map_reading(state, map_reasoning(state, p), p, return_weights=True)
        assert all(int(np.argmax(weights[h, 0])) == target for h in range(heads))


def test_shape_mismatch_is_configuration_error(rng):
    p = init_layer(4, 4, 2, rng)
    with pytest.raises(ConfigurationError):
        cdif_forward(np.zeros((2, 5), np.float32), np.zeros((2, 3)), np.zeros((3, 8), np.float32),
                     np.zeros((3, 3)), [p])
    with pytest.raises(ConfigurationError):
        init_layer(4, 3, heads=2)  # D_m = 7 is not divisible by 2 heads


def test_named_array_roundtrip(rng):
    p = init_layer(4, 4, 2, rng, map_residual=False)
    q = CdifLayerParams.from_named_arrays(dict(p.named_arrays()), heads=2, map_residual=False)
    assert [n for n, _ in p.named_arrays()] == [n for n, _ in q.named_arrays()]
    assert len(p.named_arrays()) == 2 * 8 + 4 * 4


def test_gradients_match_central_differences():
    errors = gradient_errors(*grad_check_instance(seed=7, visual_dim=6, spatial_dim=2, cells=3,
                                                  tokens=2, heads=2, layers=2))
    assert len(errors) == 2 * 32
    assert max(errors.values()) <= 1e-4
