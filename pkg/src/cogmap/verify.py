"""Named invariant suites, runnable from the command line.

Each suite returns a :class:`SuiteResult` carrying its measured metrics, so
callers can apply their own tolerances on top of the built-in pass flag.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import cdif
from .mapping import (
    MapConfig,
    build_map,
    hash_voxels,
    quantize_offsets,
)
from .queries import query_appearance_order, query_object_distance
from .reference import naive_build_map, random_bundle, random_map_config
from .scene import SceneSpec, generate_scene
from .tensor import GradientTape, backward, sum_squares

GRAD_STEP = 1e-5
GRAD_TOLERANCE = 1e-4
ROPE_TOLERANCE = 1e-10


@dataclass
class SuiteResult:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = " ".join(f"{k}={v}" for k, v in self.metrics.items())
        return f"{status} {self.name} seconds={self.seconds:.3f} {extra}".rstrip()


def _timed(name: str, fn: Callable[[], tuple[bool, dict]]) -> SuiteResult:
    start = time.perf_counter()
    passed, metrics = fn()
    return SuiteResult(name, bool(passed), metrics, time.perf_counter() - start)


# ---------------------------------------------------------------------------


def quantize_exhaustive(grid_extent: int = 8) -> SuiteResult:
    def run():
        D = grid_extent
        u = np.array(list(itertools.product(range(D), repeat=3)), dtype=np.int64)
        h = hash_voxels(u, D)
        injective = len(np.unique(h)) == D ** 3
        formula = all(int(hx) == a * D * D + b * D + c for hx, (a, b, c) in zip(h, u))

        # an offset exactly on an edge belongs to the upper voxel
        edges_ok = True
        for r in (0.125, 0.25, 0.5, 1.0, 0.1, 0.04):
            for k in range(-D // 2, D // 2):
                edge = k * r
                if edge / r != k:
                    continue  # k * r does not divide back to k in floating point
                got, _ = quantize_offsets(np.array([edge, edge, edge]), r, D)
                edges_ok &= bool(np.all(got == k + D // 2))
                if r in (0.125, 0.25, 0.5, 1.0):
                    # power-of-two r: division is exact, so one ulp below lands in the lower voxel
                    below, _ = quantize_offsets(np.full(3, np.nextafter(edge, -np.inf)), r, D)
                    edges_ok &= bool(np.all(below == k - 1 + D // 2))
        _, oob_hi = quantize_offsets(np.array([D // 2 * 0.5, 0.0, 0.0]), 0.5, D)
        _, oob_lo = quantize_offsets(np.array([-(D // 2) * 0.5 - 1e-9, 0.0, 0.0]), 0.5, D)
        _, inside = quantize_offsets(np.array([-(D // 2) * 0.5, 0.0, 0.0]), 0.5, D)
        bounds_ok = (not oob_hi) and (not oob_lo) and bool(inside)
        return injective and formula and edges_ok and bounds_ok, {
            "keys": int(len(np.unique(h))), "edges_ok": edges_ok, "bounds_ok": bounds_ok}

    return _timed("quantize-exhaustive", run)


def aggregate_oracle(bundles: int = 200, seed: int = 0) -> SuiteResult:
    def run():
        rng = np.random.Generator(np.random.PCG64(seed))
        mismatches = compared = 0
        for _ in range(bundles):
            bundle = random_bundle(rng)
            cfg = random_map_config(rng)
            if not np.any(bundle.confidence > np.float32(cfg.conf_threshold)):
                continue
            compared += 1
            if not build_map(bundle, cfg).same_as(naive_build_map(bundle, cfg)):
                mismatches += 1
        return mismatches == 0, {"bundles": compared, "mismatches": mismatches}

    return _timed("aggregate-oracle", run)


def rope_identity(draws: int = 1000, seed: int = 0) -> SuiteResult:
    def run():
        rng = np.random.Generator(np.random.PCG64(seed))
        worst = 0.0
        for _ in range(draws):
            hd = int(rng.choice([2, 4, 6, 8, 12, 16]))
            cfg = cdif.Rope3dConfig(hd, frequency_base=float(rng.choice([100.0, 10000.0])),
                                    coordinate_scale=float(rng.choice([0.5, 1.0, 2.0])))
            q, k = rng.standard_normal((1, hd)), rng.standard_normal((1, hd))
            p1, p2, delta = rng.uniform(-3, 3, size=(3, 1, 3))
            before = float((cdif.rope3d_apply(q, p1, cfg) @ cdif.rope3d_apply(k, p2, cfg).T)[0, 0])
            after = float((cdif.rope3d_apply(q, p1 + delta, cfg) @ cdif.rope3d_apply(k, p2 + delta, cfg).T)[0, 0])
            worst = max(worst, abs(before - after))
        return worst <= ROPE_TOLERANCE, {"draws": draws, "max_abs_diff": f"{worst:.3e}"}

    return _timed("rope-identity", run)


def grad_check_instance(seed: int = 0, visual_dim: int = 8, spatial_dim: int = 4,
                        cells: int = 5, tokens: int = 4, heads: int = 2, layers: int = 1):
    """Seeded float64 instance: (params list, visual, visual coords, map, map coords)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params = [cdif.init_layer(visual_dim, spatial_dim, heads, rng, dtype=np.float64)
              for _ in range(layers)]
    visual = rng.standard_normal((tokens, visual_dim)) * 0.5
    vcoords = rng.uniform(-1, 1, size=(tokens, 3))
    cell_feats = rng.standard_normal((cells, visual_dim + spatial_dim)) * 0.5
    ccoords = rng.uniform(-1, 1, size=(cells, 3))
    return params, visual, vcoords, cell_feats, ccoords


def gradient_errors(params, visual, vcoords, cells, ccoords, step: float = GRAD_STEP):
    """Relative error between tape gradients and central differences, per array.

    The loss is the sum of squared fused outputs; the reference derivative is
    ``(L(theta + h) - L(theta - h)) / 2h`` for each scalar entry.
    """
    named = [(f"layer{i}.{n}", a) for i, p in enumerate(params) for n, a in p.named_arrays()]
    tape = GradientTape()
    out = cdif.cdif_forward(visual, vcoords, cells, ccoords, params, tape=tape)
    loss = sum_squares(out, tape)
    grads = backward(tape, loss, [a for _, a in named])

    errors = {}
    for (name, arr), g in zip(named, grads):
        worst = 0.0
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            plus = np.sum(cdif.cdif_forward(visual, vcoords, cells, ccoords, params) ** 2)
            arr[idx] = orig - step
            minus = np.sum(cdif.cdif_forward(visual, vcoords, cells, ccoords, params) ** 2)
            arr[idx] = orig
            numeric = float(plus - minus) / (2 * step)
            worst = max(worst, abs(g[idx] - numeric) / (abs(g[idx]) + 1e-8))
        errors[name] = worst
    return errors


def grad_check(seed: int = 0) -> SuiteResult:
    def run():
        errors = gradient_errors(*grad_check_instance(seed))
        worst = max(errors.values())
        return worst <= GRAD_TOLERANCE, {"arrays": len(errors), "max_rel_err": f"{worst:.3e}"}

    return _timed("grad-check", run)


def scene_query_metrics(scenes: int = 100, resolution: float = 0.04, **spec_overrides):
    cfg = MapConfig(resolution=resolution, conf_threshold=0.3, sim_threshold=0.5)
    correct, errors = 0, []
    for s in range(scenes):
        spec = SceneSpec(**{"object_count": 4, "feature_noise_sigma": 0.05,
                            "coordinate_noise_sigma": 0.01, "seed": s, **spec_overrides})
        bundle, truth = generate_scene(spec)
        cmap = build_map(bundle, cfg)
        order = query_appearance_order(cmap, truth.object_signatures)
        correct += order.answer == truth.appearance_order
        K = spec.object_count
        for a, b in itertools.combinations(range(K), 2):
            if a in order.unplaced or b in order.unplaced:
                errors.append(np.inf)
                continue
            d = query_object_distance(cmap, truth.object_signatures, a, b).answer
            errors.append(abs(d - truth.pairwise_center_distances[a, b]))
    return correct / scenes, float(np.mean(errors))


def scene_queries(scenes: int = 100) -> SuiteResult:
    r = 0.04

    def run():
        accuracy, mae = scene_query_metrics(scenes, r)
        return accuracy >= 0.95 and mae <= 2 * r, {
            "scenes": scenes, "order_accuracy": f"{accuracy:.3f}", "distance_mae": f"{mae:.4f}"}

    return _timed("scene-queries", run)


SUITES: dict[str, Callable[[], SuiteResult]] = {
    "quantize-exhaustive": quantize_exhaustive,
    "aggregate-oracle": aggregate_oracle,
    "rope-identity": rope_identity,
    "grad-check": grad_check,
    "scene-queries": scene_queries,
}
