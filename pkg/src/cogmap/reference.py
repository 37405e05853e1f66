"""Slow, literal reference implementations used as oracles.

Nothing here shares code with the fast paths: maps are built with Python
floats and explicit loops, attention with plain ``@`` per head. Tests and the
``verify`` command compare the library against these.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NoConfidentGeometryError
from .geometry import FrameBundle
from .mapping import CognitiveMap, MapConfig


def naive_build_map(bundle: FrameBundle, cfg: MapConfig) -> CognitiveMap:
    """Materialize every stage: filter, recenter, quantize, sort, per-bin loop."""
    coords = [[float(v) for v in row] for row in bundle.coords]
    conf = [float(c) for c in bundle.confidence]
    feats = [[float(v) for v in row] for row in np.concatenate([bundle.visual, bundle.spatial], axis=1)]
    times = [int(t) for t in bundle.timestamps]
    L = len(conf)
    dim = bundle.visual_dim + bundle.spatial_dim

    threshold = float(np.float32(cfg.conf_threshold))
    valid = [i for i in range(L) if conf[i] > threshold]
    if not valid:
        raise NoConfidentGeometryError("no confident token")
    n = len(valid)
    total = [0.0, 0.0, 0.0]
    for i in valid:
        for a in range(3):
            total[a] += coords[i][a]
    center = [total[a] / n for a in range(3)]

    inserted = list(range(L)) if cfg.insert_low_confidence else valid
    D, r = cfg.grid_extent, cfg.resolution
    keyed = []
    offsets = {}
    for i in inserted:
        off = [(n * coords[i][a] - total[a]) / n for a in range(3)]
        u = [math.floor(off[a] / r) + D // 2 for a in range(3)]
        if all(0 <= x <= D - 1 for x in u):
            h = u[0] * D * D + u[1] * D + u[2]
            keyed.append((h, i, tuple(u)))
            offsets[i] = off
    keyed.sort()

    bins: list[tuple[int, tuple, list[int]]] = []
    for h, i, u in keyed:
        if bins and bins[-1][0] == h:
            bins[-1][2].append(i)
        else:
            bins.append((h, u, [i]))

    cells = []
    for h, u, members in bins:
        mu = [0.0] * dim
        for i in members:
            for k in range(dim):
                mu[k] += feats[i][k]
        mu = [m / len(members) for m in mu]
        mm = 0.0
        for k in range(dim):
            mm += mu[k] * mu[k]
        refined = []
        for i in members:
            dot = xx = 0.0
            for k in range(dim):
                dot += feats[i][k] * mu[k]
                xx += feats[i][k] * feats[i][k]
            denom = math.sqrt(xx) * math.sqrt(mm)
            cos = dot / denom if denom > 0 else 0.0
            if cos > cfg.sim_threshold:
                refined.append(i)
        if not refined or math.sqrt(mm) == 0:
            refined = members
        m = len(refined)
        v = [0.0] * dim
        p = [0.0, 0.0, 0.0]
        for i in refined:
            for k in range(dim):
                v[k] += feats[i][k]
            for a in range(3):
                p[a] += offsets[i][a]
        cells.append((h, u, [x / m for x in v], [x / m for x in p], min(times[i] for i in refined), m))

    if len(cells) > cfg.max_voxels:
        rng = np.random.Generator(np.random.PCG64(cfg.seed))
        keep = sorted(int(j) for j in rng.choice(len(cells), size=cfg.max_voxels, replace=False))
        cells = [cells[j] for j in keep]

    M = len(cells)
    return CognitiveMap(
        center=np.array(center, dtype=np.float64),
        resolution=float(r),
        grid_extent=int(D),
        indices=np.array([c[1] for c in cells], dtype=np.int64).reshape(M, 3),
        hashes=np.array([c[0] for c in cells], dtype=np.int64),
        coords=np.array([c[3] for c in cells], dtype=np.float64).reshape(M, 3),
        timestamps=np.array([c[4] for c in cells], dtype=np.int64),
        occupancy=np.array([c[5] for c in cells], dtype=np.int64),
        features=np.array([c[2] for c in cells], dtype=np.float64).astype(np.float32).reshape(M, dim),
        config=cfg,
    )


def naive_attention(q, k, v, heads: int) -> np.ndarray:
    """Per-head softmax(q k^T / sqrt(d)) v in float64 using plain numpy."""
    q, k, v = (np.asarray(m, dtype=np.float64) for m in (q, k, v))
    dq, dv = q.shape[1] // heads, v.shape[1] // heads
    outs = []
    for h in range(heads):
        qh, kh, vh = q[:, h * dq:(h + 1) * dq], k[:, h * dq:(h + 1) * dq], v[:, h * dv:(h + 1) * dv]
        logits = qh @ kh.T / math.sqrt(dq)
        w = np.exp(logits - logits.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        outs.append(w @ vh)
    return np.concatenate(outs, axis=1)


def naive_gelu(x):
    x = np.asarray(x, dtype=np.float64)
    return np.vectorize(lambda t: 0.5 * t * (1.0 + math.erf(t / math.sqrt(2.0))))(x)


def naive_linear(x, p):
    return np.asarray(x, np.float64) @ np.asarray(p.weight, np.float64).T + np.asarray(p.bias, np.float64)


def naive_mlp(x, p):
    return naive_linear(naive_gelu(naive_linear(x, p.layer1)), p.layer2)


def naive_rope(x, coords, head_dim: int, axis_pairs, base: float = 10000.0, scale: float = 1.0):
    """Rotate pair ``i`` (channels 2i, 2i+1) of every head, pair-by-pair."""
    x = np.array(x, dtype=np.float64)
    out = x.copy()
    n, width = x.shape
    for t in range(n):
        for h in range(width // head_dim):
            pair = 0
            for axis, count in enumerate(axis_pairs):
                for j in range(count):
                    theta = (coords[t][axis] / scale) * base ** (-j / count)
                    c0 = h * head_dim + 2 * pair
                    a, b = x[t, c0], x[t, c0 + 1]
                    out[t, c0] = a * math.cos(theta) - b * math.sin(theta)
                    out[t, c0 + 1] = a * math.sin(theta) + b * math.cos(theta)
                    pair += 1
    return out


def naive_cdif_layer(visual, vcoords, cells, ccoords, params):
    """One fusion layer evaluated step by step in float64. Returns (visual, cells)."""
    rope = params.rope
    pairs = rope.axis_pairs
    hd, base, scale = rope.head_dim, rope.frequency_base, rope.coordinate_scale

    emb = np.asarray(cells, np.float64) + naive_mlp(ccoords, params.map_coord_mlp)
    q = naive_rope(naive_linear(emb, params.self_q), ccoords, hd, pairs, base, scale)
    k = naive_rope(naive_linear(emb, params.self_k), ccoords, hd, pairs, base, scale)
    att = naive_attention(q, k, naive_linear(cells, params.self_v), params.heads)
    new_cells = naive_linear(att, params.self_out)
    if params.map_residual:
        new_cells = new_cells + np.asarray(cells, np.float64)

    femb = np.asarray(visual, np.float64) + naive_mlp(vcoords, params.visual_coord_mlp)
    q = naive_rope(naive_linear(femb, params.cross_q), vcoords, hd, pairs, base, scale)
    k = naive_rope(naive_linear(new_cells, params.cross_k), ccoords, hd, pairs, base, scale)
    fused = naive_linear(naive_attention(q, k, naive_linear(new_cells, params.cross_v), params.heads),
                         params.cross_out)
    gate = 1.0 / (1.0 + np.exp(-naive_mlp(visual, params.gate_mlp)))
    return np.asarray(visual, np.float64) + gate * naive_mlp(fused, params.ffn), new_cells


def random_bundle(rng: np.random.Generator, max_tokens: int = 500, max_dim: int = 16,
                  grid: float = 2.0 ** -16) -> FrameBundle:
    """Clustered random bundle for oracle comparisons.

    Coordinates are multiples of ``grid`` inside [-2, 2], so shifting them by
    small integers stays exact in float32. Features mix cluster-consistent
    rows, random outliers and occasional all-zero rows.
    """
    frames = int(rng.integers(1, 9))
    per_frame = int(rng.integers(1, max(2, max_tokens // frames) + 1))
    L = frames * per_frame
    dv, ds = int(rng.integers(1, max_dim + 1)), int(rng.integers(0, max_dim + 1))
    n_clusters = int(rng.integers(1, 12))
    centers = rng.uniform(-1.5, 1.5, size=(n_clusters, 3))
    base_feats = rng.standard_normal((n_clusters, dv + ds))
    which = rng.integers(0, n_clusters, size=L)
    coords = centers[which] + rng.normal(0, rng.choice([0.02, 0.1, 0.4]), size=(L, 3))
    coords = np.clip(np.round(coords / grid) * grid, -2.0, 2.0)
    feats = base_feats[which] + rng.normal(0, rng.choice([0.05, 0.5, 1.5]), size=(L, dv + ds))
    outliers = rng.random(L) < 0.1
    feats[outliers] = rng.standard_normal((int(outliers.sum()), dv + ds))
    feats[rng.random(L) < 0.02] = 0.0
    conf = rng.random(L)
    conf[rng.random(L) < 0.05] = 0.3
    conf[rng.random(L) < 0.05] = 0.0
    ts = np.cumsum(rng.integers(0, 3, size=frames))
    return FrameBundle(feats[:, :dv], feats[:, dv:], coords, conf, ts, per_frame)


def random_map_config(rng: np.random.Generator) -> MapConfig:
    return MapConfig(
        grid_extent=int(rng.choice([2, 8, 16, 100])),
        resolution=float(rng.choice([0.04, 0.1, 0.25, 0.3, 0.5])),
        conf_threshold=0.3,
        sim_threshold=float(rng.choice([-1.0, 0.0, 0.5, 0.9])),
        max_voxels=int(rng.choice([5, 50, 5000])),
        seed=int(rng.integers(0, 2**32)),
        insert_low_confidence=bool(rng.random() < 0.3),
    )
