"""Coordinate-guided fusion of map cells back into visual tokens.

Each layer runs three steps:

1. map reasoning: coordinate-embedded self-attention among map cells, with
   3D rotary embeddings on queries and keys;
2. map reading: visual tokens cross-attend to the refined map;
3. gated update: a sigmoid gate computed from the visual token alone scales
   a feed-forward projection of what was read, added as a residual.

Widths: visual tokens have ``D_v`` channels, map cells ``D_m = D_v + D_s``.
Both attention sites run at width ``D_m`` split over ``heads`` heads, whose
size must be even for the rotary pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import ConfigurationError, ContractError
from .tensor import (
    F32,
    F64,
    GradientTape,
    LinearParams,
    MlpParams,
    to_storage,
    add,
    linear,
    mlp,
    mul,
    multihead_attention,
    sigmoid,
    storage_dtype,
)


def split_axis_pairs(head_dim: int) -> tuple[int, int, int]:
    """Spread ``head_dim / 2`` rotation pairs over x, y, z; remainder to x, then y."""
    if head_dim < 2 or head_dim % 2:
        raise ConfigurationError(f"rotary head dim must be even and >= 2, got {head_dim}")
    pairs = head_dim // 2
    base, rem = divmod(pairs, 3)
    return base + (rem > 0), base + (rem > 1), base


@dataclass(frozen=True)
class Rope3dConfig:
    head_dim: int
    axis_pairs: tuple[int, int, int] | None = None
    frequency_base: float = 10000.0
    coordinate_scale: float = 1.0

    def __post_init__(self):
        if self.axis_pairs is None:
            object.__setattr__(self, "axis_pairs", split_axis_pairs(self.head_dim))
        if self.head_dim % 2:
            raise ConfigurationError("rotary head dim must be even")
        if any(n < 0 for n in self.axis_pairs) or 2 * sum(self.axis_pairs) != self.head_dim:
            raise ConfigurationError(
                f"axis pairs {self.axis_pairs} do not cover head dim {self.head_dim}"
            )
        if not self.coordinate_scale > 0:
            raise ConfigurationError("coordinate_scale must be positive")

    def frequencies(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-pair (axis index, inverse frequency), pairs ordered x then y then z."""
        axes, inv = [], []
        for a, n in enumerate(self.axis_pairs):
            for k in range(n):
                axes.append(a)
                inv.append(self.frequency_base ** (-k / n))
        return np.array(axes, dtype=np.int64), np.array(inv, dtype=F64)

    def angles(self, coords: np.ndarray) -> np.ndarray:
        axes, inv = self.frequencies()
        c = np.asarray(coords, dtype=F64) / self.coordinate_scale
        return c[:, axes] * inv


def _rotate(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    # x: (n, heads, pairs, 2); cos/sin: (n, 1, pairs)
    a, b = x[..., 0], x[..., 1]
    return np.stack([a * cos - b * sin, a * sin + b * cos], axis=-1)


def rope3d_apply(x: np.ndarray, coords: np.ndarray, cfg: Rope3dConfig,
                 tape: GradientTape | None = None) -> np.ndarray:
    """Rotate each head's channel pairs by angles set by the token's 3D coordinate.

    ``x`` is (n, heads * head_dim); every head uses the same rotation.
    """
    n, width = x.shape
    if width % cfg.head_dim:
        raise ConfigurationError(f"width {width} is not a multiple of head dim {cfg.head_dim}")
    if np.shape(coords) != (n, 3):
        raise ConfigurationError(f"need ({n}, 3) coordinates, got {np.shape(coords)}")
    heads, pairs = width // cfg.head_dim, cfg.head_dim // 2
    theta = cfg.angles(coords)[:, None, :]
    cos, sin = np.cos(theta), np.sin(theta)
    xd = np.asarray(x, dtype=F64).reshape(n, heads, pairs, 2)
    out = to_storage(_rotate(xd, cos, sin).reshape(n, width), storage_dtype(x))
    if tape is not None:
        def vjp(g):
            return (_rotate(g.reshape(n, heads, pairs, 2), cos, -sin).reshape(n, width),)

        tape.record(out, (x,), vjp)
    return out


# ---------------------------------------------------------------------------
# parameters

_LINEAR_FIELDS = ("self_q", "self_k", "self_v", "self_out",
                  "cross_q", "cross_k", "cross_v", "cross_out")
_MLP_FIELDS = ("map_coord_mlp", "visual_coord_mlp", "gate_mlp", "ffn")


@dataclass
class CdifLayerParams:
    map_coord_mlp: MlpParams  # 3 -> D_m
    visual_coord_mlp: MlpParams  # 3 -> D_v
    self_q: LinearParams  # D_m -> D_m
    self_k: LinearParams
    self_v: LinearParams
    self_out: LinearParams
    cross_q: LinearParams  # D_v -> D_m
    cross_k: LinearParams  # D_m -> D_m
    cross_v: LinearParams
    cross_out: LinearParams
    gate_mlp: MlpParams  # D_v -> D_v, sigmoid applied after
    ffn: MlpParams  # D_m -> D_v
    heads: int = 4
    map_residual: bool = True
    frequency_base: float = 10000.0
    coordinate_scale: float = 1.0

    def __post_init__(self):
        self.validate()

    @property
    def visual_dim(self) -> int:
        return self.visual_coord_mlp.out_dim

    @property
    def map_dim(self) -> int:
        return self.map_coord_mlp.out_dim

    @property
    def head_dim(self) -> int:
        return self.map_dim // self.heads

    @property
    def rope(self) -> Rope3dConfig:
        return Rope3dConfig(self.head_dim, frequency_base=self.frequency_base,
                            coordinate_scale=self.coordinate_scale)

    def validate(self) -> None:
        Dv, Dm = self.visual_dim, self.map_dim
        expect = {
            "map_coord_mlp": (3, Dm), "visual_coord_mlp": (3, Dv),
            "self_q": (Dm, Dm), "self_k": (Dm, Dm), "self_v": (Dm, Dm), "self_out": (Dm, Dm),
            "cross_q": (Dv, Dm), "cross_k": (Dm, Dm), "cross_v": (Dm, Dm), "cross_out": (Dm, Dm),
            "gate_mlp": (Dv, Dv), "ffn": (Dm, Dv),
        }
        for name, (i, o) in expect.items():
            p = getattr(self, name)
            if (p.in_dim, p.out_dim) != (i, o):
                raise ConfigurationError(f"{name} maps {p.in_dim}->{p.out_dim}, expected {i}->{o}")
        if self.heads < 1 or Dm % self.heads:
            raise ConfigurationError(f"map width {Dm} is not divisible by {self.heads} heads")
        split_axis_pairs(self.head_dim)

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Every trainable array with a dotted name, in a fixed order."""
        out = []
        for f in fields(self):
            p = getattr(self, f.name)
            if isinstance(p, LinearParams):
                out += [(f"{f.name}.weight", p.weight), (f"{f.name}.bias", p.bias)]
            elif isinstance(p, MlpParams):
                for layer in ("layer1", "layer2"):
                    lp = getattr(p, layer)
                    out += [(f"{f.name}.{layer}.weight", lp.weight),
                            (f"{f.name}.{layer}.bias", lp.bias)]
        return out

    def astype(self, dtype) -> "CdifLayerParams":
        changes = {name: getattr(self, name).astype(dtype) for name in _LINEAR_FIELDS + _MLP_FIELDS}
        return replace(self, **changes)

    @classmethod
    def from_named_arrays(cls, arrays: dict[str, np.ndarray], **settings) -> "CdifLayerParams":
        def lin(prefix):
            return LinearParams(arrays[f"{prefix}.weight"], arrays[f"{prefix}.bias"])

        kwargs = {name: lin(name) for name in _LINEAR_FIELDS}
        for name in _MLP_FIELDS:
            kwargs[name] = MlpParams(lin(f"{name}.layer1"), lin(f"{name}.layer2"))
        return cls(**kwargs, **settings)


def init_layer(visual_dim: int, spatial_dim: int, heads: int = 4,
               rng: np.random.Generator | None = None, zero: bool = False,
               zero_ffn: bool = False, dtype=F32, **settings) -> CdifLayerParams:
    """Random (or all-zero) layer parameters.

    ``zero_ffn`` keeps every other weight random but zeroes the feed-forward
    output layer, which makes the layer an exact identity on visual tokens.
    """
    Dv, Dm = visual_dim, visual_dim + spatial_dim
    if rng is None:
        rng = np.random.default_rng(0)

    def lin(i, o):
        return LinearParams.zeros(i, o, dtype) if zero else LinearParams.random(i, o, rng, dtype=dtype)

    def two(i, o):
        return MlpParams.zeros(i, o, dtype) if zero else MlpParams.random(i, o, rng, dtype=dtype)

    params = CdifLayerParams(
        map_coord_mlp=two(3, Dm), visual_coord_mlp=two(3, Dv),
        self_q=lin(Dm, Dm), self_k=lin(Dm, Dm), self_v=lin(Dm, Dm), self_out=lin(Dm, Dm),
        cross_q=lin(Dv, Dm), cross_k=lin(Dm, Dm), cross_v=lin(Dm, Dm), cross_out=lin(Dm, Dm),
        gate_mlp=two(Dv, Dv), ffn=two(Dm, Dv), heads=heads, **settings,
    )
    if zero_ffn:
        params.ffn = MlpParams(params.ffn.layer1, LinearParams.zeros(Dv, Dv, dtype))
    return params


def init_stack(layers: int, visual_dim: int, spatial_dim: int, heads: int = 4,
               seed: int = 0, **kwargs) -> list[CdifLayerParams]:
    rng = np.random.Generator(np.random.PCG64(seed))
    return [init_layer(visual_dim, spatial_dim, heads, rng, **kwargs) for _ in range(layers)]


# ---------------------------------------------------------------------------
# forward


@dataclass
class FusionState:
    visual_tokens: np.ndarray  # (T, D_v)
    visual_coords: np.ndarray  # (T, 3), recentered
    map_tokens: np.ndarray  # (M, D_m)
    map_coords: np.ndarray  # (M, 3)
    layer_index: int = 0

    def __post_init__(self):
        if self.visual_tokens.shape[0] != np.shape(self.visual_coords)[0]:
            raise ConfigurationError("visual token and coordinate counts differ")
        if self.map_tokens.shape[0] != np.shape(self.map_coords)[0]:
            raise ConfigurationError("map token and coordinate counts differ")


def map_reasoning(state: FusionState, params: CdifLayerParams,
                  tape: GradientTape | None = None, return_weights: bool = False):
    """Self-attention among map cells; returns the next map tokens."""
    cells, coords = state.map_tokens, state.map_coords
    if cells.shape[0] == 0:
        raise ContractError("map reasoning needs at least one map cell")
    if cells.shape[1] != params.map_dim:
        raise ConfigurationError(f"map width {cells.shape[1]} != layer map dim {params.map_dim}")
    rope = params.rope
    embedded = add(cells, mlp(coords, params.map_coord_mlp, tape), tape)
    q = rope3d_apply(linear(embedded, params.self_q, tape), coords, rope, tape)
    k = rope3d_apply(linear(embedded, params.self_k, tape), coords, rope, tape)
    # values read the map tokens before coordinate injection
    v = linear(cells, params.self_v, tape)
    out, weights = multihead_attention(q, k, v, params.heads, out_proj=params.self_out,
                                       tape=tape, return_weights=True)
    if params.map_residual:
        out = add(out, cells, tape)
    return (out, weights) if return_weights else out


def map_reading(state: FusionState, map_tokens: np.ndarray, params: CdifLayerParams,
                tape: GradientTape | None = None, return_weights: bool = False):
    """Cross-attention from visual tokens onto ``map_tokens`` (the refined map)."""
    if map_tokens.shape[0] == 0:
        raise ContractError("map reading needs at least one map cell")
    tokens, coords = state.visual_tokens, state.visual_coords
    if tokens.shape[1] != params.visual_dim:
        raise ConfigurationError(
            f"visual width {tokens.shape[1]} != layer visual dim {params.visual_dim}"
        )
    rope = params.rope
    embedded = add(tokens, mlp(coords, params.visual_coord_mlp, tape), tape)
    q = rope3d_apply(linear(embedded, params.cross_q, tape), coords, rope, tape)
    k = rope3d_apply(linear(map_tokens, params.cross_k, tape), state.map_coords, rope, tape)
    v = linear(map_tokens, params.cross_v, tape)
    return multihead_attention(q, k, v, params.heads, out_proj=params.cross_out,
                               tape=tape, return_weights=return_weights)


def gate_values(visual: np.ndarray, params: CdifLayerParams,
                tape: GradientTape | None = None) -> np.ndarray:
    """Sigmoid gate, kept one ulp inside (0, 1) where the sigmoid saturates."""
    gate = sigmoid(mlp(visual, params.gate_mlp, tape), tape)
    zero, one = gate.dtype.type(0), gate.dtype.type(1)
    # in place, so the tape entry recorded for ``gate`` still applies
    np.clip(gate, np.nextafter(zero, one), np.nextafter(one, zero), out=gate)
    return gate


def gated_update(visual: np.ndarray, fused: np.ndarray, params: CdifLayerParams,
                 tape: GradientTape | None = None) -> np.ndarray:
    gate = gate_values(visual, params, tape)
    return add(visual, mul(gate, mlp(fused, params.ffn, tape), tape), tape)


def cdif_layer(state: FusionState, params: CdifLayerParams,
               tape: GradientTape | None = None) -> FusionState:
    new_map = map_reasoning(state, params, tape)
    fused = map_reading(state, new_map, params, tape)
    visual = gated_update(state.visual_tokens, fused, params, tape)
    return FusionState(visual, state.visual_coords, new_map, state.map_coords,
                       state.layer_index + 1)


def cdif_forward(visual_tokens: np.ndarray, visual_coords: np.ndarray,
                 map_tokens: np.ndarray, map_coords: np.ndarray,
                 layers: list[CdifLayerParams], tape: GradientTape | None = None,
                 return_state: bool = False):
    """Run every layer in order; coordinates stay fixed while tokens evolve.

    Coordinates are cast to the visual tokens' storage dtype on entry.
    """
    if not layers:
        raise ContractError("need at least one fusion layer")
    dtype = np.asarray(visual_tokens).dtype
    if dtype not in (F32, F64):
        raise ConfigurationError(f"unsupported token dtype {dtype}")
    state = FusionState(
        visual_tokens, np.asarray(visual_coords, dtype=dtype).reshape(-1, 3),
        map_tokens, np.asarray(map_coords, dtype=dtype).reshape(-1, 3),
    )
    for params in layers:
        state = cdif_layer(state, params, tape)
    return state if return_state else state.visual_tokens


def attention_logits(q: np.ndarray, k: np.ndarray, heads: int) -> np.ndarray:
    """Raw scaled logits per head, (heads, queries, keys), in float64."""
    dq = q.shape[1] // heads
    qd, kd = np.asarray(q, F64), np.asarray(k, F64)
    return np.stack([
        qd[:, h * dq:(h + 1) * dq] @ kd[:, h * dq:(h + 1) * dq].T / math.sqrt(dq)
        for h in range(heads)
    ])
