"""Dense numeric kernels with a small reverse-mode tape.

Matrices are plain 2-D numpy arrays. Every kernel accumulates in float64 with
a fixed left-to-right order over the contraction index, then rounds the result
to the storage dtype of its inputs: float32 unless any operand is already
float64, in which case the whole computation stays in double precision
(verification mode).

Passing ``tape=`` to a kernel records a vector-Jacobian product for it so that
:func:`backward` can return parameter gradients afterwards. Only the operation
set needed by a fusion layer is covered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, expit

from .errors import ConfigurationError, ContractError, DimensionError

F64 = np.float64
F32 = np.float32

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def storage_dtype(*arrays) -> type:
    for a in arrays:
        if a is not None and np.asarray(a).dtype == F64:
            return F64
    return F32


def to_storage(values: np.ndarray, dtype) -> np.ndarray:
    return np.array(values, dtype=dtype, copy=True)


def ordered_sum(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """Sum along ``axis`` strictly left to right in float64.

    ``np.sum`` uses pairwise reduction, which changes rounding with the
    array length and memory layout; a running cumulative sum does not.
    """
    a = np.asarray(a, dtype=F64)
    if a.shape[axis] == 0:
        return np.zeros(np.delete(a.shape, axis % a.ndim), dtype=F64)
    return np.take(np.cumsum(a, axis=axis), -1, axis=axis)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """float64 product ``a @ b`` with ascending-index accumulation."""
    a = np.asarray(a, dtype=F64)
    b = np.asarray(b, dtype=F64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=F64)
    for t in range(a.shape[1]):
        out += a[:, t : t + 1] * b[t : t + 1, :]
    return out


# ---------------------------------------------------------------------------
# parameters


@dataclass
class LinearParams:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise DimensionError("weight must be 2-D and bias 1-D")
        if self.bias.shape[0] != self.weight.shape[0]:
            raise DimensionError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weight.shape[0]}"
            )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def astype(self, dtype) -> "LinearParams":
        return LinearParams(self.weight.astype(dtype), self.bias.astype(dtype))

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int, dtype=F32) -> "LinearParams":
        return cls(np.zeros((out_dim, in_dim), dtype), np.zeros(out_dim, dtype))

    @classmethod
    def identity(cls, dim: int, dtype=F32) -> "LinearParams":
        return cls(np.eye(dim, dtype=dtype), np.zeros(dim, dtype))

    @classmethod
    def random(cls, in_dim: int, out_dim: int, rng: np.random.Generator,
               scale: float | None = None, dtype=F32) -> "LinearParams":
        if scale is None:
            scale = 1.0 / math.sqrt(in_dim)
        w = rng.standard_normal((out_dim, in_dim)) * scale
        b = rng.standard_normal(out_dim) * (0.1 * scale)
        return cls(w.astype(dtype), b.astype(dtype))


@dataclass
class MlpParams:
    """Two linear maps with an exact GELU between them."""

    layer1: LinearParams
    layer2: LinearParams

    def __post_init__(self):
        if self.layer1.out_dim != self.layer2.in_dim:
            raise DimensionError(
                f"hidden width mismatch: {self.layer1.out_dim} vs {self.layer2.in_dim}"
            )

    @property
    def in_dim(self) -> int:
        return self.layer1.in_dim

    @property
    def out_dim(self) -> int:
        return self.layer2.out_dim

    def arrays(self) -> list[np.ndarray]:
        return self.layer1.arrays() + self.layer2.arrays()

    def astype(self, dtype) -> "MlpParams":
        return MlpParams(self.layer1.astype(dtype), self.layer2.astype(dtype))

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int, dtype=F32) -> "MlpParams":
        # hidden width equals output width
        return cls(LinearParams.zeros(in_dim, out_dim, dtype),
                   LinearParams.zeros(out_dim, out_dim, dtype))

    @classmethod
    def random(cls, in_dim: int, out_dim: int, rng: np.random.Generator,
               dtype=F32) -> "MlpParams":
        return cls(LinearParams.random(in_dim, out_dim, rng, dtype=dtype),
                   LinearParams.random(out_dim, out_dim, rng, dtype=dtype))


# ---------------------------------------------------------------------------
# tape


@dataclass
class GradientTape:
    """Records vector-Jacobian products in execution order.

    Arrays are identified by object identity, so the tape keeps every input
    and output alive until it is discarded.
    """

    records: list = field(default_factory=list)

    def record(self, output: np.ndarray, inputs: Sequence[np.ndarray],
               vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> None:
        self.records.append((output, tuple(inputs), vjp))

    def gradient(self, loss: np.ndarray, sources: Sequence[np.ndarray]) -> list[np.ndarray]:
        grads: dict[int, np.ndarray] = {id(loss): np.ones(np.shape(loss), dtype=F64)}
        for output, inputs, vjp in reversed(self.records):
            upstream = grads.get(id(output))
            if upstream is None:
                continue
            for inp, g in zip(inputs, vjp(upstream)):
                if g is None:
                    continue
                key = id(inp)
                grads[key] = grads[key] + g if key in grads else np.asarray(g, dtype=F64)
        return [grads.get(id(s), np.zeros(np.shape(s), dtype=F64)) for s in sources]


def backward(tape: GradientTape, loss: np.ndarray,
             params: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to each array in ``params``.

    Parameters the loss does not depend on get an all-zero gradient.
    """
    if np.ndim(loss) != 0:
        raise ContractError("loss must be a scalar")
    return tape.gradient(loss, params)


# ---------------------------------------------------------------------------
# kernels


def _check_matrix(x: np.ndarray, name: str = "x") -> None:
    if np.ndim(x) != 2:
        raise DimensionError(f"{name} must be a matrix, got shape {np.shape(x)}")


def linear(x: np.ndarray, p: LinearParams, tape: GradientTape | None = None) -> np.ndarray:
    _check_matrix(x)
    if x.shape[1] != p.in_dim:
        raise DimensionError(f"input width {x.shape[1]} != weight cols {p.in_dim}")
    dtype = storage_dtype(x, p.weight, p.bias)
    out = to_storage(matmul(x, np.asarray(p.weight, F64).T) + np.asarray(p.bias, F64), dtype)
    if tape is not None:
        xd = np.asarray(x, F64)
        wd = np.asarray(p.weight, F64)

        def vjp(g):
            return matmul(g, wd), matmul(g.T, xd), ordered_sum(g, axis=0)

        tape.record(out, (x, p.weight, p.bias), vjp)
    return out


def gelu(x: np.ndarray, tape: GradientTape | None = None) -> np.ndarray:
    xd = np.asarray(x, F64)
    out = to_storage(0.5 * xd * (1.0 + erf(xd * _INV_SQRT2)), storage_dtype(x))
    if tape is not None:
        def vjp(g):
            cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
            pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
            return (g * (cdf + xd * pdf),)

        tape.record(out, (x,), vjp)
    return out


def sigmoid(x: np.ndarray, tape: GradientTape | None = None) -> np.ndarray:
    s = expit(np.asarray(x, F64))
    out = to_storage(s, storage_dtype(x))
    if tape is not None:
        tape.record(out, (x,), lambda g: (g * s * (1.0 - s),))
    return out


def mlp(x: np.ndarray, p: MlpParams, tape: GradientTape | None = None) -> np.ndarray:
    return linear(gelu(linear(x, p.layer1, tape), tape), p.layer2, tape)


def add(a: np.ndarray, b: np.ndarray, tape: GradientTape | None = None) -> np.ndarray:
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"add: {np.shape(a)} vs {np.shape(b)}")
    out = to_storage(np.asarray(a, F64) + np.asarray(b, F64), storage_dtype(a, b))
    if tape is not None:
        tape.record(out, (a, b), lambda g: (g, g))
    return out


def mul(a: np.ndarray, b: np.ndarray, tape: GradientTape | None = None) -> np.ndarray:
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"mul: {np.shape(a)} vs {np.shape(b)}")
    ad, bd = np.asarray(a, F64), np.asarray(b, F64)
    out = to_storage(ad * bd, storage_dtype(a, b))
    if tape is not None:
        tape.record(out, (a, b), lambda g: (g * bd, g * ad))
    return out


def sum_squares(x: np.ndarray, tape: GradientTape | None = None) -> np.ndarray:
    xd = np.asarray(x, F64)
    out = np.array(ordered_sum((xd * xd).ravel()), dtype=F64)
    if tape is not None:
        tape.record(out, (x,), lambda g: (2.0 * g * xd,))
    return out


def _softmax64(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, F64)
    e = np.exp(m - np.max(m, axis=1, keepdims=True))
    return e / ordered_sum(e, axis=1)[:, None]


def _softmax_vjp(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    return a * (g - ordered_sum(g * a, axis=1)[:, None])


def softmax_rows(m: np.ndarray, tape: GradientTape | None = None) -> np.ndarray:
    _check_matrix(m, "m")
    a = _softmax64(m)
    out = to_storage(a, storage_dtype(m))
    if tape is not None:
        tape.record(out, (m,), lambda g: (_softmax_vjp(a, g),))
    return out


def multihead_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, heads: int,
                        out_proj: LinearParams | None = None,
                        tape: GradientTape | None = None,
                        return_weights: bool = False):
    """Scaled dot-product attention, split into ``heads`` column blocks.

    Returns the concatenated head outputs (optionally passed through
    ``out_proj``). With ``return_weights`` the per-head attention matrices,
    shape (heads, queries, keys), are returned as a second value.
    """
    for name, m in (("q", q), ("k", k), ("v", v)):
        _check_matrix(m, name)
    if heads < 1 or q.shape[1] != k.shape[1] or q.shape[1] % heads:
        raise ConfigurationError(
            f"query/key width {q.shape[1]}/{k.shape[1]} not divisible into {heads} heads"
        )
    if v.shape[1] % heads:
        raise ConfigurationError(f"value width {v.shape[1]} not divisible by {heads} heads")
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"{k.shape[0]} keys but {v.shape[0]} values")
    if k.shape[0] == 0:
        raise ContractError("attention over an empty key set")

    dq, dv = q.shape[1] // heads, v.shape[1] // heads
    scale = 1.0 / math.sqrt(dq)
    qd, kd, vd = (np.asarray(m, F64) for m in (q, k, v))
    weights = np.empty((heads, q.shape[0], k.shape[0]), dtype=F64)
    out64 = np.empty((q.shape[0], v.shape[1]), dtype=F64)
    for h in range(heads):
        qs, vs = slice(h * dq, (h + 1) * dq), slice(h * dv, (h + 1) * dv)
        weights[h] = _softmax64(matmul(qd[:, qs], kd[:, qs].T) * scale)
        out64[:, vs] = matmul(weights[h], vd[:, vs])
    out = to_storage(out64, storage_dtype(q, k, v))

    if tape is not None:
        def vjp(g):
            gq, gk, gv = np.zeros_like(qd), np.zeros_like(kd), np.zeros_like(vd)
            for h in range(heads):
                qs, vs = slice(h * dq, (h + 1) * dq), slice(h * dv, (h + 1) * dv)
                a = weights[h]
                gv[:, vs] = matmul(a.T, g[:, vs])
                gs = _softmax_vjp(a, matmul(g[:, vs], vd[:, vs].T)) * scale
                gq[:, qs] = matmul(gs, kd[:, qs])
                gk[:, qs] = matmul(gs.T, qd[:, qs])
            return gq, gk, gv

        tape.record(out, (q, k, v), vjp)

    if out_proj is not None:
        out = linear(out, out_proj, tape)
    if return_weights:
        return out, weights
    return out
