"""Binary file formats. Everything is little-endian with fixed-stride records.

CMF1 (frame bundle)::

    "CMF1" u32 N  u32 M_v  u32 D_v  u32 D_s                     (20 bytes)
    N x { u32 timestamp,
          M_v x { f32[D_v] visual, f32[D_s] spatial, f32[3] coordinate, f32 confidence } }

CMAP (cognitive map)::

    "CMAP" u32 version=1  f64[3] center  f64 resolution
    u32 D  u32 M  u32 feature_dim                                (52 bytes)
    M x { u32[3] voxel index, u64 hash, f64[3] coordinate,
          u32 timestamp, u32 occupancy, f32[feature_dim] feature }

CDPF (fusion parameters)::

    "CDPF" u32 version=1  u32 layer_count                        (12 bytes)
    per layer: u32 layer_index  u32 heads  u32 map_residual
               f64 frequency_base  f64 coordinate_scale  u32 array_count
               array_count x { u32 name_len, ascii name, u32 ndim,
                               u32[ndim] shape, f32[prod(shape)] data }
"""

from __future__ import annotations

import hashlib
import os
import struct

import numpy as np

from .cdif import CdifLayerParams
from .errors import (
    BadMagicError,
    ConfigurationError,
    DimensionOverflowError,
    FormatError,
    TrailingDataError,
    TruncatedPayloadError,
)
from .geometry import FrameBundle
from .mapping import CognitiveMap, hash_voxels
from .scene import GroundTruth

CMF1_MAGIC = b"CMF1"
CMAP_MAGIC = b"CMAP"
CDPF_MAGIC = b"CDPF"
CMAP_VERSION = 1
CDPF_VERSION = 1

U32_MAX = 2**32 - 1
# refuse headers that would describe more than 1 TiB of payload
MAX_PAYLOAD_BYTES = 2**40

_CMF1_HEADER = struct.Struct("<4sIIII")
_CMAP_HEADER = struct.Struct("<4sI3ddIII")
_CDPF_HEADER = struct.Struct("<4sII")
_CDPF_LAYER = struct.Struct("<IIIddI")


def _token_dtype(visual_dim: int, spatial_dim: int) -> np.dtype:
    return np.dtype([("visual", "<f4", (visual_dim,)), ("spatial", "<f4", (spatial_dim,)),
                     ("coord", "<f4", (3,)), ("confidence", "<f4")])


def _frame_dtype(patches: int, visual_dim: int, spatial_dim: int) -> np.dtype:
    return np.dtype([("timestamp", "<u4"),
                     ("tokens", _token_dtype(visual_dim, spatial_dim), (patches,))])


def _voxel_dtype(feature_dim: int) -> np.dtype:
    return np.dtype([("index", "<u4", (3,)), ("hash", "<u8"), ("coord", "<f8", (3,)),
                     ("timestamp", "<u4"), ("occupancy", "<u4"),
                     ("feature", "<f4", (feature_dim,))])


def _check_u32(**values) -> None:
    for name, v in values.items():
        if not 0 <= int(v) <= U32_MAX:
            raise DimensionOverflowError(f"{name}={v} does not fit in u32")


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _write_bytes(path, data: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(data)


def _expect_magic(data: bytes, magic: bytes) -> None:
    if len(data) < len(magic):
        raise TruncatedPayloadError(f"file too short for {magic!r} magic")
    if data[: len(magic)] != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {data[:len(magic)]!r}")


def _payload(data: bytes, offset: int, nbytes: int, what: str) -> bytes:
    if nbytes > MAX_PAYLOAD_BYTES:
        raise DimensionOverflowError(f"{what} declares {nbytes} bytes")
    if len(data) - offset < nbytes:
        raise TruncatedPayloadError(
            f"{what}: need {nbytes} bytes at offset {offset}, file has {len(data) - offset}"
        )
    return data[offset: offset + nbytes]


# ---------------------------------------------------------------------------
# CMF1


def encode_frame_bundle(bundle: FrameBundle) -> bytes:
    N, M, Dv, Ds = bundle.frame_count, bundle.patches_per_frame, bundle.visual_dim, bundle.spatial_dim
    _check_u32(N=N, M_v=M, D_v=Dv, D_s=Ds)
    if N and (bundle.frame_timestamps.max() > U32_MAX):
        raise DimensionOverflowError("timestamp does not fit in u32")
    rec = np.zeros(N, dtype=_frame_dtype(M, Dv, Ds))
    rec["timestamp"] = bundle.frame_timestamps
    tokens = rec["tokens"]
    tokens["visual"] = bundle.visual.reshape(N, M, Dv)
    tokens["spatial"] = bundle.spatial.reshape(N, M, Ds)
    tokens["coord"] = bundle.coords.reshape(N, M, 3)
    tokens["confidence"] = bundle.confidence.reshape(N, M)
    return _CMF1_HEADER.pack(CMF1_MAGIC, N, M, Dv, Ds) + rec.tobytes()


def decode_frame_bundle(data: bytes) -> FrameBundle:
    _expect_magic(data, CMF1_MAGIC)
    if len(data) < _CMF1_HEADER.size:
        raise TruncatedPayloadError("CMF1 header truncated")
    _, N, M, Dv, Ds = _CMF1_HEADER.unpack_from(data)
    stride = 4 + M * (Dv + Ds + 4) * 4
    if stride > MAX_PAYLOAD_BYTES:
        raise DimensionOverflowError(f"CMF1 frame stride of {stride} bytes")
    nbytes = N * stride
    body = _payload(data, _CMF1_HEADER.size, nbytes, "CMF1 frames")
    dtype = _frame_dtype(M, Dv, Ds)
    if len(data) != _CMF1_HEADER.size + nbytes:
        raise TrailingDataError(f"{len(data) - _CMF1_HEADER.size - nbytes} unexpected trailing bytes")
    rec = np.frombuffer(body, dtype=dtype, count=N)
    tokens = rec["tokens"]
    L = N * M
    try:
        return FrameBundle(
            visual=tokens["visual"].reshape(L, Dv),
            spatial=tokens["spatial"].reshape(L, Ds),
            coords=tokens["coord"].reshape(L, 3),
            confidence=tokens["confidence"].reshape(L),
            frame_timestamps=rec["timestamp"].astype(np.int64),
            patches_per_frame=M,
        )
    except FormatError:
        raise
    except Exception as exc:  # bundle invariants
        raise FormatError(f"CMF1 content invalid: {exc}") from exc


def write_frame_bundle(bundle: FrameBundle, path: str | os.PathLike) -> None:
    _write_bytes(path, encode_frame_bundle(bundle))


def read_frame_bundle(path: str | os.PathLike) -> FrameBundle:
    return decode_frame_bundle(_read_bytes(path))


# ---------------------------------------------------------------------------
# CMAP


def encode_map(cmap: CognitiveMap) -> bytes:
    M, dim = len(cmap), cmap.feature_dim
    _check_u32(D=cmap.grid_extent, M=M, feature_dim=dim)
    if M and (cmap.timestamps.max() > U32_MAX or cmap.occupancy.max() > U32_MAX):
        raise DimensionOverflowError("timestamp or occupancy does not fit in u32")
    header = _CMAP_HEADER.pack(CMAP_MAGIC, CMAP_VERSION, *map(float, cmap.center),
                               float(cmap.resolution), cmap.grid_extent, M, dim)
    rec = np.zeros(M, dtype=_voxel_dtype(dim))
    rec["index"] = cmap.indices
    rec["hash"] = cmap.hashes
    rec["coord"] = cmap.coords
    rec["timestamp"] = cmap.timestamps
    rec["occupancy"] = cmap.occupancy
    rec["feature"] = cmap.features
    return header + rec.tobytes()


def decode_map(data: bytes) -> CognitiveMap:
    _expect_magic(data, CMAP_MAGIC)
    if len(data) < _CMAP_HEADER.size:
        raise TruncatedPayloadError("CMAP header truncated")
    _, version, cx, cy, cz, r, D, M, dim = _CMAP_HEADER.unpack_from(data)
    if version != CMAP_VERSION:
        raise FormatError(f"unsupported CMAP version {version}")
    if 52 + 4 * dim > MAX_PAYLOAD_BYTES:
        raise DimensionOverflowError(f"CMAP feature dim {dim}")
    nbytes = M * (52 + 4 * dim)
    body = _payload(data, _CMAP_HEADER.size, nbytes, "CMAP voxels")
    dtype = _voxel_dtype(dim)
    if len(data) != _CMAP_HEADER.size + nbytes:
        raise TrailingDataError(f"{len(data) - _CMAP_HEADER.size - nbytes} unexpected trailing bytes")
    rec = np.frombuffer(body, dtype=dtype, count=M)
    cmap = CognitiveMap(
        center=np.array([cx, cy, cz], dtype=np.float64),
        resolution=r,
        grid_extent=D,
        indices=rec["index"].astype(np.int64).reshape(M, 3),
        hashes=rec["hash"].astype(np.int64),
        coords=rec["coord"].astype(np.float64).reshape(M, 3),
        timestamps=rec["timestamp"].astype(np.int64),
        occupancy=rec["occupancy"].astype(np.int64),
        features=rec["feature"].astype(np.float32).reshape(M, dim),
    )
    if M:
        if np.any(cmap.indices >= max(D, 1)) or not np.array_equal(
                hash_voxels(cmap.indices, D), cmap.hashes):
            raise FormatError("CMAP voxel hash does not match its index")
        if np.any(np.diff(cmap.hashes) <= 0):
            raise FormatError("CMAP voxels are not sorted by strictly increasing hash")
    return cmap


def write_map(cmap: CognitiveMap, path: str | os.PathLike) -> None:
    _write_bytes(path, encode_map(cmap))


def read_map(path: str | os.PathLike) -> CognitiveMap:
    return decode_map(_read_bytes(path))


# ---------------------------------------------------------------------------
# CDPF


def encode_params(layers: list[CdifLayerParams]) -> bytes:
    _check_u32(layers=len(layers))
    out = [_CDPF_HEADER.pack(CDPF_MAGIC, CDPF_VERSION, len(layers))]
    for idx, layer in enumerate(layers):
        arrays = layer.named_arrays()
        out.append(_CDPF_LAYER.pack(idx, layer.heads, int(layer.map_residual),
                                    float(layer.frequency_base), float(layer.coordinate_scale),
                                    len(arrays)))
        for name, arr in arrays:
            raw = name.encode("ascii")
            out.append(struct.pack(f"<I{len(raw)}sI{arr.ndim}I", len(raw), raw, arr.ndim, *arr.shape))
            out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def decode_params(data: bytes) -> list[CdifLayerParams]:
    _expect_magic(data, CDPF_MAGIC)
    if len(data) < _CDPF_HEADER.size:
        raise TruncatedPayloadError("CDPF header truncated")
    _, version, count = _CDPF_HEADER.unpack_from(data)
    if version != CDPF_VERSION:
        raise FormatError(f"unsupported CDPF version {version}")
    pos = _CDPF_HEADER.size

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        chunk = _payload(data, pos, size, "CDPF record")
        pos += size
        return struct.unpack(fmt, chunk)

    layers = []
    for expected in range(count):
        idx, heads, residual, base, scale, n_arrays = take(_CDPF_LAYER.format)
        if idx != expected:
            raise FormatError(f"CDPF layer index {idx} where {expected} was expected")
        arrays: dict[str, np.ndarray] = {}
        for _ in range(n_arrays):
            (name_len,) = take("<I")
            (name,) = take(f"<{name_len}s")
            (ndim,) = take("<I")
            if ndim > 2:
                raise FormatError(f"CDPF array of rank {ndim}")
            shape = take(f"<{ndim}I")
            n = int(np.prod(shape, dtype=object)) if ndim else 1
            raw = _payload(data, pos, 4 * n, "CDPF array data")
            pos += 4 * n
            arrays[name.decode("ascii")] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)
        try:
            layers.append(CdifLayerParams.from_named_arrays(
                arrays, heads=heads, map_residual=bool(residual),
                frequency_base=base, coordinate_scale=scale))
        except KeyError as exc:
            raise FormatError(f"CDPF layer {idx} is missing array {exc}") from exc
        except ConfigurationError as exc:
            raise FormatError(f"CDPF layer {idx} is inconsistent: {exc}") from exc
        if len(arrays) != len(layers[-1].named_arrays()):
            raise FormatError(f"CDPF layer {idx} has unexpected arrays")
    if pos != len(data):
        raise TrailingDataError(f"{len(data) - pos} unexpected trailing bytes")
    return layers


def write_params(layers: list[CdifLayerParams], path: str | os.PathLike) -> None:
    _write_bytes(path, encode_params(layers))


def read_params(path: str | os.PathLike) -> list[CdifLayerParams]:
    return decode_params(_read_bytes(path))


# ---------------------------------------------------------------------------
# ground-truth sidecar (text)


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def signature_digest(signatures: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(signatures, dtype="<f8").tobytes()).hexdigest()


def encode_truth(truth: GroundTruth) -> str:
    K = len(truth.first_visible_frame)
    lines = [
        "# scene ground truth; floats are shortest round-trip decimal",
        f"object_count = {K}",
        f"visual_dim = {truth.object_signatures.shape[1]}",
        f"spatial_dim = {truth.spatial_signatures.shape[1]}",
        f"signatures_sha256 = {signature_digest(truth.object_signatures)}",
        "appearance_order = " + " ".join(str(k) for k in truth.appearance_order),
    ]
    for k in range(K):
        lines += [
            f"object.{k}.center = {_floats(truth.object_centers[k])}",
            f"object.{k}.first_visible_frame = {int(truth.first_visible_frame[k])}",
            f"object.{k}.signature = {_floats(truth.object_signatures[k])}",
            f"object.{k}.spatial_signature = {_floats(truth.spatial_signatures[k])}",
        ]
    return "\n".join(lines) + "\n"


def decode_truth(text: str) -> GroundTruth:
    entries = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"sidecar line {n}: expected 'key = value'")
        entries[key.strip()] = value.strip()
    try:
        K = int(entries["object_count"])
        centers = np.array([[float(x) for x in entries[f"object.{k}.center"].split()] for k in range(K)])
        sig = np.array([[float(x) for x in entries[f"object.{k}.signature"].split()] for k in range(K)])
        ssig = np.array([[float(x) for x in entries[f"object.{k}.spatial_signature"].split()]
                         for k in range(K)])
        first = np.array([int(entries[f"object.{k}.first_visible_frame"]) for k in range(K)], dtype=np.int64)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"sidecar incomplete or malformed: {exc}") from exc
    if "signatures_sha256" in entries and entries["signatures_sha256"] != signature_digest(sig):
        raise FormatError("sidecar signature digest does not match its signatures")
    diff = centers[:, None, :] - centers[None, :, :]
    return GroundTruth(centers.reshape(K, 3), sig, ssig, first,
                       np.sqrt(np.sum(diff * diff, axis=-1)), np.zeros(0, dtype=np.int64))


def write_truth(truth: GroundTruth, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(encode_truth(truth))


def read_truth(path: str | os.PathLike) -> GroundTruth:
    with open(path, encoding="utf-8") as fh:
        return decode_truth(fh.read())
