"""Voxelized cognitive maps from patch tokens, and coordinate-guided fusion back into them."""

from .cdif import (
    CdifLayerParams,
    FusionState,
    Rope3dConfig,
    cdif_forward,
    gated_update,
    init_layer,
    init_stack,
    map_reading,
    map_reasoning,
    rope3d_apply,
)
from .errors import (
    CogmapError,
    ConfigurationError,
    ContractError,
    FormatError,
    NoConfidentGeometryError,
    VerificationError,
)
from .formats import (
    read_frame_bundle,
    read_map,
    read_params,
    write_frame_bundle,
    write_map,
    write_params,
)
from .geometry import DenseFrame, FrameBundle, PatchToken, pool_dense_to_patches
from .mapping import (
    CognitiveMap,
    MapConfig,
    VoxelCell,
    aggregate_bin,
    build_map,
    compute_scene_center,
    hash_voxel,
    quantize,
    sample_map,
)
from .scene import GroundTruth, SceneSpec, generate_scene, object_signature

__version__ = "0.1.0"
