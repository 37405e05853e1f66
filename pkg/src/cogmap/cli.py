"""``cogmap`` command line: synth, build, fuse, query, verify.

Exit codes: 0 success, 1 I/O failure, 2 usage or configuration error,
3 malformed file, 4 contract or geometry failure, 5 verification failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import formats
from .cdif import CdifLayerParams, cdif_forward, init_stack
from .config import RunConfig, load_config, with_seed
from .errors import CogmapError, ConfigurationError, VerificationError
from .geometry import FrameBundle
from .mapping import CognitiveMap, build_map
from .queries import (
    APPEARANCE_ORDER,
    OBJECT_DISTANCE,
    QUERY_KINDS,
    VOXEL_COUNT,
    query_appearance_order,
    query_object_distance,
    query_voxel_count,
)
from .scene import generate_scene
from .verify import SUITES

log = logging.getLogger("cogmap")

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2


def truth_path(bundle_path: str) -> str:
    return f"{bundle_path}.truth"


def _pick(flag, cfg_value: str, what: str) -> str:
    path = flag or cfg_value
    if not path:
        raise ConfigurationError(f"no {what} path given (flag or [run] setting)")
    return path


# ---------------------------------------------------------------------------
# library-level entry points shared with the commands


def make_params(cfg: RunConfig, visual_dim: int, spatial_dim: int) -> list[CdifLayerParams]:
    c = cfg.cdif
    return init_stack(c.layers, visual_dim, spatial_dim, c.heads, c.seed,
                      zero=c.init == "zero", zero_ffn=c.init == "zero-ffn",
                      frequency_base=c.frequency_base, coordinate_scale=c.coordinate_scale,
                      map_residual=c.map_residual)


def check_params(layers: list[CdifLayerParams], bundle: FrameBundle, cmap: CognitiveMap) -> None:
    for i, p in enumerate(layers):
        if p.visual_dim != bundle.visual_dim:
            raise ConfigurationError(
                f"layer {i} expects visual width {p.visual_dim}, bundle has {bundle.visual_dim}")
        if p.map_dim != cmap.feature_dim:
            raise ConfigurationError(
                f"layer {i} expects map width {p.map_dim}, map has {cmap.feature_dim}")


def fuse_bundle(bundle: FrameBundle, cmap: CognitiveMap,
                layers: list[CdifLayerParams]) -> FrameBundle:
    """Fused visual tokens for every patch, written back in the bundle layout.

    Token coordinates are expressed relative to the map's scene center so
    both attention sites see the same frame of reference.
    """
    check_params(layers, bundle, cmap)
    coords = bundle.coords.astype(np.float64) - cmap.center
    fused = cdif_forward(bundle.visual, coords, cmap.features, cmap.coords, layers)
    return FrameBundle(fused, bundle.spatial, bundle.coords, bundle.confidence,
                       bundle.frame_timestamps, bundle.patches_per_frame)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg: RunConfig) -> int:
    cfg = with_seed(cfg, "scene", args.seed)
    out = _pick(args.out, cfg.run.out, "output")
    bundle, truth = generate_scene(cfg.scene)
    formats.write_frame_bundle(bundle, out)
    formats.write_truth(truth, truth_path(out))
    print(f"frames={bundle.frame_count} patches_per_frame={bundle.patches_per_frame} "
          f"tokens={len(bundle)} objects={cfg.scene.object_count} "
          f"first_visible={','.join(str(int(f)) for f in truth.first_visible_frame)}")
    return EXIT_OK


def cmd_build(args, cfg: RunConfig) -> int:
    cfg = with_seed(cfg, "map", args.seed)
    bundle = formats.read_frame_bundle(_pick(args.bundle, cfg.run.bundle, "bundle"))
    out = _pick(args.out, cfg.run.out, "output")
    cmap = build_map(bundle, cfg.map)
    formats.write_map(cmap, out)
    print(cmap.stats.line())
    return EXIT_OK


def cmd_fuse(args, cfg: RunConfig) -> int:
    cfg = with_seed(cfg, "cdif", args.seed)
    cmap = formats.read_map(_pick(args.map, cfg.run.map, "map"))
    bundle = formats.read_frame_bundle(_pick(args.bundle, cfg.run.bundle, "bundle"))
    out = _pick(args.out, cfg.run.out, "output")
    params_path = args.params or cfg.run.params
    if params_path:
        layers = formats.read_params(params_path)
    else:
        layers = make_params(cfg, bundle.visual_dim, bundle.spatial_dim)
        log.info("seeded %d random fusion layers (seed=%d)", len(layers), cfg.cdif.seed)
    fused = fuse_bundle(bundle, cmap, layers)
    formats.write_frame_bundle(fused, out)
    if args.save_params:
        formats.write_params(layers, args.save_params)
    print(f"tokens={len(fused)} layers={len(layers)} cells={len(cmap)}")
    return EXIT_OK


def cmd_query(args, cfg: RunConfig) -> int:
    cmap = formats.read_map(_pick(args.map, cfg.run.map, "map"))
    truth = formats.read_truth(_pick(args.truth, cfg.run.truth, "truth sidecar"))
    sigs = truth.object_signatures
    if args.kind == APPEARANCE_ORDER:
        result = query_appearance_order(cmap, sigs)
    elif args.kind == OBJECT_DISTANCE:
        K = len(sigs)
        if not (0 <= args.a < K and 0 <= args.b < K):
            raise ConfigurationError(f"object ids must lie in [0, {K})")
        result = query_object_distance(cmap, sigs, args.a, args.b)
    else:
        assert args.kind == VOXEL_COUNT
        result = query_voxel_count(cmap, sigs)
    print(result.line())
    return EXIT_OK


def cmd_verify(args, cfg: RunConfig) -> int:
    names = list(SUITES) if "all" in args.suites else args.suites
    failed = []
    for name in names:
        result = SUITES[name]()
        print(result.line(), flush=True)
        if not result.passed:
            failed.append(name)
    if failed:
        raise VerificationError(f"failed suites: {', '.join(failed)}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cogmap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=None,
                        help="more logging (overrides [run] verbosity)")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value config file with [scene] [map] [cdif] [run]")
        p.add_argument("--out", help="output file")
        p.set_defaults(func=fn)
        return p

    p = command("synth", cmd_synth, "generate a synthetic scene (CMF1 + .truth sidecar)")
    p.add_argument("--seed", type=int, help="overrides [scene] seed")

    p = command("build", cmd_build, "voxelize a frame bundle into a CMAP map")
    p.add_argument("--bundle")
    p.add_argument("--seed", type=int, help="sampling seed, overrides [map] seed")

    p = command("fuse", cmd_fuse, "run coordinate-guided fusion over a bundle")
    p.add_argument("--map")
    p.add_argument("--bundle")
    p.add_argument("--params", help="CDPF parameter file; seeded random layers if absent")
    p.add_argument("--seed", type=int, help="parameter seed, overrides [cdif] seed")
    p.add_argument("--save-params", help="also write the parameters used as CDPF")

    p = command("query", cmd_query, "answer a spatial question from a map")
    p.add_argument("--map")
    p.add_argument("--truth", help="ground-truth sidecar written by synth")
    p.add_argument("--kind", choices=QUERY_KINDS, default=APPEARANCE_ORDER)
    p.add_argument("--a", type=int, default=0)
    p.add_argument("--b", type=int, default=1)

    p = command("verify", cmd_verify, "run invariant suites")
    p.add_argument("suites", nargs="+", choices=[*SUITES, "all"], metavar="SUITE",
                   help=f"one or more of: {', '.join(SUITES)}, all")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        verbosity = args.verbose if args.verbose is not None else cfg.run.verbosity
        logging.basicConfig(level=logging.WARNING - 10 * min(verbosity, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args, cfg)
    except CogmapError as exc:
        print(f"cogmap: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"cogmap: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
