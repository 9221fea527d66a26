"""Command-line entry point for every pipeline stage.

Commands: gen-data, fit-subspace, fit-gmm, train-net, infer, complete, eval,
bench, inspect. A JSON config file supplies defaults; `--key value` flags
(dotted paths for nested sections) override it field by field. All outputs
are written atomically; logs go to stderr and machine-readable results to
files or stdout. Exit codes: 0 success, 1 usage error, 2 data/model error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .beo import ClassGMM, PoseSearchConfig, PoseSearchError, fit_class_gmm
from .geom3d.carve import carve_partial_observation
from .geom3d.mesh import OffParseError
from .geom3d.render import CameraIntrinsics, default_camera, load_depth_pgm
from .geom3d.rotation import Rotation, canonicalize
from .geom3d.voxel import grid_surface_mesh, save_ply, save_voxel_grid
from .ioutil import atomic_write_text
from .jointnet import (
    LossWeights,
    NetworkSpec,
    OptimizerConfig,
    count_parameters,
    infer_joint,
    init_network,
    train,
)
from .pipeline.dataset import (
    DatasetConfig,
    build_train_samples,
    class_training_vectors,
    generate_dataset,
    load_manifest,
)
from .pipeline.evaluate import benchmark_runtime, evaluate, write_timing_csv
from .pipeline.model_io import ModelBundle, ModelFormatError, load_model, save_model
from .subspace import ConvergenceError, SolverConfig, VBPCAConfig, back_project, build_shared_basis, fit_class_subspace, solve_partial_projection

log = logging.getLogger("hbeo")


class UsageError(ValueError):
    pass


@dataclass
class NetworkConfig:
    conv_channels: tuple = (8, 16, 32, 64)
    conv_kernel: int = 5
    fc_widths: tuple = (256, 128, 64)

    def spec(self, image_width: int, image_height: int, num_classes: int, projection_dim: int) -> NetworkSpec:
        convs = tuple((c, self.conv_kernel) for c in self.conv_channels)
        return NetworkSpec(image_width, image_height, convs, tuple(self.fc_widths), num_classes, projection_dim)


@dataclass
class GmmConfig:
    n_components: int = 2
    floor: float | None = None


@dataclass
class SearchGridConfig:
    axis_count: int = 12
    angle_count: int = 6
    max_angle: float = math.radians(75.0)
    include_identity: bool = True

    def build(self) -> PoseSearchConfig:
        return PoseSearchConfig.grid(self.axis_count, self.angle_count, self.max_angle, self.include_identity)


@dataclass
class RunConfig:
    seed: int | None = None  # mandatory: no wall-clock seeding anywhere
    data_dir: str = "data"
    model_path: str = "model.hbeo"
    report_dir: str = "reports"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    vbpca: VBPCAConfig = field(default_factory=VBPCAConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    search: SearchGridConfig = field(default_factory=SearchGridConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    gmm: GmmConfig = field(default_factory=GmmConfig)


_SECTION_TYPES = {
    "dataset": DatasetConfig,
    "vbpca": VBPCAConfig,
    "solver": SolverConfig,
    "search": SearchGridConfig,
    "network": NetworkConfig,
    "optimizer": OptimizerConfig,
    "loss_weights": LossWeights,
    "gmm": GmmConfig,
}


def _build_section(cls, data: dict, prefix: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise UsageError(f"unknown config key {prefix}{key}")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    top_fields = {f.name for f in fields(RunConfig)}
    kwargs = {}
    for key, value in data.items():
        if key not in top_fields:
            raise UsageError(f"unknown config key {key}")
        if key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise UsageError(f"config section {key} must be an object")
            kwargs[key] = _build_section(_SECTION_TYPES[key], value, key + ".")
        else:
            kwargs[key] = value
    return RunConfig(**kwargs)


def config_to_dict(cfg: RunConfig) -> dict:
    def unwrap(value):
        if dataclasses.is_dataclass(value):
            return {f.name: unwrap(getattr(value, f.name)) for f in fields(value)}
        if isinstance(value, tuple):
            return [unwrap(v) for v in value]
        return value

    return unwrap(cfg)


def _parse_override_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: dict) -> dict:
    for dotted, raw in overrides.items():
        parts = dotted.split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise UsageError(f"cannot override through non-object key {part}")
        node[parts[-1]] = _parse_override_value(raw) if isinstance(raw, str) else raw
    return data


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """JSON config plus field-by-field flag overrides; seed is mandatory."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"malformed config JSON: {exc}") from None
    data = apply_overrides(data, overrides or {})
    cfg = config_from_dict(data)
    if cfg.seed is None:
        raise UsageError("config must set a seed (wall-clock seeding is not allowed)")
    return cfg


def echo_config(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir) / "resolved_config.json"
    atomic_write_text(out, json.dumps(config_to_dict(cfg), indent=2, sort_keys=True))
    return out


def _load_bundle(path) -> ModelBundle:
    try:
        return load_model(path)
    except FileNotFoundError:
        raise DataError(f"model file not found: {path}") from None


class DataError(RuntimeError):
    pass


def cmd_gen_data(cfg: RunConfig, args) -> int:
    out = Path(cfg.data_dir)
    manifest = generate_dataset(
        out,
        cfg.dataset,
        seed=cfg.seed,
        external_mesh_dir=args.meshes,
        max_meshes_per_class=args.max_meshes_per_class,
    )
    echo_config(cfg, out)
    log.info("wrote %d renders under %s", len(manifest.records), out)
    print(json.dumps({"records": len(manifest.records), "manifest": str(out / "manifest.jsonl")}))
    return 0


def cmd_fit_subspace(cfg: RunConfig, args) -> int:
    manifest = load_manifest(Path(cfg.data_dir) / "manifest.jsonl")
    vectors, _ = class_training_vectors(manifest, cfg.data_dir)
    subspaces = []
    for cid in manifest.class_ids:
        log.info("fitting subspace for class %s (%d meshes)", cid, vectors[cid].shape[0])
        subspaces.append(fit_class_subspace(vectors[cid], cfg.vbpca, class_id=cid, resolution=manifest.resolution))
    basis = build_shared_basis(subspaces)
    save_model(cfg.model_path, ModelBundle(basis))
    log.info("shared basis: d=%d k=%d -> %s", basis.d, basis.k, cfg.model_path)
    print(json.dumps({"d": basis.d, "k": basis.k, "per_class": [s.n_components for s in subspaces]}))
    return 0


def cmd_fit_gmm(cfg: RunConfig, args) -> int:
    bundle = _load_bundle(cfg.model_path)
    manifest = load_manifest(Path(cfg.data_dir) / "manifest.jsonl")
    from .pipeline.dataset import VoxelizationCache

    cache = VoxelizationCache(cfg.data_dir, manifest.resolution)
    gmms = []
    for cid in manifest.class_ids:
        paths = [p for p in manifest.mesh_paths("train") if _mesh_class(manifest, p) == cid]
        coeffs = np.array([cache.coefficients(p, bundle.basis) for p in paths])
        gmms.append(fit_class_gmm(coeffs, cfg.gmm.n_components, cfg.gmm.floor, class_id=cid, seed=cfg.seed))
    bundle.gmms = gmms
    save_model(cfg.model_path, bundle)
    log.info("fitted %d class GMMs -> %s", len(gmms), cfg.model_path)
    print(json.dumps({"classes": list(manifest.class_ids), "components": [g.n_components for g in gmms]}))
    return 0


def _mesh_class(manifest, mesh_path: str) -> str:
    return next(r.class_id for r in manifest.records if r.mesh_path == mesh_path)


def cmd_train_net(cfg: RunConfig, args) -> int:
    bundle = _load_bundle(cfg.model_path)
    manifest = load_manifest(Path(cfg.data_dir) / "manifest.jsonl")
    samples, _ = build_train_samples(manifest, cfg.data_dir, bundle.basis, "train")
    spec = cfg.network.spec(
        manifest.image_width, manifest.image_height, len(manifest.class_ids), bundle.basis.k
    )
    net = init_network(spec, seed=cfg.seed)
    log.info("training %d-parameter network on %d samples", count_parameters(net), len(samples))
    net, curve = train(net, samples, cfg.loss_weights, cfg.optimizer)
    bundle.network = net
    save_model(cfg.model_path, bundle)
    log.info("final epoch loss %.4f -> %s", curve[-1], cfg.model_path)
    print(json.dumps({"epochs": len(curve), "loss_curve": [round(c, 6) for c in curve]}))
    return 0


def _parse_pose(text: str) -> Rotation:
    try:
        parts = [float(t) for t in text.split(",")]
        if len(parts) != 3:
            raise ValueError
    except ValueError:
        raise UsageError("--pose expects three comma-separated numbers") from None
    return canonicalize(np.asarray(parts))


def cmd_infer(cfg: RunConfig, args) -> int:
    bundle = _load_bundle(args.model or cfg.model_path)
    if bundle.network is None:
        raise DataError("model has no trained network; run train-net first")
    depth = load_depth_pgm(args.depth)
    result = infer_joint(bundle.network, depth, bundle.basis)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    posterior = {cid: float(p) for cid, p in zip(bundle.basis.class_ids, result.posterior)}
    atomic_write_text(out / "class_posterior.json", json.dumps(posterior, indent=2, sort_keys=True))
    atomic_write_text(
        out / "pose.json",
        json.dumps(
            {"axis_angle": list(result.rotation.axis_angle), "angle_deg": math.degrees(result.rotation.angle)},
            indent=2,
        ),
    )
    save_voxel_grid(result.completion, out / "completion.hbvx")
    if args.ply:
        verts, faces = grid_surface_mesh(result.completion)
        save_ply(out / "completion.ply", verts, faces)
    print(json.dumps({"class": result.class_id, "posterior": posterior, "out": str(out)}))
    return 0


def cmd_complete(cfg: RunConfig, args) -> int:
    bundle = _load_bundle(args.model or cfg.model_path)
    depth = load_depth_pgm(args.depth)
    pose = _parse_pose(args.pose)
    camera = default_camera(depth.width, depth.height, cfg.dataset.camera_distance)
    resolution = bundle.basis.resolution
    obs = carve_partial_observation(depth, pose, camera, resolution)
    solver = cfg.solver if args.lasso is None else dataclasses.replace(cfg.solver, lasso_lambda=args.lasso)
    coeffs = solve_partial_projection(obs, bundle.basis, solver)
    completion = back_project(coeffs, bundle.basis, binarize=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_voxel_grid(completion, out / "completion.hbvx")
    if args.ply:
        verts, faces = grid_surface_mesh(completion)
        save_ply(out / "completion.ply", verts, faces)
    print(json.dumps({"known_voxels": obs.num_known, "occupied": completion.occupied_count(), "out": str(out)}))
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    bundle = _load_bundle(args.model or cfg.model_path)
    manifest = load_manifest(Path(cfg.data_dir) / "manifest.jsonl")
    modes = tuple(m.strip() for m in args.modes.split(",") if m.strip())
    search = None
    if "beo-search" in modes:
        grid = cfg.search
        if args.R is not None:
            if args.R % grid.axis_count:
                raise UsageError(f"--R must be a multiple of axis_count {grid.axis_count}")
            grid = dataclasses.replace(grid, angle_count=args.R // grid.axis_count, include_identity=False)
        search = grid.build()
    report = evaluate(manifest, cfg.data_dir, bundle, modes=modes, solver=cfg.solver, search=search)
    report_dir = Path(cfg.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    report.write(report_dir)
    echo_config(cfg, report_dir)
    print(json.dumps(report.to_dict()["modes"], indent=2, sort_keys=True))
    return 0


def cmd_bench(cfg: RunConfig, args) -> int:
    bundle = _load_bundle(args.model or cfg.model_path)
    manifest = load_manifest(Path(cfg.data_dir) / "manifest.jsonl")
    sizes = tuple(int(t) for t in args.R_list.split(","))
    timings = benchmark_runtime(
        bundle,
        manifest,
        cfg.data_dir,
        repetitions=args.repetitions,
        grid_sizes=sizes,
        max_angle=cfg.search.max_angle,
        solver=cfg.solver,
    )
    report_dir = Path(cfg.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    write_timing_csv(timings, report_dir / "timing_table.csv")
    echo_config(cfg, report_dir)
    print(json.dumps(timings, indent=2, sort_keys=True))
    return 0


def cmd_inspect(args) -> int:
    bundle = _load_bundle(args.model)
    basis = bundle.basis
    print(f"d: {basis.d}")
    print(f"k: {basis.k}")
    print(f"resolution: {basis.resolution}")
    print(f"classes ({len(basis.class_ids)}): {', '.join(basis.class_ids)}")
    if bundle.gmms:
        sizes = ", ".join(f"{g.class_id}={g.n_components}" for g in bundle.gmms)
        print(f"gmm components: {sizes}")
    else:
        print("gmm components: none")
    if bundle.network:
        spec = bundle.network.spec
        print(f"network: input {spec.input_width}x{spec.input_height}, {count_parameters(bundle.network)} parameters")
        sizes = spec.conv_spatial_sizes()
        for i, ((ch, kern), (h, w)) in enumerate(zip(spec.conv_layers, sizes)):
            print(f"  conv{i}: {ch} ch, {kern}x{kern} kernel, stride 2 -> {h}x{w}")
        for i, width in enumerate(spec.fc_widths):
            print(f"  fc{i}: {width}")
        print(f"  heads: class={spec.num_classes}, pose=3, projection={spec.projection_dim}")
    else:
        print("network: none")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "fit-subspace": cmd_fit_subspace,
    "fit-gmm": cmd_fit_gmm,
    "train-net": cmd_train_net,
    "infer": cmd_infer,
    "complete": cmd_complete,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hbeo", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", default=None, help="override config seed")
        p.add_argument("--data-dir", dest="data_dir", default=None)
        p.add_argument("--model", default=None, help="model container path")
        p.add_argument("--report-dir", dest="report_dir", default=None)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted config override")

    p = sub.add_parser("gen-data", help="synthesize meshes and depth renders")
    common(p)
    p.add_argument("--meshes", default=None, help="external OFF directory (class/train|test layout)")
    p.add_argument("--max-meshes-per-class", type=int, default=None)

    for name in ("fit-subspace", "fit-gmm", "train-net"):
        common(sub.add_parser(name))

    p = sub.add_parser("infer", help="single-shot joint inference on one depth image")
    common(p)
    p.add_argument("--depth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ply", action="store_true", help="also export an isosurface mesh")

    p = sub.add_parser("complete", help="carve + partial projection completion at a given pose")
    common(p)
    p.add_argument("--depth", required=True)
    p.add_argument("--pose", required=True, help="axis-angle as x,y,z")
    p.add_argument("--lasso", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--ply", action="store_true")

    p = sub.add_parser("eval", help="run inference modes over the test split")
    common(p)
    p.add_argument("--modes", default="hbeo")
    p.add_argument("--R", type=int, default=None, help="candidate rotation count for beo-search")

    p = sub.add_parser("bench", help="runtime benchmark")
    common(p)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--R-list", dest="R_list", default="72,288,576,1152")

    p = sub.add_parser("inspect", help="print model container metadata")
    p.add_argument("model")
    return parser


def _resolve_config(args) -> RunConfig:
    overrides = {}
    for key in ("seed", "data_dir", "model_path", "report_dir"):
        flag = {"model_path": "model"}.get(key, key)
        value = getattr(args, flag, None)
        if value is not None and key != "model_path":
            overrides[key] = value
    if getattr(args, "model", None) is not None:
        overrides["model_path"] = args.model
    for item in getattr(args, "set", []):
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key] = value
    return load_config(args.config, overrides)


def run_command(argv) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    parser = _make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        if args.command == "inspect":
            return cmd_inspect(args)
        cfg = _resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        log.error("%s", exc)
        return 1
    except (DataError, ModelFormatError, OffParseError, ConvergenceError, PoseSearchError) as exc:
        log.error("%s", exc)
        return 2
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        log.error("%s", exc)
        return 2


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
