"""Dataset synthesis: meshes, rendered depth views, and the line-JSON manifest.

Everything is a pure function of (inputs, config, seed). Mesh and view seeds
derive from one SeedSequence so regenerating with the same seed reproduces
identical files byte for byte.

Render targets for network training depend on the shared basis, which is fit
from this dataset, so target projections are attached in a separate labeling
step (`build_train_samples`) once the basis exists.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..geom3d.carve import PartialObservation  # noqa: F401  (re-exported for callers)
from ..geom3d.mesh import TriangleMesh, load_off, write_off
from ..geom3d.render import CameraIntrinsics, default_camera, load_depth_pgm, render_depth, save_depth_pgm
from ..geom3d.rotation import Rotation, random_rotation
from ..geom3d.voxel import voxelize
from ..ioutil import atomic_write_text
from ..jointnet import TrainSample, normalize_depth
from ..subspace import SharedBasis, project
from .shapes import DESK_CLASS_IDS, make_class_mesh

# Reference configuration of the original large-scale experiments; kept as
# documentation only — generating it needs ~7M renders and is out of scope.
FULL_SCALE_REFERENCE = {
    "image_width": 320,
    "image_height": 240,
    "training_objects": 3991,
    "total_objects": 4889,
    "num_classes": 10,
    "resolution": 30,
    "voxel_dimension": 27000,
    "shared_dimensions": 344,
    "approx_renders": 7_000_000,
}


@dataclass
class DatasetConfig:
    class_ids: tuple = DESK_CLASS_IDS
    train_per_class: int = 60
    test_per_class: int = 20
    views_per_object: int = 25
    resolution: int = 16
    image_width: int = 64
    image_height: int = 48
    camera_distance: float = 2.0
    # Max pose angle 75deg: half-turn-symmetric shapes (ellipsoids) then have
    # no symmetric counterpart inside the sampled range, so pose targets stay
    # unique; also well clear of the axis-angle seam at pi.
    max_pose_angle: float = math.radians(75.0)

    def camera(self) -> CameraIntrinsics:
        return default_camera(self.image_width, self.image_height, self.camera_distance)


@dataclass(frozen=True)
class RenderRecord:
    mesh_path: str
    class_id: str
    split: str
    render_id: str
    rotation: Rotation
    camera: CameraIntrinsics

    def to_json(self) -> str:
        return json.dumps(
            {
                "mesh": self.mesh_path,
                "class": self.class_id,
                "split": self.split,
                "render_id": self.render_id,
                "axis_angle": list(self.rotation.axis_angle),
                "camera": self.camera.to_dict(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "RenderRecord":
        d = json.loads(line)
        return cls(
            d["mesh"],
            d["class"],
            d["split"],
            d["render_id"],
            Rotation(np.asarray(d["axis_angle"])),
            CameraIntrinsics.from_dict(d["camera"]),
        )


@dataclass
class DatasetManifest:
    records: list
    seed: int
    resolution: int
    image_width: int
    image_height: int
    class_ids: tuple

    def __post_init__(self):
        train_meshes = {r.mesh_path for r in self.records if r.split == "train"}
        test_meshes = {r.mesh_path for r in self.records if r.split == "test"}
        if train_meshes & test_meshes:
            raise ValueError("train/test splits share meshes")
        for split_meshes, split in ((train_meshes, "train"), (test_meshes, "test")):
            classes = {r.class_id for r in self.records if r.split == split}
            missing = set(self.class_ids) - classes
            if missing:
                raise ValueError(f"classes {sorted(missing)} absent from {split} split")

    def split(self, tag: str):
        return [r for r in self.records if r.split == tag]

    def mesh_paths(self, tag: str):
        seen = []
        for r in self.records:
            if r.split == tag and r.mesh_path not in seen:
                seen.append(r.mesh_path)
        return seen


def save_manifest(manifest: DatasetManifest, path) -> None:
    head = json.dumps(
        {
            "seed": manifest.seed,
            "resolution": manifest.resolution,
            "image_width": manifest.image_width,
            "image_height": manifest.image_height,
            "class_ids": list(manifest.class_ids),
        },
        sort_keys=True,
    )
    lines = [head] + [r.to_json() for r in manifest.records]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_manifest(path) -> DatasetManifest:
    lines = Path(path).read_text().splitlines()
    head = json.loads(lines[0])
    records = [RenderRecord.from_json(line) for line in lines[1:] if line.strip()]
    return DatasetManifest(
        records,
        head["seed"],
        head["resolution"],
        head["image_width"],
        head["image_height"],
        tuple(head["class_ids"]),
    )


def _scan_external_meshes(mesh_dir: Path, class_ids):
    """ModelNet-style layout: <dir>/<class>/{train,test}/*.off."""
    found = {}
    for class_dir in sorted(p for p in mesh_dir.iterdir() if p.is_dir()):
        cid = class_dir.name
        if class_ids and cid not in class_ids:
            continue
        for split in ("train", "test"):
            split_dir = class_dir / split
            if not split_dir.is_dir():
                continue
            found.setdefault(cid, {}).setdefault(split, []).extend(sorted(split_dir.glob("*.off")))
    return found


def generate_dataset(
    out_dir,
    cfg: DatasetConfig,
    seed: int,
    external_mesh_dir=None,
    max_meshes_per_class: int | None = None,
) -> DatasetManifest:
    """Write meshes (procedural case), depth renders, and the manifest.

    With `external_mesh_dir` set, OFF files under per-class train/test
    directories are used instead of procedural generation.
    """
    if cfg.views_per_object < 1:
        raise ValueError("views_per_object must be >= 1")
    out_dir = Path(out_dir)
    camera = cfg.camera()
    seed_root = np.random.SeedSequence(seed)

    mesh_table = []  # (class_id, split, mesh_path, TriangleMesh or None)
    if external_mesh_dir is None:
        mesh_seeds = seed_root.spawn(len(cfg.class_ids))
        for cid, cls_seed in zip(cfg.class_ids, mesh_seeds):
            rng = np.random.default_rng(cls_seed)
            for split, count in (("train", cfg.train_per_class), ("test", cfg.test_per_class)):
                for i in range(count):
                    mesh = make_class_mesh(cid, rng)
                    rel = f"meshes/{cid}/{split}_{i:03d}.off"
                    write_off(mesh, out_dir / rel)
                    mesh_table.append((cid, split, rel, mesh))
    else:
        found = _scan_external_meshes(Path(external_mesh_dir), set(cfg.class_ids) if cfg.class_ids else None)
        if not found:
            raise ValueError(f"no class/train|test OFF layout under {external_mesh_dir}")
        for cid in sorted(found):
            for split in ("train", "test"):
                paths = found[cid].get(split, [])
                if max_meshes_per_class:
                    limit = max_meshes_per_class if split == "train" else max(1, max_meshes_per_class // 3)
                    paths = paths[:limit]
                for p in paths:
                    mesh_table.append((cid, split, str(p), None))
        cfg = replace(cfg, class_ids=tuple(sorted(found)))

    view_seeds = seed_root.spawn(1)[0]
    rng_views = np.random.default_rng(view_seeds)
    records = []
    for cid, split, mesh_path, mesh in mesh_table:
        if mesh is None:
            mesh = load_off(Path(mesh_path).read_bytes())
        stem = Path(mesh_path).stem
        for v in range(cfg.views_per_object):
            rot = random_rotation(rng_views, cfg.max_pose_angle)
            render_id = f"{cid}_{split}_{stem}_v{v:02d}"
            try:
                img = render_depth(mesh, rot, camera)
            except Exception as exc:
                raise RuntimeError(f"render failed for {mesh_path} view {v}: {exc}") from exc
            save_depth_pgm(img, out_dir / "renders" / f"{render_id}.pgm")
            records.append(RenderRecord(mesh_path, cid, split, render_id, rot, camera))

    manifest = DatasetManifest(
        records, seed, cfg.resolution, cfg.image_width, cfg.image_height, tuple(cfg.class_ids)
    )
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest


def _resolve_mesh(root: Path, mesh_path: str) -> TriangleMesh:
    p = Path(mesh_path)
    if not p.is_absolute():
        p = root / p
    return load_off(p.read_bytes())


class VoxelizationCache:
    """Per-mesh voxelization and projection targets, computed once."""

    def __init__(self, root, resolution: int):
        self.root = Path(root)
        self.resolution = resolution
        self._grids = {}
        self._coeffs = {}

    def grid(self, mesh_path: str):
        if mesh_path not in self._grids:
            mesh = _resolve_mesh(self.root, mesh_path)
            self._grids[mesh_path] = voxelize(mesh, self.resolution)
        return self._grids[mesh_path]

    def coefficients(self, mesh_path: str, basis: SharedBasis):
        if mesh_path not in self._coeffs:
            self._coeffs[mesh_path] = project(self.grid(mesh_path).values, basis)
        return self._coeffs[mesh_path]


def class_training_vectors(manifest: DatasetManifest, root, cache: VoxelizationCache | None = None):
    """Flattened binary voxel vectors of the train-split meshes, per class."""
    cache = cache or VoxelizationCache(root, manifest.resolution)
    by_class = {cid: [] for cid in manifest.class_ids}
    for mesh_path in manifest.mesh_paths("train"):
        record = next(r for r in manifest.records if r.mesh_path == mesh_path)
        by_class[record.class_id].append(cache.grid(mesh_path).values)
    return {cid: np.asarray(v) for cid, v in by_class.items()}, cache


def build_train_samples(
    manifest: DatasetManifest,
    root,
    basis: SharedBasis,
    split: str = "train",
    cache: VoxelizationCache | None = None,
):
    """Label renders with projection targets and assemble training records."""
    root = Path(root)
    cache = cache or VoxelizationCache(root, manifest.resolution)
    class_index = {cid: i for i, cid in enumerate(manifest.class_ids)}
    samples = []
    for record in manifest.split(split):
        img = load_depth_pgm(root / "renders" / f"{record.render_id}.pgm")
        samples.append(
            TrainSample(
                depth=normalize_depth(img),
                class_index=class_index[record.class_id],
                pose=record.rotation,
                target_projection=cache.coefficients(record.mesh_path, basis),
            )
        )
    return samples, cache
