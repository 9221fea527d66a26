#!/usr/bin/env python3
"""Dry-run of the desk-scale experiment for hyperparameter calibration."""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from hbeo.beo import fit_class_gmm
from hbeo.jointnet import LossWeights, OptimizerConfig, desk_spec, init_network, train
from hbeo.pipeline.dataset import DatasetConfig, build_train_samples, class_training_vectors, generate_dataset
from hbeo.pipeline.evaluate import benchmark_runtime, evaluate
from hbeo.pipeline.model_io import ModelBundle, save_model
from hbeo.subspace import VBPCAConfig, build_shared_basis, fit_class_subspace


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--workdir", default="/tmp/desk_calib")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--lr", type=float, default=1e-2)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--views", type=int, default=25)
    ap.add_argument("--train-per-class", type=int, default=60)
    ap.add_argument("--test-per-class", type=int, default=20)
    ap.add_argument("--variance-target", type=float, default=0.6)
    ap.add_argument("--skip-bench", action="store_true")
    args = ap.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    t_start = time.time()

    cfg = DatasetConfig(
        train_per_class=args.train_per_class,
        test_per_class=args.test_per_class,
        views_per_object=args.views,
    )
    t = time.time()
    manifest = generate_dataset(work, cfg, seed=args.seed)
    print(f"[gen] {len(manifest.records)} renders in {time.time()-t:.1f}s", flush=True)

    t = time.time()
    vectors, cache = class_training_vectors(manifest, work)
    vb = VBPCAConfig(variance_target=args.variance_target)
    subs = [fit_class_subspace(vectors[c], vb, class_id=c, resolution=cfg.resolution) for c in manifest.class_ids]
    basis = build_shared_basis(subs)
    print(f"[subspace] k_i={[s.n_components for s in subs]} shared k={basis.k} in {time.time()-t:.1f}s", flush=True)

    t = time.time()
    gmms = []
    for c in manifest.class_ids:
        paths = [p for p in manifest.mesh_paths("train") if any(r.mesh_path == p and r.class_id == c for r in manifest.records)]
        proj = np.array([cache.coefficients(p, basis) for p in paths])
        gmms.append(fit_class_gmm(proj, 2, class_id=c, seed=args.seed))
    print(f"[gmm] fitted in {time.time()-t:.1f}s", flush=True)

    t = time.time()
    samples, cache = build_train_samples(manifest, work, basis, "train", cache)
    print(f"[label] {len(samples)} samples in {time.time()-t:.1f}s", flush=True)

    t = time.time()
    net = init_network(desk_spec(len(manifest.class_ids), basis.k), seed=args.seed)
    opt = OptimizerConfig(learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs, seed=args.seed)
    net, curve = train(net, samples, LossWeights(), opt)
    print(f"[train] {args.epochs} epochs in {time.time()-t:.1f}s", flush=True)
    print("[train] curve:", " ".join(f"{c:.4f}" for c in curve), flush=True)

    bundle = ModelBundle(basis, gmms, net)
    save_model(work / "model.hbeo", bundle)

    t = time.time()
    report = evaluate(manifest, work, bundle, modes=("hbeo",), cache=cache)
    print(f"[eval] in {time.time()-t:.1f}s", flush=True)
    summary = report.to_dict()["modes"]["hbeo"]
    print(json.dumps(summary, indent=1), flush=True)
    total_min = (time.time() - t_start) / 60
    acc = summary["accuracy"]["total"]
    pose_deg = np.degrees(summary["pose_error_rad"]["mean"])
    ratio = summary["completion_edt_mean"] / summary["completion_edt_floor_mean"]
    print(f"[RESULT] total={total_min:.1f}min acc={acc:.1f}% pose={pose_deg:.1f}deg edt_ratio={ratio:.3f}", flush=True)

    if not args.skip_bench:
        t = time.time()
        timings = benchmark_runtime(bundle, manifest, work, repetitions=3)
        print(f"[bench] in {time.time()-t:.1f}s:", json.dumps({k: v for k, v in timings.items() if k != 'beo_search'}), flush=True)
        print("[bench] beo:", json.dumps({str(k): round(v, 4) for k, v in timings["beo_search"].items()}), flush=True)


if __name__ == "__main__":
    main()
