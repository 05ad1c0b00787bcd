"""Experiment orchestration: staged dataset generation, two training stages,
held-out evaluation against the single-shot / stacked / mean-latent baselines,
and the ablation grid. Every stage writes a manifest keyed by a hash of its
configuration and upstream hashes; a rerun with identical hashes is skipped.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import shutil
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import aggregator as agg
from . import metrics
from .config import ExperimentConfig, to_json
from .geometry import PointCloud
from .lidar_sim import SweepInstance, generate_instance, load_instance, save_instance
from .mesh import TriangleMesh, load_mesh_obj, save_mesh_obj
from .sdf_model import (SdfSampleSet, generate_sdf_samples, infer_latent_stacked,
                        infer_latents_batch, load_codebook, load_decoder,
                        load_latent, reconstruct, save_codebook, save_decoder,
                        save_latent, train_stage_one)
from .seeding import sub_seed
from .vehicles import gen_vehicle_mesh

log = logging.getLogger("sweeprecon")

METHOD_OURS = "ours"
METHOD_BEST_SINGLE = "deepsdf_best_single"
METHOD_MS = "deepsdf_ms"
METHOD_MEAN = "mean_latent"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def _hash_key(key: dict) -> str:
    return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()


def _cfgdict(obj) -> dict:
    return dataclasses.asdict(obj)


def _run_stage(out_dir: Path, name: str, key: dict, build) -> str:
    """Run one stage unless its manifest hash matches; returns the hash."""
    stage_dir = Path(out_dir) / name
    manifest_path = stage_dir / "manifest.json"
    h = _hash_key(key)
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("hash") == h and all(
            (stage_dir / o).exists() for o in manifest.get("outputs", [])
        ):
            log.info("stage %-16s up to date, skipping", name)
            return h
    log.info("stage %-16s running", name)
    if stage_dir.exists():
        shutil.rmtree(stage_dir)
    stage_dir.mkdir(parents=True)
    try:
        build(stage_dir)
    except Exception as exc:
        shutil.rmtree(stage_dir, ignore_errors=True)
        raise StageError(name, exc) from exc
    outputs = sorted(
        str(p.relative_to(stage_dir)) for p in stage_dir.rglob("*") if p.is_file()
    )
    manifest_path.write_text(
        json.dumps({"hash": h, "outputs": outputs}, sort_keys=True, indent=1)
    )
    return h


def _instance_names(cfg: ExperimentConfig) -> List[str]:
    return [f"train_{i:02d}" for i in range(cfg.n_train)] + [
        f"heldout_{i:02d}" for i in range(cfg.n_heldout)
    ]


# ---------------------------------------------------------------------------
# Individual stages
# ---------------------------------------------------------------------------


def stage_gen_shapes(cfg: ExperimentConfig, out_dir) -> str:
    key = {
        "stage": "shapes",
        "seed": cfg.seed,
        "n_train": cfg.n_train,
        "n_heldout": cfg.n_heldout,
        "vehicle": _cfgdict(cfg.vehicle),
    }

    def build(d: Path):
        rng = np.random.default_rng(sub_seed(cfg.seed, "shapes"))
        for name in _instance_names(cfg):
            save_mesh_obj(gen_vehicle_mesh(cfg.vehicle, rng), d / f"{name}.obj")

    return _run_stage(out_dir, "shapes", key, build)


def stage_sample_sdf(cfg: ExperimentConfig, out_dir) -> str:
    up = stage_gen_shapes(cfg, out_dir)
    key = {"stage": "samples", "up": up, "seed": cfg.seed,
           "stage_one": _cfgdict(cfg.stage_one)}

    def build(d: Path):
        so = cfg.stage_one
        for i in range(cfg.n_train):
            name = f"train_{i:02d}"
            mesh = load_mesh_obj(Path(out_dir) / "shapes" / f"{name}.obj")
            samples = generate_sdf_samples(
                mesh, so.n_surface, so.n_uniform, so.offsets,
                seed=sub_seed(cfg.seed, f"sdf/{name}"))
            np.savez(d / f"{name}.npz", queries=samples.queries, sdf=samples.sdf,
                     counts=[samples.n_surface_derived, samples.n_free_space])

    return _run_stage(out_dir, "samples", key, build)


def _load_samples(path) -> SdfSampleSet:
    data = np.load(path)
    return SdfSampleSet(data["queries"], data["sdf"],
                        int(data["counts"][0]), int(data["counts"][1]))


def stage_train_decoder(cfg: ExperimentConfig, out_dir) -> str:
    up = stage_sample_sdf(cfg, out_dir)
    key = {"stage": "decoder", "up": up, "seed": cfg.seed,
           "decoder": _cfgdict(cfg.decoder), "stage_one": _cfgdict(cfg.stage_one)}

    def build(d: Path):
        names = [f"train_{i:02d}" for i in range(cfg.n_train)]
        sets = [_load_samples(Path(out_dir) / "samples" / f"{n}.npz") for n in names]
        decoder, codebook, history = train_stage_one(
            sets, cfg.decoder, epochs=cfg.stage_one.epochs, lr=cfg.stage_one.lr,
            seed=sub_seed(cfg.seed, "stage1"), shape_ids=names,
            batch_size=cfg.stage_one.batch_size)
        save_decoder(decoder, d / "decoder.bin")
        save_codebook(codebook, d / "codebook")
        (d / "history.json").write_text(json.dumps(history))
        log.info("stage one loss: %.4f -> %.4f", history[0], history[-1])

    return _run_stage(out_dir, "decoder", key, build)


def stage_gen_sweeps(cfg: ExperimentConfig, out_dir) -> str:
    up_shapes = stage_gen_shapes(cfg, out_dir)
    up_dec = stage_train_decoder(cfg, out_dir)
    key = {"stage": "instances", "up": [up_shapes, up_dec], "seed": cfg.seed,
           "max_sweeps": cfg.max_sweeps, "lidar": _cfgdict(cfg.lidar)}

    def build(d: Path):
        codebook = load_codebook(Path(out_dir) / "decoder" / "codebook")
        for name in _instance_names(cfg):
            mesh = load_mesh_obj(Path(out_dir) / "shapes" / f"{name}.obj")
            instance = generate_instance(
                mesh, B=cfg.max_sweeps, config=cfg.lidar,
                seed=sub_seed(cfg.seed, f"instance/{name}"), shape_id=name)
            if name in codebook:
                instance.gt_latent = codebook[name]
            save_instance(instance, d / name)

    return _run_stage(out_dir, "instances", key, build)


def stage_infer_latents(cfg: ExperimentConfig, out_dir) -> str:
    up = stage_gen_sweeps(cfg, out_dir)
    key = {"stage": "latents", "up": up, "seed": cfg.seed,
           "infer": _cfgdict(cfg.infer)}

    def build(d: Path):
        decoder = load_decoder(Path(out_dir) / "decoder" / "decoder.bin")
        for name in _instance_names(cfg):
            instance = load_instance(Path(out_dir) / "instances" / name)
            codes = infer_latents_batch(
                decoder, instance.sweeps, iters=cfg.infer.iters, lr=cfg.infer.lr,
                seed=sub_seed(cfg.seed, f"infer/{name}"),
                offsets=cfg.infer.offsets, max_points=cfg.infer.max_points)
            inst_dir = d / name
            inst_dir.mkdir(parents=True)
            for i, code in enumerate(codes):
                save_latent(code, inst_dir / f"latent_{i}.bin")
            log.info("inferred %d latents for %s", len(codes), name)

    return _run_stage(out_dir, "latents", key, build)


def _load_latents(out_dir, name: str, count: int) -> List[np.ndarray]:
    d = Path(out_dir) / "latents" / name
    return [load_latent(d / f"latent_{i}.bin") for i in range(count)]


def _encoder_config(cfg: ExperimentConfig, points: int, merge: str
                    ) -> agg.EncoderConfig:
    widths = tuple(cfg.encoder_widths)
    if merge == "multiply":
        widths = widths[:-1] + (cfg.decoder.latent_dim,)
    return agg.EncoderConfig(widths=widths, points_per_cloud=points)


def _train_aggregator(cfg: ExperimentConfig, out_dir, B: int, points: int,
                      merge: str, pool: str, use_latents: bool = True,
                      use_mapping: bool = True):
    """Stage-two training on the train instances; shared seed across variants
    so ablation cells are paired."""
    enc = _encoder_config(cfg, points, merge)
    if not use_latents:
        enc = agg.EncoderConfig(widths=tuple(cfg.encoder_widths[:-1])
                                + (cfg.decoder.latent_dim,),
                                points_per_cloud=points)
    acfg = agg.AggregatorConfig(merge=merge, pool=pool,
                                latent_dim=cfg.decoder.latent_dim,
                                use_latents=use_latents, use_mapping=use_mapping)
    dataset = []
    for i in range(cfg.n_train):
        name = f"train_{i:02d}"
        instance = load_instance(Path(out_dir) / "instances" / name)
        latents = _load_latents(out_dir, name, cfg.max_sweeps)
        dataset.append(agg.TrainingExample(
            clouds=instance.sweeps[:B], latents=latents[:B],
            z_gt=instance.gt_latent))
    params, history = agg.train_stage_two(
        dataset, enc, acfg, epochs=cfg.stage_two.epochs, lr=cfg.stage_two.lr,
        seed=sub_seed(cfg.seed, "stage2"))
    # quantize to checkpoint precision so in-memory weights match a reload
    for t in params.values():
        t.data = t.data.astype("<f4").astype(np.float64)
    return params, enc, acfg, history


def stage_train_aggregator(cfg: ExperimentConfig, out_dir) -> str:
    up = stage_infer_latents(cfg, out_dir)
    key = {"stage": "aggregator", "up": up, "seed": cfg.seed, "B": cfg.B,
           "points": cfg.points_per_cloud, "merge": cfg.merge, "pool": cfg.pool,
           "stage_two": _cfgdict(cfg.stage_two),
           "encoder_widths": list(cfg.encoder_widths)}

    def build(d: Path):
        params, enc, acfg, history = _train_aggregator(
            cfg, out_dir, cfg.B, cfg.points_per_cloud, cfg.merge, cfg.pool)
        agg.save_aggregator(params, enc, acfg, d / "aggregator.bin")
        (d / "history.json").write_text(json.dumps(history))
        log.info("stage two mse: %.6f -> %.6f", history[0], history[-1])

    return _run_stage(out_dir, "aggregator", key, build)


def _heldout_names(cfg: ExperimentConfig) -> List[str]:
    return [f"heldout_{i:02d}" for i in range(cfg.n_heldout)]


def _evaluate_instance(cfg: ExperimentConfig, out_dir, name: str, decoder,
                       params, enc, acfg, B: int, report: metrics.EvalReport,
                       mesh_dir: Optional[Path] = None,
                       methods: Sequence[str] = (METHOD_OURS, METHOD_BEST_SINGLE,
                                                 METHOD_MS, METHOD_MEAN),
                       method_prefix: str = "") -> None:
    instance = load_instance(Path(out_dir) / "instances" / name)
    latents = _load_latents(out_dir, name, cfg.max_sweeps)
    gt_points = metrics.build_ground_truth(instance, k=cfg.eval.outlier_k,
                                           std_mult=cfg.eval.outlier_std)
    eval_seed = sub_seed(cfg.seed, f"evalsample/{name}")
    res = cfg.eval.resolution

    def add(method: str, mesh: TriangleMesh):
        row = metrics.evaluate_method(
            mesh, gt_points, n_samples=cfg.eval.n_samples, seed=eval_seed,
            instance_id=name, method=method_prefix + method,
            gt_mesh=instance.gt_mesh)
        report.add(row)
        if mesh_dir is not None:
            save_mesh_obj(mesh, mesh_dir / f"{name}_{method}.obj")

    clipped = SweepInstance(instance.shape_id, instance.sweeps[:B],
                            instance.poses[:B], instance.side, instance.config)
    if METHOD_OURS in methods:
        mesh, _ = agg.predict(clipped, decoder, params, enc, acfg,
                              per_sweep_latents=latents[:B], resolution=res)
        add(METHOD_OURS, mesh)
    if METHOD_BEST_SINGLE in methods:
        meshes = [reconstruct(decoder, z, resolution=res) for z in latents[:B]]
        meshes = [m for m in meshes if m.n_triangles] or meshes
        idx, _ = metrics.best_single_shot(meshes, gt_points,
                                          n_samples=cfg.eval.n_samples,
                                          seed=eval_seed)
        add(METHOD_BEST_SINGLE, meshes[idx])
    if METHOD_MS in methods:
        z_ms = infer_latent_stacked(
            decoder, instance.sweeps[:B], iters=cfg.infer.iters, lr=cfg.infer.lr,
            seed=sub_seed(cfg.seed, f"infer_ms/{name}"), offsets=cfg.infer.offsets,
            max_points=cfg.infer.max_points * B)
        add(METHOD_MS, reconstruct(decoder, z_ms, resolution=res))
    if METHOD_MEAN in methods:
        z_mean = agg.mean_latent_baseline(latents[:B])
        add(METHOD_MEAN, reconstruct(decoder, z_mean, resolution=res))


def stage_predict_eval(cfg: ExperimentConfig, out_dir) -> str:
    up = stage_train_aggregator(cfg, out_dir)
    key = {"stage": "eval", "up": up, "seed": cfg.seed, "eval": _cfgdict(cfg.eval),
           "infer": _cfgdict(cfg.infer)}

    def build(d: Path):
        decoder = load_decoder(Path(out_dir) / "decoder" / "decoder.bin")
        params, enc, acfg = agg.load_aggregator(
            Path(out_dir) / "aggregator" / "aggregator.bin")
        report = metrics.EvalReport()
        mesh_dir = d / "meshes"
        mesh_dir.mkdir()
        for name in _heldout_names(cfg):
            _evaluate_instance(cfg, out_dir, name, decoder, params, enc, acfg,
                               cfg.B, report, mesh_dir=mesh_dir)
            log.info("evaluated %s", name)
        report.write_csv(d / "results.csv")
        report.write_json_summary(d / "summary.json")

    return _run_stage(out_dir, "eval", key, build)


def run_pipeline(cfg: ExperimentConfig, out_dir) -> metrics.EvalReport:
    """Execute every stage in order; returns the held-out evaluation report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(to_json(cfg))
    stage_predict_eval(cfg, out_dir)
    return load_report(out_dir)


def load_report(out_dir) -> metrics.EvalReport:
    import csv as _csv

    report = metrics.EvalReport()
    with open(Path(out_dir) / "eval" / "results.csv") as fh:
        for rec in _csv.DictReader(fh):
            report.add(metrics.EvalRow(
                instance_id=rec["instance_id"], method=rec["method"],
                acd_mean_per_point=float(rec["acd_mean_per_point"]),
                acd_sum=float(rec["acd_sum"]), recall=float(rec["recall"]),
                cd=float(rec["cd"]) if rec["cd"] else None))
    return report


# ---------------------------------------------------------------------------
# Ablations: {pool} x {merge} x {B} x {points} grid plus the encoder-only
# baseline, all sharing the experiment seed for paired comparison.
# ---------------------------------------------------------------------------

ABLATION_POOLS = ("avg", "max")
ABLATION_MERGES = ("concat", "multiply")
ABLATION_BS = (3, 6, 9)
ABLATION_POINTS = (128, 256)


def cell_label(pool: str, merge: str, B: int, points: int) -> str:
    return f"pool={pool},merge={merge},B={B},points={points}"


def run_ablations(cfg: ExperimentConfig, out_dir,
                  pools: Sequence[str] = ABLATION_POOLS,
                  merges: Sequence[str] = ABLATION_MERGES,
                  Bs: Sequence[int] = ABLATION_BS,
                  points_grid: Sequence[int] = ABLATION_POINTS
                  ) -> metrics.EvalReport:
    out_dir = Path(out_dir)
    bad = [b for b in Bs if b > cfg.max_sweeps]
    if bad:
        raise ValueError(f"ablation B values {bad} exceed max_sweeps="
                         f"{cfg.max_sweeps}")
    up = stage_infer_latents(cfg, out_dir)
    key = {"stage": "ablations", "up": up, "seed": cfg.seed,
           "stage_two": _cfgdict(cfg.stage_two), "eval": _cfgdict(cfg.eval),
           "encoder_widths": list(cfg.encoder_widths),
           "grid": [list(pools), list(merges), list(Bs), list(points_grid)]}

    def build(d: Path):
        decoder = load_decoder(out_dir / "decoder" / "decoder.bin")
        report = metrics.EvalReport()

        def eval_variant(label: str, B: int, points: int, merge: str, pool: str,
                         use_latents: bool = True, use_mapping: bool = True):
            params, enc, acfg, _ = _train_aggregator(
                cfg, out_dir, B, points, merge, pool,
                use_latents=use_latents, use_mapping=use_mapping)
            for name in _heldout_names(cfg):
                _evaluate_instance(cfg, out_dir, name, decoder, params, enc,
                                   acfg, B, report,
                                   methods=(METHOD_OURS,),
                                   method_prefix=label + "/")
            log.info("ablation cell %s done", label)

        for pool in pools:
            for merge in merges:
                for B in Bs:
                    for points in points_grid:
                        eval_variant(cell_label(pool, merge, B, points),
                                     B, points, merge, pool)
        # Table-4-style row 1: encoder + avg pooling only, no latent input
        eval_variant(f"encoder_only,B={cfg.B},points={cfg.points_per_cloud}",
                     cfg.B, cfg.points_per_cloud, "concat", "avg",
                     use_latents=False, use_mapping=False)
        report.write_csv(d / "ablations.csv")
        report.write_json_summary(d / "summary.json")

    _run_stage(out_dir, "ablations", key, build)
    import csv as _csv

    report = metrics.EvalReport()
    with open(out_dir / "ablations" / "ablations.csv") as fh:
        for rec in _csv.DictReader(fh):
            report.add(metrics.EvalRow(
                instance_id=rec["instance_id"], method=rec["method"],
                acd_mean_per_point=float(rec["acd_mean_per_point"]),
                acd_sum=float(rec["acd_sum"]), recall=float(rec["recall"]),
                cd=float(rec["cd"]) if rec["cd"] else None))
    return report
