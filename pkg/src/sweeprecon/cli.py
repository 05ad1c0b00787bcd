"""Command-line entry point. Each subcommand runs one pipeline stage (plus its
prerequisites, which are skipped when their manifests are current); `eval` runs
everything, `ablate` runs the variant grid, `export` emits meshes and an HTML
summary table."""

from __future__ import annotations

import argparse
import dataclasses
import html
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .config import PROFILES, ExperimentConfig, load_config, to_json
from .mesh import load_mesh_obj, save_mesh_ply
from .pipeline import StageError

log = logging.getLogger("sweeprecon")


def _resolve_config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = PROFILES[args.profile]()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON experiment config file")
    p.add_argument("--profile", default="desk", choices=sorted(PROFILES),
                   help="named base profile when no config file is given")
    p.add_argument("--seed", type=int, default=None,
                   help="override the experiment seed")
    p.add_argument("--out", required=True, help="experiment output directory")


def cmd_predict(cfg: ExperimentConfig, args) -> None:
    from . import aggregator as agg
    from .lidar_sim import load_instance
    from .sdf_model import load_decoder

    out = Path(args.out)
    pipeline.stage_train_aggregator(cfg, out)
    decoder = load_decoder(out / "decoder" / "decoder.bin")
    params, enc, acfg = agg.load_aggregator(out / "aggregator" / "aggregator.bin")
    instance = load_instance(Path(args.instance))
    mesh, z_hat = agg.predict(instance, decoder, params, enc, acfg,
                              resolution=cfg.eval.resolution,
                              infer_kwargs={"iters": cfg.infer.iters,
                                            "lr": cfg.infer.lr,
                                            "offsets": cfg.infer.offsets,
                                            "max_points": cfg.infer.max_points})
    from .mesh import save_mesh_obj

    save_mesh_obj(mesh, args.mesh_out)
    log.info("wrote %s (|z|=%.3f)", args.mesh_out, float(np.linalg.norm(z_hat)))


def _summary_html(summaries: dict) -> str:
    rows = []
    for method, stats in summaries.items():
        rows.append("<tr><td>{}</td><td>{:.6g}</td><td>{:.6g}</td>"
                    "<td>{:.4f}</td><td>{}</td></tr>".format(
                        html.escape(method), stats["ACD_mean"],
                        stats["ACD_median"], stats["Recall"], stats["n"]))
    return ("<html><body><table border=1>\n"
            "<tr><th>method</th><th>ACD mean</th><th>ACD median</th>"
            "<th>Recall</th><th>n</th></tr>\n" + "\n".join(rows)
            + "\n</table></body></html>\n")


def cmd_export(cfg: ExperimentConfig, args) -> None:
    out = Path(args.out)
    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)
    eval_dir = out / "eval"
    if not eval_dir.exists():
        raise StageError("export", FileNotFoundError(
            f"no evaluation results under {out}; run `eval` first"))
    shutil.copy(eval_dir / "results.csv", dest / "results.csv")
    summaries = json.loads((eval_dir / "summary.json").read_text())
    (dest / "summary.html").write_text(_summary_html(summaries))
    mesh_dest = dest / "meshes"
    mesh_dest.mkdir(exist_ok=True)
    for obj in sorted((eval_dir / "meshes").glob("*.obj")):
        if args.format == "obj":
            shutil.copy(obj, mesh_dest / obj.name)
        else:
            save_mesh_ply(load_mesh_obj(obj), mesh_dest / (obj.stem + ".ply"))
    log.info("exported results to %s", dest)


STAGE_COMMANDS = {
    "gen-shapes": pipeline.stage_gen_shapes,
    "sample-sdf": pipeline.stage_sample_sdf,
    "train-decoder": pipeline.stage_train_decoder,
    "gen-sweeps": pipeline.stage_gen_sweeps,
    "infer-latents": pipeline.stage_infer_latents,
    "train-aggregator": pipeline.stage_train_aggregator,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sweeprecon",
        description="multi-sweep implicit vehicle reconstruction pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_COMMANDS:
        _add_common(sub.add_parser(name, help=f"run the {name} stage"))
    _add_common(sub.add_parser("eval", help="run the full pipeline and evaluate"))
    _add_common(sub.add_parser("ablate", help="run the ablation grid"))
    p = sub.add_parser("predict", help="reconstruct one sweep instance")
    _add_common(p)
    p.add_argument("--instance", required=True, help="instance directory")
    p.add_argument("--mesh-out", required=True, help="output OBJ path")
    p = sub.add_parser("export", help="export meshes and an HTML summary")
    _add_common(p)
    p.add_argument("--dest", required=True, help="export destination directory")
    p.add_argument("--format", default="obj", choices=("obj", "ply"))
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(to_json(cfg))
        if args.command in STAGE_COMMANDS:
            STAGE_COMMANDS[args.command](cfg, out)
        elif args.command == "eval":
            report = pipeline.run_pipeline(cfg, out)
            for method, stats in report.summary().items():
                log.info("%-24s ACD_mean=%.6g Recall=%.4f", method,
                         stats["ACD_mean"], stats["Recall"])
        elif args.command == "ablate":
            pipeline.run_ablations(cfg, out)
        elif args.command == "predict":
            cmd_predict(cfg, args)
        elif args.command == "export":
            cmd_export(cfg, args)
    except StageError as exc:
        print(f"error [{exc.stage}]: {exc.cause}", file=sys.stderr)
        return 1
    except Exception as exc:  # config / argument errors, no stage context
        print(f"error [setup]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
