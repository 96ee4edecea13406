"""Command-line entry point.

    bevalign run --config cfg.json [--seed N] [--out DIR]
    bevalign gradcheck [--seed N] [--trials N]
    bevalign oracle --kind {iou,knn,bilinear,peaks} [--seed N] [--trials N]
    bevalign gen-scene --out DIR [--seed N] [--config cfg.json]
                       [--sigma-t X] [--sigma-r X] [--lag X]
    bevalign align --bundle DIR --out DIR [--config cfg.json]

Exit codes: 0 success, 1 a check failed, 2 bad usage or config, 3 runtime
failure inside the pipeline.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .alignfuse import align_instances, fuse
from .experiment import (
    ConfigError,
    ExperimentConfig,
    load_config,
    run_experiment,
    run_scene_pipeline,
    scene_pairs_for_training,
    write_outputs,
)
from .instance import proposals_to_json
from .oracles import (
    CheckReport,
    check_bilinear,
    check_iou,
    check_knn,
    check_peaks,
    gradcheck_info_nce,
)
from .scenesim import (
    apply_spatial_noise,
    apply_temporal_noise,
    gen_scene,
    hash64,
    load_scene,
    save_scene,
)
from .contrastive import train_heads, write_loss_trace_csv

ORACLE_RUNNERS = {
    "iou": check_iou,
    "knn": check_knn,
    "bilinear": check_bilinear,
    "peaks": check_peaks,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bevalign",
        description="BEV instance alignment: training, checks, and scene tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the full experiment from a config file")
    p_run.add_argument("--config", required=True, help="JSON experiment config")
    p_run.add_argument("--seed", type=int, default=None, help="override base_seed")
    p_run.add_argument("--out", default=None, help="override output directory")

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--trials", type=int, default=100)
    p_grad.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)

    p_oracle = sub.add_parser("oracle", help="run a brute-force oracle comparison")
    p_oracle.add_argument("--kind", required=True, choices=sorted(ORACLE_RUNNERS))
    p_oracle.add_argument("--seed", type=int, default=0)
    p_oracle.add_argument("--trials", type=int, default=None, help="defaults per kind")

    p_gen = sub.add_parser("gen-scene", help="generate one scene bundle")
    p_gen.add_argument("--out", required=True, help="bundle directory")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--config", default=None, help="experiment config for scene knobs")
    p_gen.add_argument("--sigma-t", type=float, default=0.0, help="spatial translation sigma (m)")
    p_gen.add_argument("--sigma-r", type=float, default=0.0, help="spatial rotation sigma (rad)")
    p_gen.add_argument("--lag", type=float, default=0.0, help="temporal lag (s)")

    p_align = sub.add_parser("align", help="train on a scene bundle and align it")
    p_align.add_argument("--bundle", required=True, help="scene bundle directory")
    p_align.add_argument("--out", required=True, help="output directory")
    p_align.add_argument("--config", default=None, help="experiment config for pipeline knobs")
    return parser


def _report_line(rep: CheckReport) -> str:
    status = "PASS" if rep.passed else "FAIL"
    return f"{rep.kind}: {status} max_err={rep.max_err:.3e} ({rep.trials} trials)"


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, base_seed=args.seed)
        if args.out is not None:
            cfg = dataclasses.replace(cfg, out_dir=args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"config error: cannot read {args.config}: {e}", file=sys.stderr)
        return 2
    try:
        report, result = run_experiment(cfg)
        write_outputs(cfg.out_dir, report, result)
    except Exception as e:  # noqa: BLE001 - boundary: translate to exit code
        print(_runtime_message(e), file=sys.stderr)
        return 3
    print(f"wrote {Path(cfg.out_dir) / 'metrics.csv'}")
    for point in report.noise_points:
        noise = point["noise"]
        tag = f"sigma_t={noise['sigma_t']} sigma_r={noise['sigma_r']} lag={noise['lag']}"
        for variant, agg in point["variants"].items():
            print(f"  {tag} {variant}: recall@1={agg['recall_at_1']:.3f}")
    return 0


def _cmd_gradcheck(args) -> int:
    if args.trials < 1:
        print("gradcheck: --trials must be >= 1", file=sys.stderr)
        return 2
    rep = gradcheck_info_nce(seed=args.seed, trials=args.trials, corrupt=args.corrupt)
    print(_report_line(rep))
    if not rep.passed and rep.detail:
        print(f"  worst case: {json.dumps(rep.detail)}", file=sys.stderr)
    return 0 if rep.passed else 1


def _cmd_oracle(args) -> int:
    if args.trials is not None and args.trials < 1:
        print("oracle: --trials must be >= 1", file=sys.stderr)
        return 2
    runner = ORACLE_RUNNERS[args.kind]
    kwargs = {"seed": args.seed}
    if args.trials is not None:
        if args.kind == "knn":
            kwargs["n_queries"] = args.trials
        else:
            kwargs["trials"] = args.trials
    rep = runner(**kwargs)
    print(_report_line(rep))
    if not rep.passed and rep.detail is not None:
        print(json.dumps(rep.detail, indent=2), file=sys.stderr)
    return 0 if rep.passed else 1


def _scene_cfg_from(args) -> ExperimentConfig:
    if args.config is not None:
        return load_config(args.config)
    return ExperimentConfig()


def _cmd_gen_scene(args) -> int:
    try:
        cfg = _scene_cfg_from(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        scene = gen_scene(cfg.scene, args.seed)
        if args.sigma_t > 0 or args.sigma_r > 0:
            rng = np.random.default_rng(hash64(args.seed, 9001))
            scene = apply_spatial_noise(scene, args.sigma_t, args.sigma_r, rng)
        if args.lag > 0:
            scene = apply_temporal_noise(scene, args.lag)
        save_scene(args.out, scene)
    except Exception as e:  # noqa: BLE001
        print(_runtime_message(e), file=sys.stderr)
        return 3
    print(f"wrote scene bundle to {args.out}")
    return 0


def _cmd_align(args) -> int:
    try:
        cfg = _scene_cfg_from(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        scene = load_scene(args.bundle)
        pipe = run_scene_pipeline(scene, cfg)
        material = scene_pairs_for_training(pipe)
        if material is None:
            print("align: no positive pairs found in bundle", file=sys.stderr)
            return 3
        result = train_heads([material], cfg.train)
        alignment = align_instances(
            list(pipe.lidar_feats),
            list(pipe.camera_feats),
            result.head_lidar,
            result.head_camera,
            cfg.align,
        )
        fused = fuse(
            scene.lidar_feat,
            scene.camera_feat,
            alignment,
            list(pipe.lidar_proposals),
            list(pipe.camera_feats),
        )
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "alignment.json").write_text(
            json.dumps(
                [
                    {
                        "lidar_index": e.lidar_index,
                        "neighbors": list(e.neighbor_indices),
                        "scores": [float(s) for s in e.scores],
                        "chosen_camera_index": e.chosen_camera_index,
                    }
                    for e in alignment.entries
                ],
                indent=2,
            )
        )
        (out / "lidar_proposals.json").write_text(proposals_to_json(list(pipe.lidar_proposals)))
        (out / "camera_proposals.json").write_text(proposals_to_json(list(pipe.camera_proposals)))
        fused.save(out / "fused")
        write_loss_trace_csv(out / "loss_trace.csv", result)
    except Exception as e:  # noqa: BLE001
        print(_runtime_message(e), file=sys.stderr)
        return 3
    chosen = sum(1 for e in alignment.entries if e.chosen_rank is not None)
    print(f"aligned {chosen}/{len(alignment.entries)} instances; outputs in {args.out}")
    return 0


def _runtime_message(e: Exception) -> str:
    mod = type(e).__module__
    name = type(e).__qualname__
    qual = name if mod in ("builtins", None) else f"{mod}.{name}"
    return f"runtime failure: {qual}: {e}"


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "gradcheck": _cmd_gradcheck,
        "oracle": _cmd_oracle,
        "gen-scene": _cmd_gen_scene,
        "align": _cmd_align,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
