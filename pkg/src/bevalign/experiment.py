"""End-to-end experiment harness: parse a JSON config, train projection
heads on clean scenes, evaluate three alignment variants across a noise
grid on held-out scenes, and emit report.json plus metrics.csv.

Scene split: even scene indices train, odd evaluate.  When the config has
so few scenes that the eval split is empty, evaluation falls back to the
train scenes and the report says so.  Training always runs on clean
renders; noise is applied to evaluation scenes only.

Determinism: (config, base_seed) fixes every byte of metrics.csv.  Scene
seeds derive from hash64(base_seed, index); per-scene noise draws come from
hash64(scene_seed, 9001) so a scene's perturbation does not depend on grid
position or thread timing.  Aggregation reduces in scene-index order.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .alignfuse import AlignConfig, PipelineOutput, align_instances
from .contrastive import (
    LossConfig,
    ProjectionHead,
    ScenePairs,
    TrainConfig,
    TrainResult,
    info_nce,
    init_heads,
    train_heads,
    write_loss_trace_csv,
)
from .grid import GridMeta, default_meta
from .instance import InstanceConfig, Proposal, RoiFeature, extract_instances
from .pairing import PairConfig, PairSet, build_pairs
from .scenesim import (
    Metrics,
    NoiseSpec,
    Scene,
    SceneConfig,
    apply_spatial_noise,
    apply_temporal_noise,
    eval_alignment,
    gen_scene,
    hash64,
)

NOISE_STREAM_SALT = 9001
VARIANTS = ("naive", "untrained", "trained")


class ConfigError(ValueError):
    """Invalid experiment config; carries the offending field path."""

    def __init__(self, fld: str, message: str) -> None:
        super().__init__(f"config field '{fld}': {message}")
        self.field = fld


@dataclass(frozen=True)
class ExperimentConfig:
    n_scenes: int = 4
    base_seed: int = 0
    out_dir: str = "run_out"
    meta: GridMeta = field(default_factory=default_meta)
    scene: SceneConfig = field(default_factory=SceneConfig)
    instance: InstanceConfig = field(default_factory=InstanceConfig)
    pairing: PairConfig = field(default_factory=PairConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    noise_grid: tuple[NoiseSpec, ...] = (NoiseSpec(),)

    def __post_init__(self) -> None:
        if self.n_scenes < 1:
            raise ConfigError("n_scenes", "must be >= 1")
        if not self.noise_grid:
            raise ConfigError("noise_grid", "must be non-empty")

    def echo(self) -> dict:
        return {
            "n_scenes": self.n_scenes,
            "base_seed": self.base_seed,
            "out_dir": self.out_dir,
            "grid": self.meta.to_dict(),
            "scene": {
                "n_objects": self.scene.n_objects,
                "d_z": self.scene.d_z,
                "sigma_f": self.scene.sigma_f,
                "feature_seed": self.scene.feature_seed,
                "c_lidar": self.scene.c_lidar,
                "c_camera": self.scene.c_camera,
                "layout": self.scene.layout,
                "min_separation": self.scene.min_separation,
                "v_max": self.scene.v_max,
                "static_frac": self.scene.static_frac,
            },
            "instance": {
                "kernel": self.instance.kernel,
                "score_thresh": self.instance.score_thresh,
                "max_n": self.instance.max_n,
                "yaw_aware_sampling": self.instance.yaw_aware_sampling,
                "default_dims": list(self.instance.default_dims),
            },
            "pairing": {
                "tau_iou": self.pairing.tau_iou,
                "k_negatives": self.pairing.k_negatives,
                "anchor": self.pairing.anchor,
            },
            "loss": {
                "mode": self.loss.mode,
                "temperature": self.loss.temperature,
                "include_positive_in_denominator": self.loss.include_positive_in_denominator,
            },
            "train": {
                "steps": self.train.steps,
                "step_size": self.train.step_size,
                "d_e": self.train.d_e,
                "seed": self.train.seed,
            },
            "align": {
                "k_neighbors": self.align.k_neighbors,
                "metric": self.align.metric,
            },
            "noise_grid": [n.to_dict() for n in self.noise_grid],
        }


def _build_section(fld: str, ctor, kwargs: dict):
    try:
        return ctor(**kwargs)
    except TypeError as e:
        raise ConfigError(fld, f"unknown or missing key ({e})") from e
    except ValueError as e:
        raise ConfigError(fld, str(e)) from e


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a config dict (parsed JSON).  Unknown keys and bad values
    raise ConfigError naming the field."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    known = {
        "n_scenes",
        "base_seed",
        "out_dir",
        "grid",
        "scene",
        "instance",
        "pairing",
        "loss",
        "train",
        "align",
        "noise_grid",
    }
    for key in raw:
        if key not in known:
            raise ConfigError(key, "unknown config section")

    meta = _build_section("grid", GridMeta, raw["grid"]) if "grid" in raw else default_meta()
    scene_kwargs = _listfix(_listfix(raw.get("scene", {}), "dims_low"), "dims_high")
    scene = _build_section("scene", SceneConfig, {**scene_kwargs, "meta": meta})
    instance = _build_section("instance", InstanceConfig, _listfix(raw.get("instance", {}), "default_dims"))
    pairing = _build_section("pairing", PairConfig, raw.get("pairing", {}))
    loss = _build_section("loss", LossConfig, raw.get("loss", {}))
    train = _build_section(
        "train", TrainConfig, {**raw.get("train", {}), "loss": loss}
    )
    align = _build_section("align", AlignConfig, raw.get("align", {}))

    ng = raw.get("noise_grid", {"sigma_t": [0.0], "sigma_r": [0.0], "lag": [0.0]})
    if not isinstance(ng, dict):
        raise ConfigError("noise_grid", "must be an object of sigma_t/sigma_r/lag lists")
    for axis in ("sigma_t", "sigma_r", "lag"):
        vals = ng.get(axis, [0.0])
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"noise_grid.{axis}", "must be a non-empty list")
    points = []
    for st in ng.get("sigma_t", [0.0]):
        for sr in ng.get("sigma_r", [0.0]):
            for lag in ng.get("lag", [0.0]):
                points.append(
                    _build_section("noise_grid", NoiseSpec, {"sigma_t": st, "sigma_r": sr, "lag": lag})
                )

    return ExperimentConfig(
        n_scenes=int(raw.get("n_scenes", 4)),
        base_seed=int(raw.get("base_seed", 0)),
        out_dir=str(raw.get("out_dir", "run_out")),
        meta=meta,
        scene=scene,
        instance=instance,
        pairing=pairing,
        loss=loss,
        train=train,
        align=align,
        noise_grid=tuple(points),
    )


def _listfix(section: dict, key: str) -> dict:
    # JSON has no tuples; coerce list-valued knobs back
    out = dict(section)
    if key in out and isinstance(out[key], list):
        out[key] = tuple(out[key])
    return out


def load_config(path: str | Path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"<line {e.lineno}, col {e.colno}>", e.msg) from e
    return parse_config(raw)


def thread_cap() -> int:
    """Worker count from BEVALIGN_THREADS; 0 or unset means auto."""
    raw = os.environ.get("BEVALIGN_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        return min(os.cpu_count() or 1, 8)
    return n


@dataclass(frozen=True)
class ScenePipeline:
    """One scene's extracted material, ready for alignment and scoring."""

    scene: Scene
    lidar_proposals: tuple[Proposal, ...]
    lidar_feats: tuple[RoiFeature, ...]
    camera_proposals: tuple[Proposal, ...]
    camera_feats: tuple[RoiFeature, ...]
    pairs: PairSet | None


def run_scene_pipeline(scene: Scene, cfg: ExperimentConfig) -> ScenePipeline:
    lidar = extract_instances(scene.lidar_feat, scene.lidar_heat, cfg.instance)
    camera = extract_instances(scene.camera_feat, scene.camera_heat, cfg.instance)
    lp = tuple(p for p, _ in lidar)
    lf = tuple(f for _, f in lidar)
    cp = tuple(p for p, _ in camera)
    cf = tuple(f for _, f in camera)
    pairs = None
    if lp and cp:
        pairs = build_pairs([p.box for p in lp], [p.box for p in cp], cfg.pairing)
    return ScenePipeline(scene, lp, lf, cp, cf, pairs)


def scene_pairs_for_training(pipe: ScenePipeline) -> ScenePairs | None:
    if pipe.pairs is None or not pipe.pairs.positives:
        return None
    lv = np.asarray([f.vector for f in pipe.lidar_feats])
    cv = np.asarray([f.vector for f in pipe.camera_feats])
    return ScenePairs(lidar_vectors=lv, camera_vectors=cv, pairs=pipe.pairs)


def mean_pair_loss(
    pipe: ScenePipeline,
    head_l: ProjectionHead,
    head_c: ProjectionHead,
    loss_cfg: LossConfig,
) -> float:
    """Mean contrastive loss over this scene's positive pairs under the
    given heads; 0.0 when the scene yielded no usable pair."""
    if pipe.pairs is None:
        return 0.0
    values = []
    for (i, j), negs in zip(pipe.pairs.positives, pipe.pairs.negatives):
        if not negs:
            continue
        el = head_l.project(pipe.lidar_feats[i].vector)
        ec = head_c.project(pipe.camera_feats[j].vector)
        en = np.asarray([head_c.project(pipe.camera_feats[n].vector) for n in negs])
        values.append(info_nce(el, ec, en, loss_cfg).value)
    return float(np.mean(values)) if values else 0.0


def evaluate_scene(
    pipe: ScenePipeline,
    heads: dict[str, tuple[ProjectionHead, ProjectionHead]],
    cfg: ExperimentConfig,
) -> dict[str, Metrics]:
    """Metrics for each variant on one (possibly noisy) scene."""
    out: dict[str, Metrics] = {}
    for variant in VARIANTS:
        head_l, head_c = heads[variant]
        acfg = AlignConfig(
            k_neighbors=cfg.align.k_neighbors,
            metric=cfg.align.metric,
            variant="nearest" if variant == "naive" else "embedding",
        )
        alignment = align_instances(
            list(pipe.lidar_feats), list(pipe.camera_feats), head_l, head_c, acfg
        )
        output = PipelineOutput(
            lidar_proposals=pipe.lidar_proposals,
            lidar_feats=pipe.lidar_feats,
            camera_proposals=pipe.camera_proposals,
            camera_feats=pipe.camera_feats,
            alignment=alignment,
            pairs=pipe.pairs,
            mean_loss=mean_pair_loss(pipe, head_l, head_c, cfg.loss),
        )
        out[variant] = eval_alignment(pipe.scene, output)
    return out


def _aggregate(per_scene: list[Metrics]) -> dict:
    recalls = [m.recall_at_1 for m in per_scene]
    losses = [m.mean_align_loss for m in per_scene]
    before = [m.center_err_before for m in per_scene]
    after = [m.center_err_after for m in per_scene]
    return {
        "recall_at_1": float(np.mean(recalls)),
        "recall_at_1_std": float(np.std(recalls)),
        "mean_loss": float(np.mean(losses)),
        "center_err_before": float(np.mean(before)),
        "center_err_after": float(np.mean(after)),
        "n_pos": int(sum(m.positive_pair_count for m in per_scene)),
        "n_neg": int(sum(m.negative_pair_count for m in per_scene)),
        "n_scenes": len(per_scene),
    }


@dataclass(frozen=True)
class RunReport:
    config: dict
    noise_points: list[dict]
    train: dict
    wall_clock_s: float
    eval_on_train: bool
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "wall_clock_s": self.wall_clock_s,
            "eval_on_train": self.eval_on_train,
            "config": self.config,
            "train": self.train,
            "noise_points": self.noise_points,
        }


def _noisy_scene(scene: Scene, spec: NoiseSpec) -> Scene:
    rng = np.random.default_rng(hash64(scene.seed, NOISE_STREAM_SALT))
    noisy = apply_spatial_noise(scene, spec.sigma_t, spec.sigma_r, rng)
    return apply_temporal_noise(noisy, spec.lag, rng)


def run_experiment(cfg: ExperimentConfig) -> tuple[RunReport, TrainResult]:
    """Train once on the clean train split, then sweep the noise grid over
    the eval split for all three variants."""
    t0 = time.perf_counter()
    seeds = [hash64(cfg.base_seed, i) for i in range(cfg.n_scenes)]
    train_idx = [i for i in range(cfg.n_scenes) if i % 2 == 0]
    eval_idx = [i for i in range(cfg.n_scenes) if i % 2 == 1]
    eval_on_train = not eval_idx
    if eval_on_train:
        eval_idx = train_idx

    workers = thread_cap()

    def build_clean(i: int) -> ScenePipeline:
        return run_scene_pipeline(gen_scene(cfg.scene, seeds[i]), cfg)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        train_pipes = list(pool.map(build_clean, train_idx))

    material = [sp for sp in (scene_pairs_for_training(p) for p in train_pipes) if sp]
    result = train_heads(material, cfg.train)

    d_in = result.head_lidar.d_in
    heads = {
        "trained": (result.head_lidar, result.head_camera),
        "untrained": init_heads(d_in, cfg.train.d_e, cfg.train.seed),
    }
    heads["naive"] = heads["untrained"]

    eval_scenes = {i: gen_scene(cfg.scene, seeds[i]) for i in eval_idx}
    noise_points: list[dict] = []
    for spec in cfg.noise_grid:

        def eval_one(i: int) -> dict[str, Metrics]:
            noisy = _noisy_scene(eval_scenes[i], spec)
            return evaluate_scene(run_scene_pipeline(noisy, cfg), heads, cfg)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_scene = list(pool.map(eval_one, eval_idx))
        point = {"noise": spec.to_dict(), "variants": {}}
        for variant in VARIANTS:
            point["variants"][variant] = _aggregate([m[variant] for m in per_scene])
        noise_points.append(point)

    report = RunReport(
        config=cfg.echo(),
        noise_points=noise_points,
        train={
            "n_pairs": result.n_pairs,
            "initial_loss": float(result.loss_trace[0]),
            "final_loss": float(result.loss_trace[-1]),
            "mean_sq_dist_before": result.mean_sq_dist_before,
            "mean_sq_dist_after": result.mean_sq_dist_after,
            "n_train_scenes": len(train_idx),
        },
        wall_clock_s=time.perf_counter() - t0,
        eval_on_train=eval_on_train,
    )
    return report, result


CSV_COLUMNS = (
    "sigma_t",
    "sigma_r",
    "lag",
    "variant",
    "recall_at_1",
    "mean_loss",
    "center_err_before",
    "center_err_after",
    "n_pos",
    "n_neg",
    "n_scenes",
)


def metrics_csv(report: RunReport) -> str:
    """Fixed-column CSV; float fields use shortest round-trip repr so two
    identical runs emit identical bytes."""
    lines = [",".join(CSV_COLUMNS)]
    for point in report.noise_points:
        noise = point["noise"]
        for variant in VARIANTS:
            agg = point["variants"][variant]
            row = [
                repr(float(noise["sigma_t"])),
                repr(float(noise["sigma_r"])),
                repr(float(noise["lag"])),
                variant,
                repr(float(agg["recall_at_1"])),
                repr(float(agg["mean_loss"])),
                repr(float(agg["center_err_before"])),
                repr(float(agg["center_err_after"])),
                str(agg["n_pos"]),
                str(agg["n_neg"]),
                str(agg["n_scenes"]),
            ]
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_outputs(out_dir: str | Path, report: RunReport, result: TrainResult) -> None:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    (d / "metrics.csv").write_text(metrics_csv(report))
    write_loss_trace_csv(d / "loss_trace.csv", result)
