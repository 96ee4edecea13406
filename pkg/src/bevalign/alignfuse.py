"""Inference-time instance alignment and fused-map assembly.

Each LiDAR instance is scored against the K camera instances nearest to it
(positions via the same exact KD lookup used for training negatives), the
argmax neighbor is selected, and the chosen camera instance features are
written back into dedicated channels of a concatenated BEV map.  Ties in
score go to the lower neighbor rank, so results are order-stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .contrastive import ProjectionHead, cosine_sim
from .grid import (
    FeatureMap,
    require_same_meta,
    save_feature_map,
    world_to_grid,
)
from .instance import Proposal, RoiFeature
from .pairing import PairSet, build_kd


class EmptyNeighborhoodError(ValueError):
    """align() needs at least one camera candidate."""


@dataclass(frozen=True)
class AlignConfig:
    """metric "cosine" is scale invariant in the RoI vectors; "dot" matches
    the raw training score.  variant "embedding" ranks by head similarity,
    "nearest" is the no-learning baseline that keeps the closest neighbor."""

    k_neighbors: int = 8
    metric: str = "cosine"
    variant: str = "embedding"

    def __post_init__(self) -> None:
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if self.metric not in ("cosine", "dot"):
            raise ValueError(f"metric must be 'cosine' or 'dot', got {self.metric!r}")
        if self.variant not in ("embedding", "nearest"):
            raise ValueError(
                f"variant must be 'embedding' or 'nearest', got {self.variant!r}"
            )


@dataclass(frozen=True)
class AlignEntry:
    """One LiDAR instance's verdict.  neighbor_indices are camera instance
    indices in neighbor-rank order; scores align with them.  chosen_rank is
    None when the instance had no candidates at all."""

    lidar_index: int
    neighbor_indices: tuple[int, ...]
    scores: np.ndarray
    chosen_rank: int | None

    def __post_init__(self) -> None:
        s = np.asarray(self.scores, dtype=np.float64)
        s.flags.writeable = False
        object.__setattr__(self, "scores", s)
        if self.chosen_rank is not None:
            if not (0 <= self.chosen_rank < len(self.neighbor_indices)):
                raise ValueError("chosen_rank out of range")
            best = float(np.max(s)) if s.size else None
            if best is not None and float(s[self.chosen_rank]) != best:
                raise ValueError("chosen_rank does not attain the maximum score")

    @property
    def chosen_camera_index(self) -> int | None:
        if self.chosen_rank is None:
            return None
        return self.neighbor_indices[self.chosen_rank]

    @property
    def chosen_score(self) -> float | None:
        if self.chosen_rank is None:
            return None
        return float(self.scores[self.chosen_rank])


@dataclass(frozen=True)
class AlignmentResult:
    entries: tuple[AlignEntry, ...]

    def chosen(self) -> dict[int, int]:
        """lidar index -> chosen camera index, skipping unmatched."""
        return {
            e.lidar_index: e.chosen_camera_index
            for e in self.entries
            if e.chosen_rank is not None
        }


def _argmax_lowest(scores: np.ndarray) -> int:
    # np.argmax already returns the first (lowest-rank) maximum
    return int(np.argmax(scores))


def align(
    lidar_inst: RoiFeature,
    neighbors: list[RoiFeature],
    head_lidar: ProjectionHead,
    head_camera: ProjectionHead,
    cfg: AlignConfig = AlignConfig(),
) -> AlignEntry:
    """Score one LiDAR instance against an ordered camera candidate list and
    pick the argmax (ties -> lower rank)."""
    if not neighbors:
        raise EmptyNeighborhoodError("no camera candidates for alignment")
    el = head_lidar.project(lidar_inst.vector)
    scores = np.empty(len(neighbors))
    for rank, cand in enumerate(neighbors):
        ec = head_camera.project(cand.vector)
        if cfg.metric == "cosine":
            scores[rank] = cosine_sim(el, ec)
        else:
            scores[rank] = float(np.dot(el, ec))
    return AlignEntry(
        lidar_index=lidar_inst.proposal_id,
        neighbor_indices=tuple(c.proposal_id for c in neighbors),
        scores=scores,
        chosen_rank=_argmax_lowest(scores),
    )


def align_instances(
    lidar_feats: list[RoiFeature],
    camera_feats: list[RoiFeature],
    head_lidar: ProjectionHead,
    head_camera: ProjectionHead,
    cfg: AlignConfig = AlignConfig(),
) -> AlignmentResult:
    """Scene-level alignment: the candidate set for each LiDAR instance is
    its k nearest camera instances by center position (exact rank order,
    distance ties -> lower camera index).  Instances with no camera
    detections at all pass through with chosen_rank=None."""
    if not camera_feats:
        return AlignmentResult(
            entries=tuple(
                AlignEntry(f.proposal_id, (), np.empty(0), None) for f in lidar_feats
            )
        )
    centers = np.asarray([c.center for c in camera_feats])
    index = build_kd(centers)
    entries = []
    for feat in lidar_feats:
        ranks = index.query(np.asarray(feat.center), cfg.k_neighbors)
        cands = [camera_feats[r] for r in ranks]
        if cfg.variant == "nearest":
            # rank order is already nearest-first; score by closeness so the
            # argmax invariant still holds
            d = np.array(
                [
                    -float(np.sum((np.asarray(c.center) - np.asarray(feat.center)) ** 2))
                    for c in cands
                ]
            )
            entry = AlignEntry(
                lidar_index=feat.proposal_id,
                neighbor_indices=tuple(c.proposal_id for c in cands),
                scores=d,
                chosen_rank=0,
            )
        else:
            entry = align(feat, cands, head_lidar, head_camera, cfg)
        entries.append(entry)
    return AlignmentResult(entries=tuple(entries))


@dataclass(frozen=True)
class PipelineOutput:
    """Everything one scene's run produced, in the shape evaluation wants:
    detections and RoI features per modality, the alignment verdicts, the
    contrastive pairs found on this scene, and their mean loss under the
    heads that did the aligning."""

    lidar_proposals: tuple[Proposal, ...]
    lidar_feats: tuple[RoiFeature, ...]
    camera_proposals: tuple[Proposal, ...]
    camera_feats: tuple[RoiFeature, ...]
    alignment: AlignmentResult | None
    pairs: PairSet | None
    mean_loss: float


@dataclass(frozen=True)
class FusedMap:
    """Concatenated BEV map: [0, C_L) lidar, [C_L, C_L+C_C) camera, the
    last C_inst = C_C channels carry written-back aligned instance
    features (zero where no instance box covers the cell)."""

    fmap: FeatureMap
    c_lidar: int
    c_camera: int

    @property
    def c_instance(self) -> int:
        return self.fmap.channels - self.c_lidar - self.c_camera

    def channel_layout(self) -> dict:
        return {
            "lidar": [0, self.c_lidar],
            "camera": [self.c_lidar, self.c_lidar + self.c_camera],
            "instance": [self.c_lidar + self.c_camera, self.fmap.channels],
        }

    def save(self, stem: str | Path) -> None:
        stem = Path(stem)
        save_feature_map(stem, self.fmap)
        side = Path(str(stem) + ".json")
        meta = json.loads(side.read_text())
        meta["channel_layout"] = self.channel_layout()
        side.write_text(json.dumps(meta, indent=2, sort_keys=True))


def _footprint(box, meta) -> tuple[int, int, int, int] | None:
    """Inclusive (r0, r1, c0, c1) lattice-node range covered by the box,
    clipped to the grid; None when fully outside."""
    r_lo, c_lo = world_to_grid((box.cx - box.w / 2.0, box.cy - box.h / 2.0), meta)
    r_hi, c_hi = world_to_grid((box.cx + box.w / 2.0, box.cy + box.h / 2.0), meta)
    r0 = max(int(np.ceil(r_lo)), 0)
    c0 = max(int(np.ceil(c_lo)), 0)
    r1 = min(int(np.floor(r_hi)), meta.height - 1)
    c1 = min(int(np.floor(c_hi)), meta.width - 1)
    if r0 > r1 or c0 > c1:
        return None
    return r0, r1, c0, c1


def reduce_roi_vector(vector: np.ndarray, channels: int) -> np.ndarray:
    """Average the 5 sample blocks of an RoI vector down to one block."""
    v = np.asarray(vector, dtype=np.float64)
    if v.shape[0] != 5 * channels:
        raise ValueError(f"RoI vector length {v.shape[0]} is not 5*{channels}")
    return v.reshape(5, channels).mean(axis=0)


def fuse(
    lidar_map: FeatureMap,
    camera_map: FeatureMap,
    alignment: AlignmentResult,
    lidar_proposals: list[Proposal],
    camera_feats: list[RoiFeature],
) -> FusedMap:
    """Channel-concatenate the dense maps and paint each aligned camera
    instance feature (5 blocks averaged to C_C) over its LiDAR proposal's
    box footprint.  Overlaps keep the higher-score proposal's features;
    equal scores keep the lower lidar index.  The dense channels are copied
    bitwise."""
    require_same_meta(lidar_map, camera_map)
    meta = lidar_map.meta
    c_l, c_c = lidar_map.channels, camera_map.channels
    out = np.zeros((meta.height, meta.width, c_l + c_c + c_c), dtype=np.float32)
    out[:, :, :c_l] = lidar_map.data
    out[:, :, c_l : c_l + c_c] = camera_map.data

    cam_by_id = {f.proposal_id: f for f in camera_feats}
    painted = []
    for e in alignment.entries:
        if e.chosen_rank is None:
            continue
        prop = lidar_proposals[e.lidar_index]
        feat = cam_by_id[e.chosen_camera_index]
        painted.append((prop.score, e.lidar_index, prop.box, feat))
    # ascending score, descending index: the last writer for a cell is the
    # highest score, lowest index on ties
    painted.sort(key=lambda t: (t[0], -t[1]))
    inst = slice(c_l + c_c, c_l + 2 * c_c)
    for _, _, box, feat in painted:
        span = _footprint(box, meta)
        if span is None:
            continue
        r0, r1, c0, c1 = span
        vec = reduce_roi_vector(feat.vector, c_c).astype(np.float32)
        out[r0 : r1 + 1, c0 : c1 + 1, inst] = vec
    return FusedMap(
        fmap=FeatureMap(meta=meta, data=out, modality="fused"),
        c_lidar=c_l,
        c_camera=c_c,
    )
