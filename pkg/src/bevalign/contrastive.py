"""Similarity measures, the instance-alignment InfoNCE loss with analytic
gradients, and a plain gradient-descent trainer for the two per-modality
projection heads.

The loss for one positive pair (a, c) with negatives b_1..b_K is

    L = -s(a, c) + logsumexp_i s(a, b_i)

with s either the raw dot product (default) or cosine similarity divided by
a temperature.  The denominator holds the negatives only; a config flag adds
the positive term for the canonical variant.  All log-sum-exp evaluations
are max-shifted, and every gradient here is closed-form (finite differences
are used only to verify them, never to train).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import read_bevf, write_bevf
from .pairing import PairSet

ZERO_NORM_EPS = 1e-12


class ZeroVectorError(ValueError):
    """Cosine similarity is undefined for (near-)zero vectors."""


class LengthMismatchError(ValueError):
    """Vector operands must share a length."""


class NoPairsError(ValueError):
    """Training requires at least one positive pair with a negative."""


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """a.b / (|a||b|); raises ZeroVectorError below norm 1e-12."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatchError(f"shapes differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < ZERO_NORM_EPS or nb < ZERO_NORM_EPS:
        raise ZeroVectorError("cosine similarity of a zero vector")
    return float(np.dot(a, b) / (na * nb))


def sq_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Euclidean distance |a - b|^2."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatchError(f"shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.dot(d, d))


def log_softmax_stable(logits: np.ndarray) -> tuple[float, np.ndarray]:
    """Max-shifted (logsumexp, softmax) of a 1-D logit vector."""
    logits = np.asarray(logits, dtype=np.float64)
    m = float(np.max(logits))
    shifted = np.exp(logits - m)
    total = float(np.sum(shifted))
    return m + np.log(total), shifted / total


@dataclass(frozen=True)
class LossConfig:
    """mode "dot" scores with raw dot products; "cosine" with
    cos(a, b) / temperature.  include_positive_in_denominator switches to
    the canonical softmax over {positive} + negatives."""

    mode: str = "dot"
    temperature: float = 0.07
    include_positive_in_denominator: bool = False

    def __post_init__(self) -> None:
        if self.mode not in ("dot", "cosine"):
            raise ValueError(f"mode must be 'dot' or 'cosine', got {self.mode!r}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


@dataclass(frozen=True)
class LossReport:
    """Loss value with gradients matching each input's shape, plus the raw
    similarity scores for tracing."""

    value: float
    grad_pos_lidar: np.ndarray
    grad_pos_camera: np.ndarray
    grad_negatives: np.ndarray
    pos_sim: float
    neg_sims: np.ndarray


def _cos_parts(a: np.ndarray, b: np.ndarray) -> tuple[float, float, float]:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < ZERO_NORM_EPS or nb < ZERO_NORM_EPS:
        raise ZeroVectorError("cosine similarity of a zero vector")
    return float(np.dot(a, b)), na, nb


def info_nce(
    pos_lidar: np.ndarray,
    pos_camera: np.ndarray,
    negatives: np.ndarray,
    cfg: LossConfig = LossConfig(),
) -> LossReport:
    """Alignment loss for one positive pair against K >= 1 negatives, with
    closed-form gradients for all K + 2 input vectors."""
    a = np.asarray(pos_lidar, dtype=np.float64)
    c = np.asarray(pos_camera, dtype=np.float64)
    negs = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if a.shape != c.shape or negs.shape[1] != a.shape[0]:
        raise LengthMismatchError(
            f"incompatible shapes: pos {a.shape}/{c.shape}, negs {negs.shape}"
        )
    k = negs.shape[0]
    if k < 1:
        raise ValueError("at least one negative required")

    if cfg.mode == "dot":
        s_pos = float(np.dot(a, c))
        n = negs @ a
        ds_pos_da, ds_pos_dc = c, a
        dn_da = negs  # row i: d n_i / d a
        dn_db = np.broadcast_to(a, negs.shape)  # d n_i / d b_i
    else:
        dot_pos, na, nc = _cos_parts(a, c)
        cos_pos = dot_pos / (na * nc)
        s_pos = cos_pos / cfg.temperature
        nb = np.linalg.norm(negs, axis=1)
        if np.any(nb < ZERO_NORM_EPS):
            raise ZeroVectorError("cosine similarity of a zero vector")
        dots = negs @ a
        cos_n = dots / (na * nb)
        n = cos_n / cfg.temperature
        ds_pos_da = (c / (na * nc) - cos_pos * a / (na * na)) / cfg.temperature
        ds_pos_dc = (a / (na * nc) - cos_pos * c / (nc * nc)) / cfg.temperature
        dn_da = (negs / (na * nb)[:, None] - np.outer(cos_n / (na * na), a)) / cfg.temperature
        dn_db = (a[None, :] / (na * nb)[:, None] - (cos_n / nb**2)[:, None] * negs) / cfg.temperature

    if cfg.include_positive_in_denominator:
        lse, sigma = log_softmax_stable(np.concatenate(([s_pos], n)))
        sigma_pos, sigma_n = float(sigma[0]), sigma[1:]
    else:
        lse, sigma_n = log_softmax_stable(n)
        sigma_pos = 0.0

    value = -s_pos + lse
    grad_a = (sigma_pos - 1.0) * ds_pos_da + sigma_n @ dn_da
    if cfg.mode == "dot" and not cfg.include_positive_in_denominator:
        grad_c = -a  # exact negation by construction
    else:
        grad_c = (sigma_pos - 1.0) * ds_pos_dc
    grad_negs = sigma_n[:, None] * dn_db

    return LossReport(
        value=float(value),
        grad_pos_lidar=grad_a,
        grad_pos_camera=grad_c,
        grad_negatives=np.asarray(grad_negs, dtype=np.float64),
        pos_sim=s_pos,
        neg_sims=np.asarray(n, dtype=np.float64),
    )


@dataclass(frozen=True)
class ProjectionHead:
    """Linear map from instance-feature space (D_in) to the shared
    embedding space (D_e): e = x @ weights."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] < 1:
            raise ValueError(f"weights must be (D_in, D_e), got shape {w.shape}")
        if not np.isfinite(w).all():
            raise ValueError("weights contain NaN or Inf")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def d_in(self) -> int:
        return int(self.weights.shape[0])

    @property
    def d_e(self) -> int:
        return int(self.weights.shape[1])

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights

    def save(self, path: str | Path) -> None:
        write_bevf(path, self.weights[:, :, None].astype(np.float32))

    @classmethod
    def load(cls, path: str | Path) -> "ProjectionHead":
        return cls(read_bevf(path)[:, :, 0].astype(np.float64))


def init_heads(d_in: int, d_e: int, seed: int) -> tuple[ProjectionHead, ProjectionHead]:
    """Seeded uniform init scaled by 1/sqrt(D_in); lidar head drawn first."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d_in)
    wl = rng.uniform(-1.0, 1.0, size=(d_in, d_e)) * scale
    wc = rng.uniform(-1.0, 1.0, size=(d_in, d_e)) * scale
    return ProjectionHead(wl), ProjectionHead(wc)


@dataclass(frozen=True)
class ScenePairs:
    """One scene's training material: per-instance feature vectors for both
    modalities plus the index pairs over them."""

    lidar_vectors: np.ndarray
    camera_vectors: np.ndarray
    pairs: PairSet

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "lidar_vectors", np.asarray(self.lidar_vectors, dtype=np.float64)
        )
        object.__setattr__(
            self, "camera_vectors", np.asarray(self.camera_vectors, dtype=np.float64)
        )


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    step_size: float = 0.05
    d_e: int = 16
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.d_e < 1:
            raise ValueError("d_e must be >= 1")


@dataclass(frozen=True)
class TrainResult:
    head_lidar: ProjectionHead
    head_camera: ProjectionHead
    loss_trace: np.ndarray
    pos_sim_trace: np.ndarray
    neg_sim_trace: np.ndarray
    mean_sq_dist_before: float
    mean_sq_dist_after: float
    n_pairs: int


def _flatten_pairs(
    scenes: list[ScenePairs],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stack every trainable positive pair across scenes into flat arrays:
    lidar X, camera X, negatives X (concatenated), and per-pair negative
    counts.  Pairs with no negatives are skipped."""
    xl, xc, xn, counts = [], [], [], []
    for sp in scenes:
        for (i, j), negs in zip(sp.pairs.positives, sp.pairs.negatives):
            if not negs:
                continue
            xl.append(sp.lidar_vectors[i])
            xc.append(sp.camera_vectors[j])
            xn.append(sp.camera_vectors[list(negs)])
            counts.append(len(negs))
    if not xl:
        raise NoPairsError("no positive pair with at least one negative")
    return (
        np.asarray(xl, dtype=np.float64),
        np.asarray(xc, dtype=np.float64),
        np.concatenate(xn, axis=0),
        np.asarray(counts, dtype=np.int64),
    )


def _pair_eval(
    el: np.ndarray,
    ec: np.ndarray,
    en_flat: np.ndarray,
    offsets: np.ndarray,
    counts: np.ndarray,
    cfg: LossConfig,
) -> tuple[float, float, float, np.ndarray, np.ndarray, np.ndarray]:
    """Mean loss and embedding-space gradients over all pairs, reduced in
    fixed pair order.  Returns (loss, pos_sim, neg_sim, dEL, dEC, dEN)."""
    p = el.shape[0]
    same_k = counts.min() == counts.max()
    if cfg.mode == "dot" and same_k:
        k = int(counts[0])
        en = en_flat.reshape(p, k, -1)
        s_pos = np.einsum("pd,pd->p", el, ec)
        n = np.einsum("pd,pkd->pk", el, en)
        if cfg.include_positive_in_denominator:
            logits = np.concatenate([s_pos[:, None], n], axis=1)
        else:
            logits = n
        m = logits.max(axis=1, keepdims=True)
        ex = np.exp(logits - m)
        lse = m[:, 0] + np.log(ex.sum(axis=1))
        sigma = ex / ex.sum(axis=1, keepdims=True)
        if cfg.include_positive_in_denominator:
            sigma_pos, sigma_n = sigma[:, 0], sigma[:, 1:]
        else:
            sigma_pos, sigma_n = np.zeros(p), sigma
        losses = -s_pos + lse
        del_ = (sigma_pos - 1.0)[:, None] * ec + np.einsum("pk,pkd->pd", sigma_n, en)
        dec = (sigma_pos - 1.0)[:, None] * el
        den = sigma_n[:, :, None] * el[:, None, :]
        return (
            float(losses.mean()),
            float(s_pos.mean()),
            float(n.mean()),
            del_ / p,
            dec / p,
            den.reshape(-1, el.shape[1]) / p,
        )
    # ragged or cosine: per-pair reference path
    del_ = np.zeros_like(el)
    dec = np.zeros_like(ec)
    den = np.zeros_like(en_flat)
    losses = np.empty(p)
    pos_sims = np.empty(p)
    neg_sum = 0.0
    neg_count = 0
    for idx in range(p):
        lo, hi = offsets[idx], offsets[idx] + counts[idx]
        rep = info_nce(el[idx], ec[idx], en_flat[lo:hi], cfg)
        losses[idx] = rep.value
        pos_sims[idx] = rep.pos_sim
        neg_sum += float(rep.neg_sims.sum())
        neg_count += int(counts[idx])
        del_[idx] = rep.grad_pos_lidar
        dec[idx] = rep.grad_pos_camera
        den[lo:hi] = rep.grad_negatives
    return (
        float(losses.mean()),
        float(pos_sims.mean()),
        neg_sum / neg_count,
        del_ / p,
        dec / p,
        den / p,
    )


def train_heads(scenes: list[ScenePairs], cfg: TrainConfig) -> TrainResult:
    """Full-batch gradient descent on the mean pair loss.

    The loss trace has length steps + 1; entry 0 is the loss at the seeded
    initialization and entry t the loss after t updates.  Deterministic for
    a fixed (scenes, cfg)."""
    xl, xc, xn_flat, counts = _flatten_pairs(scenes)
    offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))
    d_in = xl.shape[1]
    head_l, head_c = init_heads(d_in, cfg.d_e, cfg.seed)
    wl = head_l.weights.copy()
    wc = head_c.weights.copy()

    def sq_dists(wl_: np.ndarray, wc_: np.ndarray) -> float:
        d = xl @ wl_ - xc @ wc_
        return float(np.mean(np.einsum("pd,pd->p", d, d)))

    dist_before = sq_dists(wl, wc)
    trace = np.empty(cfg.steps + 1)
    pos_trace = np.empty(cfg.steps + 1)
    neg_trace = np.empty(cfg.steps + 1)
    for step in range(cfg.steps + 1):
        loss, pos_sim, neg_sim, del_, dec, den = _pair_eval(
            xl @ wl, xc @ wc, xn_flat @ wc, offsets, counts, cfg.loss
        )
        trace[step] = loss
        pos_trace[step] = pos_sim
        neg_trace[step] = neg_sim
        if step == cfg.steps:
            break
        wl = wl - cfg.step_size * (xl.T @ del_)
        wc = wc - cfg.step_size * (xc.T @ dec + xn_flat.T @ den)

    return TrainResult(
        head_lidar=ProjectionHead(wl),
        head_camera=ProjectionHead(wc),
        loss_trace=trace,
        pos_sim_trace=pos_trace,
        neg_sim_trace=neg_trace,
        mean_sq_dist_before=dist_before,
        mean_sq_dist_after=sq_dists(wl, wc),
        n_pairs=int(xl.shape[0]),
    )


def write_loss_trace_csv(path: str | Path, result: TrainResult) -> None:
    """CSV trace: step, mean_loss, mean_pos_sim, mean_neg_sim."""
    with open(path, "w") as f:
        f.write("step,mean_loss,mean_pos_sim,mean_neg_sim\n")
        for step in range(result.loss_trace.shape[0]):
            f.write(
                f"{step},{float(result.loss_trace[step])!r},"
                f"{float(result.pos_sim_trace[step])!r},{float(result.neg_sim_trace[step])!r}\n"
            )
