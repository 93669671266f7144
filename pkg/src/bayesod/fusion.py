"""Bayesian replacement for non-maximum suppression.

Per-anchor posteriors are grouped by greedy IoU clustering around the
highest-scoring anchor; each cluster is then merged by precision addition
(boxes) and pseudo-count accumulation (categories). ``mode="nms"`` keeps
only the cluster centers, which is the classical suppression baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .aggregate import AnchorBelief, AnchorPrediction, _canonical_rows, aggregate_categorical, anchor_moments
from .errors import NumericalError, ValidationError
from .model import (
    BoxGaussian,
    CategoricalDist,
    categorical_entropy,
    foreground_mask,
    gaussian_entropy,
    iou_matrix,
    symmetrize,
)
from .priors import (
    BoxPrior,
    CategoryCountConfig,
    DirichletState,
    _precision,
    category_counts,
    dirichlet_mean,
    dirichlet_posterior,
    gaussian_conjugate_update,
    information_to_gaussian,
)

logger = logging.getLogger(__name__)

REG_SCALE = 1e-6


@dataclass(frozen=True)
class Cluster:
    center_index: int
    member_indices: tuple


@dataclass(frozen=True)
class FinalDetection:
    box: BoxGaussian
    category: CategoricalDist
    dirichlet: DirichletState
    score: float
    gaussian_entropy: float
    categorical_entropy: float
    member_anchor_ids: tuple
    image_id: Optional[int] = None

    @property
    def label(self) -> int:
        return int(np.argmax(self.category.probs))


@dataclass(frozen=True)
class FusionConfig:
    affinity_threshold: float = 0.5
    score_threshold: float = 0.1
    mode: str = "bayesod"
    covariance: str = "full"
    epistemic: bool = True
    aleatoric: bool = True
    box_prior: BoxPrior = field(default_factory=BoxPrior)
    dirichlet_prior: Optional[DirichletState] = None
    counts: CategoryCountConfig = field(default_factory=CategoryCountConfig)
    T: Optional[int] = None
    background_index: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.affinity_threshold < 1.0:
            raise ValidationError("affinity_threshold must lie in (0, 1)")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValidationError("score_threshold must lie in [0, 1]")
        if self.mode not in ("bayesod", "nms"):
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.covariance not in ("full", "diagonal"):
            raise ValidationError(f"unknown covariance mode {self.covariance!r}")
        if not (self.epistemic or self.aleatoric):
            raise ValidationError("at least one of epistemic/aleatoric must be on")
        if self.T is not None and self.T < 1:
            raise ValidationError("T must be >= 1")


@dataclass
class Notice:
    """Non-fatal event raised while processing one image (sidecar log material)."""

    kind: str
    anchor_id: Optional[int]
    message: str
    image_id: Optional[int] = None

    def as_dict(self) -> dict:
        return {"image_id": self.image_id, "anchor_id": self.anchor_id, "kind": self.kind,
                "message": self.message}


def regularize(cov: np.ndarray) -> np.ndarray:
    """Add ε·I with ε = 1e-6 · trace(Σ)/4."""
    cov = np.asarray(cov, dtype=float)
    eps = REG_SCALE * np.trace(cov) / cov.shape[0]
    return cov + eps * np.eye(cov.shape[0])


def make_gaussian(mean, cov) -> BoxGaussian:
    """Build a BoxGaussian, allowing one scale-aware regularization retry."""
    try:
        return BoxGaussian(mean, cov)
    except NumericalError:
        pass
    try:
        return BoxGaussian(mean, regularize(cov))
    except NumericalError as exc:
        raise NumericalError("covariance not PD after regularization") from exc


def score_of(probs: np.ndarray, background_index: Optional[int] = None) -> float:
    """Max foreground probability."""
    mask = foreground_mask(probs.size, background_index)
    return float(np.max(probs[mask]))


def greedy_cluster(beliefs: Sequence[AnchorBelief], threshold: float,
                   scores: Optional[Sequence[float]] = None) -> List[Cluster]:
    """Greedy IoU clustering around the highest-scoring unclustered anchor.

    ``scores`` defaults to the max category probability of each belief. Ties
    go to the lowest anchor_id. Indices refer to positions in ``beliefs``.
    """
    n = len(beliefs)
    if n == 0:
        return []
    if scores is None:
        scores = [float(np.max(b.category.probs)) for b in beliefs]
    scores = np.asarray(scores, dtype=float)
    ids = np.array([b.anchor_id for b in beliefs])
    means = np.stack([b.box.mean for b in beliefs])
    overlap = iou_matrix(means, means)
    order = np.lexsort((ids, -scores))
    free = np.ones(n, dtype=bool)
    clusters = []
    for c in order:
        if not free[c]:
            continue
        members = np.flatnonzero(free & (overlap[c] >= threshold))
        members = [int(c)] + sorted((int(m) for m in members if m != c), key=lambda m: (-scores[m], ids[m]))
        free[members] = False
        clusters.append(Cluster(int(c), tuple(members)))
    return clusters


def fuse_gaussians(center: BoxGaussian, members: Sequence[BoxGaussian]) -> BoxGaussian:
    """Precision-weighted fusion of the cluster center with its members."""
    terms = []
    for g in (center, *members):
        lam = _precision(g.cov)
        terms.append(np.concatenate([lam.ravel(), lam @ g.mean]))
    # canonical order so the float sums do not depend on member order
    total = _canonical_rows(np.array(terms)).sum(axis=0)
    return information_to_gaussian(symmetrize(total[:16].reshape(4, 4)), total[16:])


def fuse_dirichlets(center: DirichletState, member_categories: Sequence[CategoricalDist],
                    cfg: CategoryCountConfig, member_anchor_ids: Optional[Sequence[int]] = None) -> DirichletState:
    """Add each member's H pseudo-observations to the center's Dirichlet posterior."""
    if member_anchor_ids is None:
        member_anchor_ids = range(len(member_categories))
    counts = []
    for cat, aid in zip(member_categories, member_anchor_ids):
        if cat.K != center.K:
            raise ValidationError(f"member has {cat.K} categories, center has {center.K}")
        counts.append(category_counts(cat, cfg, aid))
    if not counts:
        return DirichletState(center.alpha.copy())
    return DirichletState(center.alpha + _canonical_rows(np.array(counts)).sum(axis=0))


def _is_degenerate(mean: np.ndarray) -> bool:
    return not (mean[2] > mean[0] and mean[3] > mean[1])


def _check_batch(preds: Sequence[AnchorPrediction], cfg: FusionConfig):
    K = preds[0].K
    T = preds[0].T if cfg.T is None else cfg.T
    for p in preds:
        if p.K != K:
            raise ValidationError(f"anchor {p.anchor_id}: {p.K} categories, expected {K}")
        if p.T != T:
            raise ValidationError(f"anchor {p.anchor_id}: {p.T} MC runs, expected {T}")
    return K


def bayesod_inference(preds: Sequence[AnchorPrediction], cfg: FusionConfig = FusionConfig(),
                      notices: Optional[list] = None, image_id: Optional[int] = None) -> List[FinalDetection]:
    """Full per-image chain from raw MC samples to fused detections.

    Degenerate anchors (zero or negative area mean box) are dropped and a
    ``Notice`` is appended to ``notices`` when given.
    """
    if len(preds) == 0:
        return []
    K = _check_batch(preds, cfg)
    alpha0 = cfg.dirichlet_prior if cfg.dirichlet_prior is not None else DirichletState(np.ones(K))
    if alpha0.K != K:
        raise ValidationError(f"Dirichlet prior has {alpha0.K} categories, predictions have {K}")

    diagonal = cfg.covariance == "diagonal"
    beliefs, posteriors, alphas, cats, scores = [], [], [], [], []
    for p in preds:
        mean, cov = anchor_moments(p, epistemic=cfg.epistemic, aleatoric=cfg.aleatoric, diagonal=diagonal)
        if _is_degenerate(mean):
            if notices is not None:
                notices.append(Notice("degenerate_anchor", p.anchor_id,
                                      f"mean box {mean.tolist()} has no area; dropped", image_id))
            continue
        likelihood = make_gaussian(mean, cov)
        post = gaussian_conjugate_update(cfg.box_prior, likelihood)
        cat = aggregate_categorical(p)
        alpha = dirichlet_posterior(alpha0, cat, cfg.counts, p.anchor_id)
        posteriors.append(post)
        cats.append(cat)
        alphas.append(alpha)
        scores.append(score_of(dirichlet_mean(alpha).probs, cfg.background_index))
        beliefs.append(AnchorBelief(p.anchor_id, post, cat))

    dets = []
    for cl in greedy_cluster(beliefs, cfg.affinity_threshold, scores):
        c = cl.center_index
        rest = cl.member_indices[1:]
        if cfg.mode == "nms" or not rest:
            box, alpha = posteriors[c], alphas[c]
            provenance = (beliefs[c].anchor_id,)
        else:
            box = fuse_gaussians(posteriors[c], [posteriors[i] for i in rest])
            alpha = fuse_dirichlets(alphas[c], [cats[i] for i in rest], cfg.counts,
                                    [beliefs[i].anchor_id for i in rest])
            provenance = tuple(beliefs[i].anchor_id for i in cl.member_indices)
        category = dirichlet_mean(alpha)
        score = score_of(category.probs, cfg.background_index)
        if score < cfg.score_threshold:
            continue
        if cfg.background_index is not None and int(np.argmax(category.probs)) == cfg.background_index:
            continue
        dets.append(FinalDetection(
            box=box,
            category=category,
            dirichlet=alpha,
            score=score,
            gaussian_entropy=gaussian_entropy(box),
            categorical_entropy=categorical_entropy(category),
            member_anchor_ids=provenance,
            image_id=image_id,
        ))
    return dets
