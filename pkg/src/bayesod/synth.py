"""Seeded simulator standing in for an MC-dropout RetinaNet.

Every image gets a few ground-truth boxes. Each object is seen by several
anchors; each anchor's T runs are the ground-truth box plus correlated
Gaussian corner noise, with logits peaked on the true class. Background
anchors land away from all objects with flatter logits on a random class.

Random streams are keyed on (seed, image_id[, anchor_id]) so that images
can be generated in any order or in parallel with identical results.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Tuple

import numpy as np

from .aggregate import AnchorPrediction
from .errors import ValidationError
from .metrics import GroundTruthObject
from .model import Box, CategoryTable, iou_matrix

ALEATORIC_SCALE = {"faithful": 1.0, "overconfident": 0.25, "underconfident": 4.0}
_PLACEMENT_TRIES = 100


@dataclass(frozen=True)
class SceneConfig:
    image_width: int = 640
    image_height: int = 480
    num_images: int = 500
    categories: CategoryTable = field(default_factory=lambda: CategoryTable(("car", "person", "bicycle")))
    objects_per_image: Tuple[int, int] = (1, 4)
    box_size: Tuple[float, float] = (40.0, 160.0)
    anchors_per_object: Tuple[int, int] = (1, 8)
    false_anchor_rate: float = 3.0
    noise: float = 4.0
    corner_correlation: float = 0.3
    aleatoric_model: str = "faithful"
    logit_sharpness: float = 4.0
    background_sharpness: float = 2.5
    logit_noise: float = 1.5
    T: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("objects_per_image", "box_size", "anchors_per_object"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValidationError(f"{name} must be a positive ordered range, got {(lo, hi)}")
            object.__setattr__(self, name, (type(lo)(lo), type(hi)(hi)))
        if self.image_width <= 0 or self.image_height <= 0 or self.num_images < 0:
            raise ValidationError("image size must be positive and num_images >= 0")
        if self.box_size[1] >= min(self.image_width, self.image_height):
            raise ValidationError("box_size upper bound must be smaller than the image")
        if self.false_anchor_rate < 0 or self.noise < 0 or self.logit_noise < 0:
            raise ValidationError("rates and noise levels must be >= 0")
        if not -1.0 < self.corner_correlation < 1.0:
            raise ValidationError("corner_correlation must lie in (-1, 1)")
        if self.aleatoric_model not in ALEATORIC_SCALE:
            raise ValidationError(f"unknown aleatoric_model {self.aleatoric_model!r}")
        if self.T < 1:
            raise ValidationError("T must be >= 1")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")

    @property
    def K(self) -> int:
        return self.categories.K

    def noise_cov(self) -> np.ndarray:
        """True corner-noise covariance; x1/x2 and y1/y2 share the correlation."""
        rho = self.corner_correlation
        corr = np.eye(4)
        corr[0, 2] = corr[2, 0] = rho
        corr[1, 3] = corr[3, 1] = rho
        return self.noise ** 2 * corr

    def reported_cov(self) -> np.ndarray:
        cov = self.noise_cov() * ALEATORIC_SCALE[self.aleatoric_model]
        if self.noise == 0.0:
            # a zero-noise world still needs a PD aleatoric report
            cov = 1e-6 * np.eye(4)
        return cov


@dataclass
class SyntheticScene:
    image_id: int
    ground_truth: List[GroundTruthObject]
    predictions: List[AnchorPrediction]
    # anchor_id -> index into ground_truth, or -1 for background
    provenance: Dict[int, int]


def _random_box(rng, cfg: SceneConfig) -> np.ndarray:
    w, h = rng.uniform(cfg.box_size[0], cfg.box_size[1], size=2)
    x1 = rng.uniform(0.0, cfg.image_width - w)
    y1 = rng.uniform(0.0, cfg.image_height - h)
    return np.array([x1, y1, x1 + w, y1 + h])


def _place(rng, cfg: SceneConfig, others: List[np.ndarray], max_iou: float) -> np.ndarray:
    """Rejection-sample a box whose IoU with every box in ``others`` is <= max_iou."""
    best, best_overlap = None, np.inf
    for _ in range(_PLACEMENT_TRIES):
        box = _random_box(rng, cfg)
        overlap = float(iou_matrix(box[None], np.stack(others)).max()) if others else 0.0
        if overlap <= max_iou:
            return box
        if overlap < best_overlap:
            best, best_overlap = box, overlap
    return best


def _anchor(rng, cfg: SceneConfig, anchor_id: int, box: np.ndarray, category: int, sharpness: float,
            chol: np.ndarray, reported: np.ndarray) -> AnchorPrediction:
    T, K = cfg.T, cfg.K
    samples = box[None] + rng.standard_normal((T, 4)) @ chol.T
    logits = cfg.logit_noise * rng.standard_normal((T, K))
    logits[:, category] += sharpness
    covs = np.broadcast_to(reported, (T, 4, 4))
    return AnchorPrediction(anchor_id, samples, covs, logits)


def generate_scene(cfg: SceneConfig, image_id: int) -> SyntheticScene:
    rng = np.random.default_rng([cfg.seed, image_id, 0])
    n_obj = int(rng.integers(cfg.objects_per_image[0], cfg.objects_per_image[1] + 1))
    boxes = []
    for _ in range(n_obj):
        boxes.append(_place(rng, cfg, boxes, 0.3))
    labels = rng.integers(0, cfg.K, size=n_obj)
    fg = [k for k in range(cfg.K) if k != cfg.categories.background_index]
    if cfg.categories.background_index is not None:
        labels = np.array(fg)[rng.integers(0, len(fg), size=n_obj)]
    gts = [GroundTruthObject(image_id, Box.from_array(b), int(c)) for b, c in zip(boxes, labels)]

    counts = rng.integers(cfg.anchors_per_object[0], cfg.anchors_per_object[1] + 1, size=n_obj)
    n_bg = int(rng.poisson(cfg.false_anchor_rate))
    bg_boxes = [_place(rng, cfg, boxes, 0.0) for _ in range(n_bg)]
    bg_labels = rng.integers(0, cfg.K, size=n_bg)

    chol = np.linalg.cholesky(cfg.noise_cov()) if cfg.noise > 0 else np.zeros((4, 4))
    reported = cfg.reported_cov()
    preds, provenance = [], {}
    aid = 0
    for g, (box, c, n) in enumerate(zip(boxes, labels, counts)):
        for _ in range(n):
            arng = np.random.default_rng([cfg.seed, image_id, 1, aid])
            preds.append(_anchor(arng, cfg, aid, box, int(c), cfg.logit_sharpness, chol, reported))
            provenance[aid] = g
            aid += 1
    for box, c in zip(bg_boxes, bg_labels):
        arng = np.random.default_rng([cfg.seed, image_id, 1, aid])
        preds.append(_anchor(arng, cfg, aid, box, int(c), cfg.background_sharpness, chol, reported))
        provenance[aid] = -1
        aid += 1
    return SyntheticScene(image_id, gts, preds, provenance)


def generate_dataset(cfg: SceneConfig) -> List[SyntheticScene]:
    return [generate_scene(cfg, i) for i in range(cfg.num_images)]


def with_overrides(cfg: SceneConfig, **kw) -> SceneConfig:
    return replace(cfg, **kw)
