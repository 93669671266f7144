"""Collapse T stochastic detector runs into per-anchor sufficient statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import BoxGaussian, CategoricalDist, symmetrize


@dataclass(frozen=True, eq=False)
class AnchorPrediction:
    """Raw output of one anchor over T MC-dropout runs.

    box_samples: (T, 4); aleatoric_covs: (T, 4, 4); logit_samples: (T, K).
    """

    anchor_id: int
    box_samples: np.ndarray
    aleatoric_covs: np.ndarray
    logit_samples: np.ndarray

    def __post_init__(self):
        boxes = np.array(self.box_samples, dtype=float)
        if boxes.ndim == 1:
            boxes = boxes[None]
        covs = np.array(self.aleatoric_covs, dtype=float)
        if covs.ndim == 2:
            covs = covs[None]
        logits = np.array(self.logit_samples, dtype=float)
        if logits.ndim == 1:
            logits = logits[None]
        T = boxes.shape[0]
        if T < 1 or boxes.shape != (T, 4):
            raise ValidationError(f"anchor {self.anchor_id}: box_samples must be (T, 4), got {boxes.shape}")
        if covs.shape != (T, 4, 4):
            raise ValidationError(f"anchor {self.anchor_id}: aleatoric_covs must be ({T}, 4, 4), got {covs.shape}")
        if logits.ndim != 2 or logits.shape[0] != T:
            raise ValidationError(f"anchor {self.anchor_id}: logit_samples must have {T} rows, got {logits.shape}")
        if self.anchor_id < 0:
            raise ValidationError("anchor_id must be non-negative")
        for arr in (boxes, covs, logits):
            arr.setflags(write=False)
        object.__setattr__(self, "anchor_id", int(self.anchor_id))
        object.__setattr__(self, "box_samples", boxes)
        object.__setattr__(self, "aleatoric_covs", covs)
        object.__setattr__(self, "logit_samples", logits)

    @property
    def T(self) -> int:
        return self.box_samples.shape[0]

    @property
    def K(self) -> int:
        return self.logit_samples.shape[1]


@dataclass(frozen=True)
class AnchorBelief:
    anchor_id: int
    box: BoxGaussian
    category: CategoricalDist


def _canonical_rows(a: np.ndarray) -> np.ndarray:
    # lexicographic row order makes the reductions exactly run-permutation invariant
    flat = a.reshape(a.shape[0], -1)
    order = np.lexsort(flat.T[::-1])
    return a[order]


def aggregate_box(p: AnchorPrediction):
    """Sample mean and (biased, 1/T) sample covariance of the box runs.

    Returns ``(mean, epistemic_cov)``; the covariance is symmetrized but not
    projected onto the PSD cone, and is exactly zero when T == 1.
    """
    f = _canonical_rows(p.box_samples)
    T = f.shape[0]
    mean = f.sum(axis=0) / T
    if T == 1:
        return mean, np.zeros((4, 4))
    # centered form of E[ff^T] - mu mu^T; avoids cancellation when |mu| >> spread
    d = f - mean
    return mean, symmetrize(d.T @ d / T)


def combine_covariance(epistemic_cov, aleatoric_covs) -> np.ndarray:
    """Epistemic covariance plus the run-averaged aleatoric covariance."""
    covs = np.asarray(aleatoric_covs, dtype=float)
    if covs.ndim == 2:
        covs = covs[None]
    if covs.shape[0] < 1:
        raise ValidationError("need at least one aleatoric covariance")
    covs = _canonical_rows(covs)
    out = np.asarray(epistemic_cov, dtype=float) + covs.sum(axis=0) / covs.shape[0]
    return symmetrize(out)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def aggregate_categorical(p: AnchorPrediction) -> CategoricalDist:
    """Average of per-run softmax probabilities (not softmax of averaged logits)."""
    g = p.logit_samples
    if g.shape[1] < 2:
        raise ValidationError("need at least two categories")
    if not np.all(np.isfinite(g)):
        raise ValidationError(f"anchor {p.anchor_id}: non-finite logits")
    return CategoricalDist(_canonical_rows(softmax(g)).mean(axis=0))


def anchor_belief(p: AnchorPrediction, epistemic: bool = True, aleatoric: bool = True,
                  diagonal: bool = False) -> AnchorBelief:
    """Per-anchor likelihood, with the ablation switches applied.

    Raises ``NumericalError`` via ``BoxGaussian`` when the combined covariance
    is not PD; callers in the fusion pipeline regularize first.
    """
    mean, cov = anchor_moments(p, epistemic=epistemic, aleatoric=aleatoric, diagonal=diagonal)
    return AnchorBelief(p.anchor_id, BoxGaussian(mean, cov), aggregate_categorical(p))


def anchor_moments(p: AnchorPrediction, epistemic: bool = True, aleatoric: bool = True,
                   diagonal: bool = False):
    mean, cov_e = aggregate_box(p)
    if not epistemic:
        cov_e = np.zeros((4, 4))
    if aleatoric:
        covs = p.aleatoric_covs
        if diagonal:
            covs = covs * np.eye(4)[None]
        return mean, combine_covariance(cov_e, covs)
    return mean, cov_e
