"""Box geometry, Gaussian/categorical value types and their entropies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NumericalError, ValidationError

LOG_2PI_E = math.log(2.0 * math.pi * math.e)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in pixel coordinates, corner order (x1, y1, x2, y2)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValidationError(f"box coordinates must be finite, got {coords}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValidationError(f"box corners out of order: {coords}")

    @classmethod
    def from_array(cls, arr) -> "Box":
        a = np.asarray(arr, dtype=float).reshape(4)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=float)

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


def _as_box(b) -> Box:
    return b if isinstance(b, Box) else Box.from_array(b)


def iou(a, b) -> float:
    """Intersection over union of two boxes.

    Accepts ``Box`` instances or length-4 sequences. Disjoint boxes and
    zero-area boxes that are not identical give 0.
    """
    a = _as_box(a)
    b = _as_box(b)
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        # zero-area identical boxes are the only degenerate case that overlaps fully
        if a == b and a.area == 0.0:
            return 1.0
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) corner arrays."""
    a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=(inter > 0) & (union > 0))
    return out


def _check_symmetric(cov: np.ndarray, what: str) -> None:
    scale = max(float(np.max(np.abs(cov))), 1e-300)
    if np.max(np.abs(cov - cov.T)) > 1e-9 * scale:
        raise ValidationError(f"{what} covariance is not symmetric")


@dataclass(frozen=True, eq=False)
class BoxGaussian:
    """4-D Gaussian over box corners.

    ``cov`` must be symmetric and pass a Cholesky factorization; there is no
    tolerance slack (see ``bayesod.fusion.regularize`` for repair).
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(4)
        cov = np.array(self.cov, dtype=float).reshape(4, 4)
        if not np.all(np.isfinite(mean)):
            raise ValidationError("box mean must be finite")
        if not np.all(np.isfinite(cov)):
            raise NumericalError("box covariance has non-finite entries")
        _check_symmetric(cov, "box")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("box covariance is not positive definite") from exc
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def box(self) -> Box:
        return Box.from_array(self.mean)

    def __eq__(self, other):
        if not isinstance(other, BoxGaussian):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.cov, other.cov)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class CategoricalDist:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).reshape(-1)
        if p.size < 1 or not np.all(np.isfinite(p)):
            raise ValidationError("category probabilities must be finite and non-empty")
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise ValidationError(f"category probabilities outside [0, 1]: {p}")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValidationError(f"category probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def K(self) -> int:
        return self.probs.size

    def __eq__(self, other):
        if not isinstance(other, CategoricalDist):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    __hash__ = None


@dataclass(frozen=True)
class CategoryTable:
    names: tuple
    background_index: Optional[int] = None

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        if len(set(names)) != len(names):
            raise ValidationError(f"category names must be unique: {names}")
        if self.background_index is not None and not 0 <= self.background_index < len(names):
            raise ValidationError("background_index out of range")
        object.__setattr__(self, "names", names)

    @property
    def K(self) -> int:
        return len(self.names)

    @classmethod
    def default(cls, K: int) -> "CategoryTable":
        return cls(tuple(f"class_{k}" for k in range(K)))


def foreground_mask(K: int, background_index: Optional[int]) -> np.ndarray:
    mask = np.ones(K, dtype=bool)
    if background_index is not None:
        mask[background_index] = False
    return mask


def gaussian_entropy(g: BoxGaussian) -> float:
    """Differential entropy in nats, ½·ln((2πe)^4 · det Σ)."""
    cov = g.cov if isinstance(g, BoxGaussian) else np.asarray(g, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("entropy of a non-PD covariance") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return 0.5 * (cov.shape[0] * LOG_2PI_E + logdet)


def categorical_entropy(c) -> float:
    """Shannon entropy in nats with 0·ln 0 = 0."""
    p = c.probs if isinstance(c, CategoricalDist) else np.asarray(c, dtype=float)
    nz = p[p > 0.0]
    return float(-np.sum(nz * np.log(nz)))


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def as_cov_list(covs: Sequence) -> np.ndarray:
    arr = np.asarray(covs, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    return arr
