"""Per-anchor conjugate prior updates: Gaussian boxes and Dirichlet categories."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericalError, ValidationError
from .model import BoxGaussian, CategoricalDist, symmetrize

NON_INFORMATIVE = "non_informative"
GAUSSIAN = "gaussian"
EXPECTED = "expected"
SAMPLED = "sampled"


@dataclass(frozen=True)
class BoxPrior:
    mode: str = NON_INFORMATIVE
    mean: Optional[np.ndarray] = None
    cov: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in (NON_INFORMATIVE, GAUSSIAN):
            raise ValidationError(f"unknown box prior mode {self.mode!r}")
        if self.mode == GAUSSIAN:
            if self.mean is None or self.cov is None:
                raise ValidationError("gaussian box prior needs mean and cov")
            g = BoxGaussian(self.mean, self.cov)
            object.__setattr__(self, "mean", g.mean)
            object.__setattr__(self, "cov", g.cov)

    @classmethod
    def gaussian(cls, mean, cov) -> "BoxPrior":
        return cls(GAUSSIAN, mean, cov)

    @property
    def informative(self) -> bool:
        return self.mode == GAUSSIAN


@dataclass(frozen=True, eq=False)
class DirichletState:
    alpha: np.ndarray

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float).reshape(-1)
        if a.size < 1 or not np.all(np.isfinite(a)) or np.any(a <= 0.0):
            raise ValidationError(f"Dirichlet pseudo-counts must be finite and positive: {a}")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @property
    def K(self) -> int:
        return self.alpha.size

    @property
    def total(self) -> float:
        return float(self.alpha.sum())

    def __eq__(self, other):
        if not isinstance(other, DirichletState):
            return NotImplemented
        return np.array_equal(self.alpha, other.alpha)

    __hash__ = None


@dataclass(frozen=True)
class CategoryCountConfig:
    """How a categorical estimate is turned into H pseudo-observations.

    ``expected`` adds ``H * p`` (real-valued); ``sampled`` draws H i.i.d.
    categories from a stream keyed on ``(seed, anchor_id)``.
    """

    H: int = 30
    mode: str = EXPECTED
    seed: int = 0

    def __post_init__(self):
        if int(self.H) < 1:
            raise ValidationError("H must be >= 1")
        if self.mode not in (EXPECTED, SAMPLED):
            raise ValidationError(f"unknown count mode {self.mode!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a non-negative 64-bit integer")


def _precision(cov: np.ndarray) -> np.ndarray:
    try:
        factor = cho_factor(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("covariance is singular or not PD") from exc
    return symmetrize(cho_solve(factor, np.eye(cov.shape[0])))


def information_to_gaussian(info_matrix: np.ndarray, info_vector: np.ndarray) -> BoxGaussian:
    """Convert precision-form (Λ, Λμ) back to moment form."""
    try:
        factor = cho_factor(info_matrix, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("information matrix is not PD") from exc
    cov = symmetrize(cho_solve(factor, np.eye(4)))
    mean = cho_solve(factor, info_vector)
    return BoxGaussian(mean, cov)


def gaussian_conjugate_update(prior: BoxPrior, likelihood: BoxGaussian) -> BoxGaussian:
    """Posterior of a Gaussian box prior updated with one Gaussian measurement.

    Precision form: Σ' = (Σ₀⁻¹ + Σ⁻¹)⁻¹, μ' = Σ'(Σ₀⁻¹μ₀ + Σ⁻¹μ). The
    non-informative prior has zero precision, so the posterior is the
    likelihood itself.
    """
    if not prior.informative:
        return likelihood
    lam = _precision(likelihood.cov)
    lam0 = _precision(prior.cov)
    return information_to_gaussian(lam0 + lam, lam0 @ prior.mean + lam @ likelihood.mean)


def _derive_rng(seed: int, anchor_id: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(anchor_id)])


def sample_categories(probs: np.ndarray, H: int, rng: np.random.Generator) -> np.ndarray:
    """Draw H category indices i.i.d. by inverse-CDF lookup."""
    cdf = np.cumsum(probs)
    u = rng.random(H)
    idx = np.searchsorted(cdf, u, side="right")
    # cdf[-1] may fall a few ulps short of 1; map overflow to the last non-zero category
    last = int(np.flatnonzero(probs > 0.0)[-1])
    return np.minimum(idx, last)


def category_counts(category: CategoricalDist, cfg: CategoryCountConfig, anchor_id: int = 0) -> np.ndarray:
    """Pseudo-count contribution of one anchor's categorical estimate (sums to H)."""
    p = category.probs if isinstance(category, CategoricalDist) else np.asarray(category, dtype=float)
    if cfg.mode == EXPECTED:
        return cfg.H * p
    draws = sample_categories(p, cfg.H, _derive_rng(cfg.seed, anchor_id))
    return np.bincount(draws, minlength=p.size).astype(float)


def dirichlet_posterior(prior: DirichletState, category: CategoricalDist, cfg: CategoryCountConfig,
                        anchor_id: int = 0) -> DirichletState:
    if prior.K != category.K:
        raise ValidationError(f"prior has {prior.K} categories, estimate has {category.K}")
    return DirichletState(prior.alpha + category_counts(category, cfg, anchor_id))


def dirichlet_mean(d: DirichletState) -> CategoricalDist:
    return CategoricalDist(d.alpha / d.alpha.sum())


def make_noninformative(K: int):
    """Zero-precision box prior and flat Dirichlet (all pseudo-counts 1)."""
    if K < 2:
        raise ValidationError("need at least two categories")
    return BoxPrior(NON_INFORMATIVE), DirichletState(np.ones(K))
