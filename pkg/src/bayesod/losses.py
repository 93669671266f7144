"""Box regression log-likelihood losses and their analytic gradients.

Three per-anchor kernels are provided:

* ``diag_nll``      -- independent per-coordinate Gaussian NLL.
* ``mv_nll``        -- full-covariance Gaussian NLL with Σ = L D Lᵀ.
* ``ldl_surrogate`` -- ½‖L⁻¹‖_F²·‖D^{-½}r‖² + ½·tr(log D), a cheaper stand-in
  for ``mv_nll`` that avoids any matrix inverse beyond a unit triangular one.

The surrogate is *not* a pointwise upper bound on ``mv_nll`` in general; see
``surrogate_gap`` and the tests for explicit counterexamples.

Covariance factors use a log parametrization of D so positivity is
structural. Constant terms (½·log 2π per dimension) are omitted throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ValidationError

DIM = 4
_TRIL = np.tril_indices(DIM, -1)


@dataclass(frozen=True, eq=False)
class LdlFactors:
    """Strictly-lower entries of unit-diagonal L (row-major) and log of diag(D)."""

    l_strict: np.ndarray
    log_d: np.ndarray

    def __post_init__(self):
        l = np.array(self.l_strict, dtype=float).reshape(-1)
        d = np.array(self.log_d, dtype=float).reshape(-1)
        if l.size != DIM * (DIM - 1) // 2 or d.size != DIM:
            raise ValidationError(f"LDL factors need 6 + 4 entries, got {l.size} + {d.size}")
        if not (np.all(np.isfinite(l)) and np.all(np.isfinite(d))):
            raise ValidationError("LDL factors must be finite")
        object.__setattr__(self, "l_strict", l)
        object.__setattr__(self, "log_d", d)

    @property
    def L(self) -> np.ndarray:
        out = np.eye(DIM)
        out[_TRIL] = self.l_strict
        return out

    @property
    def d(self) -> np.ndarray:
        return np.exp(self.log_d)


@dataclass(frozen=True, eq=False)
class LossSample:
    prediction: np.ndarray
    target: np.ndarray
    variance: Optional[np.ndarray] = None
    factors: Optional[LdlFactors] = None

    def __post_init__(self):
        f = np.array(self.prediction, dtype=float).reshape(-1)
        y = np.array(self.target, dtype=float).reshape(-1)
        if f.size != DIM or y.size != DIM:
            raise ValidationError("prediction and target must have 4 entries")
        object.__setattr__(self, "prediction", f)
        object.__setattr__(self, "target", y)
        if self.variance is not None:
            v = np.array(self.variance, dtype=float).reshape(-1)
            if v.size != DIM:
                raise ValidationError("variance must have 4 entries")
            object.__setattr__(self, "variance", v)

    @property
    def residual(self) -> np.ndarray:
        return self.prediction - self.target


def _need_factors(sample: LossSample) -> LdlFactors:
    if sample.factors is None:
        raise ValidationError("this loss needs LDL factors")
    return sample.factors


def _need_variance(sample: LossSample) -> np.ndarray:
    if sample.variance is None:
        raise ValidationError("diag_nll needs a per-coordinate variance")
    v = sample.variance
    if np.any(~(v > 0.0)):
        raise ValidationError(f"variances must be positive, got {v}")
    return v


def unit_lower_inverse(L: np.ndarray) -> np.ndarray:
    """Inverse of a unit-diagonal lower-triangular matrix by forward substitution."""
    n = L.shape[0]
    inv = np.eye(n)
    for i in range(1, n):
        for j in range(i):
            inv[i, j] = -np.dot(L[i, j:i], inv[j:i, j])
    return inv


def ldl_compose(factors: LdlFactors) -> np.ndarray:
    L = factors.L
    cov = (L * factors.d) @ L.T
    return 0.5 * (cov + cov.T)


def ldl_factorize(cov) -> LdlFactors:
    """Unpivoted LDLᵀ of a PD matrix, via its Cholesky factor."""
    C = np.linalg.cholesky(np.asarray(cov, dtype=float))
    diag = np.diag(C)
    L = C / diag[None, :]
    return LdlFactors(L[_TRIL], 2.0 * np.log(diag))


def diag_nll(sample: LossSample) -> float:
    v = _need_variance(sample)
    r = sample.residual
    return float(np.sum(r * r / (2.0 * v) + 0.5 * np.log(v)))


def mv_nll(sample: LossSample) -> float:
    fac = _need_factors(sample)
    w = unit_lower_inverse(fac.L) @ sample.residual
    return float(0.5 * np.sum(w * w * np.exp(-fac.log_d)) + 0.5 * np.sum(fac.log_d))


def ldl_surrogate(sample: LossSample) -> float:
    fac = _need_factors(sample)
    Linv = unit_lower_inverse(fac.L)
    r = sample.residual
    frob = float(np.sum(Linv * Linv))
    return float(0.5 * frob * np.sum(r * r * np.exp(-fac.log_d)) + 0.5 * np.sum(fac.log_d))


def surrogate_gap(sample: LossSample) -> float:
    """ldl_surrogate - mv_nll; negative values are counterexamples to the bound."""
    return ldl_surrogate(sample) - mv_nll(sample)


# -- gradients ---------------------------------------------------------------
# Each returns a dict of arrays keyed by parameter name, matching ``_params``.

def diag_nll_grad(sample: LossSample) -> dict:
    v = _need_variance(sample)
    r = sample.residual
    return {"prediction": r / v, "variance": 0.5 / v - r * r / (2.0 * v * v)}


def mv_nll_grad(sample: LossSample) -> dict:
    fac = _need_factors(sample)
    Linv = unit_lower_inverse(fac.L)
    dinv = np.exp(-fac.log_d)
    w = Linv @ sample.residual
    a = Linv.T @ (dinv * w)
    return {
        "prediction": a,
        "l_strict": -np.outer(a, w)[_TRIL],
        "log_d": 0.5 - 0.5 * w * w * dinv,
    }


def ldl_surrogate_grad(sample: LossSample) -> dict:
    fac = _need_factors(sample)
    Linv = unit_lower_inverse(fac.L)
    dinv = np.exp(-fac.log_d)
    r = sample.residual
    frob = float(np.sum(Linv * Linv))
    q = float(np.sum(r * r * dinv))
    dfrob_dL = -2.0 * Linv.T @ Linv @ Linv.T
    return {
        "prediction": frob * dinv * r,
        "l_strict": 0.5 * q * dfrob_dL[_TRIL],
        "log_d": 0.5 - 0.5 * frob * r * r * dinv,
    }


LOSSES = {
    "diag": (diag_nll, diag_nll_grad),
    "mv": (mv_nll, mv_nll_grad),
    "surrogate": (ldl_surrogate, ldl_surrogate_grad),
}


def _params(loss_id: str, sample: LossSample) -> dict:
    out = {"prediction": sample.prediction}
    if loss_id == "diag":
        out["variance"] = _need_variance(sample)
    else:
        fac = _need_factors(sample)
        out["l_strict"] = fac.l_strict
        out["log_d"] = fac.log_d
    return out


def _rebuild(loss_id: str, sample: LossSample, params: dict) -> LossSample:
    if loss_id == "diag":
        return LossSample(params["prediction"], sample.target, variance=params["variance"])
    return LossSample(params["prediction"], sample.target,
                      factors=LdlFactors(params["l_strict"], params["log_d"]))


def numeric_grad(loss_id: str, sample: LossSample, step: float = 1e-5) -> dict:
    """Central finite differences over every loss parameter."""
    fn = LOSSES[loss_id][0]
    params = {k: v.copy() for k, v in _params(loss_id, sample).items()}
    out = {}
    for name, vec in params.items():
        g = np.zeros_like(vec)
        for i in range(vec.size):
            orig = vec[i]
            vec[i] = orig + step
            hi = fn(_rebuild(loss_id, sample, params))
            vec[i] = orig - step
            lo = fn(_rebuild(loss_id, sample, params))
            vec[i] = orig
            g[i] = (hi - lo) / (2.0 * step)
        out[name] = g
    return out


def grad_check(loss_id: str, sample: LossSample, step: float = 1e-5, floor: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per entry is |a - n| / max(|a|, |n|, floor); the floor
    keeps entries whose true gradient is ~0 from dividing by round-off.
    """
    if loss_id not in LOSSES:
        raise ValidationError(f"unknown loss {loss_id!r}")
    if not step > 0:
        raise ValidationError("step must be positive")
    analytic = LOSSES[loss_id][1](sample)
    numeric = numeric_grad(loss_id, sample, step)
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
