"""Ordinary least squares scoring model.

Fits score = intercept + coefficients . features by minimizing the sum of
squared residuals.  The solve goes through a singular value decomposition
of the design matrix (rank-revealing, orthogonal); normal equations are
deliberately avoided because small behavioral feature sets are often close
to collinear.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from hri_bridge.codec import Document

LIKERT_MIN = 1.0
LIKERT_MAX = 5.0
RANK_TOLERANCE = 1e-10  # times the largest design column norm


class RegressionError(Exception):
    pass


class RankDeficient(RegressionError):
    pass


class TooFewSamples(RegressionError):
    pass


class MissingFeature(RegressionError):
    pass


@dataclass(frozen=True)
class LinearModel:
    feature_names: tuple[str, ...]
    intercept: float
    coefficients: tuple[float, ...]
    n_samples: int
    residual_std: float
    r_squared: float
    # diagnostics: standard errors for (intercept, *coefficients)
    std_errors: tuple[float, ...]

    @property
    def p(self) -> int:
        return len(self.coefficients)


def ols_fit(
    X: Sequence[Sequence[float]] | np.ndarray,
    y: Sequence[float] | np.ndarray,
    feature_names: Sequence[str] | None = None,
) -> LinearModel:
    """Least-squares fit of y on X with an intercept column.

    Parameters
    ----------
    X : (n, p) design values, one row per session
    y : (n,) target scores
    feature_names : optional names for the p columns; defaults to x1..xp

    Raises
    ------
    TooFewSamples
        unless n > p + 1 (at least one residual degree of freedom)
    RankDeficient
        when any singular value of [1 | X] falls below RANK_TOLERANCE
        times the largest column norm
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-d, got shape {X.shape}")
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError(f"y must have shape ({n},), got {y.shape}")
    if p < 1:
        raise ValueError("need at least one feature column")
    if n <= p + 1:
        raise TooFewSamples(f"n={n} samples cannot fit p={p} features plus intercept")
    if feature_names is None:
        feature_names = tuple(f"x{i + 1}" for i in range(p))
    elif len(feature_names) != p:
        raise ValueError(f"{len(feature_names)} names for {p} columns")

    A = np.column_stack([np.ones(n), X])
    col_norms = np.linalg.norm(A, axis=0)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    tol = RANK_TOLERANCE * col_norms.max()
    if np.sum(s > tol) < p + 1:
        raise RankDeficient(
            f"design matrix rank {int(np.sum(s > tol))} < {p + 1} at tolerance {tol:.3e}"
        )
    beta = Vt.T @ ((U.T @ y) / s)

    residuals = y - A @ beta
    ssr = float(residuals @ residuals)
    centered = y - y.mean()
    sst = float(centered @ centered)
    if sst > 0.0:
        r_squared = min(1.0, max(0.0, 1.0 - ssr / sst))
    else:
        r_squared = 1.0 if ssr <= 1e-30 else 0.0
    dof = n - p - 1
    sigma2 = ssr / dof
    # diag of (A^T A)^-1 via the SVD factors
    unscaled = np.einsum("ji,j,ji->i", Vt, 1.0 / (s * s), Vt)
    std_errors = np.sqrt(sigma2 * unscaled)

    return LinearModel(
        feature_names=tuple(feature_names),
        intercept=float(beta[0]),
        coefficients=tuple(float(b) for b in beta[1:]),
        n_samples=n,
        residual_std=float(np.sqrt(sigma2)),
        r_squared=r_squared,
        std_errors=tuple(float(e) for e in std_errors),
    )


def _values_of(x: Any) -> Mapping[str, float]:
    values = getattr(x, "values", x)
    if callable(values):  # a plain dict's .values method, not a FeatureVector field
        return x
    return values


def predict(model: LinearModel, x: Any) -> float:
    """intercept + coefficients . x for a FeatureVector or mapping."""
    values = _values_of(x)
    total = model.intercept
    for name, coef in zip(model.feature_names, model.coefficients):
        if name not in values:
            raise MissingFeature(f"feature {name!r} missing from input")
        total += coef * float(values[name])
    return total


def predict_clamped(model: LinearModel, x: Any) -> float:
    """Prediction clamped to the questionnaire range [1, 5].

    Clamping is never applied implicitly; rankings must come from the raw
    prediction.
    """
    return min(LIKERT_MAX, max(LIKERT_MIN, predict(model, x)))


def model_to_document(model: LinearModel) -> Document:
    return {
        "feature_names": list(model.feature_names),
        "intercept": model.intercept,
        "coefficients": list(model.coefficients),
        "n_samples": model.n_samples,
        "residual_std": model.residual_std,
        "r_squared": model.r_squared,
        "std_errors": list(model.std_errors),
    }


def model_from_document(doc: Mapping[str, Any]) -> LinearModel:
    try:
        return LinearModel(
            feature_names=tuple(doc["feature_names"]),
            intercept=float(doc["intercept"]),
            coefficients=tuple(float(c) for c in doc["coefficients"]),
            n_samples=int(doc["n_samples"]),
            residual_std=float(doc["residual_std"]),
            r_squared=float(doc["r_squared"]),
            std_errors=tuple(float(e) for e in doc["std_errors"]),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"not a model document: {exc}") from None
