"""Standardization and the principal-component design matrix.

The right-singular-vector basis is computed once from the FULL predictor matrix
(training and prediction rows together); training designs and new-location rows are
then projections onto that shared basis, so their columns are only nearly orthogonal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstantColumnError, DegenerateInputError, DimensionMismatchError, InvalidParamError

SD_FLOOR = 1e-12  # below this a column counts as constant


@dataclass(frozen=True)
class ScalingParams:
    means: np.ndarray
    sds: np.ndarray


@dataclass(frozen=True)
class PCABasis:
    """Right singular vectors (columns) with their singular values, tail-truncated."""

    v: np.ndarray  # p_raw x p_kept, orthonormal columns
    singular_values: np.ndarray  # length p_kept, non-increasing, positive
    rel_tol: float

    @property
    def p_raw(self) -> int:
        return self.v.shape[0]

    @property
    def p_kept(self) -> int:
        return self.v.shape[1]


def standardize(raw: np.ndarray, column_labels=None) -> tuple[np.ndarray, ScalingParams]:
    """Center and scale columns to mean 0, sample sd 1 (divisor n-1)."""
    z = np.asarray(raw, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise InvalidParamError(f"need a 2-d matrix with >= 2 rows, got shape {z.shape}")
    means = z.mean(axis=0)
    sds = z.std(axis=0, ddof=1)
    bad = np.flatnonzero(sds < SD_FLOOR)
    if bad.size:
        j = int(bad[0])
        label = column_labels[j] if column_labels is not None else f"col_{j}"
        raise ConstantColumnError(label)
    return (z - means) / sds, ScalingParams(means=means, sds=sds)


def apply_scaling(raw: np.ndarray, scaling: ScalingParams) -> np.ndarray:
    """Apply stored training scaling to new raw rows."""
    z = np.asarray(raw, dtype=np.float64)
    if z.shape[-1] != scaling.means.shape[0]:
        raise DimensionMismatchError(
            f"expected {scaling.means.shape[0]} predictor columns, got {z.shape[-1]}"
        )
    return (z - scaling.means) / scaling.sds


def compute_basis(standardized: np.ndarray, rel_tol: float = 1e-10) -> PCABasis:
    """SVD basis of a standardized matrix, dropping singular values <= rel_tol * max."""
    z = np.asarray(standardized, dtype=np.float64)
    if not np.isfinite(z).all():
        raise InvalidParamError("matrix must be finite")
    if not 0.0 < rel_tol < 1.0:
        raise InvalidParamError(f"rel_tol must be in (0, 1), got {rel_tol}")
    _, s, vt = np.linalg.svd(z, full_matrices=False)
    if s.size == 0 or s[0] < 1e-14:
        raise DegenerateInputError("all singular values below 1e-14")
    kept = s > rel_tol * s[0]
    return PCABasis(v=vt[kept].T.copy(), singular_values=s[kept].copy(), rel_tol=float(rel_tol))


def build_design(standardized_subset: np.ndarray, basis: PCABasis) -> np.ndarray:
    """Design [1 | Z v]; rows in given order."""
    z = np.atleast_2d(np.asarray(standardized_subset, dtype=np.float64))
    if z.shape[1] != basis.p_raw:
        raise DimensionMismatchError(f"subset has {z.shape[1]} columns, basis expects {basis.p_raw}")
    return np.hstack([np.ones((z.shape[0], 1)), z @ basis.v])


def transform_new(z_new_raw: np.ndarray, scaling: ScalingParams, basis: PCABasis) -> np.ndarray:
    """One new raw predictor row -> design row [1, scaled_z @ v]."""
    z = np.asarray(z_new_raw, dtype=np.float64)
    if z.ndim != 1:
        raise DimensionMismatchError(f"expected a vector, got shape {z.shape}")
    return build_design(apply_scaling(z, scaling), basis)[0]
