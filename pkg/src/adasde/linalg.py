"""Symmetric PSD matrix helpers shared by the noise and diffusion code."""
from __future__ import annotations

import numpy as np

# Eigenvalues in [-PSD_SLACK * lambda_max, 0) are treated as rounding noise
# and clamped to zero; anything below is a genuine negative eigenvalue.
PSD_SLACK = 1e-10
SYMMETRY_RTOL = 1e-10


def check_symmetric(mat: np.ndarray, rtol: float = SYMMETRY_RTOL, name: str = "matrix") -> np.ndarray:
    """Validate symmetry within a relative tolerance and return the symmetrized matrix."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim < 2 or mat.shape[-1] != mat.shape[-2]:
        raise ValueError(f"{name} must be square, got shape {mat.shape}")
    scale = np.max(np.abs(mat)) if mat.size else 0.0
    asym = np.max(np.abs(mat - np.swapaxes(mat, -1, -2))) if mat.size else 0.0
    if asym > rtol * max(scale, 1e-300):
        raise ValueError(f"{name} is not symmetric: max asymmetry {asym:.3e} exceeds rtol {rtol:g}")
    return 0.5 * (mat + np.swapaxes(mat, -1, -2))


def psd_eigh(mat: np.ndarray, name: str = "matrix") -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition with small negative eigenvalues clamped to zero.

    Eigenvalues below -PSD_SLACK * lambda_max are an error: the matrix is not
    positive semidefinite up to rounding.
    """
    sym = check_symmetric(mat, name=name)
    eigvals, eigvecs = np.linalg.eigh(sym)
    lam_max = np.max(eigvals, axis=-1, keepdims=True)
    floor = -PSD_SLACK * np.maximum(lam_max, 0.0)
    if np.any(eigvals < floor):
        worst = float(np.min(eigvals))
        raise ValueError(f"{name} is not PSD: eigenvalue {worst:.3e} below tolerance")
    return np.clip(eigvals, 0.0, None), eigvecs


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric square root S of a PSD matrix, S @ S = mat.

    Supports batched input of shape (..., d, d).
    """
    eigvals, eigvecs = psd_eigh(mat, name="covariance")
    root = eigvecs * np.sqrt(eigvals)[..., None, :]
    return root @ np.swapaxes(eigvecs, -1, -2)
