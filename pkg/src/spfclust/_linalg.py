import numpy as np

from .errors import NumericalError


def symmetrize(a):
    return 0.5 * (a + a.T)


def psd_project(a):
    """Clip negative eigenvalues of a symmetric matrix to zero."""
    a = symmetrize(np.asarray(a, dtype=float))
    lam, vec = np.linalg.eigh(a)
    lam = np.clip(lam, 0.0, None)
    return symmetrize((vec * lam) @ vec.T)


def psd_factor(gamma, rtol=1e-10):
    """Return L with gamma = L L^T, keeping only strictly positive modes.

    The result has shape (q, r) with r the numerical rank; r may be 0.
    """
    gamma = np.asarray(gamma, dtype=float)
    if not np.all(np.isfinite(gamma)):
        raise NumericalError("random-effect covariance has non-finite entries")
    lam, vec = np.linalg.eigh(symmetrize(gamma))
    scale = max(1.0, float(np.max(np.abs(lam)))) if lam.size else 1.0
    if lam.size and lam[0] < -rtol * scale:
        raise NumericalError(
            f"random-effect covariance is not PSD (eigenvalue {lam[0]:.3e})"
        )
    keep = lam > rtol * scale
    return vec[:, keep] * np.sqrt(lam[keep])
