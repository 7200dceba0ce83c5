"""Dense matrix kernels: SVD, nuclear norm, and the nuclear-norm subgradient.

The nuclear norm ||A||_* (sum of singular values) is the quantity the
diversity objective maximizes over batch prediction matrices, so the
decomposition is implemented here rather than delegated: a one-sided
Jacobi SVD, which is simple and highly accurate for the small, skinny
matrices this package produces (batch x classes, both <= 128).
"""

from typing import NamedTuple

import numpy as np

JACOBI_MAX_SWEEPS = 60
JACOBI_REL_TOL = 1e-12


class NumericalError(RuntimeError):
    """An iteration failed to converge or produced non-finite values."""


class SvdResult(NamedTuple):
    u: np.ndarray      # rows x k, orthonormal columns
    sigma: np.ndarray  # k non-negative values, non-increasing
    v: np.ndarray      # cols x k, orthonormal columns


def as_matrix(a) -> np.ndarray:
    """Validate and return `a` as a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"matrix dimensions must be positive, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def svd(a) -> SvdResult:
    """Thin SVD via one-sided Jacobi column orthogonalization.

    Sweeps Jacobi rotations over column pairs until every pair satisfies
    |a_p . a_q| <= JACOBI_REL_TOL * ||a_p|| * ||a_q||, then reads singular
    values off the column norms. Raises NumericalError if the sweep cap is
    exceeded. Deterministic for a given input.
    """
    m0 = as_matrix(a)
    transposed = m0.shape[0] < m0.shape[1]
    w = (m0.T if transposed else m0).copy()
    m, n = w.shape  # m >= n

    v = np.eye(n)
    converged = False
    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                cp = w[:, p]
                cq = w[:, q]
                gamma = float(cp @ cq)
                if gamma == 0.0:
                    continue
                alpha = float(cp @ cp)
                beta = float(cq @ cq)
                if abs(gamma) <= JACOBI_REL_TOL * np.sqrt(alpha * beta):
                    continue
                tau = (beta - alpha) / (2.0 * gamma)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = 1.0 / (tau - np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                if s == 0.0:  # rotation numerically an identity; avoid stalling
                    continue
                rotated = True
                new_p = c * cp - s * cq
                new_q = s * cp + c * cq
                w[:, p] = new_p
                w[:, q] = new_q
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if not rotated:
            converged = True
            break
    if not converged:
        raise NumericalError(
            f"jacobi svd did not converge within {JACOBI_MAX_SWEEPS} sweeps "
            f"for a {m0.shape[0]}x{m0.shape[1]} matrix"
        )

    sigma = np.sqrt(np.sum(w * w, axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    w = w[:, order]
    v = v[:, order]

    u = np.zeros_like(w)
    nonzero = sigma > 0.0
    u[:, nonzero] = w[:, nonzero] / sigma[nonzero]
    if not np.all(nonzero):
        _complete_basis(u, np.flatnonzero(nonzero).tolist(),
                        np.flatnonzero(~nonzero).tolist())

    if transposed:
        return SvdResult(u=v, sigma=sigma, v=u)
    return SvdResult(u=u, sigma=sigma, v=v)


def _complete_basis(u, filled, empty):
    """Fill zero columns of `u` with unit vectors orthogonal to the rest.

    Needed when the input is rank-deficient: reconstruction does not care
    about these directions but the orthonormality contract does. Picks the
    standard basis vector with the largest residual, projects twice.
    """
    m = u.shape[0]
    for j in empty:
        basis = u[:, filled]
        load = np.sum(basis * basis, axis=1)  # |basis^T e_i|^2 per i
        i = int(np.argmin(load))
        vec = np.zeros(m)
        vec[i] = 1.0
        vec -= basis @ (basis.T @ vec)
        vec /= np.sqrt(vec @ vec)
        vec -= basis @ (basis.T @ vec)
        vec /= np.sqrt(vec @ vec)
        u[:, j] = vec
        filled = filled + [j]


def nuclear_norm(a) -> float:
    """Sum of singular values of `a`."""
    return float(np.sum(svd(a).sigma))


def nuclear_norm_subgradient(a, rank_tol: float = 1e-8) -> np.ndarray:
    """Subgradient of the nuclear norm at `a`: U_r V_r^T.

    Keeps singular triples with sigma > rank_tol * sigma_max (thin
    truncation, the stable choice at rank-deficient points). The zero
    matrix maps to the zero matrix, which is a valid subgradient.
    """
    if rank_tol <= 0.0:
        raise ValueError(f"rank_tol must be positive, got {rank_tol}")
    r = svd(a)
    keep = r.sigma > rank_tol * r.sigma[0]
    if not np.any(keep):
        return np.zeros((r.u.shape[0], r.v.shape[0]))
    return r.u[:, keep] @ r.v[:, keep].T


def frobenius_norm(a) -> float:
    """sqrt of the sum of squared entries."""
    m = as_matrix(a)
    return float(np.sqrt(np.sum(m * m)))
