"""Matrix decompositions with deterministic ordering and phase conventions.

Every eigen/singular decomposition in the package goes through here so that
repeated calls on the same matrix give bit-identical factors:

- eigenvalues and singular values are sorted nonincreasing;
- numerically tied values are ordered by lexicographic comparison of
  their canonicalized basis vectors;
- each basis vector is rotated so that its dominant entry (first entry of
  largest magnitude) is real and positive.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.linalg as la

from .errors import ContractViolation

HERMITIAN_RTOL = 1e-10
PSD_REPAIR_RTOL = 1e-9
TIE_RTOL = 1e-12
TIE_DECIMALS = 9
EQUAL_DIAGONAL_TOL = 1e-8
MAX_BALANCING_SWEEPS = 500


class OrderedEVD(NamedTuple):
    """Eigen-decomposition M = V diag(w) V^H with w nonincreasing."""

    eigenvectors: np.ndarray
    eigenvalues: np.ndarray


class OrderedSVD(NamedTuple):
    """Singular value decomposition M = U diag(s) V^H with s nonincreasing."""

    left: np.ndarray
    singulars: np.ndarray
    right: np.ndarray


class CholeskyLower(NamedTuple):
    """Lower Cholesky factor with real positive diagonal."""

    L: np.ndarray


def _square(M, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ContractViolation(f"{name} must be a square matrix, got shape {M.shape}")
    return M


def hermitian_part(M: np.ndarray, name: str = "M") -> np.ndarray:
    """Return (M + M^H)/2 after checking M is Hermitian to relative 1e-10."""
    M = _square(M, name)
    norm = np.linalg.norm(M)
    skew = np.linalg.norm(M - M.conj().T)
    if skew > HERMITIAN_RTOL * max(norm, np.finfo(float).tiny):
        raise ContractViolation(
            f"{name} is not Hermitian (skew part {skew:.3e} vs norm {norm:.3e})"
        )
    return 0.5 * (M + M.conj().T)


def _dominant_index(vector: np.ndarray) -> int:
    return int(np.argmax(np.abs(vector)))


def _canonical_phases(vectors: np.ndarray) -> np.ndarray:
    """Unit phases that make each column's dominant entry real positive."""
    phases = np.ones(vectors.shape[1], dtype=complex)
    for j in range(vectors.shape[1]):
        pivot = vectors[_dominant_index(vectors[:, j]), j]
        if abs(pivot) > 0:
            phases[j] = np.conj(pivot) / abs(pivot)
    return phases


def _lexicographic_key(vector: np.ndarray) -> tuple[float, ...]:
    entries = np.round(np.stack([vector.real, vector.imag], axis=1), TIE_DECIMALS)
    return tuple((-entries).ravel().tolist())


def _tie_order(values: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Permutation that reorders tied (already sorted) values by their vectors.

    Within a tie block, canonicalized vectors are compared lexicographically
    on (real, imag) of each entry, largest first, after rounding to
    ``TIE_DECIMALS`` decimals.
    """
    n = values.size
    order = np.arange(n)
    if n < 2:
        return order
    scale = float(np.max(np.abs(values)))
    tol = TIE_RTOL * scale if scale > 0 else 0.0
    start = 0
    for i in range(1, n + 1):
        if i == n or values[i - 1] - values[i] > tol:
            if i - start > 1:
                block = list(range(start, i))
                block.sort(key=lambda j: _lexicographic_key(vectors[:, j]))
                order[start:i] = block
            start = i
    return order


def hermitian_evd(M: np.ndarray) -> OrderedEVD:
    """Ordered eigen-decomposition of a Hermitian (PSD) matrix.

    Eigenvalues in [-1e-9 * ||M||_2, 0) are clipped to zero; more negative
    ones are returned unchanged so callers can decide whether to reject them.

    Raises:
        ContractViolation: if M is not Hermitian within relative 1e-10.
    """
    H = hermitian_part(M)
    values, vectors = la.eigh(H)
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = vectors[:, order] * _canonical_phases(vectors[:, order])

    ties = _tie_order(values, vectors)
    vectors = vectors[:, ties]

    spectral = float(np.max(np.abs(values))) if values.size else 0.0
    repair = (values < 0) & (values >= -PSD_REPAIR_RTOL * spectral)
    values = np.where(repair, 0.0, values)
    return OrderedEVD(eigenvectors=vectors, eigenvalues=values)


def svd_ordered(M: np.ndarray, full: bool = True) -> OrderedSVD:
    """Ordered SVD with the phase convention applied to the left vectors.

    The right vectors paired with a singular value receive the same phase as
    their left partner so that U diag(s) V^H is unchanged; the remaining
    (null-space) columns are canonicalized on their own.
    """
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2:
        raise ContractViolation(f"expected a matrix, got shape {M.shape}")
    U, s, Vh = la.svd(M, full_matrices=full, lapack_driver="gesvd")
    V = Vh.conj().T
    r = s.size

    phases = _canonical_phases(U[:, :r])
    U[:, :r] = U[:, :r] * phases
    V[:, :r] = V[:, :r] * phases
    if U.shape[1] > r:
        U[:, r:] = U[:, r:] * _canonical_phases(U[:, r:])
    if V.shape[1] > r:
        V[:, r:] = V[:, r:] * _canonical_phases(V[:, r:])

    ties = _tie_order(s, U[:, :r])
    U[:, :r] = U[:, :r][:, ties]
    V[:, :r] = V[:, :r][:, ties]
    return OrderedSVD(left=U, singulars=s, right=V)


def hermitian_sqrt(M: np.ndarray) -> np.ndarray:
    """Hermitian PSD square root R with R @ R = M.

    Raises:
        ContractViolation: if M has an eigenvalue below -1e-9 * ||M||_2.
    """
    evd = hermitian_evd(M)
    values = evd.eigenvalues
    if values.size and values[-1] < 0:
        raise ContractViolation(
            f"matrix is indefinite (smallest eigenvalue {values[-1]:.3e})"
        )
    V = evd.eigenvectors
    R = (V * np.sqrt(values)) @ V.conj().T
    return 0.5 * (R + R.conj().T)


def hermitian_inv_sqrt(M: np.ndarray) -> np.ndarray:
    """Inverse Hermitian square root of a positive definite matrix."""
    evd = hermitian_evd(M)
    values = evd.eigenvalues
    if values.size and values[-1] <= 0:
        raise ContractViolation("matrix is not positive definite")
    V = evd.eigenvectors
    R = (V / np.sqrt(values)) @ V.conj().T
    return 0.5 * (R + R.conj().T)


def cholesky_lower(M: np.ndarray) -> CholeskyLower:
    """Lower Cholesky factor of a Hermitian positive definite matrix."""
    H = hermitian_part(M)
    try:
        L = la.cholesky(H, lower=True)
    except la.LinAlgError as exc:
        raise ContractViolation(f"matrix is not positive definite: {exc}") from exc
    return CholeskyLower(L=L)


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix with entries exp(-2*pi*i*j*k/n) / sqrt(n)."""
    if n < 1:
        raise ContractViolation(f"DFT size must be positive, got {n}")
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)


def _diagonal_spread(diagonal: np.ndarray) -> float:
    return float((diagonal.max() - diagonal.min()) / diagonal.mean())


def _gmd_right_rotation(G: np.ndarray) -> np.ndarray:
    """Right unitary Q of a geometric-mean decomposition G = P R Q^H.

    R is upper triangular with every diagonal entry equal to the geometric
    mean of the singular values of G. Built from the ordered SVD by a single
    pass of 2x2 real rotations, each fixing one diagonal entry.
    """
    svd = svd_ordered(G)
    d = svd.singulars.copy()
    Q = svd.right.copy()
    n = d.size
    target = float(np.exp(np.mean(np.log(d))))

    for k in range(n - 1):
        if d[k] >= target:
            partners = [j for j in range(k + 1, n) if d[j] <= target]
        else:
            partners = [j for j in range(k + 1, n) if d[j] >= target]
        j = partners[0] if partners else k + 1
        if j != k + 1:
            d[[k + 1, j]] = d[[j, k + 1]]
            Q[:, [k + 1, j]] = Q[:, [j, k + 1]]

        d1, d2 = d[k], d[k + 1]
        if abs(d1 - d2) <= np.finfo(float).eps * target:
            continue
        c2 = np.clip((target**2 - d2**2) / (d1**2 - d2**2), 0.0, 1.0)
        c, s = np.sqrt(c2), np.sqrt(1.0 - c2)
        rotation = np.array([[c, -s], [s, c]])
        Q[:, [k, k + 1]] = Q[:, [k, k + 1]] @ rotation
        d[k], d[k + 1] = target, d1 * d2 / target
    return Q


def equal_diagonal_rotation(M: np.ndarray) -> np.ndarray:
    """Unitary Q such that the Cholesky factor of Q^H M Q has equal diagonal.

    The common diagonal value is det(M)^(1/(2N)). Sweeps are repeated on the
    rotated matrix until the relative diagonal spread is at most 1e-8.

    Raises:
        ContractViolation: if M is not Hermitian positive definite, or the
            sweeps fail to reach the tolerance.
    """
    H = hermitian_part(M)
    evd = hermitian_evd(H)
    if evd.eigenvalues[-1] <= PSD_REPAIR_RTOL * max(evd.eigenvalues[0], 0.0):
        raise ContractViolation("equal-diagonal rotation needs a positive definite matrix")

    n = H.shape[0]
    Q = np.eye(n, dtype=complex)
    for _ in range(MAX_BALANCING_SWEEPS):
        rotated = Q.conj().T @ H @ Q
        rotated = 0.5 * (rotated + rotated.conj().T)
        diagonal = np.real(np.diag(cholesky_lower(rotated).L))
        if _diagonal_spread(diagonal) <= EQUAL_DIAGONAL_TOL:
            return Q
        Q = Q @ _gmd_right_rotation(hermitian_sqrt(rotated))
    raise ContractViolation(
        f"equal-diagonal rotation did not converge in {MAX_BALANCING_SWEEPS} sweeps"
    )
