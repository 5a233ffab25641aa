"""Dense complex linear algebra for small matrices.

Hand-rolled routines sized for the <= 16 x 16 blocks this package works with:
a one-sided Jacobi SVD, Cholesky factorization driving Hermitian
positive-definite solves / inverses / log-determinants, and a diagonality
measure. Matrices are numpy complex128 2-D arrays throughout (row-major);
there is no separate matrix class.
"""

from __future__ import annotations

import numpy as np

# singular values below RANK_TOL * sigma_max are truncated to exact zero,
# which is what defines numerical rank everywhere in this package
RANK_TOL = 1e-12

_JACOBI_TOL = 1e-13
_MAX_SWEEPS = 60
_HERM_TOL = 1e-12


# =========================================================================
# validation helpers
# =========================================================================

def _as_matrix(a, name="a"):
    arr = np.asarray(a, dtype=np.complex128)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name} must be a nonempty 2-D matrix")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def _check_hermitian(a, name="a"):
    scale = np.max(np.abs(a))
    if scale == 0.0:
        return
    if np.max(np.abs(a - a.conj().T)) > _HERM_TOL * scale * 10.0:
        raise ValueError(f"{name} is not Hermitian")


# =========================================================================
# one-sided Jacobi SVD
# =========================================================================

def svd(a):
    """Singular value decomposition by one-sided Jacobi rotations.

    Parameters
    ----------
    a : ndarray
        Complex matrix, shape (m, n), finite entries.

    Returns
    -------
    (u, sigma, v) : u is (m, r), sigma is (r,), v is (n, r) with
        r = min(m, n); columns orthonormal, sigma sorted descending with
        ties keeping original column order, and u @ diag(sigma) @ v^H == a
        up to roundoff. Values below RANK_TOL * sigma_max are zeroed.
    """
    arr = _as_matrix(a)
    u, sigma, v = svd_batch(arr[None, :, :])
    return u[0], sigma[0], v[0]


def svd_batch(a):
    """svd() over a stack of same-shaped matrices, shape (b, m, n).

    Rotations are applied across the whole batch per index pair, so large
    batches of small matrices cost a few hundred vectorized passes instead
    of b separate factorizations.
    """
    arr = np.asarray(a, dtype=np.complex128)
    if arr.ndim != 3:
        raise ValueError("svd_batch expects a (batch, m, n) stack")
    if not np.all(np.isfinite(arr)):
        raise ValueError("svd_batch input has non-finite entries")
    b, m, n = arr.shape
    if m < n:
        v, sigma, u = _jacobi_tall(np.conj(np.swapaxes(arr, 1, 2)))
        return u, sigma, v
    return _jacobi_tall(arr.copy())


def _jacobi_tall(work):
    # work: (b, m, n) with m >= n, overwritten in place
    b, m, n = work.shape
    v = np.tile(np.eye(n, dtype=np.complex128), (b, 1, 1))
    for _ in range(_MAX_SWEEPS):
        converged = True
        for p in range(n - 1):
            for q in range(p + 1, n):
                ap = work[:, :, p]
                aq = work[:, :, q]
                app = np.einsum("bm,bm->b", ap.conj(), ap).real
                aqq = np.einsum("bm,bm->b", aq.conj(), aq).real
                apq = np.einsum("bm,bm->b", ap.conj(), aq)
                mag = np.abs(apq)
                need = mag > _JACOBI_TOL * np.sqrt(app * aqq) + 1e-300
                if not np.any(need):
                    continue
                converged = False
                # unit phase making the pair inner product real, then the
                # classic symmetric rotation on the 2x2 Gram block
                phase = np.where(need, np.conj(apq) / np.where(mag > 0, mag, 1.0), 1.0)
                tau = np.where(need, (app - aqq) / np.where(mag > 0, 2.0 * mag, 1.0), 0.0)
                sign = np.where(tau >= 0.0, 1.0, -1.0)
                t = np.where(need, -sign / (np.abs(tau) + np.hypot(1.0, tau)), 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                cb = c[:, None]
                sb = s[:, None] * phase[:, None]
                new_p = cb * ap - sb * aq
                new_q = s[:, None] * ap + cb * phase[:, None] * aq
                work[:, :, p] = np.where(need[:, None], new_p, ap)
                work[:, :, q] = np.where(need[:, None], new_q, aq)
                vp = v[:, :, p]
                vq = v[:, :, q]
                new_vp = cb * vp - sb * vq
                new_vq = s[:, None] * vp + cb * phase[:, None] * vq
                v[:, :, p] = np.where(need[:, None], new_vp, vp)
                v[:, :, q] = np.where(need[:, None], new_vq, vq)
        if converged:
            break
    sigma = np.sqrt(np.einsum("bmn,bmn->bn", work.conj(), work).real)
    # descending sort, stable so equal values keep original column order
    order = np.argsort(-sigma, axis=1, kind="stable")
    sigma = np.take_along_axis(sigma, order, axis=1)
    work = np.take_along_axis(work, order[:, None, :], axis=2)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    smax = sigma[:, :1]
    sigma = np.where(sigma < RANK_TOL * smax, 0.0, sigma)
    pos = sigma > 0
    scale = np.where(pos, sigma, 1.0)
    u = work / scale[:, None, :]
    for i in range(work.shape[0]):
        dead = np.where(~pos[i])[0]
        if dead.size:
            u[i] = _fill_null_columns(u[i], pos[i])
    return u, sigma, v


def _fill_null_columns(u, alive):
    # replace columns for zero singular values with an orthonormal completion
    m = u.shape[0]
    u = u.copy()
    basis = [u[:, j] for j in np.where(alive)[0]]
    dead = list(np.where(~alive)[0])
    for e in range(m):
        if not dead:
            break
        cand = np.zeros(m, dtype=np.complex128)
        cand[e] = 1.0
        for vec in basis:
            cand = cand - vec * (vec.conj() @ cand)
        norm = np.sqrt((cand.conj() @ cand).real)
        if norm > 1e-6:
            cand /= norm
            col = dead.pop(0)
            u[:, col] = cand
            basis.append(cand)
    return u


# =========================================================================
# Cholesky-based Hermitian positive definite routines
# =========================================================================

def cholesky_hpd(a):
    """Lower-triangular L with L L^H == a; raises if a is not HPD."""
    arr = _as_matrix(a)
    if arr.shape[0] != arr.shape[1]:
        raise ValueError("cholesky_hpd requires a square matrix")
    _check_hermitian(arr)
    n = arr.shape[0]
    l = np.zeros((n, n), dtype=np.complex128)
    for j in range(n):
        d = arr[j, j].real - np.sum(np.abs(l[j, :j]) ** 2)
        if d <= 0.0:
            raise ValueError("matrix is not positive definite")
        l[j, j] = np.sqrt(d)
        if j + 1 < n:
            l[j + 1:, j] = (arr[j + 1:, j] - l[j + 1:, :j] @ l[j, :j].conj()) / l[j, j]
    return l


def logdet_hpd(a):
    """log2 det(a) for Hermitian positive definite a, via Cholesky.

    Raises ValueError when a pivot is nonpositive (not positive definite)
    or the input is visibly non-Hermitian.
    """
    l = cholesky_hpd(a)
    return 2.0 * float(np.sum(np.log2(np.real(np.diagonal(l)))))


def solve_hpd(a, b):
    """Solve a @ x == b for Hermitian positive definite a."""
    l = cholesky_hpd(a)
    b = np.asarray(b, dtype=np.complex128)
    squeeze = b.ndim == 1
    rhs = b[:, None] if squeeze else b.copy()
    n = l.shape[0]
    y = np.zeros_like(rhs, dtype=np.complex128)
    for i in range(n):
        y[i] = (rhs[i] - l[i, :i] @ y[:i]) / l[i, i]
    x = np.zeros_like(y)
    lh = l.conj().T
    for i in range(n - 1, -1, -1):
        x[i] = (y[i] - lh[i, i + 1:] @ x[i + 1:]) / lh[i, i]
    return x[:, 0] if squeeze else x


def inv_hpd(a):
    """Inverse of a Hermitian positive definite matrix (Hermitian-symmetrized)."""
    n = np.asarray(a).shape[0]
    x = solve_hpd(a, np.eye(n, dtype=np.complex128))
    return 0.5 * (x + x.conj().T)


# =========================================================================
# diagonality
# =========================================================================

def offdiag_ratio(a):
    """Frobenius mass off the diagonal relative to the whole matrix.

    ||a - diag(a)||_F / max(||a||_F, eps); 0 for exactly diagonal input
    (including the zero matrix). Square matrices only.
    """
    arr = _as_matrix(a)
    if arr.shape[0] != arr.shape[1]:
        raise ValueError("offdiag_ratio requires a square matrix")
    total = float(np.sqrt(np.sum(np.abs(arr) ** 2)))
    off = arr - np.diag(np.diagonal(arr))
    offn = float(np.sqrt(np.sum(np.abs(off) ** 2)))
    return offn / max(total, np.finfo(np.float64).eps)
