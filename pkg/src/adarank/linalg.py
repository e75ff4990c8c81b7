"""Dense matrix helpers and a deterministic one-sided Jacobi thin SVD."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import numba

SWEEP_CAP = 30
COUPLING_TOL = 1e-12


class ShapeError(ValueError):
    pass


class ConvergenceError(ArithmeticError):
    """Raised when Jacobi sweeps hit the iteration cap."""

    def __init__(self, sweeps: int, residual: float):
        super().__init__(
            f"one-sided Jacobi did not converge after {sweeps} sweeps "
            f"(residual off-diagonal coupling {residual:.3e})"
        )
        self.sweeps = sweeps
        self.residual = residual


def as_matrix(a) -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains NaN or Inf")
    return m


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


@dataclass(frozen=True)
class ThinSvd:
    """Thin factorization ``a = u @ diag(s) @ v.T`` with ``k = min(m, n)``."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def k(self) -> int:
        return self.s.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape[0], self.v.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T


@numba.njit(cache=True)
def _cyclic_sweeps(g, vt, floor2, tol, cap):
    """Row-cyclic one-sided Jacobi on the rows of ``g`` (columns of the input).

    Returns ``(sweeps, residual)``; ``sweeps == -1`` when ``cap`` was hit.
    """
    n, m = g.shape
    res = 0.0
    for sweep in range(cap):
        res = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(m):
                    alpha += g[p, i] * g[p, i]
                    beta += g[q, i] * g[q, i]
                    gamma += g[p, i] * g[q, i]
                # numerically zero columns are left alone
                if alpha <= floor2 or beta <= floor2:
                    continue
                scale = np.sqrt(alpha * beta)
                if abs(gamma) <= tol * scale:
                    continue
                res = max(res, abs(gamma) / scale)
                zeta = (beta - alpha) / (2.0 * gamma)
                sgn = 1.0 if zeta >= 0.0 else -1.0
                t = sgn / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for i in range(m):
                    x = g[p, i]
                    y = g[q, i]
                    g[p, i] = c * x - s * y
                    g[q, i] = s * x + c * y
                for i in range(n):
                    x = vt[p, i]
                    y = vt[q, i]
                    vt[p, i] = c * x - s * y
                    vt[q, i] = s * x + c * y
        if res <= tol:
            return sweep + 1, res
    return -1, res


def _complete_basis(u: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace columns not in ``keep`` by an orthonormal completion."""
    m, k = u.shape
    out = u.copy()
    basis = [out[:, j] for j in range(k) if keep[j]]
    eye = np.eye(m)
    for j in range(k):
        if keep[j]:
            continue
        best, best_norm = None, -1.0
        for e in range(m):
            r = eye[:, e].copy()
            for b in basis:
                r -= (b @ r) * b
            for b in basis:
                r -= (b @ r) * b
            nr = np.linalg.norm(r)
            if nr > best_norm + 1e-12:
                best, best_norm = r, nr
        col = best / best_norm
        out[:, j] = col
        basis.append(col)
    return out


def _jacobi_tall(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    m, n = a.shape
    # columns of a are stored as rows so the kernel walks contiguous memory
    g = np.array(a.T, order="C")
    vt = np.eye(n)
    floor = np.finfo(float).eps * max(m, n) * np.linalg.norm(a)
    sweeps, residual = _cyclic_sweeps(g, vt, floor * floor, COUPLING_TOL, SWEEP_CAP)
    if sweeps < 0:
        raise ConvergenceError(SWEEP_CAP, residual)

    sv = np.sqrt(np.einsum("ij,ij->i", g, g))
    order = np.argsort(-sv, kind="stable")
    sv, g, vt = sv[order], g[order], vt[order]
    keep = sv > floor
    u = np.zeros((m, n))
    u[:, keep] = (g[keep] / sv[keep, None]).T
    v = np.ascontiguousarray(vt.T)
    if not keep.all():
        if sv[0] == 0.0:
            u = np.eye(m, n)
            v = np.eye(n)
        else:
            u = _complete_basis(u, keep)
    return u, sv, v


def _fix_signs(u: np.ndarray, v: np.ndarray) -> None:
    idx = np.argmax(np.abs(u), axis=0)
    flip = u[idx, np.arange(u.shape[1])] < 0
    u[:, flip] *= -1.0
    v[:, flip] *= -1.0


def svd_thin(a) -> ThinSvd:
    """One-sided Jacobi SVD.

    Works on the taller orientation, sorts singular values in non-increasing
    order (stable for ties) and flips each pair so the largest-magnitude entry
    of the left vector is positive.
    """
    a = as_matrix(a)
    if a.shape[0] >= a.shape[1]:
        u, s, v = _jacobi_tall(a)
    else:
        v, s, u = _jacobi_tall(a.T)
    _fix_signs(u, v)
    for arr in (u, s, v):
        arr.setflags(write=False)
    return ThinSvd(u=u, s=s, v=v)


def reconstruct_components(svd: ThinSvd, selected: Iterable[int]) -> np.ndarray:
    """Sum of rank-1 terms ``s[r] * u[:, r] v[:, r]^T`` over ``selected``."""
    idx = sorted({int(r) for r in selected})
    m, n = svd.shape
    if any(r < 0 or r >= svd.k for r in idx):
        raise IndexError(f"component index out of range for k={svd.k}: {idx}")
    out = np.zeros((m, n))
    for r in idx:
        out += svd.s[r] * np.outer(svd.u[:, r], svd.v[:, r])
    return out


def relative_frobenius(a, b) -> float:
    """``||a - b||_F / max(||b||_F, tiny)``."""
    denom = max(np.linalg.norm(b), np.finfo(float).tiny)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / denom)
