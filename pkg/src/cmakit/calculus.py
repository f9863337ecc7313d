"""Discrete complex-Hessian calculus on a domain mask.

The complex Hessian uses ``d/dz = (d/dx - i d/dy) / 2`` and
``d/dzbar = (d/dx + i d/dy) / 2``, so ``H_jk = d^2 phi / dz_j dzbar_k`` and
``H(|z|^2) = I``.  Monge-Ampere densities are ``det H``; any normalising
factors relating ``det H`` dLebesgue to ``(i ddbar phi)^n`` are absorbed into
the densities supplied by the caller.

Hermitian fields are complex arrays of shape ``(n_interior, n, n)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .grid import DomainMask, stencil_offsets


class SingularHessianError(ValueError):
    """The total Hessian is not positive definite at some node."""

    def __init__(self, node: int, lambda_min: float):
        super().__init__(f"Hessian not positive definite at node {node} (lambda_min={lambda_min:.3e})")
        self.node = node
        self.lambda_min = lambda_min


@lru_cache(maxsize=None)
def _unit_stencil(n: int) -> np.ndarray:
    """Complex weights (times h^2) of each stencil offset in ``H_jk``."""
    ndim = 2 * n
    offsets = stencil_offsets(ndim)
    lookup = {tuple(o): k for k, o in enumerate(offsets)}
    C = np.zeros((len(offsets), n, n), dtype=complex)

    def second_diff(a, b):
        # Weights of the centred second difference D_ab (times h^2).
        w = {}
        if a == b:
            e = np.zeros(ndim, dtype=int)
            e[a] = 1
            w[tuple(e)] = 1.0
            w[tuple(-e)] = 1.0
            w[tuple(0 * e)] = -2.0
        else:
            for sa, sb in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                o = np.zeros(ndim, dtype=int)
                o[a], o[b] = sa, sb
                w[tuple(o)] = 0.25 * sa * sb
        return w

    for j in range(n):
        for k in range(j, n):
            xj, yj, xk, yk = 2 * j, 2 * j + 1, 2 * k, 2 * k + 1
            terms = [(xj, xk, 0.25), (yj, yk, 0.25)]
            if j != k:
                terms += [(xj, yk, 0.25j), (yj, xk, -0.25j)]
            for a, b, coef in terms:
                for off, wt in second_diff(a, b).items():
                    C[lookup[off], j, k] += coef * wt
            if j != k:
                C[:, k, j] = np.conj(C[:, j, k])
    C.setflags(write=False)
    return C


def stencil_weights(mask: DomainMask) -> np.ndarray:
    """Weights ``C[k]`` with ``H(phi)(x) = sum_k C[k] * phi(x + offsets[k])``."""
    return _unit_stencil(mask.n) / mask.h ** 2


def complex_hessian(phi: np.ndarray, mask: DomainMask) -> np.ndarray:
    """Complex Hessian of a field at every interior node, shape ``(m, n, n)``."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != mask.spec.shape:
        raise ValueError(f"field has shape {phi.shape}, expected {mask.spec.shape}")
    vals = phi.reshape(-1)[mask.neighbors]
    H = np.einsum("kij,km->mij", stencil_weights(mask), vals)
    return hermitize(H)


def hermitize(H: np.ndarray) -> np.ndarray:
    """Force exact Hermitian symmetry (real diagonal, conjugate mirror)."""
    H = 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))
    return H


def identity_field(mask: DomainMask, scale: float = 1.0) -> np.ndarray:
    return np.broadcast_to(scale * np.eye(mask.n, dtype=complex),
                           (mask.n_interior, mask.n, mask.n)).copy()


def zero_field(mask: DomainMask) -> np.ndarray:
    return np.zeros((mask.n_interior, mask.n, mask.n), dtype=complex)


def eigvalsh(H: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of 1x1 or 2x2 Hermitian matrices, shape ``(m, n)``."""
    n = H.shape[-1]
    if n == 1:
        return H[..., 0, 0].real[..., None].copy()
    if n != 2:
        raise ValueError("closed-form eigenvalues only for n <= 2")
    a = H[..., 0, 0].real
    d = H[..., 1, 1].real
    b = H[..., 0, 1]
    mean = 0.5 * (a + d)
    rad = np.hypot(0.5 * (a - d), np.abs(b))
    return np.stack([mean - rad, mean + rad], axis=-1)


def lambda_min(H: np.ndarray) -> np.ndarray:
    return eigvalsh(H)[..., 0]


def det(H: np.ndarray) -> np.ndarray:
    n = H.shape[-1]
    if n == 1:
        return H[..., 0, 0].real.copy()
    if n != 2:
        raise ValueError("closed-form determinant only for n <= 2")
    return H[..., 0, 0].real * H[..., 1, 1].real - np.abs(H[..., 0, 1]) ** 2


def psd_det(H: np.ndarray) -> np.ndarray:
    """Determinant of the PSD projection (negative eigenvalues clamped to 0)."""
    return np.prod(np.maximum(eigvalsh(H), 0.0), axis=-1)


def inverse(H: np.ndarray) -> np.ndarray:
    n = H.shape[-1]
    if n == 1:
        return 1.0 / H
    d = det(H)[..., None, None]
    inv = np.empty_like(H)
    inv[..., 0, 0] = H[..., 1, 1]
    inv[..., 1, 1] = H[..., 0, 0]
    inv[..., 0, 1] = -H[..., 0, 1]
    inv[..., 1, 0] = -H[..., 1, 0]
    return inv / d


def trace(H: np.ndarray) -> np.ndarray:
    return np.trace(H, axis1=-2, axis2=-1).real


def _total(H_ref, phi, mask):
    H = complex_hessian(phi, mask)
    return H if H_ref is None else H_ref + H


def ma_density(H_ref, phi: np.ndarray, mask: DomainMask) -> np.ndarray:
    """Nodewise ``det(H_ref + H(phi))`` on the interior (no positivity check)."""
    return det(_total(H_ref, phi, mask))


@dataclass
class PshReport:
    nodes: np.ndarray
    worst: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.nodes.size == 0

    def to_dict(self) -> dict:
        return {"violations": int(self.nodes.size), "worst_lambda_min": float(self.worst), "tol": self.tol}


def psh_check(H_ref, phi: np.ndarray, mask: DomainMask, tol: float = 0.0) -> PshReport:
    """Interior nodes where ``lambda_min(H_ref + H(phi)) < -tol``."""
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    lam = lambda_min(_total(H_ref, phi, mask))
    bad = lam < -tol
    return PshReport(nodes=mask.interior[bad], worst=float(lam.min()), tol=tol)


def ma_mass(H_ref, phi: np.ndarray, mask: DomainMask, region) -> float:
    """Monge-Ampere mass of a node set, using PSD-projected determinants."""
    pos = mask.interior_index(region)
    if pos.size == 0:
        return 0.0
    H = complex_hessian(phi, mask)[pos]
    if H_ref is not None:
        H = H + np.asarray(H_ref)[pos]
    return float(np.sum(psd_det(H)) * mask.spec.cell_volume)


def _check_pd(H_total, mask):
    lam = lambda_min(H_total)
    i = int(np.argmin(lam))
    if not lam[i] > 0:
        raise SingularHessianError(int(mask.interior[i]), float(lam[i]))


def linearized_apply(H_total: np.ndarray, eta: np.ndarray, mask: DomainMask) -> np.ndarray:
    """``tr(H_total^{-1} H(eta))`` at each interior node: the derivative of log det."""
    _check_pd(H_total, mask)
    M = inverse(H_total)
    return np.einsum("mjk,mkj->m", M, complex_hessian(eta, mask)).real


def linearized_matrix(H_total: np.ndarray, mask: DomainMask) -> sp.csr_matrix:
    """Sparse matrix of :func:`linearized_apply` acting on interior values.

    Boundary values are held fixed, so their columns are dropped.
    """
    _check_pd(H_total, mask)
    M = inverse(H_total)
    C = stencil_weights(mask)
    coef = np.einsum("mjk,okj->om", M, C).real
    m = mask.n_interior
    rows, cols, vals = [], [], []
    for k in range(len(mask.offsets)):
        if not np.any(C[k]):
            continue
        pos = mask.interior_pos[mask.neighbors[k]]
        keep = pos >= 0
        rows.append(np.flatnonzero(keep))
        cols.append(pos[keep])
        vals.append(coef[k][keep])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(m, m))


def real_gradient_sq(phi: np.ndarray, mask: DomainMask) -> np.ndarray:
    """Squared Euclidean gradient by centred differences on the interior."""
    flat = np.asarray(phi, dtype=float).reshape(-1)
    out = np.zeros(mask.n_interior)
    for k, off in enumerate(mask.offsets):
        if np.count_nonzero(off) == 1 and off.sum() == 1:
            a = int(np.flatnonzero(off)[0])
            back = next(j for j, o in enumerate(mask.offsets) if o[a] == -1 and np.count_nonzero(o) == 1)
            g = (flat[mask.neighbors[k]] - flat[mask.neighbors[back]]) / (2 * mask.h)
            out += g ** 2
    return out
