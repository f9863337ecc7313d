"""Uniform grids over C^n, domain masks for sublevel sets, boundary data.

Conventions
-----------
A point of C^n is stored with its real coordinates interleaved as
``(x1, y1, ..., xn, yn)``; axis ``2j`` carries ``Re z_j`` and axis ``2j+1``
carries ``Im z_j``.  Full fields ("grid functions") are float64 arrays of
shape ``spec.shape``; only interior and boundary nodes carry meaningful
values, exterior nodes hold 0 and are never read.  Quantities that only
exist on interior nodes (densities, residuals, Hessians) are stored as
1-D "interior vectors" aligned with ``mask.interior``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

EXTERIOR, BOUNDARY, INTERIOR = 0, 1, 2


class DomainError(ValueError):
    """Raised when a domain cannot be represented on the requested grid."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid covering ``[-L, L]^(2n)`` with ``N`` nodes per real axis."""

    n: int
    N: int
    L: float

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError(f"complex dimension must be 1 or 2, got {self.n}")
        if self.N < 5 or self.N % 2 == 0:
            raise ValueError(f"nodes per axis must be odd and >= 5, got {self.N}")
        if not self.L > 0:
            raise ValueError(f"half width must be positive, got {self.L}")

    @property
    def ndim(self) -> int:
        return 2 * self.n

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.N - 1)

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.ndim

    @property
    def size(self) -> int:
        return self.N ** self.ndim

    @property
    def cell_volume(self) -> float:
        return self.h ** self.ndim

    def axis(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.N)

    def node_coords(self, flat: np.ndarray) -> np.ndarray:
        """Complex coordinates, shape ``(len(flat), n)``, of the given nodes."""
        idx = np.unravel_index(np.asarray(flat), self.shape)
        real = np.stack([-self.L + self.h * i for i in idx], axis=-1)
        return real[:, 0::2] + 1j * real[:, 1::2]

    def coords(self) -> np.ndarray:
        """Complex coordinates of every node, shape ``(*shape, n)``."""
        return self.node_coords(np.arange(self.size)).reshape(self.shape + (self.n,))


def stencil_offsets(ndim: int) -> np.ndarray:
    """Offsets read by the second-difference stencil.

    The centre, ``+-e_a`` for every axis, and ``+-e_a +- e_b`` for every pair
    of axes ``a < b``.  Row 0 is always the centre.
    """
    offs = [np.zeros(ndim, dtype=int)]
    for a in range(ndim):
        for sgn in (1, -1):
            o = np.zeros(ndim, dtype=int)
            o[a] = sgn
            offs.append(o)
    for a, b in itertools.combinations(range(ndim), 2):
        for sa, sb in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            o = np.zeros(ndim, dtype=int)
            o[a], o[b] = sa, sb
            offs.append(o)
    return np.array(offs)


def fubini_study_rho(z) -> np.ndarray:
    """``log(1 + sum_j |z_j|^2)`` evaluated over the last axis of ``z``."""
    z = np.asarray(z)
    return np.log1p(np.sum(np.abs(z) ** 2, axis=-1))


@dataclass(frozen=True, eq=False)
class DomainMask:
    """Node classification for ``{rho < a - band}`` on a grid.

    ``neighbors[k, i]`` is the flat index of ``interior[i] + offsets[k]``.
    """

    spec: GridSpec
    a: float
    band: float
    labels: np.ndarray
    rho: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray
    offsets: np.ndarray
    neighbors: np.ndarray
    interior_pos: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def h(self) -> float:
        return self.spec.h

    @property
    def n_interior(self) -> int:
        return len(self.interior)

    @property
    def active(self) -> np.ndarray:
        return np.union1d(self.interior, self.boundary)

    def interior_coords(self) -> np.ndarray:
        return self.spec.node_coords(self.interior)

    def boundary_coords(self) -> np.ndarray:
        return self.spec.node_coords(self.boundary)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.spec.shape)

    def to_full(self, vec: np.ndarray, boundary_values=None) -> np.ndarray:
        """Scatter an interior vector (and optional boundary values) to a field."""
        out = np.zeros(self.spec.size)
        out[self.interior] = vec
        if boundary_values is not None:
            out[self.boundary] = boundary_values
        return out.reshape(self.spec.shape)

    def on_interior(self, phi: np.ndarray) -> np.ndarray:
        return np.asarray(phi).reshape(-1)[self.interior]

    def on_boundary(self, phi: np.ndarray) -> np.ndarray:
        return np.asarray(phi).reshape(-1)[self.boundary]

    def evaluate(self, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Field holding ``func(z)`` on interior and boundary nodes, 0 elsewhere."""
        out = np.zeros(self.spec.size)
        act = self.active
        out[act] = np.asarray(func(self.spec.node_coords(act)), dtype=float)
        return out.reshape(self.spec.shape)

    def region(self, nodes) -> np.ndarray:
        """Normalise a node set (bool field or flat indices) to sorted flat indices."""
        nodes = np.asarray(nodes)
        if nodes.dtype == bool:
            return np.flatnonzero(nodes.reshape(-1))
        return np.unique(nodes.reshape(-1).astype(np.int64))

    def interior_index(self, nodes) -> np.ndarray:
        """Positions in the interior vector of the given interior nodes."""
        flat = self.region(nodes)
        pos = self.interior_pos[flat]
        if np.any(pos < 0):
            raise ValueError("node set is not contained in the interior")
        return pos

    def interior_neighbours_of(self, flat: np.ndarray) -> np.ndarray:
        """Stencil neighbourhood (flat indices) of a set of interior nodes."""
        pos = self.interior_index(flat)
        return np.unique(self.neighbors[:, pos])

    def check_field(self, phi: np.ndarray, name: str = "field") -> None:
        phi = np.asarray(phi)
        if phi.shape != self.spec.shape:
            raise ValueError(f"{name} has shape {phi.shape}, expected {self.spec.shape}")
        vals = phi.reshape(-1)[self.active]
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"{name} holds non-finite values on the domain")


def build_domain(spec: GridSpec, rho: Callable = fubini_study_rho, a: float = np.log(2.0),
                 band: float = 0.0) -> DomainMask:
    """Classify grid nodes for the domain ``{rho < a}``.

    Interior nodes satisfy ``rho < a - band``; boundary nodes are the
    non-interior nodes read by an interior stencil.  Dirichlet data is
    imposed on the boundary band.

    Raises
    ------
    DomainError
        If the interior is empty or the domain reaches the edge of the box.
    """
    rho_vals = np.asarray(rho(spec.coords()), dtype=float)
    flat_rho = rho_vals.reshape(-1)
    inside = flat_rho < a - band
    interior = np.flatnonzero(inside)
    if a <= 0 or interior.size == 0:
        raise DomainError("empty interior")

    edge = np.zeros(spec.shape, dtype=bool)
    for ax in range(spec.ndim):
        sl = [slice(None)] * spec.ndim
        sl[ax] = 0
        edge[tuple(sl)] = True
        sl[ax] = spec.N - 1
        edge[tuple(sl)] = True
    if np.any(flat_rho[edge.reshape(-1)] < a):
        raise DomainError("domain touches the box edge; increase the half width L")

    offsets = stencil_offsets(spec.ndim)
    idx = np.stack(np.unravel_index(interior, spec.shape), axis=0)
    neighbors = np.empty((len(offsets), interior.size), dtype=np.int64)
    for k, off in enumerate(offsets):
        neighbors[k] = np.ravel_multi_index(tuple(idx + off[:, None]), spec.shape)

    labels = np.full(spec.size, EXTERIOR, dtype=np.int8)
    labels[neighbors.reshape(-1)] = BOUNDARY
    labels[interior] = INTERIOR
    boundary = np.flatnonzero(labels == BOUNDARY)

    interior_pos = np.full(spec.size, -1, dtype=np.int64)
    interior_pos[interior] = np.arange(interior.size)
    return DomainMask(spec=spec, a=float(a), band=float(band),
                      labels=labels.reshape(spec.shape), rho=rho_vals,
                      interior=interior, boundary=boundary, offsets=offsets,
                      neighbors=neighbors, interior_pos=interior_pos)


def inward_band(spec: GridSpec, lipschitz: float = 1.0) -> float:
    """Band width that puts every boundary node strictly inside ``{rho < a}``.

    ``lipschitz`` bounds the Euclidean gradient of rho (1 for Fubini-Study).
    """
    return np.sqrt(2.0) * spec.h * lipschitz * (1.0 + 1e-9)


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Dirichlet values on the boundary band, with the ambient function if known."""

    values: np.ndarray
    ambient: Optional[Callable] = None

    @classmethod
    def from_function(cls, mask: DomainMask, func: Callable) -> "BoundaryData":
        vals = np.asarray(func(mask.boundary_coords()), dtype=float)
        return cls(values=vals, ambient=func)

    @classmethod
    def zero(cls, mask: DomainMask) -> "BoundaryData":
        return cls(values=np.zeros(len(mask.boundary)), ambient=lambda z: np.zeros(z.shape[:-1]))

    def check(self, mask: DomainMask) -> None:
        if self.values.shape != (len(mask.boundary),):
            raise ValueError("boundary data must have one value per boundary node")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("boundary data holds non-finite values")


def quintic_cutoff(t: np.ndarray) -> np.ndarray:
    """C^2 step: 0 for t <= 0, 1 for t >= 1, ``10t^3 - 15t^4 + 6t^5`` between."""
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)


def _harmonic_extension(values: np.ndarray, mask: DomainMask) -> np.ndarray:
    # Discrete Laplace problem on the interior with the boundary band as data.
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    m = mask.n_interior
    rows, cols, vals = [], [], []
    rhs = np.zeros(m)
    full = np.zeros(mask.spec.size)
    full[mask.boundary] = values
    for k, off in enumerate(mask.offsets):
        if np.count_nonzero(off) != 1:
            continue
        nb = mask.neighbors[k]
        pos = mask.interior_pos[nb]
        inner = pos >= 0
        rows.append(np.flatnonzero(inner))
        cols.append(pos[inner])
        rhs -= np.where(inner, 0.0, full[nb])
    deg = 2 * mask.spec.ndim
    A = sp.csr_matrix((np.ones(sum(len(r) for r in rows)),
                       (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
    A = A - deg * sp.identity(m, format="csr")
    out = full.copy()
    if mask.spec.ndim == 2:
        out[mask.interior] = spla.spsolve(A.tocsc(), rhs)
    else:
        # LU fill-in is prohibitive on 4D grids; the negated Laplacian is SPD.
        x, info = spla.cg(-A, -rhs, rtol=1e-12, atol=0.0, maxiter=10000)
        if info != 0:
            raise RuntimeError("harmonic extension did not converge")
        out[mask.interior] = x
    return out.reshape(mask.spec.shape)


def extend_boundary_data(psi: BoundaryData, mask: DomainMask, collar_width: float) -> np.ndarray:
    """Extension of boundary data supported in a collar of the boundary.

    The result equals ``psi`` on the boundary band, vanishes where
    ``rho < a - collar_width`` and is blended by :func:`quintic_cutoff` in
    ``(rho - (a - collar_width)) / collar_width``.  Inside the collar the
    ambient function of ``psi`` is used when available, otherwise the
    discrete harmonic extension of the band values.
    """
    psi.check(mask)
    if not collar_width > 0:
        raise ValueError("collar width must be positive")
    inner_level = mask.a - collar_width
    if np.min(mask.rho) >= inner_level or np.min(mask.on_interior(mask.rho)) >= inner_level:
        raise DomainError("collar too wide: it reaches the centre of the domain")

    if psi.ambient is not None:
        base = mask.evaluate(psi.ambient)
    else:
        base = _harmonic_extension(psi.values, mask)
    chi = quintic_cutoff((mask.rho - inner_level) / collar_width)
    out = np.zeros(mask.spec.size)
    out[mask.interior] = (chi * base).reshape(-1)[mask.interior]
    out[mask.boundary] = psi.values
    return out.reshape(mask.spec.shape)


# -- field files -------------------------------------------------------------

def save_field(path, spec: GridSpec, values: np.ndarray, labels: Optional[np.ndarray] = None) -> None:
    """Write a field as a JSON header line followed by little-endian float64 data.

    With ``labels`` the node labels follow the values as a second float64 block.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != spec.shape:
        raise ValueError("field shape does not match the grid")
    header = {"n": spec.n, "N": spec.N, "L": spec.L, "labels_included": labels is not None}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        fh.write(values.astype("<f8").tobytes(order="C"))
        if labels is not None:
            fh.write(np.asarray(labels, dtype="<f8").tobytes(order="C"))


def load_field(path):
    """Read a field file; returns ``(spec, values, labels_or_None)``."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        spec = GridSpec(n=int(header["n"]), N=int(header["N"]), L=float(header["L"]))
        count = spec.size
        values = np.frombuffer(fh.read(8 * count), dtype="<f8")
        if values.size != count:
            raise ValueError(f"{path}: truncated field data")
        labels = None
        if header.get("labels_included"):
            labels = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(spec.shape)
    return spec, values.astype(float).reshape(spec.shape), labels
