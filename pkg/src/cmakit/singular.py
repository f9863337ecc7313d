"""Solutions with prescribed logarithmic poles.

For a pole set ``{p_j}`` with weights ``s_j`` and regularisation ``delta``
the ansatz ``P = sum_j s_j log(|z - p_j|^2 + delta)`` is split off and the
bounded remainder ``u`` solves

    det(H_P + H(u)) = exp(f + lam (u + P)) V,    u = psi - P on the band,

where ``H_P`` is the exact complex Hessian of ``P`` (smooth and positive
semidefinite for ``delta > 0``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .calculus import complex_hessian, lambda_min
from .geometry import ReferenceForms
from .grid import BoundaryData, DomainMask
from .solver import RightHandSide, SolveConfig, SolverError, newton_solve

log = logging.getLogger(__name__)


class PoleError(ValueError):
    pass


def admissible_p(beta: float, n: int) -> float:
    """Supremum of exponents p with ``|z|^(2 beta)`` in ``L^p`` near a point of C^n.

    Raises
    ------
    PoleError
        If no ``p > 1`` is admissible (``beta <= -n``).
    """
    if beta >= 0:
        return np.inf
    p = n / -beta
    if p <= 1:
        raise PoleError(f"density exponent {beta} admits no integrability exponent p > 1")
    return p


@dataclass
class PoleSpec:
    """Poles, weights, regularisation schedule and right-hand side data.

    ``log_density(z, delta)`` returns ``f + log V`` at points ``z`` of shape
    ``(m, n)``; ``psi(z)`` is the ambient boundary function.
    ``density_exponent`` (optional) is the exponent ``beta`` in
    ``e^f V ~ |z - p|^(2 beta)`` used for the integrability check.
    """

    poles: np.ndarray
    weights: np.ndarray
    psi: Callable
    log_density: Callable
    deltas: Sequence[float] = (1e-2, 1e-3, 1e-4)
    lam: float = 0.0
    density_exponent: Optional[float] = None

    def __post_init__(self):
        self.poles = np.atleast_2d(np.asarray(self.poles, dtype=complex))
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if len(self.poles) != len(self.weights):
            raise PoleError("one weight per pole is required")
        if np.any(self.weights < 0):
            raise PoleError("pole weights must be nonnegative")
        d = [float(x) for x in self.deltas]
        if not d or any(x <= 0 for x in d) or any(b >= a for a, b in zip(d, d[1:])):
            raise PoleError("delta schedule must be positive and decreasing")
        self.deltas = tuple(d)
        if self.lam not in (0.0, 1.0):
            raise PoleError("multiplier lam must be 0 or 1")
        for i in range(len(self.poles)):
            for j in range(i):
                if np.allclose(self.poles[i], self.poles[j]):
                    raise PoleError("poles must be pairwise distinct")
        if self.density_exponent is not None:
            self.max_p = admissible_p(self.density_exponent + self.lam * self.weights.sum(),
                                      self.poles.shape[1])

    def ansatz(self, z: np.ndarray, delta: float) -> np.ndarray:
        z = np.asarray(z)
        out = np.zeros(z.shape[:-1])
        for p, s in zip(self.poles, self.weights):
            out = out + s * np.log(np.sum(np.abs(z - p) ** 2, axis=-1) + delta)
        return out

    def ansatz_hessian(self, z: np.ndarray, delta: float) -> np.ndarray:
        """Exact ``d^2 P / dz_j dzbar_k`` at points ``z`` of shape ``(m, n)``."""
        m, n = z.shape
        H = np.zeros((m, n, n), dtype=complex)
        eye = np.eye(n)
        for p, s in zip(self.poles, self.weights):
            w = z - p
            q = np.sum(np.abs(w) ** 2, axis=-1) + delta
            H += s * (eye / q[:, None, None]
                      - np.conj(w)[:, :, None] * w[:, None, :] / (q ** 2)[:, None, None])
        return H


def _check_poles(spec: PoleSpec, mask: DomainMask) -> np.ndarray:
    """Distance from each pole to the boundary band; at least 5h is required."""
    if spec.poles.shape[1] != mask.n:
        raise PoleError("pole dimension does not match the grid")
    band = mask.boundary_coords()
    dist = np.array([np.min(np.sqrt(np.sum(np.abs(band - p) ** 2, axis=-1))) for p in spec.poles])
    if np.any(dist < 5 * mask.h):
        raise PoleError("pole too close to the boundary band")
    return dist


@dataclass
class Annulus:
    pole: int
    index: int
    inner: float
    outer: float
    nodes: np.ndarray = field(repr=False)


def dyadic_annuli(spec: PoleSpec, mask: DomainMask, min_inner: float = 2.0) -> list:
    """Annuli ``2^(-k-1) R0 <= |z - p| <= 2^(-k) R0`` with inner radius >= ``min_inner * h``.

    ``R0`` is half the distance from the pole to the boundary band.
    """
    dist = _check_poles(spec, mask)
    zi = mask.interior_coords()
    out = []
    for j, (p, d) in enumerate(zip(spec.poles, dist)):
        r = np.sqrt(np.sum(np.abs(zi - p) ** 2, axis=-1))
        R0 = 0.5 * d
        k = 0
        while R0 * 2.0 ** (-k - 1) >= min_inner * mask.h:
            inner, outer = R0 * 2.0 ** (-k - 1), R0 * 2.0 ** (-k)
            nodes = np.flatnonzero((r >= inner) & (r <= outer))
            out.append(Annulus(j, k, inner, outer, nodes))
            k += 1
    return out


@dataclass
class AsymptoticsReport:
    deltas: list
    annuli: list
    sup_dev: np.ndarray          # (n_delta, n_annuli)
    oscillation: np.ndarray      # per annulus
    max_oscillation: float
    non_exploding: bool
    bounded: bool
    osc_bound: float
    growth_const: float

    def records(self) -> list:
        rows = []
        for i, d in enumerate(self.deltas):
            for j, a in enumerate(self.annuli):
                rows.append({"delta": d, "pole": a.pole, "annulus_index": a.index,
                             "inner_r": a.inner, "outer_r": a.outer,
                             "sup_dev": float(self.sup_dev[i, j])})
        return rows

    def to_dict(self) -> dict:
        return {"deltas": self.deltas, "max_oscillation": self.max_oscillation,
                "oscillation": self.oscillation.tolist(), "non_exploding": self.non_exploding,
                "bounded": self.bounded, "osc_bound": self.osc_bound,
                "growth_const": self.growth_const, "annuli": self.records()}


def verify_asymptotics(phi_family: dict, spec: PoleSpec, mask: DomainMask,
                       osc_bound: float = 0.1, growth_const: float = 1.0,
                       min_inner: float = 2.0) -> AsymptoticsReport:
    """Sup of ``|phi_delta - P_delta|`` per dyadic annulus and cross-delta oscillation.

    The remainder is called bounded when the oscillation over delta is at
    most ``osc_bound`` on every annulus and, for every delta and pole, the
    innermost sup is at most twice the outermost plus ``growth_const``.
    """
    deltas = sorted(phi_family, reverse=True)
    if len(deltas) < 2:
        raise PoleError("at least two delta values are required")
    annuli = dyadic_annuli(spec, mask, min_inner)
    if not annuli or all(a.index == 0 for a in annuli):
        raise PoleError("annuli not resolvable at this grid spacing")
    zi = mask.interior_coords()
    dev = np.zeros((len(deltas), len(annuli)))
    for i, d in enumerate(deltas):
        rem = np.abs(mask.on_interior(phi_family[d]) - spec.ansatz(zi, d))
        for j, a in enumerate(annuli):
            dev[i, j] = rem[a.nodes].max() if a.nodes.size else 0.0
    osc = dev.max(axis=0) - dev.min(axis=0)
    ok = True
    for p in range(len(spec.poles)):
        cols = [j for j, a in enumerate(annuli) if a.pole == p]
        inner, outer = cols[-1], cols[0]
        ok &= bool(np.all(dev[:, inner] <= 2 * dev[:, outer] + growth_const))
    max_osc = float(osc.max())
    return AsymptoticsReport(deltas=list(deltas), annuli=annuli, sup_dev=dev, oscillation=osc,
                             max_oscillation=max_osc, non_exploding=ok,
                             bounded=ok and max_osc <= osc_bound, osc_bound=osc_bound,
                             growth_const=growth_const)


def fit_pole_weight(phi: np.ndarray, spec: PoleSpec, mask: DomainMask, delta: float,
                    pole: int = 0, min_inner: float = 2.0) -> float:
    """Least-squares ``c`` in ``phi ~ c log(|z-p|^2 + delta) + b0 + b1 |z-p|^2``.

    Uses the interior nodes of the two innermost resolvable annuli of the pole.
    """
    annuli = [a for a in dyadic_annuli(spec, mask, min_inner) if a.pole == pole]
    if len(annuli) < 2:
        raise PoleError("need two resolvable annuli to fit the pole weight")
    nodes = np.concatenate([annuli[-1].nodes, annuli[-2].nodes])
    w = mask.interior_coords()[nodes] - spec.poles[pole]
    r2 = np.sum(np.abs(w) ** 2, axis=-1)
    M = np.column_stack([np.log(r2 + delta), np.ones_like(r2), r2])
    coef, *_ = np.linalg.lstsq(M, mask.on_interior(phi)[nodes], rcond=None)
    return float(coef[0])


@dataclass
class PoleSolution:
    phi: dict
    remainder: dict
    reports: dict
    asymptotics: Optional[AsymptoticsReport]


def solve_log_pole(forms, spec: PoleSpec, cfg: Optional[SolveConfig] = None,
                   verify: bool = True, **verify_kwargs) -> PoleSolution:
    """Solve the pole-regularised family for every delta in the schedule.

    Parameters
    ----------
    forms : ReferenceForms or DomainMask
        With ``ReferenceForms`` the form ``theta_s`` is added to ``H_P``;
        a bare mask solves the flat equation.
    """
    if isinstance(forms, ReferenceForms):
        mask, base = forms.mask, forms.theta_s
    else:
        mask, base = forms, None
    _check_poles(spec, mask)
    zi = mask.interior_coords()
    phis, rems, reports = {}, {}, {}
    prev = None
    for d in spec.deltas:
        H_ref = spec.ansatz_hessian(zi, d)
        if base is not None:
            H_ref = H_ref + base
        P_int = spec.ansatz(zi, d)
        rhs = RightHandSide(np.asarray(spec.log_density(zi, d), dtype=float) + spec.lam * P_int,
                            spec.lam)
        bc = BoundaryData.from_function(mask, lambda z, d=d: spec.psi(z) - spec.ansatz(z, d))
        init = None
        if prev is not None and lambda_min(H_ref + complex_hessian(prev, mask)).min() >= (cfg or SolveConfig()).eps_psh:
            init = prev
        u, rep = newton_solve(H_ref, rhs, bc, init, cfg, mask=mask)
        if not rep.converged:
            raise SolverError(f"Newton failed at delta={d:g}: {rep.message}")
        rems[d] = u
        phis[d] = u + mask.evaluate(lambda z, d=d: spec.ansatz(z, d))
        reports[d] = rep
        prev = u
    asym = verify_asymptotics(phis, spec, mask, **verify_kwargs) if verify else None
    return PoleSolution(phi=phis, remainder=rems, reports=reports, asymptotics=asym)
