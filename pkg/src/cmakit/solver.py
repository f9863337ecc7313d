"""Dirichlet solver for ``det(H_ref + H(phi)) = g`` with damped Newton.

The unknown lives on interior nodes; boundary-band values are fixed.
Newton works on the log-det residual ``log det(H_ref + H(phi)) - log g``
and rejects steps that leave the cone ``lambda_min >= eps_psh``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .calculus import (complex_hessian, det, inverse, lambda_min, linearized_matrix,
                       real_gradient_sq, trace)
from .geometry import BarrierWeight, DensitySpec, ReferenceForms, regularized_density
from .grid import BoundaryData, DomainMask

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class PSHSafeguardError(SolverError):
    """No admissible iterate: missing subsolution or s too small for the grid."""


class ContinuationError(SolverError):
    pass


class NoSubsolutionError(SolverError):
    pass


@dataclass
class SolveConfig:
    tol: float = 1e-8
    max_iter: int = 50
    backtrack: float = 0.5
    min_step: float = 2.0 ** -20
    eps_psh: float = 1e-10
    linear_tol: float = 1e-10
    direct_limit: int = 5000

    def __post_init__(self):
        if min(self.tol, self.min_step, self.eps_psh, self.linear_tol) <= 0:
            raise ValueError("solver tolerances must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")


@dataclass
class SolveReport:
    converged: bool
    residual: float
    iterations: int
    lambda_min: float
    wall_time: float
    residual_history: list = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        return {"converged": self.converged, "residual": self.residual,
                "iterations": self.iterations, "lambda_min": self.lambda_min,
                "wall_ms": 1e3 * self.wall_time, "message": self.message}


@dataclass
class RightHandSide:
    """``log g = log_base + lam * phi`` on interior nodes."""

    log_base: np.ndarray
    lam: float = 0.0

    @classmethod
    def from_density(cls, g: np.ndarray, lam: float = 0.0) -> "RightHandSide":
        g = np.asarray(g, dtype=float)
        if np.any(g <= 0) or not np.all(np.isfinite(g)):
            raise ValueError("right-hand side density must be positive and finite")
        return cls(np.log(g), lam)

    def log_value(self, phi_int: np.ndarray) -> np.ndarray:
        if self.lam == 0.0:
            return self.log_base
        return self.log_base + self.lam * phi_int


def _as_rhs(g) -> RightHandSide:
    return g if isinstance(g, RightHandSide) else RightHandSide.from_density(g)


def _reference(ref, mask):
    if isinstance(ref, ReferenceForms):
        return ref.theta_s, ref.mask
    if mask is None:
        raise ValueError("a mask is required when no ReferenceForms is given")
    if ref is None:
        return np.zeros((mask.n_interior, mask.n, mask.n), dtype=complex), mask
    return np.asarray(ref), mask


def _boundary_values(bc, mask) -> np.ndarray:
    if bc is None:
        return np.zeros(len(mask.boundary))
    if isinstance(bc, BoundaryData):
        bc.check(mask)
        return bc.values
    vals = np.asarray(bc, dtype=float)
    if vals.shape == mask.spec.shape:
        return mask.on_boundary(vals)
    return vals


def _solve_linear(J, b, cfg: SolveConfig, n: int) -> np.ndarray:
    # Sparse LU is cheap in 2D; in 4D its fill-in loses to Krylov early.
    if n == 1 or J.shape[0] <= cfg.direct_limit:
        return spla.spsolve(J.tocsc(), b)
    # Large 4D systems: Krylov iteration with Jacobi preconditioning.
    d = J.diagonal()
    P = spla.LinearOperator(J.shape, matvec=lambda x: x / d)
    x, info = spla.bicgstab(J, b, rtol=cfg.linear_tol, atol=0.0, maxiter=5000, M=P)
    if info != 0:
        x, info = spla.gmres(J, b, x0=x, rtol=cfg.linear_tol, atol=0.0, restart=200,
                             maxiter=50, M=P)
    if info != 0:
        log.warning("iterative linear solve stopped early (info=%s)", info)
    return x


def _admissible_start(H_ref, bc, mask: DomainMask, eps_psh: float, A_max: float):
    """Admissible ``base + A * bowl``; returns the field and whether it matches ``bc``."""
    from .grid import _harmonic_extension

    values = _boundary_values(bc, mask)
    bases = []
    if isinstance(bc, BoundaryData) and bc.ambient is not None:
        with np.errstate(all="ignore"):
            amb = mask.evaluate(bc.ambient)
        if np.all(np.isfinite(amb)):
            bases.append(amb)
    bases.append(_harmonic_extension(values, mask))
    r2 = mask.evaluate(lambda z: np.sum(np.abs(z) ** 2, axis=-1))
    bowl = r2 - np.max(mask.on_boundary(r2))
    H_bowl = complex_hessian(bowl, mask)
    fallback = None
    for base in bases:
        base.reshape(-1)[mask.boundary] = values
        H_base = H_ref + complex_hessian(base, mask)
        A = 0.0
        while A <= A_max:
            if lambda_min(H_base + A * H_bowl).min() >= eps_psh:
                out = base + A * bowl
                if A == 0.0:
                    return out, True
                # Resetting the band to bc perturbs adjacent Hessians; re-check.
                reset = out.copy()
                reset.reshape(-1)[mask.boundary] = values
                if lambda_min(H_ref + complex_hessian(reset, mask)).min() >= eps_psh:
                    return reset, True
                if fallback is None:
                    fallback = out
                break
            A = 1.0 if A == 0 else 2.0 * A
    if fallback is None:
        raise PSHSafeguardError("no admissible initial guess found")
    return fallback, False


def admissible_initial_guess(ref, bc=None, mask: Optional[DomainMask] = None,
                             eps_psh: float = 1e-10, A_max: float = 2.0 ** 20) -> np.ndarray:
    """A field equal to ``bc`` on the boundary band and strictly admissible inside.

    Uses ``base + A (|z|^2 - max_band |z|^2)`` with ``A`` doubled until
    ``lambda_min(H_ref + H) >= eps_psh``.  ``base`` is the ambient boundary
    function when it is known and finite on the domain, then the discrete
    harmonic extension of the band values.

    Raises
    ------
    PSHSafeguardError
        If no such field keeps the band values; :func:`newton_solve` then
        falls back to a homotopy in the boundary data.
    """
    H_ref, mask = _reference(ref, mask)
    out, exact = _admissible_start(H_ref, bc, mask, eps_psh, A_max)
    if not exact:
        raise PSHSafeguardError("no admissible initial guess with the prescribed band values")
    return out


def _homotopy_solve(H_ref, rhs: RightHandSide, values, start, mask, cfg, min_dtau=2.0 ** -20):
    """Deform an exactly solved problem into the target one.

    ``start`` solves ``det(H_ref + H(u)) = det(H_ref + H(start))`` with its own
    band values; band data and log right-hand side are interpolated in
    ``tau`` and each stage is warm-started, halving failed steps.
    """
    logdet0 = np.log(det(H_ref + complex_hessian(start, mask)))
    band0 = mask.on_boundary(start)
    # Intermediate stages only need to stay near the path.
    loose = replace(cfg, tol=max(cfg.tol, 1e-4))
    phi, tau, dtau, iters, wall = start, 0.0, 1.0, 0, 0.0
    rep = None
    while tau < 1.0:
        t = min(1.0, tau + dtau)
        rhs_t = RightHandSide((1 - t) * logdet0 + t * rhs.log_base, t * rhs.lam)
        try:
            trial, rep_t = newton_solve(H_ref, rhs_t, (1 - t) * band0 + t * values, phi,
                                        cfg if t == 1.0 else loose, mask=mask)
            ok = rep_t.converged
        except PSHSafeguardError:
            ok = False
        if ok:
            phi, tau, rep = trial, t, rep_t
            iters += rep_t.iterations
            wall += rep_t.wall_time
            dtau *= 2.0
        else:
            dtau *= 0.5
            if dtau < min_dtau:
                raise PSHSafeguardError(f"boundary homotopy stalled at tau={tau:.6g}")
    log.debug("boundary homotopy reached tau=1 after %d Newton iterations", iters)
    rep.iterations, rep.wall_time = iters, wall
    return phi, rep


def newton_solve(forms, g, bc=None, init: Optional[np.ndarray] = None,
                 cfg: Optional[SolveConfig] = None, mask: Optional[DomainMask] = None):
    """Damped Newton for ``det(H_ref + H(phi)) = g``, ``phi = bc`` on the band.

    Parameters
    ----------
    forms : ReferenceForms, Hermitian field or None
        Reference form; a ``ReferenceForms`` contributes ``omega + s theta``.
    g : array or RightHandSide
        Positive interior density, or ``log g = log_base + lam * phi``.
    bc : BoundaryData, array of band values, field, or None for zero data.
    init : field, optional
        Starting iterate; its band values are replaced by ``bc``.  Must be
        admissible.  By default an admissible field with the right band
        values is built; when none exists the solve runs as a homotopy from
        an admissible field with its own band values.

    Returns
    -------
    phi : field
    report : SolveReport
    """
    cfg = cfg or SolveConfig()
    H_ref, mask = _reference(forms, mask)
    rhs = _as_rhs(g)
    values = _boundary_values(bc, mask)
    if init is None:
        start, exact = _admissible_start(H_ref, bc, mask, cfg.eps_psh, 2.0 ** 20)
        if not exact:
            return _homotopy_solve(H_ref, rhs, values, start, mask, cfg)
        phi = start
    else:
        phi = np.array(init, dtype=float)
    flat = phi.reshape(-1)
    flat[mask.boundary] = values
    mask.check_field(phi, "initial iterate")

    t0 = time.perf_counter()

    def evaluate(field_):
        H = H_ref + complex_hessian(field_, mask)
        lam = lambda_min(H)
        if lam.min() < cfg.eps_psh:
            return H, lam, None
        F = np.log(det(H)) - rhs.log_value(mask.on_interior(field_))
        return H, lam, F

    H, lam, F = evaluate(phi)
    if F is None:
        raise PSHSafeguardError(
            f"initial iterate violates the PSH safeguard (lambda_min={lam.min():.3e})")
    res = float(np.max(np.abs(F)))
    history = [res]
    it = 0
    message = ""
    while res > cfg.tol and it < cfg.max_iter:
        J = linearized_matrix(H, mask)
        if rhs.lam:
            J = J - rhs.lam * sp.identity(mask.n_interior, format="csr")
        delta = _solve_linear(J, -F, cfg, mask.n)
        step = 1.0
        accepted = False
        while step >= cfg.min_step:
            trial = phi.copy()
            trial.reshape(-1)[mask.interior] += step * delta
            H_t, lam_t, F_t = evaluate(trial)
            if F_t is not None:
                res_t = float(np.max(np.abs(F_t)))
                if res_t < res:
                    phi, H, lam, F, res = trial, H_t, lam_t, F_t, res_t
                    accepted = True
                    break
            step *= cfg.backtrack
        it += 1
        if not accepted:
            message = "line search failed"
            break
        history.append(res)
        log.debug("newton it=%d residual=%.3e step=%.3g", it, res, step)
    converged = res <= cfg.tol
    if not converged and not message:
        message = "maximum iterations reached"
    report = SolveReport(converged=converged, residual=res, iterations=it,
                         lambda_min=float(lam.min()), wall_time=time.perf_counter() - t0,
                         residual_history=history, message=message)
    return phi, report


# -- subsolutions -------------------------------------------------------------

@dataclass
class SubsolutionCheck:
    ok: bool
    margin: float
    lambda_min: float
    boundary_deviation: float


def _density_for(spec, s):
    return regularized_density(spec, s) if isinstance(spec, DensitySpec) else np.asarray(spec, dtype=float)


def verify_subsolution(forms, Phi: np.ndarray, density, mask: Optional[DomainMask] = None,
                       bc=None, boundary_tol: float = 1e-12, rtol: float = 1e-10) -> SubsolutionCheck:
    """Check ``det(theta_s + H(Phi)) >= density``, PSH and the band values ``bc``.

    ``bc`` defaults to zero data.  Equality is accepted up to rounding:
    the margin may be as low as ``-rtol * max(density)``.
    """
    H_ref, mask = _reference(forms, mask)
    density = _density_for(density, getattr(forms, "s", 0.0))
    H = H_ref + complex_hessian(Phi, mask)
    excess = det(H) - density
    lam = float(lambda_min(H).min())
    dev = float(np.max(np.abs(mask.on_boundary(Phi) - _boundary_values(bc, mask))))
    margin = float(excess.min())
    floor = -rtol * float(np.max(density))
    return SubsolutionCheck(ok=margin >= floor and lam >= floor and dev <= boundary_tol,
                            margin=margin, lambda_min=lam, boundary_deviation=dev)


def find_subsolution(forms: ReferenceForms, spec, s: float, A_max: float = 2.0 ** 10,
                     rel_tol: float = 1e-2):
    """Smallest ``A`` (doubling then bisection) making ``A (rho - a)`` a subsolution.

    The candidate equals ``A (rho - a)`` on interior nodes and 0 on the band.

    Returns
    -------
    A : float
    Phi : field
    margin : float
        Minimum nodewise excess ``det(theta_s + H(Phi)) - density``.
    """
    if not s > 0:
        raise ValueError("s must be positive")
    mask = forms.mask
    density = _density_for(spec, s)
    if np.any(density <= 0):
        raise ValueError("density must be positive")
    theta_s = forms.with_s(s).theta_s
    unit = np.zeros(mask.spec.size)
    unit[mask.interior] = mask.on_interior(mask.rho) - mask.a
    unit = unit.reshape(mask.spec.shape)
    H_unit = complex_hessian(unit, mask)

    def excess(A):
        H = theta_s + A * H_unit
        if lambda_min(H).min() < 0:
            return -np.inf
        return float((det(H) - density).min())

    if excess(0.0) >= 0:
        return 0.0, np.zeros(mask.spec.shape), excess(0.0)
    hi = 1.0
    while excess(hi) < 0:
        hi *= 2.0
        if hi > A_max:
            raise NoSubsolutionError(f"no admissible A <= {A_max}")
    lo = hi / 2.0 if hi > 1.0 else 0.0
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if excess(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return hi, hi * unit, excess(hi)


# -- continuity path and s-family ----------------------------------------------

@dataclass
class ContinuationState:
    s: float
    t: float
    phi: np.ndarray
    history: list = field(default_factory=list)


def _record(s, t, phi, mask, report) -> dict:
    vals = mask.on_interior(phi)
    return {"s": float(s), "t": float(t), "iterations": report.iterations,
            "residual": report.residual, "sup_phi": float(np.max(np.abs(vals))),
            "inf_phi": float(vals.min()), "lambda_min": report.lambda_min,
            "wall_ms": 1e3 * report.wall_time}


def continuity_path(forms: ReferenceForms, spec, s: float, t_schedule: Sequence[float],
                    cfg: Optional[SolveConfig] = None, min_dt: float = 1e-4,
                    warm_start: Optional[np.ndarray] = None) -> ContinuationState:
    """Follow ``det(theta_s + H(phi)) = (1 - t) det(theta_s) + t * target`` from t = 0.

    Boundary data is zero, so ``phi = 0`` at ``t = 0``.  Each solve starts
    from the previous one; a failed step is bisected down to ``min_dt``.
    With ``warm_start`` the endpoint ``t = 1`` is first attempted directly
    from that field.
    """
    cfg = cfg or SolveConfig()
    if not s > 0:
        raise ValueError("s must be positive")
    sched = [float(t) for t in t_schedule]
    if not sched or sched[0] != 0.0 or any(b <= a for a, b in zip(sched, sched[1:])) or sched[-1] > 1:
        raise ValueError("t schedule must start at 0 and increase to at most 1")
    forms_s = forms.with_s(s)
    mask = forms.mask
    base = det(forms_s.theta_s)
    target = _density_for(spec, s)

    def rhs(t):
        return (1.0 - t) * base + t * target

    if warm_start is not None and sched[-1] == 1.0:
        try:
            phi, rep = newton_solve(forms_s, rhs(1.0), None, warm_start, cfg)
        except PSHSafeguardError:
            rep = None
        if rep is not None and rep.converged:
            return ContinuationState(s=s, t=1.0, phi=phi, history=[_record(s, 1.0, phi, mask, rep)])

    phi = np.zeros(mask.spec.shape)
    zero_rep = SolveReport(True, float(np.max(np.abs(np.log(base) - np.log(rhs(0.0))))), 0,
                           float(lambda_min(forms_s.theta_s).min()), 0.0)
    history = [_record(s, 0.0, phi, mask, zero_rep)]
    t_prev = 0.0
    for t_goal in sched[1:]:
        while t_prev < t_goal:
            t_try = t_goal
            while True:
                phi_new, rep = newton_solve(forms_s, rhs(t_try), None, phi, cfg)
                if rep.converged:
                    break
                dt = 0.5 * (t_try - t_prev)
                if dt < min_dt:
                    raise ContinuationError(f"continuation stalled at t={t_prev:.6g} (s={s:g})")
                t_try = t_prev + dt
            phi, t_prev = phi_new, t_try
            history.append(_record(s, t_try, phi, mask, rep))
    return ContinuationState(s=s, t=t_prev, phi=phi, history=history)


@dataclass
class SFamilyReport:
    s_values: list
    sup_phi: list
    inf_phi: list
    differences: list
    uniform: bool
    growth_factor: float


def s_family_limit(forms: ReferenceForms, spec, s_schedule: Sequence[float],
                   cfg: Optional[SolveConfig] = None,
                   t_schedule: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
                   w_D: Optional[np.ndarray] = None, w_cutoff: float = 0.0,
                   growth_factor: float = 2.0):
    """Solve the regularised equation along a decreasing s schedule.

    Returns the last solution (the limit candidate), the combined
    continuation state and a report with ``sup|phi_s|`` per s and sup-norm
    differences between consecutive solutions on ``{w_D >= w_cutoff}``.
    Non-uniform growth of ``sup|phi_s|`` is flagged, not raised.
    """
    sched = [float(s) for s in s_schedule]
    if not sched or any(b >= a for a, b in zip(sched, sched[1:])) or sched[-1] <= 0:
        raise ValueError("s schedule must be positive and decreasing")
    mask = forms.mask
    keep = np.ones(mask.n_interior, dtype=bool) if w_D is None else np.asarray(w_D) >= w_cutoff
    history, sups, infs, diffs = [], [], [], []
    phi_prev = None
    state = None
    for s in sched:
        state = continuity_path(forms, spec, s, t_schedule, cfg, warm_start=phi_prev)
        vals = mask.on_interior(state.phi)
        sups.append(float(np.max(np.abs(vals))))
        infs.append(float(vals.min()))
        if phi_prev is not None:
            d = np.abs(vals - mask.on_interior(phi_prev))[keep]
            diffs.append(float(d.max()) if d.size else 0.0)
        history.extend(state.history)
        phi_prev = state.phi
    uniform = max(sups) <= growth_factor * max(min(sups), np.finfo(float).tiny)
    if not uniform:
        log.warning("sup|phi_s| grows beyond factor %g across the schedule", growth_factor)
    final = ContinuationState(s=sched[-1], t=state.t, phi=state.phi, history=history)
    report = SFamilyReport(s_values=sched, sup_phi=sups, inf_phi=infs, differences=diffs,
                           uniform=bool(uniform), growth_factor=growth_factor)
    return state.phi, final, report


# -- diagnostics ----------------------------------------------------------------

def barrier_diagnostics(forms: ReferenceForms, phi_s: np.ndarray, weight: BarrierWeight,
                        B: float, N_exp: float) -> dict:
    """Monitored barrier quantities for a converged solution.

    ``H = log tr_theta(theta_s + H(phi)) - B phi + B log w_D`` (on nodes
    with ``w_D > 0``) and ``|grad phi|^2 w_D^N`` are evaluated and their
    suprema returned; nothing is asserted.
    """
    if not B > 2 or not N_exp >= 1:
        raise ValueError("need B > 2 and N_exp >= 1")
    mask = forms.mask
    omega_prime = forms.theta_s + complex_hessian(phi_s, mask)
    tr = trace(np.einsum("mij,mjk->mik", inverse(forms.theta), omega_prime))
    w = np.asarray(weight.w_D, dtype=float)
    pos = w > 0
    H = np.full(mask.n_interior, -np.inf)
    H[pos] = np.log(tr[pos]) - B * mask.on_interior(phi_s)[pos] + B * np.log(w[pos])
    grad_term = real_gradient_sq(phi_s, mask) * w ** N_exp
    return {"sup_H": float(H.max()), "sup_grad_term": float(grad_term.max()),
            "H": H, "grad_term": grad_term}
