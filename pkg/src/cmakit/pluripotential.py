"""Capacities, relative extremal functions and the sublevel-set machinery.

Envelopes are computed by sweeping a discrete submean inequality along
complex lines: for a complex direction ``v`` the nodes ``x +- h Re(v)`` and
``x +- h Re(i v)`` span the complex line through ``x``, and

    u(x) <= (sum of the four values) / 4 + h^2 v* theta v

is the grid form of ``v* (theta + H(u)) v >= 0``.  Directions are ``{1}``
for n = 1 and ``{e1, e2, e1 +- e2, e1 +- i e2}`` for n = 2.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .calculus import complex_hessian, lambda_min, ma_mass, psd_det, psh_check
from .grid import DomainMask

log = logging.getLogger(__name__)

BRUTEFORCE_CAP = 30


class ConvergenceError(RuntimeError):
    pass


def _complex_directions(n: int) -> list:
    if n == 1:
        return [np.array([1.0 + 0j])]
    e1, e2 = np.array([1.0 + 0j, 0]), np.array([0, 1.0 + 0j])
    return [e1, e2, e1 + e2, e1 - e2, e1 + 1j * e2, e1 - 1j * e2]


def _real_offset(v: np.ndarray) -> np.ndarray:
    out = np.empty(2 * v.size, dtype=int)
    out[0::2] = np.rint(v.real)
    out[1::2] = np.rint(v.imag)
    return out


def _line_stencils(mask: DomainMask):
    """Per direction: neighbour indices ``(4, m)`` and the vector ``v``."""
    lookup = {tuple(o): k for k, o in enumerate(mask.offsets)}
    out = []
    for v in _complex_directions(mask.n):
        a, b = _real_offset(v), _real_offset(1j * v)
        ks = [lookup[tuple(a)], lookup[tuple(-a)], lookup[tuple(b)], lookup[tuple(-b)]]
        out.append((mask.neighbors[ks], v))
    return out


def _colouring(mask: DomainMask, stencils) -> np.ndarray:
    """Colour classes such that no node reads a node of its own colour."""
    offs = []
    for _, v in stencils:
        a, b = _real_offset(v), _real_offset(1j * v)
        offs += [a, b]
    idx = np.stack(np.unravel_index(mask.interior, mask.spec.shape), axis=1)
    ndim = mask.spec.ndim
    for m in range(2, 8):
        for w in itertools.product(range(1, m), repeat=ndim):
            if all(int(np.dot(w, o)) % m != 0 for o in offs):
                return (idx @ np.array(w)) % m
    raise RuntimeError("no colouring found")  # pragma: no cover


@dataclass
class CapacityQuery:
    """A compact node set ``K`` and a semipositive reference form ``theta``.

    ``theta`` is a Hermitian field on the interior or ``None`` for 0.  With
    ``strict`` the set must keep one node of distance from the boundary band.
    """

    K: np.ndarray
    theta: Optional[np.ndarray] = None
    method: str = "envelope"
    strict: bool = True

    def nodes(self, mask: DomainMask) -> np.ndarray:
        K = mask.region(self.K)
        if K.size == 0:
            raise ValueError("capacity query needs a nonempty set K")
        pos = mask.interior_pos[K]
        if np.any(pos < 0):
            raise ValueError("K must lie in the interior")
        if self.strict and np.any(mask.interior_pos[mask.neighbors[:, pos]] < 0):
            raise ValueError("K touches the boundary band")
        if self.method not in ("envelope", "bruteforce"):
            raise ValueError(f"unknown capacity method {self.method!r}")
        return K


@dataclass
class ExtremalResult:
    U: np.ndarray
    capacity: float
    support_defect: float
    sweeps: int
    psh_worst: float


def _theta_or_zero(theta, mask):
    if theta is None:
        return np.zeros((mask.n_interior, mask.n, mask.n), dtype=complex)
    return np.asarray(theta)


def extremal_function(q: CapacityQuery, mask: DomainMask, tol: float = 1e-9,
                      max_sweeps: int = 100_000, omega: Optional[float] = None) -> ExtremalResult:
    """Discrete relative extremal function of ``K`` by projected SOR sweeps.

    Starting from ``u = 0`` off ``K`` and ``-1`` on ``K``, every free interior
    node is lowered towards the largest value compatible with all complex-line
    submean inequalities, clamped to ``[-1, 0]``, until the sup-change of a
    sweep is at most ``tol``.  Band values stay 0.

    Raises
    ------
    ConvergenceError
        If ``max_sweeps`` sweeps do not reach ``tol``.
    """
    K = q.nodes(mask)
    theta = _theta_or_zero(q.theta, mask)
    h2 = mask.h ** 2
    stencils = _line_stencils(mask)
    nb = np.stack([s[0] for s in stencils])                       # (d, 4, m)
    shift = np.stack([h2 * np.einsum("i,mij,j->m", np.conj(v), theta, v).real
                      for _, v in stencils])                      # (d, m)
    colour = _colouring(mask, stencils)
    free = np.ones(mask.n_interior, dtype=bool)
    free[mask.interior_pos[K]] = False
    classes = [np.flatnonzero(free & (colour == c)) for c in np.unique(colour)]
    if omega is None:
        idx = np.unravel_index(mask.interior, mask.spec.shape)[0]
        across = idx.max() - idx.min() + 2
        omega = 2.0 / (1.0 + np.sin(np.pi / across))

    u = np.zeros(mask.spec.size)
    u[K] = -1.0
    sweeps = 0
    change = np.inf
    while change > tol:
        if sweeps >= max_sweeps:
            raise ConvergenceError(f"envelope sweep did not converge in {max_sweeps} sweeps")
        change = 0.0
        for pos in classes:
            nodes = mask.interior[pos]
            target = (u[nb[:, :, pos]].sum(axis=1) / 4.0 + shift[:, pos]).min(axis=0)
            old = u[nodes]
            new = np.clip(old + omega * (target - old), -1.0, 0.0)
            u[nodes] = new
            if new.size:
                change = max(change, float(np.max(np.abs(new - old))))
        sweeps += 1
    U = u.reshape(mask.spec.shape)
    cap = ma_mass(theta, U, mask, K)
    H = theta + complex_hessian(U, mask)
    dens = psd_det(H)
    off = free & (mask.on_interior(U) < -1e-6)
    defect = float(np.sum(dens[off]) * mask.spec.cell_volume)
    return ExtremalResult(U=U, capacity=cap, support_defect=defect, sweeps=sweeps,
                          psh_worst=float(lambda_min(H).min()))


def _bruteforce_capacity(q: CapacityQuery, mask: DomainMask, rng: np.random.Generator,
                         starts: int = 64, min_step: float = 2.0 ** -10) -> float:
    """Maximise the mass on K over grid theta-PSH functions with values in [-1, 0]."""
    if mask.n_interior > BRUTEFORCE_CAP:
        raise ValueError(f"bruteforce capacity limited to {BRUTEFORCE_CAP} interior nodes")
    K = q.nodes(mask)
    theta = _theta_or_zero(q.theta, mask)
    act = mask.active
    col = np.full(mask.spec.size, -1, dtype=np.int64)
    col[act] = np.arange(act.size)
    # Dense map from active values to the Hessian entries of every interior node.
    from .calculus import stencil_weights
    C = stencil_weights(mask)
    W = np.zeros((mask.n_interior, mask.n, mask.n, act.size), dtype=complex)
    for k in range(len(mask.offsets)):
        W[np.arange(mask.n_interior), :, :, col[mask.neighbors[k]]] += C[k]
    kpos = mask.interior_pos[K]
    vol = mask.spec.cell_volume
    z = mask.spec.node_coords(act)
    in_K = np.isin(act, K)

    Wm = W.reshape(-1, act.size)
    if mask.n == 1:
        Wm = Wm.real.copy()
    theta_flat = theta.reshape(-1).real.copy() if mask.n == 1 else theta.reshape(-1)

    def measure(Hf):
        if mask.n == 1:
            return float(np.sum(np.maximum(Hf[kpos], 0.0)) * vol), float(Hf.min())
        H = Hf.reshape(theta.shape)
        H = 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))
        return float(np.sum(psd_det(H[kpos])) * vol), float(lambda_min(H).min())

    best = 0.0
    tol = -1e-12
    for _ in range(starts):
        z0 = z[rng.integers(act.size)]
        q2 = np.sum(np.abs(z - z0) ** 2, axis=-1)
        vals = -1.0 + rng.uniform(0.0, 1.0) * q2 / q2.max()
        Hf = theta_flat + Wm @ vals
        obj, lam = measure(Hf)
        if lam < tol:
            vals = np.full(act.size, -rng.uniform(0.0, 1.0))
            Hf = theta_flat + Wm @ vals
            obj, _ = measure(Hf)
        step = 0.5
        while step >= min_step:
            improved = False
            for j in rng.permutation(act.size):
                for d in (step, -step):
                    new = min(0.0, max(-1.0, vals[j] + d))
                    if new == vals[j]:
                        continue
                    trial = Hf + (new - vals[j]) * Wm[:, j]
                    o, lam = measure(trial)
                    if lam < tol or o < obj - 1e-15:
                        continue
                    # Ties are broken towards the extremal profile: up off K, down on K.
                    if o > obj + 1e-15 or (d > 0) != in_K[j]:
                        vals[j], Hf, obj, improved = new, trial, o, True
                        break
            if not improved:
                step *= 0.5
        best = max(best, obj)
    return best


def capacity(q: CapacityQuery, mask: DomainMask, rng: Optional[np.random.Generator] = None,
             **kwargs) -> float:
    """Capacity of ``K`` relative to the domain: envelope mass or brute-force maximum."""
    if q.method == "bruteforce":
        return _bruteforce_capacity(q, mask, rng or np.random.default_rng(0), **kwargs)
    return extremal_function(q, mask, **kwargs).capacity


@dataclass
class ComparisonReport:
    lhs: float
    rhs: float
    slack: float
    tol: float
    set_size: int
    passed: bool
    skipped: bool = False
    reason: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_comparison(u: np.ndarray, v: np.ndarray, theta, mask: DomainMask) -> ComparisonReport:
    """Compare the masses of ``theta + H(v)`` and ``theta + H(u)`` on ``{u < v}``.

    Passes iff ``rhs - lhs >= -50 h^2 |{u<v}| h^(2n)``.  Preconditions
    (both functions grid theta-PSH within ``10 h``, ``u >= v`` on the band)
    are checked; on violation the comparison is skipped and reported.
    """
    h = mask.h
    for name, f in (("u", u), ("v", v)):
        rep = psh_check(theta, f, mask, tol=10 * h)
        if not rep.ok:
            return ComparisonReport(0.0, 0.0, 0.0, 0.0, 0, False, True,
                                    f"{name} is not theta-PSH (worst {rep.worst:.3e})")
    if np.any(mask.on_boundary(u) < mask.on_boundary(v) - 1e-12):
        return ComparisonReport(0.0, 0.0, 0.0, 0.0, 0, False, True,
                                "boundary ordering u >= v violated")
    S = mask.interior[mask.on_interior(u) < mask.on_interior(v)]
    lhs = ma_mass(theta, v, mask, S)
    rhs = ma_mass(theta, u, mask, S)
    tol = 50 * h ** 2 * S.size * mask.spec.cell_volume
    slack = rhs - lhs
    return ComparisonReport(lhs, rhs, slack, tol, int(S.size), slack >= -tol)


# -- sublevel sets ----------------------------------------------------------------

@dataclass
class SublevelStats:
    levels: np.ndarray
    sets: list
    a: np.ndarray
    b: np.ndarray
    F: np.ndarray
    skipped: list
    n: int
    h: float
    cell_volume: float
    inf_phi: float

    def records(self) -> list:
        return [{"level": float(l), "nodes": int(len(S)), "a": float(a), "b": float(b), "F": float(F)}
                for l, S, a, b, F in zip(self.levels, self.sets, self.a, self.b, self.F)]


def sublevel_stats(phi_s: np.ndarray, theta_s: np.ndarray, levels: Sequence[float],
                   mask: DomainMask, **sweep) -> SublevelStats:
    """``U(l) = {phi_s < -l}``, its capacity ``a``, MA mass ``b`` and ``F = a^(1/n)``.

    Levels whose set touches the boundary band are skipped (logged and
    listed in ``skipped``).
    """
    levels = np.asarray(levels, dtype=float)
    if np.any(np.diff(levels) <= 0):
        raise ValueError("levels must increase")
    vals = mask.on_interior(phi_s)
    keep_l, sets, A, B = [], [], [], []
    skipped = []
    for l in levels:
        pos = np.flatnonzero(vals < -l)
        if pos.size and np.any(mask.interior_pos[mask.neighbors[:, pos]] < 0):
            log.info("level %g skipped: sublevel set touches the boundary band", l)
            skipped.append(float(l))
            continue
        S = mask.interior[pos]
        if S.size == 0:
            a = b = 0.0
        else:
            a = extremal_function(CapacityQuery(S, theta_s), mask, **sweep).capacity
            b = ma_mass(theta_s, phi_s, mask, S)
        keep_l.append(l)
        sets.append(S)
        A.append(a)
        B.append(b)
    A = np.array(A)
    return SublevelStats(levels=np.array(keep_l), sets=sets, a=A, b=np.array(B),
                         F=A ** (1.0 / mask.n), skipped=skipped, n=mask.n, h=mask.h,
                         cell_volume=mask.spec.cell_volume, inf_phi=float(vals.min()))


@dataclass
class KolodziejReport:
    rows: list
    sublevel_ok: bool
    C_fit: float
    C_ok: bool
    decay_exponent: float
    monotone_decay: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _level_index(levels, l):
    i = np.flatnonzero(np.abs(levels - l) <= 1e-9 * max(1.0, abs(l)))
    return int(i[0]) if i.size else None


def check_kolodziej_inequalities(stats: SublevelStats, t: float,
                                 C_vol: Optional[float] = None) -> KolodziejReport:
    """Sublevel inequality ``t^n a(l+t) <= b(l) + tol``, fitted ``b <= C a^2`` and decay.

    ``tol = 50 h^2 |U(l)| h^(2n)``.  ``C`` is the smallest constant with
    ``b(l) <= C a(l)^2`` over levels with ``a > 0``; when ``C_vol`` is given
    the fit is also compared against it.  The decay exponent is the
    least-squares slope of ``log a(l+1)`` against ``log l``.
    """
    if not 0 < t < 1:
        raise ValueError("t must lie in (0, 1)")
    levels = stats.levels
    rows = []
    for i, l in enumerate(levels):
        j = _level_index(levels, l + t)
        if j is None:
            continue
        tol = 50 * stats.h ** 2 * len(stats.sets[i]) * stats.cell_volume
        lhs = t ** stats.n * stats.a[j]
        rows.append({"level": float(l), "lhs": float(lhs), "rhs": float(stats.b[i]),
                     "tol": tol, "ok": bool(lhs <= stats.b[i] + tol)})
    pos = stats.a > 0
    C = float(np.max(stats.b[pos] / stats.a[pos] ** 2)) if np.any(pos) else 0.0
    xs, ys = [], []
    for i, l in enumerate(levels):
        j = _level_index(levels, l + 1.0)
        if j is not None and l > 0 and stats.a[j] > 0:
            xs.append(np.log(l))
            ys.append(np.log(stats.a[j]))
    slope = float(np.polyfit(xs, ys, 1)[0]) if len(xs) >= 2 else float("nan")
    return KolodziejReport(rows=rows, sublevel_ok=all(r["ok"] for r in rows), C_fit=C,
                           C_ok=C_vol is None or C <= C_vol, decay_exponent=slope,
                           monotone_decay=bool(np.all(np.diff(stats.a) <= 1e-12)))


# -- iteration lemma ----------------------------------------------------------------

@dataclass
class DeGiorgiCertificate:
    A: float
    alpha: float
    l0: Optional[float]
    S: Optional[float]
    hypothesis_verified: bool
    vanishes_beyond_S: bool
    first_zero_level: Optional[float]
    witness: Optional[tuple] = None

    @property
    def certified(self) -> bool:
        return self.hypothesis_verified and self.vanishes_beyond_S

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["certified"] = self.certified
        return d


def degiorgi_bound(samples, A: float, alpha: float, rtol: float = 1e-12) -> DeGiorgiCertificate:
    """Check ``r F(l + r) <= A F(l)^(1 + alpha)`` on all sampled pairs with ``0 < r <= 1``.

    Parameters
    ----------
    samples : array of shape (k, 2)
        Rows ``(l, F(l))`` with increasing ``l``; ``F`` nonnegative and
        nonincreasing.

    Returns
    -------
    DeGiorgiCertificate
        ``l0`` is the smallest sampled ``l`` with ``F(l)^alpha <= 1/(2A)``
        and ``S = 2 + l0``.  On a violated pair the first witness
        ``(l, r)`` is recorded.
    """
    if not (A > 0 and alpha > 0):
        raise ValueError("A and alpha must be positive")
    samples = np.asarray(samples, dtype=float)
    l, F = samples[:, 0], samples[:, 1]
    if np.any(np.diff(l) <= 0):
        raise ValueError("sample levels must increase")
    if np.any(F < 0) or np.any(np.diff(F) > 0):
        raise ValueError("F must be nonnegative and nonincreasing")
    witness = None
    for i in range(l.size):
        r = l[i + 1:] - l[i]
        sel = r <= 1.0 + 1e-12
        lhs = r[sel] * F[i + 1:][sel]
        rhs = A * F[i] ** (1.0 + alpha)
        bad = np.flatnonzero(lhs > rhs * (1 + rtol) + 1e-300)
        if bad.size:
            witness = (float(l[i]), float(r[sel][bad[0]]))
            break
    ok = F ** alpha <= 1.0 / (2.0 * A)
    l0 = float(l[np.argmax(ok)]) if np.any(ok) else None
    S = None if l0 is None else 2.0 + l0
    zeros = np.flatnonzero(F == 0)
    first_zero = float(l[zeros[0]]) if zeros.size else None
    vanishes = S is not None and bool(np.all(F[l >= S] == 0))
    return DeGiorgiCertificate(A=A, alpha=alpha, l0=l0, S=S,
                               hypothesis_verified=witness is None,
                               vanishes_beyond_S=vanishes, first_zero_level=first_zero,
                               witness=witness)


@dataclass
class C0Certificate:
    S: Optional[float]
    bound_holds: bool
    inf_phi: float
    degiorgi: DeGiorgiCertificate

    def to_dict(self) -> dict:
        return {"S": self.S, "bound_holds": self.bound_holds, "inf_phi": self.inf_phi,
                "degiorgi": self.degiorgi.to_dict()}


def c0_certificate(stats: SublevelStats, A_fit: float, alpha: float = 1.0) -> C0Certificate:
    """Run the iteration lemma on ``F`` and verify ``inf phi >= -S - 10 h^2``."""
    cert = degiorgi_bound(np.column_stack([stats.levels, stats.F]), A_fit, alpha)
    holds = cert.certified and stats.inf_phi >= -cert.S - 10 * stats.h ** 2
    return C0Certificate(S=cert.S, bound_holds=bool(holds), inf_phi=stats.inf_phi, degiorgi=cert)


@dataclass
class CapacityTrend:
    s_values: list
    capacities: list
    limit: float
    monotone: bool
    gap: float

    def records(self) -> list:
        return [{"s": s, "capacity": c} for s, c in zip(self.s_values, self.capacities)]


def capacity_convergence(K, omega: np.ndarray, theta: np.ndarray, s_schedule: Sequence[float],
                         mask: DomainMask, **sweep) -> CapacityTrend:
    """``Cap_{omega + s theta}(K)`` along ``s_schedule`` against ``Cap_omega(K)``.

    ``monotone`` means the capacities do not increase as s decreases;
    ``gap`` is the relative distance of the last entry from the limit.
    """
    caps = [extremal_function(CapacityQuery(K, omega + s * theta), mask, **sweep).capacity
            for s in s_schedule]
    limit = extremal_function(CapacityQuery(K, omega), mask, **sweep).capacity
    order = np.argsort(-np.asarray(s_schedule, dtype=float), kind="stable")
    seq = np.asarray(caps)[order]
    monotone = bool(np.all(np.diff(seq) <= 1e-9))
    gap = abs(caps[-1] - limit) / limit if caps and limit > 0 else 0.0
    return CapacityTrend(s_values=[float(s) for s in s_schedule], capacities=caps,
                         limit=limit, monotone=monotone, gap=float(gap))
