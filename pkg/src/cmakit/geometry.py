"""Reference forms, right-hand-side densities, klt discrepancies and positivity checks."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .calculus import complex_hessian, lambda_min, zero_field
from .grid import DomainMask, fubini_study_rho

PSD_TOL = 1e-12


class PositivityError(ValueError):
    """A form that must be semipositive has a negative eigenvalue."""

    def __init__(self, what: str, node: int, lam: float):
        super().__init__(f"{what} is not semipositive at node {node} (lambda_min={lam:.3e})")
        self.node = node
        self.lambda_min = lam


@dataclass(frozen=True, eq=False)
class ReferenceForms:
    """The pair (omega, theta) on the interior and the current regularisation s."""

    mask: DomainMask
    omega: np.ndarray
    theta: np.ndarray
    s: float = 0.0
    A: float = 0.0
    psi1: Optional[np.ndarray] = None

    @property
    def theta_s(self) -> np.ndarray:
        return self.omega + self.s * self.theta

    def with_s(self, s: float) -> "ReferenceForms":
        if s < 0:
            raise ValueError("regularisation s must be nonnegative")
        return replace(self, s=float(s))

    def check(self) -> None:
        lam_w = lambda_min(self.omega)
        i = int(np.argmin(lam_w))
        if lam_w[i] < -PSD_TOL:
            raise PositivityError("omega", int(self.mask.interior[i]), float(lam_w[i]))
        lam_t = lambda_min(self.theta)
        j = int(np.argmin(lam_t))
        if not lam_t[j] > 0:
            raise PositivityError("theta", int(self.mask.interior[j]), float(lam_t[j]))


def build_reference_forms(mask: DomainMask, A: float, psi1: Optional[np.ndarray] = None,
                          s: float = 0.0) -> ReferenceForms:
    """``omega = A H(rho - a) + H(psi1)`` and the Fubini-Study form ``theta``.

    Raises
    ------
    PositivityError
        If omega has a negative eigenvalue below ``-1e-12`` (A too small for psi1).
    """
    if A < 0:
        raise ValueError("A must be nonnegative")
    H_rho = complex_hessian(mask.rho - mask.a, mask)
    omega = A * H_rho
    if psi1 is not None:
        omega = omega + complex_hessian(psi1, mask)
    fs = mask.evaluate(fubini_study_rho)
    theta = complex_hessian(fs, mask)
    forms = ReferenceForms(mask=mask, omega=omega, theta=theta, s=float(s), A=float(A), psi1=psi1)
    forms.check()
    return forms


@dataclass(frozen=True, eq=False)
class DensitySpec:
    """Right-hand-side data ``(w_E + s)/(w_F + s) * Omega_Y`` plus integrability data.

    All arrays are interior vectors.  ``f`` is a log-density used by
    ``e^{f + lam * phi}`` right-hand sides; ``volume`` is the ambient
    volume density.
    """

    base: np.ndarray
    w_E: Optional[np.ndarray] = None
    w_F: Optional[np.ndarray] = None
    f: Optional[np.ndarray] = None
    lam: float = 0.0
    p: float = 2.0
    Q: float = np.inf
    volume: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(self.base <= 0) or not np.all(np.isfinite(self.base)):
            raise ValueError("base density must be positive and finite")
        for name in ("w_E", "w_F"):
            w = getattr(self, name)
            if w is not None and (np.any(w < 0) or not np.all(np.isfinite(w))):
                raise ValueError(f"{name} must be nonnegative and finite")
        if self.lam not in (0.0, 1.0):
            raise ValueError("multiplier lam must be 0 or 1")
        if not self.p > 1:
            raise ValueError("integrability exponent p must exceed 1")


def regularized_density(spec: DensitySpec, s: float) -> np.ndarray:
    """Nodewise ``(w_E + s) / (w_F + s) * Omega_Y``.

    Raises
    ------
    ZeroDivisionError
        For ``s = 0`` when ``w_F`` vanishes somewhere.
    """
    if s < 0:
        raise ValueError("s must be nonnegative")
    w_E = np.zeros_like(spec.base) if spec.w_E is None else spec.w_E
    w_F = np.zeros_like(spec.base) if spec.w_F is None else spec.w_F
    den = w_F + s
    if np.any(den <= 0):
        raise ZeroDivisionError("w_F + s vanishes at some node; regularise with s > 0")
    out = (w_E + s) / den * spec.base
    if np.any(out <= 0):
        raise ValueError("regularized density vanishes at some node (w_E = 0 with s = 0)")
    return out


def lp_norm_check(density: np.ndarray, p: float, mask: DomainMask) -> float:
    """``sum density^p h^(2n)`` over the interior (compare with the bound Q)."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    density = np.asarray(density, dtype=float)
    if density.shape == mask.spec.shape:
        density = mask.on_interior(density)
    return float(np.sum(np.abs(density) ** p) * mask.spec.cell_volume)


@dataclass(frozen=True)
class KltData:
    n: int
    m: int
    a: Fraction
    is_klt: bool
    e_coefficients: tuple = ()
    f_coefficients: tuple = ()


def cone_discrepancy_by_adjunction(n: int, m: int) -> Fraction:
    """Discrepancy of the cone over ``{sum z_i^m = 0}`` from degrees in P^{n-1}.

    On the exceptional divisor (a degree-m hypersurface of P^{n-1}) the
    canonical class has degree ``m - n`` and E restricts with degree ``-1``;
    adjunction ``K = (a + 1) E|`` fixes ``a``.
    """
    deg_canonical = Fraction(m - n)
    deg_exceptional = Fraction(-1)
    return deg_canonical / deg_exceptional - 1


def adjunction_split(discrepancies: Sequence) -> tuple:
    """Split discrepancies into nonnegative E-coefficients and F-coefficients ``b = -a``."""
    e = tuple(Fraction(d) for d in discrepancies if Fraction(d) >= 0)
    f = tuple(-Fraction(d) for d in discrepancies if Fraction(d) < 0)
    return e, f


def klt_discrepancy(n: int, m: int) -> KltData:
    """Discrepancy data of the homogeneous hypersurface cone ``{sum z_i^m = 0}`` in C^n."""
    if n < 2 or m < 2:
        raise ValueError("need n >= 2 and m >= 2")
    a = cone_discrepancy_by_adjunction(n, m)
    e, f = adjunction_split([a])
    return KltData(n=n, m=m, a=a, is_klt=a > -1, e_coefficients=e, f_coefficients=f)


@dataclass(frozen=True)
class BlowupCheck:
    matrix: np.ndarray
    lambda_min: float
    schur_complement: float
    schur_det: float
    semipositive: bool


def blowup_matrix(z_i: complex, u) -> np.ndarray:
    """The matrix ``[[1/2 + sum|u|^2, Y], [Y^*, |z_i|^2 I]]`` with ``Y = u conj(z_i)``."""
    u = np.atleast_1d(np.asarray(u, dtype=complex))
    k = u.size
    M = np.zeros((k + 1, k + 1), dtype=complex)
    M[0, 0] = 0.5 + np.sum(np.abs(u) ** 2)
    Y = u * np.conj(z_i)
    M[0, 1:] = Y
    M[1:, 0] = np.conj(Y)
    M[1:, 1:] = abs(z_i) ** 2 * np.eye(k)
    return M


def blowup_positivity(z_i: complex, u) -> BlowupCheck:
    """Semipositivity of the pulled-back form along a blow-up chart.

    Returns the minimum eigenvalue, the Schur complement of the
    ``|z_i|^2 I`` block (which equals 1/2 when ``z_i != 0``) and the
    determinant obtained from it, ``|z_i|^(2(n-1)) / 2``.
    """
    M = blowup_matrix(z_i, u)
    k = M.shape[0] - 1
    lam = float(np.linalg.eigvalsh(M)[0])
    r2 = abs(z_i) ** 2
    if r2 > 0:
        Y = M[0, 1:]
        schur = float((M[0, 0] - np.vdot(Y, Y) / r2).real)
    else:
        schur = float(M[0, 0].real)
    schur_det = schur * r2 ** k
    return BlowupCheck(matrix=M, lambda_min=lam, schur_complement=schur,
                       schur_det=schur_det, semipositive=lam >= -PSD_TOL)


@dataclass(frozen=True, eq=False)
class BarrierWeight:
    """``w_D = |sigma_D|^2``, positivity margin beta and ``H(log h_D)``."""

    w_D: np.ndarray
    beta: float
    hessian_log_hD: np.ndarray = field(default=None)


@dataclass
class BarrierCheck:
    kodaira_ok: bool
    worst_lambda: float
    support_ok: bool
    mismatched_nodes: int

    @property
    def ok(self) -> bool:
        return self.kodaira_ok and self.support_ok


def verify_barrier_weight(weight: BarrierWeight, forms: ReferenceForms,
                          w_E: Optional[np.ndarray] = None,
                          w_F: Optional[np.ndarray] = None) -> BarrierCheck:
    """Check ``omega + H(log h_D) - beta theta >= 0`` and the support condition."""
    if not weight.beta > 0:
        raise ValueError("beta must be positive")
    H_log = zero_field(forms.mask) if weight.hessian_log_hD is None else weight.hessian_log_hD
    lam = lambda_min(forms.omega + H_log - weight.beta * forms.theta)
    worst = float(lam.min())
    mismatched = 0
    if w_E is not None or w_F is not None:
        prod = np.ones_like(weight.w_D)
        if w_E is not None:
            prod = prod * w_E
        if w_F is not None:
            prod = prod * w_F
        mismatched = int(np.count_nonzero((weight.w_D == 0) != (prod == 0)))
    return BarrierCheck(kodaira_ok=worst >= -PSD_TOL, worst_lambda=worst,
                        support_ok=mismatched == 0, mismatched_nodes=mismatched)
