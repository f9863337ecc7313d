from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmakit.calculus import complex_hessian, identity_field, lambda_min
from cmakit.geometry import (BarrierWeight, DensitySpec, PositivityError, ReferenceForms,
                             adjunction_split, blowup_matrix, blowup_positivity,
                             build_reference_forms, klt_discrepancy, lp_norm_check,
                             regularized_density, verify_barrier_weight)

from conftest import r2


def test_reference_forms_at_origin(forms33, disc33):
    c = int(np.argmin(r2(disc33.interior_coords())))
    assert forms33.omega[c, 0, 0].real == pytest.approx(1.0, abs=10 * disc33.h ** 2)
    assert np.allclose(forms33.with_s(0.0).theta_s, forms33.omega)
    assert np.allclose(forms33.with_s(0.5).theta_s, forms33.omega + 0.5 * forms33.theta)
    with pytest.raises(ValueError):
        forms33.with_s(-1.0)


def test_reference_forms_with_extension(disc33):
    # H(psi1) = -c on the whole domain; A * lambda_min(H(rho)) must beat c.
    psi1 = disc33.evaluate(lambda z: -0.2 * r2(z))
    lam_rho = lambda_min(complex_hessian(disc33.rho - disc33.a, disc33)).min()
    A = 1.01 * 0.2 / lam_rho
    forms = build_reference_forms(disc33, A, psi1)
    assert lambda_min(forms.omega).min() >= -1e-12
    with pytest.raises(PositivityError) as exc:
        build_reference_forms(disc33, 0.9 * 0.2 / lam_rho, psi1)
    assert exc.value.node in set(disc33.interior)
    with pytest.raises(ValueError):
        build_reference_forms(disc33, -1.0)


def test_reference_forms_check_theta(disc33):
    I = identity_field(disc33)
    with pytest.raises(PositivityError, match="theta"):
        ReferenceForms(disc33, I, 0 * I).check()


def test_regularized_density_examples(disc33):
    m = disc33.n_interior
    base = 1.0 + r2(disc33.interior_coords())
    w = r2(disc33.interior_coords())
    spec = DensitySpec(base=base, w_E=w, w_F=w)
    for s in (1.0, 0.1, 1e-3):
        assert np.allclose(regularized_density(spec, s), base)
    assert np.allclose(regularized_density(DensitySpec(base=base, w_E=np.zeros(m), w_F=np.zeros(m)), 1.0), base)
    d = regularized_density(DensitySpec(base=base, w_E=w), 1e-2)
    c = int(np.argmin(w))
    assert d[c] == pytest.approx(base[c])


def test_regularized_density_errors(disc33):
    m = disc33.n_interior
    w = r2(disc33.interior_coords())
    with pytest.raises(ZeroDivisionError):
        regularized_density(DensitySpec(base=np.ones(m), w_F=w), 0.0)
    with pytest.raises(ValueError):
        DensitySpec(base=np.zeros(m))
    with pytest.raises(ValueError):
        DensitySpec(base=np.ones(m), w_E=-w)
    with pytest.raises(ValueError):
        DensitySpec(base=np.ones(m), p=1.0)
    with pytest.raises(ValueError):
        DensitySpec(base=np.ones(m), lam=0.5)


def test_density_monotone_in_s(disc33):
    z = disc33.interior_coords()
    spec = DensitySpec(base=np.ones(disc33.n_interior), w_E=0.5 * r2(z), w_F=r2(z))
    vals = [regularized_density(spec, s) for s in (1e-3, 1e-2, 1e-1, 1.0)]
    assert np.all(np.diff(np.stack(vals), axis=0) >= 0)


def test_lp_norm(disc33, disc65):
    assert lp_norm_check(np.ones(disc65.n_interior), 2.0, disc65) == pytest.approx(np.pi, rel=0.05)
    assert lp_norm_check(np.zeros(disc33.n_interior), 2.0, disc33) == 0.0
    with pytest.raises(ValueError):
        lp_norm_check(np.ones(disc33.n_interior), 1.0, disc33)


def test_lp_norm_singular_density(disc33):
    # |z|^-1 with the origin node carrying the cell average of r^-1.5.
    h = disc33.h
    r = np.abs(disc33.interior_coords()[:, 0])
    g = (np.arange(1000) + 0.5) / 1000 * h - h / 2
    X, Y = np.meshgrid(g, g)
    avg = np.mean((X ** 2 + Y ** 2) ** -0.75)
    d = np.where(r > 0, 1 / np.where(r > 0, r, 1), avg ** (1 / 1.5))
    oracle = 2 * np.pi * 2.0  # 2 pi int_0^1 r^-1.5 r dr
    assert lp_norm_check(d, 1.5, disc33) == pytest.approx(oracle, rel=0.05)


@pytest.mark.parametrize("n,m,a,klt", [(3, 2, 0, True), (4, 2, 1, True), (4, 3, 0, True),
                                       (2, 2, -1, False), (3, 3, -1, False), (3, 5, -3, False)])
def test_klt_table(n, m, a, klt):
    data = klt_discrepancy(n, m)
    assert isinstance(data.a, Fraction)
    assert data.a == a and data.a == n - m - 1
    assert data.is_klt is klt


def test_klt_monotone_and_errors():
    for n in range(2, 8):
        flags = [klt_discrepancy(n, m).is_klt for m in range(2, 10)]
        assert flags == [m < n for m in range(2, 10)]
    with pytest.raises(ValueError):
        klt_discrepancy(1, 2)
    with pytest.raises(ValueError):
        klt_discrepancy(3, 1)


def test_adjunction_split():
    e, f = adjunction_split([Fraction(1, 2), 0, Fraction(-1, 3), -1])
    assert e == (Fraction(1, 2), 0)
    assert f == (Fraction(1, 3), 1)
    assert all(x >= 0 for x in e) and all(0 < b <= 1 for b in f)


def test_blowup_examples():
    chk = blowup_positivity(0.0, [1.0, 2.0j])
    ev = np.linalg.eigvalsh(chk.matrix)
    assert np.allclose(sorted(ev), [0, 0, 5.5])
    assert chk.lambda_min == pytest.approx(0.0, abs=1e-12)
    chk = blowup_positivity(0.3, [1.0])
    assert np.linalg.det(chk.matrix).real == pytest.approx(0.045, rel=1e-12)
    assert chk.schur_det == pytest.approx(0.045, rel=1e-12)
    assert chk.lambda_min > 0 and chk.semipositive


@settings(max_examples=200, deadline=None)
@given(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
       st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
                min_size=1, max_size=3))
def test_blowup_property(z, u):
    chk = blowup_positivity(z, u)
    assert chk.lambda_min >= -1e-12 * max(1.0, np.abs(chk.matrix).max())
    if abs(z) > 1e-3:
        assert chk.schur_complement == pytest.approx(0.5, rel=1e-9, abs=1e-9)


def test_blowup_matrix_hermitian(rng):
    M = blowup_matrix(1 + 2j, rng.standard_normal(3) + 1j * rng.standard_normal(3))
    assert np.allclose(M, M.conj().T)


def test_barrier_weight(forms33, disc33):
    w = r2(disc33.interior_coords())
    ok = verify_barrier_weight(BarrierWeight(w_D=w, beta=0.5), forms33, w_E=w)
    assert ok.ok
    bad = verify_barrier_weight(BarrierWeight(w_D=w, beta=2.0), forms33, w_E=np.ones_like(w))
    assert not bad.kodaira_ok and not bad.support_ok and bad.mismatched_nodes == 1
    with pytest.raises(ValueError):
        verify_barrier_weight(BarrierWeight(w_D=w, beta=0.0), forms33)
