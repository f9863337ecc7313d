import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from cmakit.calculus import complex_hessian, det, identity_field, lambda_min, trace
from cmakit.geometry import BarrierWeight, DensitySpec, ReferenceForms
from cmakit.grid import BoundaryData, GridSpec, build_domain
from cmakit.solver import (NoSubsolutionError, PSHSafeguardError, RightHandSide, SolveConfig,
                           admissible_initial_guess, barrier_diagnostics, continuity_path,
                           find_subsolution, newton_solve, s_family_limit, verify_subsolution)

from conftest import r2


def poisson_oracle(mask, g, bc_values):
    """Direct 5-point solve of (1/4) Lap u = g with Dirichlet band values."""
    m, h = mask.n_interior, mask.h
    full = np.zeros(mask.spec.size)
    full[mask.boundary] = bc_values
    rows, cols = [], []
    rhs = 4.0 * h * h * np.asarray(g, dtype=float)
    for k, off in enumerate(mask.offsets):
        if np.count_nonzero(off) != 1:
            continue
        pos = mask.interior_pos[mask.neighbors[k]]
        inner = pos >= 0
        rows.append(np.flatnonzero(inner))
        cols.append(pos[inner])
        rhs = rhs - np.where(inner, 0.0, full[mask.neighbors[k]])
    A = sp.csr_matrix((np.ones(sum(map(len, rows))), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(m, m)) - 4 * sp.identity(m)
    return spla.spsolve(A.tocsc(), rhs)


def radial_mask(n, N, R=0.8):
    return build_domain(GridSpec(n, N, 1.0), rho=r2, a=R ** 2)


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(tol=0)
    with pytest.raises(ValueError):
        SolveConfig(backtrack=1.0)


@pytest.mark.parametrize("fixture", ["disc33", "ball17"])
def test_flat_solve_is_immediate(fixture, request):
    mask = request.getfixturevalue(fixture)
    from cmakit.geometry import build_reference_forms
    forms = build_reference_forms(mask, 1.0).with_s(0.1)
    phi, rep = newton_solve(forms, det(forms.theta_s), None, np.zeros(mask.spec.shape))
    assert rep.converged and rep.iterations == 0
    assert np.max(np.abs(phi)) == 0.0


@pytest.mark.parametrize("n,N", [(1, 33), (2, 13)])
def test_radial_solve_with_iterations(n, N):
    R = 0.8
    mask = radial_mask(n, N, R)
    exact = lambda z: r2(z) - R ** 2
    bc = BoundaryData.from_function(mask, exact)
    # g = 2^(1/n) rescales the exact profile; start from the wrong one.
    c = 2.0 ** (1.0 / n)
    phi, rep = newton_solve(None, np.full(mask.n_interior, 2.0), bc, None, mask=mask)
    assert rep.converged and rep.iterations > 0
    assert all(b < a for a, b in zip(rep.residual_history, rep.residual_history[1:]))
    H = complex_hessian(phi, mask)
    assert np.allclose(det(H), 2.0, rtol=1e-7)
    assert np.allclose(mask.on_boundary(phi), bc.values)
    # in 2D the solution is exactly the rescaled quadratic: c |z|^2 + harmonic
    if n == 1:
        z = mask.interior_coords()
        assert np.max(np.abs(mask.on_interior(phi) - (c * r2(z) - R ** 2)
                             - poisson_oracle(mask, np.zeros(mask.n_interior),
                                              bc.values - (c * r2(mask.boundary_coords()) - R ** 2)))) < 1e-8


def test_poisson_cross_check(disc33, rng):
    z = disc33.interior_coords()
    for _ in range(3):
        c = rng.uniform(-0.5, 0.5, 4)
        g = np.exp(c[0] * z[:, 0].real + c[1] * z[:, 0].imag) * (1 + 0.3 * np.sin(c[2] + 3 * c[3] * r2(z)))
        bc = BoundaryData.from_function(disc33, lambda w: c[1] * w[..., 0].real ** 2)
        phi, rep = newton_solve(None, g, bc, None, mask=disc33)
        assert rep.converged
        assert np.max(np.abs(disc33.on_interior(phi) - poisson_oracle(disc33, g, bc.values))) <= 1e-8


def test_exponential_right_hand_side():
    # det H(phi) = exp(f + phi) with phi* = |z|^2 - R^2 and f = -phi*.
    R = 0.8
    mask = radial_mask(1, 33, R)
    exact = lambda z: r2(z) - R ** 2
    rhs = RightHandSide(-mask.on_interior(mask.evaluate(exact)), lam=1.0)
    bc = BoundaryData.from_function(mask, exact)
    # 0 on the band, so the band reset only adds positive mass at the edge
    bump = mask.to_full(mask.on_interior(mask.evaluate(exact)))
    init = mask.evaluate(exact) - 0.5 * bump
    phi, rep = newton_solve(None, rhs, bc, init, mask=mask)
    assert rep.converged and rep.iterations <= 8
    assert np.allclose(mask.on_interior(phi), mask.on_interior(mask.evaluate(exact)), atol=1e-8)


def test_bad_initial_iterate(disc33):
    with pytest.raises(PSHSafeguardError):
        newton_solve(None, np.ones(disc33.n_interior), None, -disc33.evaluate(r2), mask=disc33)
    with pytest.raises(ValueError):
        newton_solve(None, np.zeros(disc33.n_interior), None, None, mask=disc33)


def test_admissible_initial_guess(disc33, ball17):
    bc = BoundaryData.from_function(disc33, lambda z: np.cos(3 * z[..., 0].real))
    g = admissible_initial_guess(None, BoundaryData(values=bc.values), mask=disc33)
    assert np.allclose(disc33.on_boundary(g), bc.values)
    assert lambda_min(complex_hessian(g, disc33)).min() >= 1e-10
    # in two variables resetting the band after adding the bowl can break positivity
    bc2 = BoundaryData(values=np.cos(3 * ball17.boundary_coords()[:, 0].real))
    with pytest.raises(PSHSafeguardError):
        admissible_initial_guess(None, bc2, mask=ball17)


def test_boundary_homotopy_in_two_variables():
    # without the ambient function the band reset breaks the bowl guess
    R = 0.8
    mask = radial_mask(2, 11, R)
    exact = lambda z: r2(z) - R ** 2
    bc = BoundaryData(values=exact(mask.boundary_coords()))
    phi, rep = newton_solve(None, np.ones(mask.n_interior), bc, None, mask=mask)
    assert rep.converged
    assert np.max(np.abs(mask.on_interior(phi) - mask.on_interior(mask.evaluate(exact)))) < 1e-6


# -- subsolutions ----------------------------------------------------------------

def test_subsolution_spec_fixture(inward33):
    I = identity_field(inward33)
    forms = ReferenceForms(inward33, 0 * I, I)
    dens = DensitySpec(base=np.ones(inward33.n_interior))
    A, Phi, margin = find_subsolution(forms, dens, 0.1)
    assert margin > 0
    chk = verify_subsolution(forms.with_s(0.1), Phi, dens)
    assert chk.ok and chk.margin > 0
    u = inward33.to_full(inward33.on_interior(inward33.rho) - inward33.a)
    Hu = complex_hessian(u, inward33)
    ok = [k for k in range(11) if (det(0.1 * I + 2 ** k * Hu) - 1).min() >= 0]
    assert ok and 2.0 ** ok[0] >= A > 2.0 ** (ok[0] - 1)


def test_subsolution_half_density(forms33):
    dens = 0.5 * det(forms33.with_s(0.1).theta_s)
    A, Phi, margin = find_subsolution(forms33, dens, 0.1)
    assert A == 0.0 and margin > 0
    assert verify_subsolution(forms33.with_s(0.1), Phi, dens).ok


def test_subsolution_errors(forms33, inward33):
    with pytest.raises(ValueError):
        find_subsolution(forms33, np.zeros(forms33.mask.n_interior), 0.1)
    with pytest.raises(ValueError):
        find_subsolution(forms33, np.ones(forms33.mask.n_interior), 0.0)
    I = identity_field(inward33)
    forms = ReferenceForms(inward33, 0 * I, I)
    with pytest.raises(NoSubsolutionError):
        find_subsolution(forms, np.full(inward33.n_interior, 1e6), 0.1, A_max=4)


def test_verify_subsolution_examples(forms33):
    mask = forms33.mask
    f = forms33.with_s(0.1)
    chk = verify_subsolution(f, np.zeros(mask.spec.shape), 2 * det(f.theta_s))
    assert not chk.ok and chk.margin < 0
    R = 0.8
    rmask = radial_mask(1, 33, R)
    Phi = rmask.evaluate(lambda z: r2(z) - R ** 2)
    bc = BoundaryData.from_function(rmask, lambda z: r2(z) - R ** 2)
    chk = verify_subsolution(None, Phi, np.ones(rmask.n_interior), mask=rmask, bc=bc)
    assert chk.ok and abs(chk.margin) < 1e-10


# -- continuity path and s-family ---------------------------------------------------

def test_continuity_trivial(forms33):
    mask = forms33.mask
    st = continuity_path(forms33, np.ones(mask.n_interior), 0.1, [0.0])
    assert st.t == 0.0 and not st.phi.any()
    target = det(forms33.with_s(0.1).theta_s)
    st = continuity_path(forms33, target, 0.1, [0, 0.5, 1])
    assert np.max(np.abs(st.phi)) < 1e-12
    with pytest.raises(ValueError):
        continuity_path(forms33, target, 0.1, [0.5, 1])


def test_continuity_matches_direct(forms33):
    mask = forms33.mask
    dens = DensitySpec(base=np.ones(mask.n_interior))
    st = continuity_path(forms33, dens, 0.1, [0, 0.25, 0.5, 0.75, 1.0])
    direct, rep = newton_solve(forms33.with_s(0.1), np.ones(mask.n_interior), None,
                               np.zeros(mask.spec.shape))
    assert np.max(np.abs(st.phi - direct)) <= 2 * SolveConfig().tol
    keys = {"s", "t", "iterations", "residual", "sup_phi", "inf_phi", "lambda_min", "wall_ms"}
    assert all(set(r) == keys for r in st.history)
    assert [r["t"] for r in st.history] == [0, 0.25, 0.5, 0.75, 1.0]
    for r in st.history:
        assert r["lambda_min"] >= SolveConfig().eps_psh


def test_sfamily_rate(forms33):
    mask = forms33.mask
    dens = DensitySpec(base=np.ones(mask.n_interior))
    _, _, rep1 = s_family_limit(forms33, dens, [0.1, 0.05])
    _, _, rep2 = s_family_limit(forms33, dens, [0.1, 0.075])
    ratio = rep2.differences[0] / rep1.differences[0]
    assert 0.4 <= ratio <= 0.6
    assert rep1.uniform


def test_sfamily_single_entry(forms33):
    mask = forms33.mask
    dens = DensitySpec(base=np.ones(mask.n_interior))
    phi, state, rep = s_family_limit(forms33, dens, [0.1])
    st = continuity_path(forms33, dens, 0.1, (0.0, 0.25, 0.5, 0.75, 1.0))
    assert np.array_equal(phi, st.phi) and rep.differences == []
    with pytest.raises(ValueError):
        s_family_limit(forms33, dens, [0.1, 0.2])


def test_sfamily_equal_weights(forms33):
    mask = forms33.mask
    w = r2(mask.interior_coords())
    dens = DensitySpec(base=np.ones(mask.n_interior), w_E=w, w_F=w)
    plain = DensitySpec(base=np.ones(mask.n_interior))
    a, _, _ = s_family_limit(forms33, dens, [0.1, 0.01])
    b, _, _ = s_family_limit(forms33, plain, [0.1, 0.01])
    assert np.max(np.abs(a - b)) < 1e-8


def test_barrier_diagnostics(forms33):
    mask = forms33.mask
    f = forms33.with_s(0.1)
    w = BarrierWeight(w_D=np.ones(mask.n_interior), beta=0.5)
    out = barrier_diagnostics(f, np.zeros(mask.spec.shape), w, B=3.0, N_exp=2)
    expected = np.log(trace(np.linalg.inv(f.theta) @ f.theta_s))
    assert np.allclose(out["H"], expected)
    assert out["sup_H"] == pytest.approx(expected.max())
    zero = BarrierWeight(w_D=np.zeros(mask.n_interior), beta=0.5)
    out = barrier_diagnostics(f, mask.evaluate(r2), zero, B=3.0, N_exp=2)
    assert out["sup_grad_term"] == 0.0
    with pytest.raises(ValueError):
        barrier_diagnostics(f, np.zeros(mask.spec.shape), w, B=1.0, N_exp=2)


def test_barrier_stable_in_s(forms33):
    mask = forms33.mask
    wD = BarrierWeight(w_D=1.0 - r2(mask.interior_coords()), beta=0.5)
    sups = []
    for s in (0.1, 0.01):
        st = continuity_path(forms33, np.ones(mask.n_interior), s, [0, 0.5, 1.0])
        sups.append(barrier_diagnostics(forms33.with_s(s), st.phi, wD, B=3.0, N_exp=2)["sup_H"])
    assert max(sups) <= 2 * min(sups)
