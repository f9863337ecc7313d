import json

import numpy as np
import pytest

from cmakit.grid import (BOUNDARY, EXTERIOR, INTERIOR, BoundaryData, DomainError, GridSpec,
                         build_domain, extend_boundary_data, fubini_study_rho, inward_band,
                         load_field, quintic_cutoff, save_field, stencil_offsets)

from conftest import r2


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec(3, 17, 1.0)
    with pytest.raises(ValueError):
        GridSpec(1, 16, 1.0)
    with pytest.raises(ValueError):
        GridSpec(1, 17, 0.0)
    spec = GridSpec(2, 17, 1.0)
    assert spec.h == pytest.approx(0.125)
    assert spec.size == 17 ** 4
    assert spec.cell_volume == pytest.approx(0.125 ** 4)


def test_coordinates_are_interleaved():
    spec = GridSpec(2, 5, 1.0)
    z = spec.coords()
    idx = (4, 0, 2, 3)  # x1 = 1, y1 = -1, x2 = 0, y2 = 0.5
    assert z[idx][0] == pytest.approx(1 - 1j)
    assert z[idx][1] == pytest.approx(0.5j)


@pytest.mark.parametrize("z,expected", [([0j], 0.0), ([1 + 0j], np.log(2)), ([1 + 0j, 1 + 0j], np.log(3))])
def test_fubini_study_potential(z, expected):
    assert fubini_study_rho(np.array(z)) == pytest.approx(expected)


def test_stencil_offsets_count():
    assert len(stencil_offsets(2)) == 9
    assert len(stencil_offsets(4)) == 33
    assert not stencil_offsets(4)[0].any()


def test_unit_disc_mask(disc33):
    z = disc33.interior_coords()[:, 0]
    assert np.all(np.abs(z) < 1)
    centre = disc33.spec.N // 2
    assert disc33.labels[centre, centre] == INTERIOR
    # every node strictly inside the disc is interior (band = 0)
    all_z = disc33.spec.coords()[..., 0]
    assert np.all(disc33.labels[np.abs(all_z) < 1 - 1e-12] == INTERIOR)


def test_stencil_closure(ball17):
    labels = ball17.labels.reshape(-1)
    assert np.all(labels[ball17.neighbors] != EXTERIOR)
    # each boundary node is read by some interior stencil
    assert set(ball17.boundary) <= set(np.unique(ball17.neighbors))
    assert np.all(labels[ball17.boundary] == BOUNDARY)


def test_ball_count_matches_enumeration():
    spec = GridSpec(2, 17, 1.0)
    a = np.log(1.25)
    mask = build_domain(spec, a=a)
    z = spec.coords().reshape(-1, 2)
    assert mask.n_interior == int(np.count_nonzero(np.log1p(r2(z)) < a))
    assert np.all(np.sqrt(r2(mask.interior_coords())) < 0.5)


def test_empty_interior_and_box_edge():
    with pytest.raises(DomainError, match="empty interior"):
        build_domain(GridSpec(1, 17, 1.0), a=0.0)
    with pytest.raises(DomainError):
        build_domain(GridSpec(1, 17, 0.9))


def test_inward_band_keeps_band_inside():
    spec = GridSpec(1, 33, 1.5)
    mask = build_domain(spec, band=inward_band(spec))
    assert np.all(mask.on_boundary(mask.rho) < mask.a)


def test_boundary_data_checks(disc33):
    bd = BoundaryData.from_function(disc33, r2)
    bd.check(disc33)
    with pytest.raises(ValueError):
        BoundaryData(values=np.full(len(disc33.boundary), np.nan)).check(disc33)
    with pytest.raises(ValueError):
        BoundaryData(values=np.zeros(3)).check(disc33)


def test_quintic_cutoff():
    t = np.linspace(-1, 2, 301)
    c = quintic_cutoff(t)
    assert np.all(c[t <= 0] == 0) and np.all(c[t >= 1] == 1)
    assert np.all(np.diff(c) >= 0)


def test_extension_zero_and_constant(disc33):
    zero = extend_boundary_data(BoundaryData.zero(disc33), disc33, 0.3)
    assert not zero.any()
    const = BoundaryData.from_function(disc33, lambda z: np.full(z.shape[:-1], 2.0))
    ext = extend_boundary_data(const, disc33, 0.3)
    c = disc33.spec.N // 2
    assert ext[c, c] == 0.0
    assert np.allclose(disc33.on_boundary(ext), 2.0)
    chi = quintic_cutoff((disc33.rho - (disc33.a - 0.3)) / 0.3)
    assert np.allclose(disc33.on_interior(ext), 2.0 * disc33.on_interior(chi))


def test_extension_real_part(disc33):
    psi = BoundaryData.from_function(disc33, lambda z: z[..., 0].real)
    ext = extend_boundary_data(psi, disc33, 0.3)
    c = disc33.spec.N // 2
    assert ext[c, c] == 0.0
    assert np.max(np.abs(disc33.on_interior(ext))) <= np.max(np.abs(psi.values))
    # harmonic fallback without the ambient function
    ext2 = extend_boundary_data(BoundaryData(values=psi.values), disc33, 0.3)
    assert np.max(np.abs(disc33.on_interior(ext2))) <= np.max(np.abs(psi.values)) + 1e-12


def test_extension_collar_too_wide(disc33):
    with pytest.raises(DomainError):
        extend_boundary_data(BoundaryData.zero(disc33), disc33, 1.0)


def test_field_round_trip(tmp_path, ball17, rng):
    values = rng.standard_normal(ball17.spec.shape)
    path = tmp_path / "f.field"
    save_field(path, ball17.spec, values, labels=ball17.labels)
    spec, back, labels = load_field(path)
    assert spec == ball17.spec
    assert np.array_equal(back, values)
    assert np.array_equal(labels, ball17.labels.astype(float))
    header = json.loads(path.read_bytes().split(b"\n", 1)[0])
    assert header == {"n": 2, "N": 17, "L": 1.5, "labels_included": True}
    save_field(path, ball17.spec, values)
    assert load_field(path)[2] is None


def test_field_truncated(tmp_path, disc33):
    path = tmp_path / "t.field"
    save_field(path, disc33.spec, np.zeros(disc33.spec.shape))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_field(path)
