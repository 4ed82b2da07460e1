import numpy as np
import pytest

from parahom.errors import SingularBasis
from parahom.lattice import build_lattice, cubic_lattice

import oracles


def test_integer_lattice_1d():
    lat = cubic_lattice(1)
    assert lat.r0 == pytest.approx(np.pi)
    assert lat.r1 == pytest.approx(np.pi)
    assert lat.cell_volume == pytest.approx(1.0)


def test_integer_lattice_2d():
    lat = cubic_lattice(2)
    assert lat.r0 == pytest.approx(np.pi)
    assert lat.r1 == pytest.approx(np.pi * np.sqrt(2))


def test_integer_lattice_3d():
    lat = cubic_lattice(3)
    assert lat.r0 == pytest.approx(np.pi)
    assert lat.r1 == pytest.approx(np.pi * np.sqrt(3))


def test_dual_relations():
    basis = np.array([[1.3, 0.2], [-0.1, 0.9]])
    lat = build_lattice(basis)
    gram = lat.dual_basis @ basis.T
    assert np.abs(gram - 2 * np.pi * np.eye(2)).max() < 1e-12
    assert lat.r0 <= lat.r1 + 1e-12


def test_hexagonal_radii_vs_voronoi_oracle():
    basis = np.array([[1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    lat = build_lattice(basis)
    r0_ref, r1_ref = oracles.voronoi_radii(lat.dual_basis)
    assert lat.r0 == pytest.approx(r0_ref, rel=1e-10)
    assert lat.r1 == pytest.approx(r1_ref, rel=1e-10)


def test_singular_basis_raises():
    with pytest.raises(SingularBasis):
        build_lattice(np.array([[1.0, 2.0], [0.5, 1.0]]))


def test_fold_lands_in_zone():
    rng = np.random.default_rng(0)
    lat = build_lattice(np.array([[1.0, 0.0], [0.5, np.sqrt(3) / 2]]))
    for _ in range(50):
        zeta = 20.0 * rng.standard_normal(2)
        folded = lat.fold(zeta)
        assert lat.in_brillouin(folded, tol=1e-9)
        # difference must be a dual lattice vector
        coeff = np.linalg.solve(lat.dual_basis.T, zeta - folded)
        assert np.abs(coeff - np.round(coeff)).max() < 1e-9


def test_grid_points_shape():
    lat = cubic_lattice(2, period=2.0)
    pts = lat.grid_points((4, 4))
    assert pts.shape == (4, 4, 2)
    assert pts[1, 0] == pytest.approx([0.5, 0.0])
