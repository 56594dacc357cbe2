import numpy as np
import pytest

from glcn import (DGSpace, Field, build_structured, dg_norm, evaluate,
                  interpolate, l2_norm, lp_norm)
from glcn.basis import ReferenceBasis
from glcn.fem import broken_grad_sq, dg_interior_jump_sq, field_csv, zero_field


@pytest.mark.parametrize("k", [1, 2, 3])
def test_basis_partition_of_unity_and_size(k):
    basis = ReferenceBasis(k)
    assert basis.size == (k + 1) * (k + 2) // 2
    pts = np.array([[0.2, 0.3], [0.0, 0.0], [0.5, 0.5], [0.1, 0.7]])
    vals = basis.values(pts)
    assert np.allclose(vals.sum(axis=-1), 1.0, atol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_basis_reproduces_monomials(k):
    # coefficients from nodal interpolation must reproduce x^a y^b exactly
    basis = ReferenceBasis(k)
    pts = np.random.default_rng(1).uniform(0.05, 0.45, size=(40, 2))
    vals = basis.values(pts)
    for a, b in basis.exponents:
        coeffs = basis.nodes[:, 0] ** a * basis.nodes[:, 1] ** b
        target = pts[:, 0] ** a * pts[:, 1] ** b
        assert np.abs(vals @ coeffs - target).max() < 1e-12


@pytest.mark.parametrize("k", [1, 2, 3])
def test_basis_gradients_match_finite_differences(k, rng):
    basis = ReferenceBasis(k)
    pts = rng.uniform(0.1, 0.4, size=(25, 2))
    grads = basis.gradients(pts)
    eps = 1e-7
    for axis in (0, 1):
        shift = np.zeros(2)
        shift[axis] = eps
        fd = (basis.values(pts + shift) - basis.values(pts - shift)) / (2 * eps)
        assert np.abs(grads[..., axis] - fd).max() < 1e-6


def test_evaluate_zero_and_constant(space_n1_k1):
    z = zero_field(space_n1_k1)
    assert evaluate(z, 0, (0.3, 0.3)) == 0
    one = interpolate(space_n1_k1, lambda x, y: np.ones_like(x))
    tab = space_n1_k1.tab
    for e in range(space_n1_k1.mesh.num_elements):
        for q in tab.vol_rule.points[:4]:
            assert evaluate(one, e, q) == pytest.approx(1.0, abs=1e-13)


def test_evaluate_affine_interpolant(space_n4_k2, rng):
    f = interpolate(space_n4_k2, lambda x, y: x + 1j * y)
    mesh = space_n4_k2.mesh
    for _ in range(50):
        e = int(rng.integers(0, mesh.num_elements))
        lam = rng.dirichlet(np.ones(3))
        ref = np.array([lam[1], lam[2]])
        xy = mesh.to_physical(e, ref)
        assert evaluate(f, e, ref) == pytest.approx(xy[0] + 1j * xy[1], abs=1e-12)


def test_evaluate_bad_element(space_n1_k1):
    with pytest.raises(IndexError):
        evaluate(zero_field(space_n1_k1), 7, (0.1, 0.1))


def test_l2_norm_values(unit_rect):
    sp = DGSpace(build_structured(unit_rect, 1), 1)
    assert l2_norm(interpolate(sp, lambda x, y: np.ones_like(x))) == pytest.approx(1.0, rel=1e-12)
    assert l2_norm(zero_field(sp)) == 0.0
    sp16 = DGSpace(build_structured(unit_rect, 16), 3)
    s = interpolate(sp16, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    assert l2_norm(s) == pytest.approx(0.5, abs=1e-4)


def test_l4_norm_values(space_n1_k1, space_n4_k2):
    one = interpolate(space_n1_k1, lambda x, y: np.ones_like(x))
    assert lp_norm(one) == pytest.approx(1.0, rel=1e-12)
    c = 0.7 - 1.9j
    cf = interpolate(space_n4_k2, lambda x, y: np.full_like(x, c, dtype=complex))
    assert lp_norm(cf) == pytest.approx(abs(c), rel=1e-12)
    fx = interpolate(space_n4_k2, lambda x, y: x.astype(complex))
    assert lp_norm(fx) == pytest.approx((1.0 / 5.0) ** 0.25, rel=1e-12)
    with pytest.raises(ValueError):
        lp_norm(one, p=6)


def test_dg_norm_values(space_n1_k1):
    assert dg_norm(zero_field(space_n1_k1)) == 0.0
    # the global constant has zero interior jump; each boundary edge
    # contributes (1/h_E)*h_E = 1, so the norm is sqrt(4)
    one = interpolate(space_n1_k1, lambda x, y: np.ones_like(x))
    assert dg_norm(one) == pytest.approx(2.0, rel=1e-12)
    assert dg_interior_jump_sq(one) <= 1e-14


def test_continuous_field_has_no_interior_jumps(unit_rect):
    # a globally continuous P1 function: only volume and boundary terms remain
    sp = DGSpace(build_structured(unit_rect, 4), 1)
    v = interpolate(sp, lambda x, y: (0.3 + 1.1j) * (x - 2 * y))
    assert dg_interior_jump_sq(v) <= 1e-12
    assert broken_grad_sq(v) == pytest.approx((0.3**2 + 1.1**2) * 5.0, rel=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_interpolation_reproduces_polynomials(unit_rect, k, rng):
    sp = DGSpace(build_structured(unit_rect, 2), k)

    def poly(x, y):
        return (0.5 - 0.25j) + 1.5 * x - 2.0j * y + (x * y if k >= 2 else 0) \
            + (0.1 * x**3 if k >= 3 else 0)

    f = interpolate(sp, poly)
    tab = sp.tab
    from glcn.fem import values_at_volume_points

    vals = values_at_volume_points(f)
    xq = tab.vol_points
    assert np.abs(vals - poly(xq[..., 0], xq[..., 1])).max() < 1e-12


def test_interpolate_zero_and_phase(space_n4_k2):
    z = interpolate(space_n4_k2, lambda x, y: np.zeros_like(x, dtype=complex))
    assert np.all(z.coeffs == 0)
    phase = np.exp(1j)
    f = interpolate(space_n4_k2, lambda x, y: phase * (x + y))
    g = interpolate(space_n4_k2, lambda x, y: (x + y).astype(complex))
    assert np.abs(f.coeffs - phase * g.coeffs).max() < 1e-13


@pytest.mark.parametrize("norm", [l2_norm, lp_norm, dg_norm])
def test_norm_scaling(space_n4_k2, rng, norm):
    v = Field(space_n4_k2, rng.standard_normal(space_n4_k2.ndof)
              + 1j * rng.standard_normal(space_n4_k2.ndof))
    c = 1.7 - 0.9j
    cv = Field(space_n4_k2, c * v.coeffs)
    assert norm(cv) == pytest.approx(abs(c) * norm(v), rel=1e-12)


def test_dg_norm_definite(space_n4_k2, rng):
    # on a mesh with boundary edges the DG norm only vanishes at zero
    from glcn import assemble_dg_gram
    from scipy.linalg import eigh

    B = assemble_dg_gram(space_n4_k2).matrix.toarray()
    smallest = eigh(B, eigvals_only=True, subset_by_index=[0, 0])[0]
    assert smallest > 1e-8
    v = Field(space_n4_k2, rng.standard_normal(space_n4_k2.ndof) + 0j)
    assert dg_norm(v) > 0


def test_inverse_inequality_scaling_band(unit_rect, rng):
    # transplant one fixed per-element coefficient pattern across
    # refinements: h * |v|_DG / |v| must stay within a factor-2 band
    base = rng.standard_normal((32, 3)) + 1j * rng.standard_normal((32, 3))
    ratios = []
    for n in (4, 8, 16, 32):
        sp = DGSpace(build_structured(unit_rect, n), 1)
        ne = sp.mesh.num_elements
        reps = int(np.ceil(ne / base.shape[0]))
        coeffs = np.tile(base, (reps, 1))[:ne].reshape(-1)
        v = Field(sp, coeffs)
        ratios.append(sp.mesh.h * dg_norm(v) / l2_norm(v))
    assert max(ratios) / min(ratios) < 2.0


def test_field_validation(space_n1_k1):
    with pytest.raises(ValueError):
        Field(space_n1_k1, np.zeros(5, dtype=complex))
    bad = np.zeros(space_n1_k1.ndof, dtype=complex)
    bad[0] = np.nan
    with pytest.raises(ValueError):
        Field(space_n1_k1, bad)


def test_field_csv_dump(space_n1_k1):
    f = zero_field(space_n1_k1)
    text = field_csv(f)
    lines = text.splitlines()
    assert lines[0] == "dof,re,im"
    assert len(lines) == 1 + space_n1_k1.ndof
    assert lines[1] == "0,0.0,0.0"
