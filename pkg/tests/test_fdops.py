import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from klplate.analytic import CosineProfile, SeparableSolution, SineProfile
from klplate.errors import ConfigurationError
from klplate.fdops import (BoundaryData, BoundarySpec, GhostClosure, PlateOperator, PlateParams,
                           SideCondition, apply_B, apply_K, assemble, biharmonic, fill_ghosts,
                           flexural_rigidity, laplacian, laplacian_matrix)
from klplate.mesh import build_annulus, build_rectangle


class Poly:
    """Polynomial profile with derivatives, for separable test solutions."""

    def __init__(self, *coeffs):
        self.p = np.polynomial.Polynomial(coeffs)

    def __call__(self, s, k=0):
        return self.p.deriv(k)(np.asarray(s, dtype=float)) if k else self.p(np.asarray(s, dtype=float))


class Const:
    def __call__(self, t, k=0):
        return np.ones(np.shape(t)) if k == 0 else np.zeros(np.shape(t))


def inside(m):
    return m.interior


def unit_square(n=21):
    return build_rectangle(0, 1, 0, 1, n, n)


# -- params ----------------------------------------------------------------------


def test_params_validation():
    with pytest.raises(ConfigurationError):
        PlateParams(rho_h=0)
    with pytest.raises(ConfigurationError):
        PlateParams(D=-1)
    with pytest.raises(ConfigurationError):
        PlateParams(nu=0.5)


def test_aluminium_rigidity_uses_one_minus_nu_squared():
    assert flexural_rigidity(69e9, 1e-3, 0.33) == pytest.approx(6.4527, abs=5e-5)
    p = PlateParams.from_material(69e9, 1e-3, 2700, 0.33)
    assert p.rho_h == pytest.approx(2.7)


# -- stencils ------------------------------------------------------------------------


def test_laplacian_of_quadratic_is_four():
    m = unit_square()
    L = laplacian(m, m.sample(lambda x, y: x**2 + y**2))
    np.testing.assert_allclose(L[1:-1, 1:-1], 4.0, atol=1e-9)


def test_laplacian_of_constant_vanishes():
    for m in (unit_square(), build_annulus(0.5, 1, 11, 24)):
        L = laplacian(m, np.full(m.shape, 3.0))
        np.testing.assert_allclose(L[1:-1, 1:-1], 0.0, atol=1e-9)


def test_laplacian_sine_symbol():
    m = unit_square(33)
    f = m.sample(lambda x, y: np.sin(2 * np.pi * x))
    L = laplacian(m, f)
    # direct stencil application along x
    h = m.h1
    direct = (f[2:, 1:-1] - 2 * f[1:-1, 1:-1] + f[:-2, 1:-1]) / h**2
    symbol = -(2 * np.sin(np.pi * h) / h) ** 2
    np.testing.assert_allclose(L[1:-1, 1:-1], direct, atol=1e-9)
    np.testing.assert_allclose(L[1:-1, 1:-1], symbol * f[1:-1, 1:-1], atol=1e-9)


def test_biharmonic_of_quadratic_vanishes():
    m = unit_square()
    B = biharmonic(m, m.sample(lambda x, y: x**2 + y**2))
    np.testing.assert_allclose(B[inside(m)], 0.0, atol=1e-6)


def test_biharmonic_of_quartic():
    m = unit_square()
    B = biharmonic(m, m.sample(lambda x, y: x**4))
    np.testing.assert_allclose(B[inside(m)], 24.0, rtol=1e-8)


def test_biharmonic_sine_symbol():
    m = build_rectangle(0, 1, 0, 1, 25, 33)
    f = m.sample(lambda x, y: np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y))
    B = biharmonic(m, f)
    k1 = (2 * np.sin(np.pi * m.h1) / m.h1) ** 2
    k2 = (2 * np.sin(np.pi * m.h2) / m.h2) ** 2
    np.testing.assert_allclose(B[inside(m)], (k1 + k2) ** 2 * f[inside(m)], atol=1e-7 * (k1 + k2) ** 2)


def test_annulus_laplacian_matches_polar_formula():
    m = build_annulus(0.5, 1.0, 41, 64)
    f = m.sample(lambda x, y: x**3 + x * y**2)   # r^3 cos(theta), lap = 8x
    L = laplacian(m, f)
    err = np.abs(L[inside(m)] - 8 * m.x[inside(m)]).max()
    m2 = build_annulus(0.5, 1.0, 81, 128)
    L2 = laplacian(m2, m2.sample(lambda x, y: x**3 + x * y**2))
    err2 = np.abs(L2[inside(m2)] - 8 * m2.x[inside(m2)]).max()
    assert err2 < err / 3.5


@pytest.mark.parametrize("mesh", [unit_square(13), build_annulus(0.5, 1.0, 9, 16)], ids=["square", "annulus"])
def test_sparse_laplacian_matches_matrix_free(mesh):
    f = np.random.default_rng(0).standard_normal(mesh.shape)
    mesh.sync_periodic(f)
    L = (laplacian_matrix(mesh) @ f.ravel()).reshape(mesh.shape)
    ref = laplacian(mesh, f)
    sl = (slice(1, -1), slice(mesh.ghost, mesh.ghost + mesh.n2)) if mesh.periodic2 else (slice(1, -1),) * 2
    np.testing.assert_allclose(L[sl], ref[sl], atol=1e-10)


# -- K_h and B_h -----------------------------------------------------------------


def test_apply_K_reduces_to_K0_without_derivatives():
    m = unit_square()
    w = np.random.default_rng(1).standard_normal(m.shape)
    Kw = apply_K(PlateParams(K0=2.5), m, w)
    np.testing.assert_allclose(Kw[inside(m)], 2.5 * w[inside(m)])


def test_apply_K_pure_bending_quadratic():
    m = unit_square()
    Kw = apply_K(PlateParams(D=3.0), m, m.sample(lambda x, y: x**2 + y**2))
    np.testing.assert_allclose(Kw[inside(m)], 0.0, atol=1e-6)


def test_apply_K_supported_eigenmode():
    n = 21
    m = unit_square(n)
    p = PlateParams(D=1.7)
    bs = BoundarySpec.uniform(m, "supported")
    w = fill_ghosts(m, m.sample(lambda x, y: np.sin(np.pi * x) * np.sin(2 * np.pi * y)), bs, nu=p.nu)
    h = m.h1
    km = 2 * np.sin(np.pi * h / 2) / h
    kn = 2 * np.sin(2 * np.pi * h / 2) / h
    Kw = apply_K(p, m, w)
    g = m.ghost
    core = (slice(g + 1, g + n - 1),) * 2
    np.testing.assert_allclose(Kw[core], p.D * (km**2 + kn**2) ** 2 * w[core], atol=1e-8)


def test_apply_B_examples():
    m = unit_square()
    v = m.sample(lambda x, y: x**2 + y**2)
    np.testing.assert_allclose(apply_B(PlateParams(K1=1), m, v)[inside(m)], v[inside(m)])
    np.testing.assert_allclose(apply_B(PlateParams(), m, v)[inside(m)], 0.0)
    np.testing.assert_allclose(apply_B(PlateParams(T1=0.1), m, v)[inside(m)], -0.4, atol=1e-9)


# -- ghost closure ---------------------------------------------------------------


def test_clamped_ghosts_mirror_interior():
    m = unit_square()
    w = m.sample(lambda x, y: np.sin(np.pi * x) ** 2 * np.sin(np.pi * y) ** 2)
    f = fill_ghosts(m, w, BoundarySpec.uniform(m, "clamped"))
    g, n = m.ghost, m.n1
    np.testing.assert_allclose(f[g - 1, g:g + n], f[g + 1, g:g + n], atol=1e-14)
    np.testing.assert_allclose(f[g - 2, g:g + n], f[g + 2, g:g + n], atol=1e-14)
    np.testing.assert_allclose(f[g:g + n, g + n], f[g:g + n, g + n - 2], atol=1e-14)


def test_supported_ghosts_equal_sine_extension():
    m = unit_square()
    exact = m.sample(lambda x, y: np.sin(np.pi * x) * np.sin(3 * np.pi * y))
    w = exact.copy()
    w[~np.isin(np.arange(m.size), PlateOperator(PlateParams(), m, BoundarySpec.uniform(m, "supported"))
               .active).reshape(m.shape)] = np.nan
    f = fill_ghosts(m, np.nan_to_num(w), BoundarySpec.uniform(m, "supported"))
    g, n = m.ghost, m.n1
    # both ghost layers of every side, corners excluded
    for k in (1, 2):
        np.testing.assert_allclose(f[g - k, g:g + n], exact[g - k, g:g + n], atol=1e-12)
        np.testing.assert_allclose(f[g + n - 1 + k, g:g + n], exact[g + n - 1 + k, g:g + n], atol=1e-12)
        np.testing.assert_allclose(f[g:g + n, g - k], exact[g:g + n, g - k], atol=1e-12)


def test_moving_inner_clamp_sets_boundary_value():
    m = build_annulus(0.1, 0.5, 21, 32)
    data = BoundaryData(g0=lambda x, y, t: 1.0 * np.cos(2 * np.pi * t))
    bs = BoundarySpec({"inner": SideCondition("clamped", data), "outer": SideCondition("free")})
    f = fill_ghosts(m, np.zeros(m.shape), bs, t=0.0)
    np.testing.assert_allclose(f[m.ghost, :], 1.0)


POLYS = [
    (Poly(0.3, -1.0, 0.5, 2.0), Const()),
    (Const(), Poly(1.0, 0.2, -0.7, 1.5)),
    (Poly(0.0, 1.0), Poly(0.5, -2.0)),
    (Poly(1.0, 0.0, 1.0), Poly(0.0, 1.0)),
]


QUADS = [
    (Poly(0.3, -1.0, 0.5), Const()),
    (Const(), Poly(1.0, 0.2, -0.7)),
    (Poly(0.0, 1.0), Poly(0.5, -2.0)),
]


@pytest.mark.parametrize("kind", ["supported", "free"])
@pytest.mark.parametrize("profiles", POLYS, ids=["x3", "y3", "xy", "x2y"])
def test_closure_reproduces_cubics(kind, profiles):
    """Second-difference boundary equations are exact on cubics, so ghosts must match them."""
    _check_polynomial_closure(kind, *profiles)


@pytest.mark.parametrize("kind", ["clamped", "supported", "free"])
@pytest.mark.parametrize("profiles", QUADS, ids=["x2", "y2", "xy"])
def test_closure_reproduces_quadratics(kind, profiles):
    """Centred first differences are exact on quadratics."""
    _check_polynomial_closure(kind, *profiles)


def _check_polynomial_closure(kind, X, Y):
    sol = SeparableSolution(X, Y, Const())
    m = build_rectangle(-0.5, 1.0, 0.0, 1.2, 13, 11)
    bs = sol.boundary_spec(m, kind, nu=0.3)
    c = GhostClosure(m, bs, 0.3)
    exact = sol(m.x, m.y, 0.0)
    w = np.zeros(m.shape)
    w.reshape(-1)[c.active] = exact.reshape(-1)[c.active]
    c.fill(w, 0.0)
    used = np.concatenate([c.active, c.constrained])
    np.testing.assert_allclose(w.reshape(-1)[used], exact.reshape(-1)[used], atol=1e-9)


def test_mixed_free_corner_rejected():
    m = unit_square(9)
    bs = BoundarySpec({"left": SideCondition("free"), "right": SideCondition("free"),
                       "bottom": SideCondition("clamped"), "top": SideCondition("free")})
    with pytest.raises(ConfigurationError):
        GhostClosure(m, bs, 0.3)


def test_spec_must_cover_every_side():
    m = unit_square(9)
    with pytest.raises(ConfigurationError):
        GhostClosure(m, BoundarySpec({"left": SideCondition("free")}), 0.3)


@pytest.mark.parametrize("kind", ["clamped", "supported", "free"])
@pytest.mark.parametrize("annulus", [False, True])
def test_fill_is_idempotent(kind, annulus):
    m = build_annulus(0.5, 1.0, 11, 20) if annulus else unit_square(11)
    bs = BoundarySpec.uniform(m, kind)
    c = GhostClosure(m, bs, 0.3)
    w = np.random.default_rng(2).standard_normal(m.shape)
    once = c.fill(w.copy())
    twice = c.fill(once.copy())
    np.testing.assert_allclose(twice, once, atol=1e-12)
    # the boundary equations hold after filling
    np.testing.assert_allclose(c.E @ once.ravel(), 0.0, atol=1e-9 * np.abs(once).max() / m.h1**2)


def test_pin_fixes_nearest_point():
    m = build_rectangle(0, 0.24, 0, 0.24, 13, 13)
    bs = BoundarySpec.uniform(m, "free", pins=((0.12, 0.12),))
    c = GhostClosure(m, bs, 0.33)
    w = c.fill(np.ones(m.shape))
    a, b = m.nearest_point(0.12, 0.12)
    assert w[a, b] == 0.0


# -- assembly --------------------------------------------------------------------


def test_assemble_identity_block():
    m = unit_square(9)
    A = assemble(PlateParams(D=1), m, BoundarySpec.uniform(m, "supported"), 1.0, 0.0, 0.0)
    top = A.matrix[:A.n_active, :A.n_active].toarray()
    np.testing.assert_array_equal(top, np.eye(A.n_active))
    assert A.matrix[:A.n_active, A.n_active:].nnz == 0


@pytest.mark.parametrize("kind", ["clamped", "supported", "free"])
@pytest.mark.parametrize("annulus", [False, True])
def test_assembled_matches_matrix_free(kind, annulus):
    m = build_annulus(0.5, 1.0, 11, 20) if annulus else unit_square(11)
    p = PlateParams(rho_h=1.3, K0=2, T=1, D=0.5, K1=0.7, T1=0.1, nu=0.25)
    op = PlateOperator(p, m, BoundarySpec.uniform(m, kind))
    c0, cK, cB = 1.3, 0.01, 0.2
    A = op.assemble(c0, cK, cB)
    rng = np.random.default_rng(3)
    P = op.active
    for _ in range(100):
        f = op.closure.fill(rng.standard_normal(m.shape))
        Af = A.matrix @ f.ravel()[A.unknowns]
        ref = (c0 * f + cK * apply_K(p, m, f) + cB * apply_B(p, m, f)).ravel()[P]
        scale = np.abs(ref).max()
        assert np.abs(Af[:A.n_active] - ref).max() <= 1e-12 * scale
        # boundary rows vanish for filled fields
        assert np.abs(Af[A.n_active:]).max() <= 1e-12 * np.abs(A.matrix).max() * np.abs(f).max()


def test_tension_operator_annihilates_constants():
    m = unit_square(11)
    op = PlateOperator(PlateParams(T=2.0), m, BoundarySpec.uniform(m, "free"))
    np.testing.assert_allclose(np.asarray(op.K_rows.sum(axis=1)).ravel(), 0.0, atol=1e-9)


def test_supported_operator_is_symmetric():
    m = build_rectangle(0, 1, 0, 0.7, 15, 11)
    op = PlateOperator(PlateParams(K0=1, T=2, D=0.3), m, BoundarySpec.uniform(m, "supported"))
    K = op.eliminated_K().toarray()
    assert np.abs(K - K.T).max() <= 1e-12 * np.abs(K).max()


@pytest.mark.parametrize("kind", ["clamped", "free"])
def test_symmetric_closures_keep_square_symmetry(kind):
    # reflecting the grid maps the operator onto itself
    m = unit_square(9)
    op = PlateOperator(PlateParams(D=1), m, BoundarySpec.uniform(m, kind))
    K = op.eliminated_K().toarray()
    P = op.active
    a, b = np.divmod(P, m.shape[1])
    flip = m.flat(a, m.shape[1] - 1 - b)
    perm = np.searchsorted(P, flip)
    np.testing.assert_allclose(K[np.ix_(perm, perm)], K, atol=1e-9 * np.abs(K).max())


def test_K_truncation_is_second_order():
    p = PlateParams(K0=1.5, T=0.7, D=0.2)
    sol = SeparableSolution(SineProfile(1.3, 0.2), SineProfile(2.1, -0.4), CosineProfile(0.0))

    def err(n):
        m = build_rectangle(0, 1, 0, 1, n, n)
        w = m.sample(lambda x, y: sol(x, y, 0.0))
        exact = p.K0 * w - p.T * sol.laplacian(m.x, m.y, 0.0) + p.D * sol.biharmonic(m.x, m.y, 0.0)
        return np.abs(apply_K(p, m, w) - exact)[inside(m)].max()

    ratios = [err(n) / err(2 * n - 1) for n in (11, 21)]
    for r in ratios:
        assert r == pytest.approx(4.0, abs=0.4)


@settings(max_examples=20, deadline=None)
@given(c0=st.floats(0.1, 10), cK=st.floats(0, 1), cB=st.floats(0, 1))
def test_assembled_rows_linear_in_coefficients(c0, cK, cB):
    m = unit_square(9)
    p = PlateParams(K0=1, T=1, D=1, K1=1, T1=1)
    op = PlateOperator(p, m, BoundarySpec.uniform(m, "clamped"))
    A = op.assemble(c0, cK, cB, balance=False).matrix[:op.active.size]
    parts = [op.assemble(*e, balance=False).matrix[:op.active.size] for e in ((1, 0, 0), (0, 1, 0), (0, 0, 1))]
    ref = c0 * parts[0] + cK * parts[1] + cB * parts[2]
    assert abs(A - ref).max() <= 1e-10 * (1 + abs(ref).max())
