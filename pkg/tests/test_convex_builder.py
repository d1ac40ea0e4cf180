import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from tnkit.convex_builder import (
    C0,
    MOLLIFIER,
    ClosenessError,
    CompatibilityError,
    ConvexEnergy,
    SmoothMaxAffine,
    affine_initial_data,
    base_hessians_float,
    build_F,
    build_F0,
    build_G,
    convex_min_eigenvalue,
    convexity_pairs,
    cutoff_quadratic,
    delta_minor,
    growth_constants,
    lift_dimension,
    midpoint_violations,
    mollified_abs,
    mollified_abs_quad,
    sampled_growth,
    vertex_data,
    witness_energy,
)
from tnkit.param_family import minor_hessian, reference_Zstar

F = Fraction


@pytest.fixture(scope="module")
def zstar():
    return reference_Zstar(2)


@pytest.fixture(scope="module")
def F0(zstar):
    return build_F0(zstar)


@pytest.fixture(scope="module")
def energy(zstar):
    return witness_energy(zstar, seed=0)


def fd_grad(fun, x, h):
    out = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        out[k] = (fun(x + e)[0] - fun(x - e)[0]) / (2 * h)
    return out


def test_mollifier_moments():
    m0, m1 = MOLLIFIER.moments()
    assert m0 == pytest.approx(1.0, abs=1e-12)
    assert abs(m1) < 1e-15


def test_mollified_abs_matches_quadrature():
    for eps in (0.1, 1e-3):
        for x in np.linspace(-1.5 * eps, 1.5 * eps, 13):
            val = mollified_abs(np.array([x]), eps)[0][0]
            assert val == pytest.approx(mollified_abs_quad(float(x), eps), abs=1e-12 * max(eps, 1e-3))


def test_mollified_abs_is_exact_outside_radius():
    x = np.array([-2.0, -0.5, 0.5, 3.0])
    m, m1, m2, inside = mollified_abs(x, 0.5)
    assert np.all(m == np.abs(x)) and not inside.any()
    assert np.all(m2 == 0)


def two_jets(radius=None):
    return SmoothMaxAffine([F(0), F(0)], [[F(-1)], [F(1)]], [[F(-1)], [F(1)]], radius)


def test_two_jet_compatibility_values():
    g = two_jets()
    assert g.compat == {(0, 1): -2, (1, 0): -2}


def test_two_jet_local_affineness_and_centre_value():
    g = two_jets()
    r = g.radius
    t = np.array([[-1.0], [-1.0 + 0.4 * g.delta], [1.0]])
    val, grad, hess, smoothed = g.evaluate(t)
    assert val == pytest.approx([0.0, -0.4 * g.delta, 0.0], abs=1e-15)
    assert grad[:, 0].tolist() == [-1.0, -1.0, 1.0]
    assert not smoothed.any() and not hess.any()
    # at 0 the two pieces tie: g(0) = -1 + int |r s| rho(s) ds (independent quadrature)
    mass = quad(lambda s: math.exp(-1 / (1 - s * s)), -1, 1)[0]
    first = quad(lambda s: abs(s) * math.exp(-1 / (1 - s * s)), -1, 1)[0] / mass
    assert g(np.array([[0.0]]))[0] == pytest.approx(-1 + r * first, abs=1e-12)
    assert g(np.array([[0.0]]))[0] < 0


def test_incompatible_jets_rejected():
    with pytest.raises(CompatibilityError) as ex:
        SmoothMaxAffine([F(0), F(5)], [[F(-1)], [F(1)]], [[F(-1)], [F(1)]])
    assert ex.value.pair in ((1, 2), (2, 1))
    with pytest.raises(ValueError):
        SmoothMaxAffine([F(0)], [[F(1)]], [[F(0)]])


def test_radius_must_respect_separation():
    g = two_jets()
    with pytest.raises(ValueError):
        two_jets(radius=g.delta)


def convex_jets(rng, N, q):
    """Tangent planes of |t|^2 at random points: strictly compatible by construction."""
    T = rng.normal(size=(N, q)) * 2
    return [float(t @ t) for t in T], [list(2 * t) for t in T], [list(t) for t in T]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5), st.integers(1, 3))
def test_smooth_max_is_midpoint_convex(seed, N, q):
    rng = np.random.default_rng(seed)
    g = SmoothMaxAffine(*convex_jets(rng, N, q))
    X = rng.normal(size=(2000, q)) * rng.choice([0.1, 1, 10, 100], size=(2000, 1))
    Y = X + rng.normal(size=(2000, q)) * rng.choice([g.radius, 1, 10], size=(2000, 1))
    assert midpoint_violations(g, X, Y) == 0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_smooth_max_gradient_and_hessian_by_differences(seed):
    rng = np.random.default_rng(seed)
    g = SmoothMaxAffine(*convex_jets(rng, 3, 2))
    pts = np.concatenate([rng.normal(size=(5, 2)) * 3, g.T + g.radius * 0.3])
    h = 1e-6
    for x in pts:
        _, gr, H, _ = g.evaluate(x[None])
        num = fd_grad(lambda y: g.evaluate(y[None])[0], x, h)
        assert np.allclose(num, gr[0], rtol=1e-6, atol=1e-6 * (1 + np.abs(gr).max()))
        assert np.allclose(H[0], H[0].T)


def test_growth_constants_are_finite():
    g = SmoothMaxAffine(*convex_jets(np.random.default_rng(3), 4, 3))
    L = growth_constants(g, np.random.default_rng(0), samples=50)
    assert all(np.isfinite(v) for v in L.values())
    assert L[1] <= g.A + 1 + 1e-9


def test_build_G_vertex_values_and_delta_slope(zstar):
    G = build_G(zstar)
    T = G.jets_T()
    vals, grads, _, _ = G.g.evaluate(T)
    assert np.allclose(vals, [float(c) for c in G.vd.c], atol=1e-9)
    n = zstar.n
    for i in range(5):
        h = G.tau / 10
        e = np.zeros(2 * n + 1)
        e[-1] = h
        slope = (G.g(T[i] + e)[0] - G.g(T[i] - e)[0]) / (2 * h)
        assert slope == pytest.approx(float(G.vd.d[i]), rel=1e-8)


def test_build_G_rejects_eps_at_eps0(zstar):
    vd = vertex_data(zstar)
    with pytest.raises(ValueError):
        build_G(zstar, eps=F(vd.eps0))


def test_F0_vertex_jets(F0):
    rows = F0.vertex_report(base_hessians_float(F0))
    assert max(r["grad_error"] for r in rows) <= 1e-10
    assert max(r["hessian_error"] for r in rows) <= 1e-5
    H = F0.evaluate(F0.centers)[2]
    for i, d in enumerate(F0.G.vd.d):
        expect = F0.eps * np.eye(4) + float(d) * np.array(minor_hessian(2, exact=False), dtype=float)
        assert np.allclose(H[i], expect, atol=1e-9)


def test_F0_linear_gradient_law_on_s0_ball(F0):
    rng = np.random.default_rng(0)
    H0 = np.array(minor_hessian(2, exact=False), dtype=float)
    for i, z in enumerate(F0.centers):
        u = rng.normal(size=4)
        A = z + 0.9 * F0.s0 * u / np.linalg.norm(u)
        d = float(F0.G.vd.d[i])
        expect = F0.targets[i] + F0.eps * (A - z) + d * (H0 @ (A - z))
        assert np.allclose(F0.sigma(A[None])[0], expect, atol=1e-9)


def test_F0_gradient_growth_is_linear(F0):
    g = sampled_growth(F0, np.random.default_rng(1), samples=10)
    assert g[1] < 1e4 and all(np.isfinite(v) for v in g.values())


def test_F_equals_F0_for_unperturbed_targets(zstar, F0):
    Fz = build_F(zstar, base_hessians_float(F0))
    X = np.random.default_rng(2).normal(size=(50, 4))
    assert np.array_equal(Fz(X), F0(X))


def test_F_rejects_far_targets(zstar, F0):
    far = [h + np.eye(4, dtype=int) for h in base_hessians_float(F0)]
    with pytest.raises(ClosenessError):
        build_F(zstar, far)


def test_F_vertex_jets_from_witness(energy):
    Fw, H, rep = energy
    assert rep.passed
    rows = Fw.vertex_report(H)
    assert max(r["grad_error"] for r in rows) <= 1e-10
    assert max(r["hessian_error"] for r in rows) <= 1e-5
    assert max(r["hessian_symmetry"] for r in rows) <= 1e-8
    exact = Fw.vertex_hessians()
    assert all(np.all(a == b) for a, b in zip(exact, H))


def test_F_convex_part_uniformly_convex(energy):
    Fw, _, _ = energy
    assert convex_min_eigenvalue(Fw, np.random.default_rng(0)) >= Fw.eps / 8


def test_F_convex_and_polyconvex_parts_midpoint_convex(energy):
    Fw, _, _ = energy
    rng = np.random.default_rng(5)
    X, Y = convexity_pairs(Fw, rng, 3000)
    assert midpoint_violations(lambda A: Fw.convex_part(A)[0], X, Y) == 0
    X, Y = convexity_pairs(Fw, rng, 3000, q_extra=True)
    assert midpoint_violations(Fw.polyconvex_part, X, Y) == 0


def test_F_is_polyconvex_decomposition(energy):
    Fw, _, _ = energy
    A = np.random.default_rng(6).normal(size=(40, 4))
    t = np.column_stack([A, delta_minor(A, 2)])
    lhs = Fw(A)
    rhs = Fw.polyconvex_part(t) + 0.25 * Fw.eps * np.einsum("ij,ij->i", A, A)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_F_gradient_against_differences(energy):
    Fw, _, _ = energy
    rng = np.random.default_rng(7)
    pts = [rng.normal(size=4) * 2, Fw.centers[2] + Fw.s1 * 0.7 * np.array([1, 0, 0, 0])]
    for x in pts:
        num = fd_grad(lambda y: Fw.evaluate(y[None])[0], x, 1e-7)
        assert np.allclose(num, Fw.sigma(x[None])[0], rtol=1e-6, atol=1e-6)


def test_recipe_roundtrip_is_bit_identical(energy):
    Fw, _, _ = energy
    back = ConvexEnergy.from_recipe(json.loads(Fw.to_json()))
    X = np.random.default_rng(8).normal(size=(30, 4))
    X[:5] = Fw.centers + 1e-6
    assert np.array_equal(back.evaluate(X)[1], Fw.evaluate(X)[1])


def test_cutoff_quadratic_hessian_bound():
    rng = np.random.default_rng(9)
    H = rng.normal(size=(4, 4))
    H = H + H.T
    A = rng.normal(size=(2000, 4))
    A *= (rng.random(2000) ** 0.25 / np.linalg.norm(A, axis=1))[:, None] * 1.1
    _, g, hess = cutoff_quadratic(A, H, 1.0)
    assert np.linalg.norm(hess, 2, axis=(1, 2)).max() <= C0 * np.linalg.norm(H, 2)
    x = A[3]
    num = fd_grad(lambda y: cutoff_quadratic(y[None], H, 1.0)[0], x, 1e-7)
    assert np.allclose(num, g[3], atol=1e-6)
    inner = A[np.linalg.norm(A, axis=1) < 0.5]
    assert np.allclose(hess[np.linalg.norm(A, axis=1) < 0.5], H[None], atol=1e-12)
    assert len(inner) > 0


def test_affine_initial_data():
    zero = affine_initial_data(np.zeros((2, 3)), np.zeros((2, 3)))
    x = np.random.default_rng(0).normal(size=(5, 3))
    assert not zero.u(x).any() and not zero.v(x, np.ones(5)).any()
    A = np.array([[1.0, 2.0, -1.0], [0.5, 0.0, 3.0]])
    B = np.array([[0.0, 1.0, 2.0], [1.0, -1.0, 0.0]])
    d = affine_initial_data(A, B)
    h = 1e-4
    t = np.full(5, 0.3)
    div = sum((d.v(x + h * np.eye(3)[j], t)[:, :, j] - d.v(x - h * np.eye(3)[j], t)[:, :, j]) / (2 * h) for j in range(3))
    assert np.allclose(div, d.u(x), atol=1e-8)
    dt = (d.v(x, t + 0.5) - d.v(x, t)) / 0.5
    assert np.allclose(dt, B[None], atol=1e-12)
    with pytest.raises(ValueError):
        affine_initial_data(np.zeros((2, 2)), np.zeros((2, 3)))


def test_lift_dimension(energy):
    Fw, _, _ = energy
    with pytest.raises(ValueError):
        lift_dimension(Fw, 2)
    L = lift_dimension(Fw, 3)
    A1 = np.random.default_rng(1).normal(size=(6, 4))
    A = np.column_stack([A1, np.zeros((6, 2))])
    v, g, H = L.evaluate(A)
    assert np.array_equal(v, Fw(A1))
    assert not g[:, 4:].any()
    B = A.copy()
    B[:, 4:] = 1.0
    assert np.allclose(L.evaluate(B)[1][:, 4:], L.nu)
