from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tnkit.configurations import (
    alpha,
    b_vec,
    barycentric,
    build_tn,
    combine,
    cone_embed,
    cone_member,
    cyclic_shift,
    nu_coefficients,
    nu_fixed_point,
    nu_iterate,
    shrink,
)
from tnkit.foundation import MatPair, segment_dist2
from tnkit.param_family import family_n5, reference_Zstar

F = Fraction
small = st.fractions(min_value=-6, max_value=6, max_denominator=5)
unit_open = st.fractions(min_value=F(1, 50), max_value=F(49, 50), max_denominator=50)


def E(i, j):
    M = np.zeros((2, 2), dtype=int)
    M[i, j] = 1
    return M


def toy_cfg():
    g = MatPair.of([[1, 0], [0, 0]], [[0, 0], [0, 0]])
    return build_tn(MatPair.zero(2, 2), [g, -g], [2, 2])


@st.composite
def configs(draw):
    """Random rational T_N configuration with m = 1, n = 2."""
    N = draw(st.integers(2, 5))
    gammas = []
    for _ in range(N - 1):
        r = draw(st.integers(1, 2))
        gammas.append(cone_embed(r, [draw(small)], [draw(small)], [[draw(small)]]).value)
    total = gammas[0]
    for g in gammas[1:]:
        total = total + g
    gammas.append(-total)
    kappas = [1 + draw(st.fractions(min_value=F(1, 10), max_value=4, max_denominator=10)) for _ in range(N)]
    rho = MatPair.of([[draw(small), draw(small)]], [[draw(small), draw(small)]])
    return build_tn(rho, gammas, kappas)


def test_cone_embed_all_zero_parameters():
    c = cone_embed(1, [1, 0], [0], [[0], [0]])
    assert c.value.equals(MatPair.of(E(0, 0), np.zeros((2, 2), dtype=int)))


def test_cone_embed_hand_formula():
    c = cone_embed(1, [F(1)], [F(3)], [[F(5)]])
    assert list(c.a) == [1, 3]
    assert list(c.B[0]) == [-15, 5]
    assert c.B[0] @ c.a == 0


def test_cone_embed_second_axis_pinned_vertex():
    c = cone_embed(2, [F(1), F(2)], [F(2), F(0)], [[F(1), F(0)], [F(0), F(1)]])
    assert list(c.a) == [2, 1, 0]


def test_cone_embed_axis_range():
    with pytest.raises(IndexError):
        cone_embed(3, [1], [0], [[0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.lists(small, min_size=2, max_size=2), st.lists(small, min_size=2, max_size=2), st.lists(small, min_size=4, max_size=4))
def test_cone_embed_lands_in_cone(r, p, x, ys):
    c = cone_embed(r, p, x, [ys[:2], ys[2:]])
    assert c.a[r - 1] == 1
    assert all(v == 0 for v in c.B @ c.a)
    ok, (wp, wa, wB) = cone_member(c.value)
    assert ok
    # witness is the same rank-one factor up to scaling
    assert np.all(np.outer(wp, wa) == np.outer(c.p, c.a))
    assert all(v == 0 for v in wB @ wa)
    assert all(b_vec(r, x, y) @ alpha(r, x) == 0 for y in (ys[:2], ys[2:]))


def test_cone_member_examples():
    ok, (p, a, B) = cone_member(MatPair.of(E(0, 0), E(0, 1)))
    assert ok and list(B @ a) == [0, 0]
    assert cone_member(MatPair.of(np.eye(2, dtype=int), np.zeros((2, 2), dtype=int)))[0] is False
    assert cone_member(MatPair.of(np.zeros((2, 2), dtype=int), np.eye(2, dtype=int)))[0] is False


def test_cone_member_float_tolerance():
    v = MatPair.of(np.outer([1.0, 2.0], [0.6, 0.8]), np.array([[0.8, -0.6], [0.0, 0.0]]), exact=False)
    assert cone_member(v, tol=1e-10)[0]
    w = MatPair(v.first + 1e-3 * np.eye(2), v.second)
    assert not cone_member(w, tol=1e-10)[0]


def test_build_tn_two_cycle_by_hand():
    cfg = toy_cfg()
    g = cfg.gammas[0]
    assert cfg.pis[0].equals(MatPair.zero(2, 2))
    assert cfg.xis[0].equals(g * 2)
    assert cfg.pis[1].equals(g)
    assert cfg.xis[1].equals(-g)


def test_build_tn_rejects_bad_input():
    g = MatPair.of([[1, 0]], [[0, 0]])
    with pytest.raises(ValueError):
        build_tn(MatPair.zero(1, 2), [g, g], [2, 2])
    with pytest.raises(ValueError):
        build_tn(MatPair.zero(1, 2), [g, -g], [2, 1])
    with pytest.raises(ValueError):
        build_tn(MatPair.zero(1, 2), [g], [2])


def test_reference_family_gives_config_with_zeta_vertices():
    Z = reference_Zstar(2)
    fam = family_n5(Z.Z, 2)
    cfg = build_tn(fam["omega"][0], fam["h"], list(Z.kappa))
    for xi, zeta in zip(cfg.xis, fam["zeta"]):
        assert xi.equals(zeta)


@settings(max_examples=40, deadline=None)
@given(configs())
def test_cycle_closes_and_chi_relation(cfg):
    N = cfg.N
    total = cfg.gammas[0]
    for g in cfg.gammas[1:]:
        total = total + g
    assert total.equals(MatPair.zero(1, 2))
    for i in range(N):
        chi = cfg.chis[i]
        nxt = cfg.pis[(i + 1) % N]
        assert (cfg.xis[i] * chi + cfg.pis[i] * (1 - chi)).equals(nxt)


def test_nu_two_cycle():
    assert nu_coefficients([F(1, 2), F(1, 2)])[0] == [F(1, 3), F(2, 3)]


def test_nu_five_cycle_against_linear_oracle():
    t = [F(1, 2), F(1, 3), F(1, 4), F(1, 3), F(1, 2)]
    nu = nu_coefficients(t)
    assert nu[0] == [F(1, 11), F(1, 11), F(1, 11), F(2, 11), F(6, 11)]
    assert nu == nu_fixed_point(t)
    it = nu_iterate([float(v) for v in t])
    assert np.allclose(np.array(it), np.array(nu, dtype=float), atol=1e-12)


def test_nu_rejects_closed_interval():
    with pytest.raises(ValueError):
        nu_coefficients([F(1), F(1, 2)])


@settings(max_examples=100, deadline=None)
@given(st.lists(unit_open, min_size=2, max_size=7))
def test_nu_rows_sum_to_one(t):
    nu = nu_coefficients(t)
    assert all(sum(row) == 1 for row in nu)
    assert all(v > 0 for row in nu for v in row)


@settings(max_examples=25, deadline=None)
@given(st.lists(unit_open, min_size=2, max_size=5))
def test_nu_closed_form_equals_fixed_point(t):
    assert nu_coefficients(t) == nu_fixed_point(t)


def test_barycentric_endpoints():
    Z = reference_Zstar(2)
    fam = family_n5(Z.Z, 2)
    cfg = build_tn(fam["omega"][0], fam["h"], list(Z.kappa))
    assert barycentric(cfg, 3, F(1)) == [0, 0, 1, 0, 0]
    assert barycentric(cfg, 1, F(0)) == [F(1, 11), F(1, 11), F(1, 11), F(2, 11), F(6, 11)]
    with pytest.raises(ValueError):
        barycentric(cfg, 1, F(3, 2))


@settings(max_examples=40, deadline=None)
@given(configs(), st.data())
def test_barycentric_reconstructs_sheet_point(cfg, data):
    i = data.draw(st.integers(1, cfg.N))
    lam = data.draw(st.fractions(min_value=0, max_value=1, max_denominator=20))
    w = barycentric(cfg, i, lam)
    assert sum(w) == 1 and all(v >= 0 for v in w)
    eta = cfg.xis[i - 1] * lam + cfg.pis[i - 1] * (1 - lam)
    assert combine(w, list(cfg.xis)).equals(eta)


def test_barycentric_float_residual():
    cfg = toy_cfg()
    fl = build_tn(cfg.rho.to_float(), [g.to_float() for g in cfg.gammas], [2.0, 2.0])
    w = barycentric(fl, 1, 0.3)
    eta = fl.xis[0] * 0.3 + fl.pis[0] * 0.7
    assert (combine(w, list(fl.xis)) - eta).norm() < 1e-12


def test_shift_identity_and_full_cycle():
    Z = reference_Zstar(2)
    fam = family_n5(Z.Z, 2)
    cfg = build_tn(fam["omega"][0], fam["h"], list(Z.kappa))
    same = cyclic_shift(cfg, 1)
    assert all(a.equals(b) for a, b in zip(same.xis, cfg.xis))
    cur = cfg
    for _ in range(cfg.N):
        cur = cyclic_shift(cur, 2)
    assert all(a.equals(b) for a, b in zip(cur.xis, cfg.xis))


@settings(max_examples=25, deadline=None)
@given(configs(), st.data())
def test_shift_preserves_segment_set(cfg, data):
    i = data.draw(st.integers(1, cfg.N))
    sh = cyclic_shift(cfg, i)
    for a, b in sh.segments():
        for s in (F(0), F(1, 3), F(1)):
            x = a * s + b * (1 - s)
            assert cfg.dist2_to_set(x) == 0


def test_shrink_identity_and_errors():
    cfg = toy_cfg()
    same = shrink(cfg, [1, 1])
    assert all(a.equals(b) for a, b in zip(same.xis, cfg.xis))
    with pytest.raises(ValueError):
        shrink(cfg, [F(1, 2), 1])


@settings(max_examples=25, deadline=None)
@given(configs(), st.data())
def test_shrunk_segments_lie_in_original(cfg, data):
    lams = [chi + (1 - chi) * F(data.draw(st.integers(1, 10)), 10) for chi in cfg.chis]
    sh = shrink(cfg, lams)
    for a, b in sh.segments():
        for s in (F(0), F(1, 2), F(1)):
            x = a * s + b * (1 - s)
            assert any(segment_dist2(x, c, d) == 0 for c, d in cfg.segments())
