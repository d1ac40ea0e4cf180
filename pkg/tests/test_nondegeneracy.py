import csv
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tnkit.foundation import bareiss_det
from tnkit.nondegeneracy import (
    EPS_VALUES,
    base_hessians,
    certify,
    det_J,
    det_N,
    dump_matrix_csv,
    family_derivatives,
    family_jacobian_exact,
    family_jacobian_fd,
    minor_check,
    n_matrix,
    phi_jacobian,
    q_factor,
    random_pattern,
    reduced_system,
    special_H,
    witness_search,
)
from tnkit.param_family import minor_hessian, random_rational_Z, reference_Zstar

F = Fraction
EQUAL = [(F(1),) * 5] * 5


@pytest.fixture(scope="module")
def zstar2():
    return reference_Zstar(2)


@pytest.fixture(scope="module")
def witness2(zstar2):
    return witness_search(zstar2, seed=0, max_trials=100)


def test_special_H_examples():
    assert all(not np.any(h) for h in special_H([(0,) * 5] * 5, 2))
    H = special_H([(1, 2, 3, 4, 9)] * 5, 2)[0]
    assert H.tolist() == np.diag([1, 2, 3, 4]).tolist()
    H3 = special_H([(1, 2, 3, 4, 9)] * 5, 3)[0]
    assert list(np.diag(H3)) == [1, 2, 9, 3, 4, 9]
    assert np.all(H3 == H3.T)
    with pytest.raises(ValueError):
        special_H([(1,) * 5] * 4, 2)


def test_phi_jacobian_shape_check(zstar2):
    with pytest.raises(ValueError):
        phi_jacobian(1, zstar2, special_H(EQUAL, 3))


def test_exact_family_jacobian_matches_central_differences():
    Z = reference_Zstar(2)
    Je = family_jacobian_exact(Z).astype(float)
    Jf = family_jacobian_fd(Z, step=1e-6)
    scale = np.abs(Je).max()
    assert np.abs(Je - Jf).max() <= 1e-6 * scale


def test_exact_family_jacobian_matches_fd_random_point():
    Z = random_rational_Z(np.random.default_rng(4), 3)
    Je = family_jacobian_exact(Z).astype(float)
    Jf = family_jacobian_fd(Z, step=1e-6)
    assert np.abs(Je - Jf).max() <= 1e-6 * np.abs(Je).max()


def test_kappa_column_only_touches_own_vertex(zstar2, witness2):
    _, H, _ = witness2
    n = 2
    for i in (1, 3):
        M = phi_jacobian(i, zstar2, H)
        fd = family_derivatives(zstar2)
        for j in range(5):
            col = M[j * 2 * n:(j + 1) * 2 * n, 10 * n - 5 + j]
            h = fd.h[j]
            expect = np.asarray(H[j]) @ h[: 2 * n] - h[2 * n:]
            assert list(col) == list(expect)
            for k in range(5):
                if k != j:
                    assert not any(M[j * 2 * n:(j + 1) * 2 * n, 10 * n - 5 + k])


def test_det_N_equals_det_J_for_equal_hessians():
    Z = reference_Zstar(2)
    H = [special_H([(1, 2, -1, 3, 1)] * 5, 2)[0]] * 5
    for i in range(1, 6):
        assert det_N(i, Z, H) == det_J(i, Z, H)


def test_zero_hessians_reduce_to_second_block_rows(zstar2):
    zero = special_H([(0,) * 5] * 5, 2)
    fd = family_derivatives(zstar2)
    rows = np.vstack([-(fd.Dzeta[j] - fd.Domega[0])[4:] for j in range(5)])
    assert det_J(1, zstar2, zero) == bareiss_det(rows)


def test_witness_found_and_dets_recheck(zstar2, witness2):
    e, H, rep = witness2
    assert rep.passed and rep.trials <= 100
    assert all(v in EPS_VALUES for row in e for v in row)
    again = certify(zstar2, H)
    assert again.J == rep.J and again.N == rep.N


def test_witness_determinants_by_minor_expansion(zstar2, witness2):
    _, H, _ = witness2
    rng = np.random.default_rng(0)
    assert minor_check(phi_jacobian(2, zstar2, H), rng)
    assert minor_check(n_matrix(4, zstar2, H), rng)


def test_witness_search_exhaustion(zstar2):
    with pytest.raises(RuntimeError):
        witness_search(zstar2, max_trials=0)


def test_witness_with_closeness_bound(zstar2):
    eps = F(1, 10)
    base = base_hessians(zstar2, eps, [58, F(-15, 2), 772, 57, 376])
    bound = 0.01
    e, H, rep = witness_search(zstar2, seed=1, base=base, bound=bound)
    assert rep.passed
    assert rep.closeness["sum"] < bound


def test_base_hessians_form(zstar2):
    base = base_hessians(zstar2, F(1, 4), [1, 2, 3, 4, 5])
    H0 = minor_hessian(2)
    assert np.all(base[2] - H0 * 3 == np.eye(4, dtype=int) * F(1, 4))


def test_equal_pattern_is_degenerate():
    for n in (2, 3):
        assert q_factor(reference_Zstar(n), [F(1)] * 5) == 0
    Z3 = reference_Zstar(3)
    for fam in ("J", "N"):
        for i in range(1, 6):
            rs = reduced_system(i, Z3, EQUAL, fam)
            assert rs.complement_det == 0 and not rs.nonsingular
    assert det_J(2, Z3, special_H(EQUAL, 3)) == 0


def test_reduced_block_factorisation_n3():
    Z3 = reference_Zstar(3)
    e, H, rep = witness_search(Z3, seed=0)
    for i in (1, 5):
        rs = reduced_system(i, Z3, e)
        assert rs.nonsingular
        assert abs(rs.det * rs.complement_det) == abs(rep.J[i])


def test_reduced_system_needs_slice():
    Z = random_rational_Z(np.random.default_rng(1), 3)
    with pytest.raises(ValueError):
        reduced_system(1, Z, EQUAL)


def test_random_patterns_generically_nonsingular(zstar2):
    rng = np.random.default_rng(7)
    good = sum(reduced_system(1, zstar2, random_pattern(rng)).nonsingular for _ in range(20))
    assert good >= 19


@settings(max_examples=15, deadline=None)
@given(st.lists(st.sampled_from(EPS_VALUES), min_size=5, max_size=5))
def test_q_factor_vanishes_when_trailing_slots_repeat(eps):
    Z = reference_Zstar(3)
    eps = list(eps)
    eps[3] = eps[2]
    eps[0] = eps[1] = eps[2]
    assert q_factor(Z, eps) == 0


def test_dump_matrix_csv_roundtrip(tmp_path, zstar2, witness2):
    _, H, _ = witness2
    M = phi_jacobian(1, zstar2, H)
    p = tmp_path / "m.csv"
    dump_matrix_csv(M, p)
    rows = list(csv.reader(open(p)))
    back = np.array([[F(v) for v in r] for r in rows], dtype=object)
    assert back.shape == M.shape and np.all(back == M)


def test_cert_report_json(witness2):
    _, _, rep = witness2
    text = rep.to_json()
    assert '"passed": true' in text and '"N1"' in text
