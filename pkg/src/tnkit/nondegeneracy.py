"""Exact nondegeneracy certificates for the five-direction family.

For candidate Hessians H_1..H_5 at the five vertices the implicit system
for the family has Jacobian rows H_j D(zeta_j^1 - omega_i^1) - D(zeta_j^2 - omega_i^2).
Its determinant (J_i) and the determinant after the sheet correction
B_i Df_i^1 (N_i) are computed exactly over the rationals.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .foundation import bareiss_det, cofactor_det, exact_array, fraction_str, jacobian_forward
from .param_family import (
    ReducedParams,
    bar_indices,
    family_n5,
    minor_hessian,
    unbarred_indices,
)

EPS_VALUES = tuple(Fraction(a, b) for b in (1, 2) for a in range(-3, 4))


# ---------------------------------------------------------------------------
# derivatives of the family


@dataclass(frozen=True, eq=False)
class FamilyDerivatives:
    """Values and Jacobians of h_i, omega_i, zeta_i at one Z (rows are flat MatPairs)."""

    n: int
    h: list
    omega: list
    zeta: list
    Dh: list
    Domega: list
    Dzeta: list


def _stack_family(Z, n):
    fam = family_n5(Z, n)
    parts = [g.flat() for key in ("h", "omega", "zeta") for g in fam[key]]
    return np.concatenate(parts)


def family_derivatives(Z: ReducedParams) -> FamilyDerivatives:
    n = Z.n
    exact = Z.Z.dtype == object and not isinstance(Z.Z[0], float)
    vals = _stack_family(Z.Z, n)
    J = jacobian_forward(lambda z: _stack_family(z, n), Z.Z, exact=exact)
    w = 4 * n
    blocks = [vals[k * w:(k + 1) * w] for k in range(15)]
    dblocks = [J[k * w:(k + 1) * w] for k in range(15)]
    return FamilyDerivatives(n, blocks[0:5], blocks[5:10], blocks[10:15], dblocks[0:5], dblocks[5:10], dblocks[10:15])


def _matmul(A, B):
    return np.asarray(A) @ np.asarray(B)


def phi_jacobian(i: int, Z0: ReducedParams, H: Sequence, fd: FamilyDerivatives | None = None) -> np.ndarray:
    """Jacobian in Z of the vertex-on-graph system anchored at vertex i (1-based)."""
    fd = fd or family_derivatives(Z0)
    n = Z0.n
    k = 2 * n
    if len(H) != 5 or any(np.shape(h) != (k, k) for h in H):
        raise ValueError(f"need five {k}x{k} Hessians")
    rows = []
    Do = fd.Domega[i - 1]
    for j in range(5):
        D = fd.Dzeta[j] - Do
        rows.append(_matmul(H[j], D[:k]) - D[k:])
    return np.vstack(rows)


def sheet_correction(i: int, Z0: ReducedParams, H: Sequence, fd: FamilyDerivatives | None = None) -> np.ndarray:
    """B_i Df_i^1 with B_i stacking H_i - H_j and f_i = kappa_i h_i."""
    fd = fd or family_derivatives(Z0)
    n = Z0.n
    k = 2 * n
    kap = Z0.kappa[i - 1]
    Df1 = fd.Dh[i - 1][:k] * kap
    Df1 = Df1.copy()
    col = 10 * n - 5 + (i - 1)
    Df1[:, col] = Df1[:, col] + fd.h[i - 1][:k]
    blocks = [np.asarray(H[i - 1]) - np.asarray(H[j]) for j in range(5)]
    return np.vstack([_matmul(b, Df1) for b in blocks])


def n_matrix(i: int, Z0: ReducedParams, H: Sequence, fd: FamilyDerivatives | None = None) -> np.ndarray:
    fd = fd or family_derivatives(Z0)
    return phi_jacobian(i, Z0, H, fd) + sheet_correction(i, Z0, H, fd)


def det_J(i: int, Z0: ReducedParams, H: Sequence, fd: FamilyDerivatives | None = None) -> Fraction:
    return bareiss_det(phi_jacobian(i, Z0, H, fd))


def det_N(i: int, Z0: ReducedParams, H: Sequence, fd: FamilyDerivatives | None = None) -> Fraction:
    return bareiss_det(n_matrix(i, Z0, H, fd))


# ---------------------------------------------------------------------------
# structured Hessians


def special_H(e: Sequence[Sequence], n: int) -> list[np.ndarray]:
    """Diagonal Hessians H(E^j); e[j] = (e11, e12, e21, e22, e_rest)."""
    if len(e) != 5:
        raise ValueError("need five epsilon tuples")
    out = []
    for ej in e:
        e11, e12, e21, e22, er = (Fraction(v) for v in ej)
        E = [[e11, e12] + [er] * (n - 2), [e21, e22] + [er] * (n - 2)]
        H = exact_array(np.zeros((2 * n, 2 * n), dtype=int))
        for k in range(2):
            for l in range(n):
                H[k * n + l, k * n + l] = E[k][l]
        out.append(H)
    return out


def base_hessians(Z0: ReducedParams, eps, d: Sequence) -> list[np.ndarray]:
    """eps I + d_j H0: the vertex Hessians of the unperturbed energy."""
    n = Z0.n
    H0 = minor_hessian(n)
    I = exact_array(np.eye(2 * n, dtype=int))
    return [I * Fraction(eps) + H0 * Fraction(d[j]) for j in range(5)]


# ---------------------------------------------------------------------------
# reduced systems on the slice where all bar components vanish


def in_slice(Z0: ReducedParams) -> bool:
    return all(Z0.Z[k] == 0 for k in bar_indices(Z0.n))


def reduced_rows(n: int) -> list[int]:
    return [j * 2 * n + k * n + l for j in range(5) for k in range(2) for l in range(2)]


def reduced_cols(n: int) -> list[int]:
    return unbarred_indices(n) + list(range(10 * n - 5, 10 * n))


@dataclass(eq=False)
class ReducedSystem:
    """Block factors of the J- or N-matrix on the slice.

    On the slice the matrix is block diagonal after permutation: the 20x20
    block (column indices 1, 2 against the unbarred components and kappa)
    and, for n >= 3, the block of column indices >= 3 against the bar
    components. The full determinant is +- the product of the two.
    """

    matrix: np.ndarray
    det: Fraction
    complement: np.ndarray
    complement_det: Fraction

    @property
    def nonsingular(self) -> bool:
        return self.det != 0 and self.complement_det != 0


def reduced_system(i: int, Z0: ReducedParams, e: Sequence[Sequence], family: str = "J", fd=None) -> ReducedSystem:
    if not in_slice(Z0):
        raise ValueError("parameter is not on the slice where all bar components vanish")
    if family not in ("J", "N"):
        raise ValueError("family must be 'J' or 'N'")
    n = Z0.n
    H = special_H(e, n)
    M = phi_jacobian(i, Z0, H, fd) if family == "J" else n_matrix(i, Z0, H, fd)
    rows = reduced_rows(n)
    R = M[np.ix_(rows, reduced_cols(n))]
    other = [r for r in range(10 * n) if r not in set(rows)]
    C = M[np.ix_(other, bar_indices(n))]
    cdet = bareiss_det(C) if n > 2 else Fraction(1)
    return ReducedSystem(R, bareiss_det(R), C, cdet)


def q_factor(Z0: ReducedParams, eps: Sequence) -> Fraction:
    """Closed form det(p1 p2)(a d q3^1 q4^2 - b c q3^2 q4^1) for the column-index >= 3 system.

    eps holds the five trailing slots eps_1..eps_5 of the pattern.
    """
    U = Z0.unpack()
    k = Z0.kappa
    e1, e2, e3, e4 = (Fraction(v) for v in eps[:4])
    mu1 = (e2 - e1) / k[1]
    mu2 = (e3 - e1) / k[2] - (e2 - e1) / (k[1] * k[2])
    mu3 = (e3 - e2) / k[2]
    a = e1 + mu1 + mu2 - e3
    b = e2 + mu3 - e3
    c = e1 + mu1 + mu2 - e4
    d = e2 + mu3 - e4
    p1, p2, q3, q4 = U["p1"], U["p2"], U["q3"], U["q4"]
    detp = p1[0] * p2[1] - p1[1] * p2[0]
    return detp * (a * d * q3[0] * q4[1] - b * c * q3[1] * q4[0])


# ---------------------------------------------------------------------------
# certificates and witness search


@dataclass
class CertReport:
    J: dict
    N: dict
    witness: list | None = None
    elapsed: float = 0.0
    trials: int = 0
    closeness: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.J) and all(v != 0 for v in self.J.values()) and all(v != 0 for v in self.N.values())

    def to_dict(self) -> dict:
        return {
            "J": {str(k): fraction_str(v) for k, v in self.J.items()},
            "N": {str(k): fraction_str(v) for k, v in self.N.items()},
            "nonzero": {f"J{k}": v != 0 for k, v in self.J.items()} | {f"N{k}": v != 0 for k, v in self.N.items()},
            "passed": self.passed,
            "witness": None if self.witness is None else [[fraction_str(v) for v in row] for row in self.witness],
            "trials": self.trials,
            "closeness": self.closeness,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def certify(Z0: ReducedParams, H: Sequence, fd=None) -> CertReport:
    t0 = time.perf_counter()
    fd = fd or family_derivatives(Z0)
    J = {i: det_J(i, Z0, H, fd) for i in range(1, 6)}
    N = {i: det_N(i, Z0, H, fd) for i in range(1, 6)}
    return CertReport(J=J, N=N, elapsed=time.perf_counter() - t0)


def random_pattern(rng: np.random.Generator) -> list[list[Fraction]]:
    return [[EPS_VALUES[int(rng.integers(len(EPS_VALUES)))] for _ in range(5)] for _ in range(5)]


def perturbed_hessians(base: Sequence, e, n: int, scale) -> list[np.ndarray]:
    return [np.asarray(b) + h * Fraction(scale) for b, h in zip(base, special_H(e, n))]


def closeness_sum(H: Sequence, base: Sequence) -> float:
    """sum_j |H_j - base_j| in the spectral norm."""
    return float(sum(np.linalg.norm(np.asarray(h, dtype=float) - np.asarray(b, dtype=float), 2) for h, b in zip(H, base)))


def witness_search(
    Z0: ReducedParams,
    seed: int = 0,
    max_trials: int = 100,
    base: Sequence | None = None,
    bound: float | None = None,
):
    """First random epsilon pattern making all ten determinants nonzero.

    Without ``base`` the Hessians are H(E^j). With ``base`` (the unperturbed
    vertex Hessians) and ``bound`` the Hessians are base_j + t H(E^j) with a
    rational t chosen so that sum_j |H_j - base_j| < bound.
    Returns (pattern, hessians, report); raises RuntimeError on exhaustion.
    """
    rng = np.random.default_rng(seed)
    fd = family_derivatives(Z0)
    n = Z0.n
    t0 = time.perf_counter()
    for trial in range(1, max_trials + 1):
        e = random_pattern(rng)
        if base is None:
            H = special_H(e, n)
            info = {}
        else:
            raw = closeness_sum(special_H(e, n), [b * 0 for b in base])
            if raw == 0:
                continue
            t = Fraction(1, 2 ** max(0, math.ceil(math.log2(2 * raw / bound))))
            H = perturbed_hessians(base, e, n, t)
            info = {"scale": fraction_str(t), "sum": closeness_sum(H, base), "bound": bound}
        rep = certify(Z0, H, fd)
        if rep.passed:
            rep.witness = e
            rep.trials = trial
            rep.closeness = info
            rep.elapsed = time.perf_counter() - t0
            return e, H, rep
    raise RuntimeError(f"no nondegenerate pattern found in {max_trials} trials")


def minor_check(M: np.ndarray, rng: np.random.Generator, size: int = 6, count: int = 4) -> bool:
    """Bareiss and cofactor expansion agree on random principal-free minors of M."""
    k = M.shape[0]
    for _ in range(count):
        rows = sorted(rng.choice(k, size, replace=False))
        cols = sorted(rng.choice(k, size, replace=False))
        sub = M[np.ix_(rows, cols)]
        if bareiss_det(sub) != cofactor_det(sub):
            return False
    return True


def dump_matrix_csv(M: np.ndarray, path) -> None:
    """Write an exact matrix as CSV of num/den strings."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in M:
            w.writerow([fraction_str(Fraction(v)) for v in row])


def family_jacobian_fd(Z0: ReducedParams, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of the stacked (h, omega, zeta) map in float."""
    n = Z0.n
    z = np.array([float(v) for v in Z0.Z])
    cols = []
    for k in range(z.size):
        zp = z.copy()
        zm = z.copy()
        zp[k] += step
        zm[k] -= step
        fp = np.array(_stack_family(zp, n), dtype=float)
        fm = np.array(_stack_family(zm, n), dtype=float)
        cols.append((fp - fm) / (2 * step))
    return np.column_stack(cols)


def family_jacobian_exact(Z0: ReducedParams) -> np.ndarray:
    fd = family_derivatives(Z0)
    return np.vstack(fd.Dh + fd.Domega + fd.Dzeta)
