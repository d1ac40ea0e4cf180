"""Wave cone elements, their axis parametrisation, and T_N cycles."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .foundation import MatPair, exact_array, frac, is_exact, outer, segment_dist2, zeros

# ---------------------------------------------------------------------------
# axis maps on R^n / R^{n-1}; r is 1-based throughout


def _check_axis(r: int, n: int):
    if not 1 <= r <= n:
        raise IndexError(f"axis index {r} outside 1..{n}")


def alpha_tilde(r: int, x: Sequence) -> np.ndarray:
    """Insert a zero at position r."""
    x = list(x)
    _check_axis(r, len(x) + 1)
    zero = 0 * x[0] if x else Fraction(0)
    return np.array(x[: r - 1] + [zero] + x[r - 1:], dtype=object)


def alpha_star(r: int, a: Sequence) -> np.ndarray:
    """Delete entry r."""
    a = list(a)
    _check_axis(r, len(a))
    return np.array(a[: r - 1] + a[r:], dtype=object)


def alpha(r: int, x: Sequence) -> np.ndarray:
    """alpha_tilde(r, x) + e_r; the r-th entry is 1."""
    out = alpha_tilde(r, x)
    out[r - 1] = out[r - 1] + 1
    return out


def b_vec(r: int, x: Sequence, y: Sequence) -> np.ndarray:
    """alpha_tilde(r, y) - (x . y) e_r, always orthogonal to alpha(r, x)."""
    out = alpha_tilde(r, y)
    out[r - 1] = out[r - 1] - sum(xi * yi for xi, yi in zip(x, y))
    return out


def beta(r: int, x: Sequence, Y: Sequence[Sequence]) -> np.ndarray:
    """Matrix whose k-th row is b_vec(r, x, Y[k])."""
    return np.array([b_vec(r, x, y) for y in Y], dtype=object)


# ---------------------------------------------------------------------------
# cone elements


@dataclass(frozen=True, eq=False)
class ConeElement:
    p: np.ndarray
    a: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        if not any(v != 0 for v in self.a):
            raise ValueError("a must be nonzero")
        Ba = np.asarray(self.B) @ np.asarray(self.a)
        exact = is_exact(self.B) and is_exact(self.a)
        if exact and any(v != 0 for v in Ba):
            raise ValueError("B a must vanish")

    @property
    def value(self) -> MatPair:
        return MatPair(outer(self.p, self.a), np.asarray(self.B))


def cone_embed(r: int, p: Sequence, x: Sequence, Y: Sequence[Sequence]) -> ConeElement:
    """(p (x) alpha_r(x), beta_r(x, Y)) for m = len(p), n = len(x) + 1."""
    n = len(x) + 1
    _check_axis(r, n)
    if len(Y) != len(p):
        raise ValueError("Y needs one row per component of p")
    p = exact_array(p) if _all_exact(p, x, *Y) else np.asarray(p, dtype=float)
    if is_exact(p):
        x, Y = exact_array(x), exact_array(Y).reshape(len(p), n - 1)
        return ConeElement(p, alpha(r, x), beta(r, x, Y))
    x = np.asarray(x, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(len(p), n - 1)
    return ConeElement(p, alpha(r, x).astype(float), beta(r, x, Y).astype(float))


def _all_exact(*seqs) -> bool:
    return all(not isinstance(v, (float, np.floating)) for s in seqs for v in np.ravel(np.asarray(s, dtype=object)))


def _rank1_factor(A: np.ndarray, tol: float):
    """Return (p, a) with A = p (x) a, or None when A has rank > 1."""
    exact = is_exact(A)
    m, n = A.shape
    if exact:
        jmax = None
        for j in range(n):
            if any(A[i, j] != 0 for i in range(m)):
                jmax = j
                break
    else:
        norms = np.linalg.norm(A.astype(float), axis=0)
        jmax = int(np.argmax(norms)) if norms.max() > tol else None
    if jmax is None:
        return None
    col = A[:, jmax]
    if exact:
        i0 = next(i for i in range(m) if col[i] != 0)
        a = np.array([A[i0, j] / A[i0, jmax] for j in range(n)], dtype=object)
        # normalise so the first nonzero entry of a is 1
        k0 = next(j for j in range(n) if a[j] != 0)
        s = a[k0]
        a = a / s
        p = col * s
        if any(A[i, j] != p[i] * a[j] for i in range(m) for j in range(n)):
            return False
        return p, a
    A = A.astype(float)
    p = A[:, jmax].copy()
    a = A.T @ p / (p @ p)
    s = np.linalg.norm(a)
    a, p = a / s, p * s
    if np.linalg.norm(A - np.outer(p, a)) > tol * max(1.0, np.linalg.norm(A)):
        return False
    return p, a


def _kernel_vector(B: np.ndarray, tol: float):
    """Some nonzero a with B a = 0, or None."""
    m, n = B.shape
    if is_exact(B):
        # reduced row echelon form over Q
        R = [list(map(frac, row)) for row in B]
        pivots = []
        row = 0
        for c in range(n):
            piv = next((r for r in range(row, m) if R[r][c] != 0), None)
            if piv is None:
                continue
            R[row], R[piv] = R[piv], R[row]
            inv = 1 / R[row][c]
            R[row] = [v * inv for v in R[row]]
            for r in range(m):
                if r != row and R[r][c] != 0:
                    f = R[r][c]
                    R[r] = [x - f * y for x, y in zip(R[r], R[row])]
            pivots.append(c)
            row += 1
            if row == m:
                break
        free = [c for c in range(n) if c not in pivots]
        if not free:
            return None
        fc = free[0]
        a = [Fraction(0)] * n
        a[fc] = Fraction(1)
        for r, pc in enumerate(pivots):
            a[pc] = -R[r][fc]
        return np.array(a, dtype=object)
    B = B.astype(float)
    _, s, vt = np.linalg.svd(B)
    s = np.concatenate([s, np.zeros(n - len(s))])
    if s[-1] > tol * max(1.0, s[0] if len(s) else 1.0):
        return None
    return vt[-1]


def cone_member(v: MatPair, tol: float = 1e-10):
    """Test v in the wave cone; returns (flag, (p, a, B) or None).

    Exact inputs are decided exactly and ``tol`` is ignored.
    """
    A, B = np.asarray(v.first), np.asarray(v.second)
    exact = v.exact
    fac = _rank1_factor(A, tol)
    if fac is False:
        return False, None
    if fac is None:
        a = _kernel_vector(B, tol)
        if a is None:
            return False, None
        m = A.shape[0]
        p = zeros(m, exact)
        return True, (p, a, B)
    p, a = fac
    Ba = B @ a
    if exact:
        ok = all(x == 0 for x in Ba)
    else:
        ok = np.linalg.norm(Ba.astype(float)) <= tol * max(1.0, np.linalg.norm(B.astype(float)))
    return (True, (p, a, B)) if ok else (False, None)


# ---------------------------------------------------------------------------
# T_N configurations


def _as_pair(g) -> MatPair:
    return g.value if isinstance(g, ConeElement) else g


@dataclass(frozen=True, eq=False)
class TNConfig:
    rho: MatPair
    gammas: tuple
    kappas: tuple
    pis: tuple = field(default=())
    xis: tuple = field(default=())

    @property
    def N(self) -> int:
        return len(self.gammas)

    @property
    def chis(self) -> tuple:
        return tuple(1 / k for k in self.kappas)

    def segments(self) -> list[tuple[MatPair, MatPair]]:
        return list(zip(self.xis, self.pis))

    def dist2_to_set(self, x: MatPair):
        """Squared distance from x to the union of segments [xi_j, pi_j]."""
        return min(segment_dist2(x, a, b) for a, b in self.segments())


def build_tn(rho: MatPair, gammas, kappas, tol: float = 1e-12) -> TNConfig:
    gam = tuple(_as_pair(g) for g in gammas)
    N = len(gam)
    if N < 2:
        raise ValueError("need N >= 2")
    if len(kappas) != N:
        raise ValueError("one kappa per direction")
    if any(not k > 1 for k in kappas):
        raise ValueError("every kappa must exceed 1")
    total = gam[0]
    for g in gam[1:]:
        total = total + g
    if not total.equals(MatPair.zero(*rho.dims, exact=total.exact), tol=0.0 if total.exact else tol):
        raise ValueError("directions do not sum to zero")
    pis = [rho]
    for g in gam[:-1]:
        pis.append(pis[-1] + g)
    xis = [pi + g * k for pi, g, k in zip(pis, gam, kappas)]
    return TNConfig(rho, gam, tuple(kappas), tuple(pis), tuple(xis))


def _check_open_unit(t):
    if any(not (0 < tk < 1) for tk in t):
        raise ValueError("weights must lie in (0, 1)")


def nu_coefficients(t: Sequence) -> list[list]:
    """Weights nu[i][j] with P_i = sum_j nu[i][j] X_j for the cycle
    P_{k+1} = t_k X_k + (1 - t_k) P_k (indices mod N, 0-based here)."""
    _check_open_unit(t)
    N = len(t)
    one = t[0] / t[0]
    prod = one
    for tk in t:
        prod = prod * (1 - tk)
    denom = 1 - prod
    nu = [[0 * one] * N for _ in range(N)]
    for i in range(N):
        # walk backwards from j = i-1: weight t_j times the survival factors in between
        surv = one
        for step in range(1, N + 1):
            j = (i - step) % N
            nu[i][j] = surv * t[j] / denom
            surv = surv * (1 - t[j])
    return nu


def nu_fixed_point(t: Sequence) -> list[list[Fraction]]:
    """Independent oracle: solve the cycle relations as a linear system in the weights."""
    from .foundation import exact_solve

    _check_open_unit(t)
    N = len(t)
    t = [frac(v) for v in t]
    # unknown W[i][j], row-major; equation P_{k+1} - (1-t_k) P_k = t_k e_k
    size = N * N
    M = [[Fraction(0)] * size for _ in range(size)]
    rhs = [Fraction(0)] * size
    for k in range(N):
        k1 = (k + 1) % N
        for j in range(N):
            row = k * N + j
            M[row][k1 * N + j] += 1
            M[row][k * N + j] -= 1 - t[k]
            if j == k:
                rhs[row] = t[k]
    w = exact_solve(M, rhs)
    return [[w[i * N + j] for j in range(N)] for i in range(N)]


def nu_iterate(t: Sequence[float], tol: float = 1e-15, max_iter: int = 100000) -> list[list[float]]:
    """Float oracle: run the cycle with symbolic unit-vector vertices until it settles."""
    N = len(t)
    P = np.full(N, 1.0 / N)
    Ps = [None] * N
    for _ in range(max_iter):
        old = P.copy()
        for k in range(N):
            Ps[k] = P.copy()
            e = np.zeros(N)
            e[k] = 1.0
            P = t[k] * e + (1 - t[k]) * P
        if np.abs(P - old).max() < tol:
            break
    return [list(p) for p in Ps]


def barycentric(cfg: TNConfig, i: int, lam) -> list:
    """Weights nu_j with sum nu_j xi_j = lam xi_i + (1 - lam) pi_i (i is 1-based)."""
    if not 0 <= lam <= 1:
        raise ValueError("lambda must lie in [0, 1]")
    N = cfg.N
    if not 1 <= i <= N:
        raise IndexError("vertex index out of range")
    nu = nu_coefficients(cfg.chis)[i - 1]
    w = [(1 - lam) * v for v in nu]
    w[i - 1] = w[i - 1] + lam
    return w


def combine(weights, points: Sequence[MatPair]) -> MatPair:
    total = points[0] * weights[0]
    for w, p in zip(weights[1:], points[1:]):
        total = total + p * w
    return total


def cyclic_shift(cfg: TNConfig, i: int) -> TNConfig:
    """Same cycle started at pi_i (1-based)."""
    N = cfg.N
    if not 1 <= i <= N:
        raise IndexError("shift index out of range")
    k = i - 1
    gam = cfg.gammas[k:] + cfg.gammas[:k]
    kap = cfg.kappas[k:] + cfg.kappas[:k]
    return build_tn(cfg.pis[k], gam, kap)


def shrink(cfg: TNConfig, lambdas: Sequence) -> TNConfig:
    """Move each xi_i towards pi_i: kappa_i -> lambda_i kappa_i, requires chi_i < lambda_i <= 1."""
    if len(lambdas) != cfg.N:
        raise ValueError("one lambda per vertex")
    for lam, chi in zip(lambdas, cfg.chis):
        if not (chi < lam <= 1):
            raise ValueError("each lambda_i must satisfy chi_i < lambda_i <= 1")
    return build_tn(cfg.rho, cfg.gammas, tuple(l * k for l, k in zip(lambdas, cfg.kappas)))
