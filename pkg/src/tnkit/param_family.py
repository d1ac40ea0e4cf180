"""Parametrised families of cone directions summing to zero.

The general construction takes free parameters (P, Q, X, Y) and axis
pattern r_1..r_N and solves the two sum-zero conditions for the remaining
entries. The five-direction, two-row family with pattern (1, 2, 1, 1, 2)
is written out in closed form as polynomials of a flat vector Z in R^{10n}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .configurations import alpha, alpha_star, alpha_tilde, b_vec, beta
from .foundation import MatPair, decode_rational, encode_rational, exact_array, frac, outer

PATTERN = (1, 2, 1, 1, 2)
X4_FIRST = Fraction(4)
X5_FIRST = Fraction(2)


def _dot(u, v):
    total = 0 * u[0] * v[0] if len(u) else Fraction(0)
    for a, b in zip(u, v):
        total = total + a * b
    return total


def _vec(seq) -> np.ndarray:
    return np.array(list(seq), dtype=object)


# ---------------------------------------------------------------------------
# general family


@dataclass(frozen=True, eq=False)
class GeneralParams:
    """Free parameters of the general construction.

    P: p_1..p_m in R^m; Q: q_{m+1}..q_{N-1} in R^m; X: x_{m+1}..x_N in R^{n-1};
    Y[k] = (y^k_1..y^k_{N-2} in R^{n-1}, ybar^k_N in R^{n-2}) for k = 1..m.
    """

    m: int
    n: int
    r: tuple
    P: tuple
    Q: tuple
    X: tuple
    Y: tuple
    kappa: tuple | None = None

    @property
    def N(self) -> int:
        return len(self.r)

    def dim(self) -> int:
        m, n, N = self.m, self.n, self.N
        return (m * n + n - 1) * N - 2 * m * n


def delta1(r: Sequence[int], m: int, xN) -> object:
    aN = alpha(r[-1], xN)
    out = aN[0] / aN[0]
    for j in range(m):
        out = out * aN[r[j] - 1]
    return out


def delta2(r: int, s: int, x, u1) -> object:
    ax = alpha(r, x)
    return ax[s - 1] * u1 - alpha_star(s, ax)[0]


def solve_beta(r: int, s: int, x, u, c, zbar):
    """Unique (y, z_1) with b_r(x, y) + b_s(u, (z_1, zbar)) = c."""
    ax = alpha(r, x)
    d2 = delta2(r, s, x, u[0])
    if d2 == 0:
        raise ZeroDivisionError("degenerate pinning: second determinant vanishes")
    w = alpha_star(s, ax) - ax[s - 1] * _vec(u)
    z1 = (-_dot(ax, c) + _dot(w[1:], zbar)) / d2
    z = _vec([z1] + list(zbar))
    rhs = _vec(c) - alpha_tilde(s, z)
    rhs[s - 1] = rhs[s - 1] + _dot(u, z)
    return alpha_star(r, rhs), z1


def derived_params_general(V: GeneralParams) -> dict:
    """Complete the free parameters to N cone directions g_i summing to zero."""
    m, n, N, r = V.m, V.n, V.N, V.r
    if N < 2 * m:
        raise ValueError("need N >= 2m")
    if len(V.P) != m or len(V.Q) != N - m - 1 or len(V.X) != N - m or len(V.Y) != m:
        raise ValueError("parameter block sizes do not match (m, N)")
    xs = [None] * N
    for i in range(m, N):
        xs[i] = _vec(V.X[i - m])
    xN = xs[N - 1]
    aN = alpha(r[N - 1], xN)
    d1 = delta1(r, m, xN)
    if d1 == 0:
        raise ZeroDivisionError("degenerate pinning: first determinant vanishes")
    ps = [None] * N
    for j in range(m):
        ps[j] = _vec(V.P[j])
    qs = {i: _vec(V.Q[i - m]) for i in range(m, N - 1)}
    for i in range(m, N - 1):
        acc = ps[0] * qs[i][0]
        for j in range(1, m):
            acc = acc + ps[j] * qs[i][j]
        ps[i] = acc
    pN = None
    for j in range(m):
        rj = r[j]
        coef = 1 + sum((qs[i][j] * alpha(r[i], xs[i])[rj - 1] for i in range(m, N - 1)), 0 * d1)
        term = ps[j] * (coef / aN[rj - 1])
        pN = -term if pN is None else pN - term
        aj = aN * (coef / aN[rj - 1])
        for i in range(m, N - 1):
            aj = aj - alpha(r[i], xs[i]) * qs[i][j]
        xs[j] = alpha_star(rj, aj)
    ps[N - 1] = pN
    a = [alpha(r[i], xs[i]) for i in range(N)]
    d2 = delta2(r[N - 2], r[N - 1], xs[N - 2], xN[0])
    ys = []
    for k in range(m):
        yk = [_vec(v) for v in V.Y[k][0]]
        ybarN = _vec(V.Y[k][1])
        c = None
        for j in range(N - 2):
            bj = b_vec(r[j], xs[j], yk[j])
            c = -bj if c is None else c - bj
        y_prev, z1 = solve_beta(r[N - 2], r[N - 1], xs[N - 2], xN, c, ybarN)
        yk = yk + [y_prev, _vec([z1] + list(ybarN))]
        ys.append(yk)
    B = [beta(r[i], xs[i], [ys[k][i] for k in range(m)]) for i in range(N)]
    g = [MatPair(outer(ps[i], a[i]), B[i]) for i in range(N)]
    sigma = [g[0] * 0]
    for i in range(1, N):
        sigma.append(sigma[-1] + g[i - 1])
    out = {"p": ps, "x": xs, "a": a, "y": ys, "B": B, "g": g, "sigma": sigma, "delta1": d1, "delta2": d2}
    if V.kappa is not None:
        out["eta"] = [sigma[i] + g[i] * V.kappa[i] for i in range(N)]
    return out


# ---------------------------------------------------------------------------
# the N = 5, m = 2 family


def z_length(n: int) -> int:
    return 10 * n


@dataclass(frozen=True, eq=False)
class ReducedParams:
    """Flat parameter Z = (p1, p2, q3, q4, x3, xbar4, Y, kappa) in R^{10n}.

    Y is ordered k = 1, 2 with blocks (y1^k, y2^k, y3^k in R^{n-1}, ybar5^k in R^{n-2}).
    """

    n: int
    Z: np.ndarray

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        z = np.asarray(self.Z, dtype=object)
        if z.shape != (10 * self.n,):
            raise ValueError(f"expected {10 * self.n} entries, got {z.shape}")
        object.__setattr__(self, "Z", z)

    @property
    def zprime(self) -> np.ndarray:
        return self.Z[: 10 * self.n - 5]

    @property
    def kappa(self) -> np.ndarray:
        return self.Z[10 * self.n - 5:]

    def unpack(self) -> dict:
        return unpack(self.Z, self.n)

    def to_float(self) -> "ReducedParams":
        return ReducedParams(self.n, np.array([float(v) for v in self.Z], dtype=float))

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "Z": [encode_rational(v) for v in self.Z]}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ReducedParams":
        d = json.loads(text)
        return cls(int(d["n"]), exact_array([decode_rational(v) for v in d["Z"]]))


def unpack(Z: Sequence, n: int) -> dict:
    Z = list(Z)
    pos = 0

    def take(k):
        nonlocal pos
        out = _vec(Z[pos:pos + k])
        pos += k
        return out

    d = {"p1": take(2), "p2": take(2), "q3": take(2), "q4": take(2), "x3": take(n - 1), "xbar4": take(n - 2)}
    ys = []
    for _ in range(2):
        ys.append({"y1": take(n - 1), "y2": take(n - 1), "y3": take(n - 1), "ybar5": take(n - 2)})
    d["Y"] = ys
    if pos < len(Z):
        d["kappa"] = take(5)
    return d


def pack(n: int, p1, p2, q3, q4, x3, xbar4, Y, kappa=None) -> np.ndarray:
    parts = [p1, p2, q3, q4, x3, xbar4]
    for blk in Y:
        parts += [blk["y1"], blk["y2"], blk["y3"], blk["ybar5"]]
    if kappa is not None:
        parts.append(kappa)
    return np.array([v for part in parts for v in part], dtype=object)


def family_n5(Z: Sequence, n: int) -> dict:
    """h_i, omega_i and (when kappa is present) zeta_i from the closed forms."""
    u = unpack(Z, n)
    p1, p2, q3, q4, x3, xb4 = u["p1"], u["p2"], u["q3"], u["q4"], u["x3"], u["xbar4"]
    # constants carry the scalar type of Z (Fraction, float, mpf or dual numbers)
    zero = 0 * q3[0]
    half = zero + Fraction(1, 2)
    p3 = p1 * q3[0] + p2 * q3[1]
    p4 = p1 * q4[0] + p2 * q4[1]
    p5 = -(p1 * (half * (1 + q3[0] + q4[0]))) - p2 * (1 + x3[0] * q3[1] + 4 * q4[1])
    x1 = _vec([half + (half - x3[0]) * q3[0] - (zero + Fraction(7, 2)) * q4[0]] + list(-(x3[1:] * q3[0]) - xb4 * q4[0]))
    x2 = _vec([2 + (2 * x3[0] - 1) * q3[1] + 7 * q4[1]] + list(-(x3[1:] * q3[1]) - xb4 * q4[1]))
    x4 = _vec([zero + X4_FIRST] + list(xb4))
    x5 = _vec([zero + X5_FIRST] + [zero] * (n - 2))
    x4_1 = _vec([1 + zero] + list(xb4))
    ys = [[None] * 5 for _ in range(2)]
    for k in range(2):
        blk = u["Y"][k]
        y1, y2, y3, yb5 = blk["y1"], blk["y2"], blk["y3"], blk["ybar5"]
        y51 = (_dot(x4 - x1, y1) + _dot(x4_1 - x2 * 4, y2) + _dot(x4 - x3, y3) + _dot(xb4, yb5)) / 7
        y5 = _vec([y51] + list(yb5))
        y4 = -y1 - y3 + _vec([_dot(x2, y2)] + list(-y2[1:])) + _vec([2 * y51] + list(-yb5))
        ys[k] = [y1, y2, y3, y4, y5]
    ps = [p1, p2, p3, p4, p5]
    xs = [x1, x2, x3, x4, x5]
    h = []
    for i in range(5):
        ri = PATTERN[i]
        h1 = outer(ps[i], alpha(ri, xs[i]))
        h2 = beta(ri, xs[i], [ys[0][i], ys[1][i]])
        h.append(MatPair(h1, h2))
    omega = [h[0] * 0]
    for i in range(1, 5):
        omega.append(omega[-1] + h[i - 1])
    out = {"h": h, "omega": omega, "p": ps, "x": xs, "y": ys}
    if "kappa" in u:
        out["zeta"] = [omega[i] + h[i] * u["kappa"][i] for i in range(5)]
    return out


def to_general(Z: Sequence, n: int) -> GeneralParams:
    """The general parameters obtained by pinning x4 = (4, xbar4) and x5 = 2 e_1."""
    u = unpack(Z, n)
    zero = 0 * u["p1"][0]
    x4 = [X4_FIRST] + list(u["xbar4"])
    x5 = [X5_FIRST] + [zero] * (n - 2)
    Y = tuple(
        ((blk["y1"], blk["y2"], blk["y3"]), blk["ybar5"]) for blk in u["Y"]
    )
    return GeneralParams(
        m=2,
        n=n,
        r=PATTERN,
        P=(u["p1"], u["p2"]),
        Q=(u["q3"], u["q4"]),
        X=(u["x3"], x4, x5),
        Y=Y,
        kappa=tuple(u["kappa"]) if "kappa" in u else None,
    )


def reference_Zstar(n: int = 2) -> ReducedParams:
    """The certified rational reference parameter."""
    if n < 2:
        raise ValueError("n must be at least 2")
    F = Fraction
    z = [F(0)] * (n - 2)

    def e(v):
        return [F(v)] + z

    Y = [
        {"y1": e(69), "y2": e(-165), "y3": e(404), "ybar5": z},
        {"y1": e(164), "y2": e(82), "y3": e(328), "ybar5": z},
    ]
    Z = pack(
        n,
        [F(-2), F(-3)],
        [F(-5), F(-5)],
        [F(1), F(-3, 5)],
        [F(0), F(-1, 5)],
        e(1),
        z,
        Y,
        [F(2), F(3), F(4), F(3), F(2)],
    )
    return ReducedParams(n, Z)


def bar_indices(n: int) -> list[int]:
    """Positions in Z of the components that vanish on the slice used by the reduced systems."""
    idx = []
    pos = 8
    idx += list(range(pos + 1, pos + n - 1))  # xbar3
    pos += n - 1
    idx += list(range(pos, pos + n - 2))  # xbar4
    pos += n - 2
    for _ in range(2):
        for _ in range(3):
            idx += list(range(pos + 1, pos + n - 1))
            pos += n - 1
        idx += list(range(pos, pos + n - 2))
        pos += n - 2
    return idx


def unbarred_indices(n: int) -> list[int]:
    """The 15 positions (p1, p2, q3, q4, x3_1, y^k_{1,1}, y^k_{2,1}, y^k_{3,1}) of Z'."""
    bars = set(bar_indices(n))
    return [i for i in range(10 * n - 5) if i not in bars]


# ---------------------------------------------------------------------------
# compatibility with polyconvex energies


@dataclass(frozen=True)
class CompatConstants:
    c: tuple
    d: tuple


REFERENCE_CD = CompatConstants(
    c=tuple(map(Fraction, (0, -3650, -3318, 5044, 580))),
    d=(Fraction(58), Fraction(-15, 2), Fraction(772), Fraction(57), Fraction(376)),
)


def minor(A) -> object:
    """The 2x2 minor of the first two columns."""
    return A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]


def minor_grad(A) -> np.ndarray:
    out = np.asarray(A) * 0
    out[0, 0] = A[1, 1]
    out[0, 1] = -A[1, 0]
    out[1, 0] = -A[0, 1]
    out[1, 1] = A[0, 0]
    return out


def minor_hessian(n: int, exact: bool = True) -> np.ndarray:
    """Constant Hessian H0 of the minor in row-major (a_11..a_1n, a_21..a_2n) coordinates."""
    one = Fraction(1) if exact else 1.0
    H = np.empty((2 * n, 2 * n), dtype=object if exact else float)
    H.fill(0 * one)
    H[0, n + 1] = H[n + 1, 0] = one
    H[1, n] = H[n, 1] = -one
    return H


@dataclass
class CompatReport:
    values: dict
    separations_zeta: dict
    separations_omega: dict
    passed: bool
    margin: object
    min_sep_zeta: float
    min_sep_omega: float

    def failing_pairs(self) -> list[tuple[int, int]]:
        return [k for k, v in self.values.items() if not v < 0]


def compat_certificate(Z: ReducedParams, cd: CompatConstants = REFERENCE_CD) -> CompatReport:
    """Evaluate the 20 strict inequalities and both separation conditions."""
    fam = family_n5(Z.Z, Z.n)
    zeta, omega = fam["zeta"], fam["omega"]
    c, d = cd.c, cd.d
    vals, sz, so = {}, {}, {}
    for i in range(5):
        Ai, Bi = zeta[i].first, zeta[i].second
        Qi = Bi - minor_grad(Ai) * d[i]
        for j in range(5):
            if i == j:
                continue
            Aj = zeta[j].first
            vals[(i + 1, j + 1)] = c[i] - c[j] + d[i] * (minor(Aj) - minor(Ai)) + np.sum(Qi * (Aj - Ai))
            sz[(i + 1, j + 1)] = np.sum((Aj - Ai) * (Aj - Ai))
            oj = omega[j].first - omega[i].first
            so[(i + 1, j + 1)] = np.sum(oj * oj)
    strict = all(v < 0 for v in vals.values())
    seps = all(v > 0 for v in sz.values()) and all(v > 0 for v in so.values())
    margin = min(-v for v in vals.values())
    return CompatReport(
        values=vals,
        separations_zeta=sz,
        separations_omega=so,
        passed=bool(strict and seps),
        margin=margin,
        min_sep_zeta=min(float(v) for v in sz.values()) ** 0.5,
        min_sep_omega=min(float(v) for v in so.values()) ** 0.5,
    )


def random_rational_Z(rng: np.random.Generator, n: int, den: int = 7, span: int = 9, kappa: bool = True) -> ReducedParams:
    """Random small-height rational parameter; kappa entries drawn in (1, 5]."""
    size = 10 * n - 5
    vals = [Fraction(int(rng.integers(-span * den, span * den + 1)), int(rng.integers(1, den + 1))) for _ in range(size)]
    if kappa:
        vals += [1 + Fraction(int(rng.integers(1, 4 * den + 1)), den) for _ in range(5)]
    else:
        vals += [Fraction(2)] * 5
    return ReducedParams(n, exact_array(vals))
