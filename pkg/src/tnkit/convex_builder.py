"""Smooth strongly polyconvex energies with prescribed first and second jets.

Matrices A in R^{2 x n} are flattened row-major to vectors of length 2n.
Every evaluator is vectorized: inputs have shape (P, dim) and values,
gradients and Hessians come back with shapes (P,), (P, dim), (P, dim, dim).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import quad

from .foundation import exact_array, fraction_str, smoothstep
from .param_family import REFERENCE_CD, CompatConstants, ReducedParams, compat_certificate, family_n5, minor_hessian


class CompatibilityError(ValueError):
    """A jet pair violates c_i - c_j + S_i.(T_j - T_i) < 0."""

    def __init__(self, pair, value):
        super().__init__(f"jet compatibility fails for pair {pair}: value {value} is not negative")
        self.pair = pair
        self.value = value


class ClosenessError(ValueError):
    pass


# ---------------------------------------------------------------------------
# one-dimensional mollifier


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


class Mollifier:
    """rho(s) = c exp(-1/(1 - s^2)) on (-1, 1), normalized to unit mass.

    cdf(u) = int_{-1}^u rho and moment(u) = int_{-1}^u s rho(s) ds are
    evaluated by Gauss-Legendre quadrature mapped to [-1, u].
    """

    def __init__(self, nodes: int = 80):
        mass, _ = quad(lambda s: math.exp(-1.0 / (1.0 - s * s)), -1, 1, limit=200)
        self.c = 1.0 / mass
        self.x, self.w = leggauss(nodes)

    def density(self, s):
        return self.c * _bump(s)

    def _integrate(self, u, power: int):
        u = np.clip(np.asarray(u, dtype=float), -1.0, 1.0)
        half = (u + 1.0) / 2.0
        pts = half[..., None] * (self.x + 1.0) - 1.0
        vals = self.density(pts) * (pts**power)
        return half * (vals @ self.w)

    def cdf(self, u):
        return self._integrate(u, 0)

    def moment(self, u):
        return self._integrate(u, 1)

    def moments(self) -> tuple[float, float]:
        """(int rho, int s rho) by adaptive quadrature."""
        m0, _ = quad(lambda s: self.density(s), -1, 1, limit=200)
        m1, _ = quad(lambda s: s * self.density(s), -1, 1, limit=200)
        return m0, m1


MOLLIFIER = Mollifier()


def mollified_abs(x, eps: float):
    """(|.| * rho_eps)(x) with first and second derivatives; equals |x| for |x| >= eps."""
    x = np.asarray(x, dtype=float)
    u = x / eps
    inside = np.abs(u) < 1
    m = np.abs(x)
    m1 = np.sign(x)
    m2 = np.zeros_like(x)
    if np.any(inside):
        ui = u[inside]
        P = MOLLIFIER.cdf(ui)
        Q = MOLLIFIER.moment(ui)
        m[inside] = eps * (ui * (2 * P - 1) - 2 * Q)
        m1[inside] = 2 * P - 1
        m2[inside] = 2.0 / eps * MOLLIFIER.density(ui)
    return m, m1, m2, inside


def mollified_abs_quad(x: float, eps: float) -> float:
    """Oracle: direct adaptive quadrature of int |x - eps s| rho(s) ds."""
    f = lambda s: abs(x - eps * s) * MOLLIFIER.density(s)
    pts = [x / eps] if abs(x) < eps else None
    val, _ = quad(f, -1, 1, points=pts, epsabs=1e-14, epsrel=1e-13)
    return val


def smooth_max(a, ga, Ha, b, gb, Hb, eps: float):
    """(a + b)/2 + m_eps((a - b)/2) with gradient and Hessian.

    Convex and nondecreasing in (a, b); equals max(a, b) with the selected
    derivatives exactly once |a - b| >= 2 eps. Returns also the mask of
    points that used the smoothing branch.
    """
    d = (a - b) / 2
    m, m1, m2, inside = mollified_abs(d, eps)
    w = (1 + m1) / 2
    val = np.where(a >= b, a, b)
    grad = np.where((a >= b)[:, None], ga, gb)
    hess = np.where((a >= b)[:, None, None], Ha, Hb)
    if np.any(inside):
        i = inside
        wi = w[i]
        val[i] = (a[i] + b[i]) / 2 + m[i]
        grad[i] = wi[:, None] * ga[i] + (1 - wi)[:, None] * gb[i]
        dg = ga[i] - gb[i]
        hess[i] = (
            wi[:, None, None] * Ha[i]
            + (1 - wi)[:, None, None] * Hb[i]
            + (m2[i] / 4)[:, None, None] * dg[:, :, None] * dg[:, None, :]
        )
    return val, grad, hess, inside


# ---------------------------------------------------------------------------
# smoothed max of affine functions with linear growth


def _as_fraction_or_float(x):
    return x if isinstance(x, Fraction) else float(x)


class SmoothMaxAffine:
    """Smooth convex g on R^q equal to c_j + S_j.(t - T_j) near each T_j.

    The pieces h_1..h_N and the floor h_{N+1}(t) = (A+1)|t| - K are combined
    by nested two-argument smooth maxima of radius ``radius``.
    """

    def __init__(self, c: Sequence, S: Sequence, T: Sequence, radius: float | None = None):
        N = len(c)
        if N < 2:
            raise ValueError("at least two jets are required")
        self.c_exact = [_as_fraction_or_float(v) for v in c]
        self.S_exact = [[_as_fraction_or_float(v) for v in row] for row in S]
        self.T_exact = [[_as_fraction_or_float(v) for v in row] for row in T]
        self.N = N
        self.q = len(self.S_exact[0])
        self.compat = self.compatibility()
        for (i, j), v in self.compat.items():
            if v >= 0:
                raise CompatibilityError((i + 1, j + 1), v)
        self.c = np.array([float(v) for v in self.c_exact])
        self.S = np.array([[float(v) for v in r] for r in self.S_exact])
        self.T = np.array([[float(v) for v in r] for r in self.T_exact])
        nS = np.linalg.norm(self.S, axis=1)
        nT = np.linalg.norm(self.T, axis=1)
        self.A = float(nS.max())
        self.B = float(nT.max())
        R = self.B + 1
        hmin = float(np.min(self.c - np.einsum("ij,ij->i", self.S, self.T) - nS * R))
        self.K = 1 + (self.A + 1) * (self.B + 1) - hmin
        self.C = float(np.abs(self.c).max())
        self.M = self.K + self.A * self.B + self.C + 1
        self.delta = self._separation()
        if radius is None:
            radius = self.delta / 4
        if not 0 < radius < self.delta / 2:
            raise ValueError(f"radius {radius} must lie in (0, delta/2) with delta = {self.delta}")
        self.radius = float(radius)

    def compatibility(self) -> dict:
        out = {}
        for i in range(self.N):
            for j in range(self.N):
                if i != j:
                    dT = [tj - ti for tj, ti in zip(self.T_exact[j], self.T_exact[i])]
                    out[(i, j)] = self.c_exact[i] - self.c_exact[j] + sum(s * t for s, t in zip(self.S_exact[i], dT))
        return out

    def _separation(self) -> float:
        """delta with: on B_{delta/2}(T_j) piece j beats every other by 2(N+1) delta/2."""
        N = self.N
        best = math.inf
        for j in range(N):
            for i in range(N):
                if i == j:
                    continue
                m = -float(self.compat[(i, j)])
                L = float(np.linalg.norm(self.S[i] - self.S[j]))
                best = min(best, 2 * m / (L + 2 * (N + 1)))
            m = self.c[j] - (self.A + 1) * np.linalg.norm(self.T[j]) + self.K
            L = float(np.linalg.norm(self.S[j])) + self.A + 1
            best = min(best, 2 * m / (L + 2 * (N + 1)))
        return float(min(best, 1.0))

    def pieces(self, t: np.ndarray):
        P = t.shape[0]
        q = self.q
        zero_h = np.zeros((P, q, q))
        for j in range(self.N):
            val = self.c[j] + (t - self.T[j]) @ self.S[j]
            yield val, np.broadcast_to(self.S[j], (P, q)).copy(), zero_h.copy()
        r = np.maximum(np.linalg.norm(t, axis=1), 1e-12)
        u = t / r[:, None]
        a1 = self.A + 1
        val = a1 * r - self.K
        grad = a1 * u
        hess = a1 * (np.eye(q)[None] - u[:, :, None] * u[:, None, :]) / r[:, None, None]
        yield val, grad, hess

    def evaluate(self, t):
        t = np.atleast_2d(np.asarray(t, dtype=float))
        it = self.pieces(t)
        val, grad, hess = next(it)
        smoothed = np.zeros(t.shape[0], dtype=bool)
        for bv, bg, bh in it:
            val, grad, hess, inside = smooth_max(val, grad, hess, bv, bg, bh, self.radius)
            smoothed |= inside
        return val, grad, hess, smoothed

    def __call__(self, t):
        return self.evaluate(t)[0]

    def max_affine(self, t):
        """The unsmoothed max f."""
        t = np.atleast_2d(np.asarray(t, dtype=float))
        return np.max(np.stack([v for v, _, _ in self.pieces(t)]), axis=0)

    def to_dict(self) -> dict:
        enc = lambda v: fraction_str(v) if isinstance(v, Fraction) else repr(v)
        return {
            "c": [enc(v) for v in self.c_exact],
            "S": [[enc(v) for v in r] for r in self.S_exact],
            "T": [[enc(v) for v in r] for r in self.T_exact],
            "radius": repr(self.radius),
            "constants": {"A": self.A, "B": self.B, "C": self.C, "K": self.K, "M": self.M, "delta": self.delta},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SmoothMaxAffine":
        dec = lambda s: Fraction(s) if "/" in s or s.lstrip("-").isdigit() else float(s)
        return cls([dec(v) for v in d["c"]], [[dec(v) for v in r] for r in d["S"]], [[dec(v) for v in r] for r in d["T"]], float(d["radius"]))


def growth_constants(g: SmoothMaxAffine, rng: np.random.Generator, samples: int = 200, radii=(1.0, 10.0, 100.0)) -> dict:
    """Sampled L_k = max |D^k g(t)| |t|^{k-1} over |t| >= M for k = 1, 2, 3 (k = 3 by central differences)."""
    dirs = rng.normal(size=(samples, g.q))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    out = {1: 0.0, 2: 0.0, 3: 0.0}
    for f in radii:
        r = g.M * f
        t = dirs * r
        _, gr, H, _ = g.evaluate(t)
        out[1] = max(out[1], float(np.abs(gr).max()))
        out[2] = max(out[2], float(np.abs(H).max() * r))
        h = 1e-3 * r
        e = rng.normal(size=g.q)
        e /= np.linalg.norm(e)
        Hp = g.evaluate(t + h * e)[2]
        Hm = g.evaluate(t - h * e)[2]
        out[3] = max(out[3], float(np.abs((Hp - Hm) / (2 * h)).max() * r * r))
    return out


# ---------------------------------------------------------------------------
# minor structure


def delta_minor(A: np.ndarray, n: int) -> np.ndarray:
    """a11 a22 - a12 a21 for rows of flattened 2 x n matrices."""
    return A[:, 0] * A[:, n + 1] - A[:, 1] * A[:, n]


def H0_float(n: int) -> np.ndarray:
    return np.array(minor_hessian(n, exact=False), dtype=float)


# ---------------------------------------------------------------------------
# radial cutoff


def cutoff_profile(s):
    """phi(s) = 1 on [0, 1/2], 0 on [1, inf), smooth in between; returns (phi, phi', phi'')."""
    S, S1, S2 = smoothstep(2.0 * (1.0 - np.asarray(s, dtype=float)))
    return S, -2.0 * S1, 4.0 * S2


def cutoff_constant(points: int = 200001) -> float:
    """C_0 with |D^2 V_{H,r}| <= C_0 |H| (spectral norms) for the radial cutoff.

    D^2 V = w H + (grad w (x) HA + HA (x) grad w)/r + (A.HA)/(2 r^2) D^2 w, so
    C_0 = sup_s phi + 2 s |phi'| + s^2/2 max(|phi''|, |phi'|/s).
    """
    s = np.linspace(1e-9, 1.0, points)
    p, p1, p2 = cutoff_profile(s)
    bound = p + 2 * s * np.abs(p1) + 0.5 * s * s * np.maximum(np.abs(p2), np.abs(p1) / s)
    return float(bound.max() * (1 + 1e-6))


C0 = cutoff_constant()


def cutoff_quadratic(A: np.ndarray, H: np.ndarray, r: float):
    """V_{H,r}(A) = omega(A/r) A.HA / 2 with gradient and Hessian; rows of A are points."""
    s = np.linalg.norm(A, axis=1) / r
    p, p1, p2 = cutoff_profile(s)
    HA = A @ H
    quadform = 0.5 * np.einsum("ij,ij->i", A, HA)
    safe = np.maximum(s, 1e-300)
    u = A / (r * safe[:, None])
    gw = (p1 / r)[:, None] * u
    val = p * quadform
    grad = p[:, None] * HA + quadform[:, None] * gw
    dim = A.shape[1]
    uu = u[:, :, None] * u[:, None, :]
    D2w = (p2[:, None, None] * uu + (p1 / safe)[:, None, None] * (np.eye(dim)[None] - uu)) / r**2
    hess = (
        p[:, None, None] * H[None]
        + gw[:, :, None] * HA[:, None, :]
        + HA[:, :, None] * gw[:, None, :]
        + quadform[:, None, None] * D2w
    )
    return val, grad, hess


# ---------------------------------------------------------------------------
# G, F0 and F


@dataclass(eq=False)
class VertexData:
    n: int
    zeta1: list
    zeta2: list
    d: list
    c: list
    sigma0: float
    J: float
    eps0: float


def vertex_data(Z0: ReducedParams, cd: CompatConstants = REFERENCE_CD, sigma0: float | None = None) -> VertexData:
    rep = compat_certificate(Z0, cd)
    if not rep.passed:
        raise CompatibilityError(rep.failing_pairs()[0] if rep.failing_pairs() else None, rep.margin)
    if sigma0 is None:
        sigma0 = 0.5 * min(float(rep.margin), rep.min_sep_zeta, rep.min_sep_omega)
    fam = family_n5(Z0.Z, Z0.n)
    z1 = [z.first.ravel() for z in fam["zeta"]]
    z2 = [z.second.ravel() for z in fam["zeta"]]
    f1 = [np.array(v, dtype=float) for v in z1]
    J = max(abs(float(f1[i] @ (f1[j] - f1[i]))) for i in range(5) for j in range(5) if i != j) + sigma0 + 1
    return VertexData(Z0.n, z1, z2, list(cd.d), list(cd.c), float(sigma0), float(J), float(sigma0 / J))


def default_eps(vd: VertexData) -> Fraction:
    e = Fraction(min(vd.eps0 / 2, 0.25)).limit_denominator(10**6)
    while e >= Fraction(vd.eps0):
        e /= 2
    return e


@dataclass(eq=False)
class GFunction:
    """Convex G on R^{2n} x R with (G_A, G_delta) = (Q_i, d_i) on tau-balls."""

    g: SmoothMaxAffine
    vd: VertexData
    eps: Fraction

    @property
    def tau(self) -> float:
        return self.g.radius

    @property
    def n(self) -> int:
        return self.vd.n

    def jets_T(self) -> np.ndarray:
        return self.g.T


def build_G(Z0: ReducedParams, eps=None, cd: CompatConstants = REFERENCE_CD, sigma0: float | None = None, radius: float | None = None) -> GFunction:
    vd = vertex_data(Z0, cd, sigma0)
    eps = default_eps(vd) if eps is None else Fraction(eps)
    if not 0 < eps < Fraction(vd.eps0):
        raise ValueError(f"eps = {float(eps)} must lie in (0, eps0) with eps0 = {vd.eps0}")
    n = Z0.n
    H0 = minor_hessian(n)
    c, S, T = [], [], []
    for i in range(5):
        z1, z2 = vd.zeta1[i], vd.zeta2[i]
        di = Fraction(vd.d[i])
        Q = z2 - z1 * eps - (H0 @ z1) * di
        dz = z1[0] * z1[n + 1] - z1[1] * z1[n]
        c.append(Fraction(vd.c[i]))
        S.append(list(Q) + [di])
        T.append(list(z1) + [dz])
    return GFunction(SmoothMaxAffine(c, S, T, radius), vd, eps)


def s0_radius(G: GFunction) -> float:
    """Largest s (times 0.99) with A in B_s(zeta_i) implying (A, delta(A)) in B_tau(zeta~_i)."""
    n = G.n
    H0 = H0_float(n)
    tau = G.tau
    best = math.inf
    for z in G.vd.zeta1:
        zf = np.array(z, dtype=float)
        L = float(np.linalg.norm(H0 @ zf))
        lo, hi = 0.0, tau
        for _ in range(200):
            mid = (lo + hi) / 2
            if mid**2 + (L * mid + mid**2 / 2) ** 2 < tau**2:
                lo = mid
            else:
                hi = mid
        best = min(best, lo)
    return 0.99 * best


@dataclass(eq=False)
class ConvexEnergy:
    """F(A) = (eps/2)|A|^2 + G(A, delta(A)) + sum_j V_{Ht_j, s1}(A - zeta_j^1)."""

    G: GFunction
    s0: float
    Htilde: list = field(default_factory=list)
    s1: float | None = None
    C0: float = C0
    Htilde_exact: list | None = None

    @property
    def n(self) -> int:
        return self.G.n

    @property
    def dim(self) -> int:
        return 2 * self.n

    @property
    def eps(self) -> float:
        return float(self.G.eps)

    @property
    def centers(self) -> np.ndarray:
        return np.array([np.array(z, dtype=float) for z in self.G.vd.zeta1])

    @property
    def targets(self) -> np.ndarray:
        return np.array([np.array(z, dtype=float) for z in self.G.vd.zeta2])

    def _cutoffs(self, A):
        P = A.shape[0]
        val = np.zeros(P)
        grad = np.zeros((P, self.dim))
        hess = np.zeros((P, self.dim, self.dim))
        for H, z in zip(self.Htilde, self.centers):
            if not np.any(H):
                continue
            v, g, h = cutoff_quadratic(A - z, H, self.s1)
            val += v
            grad += g
            hess += h
        return val, grad, hess

    def evaluate(self, A):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = self.n
        H0 = H0_float(n)
        dl = delta_minor(A, n)
        Dd = A @ H0
        gv, gg, gh, _ = self.G.g.evaluate(np.column_stack([A, dl]))
        GA = gg[:, : self.dim]
        Gd = gg[:, self.dim]
        GAA = gh[:, : self.dim, : self.dim]
        GAd = gh[:, : self.dim, self.dim]
        Gdd = gh[:, self.dim, self.dim]
        e = self.eps
        val = 0.5 * e * np.einsum("ij,ij->i", A, A) + gv
        grad = e * A + GA + Gd[:, None] * Dd
        hess = (
            e * np.eye(self.dim)[None]
            + GAA
            + GAd[:, :, None] * Dd[:, None, :]
            + Dd[:, :, None] * GAd[:, None, :]
            + Gdd[:, None, None] * Dd[:, :, None] * Dd[:, None, :]
            + Gd[:, None, None] * H0[None]
        )
        if self.Htilde:
            v, g, h = self._cutoffs(A)
            val, grad, hess = val + v, grad + g, hess + h
        return val, grad, hess

    def __call__(self, A):
        return self.evaluate(A)[0]

    def sigma(self, A):
        return self.evaluate(A)[1]

    @property
    def branch_radius(self) -> float:
        """Radius of the balls about zeta_j^1 on which DF is exactly affine."""
        return self.s1 / 2 if self.Htilde else self.s0

    def vertex_hessians(self) -> list:
        """Exact D^2F(zeta_j^1) = eps I + d_j H0 + Ht_j."""
        base = base_hessians_float(self)
        if not self.Htilde:
            return base
        if self.Htilde_exact is None:
            raise ValueError("exact vertex Hessians need exact perturbation data")
        return [b + h for b, h in zip(base, self.Htilde_exact)]

    def convex_part(self, A):
        """g(A) = (eps/4)|A|^2 + sum_j V_j(A - zeta_j^1) with its Hessian."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        v, _, h = self._cutoffs(A)
        e = self.eps
        return 0.25 * e * np.einsum("ij,ij->i", A, A) + v, 0.25 * e * np.eye(self.dim)[None] + h

    def polyconvex_part(self, t):
        """G~(A, delta) = g(A) + G(A, delta): convex on R^{2n+1}."""
        t = np.atleast_2d(np.asarray(t, dtype=float))
        return self.convex_part(t[:, : self.dim])[0] + self.G.g(t)

    def vertex_report(self, H_target: Sequence | None = None, step: float | None = None) -> list[dict]:
        """Per-vertex |DF(zeta^1) - zeta^2| and the relative FD-Hessian error."""
        z1 = self.centers
        z2 = self.targets
        grads = self.evaluate(z1)[1]
        h = step or (self.s1 or self.s0) / 8
        rows = []
        for i in range(5):
            E = np.eye(self.dim) * h
            Hfd = (self.evaluate(z1[i] + E)[1] - self.evaluate(z1[i] - E)[1]) / (2 * h)
            Ht = np.array(H_target[i], dtype=float) if H_target is not None else self.evaluate(z1[i])[2][0]
            rows.append({
                "vertex": i + 1,
                "grad_error": float(np.abs(grads[i] - z2[i]).max()),
                "hessian_error": float(np.abs(Hfd - Ht).max() / max(1.0, np.abs(Ht).max())),
                "hessian_symmetry": float(np.abs(Hfd - Hfd.T).max() / max(1.0, np.abs(Ht).max())),
            })
        return rows

    def to_recipe(self) -> dict:
        return {
            "n": self.n,
            "eps": fraction_str(self.G.eps),
            "sigma0": repr(self.G.vd.sigma0),
            "J": repr(self.G.vd.J),
            "eps0": repr(self.G.vd.eps0),
            "G": self.G.g.to_dict(),
            "s0": repr(self.s0),
            "s1": None if self.s1 is None else repr(self.s1),
            "C0": repr(self.C0),
            "Htilde": [[[repr(float(v)) for v in row] for row in np.asarray(H, dtype=float)] for H in self.Htilde],
            "Htilde_exact": None if self.Htilde_exact is None else [[[fraction_str(v) for v in row] for row in H] for H in self.Htilde_exact],
            "zeta1": [[fraction_str(v) for v in z] for z in self.G.vd.zeta1],
            "zeta2": [[fraction_str(v) for v in z] for z in self.G.vd.zeta2],
            "c": [fraction_str(v) for v in self.G.vd.c],
            "d": [fraction_str(v) for v in self.G.vd.d],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_recipe(), sort_keys=True)

    @classmethod
    def from_recipe(cls, r: dict) -> "ConvexEnergy":
        vd = VertexData(
            int(r["n"]),
            [exact_array([Fraction(v) for v in z]) for z in r["zeta1"]],
            [exact_array([Fraction(v) for v in z]) for z in r["zeta2"]],
            [Fraction(v) for v in r["d"]],
            [Fraction(v) for v in r["c"]],
            float(r["sigma0"]),
            float(r["J"]),
            float(r["eps0"]),
        )
        G = GFunction(SmoothMaxAffine.from_dict(r["G"]), vd, Fraction(r["eps"]))
        Ht = [np.array([[float(v) for v in row] for row in H]) for H in r["Htilde"]]
        Hx = r.get("Htilde_exact")
        if Hx is not None:
            Hx = [exact_array([[Fraction(v) for v in row] for row in H]) for H in Hx]
        return cls(G, float(r["s0"]), Ht, None if r["s1"] is None else float(r["s1"]), float(r["C0"]), Hx)


def build_F0(Z0: ReducedParams, eps=None, cd: CompatConstants = REFERENCE_CD, **kw) -> ConvexEnergy:
    G = build_G(Z0, eps, cd, **kw)
    s0 = s0_radius(G)
    if not s0 > 0:
        raise ValueError("no admissible s0 radius")
    return ConvexEnergy(G, s0)


def base_hessians_float(F0: ConvexEnergy) -> list:
    """eps I + d_j H0, the vertex Hessians of F0 (exact)."""
    n = F0.n
    H0 = minor_hessian(n)
    I = exact_array(np.eye(2 * n, dtype=int))
    return [I * F0.G.eps + H0 * Fraction(d) for d in F0.G.vd.d]


def closeness(H_target: Sequence, F0: ConvexEnergy) -> float:
    base = base_hessians_float(F0)
    return float(sum(np.linalg.norm(np.asarray(h, dtype=float) - np.asarray(b, dtype=float), 2) for h, b in zip(H_target, base)))


def build_F(Z0: ReducedParams, H_target: Sequence, eps=None, cd: CompatConstants = REFERENCE_CD, certify: bool = False, **kw) -> ConvexEnergy:
    """Perturb F0 by cutoff quadratics so that D^2 F(zeta_i^1) = H_target[i].

    With ``certify`` the ten nondegeneracy determinants are checked exactly first.
    """
    F0 = build_F0(Z0, eps, cd, **kw)
    bound = F0.eps / (4 * F0.C0)
    total = closeness(H_target, F0)
    if not total < bound:
        raise ClosenessError(f"sum |H_j - eps I - d_j H0| = {total:.3e} is not below eps/(4 C0) = {bound:.3e}")
    if certify:
        from .nondegeneracy import certify as _certify

        rep = _certify(Z0, [exact_array(h) for h in H_target])
        if not rep.passed:
            raise ValueError("target Hessians fail the nondegeneracy certificate")
    base = base_hessians_float(F0)
    exact = all(isinstance(v, (Fraction, int)) for h in H_target for v in np.ravel(h))
    if exact:
        Hx = [exact_array(np.asarray(h)) - b for h, b in zip(H_target, base)]
        Ht = [np.array([[float(v) for v in row] for row in H]) for H in Hx]
    else:
        Hx = None
        Ht = [np.asarray(h, dtype=float) - np.asarray(b, dtype=float) for h, b in zip(H_target, base)]
    s1 = min(F0.s0 / 2, F0.G.vd.sigma0)
    return ConvexEnergy(F0.G, F0.s0, Ht, s1, F0.C0, Hx)


def sampled_growth(F: ConvexEnergy, rng: np.random.Generator, radii=None, samples: int = 20) -> dict:
    """max |D^k F(A)| / (|A| + 1) for k = 1..4 over log-spaced radii (k = 3, 4 by differences of the Hessian)."""
    if radii is None:
        radii = np.logspace(-1, 3, 9)
    out = {k: 0.0 for k in range(1, 5)}
    for r in radii:
        X = rng.normal(size=(samples, F.dim))
        X *= r / np.linalg.norm(X, axis=1)[:, None]
        _, g, H = F.evaluate(X)
        scale = r + 1
        out[1] = max(out[1], float(np.linalg.norm(g, axis=1).max() / scale))
        out[2] = max(out[2], float(np.abs(H).max() / scale))
        h = 1e-3 * max(r, 1.0)
        e = rng.normal(size=F.dim)
        e /= np.linalg.norm(e)
        Hp = F.evaluate(X + h * e)[2]
        Hm = F.evaluate(X - h * e)[2]
        out[3] = max(out[3], float(np.abs((Hp - Hm) / (2 * h)).max() / scale))
        out[4] = max(out[4], float(np.abs((Hp - 2 * H + Hm) / h**2).max() / scale))
    return out


def midpoint_violations(fun, X: np.ndarray, Y: np.ndarray, rel: float = 1e-12) -> int:
    """Count pairs with f((x+y)/2) > (f(x)+f(y))/2 beyond rounding (rel * scale)."""
    fx, fy, fm = fun(X), fun(Y), fun((X + Y) / 2)
    scale = 1 + np.abs(fx) + np.abs(fy)
    return int(np.sum(fm - (fx + fy) / 2 > rel * scale))


def convexity_pairs(F: ConvexEnergy, rng: np.random.Generator, count: int = 10000, q_extra: bool = False):
    """Random pairs concentrated near the vertices at several scales."""
    dim = F.dim + (1 if q_extra else 0)
    centers = F.G.g.T if q_extra else F.centers
    scales = np.array([F.s1 or F.s0, F.G.tau, 1.0, 1e2, 1e4])
    idx = rng.integers(len(centers), size=count)
    sc = scales[rng.integers(len(scales), size=count)]
    X = centers[idx] + rng.normal(size=(count, dim)) * sc[:, None]
    Y = X + rng.normal(size=(count, dim)) * sc[:, None]
    return X, Y


# ---------------------------------------------------------------------------
# data constructions


@dataclass(frozen=True)
class AffineInitialData:
    """u(x, t) = A x and v_ij(x, t) = a_ij x_j^2 / 2 + t b_ij."""

    A: np.ndarray
    B: np.ndarray

    def u(self, x: np.ndarray, t=None) -> np.ndarray:
        return np.asarray(x, dtype=float) @ np.asarray(self.A, dtype=float).T

    def v(self, x: np.ndarray, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        t = np.asarray(t, dtype=float)
        return 0.5 * A[None] * (x**2)[:, None, :] + t.reshape(-1, 1, 1) * B[None]


def affine_initial_data(A, B) -> AffineInitialData:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape != B.shape:
        raise ValueError("A and B must have the same shape")
    return AffineInitialData(A, B)


@dataclass(eq=False)
class LiftedEnergy:
    """F(A) = (nu/2)|A_2|^2 + F2(A_1) on R^{m x n}; A_1 = first two rows."""

    base: ConvexEnergy
    m: int
    nu: float

    @property
    def n(self) -> int:
        return self.base.n

    def evaluate(self, A):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        k = 2 * self.n
        v, g, H = self.base.evaluate(A[:, :k])
        A2 = A[:, k:]
        dim = self.m * self.n
        grad = np.zeros((A.shape[0], dim))
        hess = np.zeros((A.shape[0], dim, dim))
        grad[:, :k] = g
        grad[:, k:] = self.nu * A2
        hess[:, :k, :k] = H
        hess[:, k:, k:] = self.nu * np.eye(dim - k)[None]
        return v + 0.5 * self.nu * np.einsum("ij,ij->i", A2, A2), grad, hess

    def __call__(self, A):
        return self.evaluate(A)[0]


def lift_dimension(F2: ConvexEnergy, m: int, nu: float | None = None) -> LiftedEnergy:
    if m < 3:
        raise ValueError("lift needs m >= 3")
    return LiftedEnergy(F2, m, F2.eps if nu is None else float(nu))


def witness_energy(Z0: ReducedParams, seed: int = 0, max_trials: int = 100, eps=None):
    """F for Hessians from a nondegeneracy witness scaled into the eps / (8 C0) ball.

    Returns (F, H_target, certificate report).
    """
    from .nondegeneracy import witness_search

    F0 = build_F0(Z0, eps)
    _, H, rep = witness_search(Z0, seed=seed, max_trials=max_trials, base=base_hessians_float(F0), bound=F0.eps / (8 * F0.C0))
    return build_F(Z0, H, eps), H, rep


def convex_min_eigenvalue(F: ConvexEnergy, rng: np.random.Generator, samples: int = 200) -> float:
    """Smallest Hessian eigenvalue of the convex part over points in the cutoff balls and far away."""
    r = F.s1 or F.s0
    X = []
    for z in F.centers:
        U = rng.normal(size=(samples, F.dim))
        U *= (r * rng.random(samples) ** (1 / F.dim) / np.linalg.norm(U, axis=1))[:, None]
        X.append(z + U)
    X.append(rng.normal(size=(samples, F.dim)) * 10)
    H = F.convex_part(np.concatenate(X))[1]
    return float(np.linalg.eigvalsh(H).min())
