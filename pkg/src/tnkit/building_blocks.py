"""Localized plane waves, T_N spreading and the refinement step on space-time rasters.

Every field here is analytic: a sum of plane waves h = delta^2 zeta f(theta)
turned into (phi, psi, g) by the closed-form formulas, evaluated pointwise on
the cell centres of a raster one time slice at a time. Cutoffs zeta are
products of one-dimensional plateau bumps; a bump acts either on a box
coordinate or on the phase of an enclosing wave, which is how a wave is
localized inside the stripes of another one. Phases theta = mbar (alpha . y) /
|alpha| are reduced mod 1 per axis in multiprecision, so nested waves whose
stripe width is far below double precision stay exact.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import mpmath
import numpy as np
from scipy.interpolate import BPoly

from .configurations import TNConfig, barycentric, build_tn, cone_member, cyclic_shift, nu_coefficients, shrink
from .foundation import MatPair, Region, SpaceTimeBox, region_measure, segment_dist_batch, smoothstep


class BuildingBlockError(RuntimeError):
    pass


class ProfileError(BuildingBlockError):
    """The transition widths of the profile fall below the resolvable minimum."""


class PlaneWaveError(BuildingBlockError):
    """No admissible (s, delta) within the search budget."""


class RecursionBudgetError(BuildingBlockError):
    """Nesting too deep for the representable scales."""


class ConeConditionError(BuildingBlockError):
    pass


PROFILE_MIN_WIDTH = 1e-9
RAMP_NODES = 160
TINY = 1e-250
MIN_DELTA = 1e-280


def _smoothstep_sups() -> tuple[float, float, float]:
    x = np.linspace(0.0, 1.0, 400001)
    _, S1, S2 = smoothstep(x)
    S3 = np.gradient(S2, x)
    return tuple(float(np.abs(v).max()) * 1.01 for v in (S1, S2, S3))


S1MAX, S2MAX, S3MAX = _smoothstep_sups()
_GLX, _GLW = np.polynomial.legendre.leggauss(64)
_GLX, _GLW = (_GLX + 1) / 2, _GLW / 2


def _root_gap(eps: float, k: float) -> float:
    """1 - (1 - eps)^(1/k) without cancellation."""
    return -math.expm1(math.log1p(-eps) / k)


# ---------------------------------------------------------------------------
# the profile q and its periodic double primitive f


def _ramp_integrals(u) -> tuple[np.ndarray, np.ndarray]:
    """R1(u) = int_0^u S and R2(u) = int_0^u (u - v) S(v) dv for the smoothstep S."""
    u = np.asarray(u, dtype=float)
    S = smoothstep(u[..., None] * _GLX)[0]
    return u * (S * _GLW).sum(-1), u**2 * (S * (1 - _GLX) * _GLW).sum(-1)


@dataclass(frozen=True, eq=False)
class WaveProfile:
    """Mean-zero 1-periodic q with plateaus I1 (value 1 - lam) and I2 (value -lam), and f with f'' = q."""

    lam: float
    eps: float
    pieces: tuple  # (t0, t1, a, b): constant when a == b, else a smoothstep ramp from a to b
    I1: tuple
    I2: tuple
    poly: BPoly
    q2_end: float
    sup_f: float
    sup_df: float
    sup_q: float
    sup_dq: float
    sup_ddq: float
    min_width: float

    def q(self, tau, order: int = 0) -> np.ndarray:
        tau = np.mod(np.asarray(tau, dtype=float), 1.0)
        out = np.zeros_like(tau)
        for t0, t1, a, b in self.pieces:
            sel = (tau >= t0) & (tau < t1)
            if not np.any(sel):
                continue
            if a == b:
                out[sel] = a if order == 0 else 0.0
                continue
            w = t1 - t0
            S = smoothstep((tau[sel] - t0) / w)[order]
            out[sel] = (a if order == 0 else 0.0) + (b - a) * S / w**order
        return out

    def f(self, tau) -> np.ndarray:
        return self.poly(np.mod(np.asarray(tau, dtype=float), 1.0))

    def df(self, tau) -> np.ndarray:
        return self.poly(np.mod(np.asarray(tau, dtype=float), 1.0), 1)

    def primitives(self, tau) -> tuple[np.ndarray, np.ndarray]:
        """Exact Q1 = int_0^tau q and Q2 = int_0^tau Q1 on [0, 1] from the ramp integrals."""
        tau = np.asarray(tau, dtype=float)
        Q1 = np.zeros_like(tau)
        Q2 = np.zeros_like(tau)
        q1 = q2 = 0.0
        for t0, t1, a, b in self.pieces:
            sel = (tau >= t0) & (tau <= t1)
            d = tau[sel] - t0
            if a == b:
                Q1[sel] = q1 + a * d
                Q2[sel] = q2 + q1 * d + a * d**2 / 2
            else:
                w = t1 - t0
                R1, R2 = _ramp_integrals(d / w)
                Q1[sel] = q1 + a * d + (b - a) * w * R1
                Q2[sel] = q2 + q1 * d + a * d**2 / 2 + (b - a) * w**2 * R2
            L = t1 - t0
            if a == b:
                q1, q2 = q1 + a * L, q2 + q1 * L + a * L**2 / 2
            else:
                R1, R2 = _ramp_integrals(np.array(1.0))
                q1, q2 = q1 + a * L + (b - a) * L * float(R1), q2 + q1 * L + a * L**2 / 2 + (b - a) * L**2 * float(R2)
        return Q1, Q2

    def mean(self) -> float:
        """int_0^1 q by adaptive quadrature over the pieces."""
        from scipy.integrate import quad

        return sum(quad(lambda t: float(self.q(np.array([t]))[0]), t0, t1, limit=200)[0] for t0, t1, _, _ in self.pieces)


_PROFILE_CACHE: dict = {}


def make_profile(lam: float, eps: float) -> WaveProfile:
    """Profile with |I1| = (1-eps)^(1/3) lam, |I2| = (1-eps)^(1/3) (1-lam) and mean zero.

    The three transitions 0 -> 1-lam -> -lam -> 0 are smoothstep ramps whose
    widths make the ramp integrals cancel; they share 90% of the room
    1 - (1-eps)^(1/3), the rest is an equal gap at either end.
    """
    lam, eps = float(lam), float(eps)
    if not 0 < lam < 1:
        raise ValueError("lambda must lie in (0, 1)")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    key = (lam, eps)
    if key in _PROFILE_CACHE:
        return _PROFILE_CACHE[key]
    room = _root_gap(eps, 3)
    P = 1 - room
    L1, L2 = P * lam, P * (1 - lam)
    gap, ramps = 0.05 * room, 0.9 * room
    # (1-lam) w1 + (1-2lam) w2 - lam w3 = 0 makes the ramps integrate to zero
    if lam <= 0.5:
        v = ramps / (2 + (2 - 3 * lam) / lam)
        w1, w2, w3 = v, v, (2 - 3 * lam) * v / lam
    else:
        v = ramps / (2 + (3 * lam - 1) / (1 - lam))
        w1, w2, w3 = (3 * lam - 1) * v / (1 - lam), v, v
    if min(w1, w2, w3) < PROFILE_MIN_WIDTH:
        raise ProfileError(f"transition width {min(w1, w2, w3):.3e} below {PROFILE_MIN_WIDTH:.0e}: eps or lambda too small")
    hi, lo = 1 - lam, -lam
    bounds = np.cumsum([0.0, gap, w1, L1, w2, L2, w3])
    vals = [(0.0, 0.0), (0.0, hi), (hi, hi), (hi, lo), (lo, lo), (lo, 0.0)]
    pieces = [(float(bounds[k]), float(bounds[k + 1]), a, b) for k, (a, b) in enumerate(vals)]
    pieces.append((float(bounds[-1]), 1.0, 0.0, 0.0))
    I1 = (pieces[2][0], pieces[2][1])
    I2 = (pieces[4][0], pieces[4][1])
    # quintic Hermite table: exact on the plateaus, dense nodes in the ramps
    nodes = [np.array([0.0, 1.0])]
    for t0, t1, a, b in pieces:
        nodes.append(np.linspace(t0, t1, RAMP_NODES if a != b else 2))
    x = np.unique(np.concatenate(nodes))
    proto = WaveProfile(lam, eps, tuple(pieces), I1, I2, None, 0.0, 0, 0, 0, 0, 0, min(w1, w2, w3))
    Q1, Q2 = proto.primitives(x)
    c2 = float(Q2[-1])
    fv, dfv, qv = Q2 - x * c2, Q1 - c2, proto.q(x)
    qv[-1] = qv[0]
    poly = BPoly.from_derivatives(x, np.stack([fv, dfv, qv], axis=1))
    dense = np.unique(np.concatenate([x, np.linspace(0, 1, 20001)]))
    ramp_sup = [abs(b - a) / (t1 - t0) for t0, t1, a, b in pieces if a != b]
    prof = WaveProfile(
        lam, eps, tuple(pieces), I1, I2, poly, c2,
        sup_f=float(np.abs(poly(dense)).max()) * 1.001,
        sup_df=float(np.abs(poly(dense, 1)).max()) * 1.001,
        sup_q=max(lam, 1 - lam),
        sup_dq=max(ramp_sup) * S1MAX,
        sup_ddq=max(r / (t1 - t0) for r, (t0, t1, a, b) in zip(ramp_sup, [p for p in pieces if p[2] != p[3]])) * S2MAX,
        min_width=min(w1, w2, w3),
    )
    _PROFILE_CACHE[key] = prof
    return prof


# ---------------------------------------------------------------------------
# phases and plateau bumps


class Phase:
    """theta(y) = mbar (alpha . y) / |alpha| mod 1, exact on raster cell centres."""

    def __init__(self, alpha, mbar: int):
        self.alpha = np.asarray(alpha, dtype=float)
        self.mbar = int(mbar)
        self.norm = float(np.linalg.norm(self.alpha))
        self.delta = self.norm / self.mbar
        if not self.delta > MIN_DELTA:
            raise RecursionBudgetError(f"stripe scale {self.delta:.3e} below the representable minimum")
        self.grad = self.alpha * (self.mbar / self.norm)
        self.dps = len(str(self.mbar)) + 30
        self._cache: dict = {}

    def axis_values(self, box: SpaceTimeBox, R: int) -> list[np.ndarray]:
        """Per-axis fractional parts; theta at a cell is the sum over axes mod 1."""
        key = (tuple(box.lower), tuple(box.upper), R)
        if key not in self._cache:
            ctx = mpmath.MPContext()
            ctx.dps = self.dps
            a = [ctx.mpf(float(v)) for v in self.alpha]
            nrm = ctx.sqrt(ctx.fsum(v * v for v in a))
            out = []
            for k in range(len(a)):
                c = ctx.mpf(self.mbar) * a[k] / nrm
                lo = ctx.mpf(float(box.lower[k]))
                h = (ctx.mpf(float(box.upper[k])) - lo) / R
                out.append(np.array([float(ctx.frac(c * (lo + h * (i + ctx.mpf(0.5))))) for i in range(R)]))
            self._cache[key] = out
        return self._cache[key]


@dataclass(frozen=True, eq=False)
class Bump:
    """C-infinity bump supported in (lo, hi) of one coordinate, equal to 1 on a central plateau."""

    coord: object  # axis index or Phase
    lo: float
    hi: float
    frac: float

    @property
    def margin(self) -> float:
        return (1 - self.frac) * (self.hi - self.lo) / 2

    @property
    def gap(self) -> float:
        return 0.1 * self.margin

    @property
    def ramp(self) -> float:
        return 0.9 * self.margin

    @property
    def plateau(self) -> tuple[float, float]:
        return self.lo + self.margin, self.hi - self.margin

    @property
    def support(self) -> tuple[float, float]:
        return self.lo + self.gap, self.hi - self.gap

    def values(self, u):
        a, b = self.support
        r = self.ramp
        Sa, Sa1, Sa2 = smoothstep((u - a) / r)
        Sb, Sb1, Sb2 = smoothstep((b - u) / r)
        return Sa * Sb, (Sa1 * Sb - Sa * Sb1) / r, (Sa2 * Sb - 2 * Sa1 * Sb1 + Sa * Sb2) / r**2


def _coord_grad(coord, d: int) -> np.ndarray:
    if isinstance(coord, Phase):
        return coord.grad
    e = np.zeros(d)
    e[coord] = 1.0
    return e


def box_support(box: SpaceTimeBox) -> list:
    return [(k, float(box.lower[k]), float(box.upper[k])) for k in range(box.dim)]


def cutoff_bumps(support: list, eps: float) -> list[Bump]:
    """Bumps inside each interval of an open set, jointly keeping a (1-eps)^(1/3) share."""
    P = 1 - _root_gap(eps, 3 * len(support))
    return [Bump(c, lo, hi, P) for c, lo, hi in support]


class _Slice:
    """Cell centres of one time slice, with coordinate values cached per slice."""

    def __init__(self, box: SpaceTimeBox, R: int, kt: int):
        self.box, self.R, self.kt = box, R, kt
        self.d = box.dim
        self.n = self.d - 1
        self.axes = box.axes(R)
        self.shape = (R,) * self.n
        self.size = R**self.n
        self._cache: dict = {}

    def _bshape(self, k: int) -> tuple:
        s = [1] * self.n
        s[k] = self.R
        return tuple(s)

    def coord(self, c) -> np.ndarray:
        key = c if isinstance(c, int) else id(c)
        if key not in self._cache:
            if isinstance(c, Phase):
                vals = c.axis_values(self.box, self.R)
                tot = np.full(self.shape, vals[self.n][self.kt])
                for k in range(self.n):
                    tot = tot + vals[k].reshape(self._bshape(k))
                val = np.mod(tot, 1.0)
            elif c == self.n:
                val = np.full(self.shape, self.axes[self.n][self.kt])
            else:
                val = np.broadcast_to(self.axes[c].reshape(self._bshape(c)), self.shape)
            self._cache[key] = np.ascontiguousarray(val).ravel()
        return self._cache[key]


def support_mask(sl: _Slice, support: list | None) -> np.ndarray:
    if support is None:
        return np.zeros(sl.size, dtype=bool)
    m = np.ones(sl.size, dtype=bool)
    for c, lo, hi in support:
        u = sl.coord(c)
        m &= (u > lo) & (u < hi)
    return m


# ---------------------------------------------------------------------------
# a single localized plane wave


FIELD_NAMES = ("phi", "psi", "g", "Dphi", "dt_psi", "dt_phi", "dt_g")


@dataclass(eq=False)
class Wave:
    """One plane wave (phi, psi, g) built from h = delta^2 zeta f((a.x + s t)/delta)."""

    gamma: MatPair
    lam: float
    eps: float
    support: list
    p: np.ndarray | None = None
    a: np.ndarray | None = None
    B: np.ndarray | None = None
    profile: WaveProfile | None = None
    s: float = 0.0
    phase: Phase | None = None
    bumps: list = field(default_factory=list)
    bound_ok: bool = True

    @property
    def null(self) -> bool:
        return self.phase is None

    @property
    def delta(self) -> float:
        return 0.0 if self.null else self.phase.delta

    @property
    def support_prime(self) -> list | None:
        """Open set where (Dphi, dt psi) = (1 - lam) gamma."""
        if self.null:
            return self.support if self.lam == 1 else None
        return [(b.coord, *b.plateau) for b in self.bumps] + [(self.phase, *self.profile.I1)]

    @property
    def support_second(self) -> list | None:
        """Open set where (Dphi, dt psi) = -lam gamma."""
        if self.null:
            return self.support if self.lam == 0 else None
        return [(b.coord, *b.plateau) for b in self.bumps] + [(self.phase, *self.profile.I2)]

    def fd_scale(self) -> float:
        """Leibniz bound on third derivatives of the leading delta zeta f' terms of psi and phi."""
        if self.null:
            return 0.0
        d = len(self.phase.alpha)
        k = float(self.phase.norm / self.delta)
        lc = float(sum(np.linalg.norm(_coord_grad(b.coord, d)) / b.ramp for b in self.bumps))
        F = [self.profile.sup_df, self.profile.sup_q, self.profile.sup_dq, self.profile.sup_ddq]
        try:
            Dz = [1.0, S1MAX * lc, S2MAX * lc**2, S3MAX * lc**3]
        except OverflowError:
            return math.inf
        amp = np.linalg.norm(self.p) + np.linalg.norm(self.B) / self.s
        try:
            third = sum(math.comb(3, j) * Dz[j] * F[3 - j] * k ** (3 - j) for j in range(4))
            return float(self.delta * amp * third)
        except OverflowError:
            return math.inf

    def evaluate(self, sl: _Slice, out: dict) -> None:
        """Add this wave's fields on one time slice into ``out`` (flat per-cell arrays)."""
        if self.null:
            return
        idx = np.arange(sl.size)
        for b in self.bumps:
            lo, hi = b.support
            u = sl.coord(b.coord)[idx]
            idx = idx[(u > lo) & (u < hi)]
        if idx.size == 0:
            return
        n, d = sl.n, sl.d
        zeta = np.ones(idx.size)
        parts = []
        for b in self.bumps:
            parts.append(b.values(sl.coord(b.coord)[idx]))
            zeta = zeta * parts[-1][0]
        keep = zeta > TINY
        if not np.all(keep):
            idx, zeta = idx[keep], zeta[keep]
            parts = [tuple(v[keep] for v in pr) for pr in parts]
        if idx.size == 0:
            return
        delta, s = self.delta, self.s
        p, a, B = self.p, self.a, self.B
        at = np.concatenate([a, [0.0]])
        # scaled cutoff derivatives: delta grad zeta and delta^2 Hess zeta applied to (a, 0) and e_t
        v = np.zeros((idx.size, d))
        HA = np.zeros((idx.size, d))
        HT = np.zeros((idx.size, d))
        for b, (c, c1, c2) in zip(self.bumps, parts):
            w = delta * _coord_grad(b.coord, d)
            L = c1 / c
            K = c2 / c - L**2
            v += L[:, None] * w
            HA += (K * (w @ at))[:, None] * w
            HT += (K * w[n])[:, None] * w
        HA = zeta[:, None] * ((v @ at)[:, None] * v + HA)
        HT = zeta[:, None] * (v[:, n][:, None] * v + HT)
        v = zeta[:, None] * v
        Dz, zt = v[:, :n], v[:, n]
        HAx, HAt, HTx = HA[:, :n], HA[:, n], HT[:, :n]
        theta = sl.coord(self.phase)[idx]
        f, f1, q = self.profile.f(theta), self.profile.df(theta), self.profile.q(theta)
        As = Dz @ a
        BDz = Dz @ B.T
        BHT = HTx @ B.T
        pa = np.outer(p, a)
        c_phi = delta * (As * f + zeta * f1)
        vals = {
            "phi": c_phi[:, None] * p,
            "psi": (delta / s) * ((As * f + zeta * f1)[:, None, None] * B - f[:, None, None] * BDz[:, :, None] * a),
            "g": (delta**2 * zeta * f)[:, None, None] * pa,
            "Dphi": f[:, None, None] * p[:, None] * HAx[:, None, :]
            + (As * f1 + zeta * q)[:, None, None] * pa
            + f1[:, None, None] * p[:, None] * Dz[:, None, :],
            "dt_phi": (HAt * f + As * f1 * s + zt * f1 + zeta * q * s)[:, None] * p,
            "dt_g": (delta * (zt * f + zeta * f1 * s))[:, None, None] * pa,
            "dt_psi": (HAt * f / s + As * f1 + zt * f1 / s + zeta * q)[:, None, None] * B
            - (f / s)[:, None, None] * BHT[:, :, None] * a
            - f1[:, None, None] * BDz[:, :, None] * a,
        }
        for k, val in vals.items():
            out[k][idx] += val


def _wave_bounds(x: float, sigma: float, p, B, s, prof: WaveProfile, hats) -> tuple[float, float]:
    """(membership excess, sup-norm excess) of the O(delta) terms at delta = x / sigma."""
    Z1, Zt, Z2, Z2t = hats
    F0, F1 = prof.sup_f, prof.sup_df
    np_, nB = float(np.linalg.norm(p)), float(np.linalg.norm(B))
    e = x / sigma
    mem = x**2 * F0 * np_ * Z2 + 2 * x * F1 * np_ * Z1
    mem += (2 / s) * x**2 * Z2t * F0 * nB + 2 * x * Z1 * F1 * nB + x * Zt * F1 * nB / s
    sup = e * x * Z1 * F0 * np_ + e * F1 * np_
    sup += x**2 * Z2t * F0 * np_ + x * Z1 * F1 * s * np_ + x * Zt * F1 * np_
    sup += e * x * Zt * F0 * np_ + e * F1 * s * np_
    return mem, sup


def _admissible_x(sigma, p, B, s, prof, hats, eps) -> float:
    """Largest x = delta * sigma (within a factor 2^(1/64)) meeting both O(delta) budgets."""
    mem_t = 0.9 * eps
    sup_t = 0.9 * (eps - s * prof.sup_q * float(np.linalg.norm(p)))

    def ok(x):
        m, su = _wave_bounds(x, sigma, p, B, s, prof, hats)
        return m < mem_t and su < sup_t

    lo, hi = -200.0, 10.0
    if not ok(2.0**lo):
        raise PlaneWaveError("no admissible delta: the O(delta) terms exceed eps at every scale tried")
    if ok(2.0**hi):
        return 2.0**hi
    while hi - lo > 1 / 64:
        mid = (lo + hi) / 2
        lo, hi = (mid, hi) if ok(2.0**mid) else (lo, mid)
    return 2.0**lo


def build_wave(gamma: MatPair, lam: float, eps: float, support: list, mbar: int | None = None, tol: float = 1e-9) -> Wave:
    """Plane wave for the cone direction gamma on the open set described by ``support``."""
    lam = float(lam)
    if not 0 <= lam <= 1:
        raise ValueError("lambda must lie in [0, 1]")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    gamma = gamma.to_float()
    if lam in (0.0, 1.0):
        return Wave(gamma, lam, eps, support)
    ok, fac = cone_member(gamma, tol=tol)
    if not ok:
        raise ConeConditionError("gamma is not in the wave cone")
    p, a, B = (np.asarray(v, dtype=float) for v in fac)
    na = np.linalg.norm(a)
    p, a = p * na, a / na
    prof = make_profile(lam, eps)
    np_ = float(np.linalg.norm(p))
    s = min(0.99, 0.99 * eps / (2 * prof.sup_q * np_)) if np_ > 0 else 0.99
    bumps = cutoff_bumps(support, eps)
    d = len(a) + 1
    grads = [_coord_grad(b.coord, d) for b in bumps]
    sigma = max([1.0] + [float(np.linalg.norm(g)) for g in grads])
    C1 = [S1MAX / b.ramp for b in bumps]
    C2 = [S2MAX / b.ramp**2 for b in bumps]
    gx = [float(np.linalg.norm(g[:-1])) / sigma for g in grads]
    gt = [abs(float(g[-1])) / sigma for g in grads]
    sx = sum(c * g for c, g in zip(C1, gx))
    st = sum(c * g for c, g in zip(C1, gt))
    Z2 = sum(c * g * g for c, g in zip(C2, gx)) + sx * sx - sum((c * g) ** 2 for c, g in zip(C1, gx))
    Z2t = sum(c * g * h for c, g, h in zip(C2, gx, gt)) + sx * st - sum(c * c * g * h for c, g, h in zip(C1, gx, gt))
    hats = (sx, st, Z2, Z2t)
    alpha = np.concatenate([a, [s]])
    x = _admissible_x(sigma, p, B, s, prof, hats, eps)
    bound_ok = True
    if mbar is None:
        k = max(0, math.ceil(math.log2(float(np.linalg.norm(alpha))) - math.log2(x) + math.log2(sigma)))
        mbar = 2**k
    else:
        bound_ok = float(np.linalg.norm(alpha)) / mbar <= x / sigma
    return Wave(gamma, lam, eps, support, p, a, B, prof, s, Phase(alpha, mbar), bumps, bound_ok)


# ---------------------------------------------------------------------------
# fields, tags and verification


@dataclass(eq=False)
class Tag:
    """A named open set (union of supports) with its declared value and measure lower bound."""

    name: str
    supports: list
    value: MatPair | None = None
    bound: float | None = None


@dataclass(eq=False)
class PerturbationField:
    """Sum of plane waves on a box, with tagged regions and the declared targets."""

    box: SpaceTimeBox
    resolution: int
    m: int
    n: int
    waves: list
    tags: list
    offset: MatPair
    segments: list
    tol: float
    sup_bound: float
    total_bound: float | None = None
    params: dict = field(default_factory=dict)
    patches: list = field(default_factory=list)
    _regions: dict | None = None

    @property
    def dim(self) -> int:
        return self.n + 1

    def with_resolution(self, resolution: int) -> "PerturbationField":
        return replace(self, resolution=int(resolution), _regions=None)

    def corrupt(self, name: str, cell, component, amount: float) -> "PerturbationField":
        """Copy with one sampled value shifted (fault injection)."""
        return replace(self, patches=self.patches + [(name, tuple(cell), tuple(component), float(amount))])

    def _shapes(self) -> dict:
        m, n = self.m, self.n
        return {"phi": (m,), "psi": (m, n), "g": (m, n), "Dphi": (m, n), "dt_psi": (m, n), "dt_phi": (m,), "dt_g": (m, n)}

    def slice_values(self, kt: int, sl: _Slice | None = None) -> dict:
        """All sampled fields on time slice kt, each shaped (R,)*n + components."""
        sl = sl or _Slice(self.box, self.resolution, kt)
        shapes = self._shapes()
        out = {k: np.zeros((sl.size,) + s) for k, s in shapes.items()}
        for w in self.waves:
            w.evaluate(sl, out)
        out = {k: v.reshape(sl.shape + shapes[k]) for k, v in out.items()}
        for name, cell, comp, amount in self.patches:
            if cell[-1] == kt:
                out[name][tuple(cell[:-1]) + comp] += amount
        return out

    def region_slice(self, kt: int, sl: _Slice | None = None) -> dict:
        sl = sl or _Slice(self.box, self.resolution, kt)
        out = {}
        for t in self.tags:
            m = np.zeros(sl.size, dtype=bool)
            for sup in t.supports:
                m |= support_mask(sl, sup)
            out[t.name] = m.reshape(sl.shape)
        return out

    @property
    def regions(self) -> dict:
        if self._regions is None:
            R = self.resolution
            masks = {t.name: np.zeros((R,) * self.dim, dtype=bool) for t in self.tags}
            for kt in range(R):
                for k, v in self.region_slice(kt).items():
                    masks[k][..., kt] = v
            self._regions = {k: Region(self.box, v) for k, v in masks.items()}
        return self._regions

    def samples(self) -> dict:
        """Full arrays (R,)*(n+1) + components; meant for small resolutions."""
        R = self.resolution
        shapes = self._shapes()
        full = {k: np.zeros((R,) * self.dim + s) for k, s in shapes.items()}
        for kt in range(R):
            for k, v in self.slice_values(kt).items():
                full[k][(slice(None),) * self.n + (kt,)] = v
        return full

    def fd_scale(self) -> float:
        return float(sum(w.fd_scale() for w in self.waves))

    def max_delta(self) -> float:
        return max([w.delta for w in self.waves], default=0.0)


def _central_div(F: np.ndarray, h: np.ndarray, n: int) -> np.ndarray:
    """Row-wise divergence sum_j d_j F[..., i, j] on interior cells by central differences."""
    inner = (slice(1, -1),) * n
    out = 0.0
    for j in range(n):
        fwd = list(inner)
        bwd = list(inner)
        fwd[j] = slice(2, None)
        bwd[j] = slice(None, -2)
        out = out + (F[tuple(fwd) + (Ellipsis, j)] - F[tuple(bwd) + (Ellipsis, j)]) / (2 * h[j])
    return out


@dataclass
class VerificationReport:
    clauses: list

    @property
    def passed(self) -> bool:
        return all(c["status"] == "PASS" for c in self.clauses)

    def clause(self, cid: str) -> dict:
        for c in self.clauses:
            if c["id"] == cid:
                return c
        raise KeyError(cid)

    def failed(self) -> list[str]:
        return [c["id"] for c in self.clauses if c["status"] != "PASS"]

    def to_json(self) -> str:
        return json.dumps({"passed": self.passed, "clauses": self.clauses}, sort_keys=True, default=float)


def _clause(cid: str, ok: bool, value, bound, **detail) -> dict:
    return {"id": cid, "status": "PASS" if ok else "FAIL", "value": value, "bound": bound, **detail}


def fd_residuals(field: PerturbationField) -> dict:
    """Max central-difference residuals of div psi and div g - phi with their locations."""
    R, n = field.resolution, field.n
    h = field.box.spacing(R)[:n]
    best = {"div_psi": (0.0, None), "div_g": (0.0, None)}
    for kt in range(R):
        vals = field.slice_values(kt)
        inner = (slice(1, -1),) * n
        res = {
            "div_psi": np.linalg.norm(_central_div(vals["psi"], h, n).reshape((R - 2,) * n + (-1,)), axis=-1),
            "div_g": np.linalg.norm((_central_div(vals["g"], h, n) - vals["phi"][inner]).reshape((R - 2,) * n + (-1,)), axis=-1),
        }
        for k, r in res.items():
            mx = float(r.max()) if r.size else 0.0
            if mx > best[k][0]:
                loc = tuple(int(i) + 1 for i in np.unravel_index(int(np.argmax(r)), r.shape)) + (kt,)
                best[k] = (mx, loc)
    return best


def verify_field(field: PerturbationField, value_tol: float = 1e-10) -> VerificationReport:
    """Check divergence identities, membership, sup norms, tagged values and raster measures."""
    R, n = field.resolution, field.n
    h = float(field.box.spacing(R)[:n].max())
    fd_bound = 10 * h**2 * field.fd_scale()
    res = fd_residuals(field)
    clauses = [
        _clause("div_psi", res["div_psi"][0] <= fd_bound, res["div_psi"][0], fd_bound, location=res["div_psi"][1]),
        _clause("div_g", res["div_g"][0] <= fd_bound, res["div_g"][0], fd_bound, location=res["div_g"][1]),
    ]
    regions = field.regions
    seg = [(a.flat().astype(float), b.flat().astype(float)) for a, b in field.segments]
    off = field.offset.flat().astype(float)
    mem = 0.0
    sups = np.zeros(3)
    dev = {t.name: 0.0 for t in field.tags if t.value is not None}
    for kt in range(R):
        vals = field.slice_values(kt)
        X = off + np.concatenate([vals["Dphi"].reshape(-1, field.m * n), vals["dt_psi"].reshape(-1, field.m * n)], axis=1)
        if seg:
            dist = np.min([segment_dist_batch(X, a, b) for a, b in seg], axis=0)
            mem = max(mem, float(dist.max()))
        for k, name in enumerate(("phi", "dt_phi", "dt_g")):
            v = vals[name].reshape(R**n, -1)
            sups[k] = max(sups[k], float(np.linalg.norm(v, axis=1).max()))
        for t in field.tags:
            if t.value is None:
                continue
            mask = regions[t.name].mask[..., kt].ravel()
            if np.any(mask):
                diff = X[mask] - t.value.flat().astype(float)
                dev[t.name] = max(dev[t.name], float(np.linalg.norm(diff, axis=1).max()))
    clauses.append(_clause("membership", mem <= field.tol, mem, field.tol))
    total_sup = float(sups.sum())
    clauses.append(_clause("sup_norm", total_sup < field.sup_bound, total_sup, field.sup_bound,
                           phi=float(sups[0]), dt_phi=float(sups[1]), dt_g=float(sups[2])))
    for t in field.tags:
        if t.value is not None:
            b = value_tol * max(1.0, t.value.norm())
            clauses.append(_clause(f"value:{t.name}", dev[t.name] <= b, dev[t.name], b))
    tot_val = tot_unc = 0.0
    for t in field.tags:
        meas = region_measure(regions[t.name])
        if t.bound is not None:
            clauses.append(_clause(f"measure:{t.name}", meas.value >= t.bound - meas.uncertainty, meas.value, t.bound,
                                   slack=meas.uncertainty))
    counted = [t for t in field.tags if t.bound is not None and not t.name.startswith("G'") and not t.name.startswith("G''")]
    if field.total_bound is not None:
        union = np.zeros((R,) * field.dim, dtype=bool)
        for t in counted:
            union |= regions[t.name].mask
        meas = region_measure(Region(field.box, union))
        tot_val, tot_unc = meas.value, meas.uncertainty
        clauses.append(_clause("measure:total", tot_val >= field.total_bound - tot_unc, tot_val, field.total_bound, slack=tot_unc))
    overlap = 0
    names = [t.name for t in counted] if counted else [t.name for t in field.tags]
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            overlap += int(np.count_nonzero(regions[a].mask & regions[b].mask))
    clauses.append(_clause("disjoint", overlap == 0, overlap, 0))
    return VerificationReport(clauses)


def refinement_ratio(field: PerturbationField, coarse: int, fine: int) -> dict:
    """FD residuals at two resolutions and their ratio (about 4 for second order)."""
    out = {}
    for R in (coarse, fine):
        r = fd_residuals(field.with_resolution(R))
        out[R] = {k: v[0] for k, v in r.items()}
    ratio = {k: (out[coarse][k] / out[fine][k] if out[fine][k] > 0 else math.inf) for k in out[coarse]}
    return {"coarse": out[coarse], "fine": out[fine], "ratio": ratio}


def dump_csv(field: PerturbationField, path, stride: int = 1) -> int:
    """Write (x, t, phi, psi, g, region) rows for every ``stride``-th cell; returns the row count."""
    R, n, m = field.resolution, field.n, field.m
    axes = field.box.axes(R)
    regions = field.regions
    header = [f"x{k + 1}" for k in range(n)] + ["t"]
    header += [f"phi{i + 1}" for i in range(m)]
    header += [f"psi{i + 1}{j + 1}" for i in range(m) for j in range(n)]
    header += [f"g{i + 1}{j + 1}" for i in range(m) for j in range(n)]
    header.append("region")
    rows = 0
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for kt in range(0, R, stride):
            vals = field.slice_values(kt)
            for cell in np.ndindex(*((R,) * n)):
                if any(c % stride for c in cell):
                    continue
                tag = next((name for name, r in regions.items() if r.mask[cell + (kt,)]), "")
                row = [float(axes[k][cell[k]]) for k in range(n)] + [float(axes[n][kt])]
                row += list(vals["phi"][cell].ravel()) + list(vals["psi"][cell].ravel()) + list(vals["g"][cell].ravel())
                wr.writerow(row + [tag])
                rows += 1
    return rows


# ---------------------------------------------------------------------------
# one plane wave on a box


def plane_wave(
    gamma,
    lam: float,
    G: SpaceTimeBox,
    eps: float,
    resolution: int,
    mbar: int | None = None,
    max_doublings: int = 6,
) -> PerturbationField:
    """Localized plane wave on G oscillating along [-lam gamma, (1 - lam) gamma].

    delta = |alpha| / mbar with mbar a power of two chosen from the O(delta)
    bounds, then doubled while the raster measures of G' and G'' miss their
    lower bounds.
    """
    gamma = gamma.value if hasattr(gamma, "value") and not isinstance(gamma, MatPair) else gamma
    gamma = gamma.to_float()
    m, nn = gamma.dims
    if G.dim != nn + 1:
        raise ValueError("box dimension must be n + 1")
    sup = box_support(G)
    measure = G.measure()
    tries = 0
    while True:
        w = build_wave(gamma, lam, eps, sup, mbar=mbar)
        tags = [
            Tag("G'", [w.support_prime] if w.support_prime else [], gamma * (1 - lam), (1 - eps) * lam * measure),
            Tag("G''", [w.support_second] if w.support_second else [], gamma * (-lam), (1 - eps) * (1 - lam) * measure),
        ]
        fld = PerturbationField(
            G, int(resolution), m, nn, [w], tags, MatPair.zero(m, nn, exact=False),
            [(gamma * (-lam), gamma * (1 - lam))], eps, eps,
            params={"lambda": lam, "eps": eps, "s": w.s, "mbar": w.phase.mbar if w.phase else 0,
                    "delta": w.delta, "bound_ok": w.bound_ok},
        )
        if w.null:
            return fld
        regions = fld.regions
        short = []
        for t in tags:
            meas = region_measure(regions[t.name])
            if meas.value < t.bound - meas.uncertainty:
                short.append((t.name, meas.value, t.bound))
        if not short:
            return fld
        if tries >= max_doublings:
            name, val, bnd = short[0]
            raise PlaneWaveError(f"raster measure of {name} is {val:.6g} below the bound {bnd:.6g} after {tries} doublings")
        mbar = 2 * w.phase.mbar
        tries += 1


# ---------------------------------------------------------------------------
# T_N spreading


def float_config(cfg: TNConfig, tol: float = 1e-9) -> TNConfig:
    return build_tn(cfg.rho.to_float(), [g.to_float() for g in cfg.gammas], [float(k) for k in cfg.kappas], tol=tol)


def spread_parameters(cfg: TNConfig, delta: float, max_depth: int = 64) -> tuple[int, float, float]:
    """(ell, eps, tau): 1 - tau^ell >= (1-delta)^(1/2) with ell >= 2, then the largest eps with
    (1 + N ell) eps < delta and (1 - eps)^(1 + ell N) >= (1 - delta)^(1/2)."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    tau = float(np.prod([1 - float(c) for c in cfg.chis]))
    target = math.sqrt(1 - delta)
    ell = 2
    while 1 - tau**ell < target:
        ell += 1
        if ell > max_depth:
            raise RecursionBudgetError(f"depth {ell} exceeds the budget {max_depth}")
    N = cfg.N
    levels = 1 + ell * N
    eps = min(delta / levels * (1 - 1e-9), _root_gap(delta, 2 * levels))
    return ell, eps, tau


def spread_waves(cfg: TNConfig, i: int, lam: float, support: list, delta: float) -> tuple[list, dict, dict]:
    """Nested waves of the T_N block on an open set; returns (waves, index -> supports, info)."""
    N = cfg.N
    if not 1 <= i <= N:
        raise IndexError("vertex index out of range")
    if not 0 <= lam <= 1:
        raise ValueError("lambda must lie in [0, 1]")
    cfg = float_config(cfg)
    tags = {j: [] for j in range(1, N + 1)}
    if lam == 1:
        tags[i].append(support)
        return [], tags, {"ell": 0, "eps": 0.0, "tau": None, "levels": 0}
    sh = cyclic_shift(cfg, i)

    def orig(jp: int) -> int:
        return (jp - 1 + i - 1) % N + 1

    ell, eps, tau = spread_parameters(sh, delta)
    xi, pi, chi = sh.xis, sh.pis, sh.chis
    waves = [build_wave(xi[0] - pi[0], lam, eps, support)]
    if waves[0].support_prime:
        tags[orig(1)].append(waves[0].support_prime)
    cur = waves[0].support_second
    for _ in range(ell):
        for j in range(1, N + 1):
            t = N - j + 1
            w = build_wave(xi[t - 1] - pi[t - 1], float(chi[t - 1]), eps, cur)
            waves.append(w)
            tags[orig(t)].append(w.support_prime)
            cur = w.support_second
    return waves, tags, {"ell": ell, "eps": eps, "tau": tau, "levels": len(waves)}


def tn_spread(cfg: TNConfig, i: int, lam: float, G: SpaceTimeBox, delta: float, resolution: int) -> PerturbationField:
    """T_N block at eta = lam xi_i + (1 - lam) pi_i on the box G."""
    fcfg = float_config(cfg)
    m, n = fcfg.rho.dims
    waves, tags, info = spread_waves(fcfg, i, lam, box_support(G), delta)
    nu = [float(v) for v in barycentric(fcfg, i, lam)]
    meas = G.measure()
    tag_list = [Tag(f"G{j}", tags[j], fcfg.xis[j - 1], (1 - delta) * nu[j - 1] * meas) for j in range(1, fcfg.N + 1)]
    eta = fcfg.xis[i - 1] * lam + fcfg.pis[i - 1] * (1 - lam)
    info.update({"delta": delta, "nu": nu, "i": i, "lambda": lam, "min_scale": min([w.delta for w in waves if not w.null], default=0.0)})
    return PerturbationField(G, int(resolution), m, n, waves, tag_list, eta, fcfg.segments(), delta, delta,
                             total_bound=(1 - delta) * meas, params=info)


# ---------------------------------------------------------------------------
# configurations from the parametrized family


def tn_config(Z) -> TNConfig:
    """Exact T_5 configuration (zeta_j(Z), omega_j(Z'), h_j(Z'), kappa) at rho = 0."""
    from .param_family import family_n5

    fam = family_n5(Z.Z, Z.n)
    return build_tn(fam["omega"][0], fam["h"], list(Z.kappa))


def embedded_config(emb, rho) -> TNConfig:
    """Float T_5 configuration (xi_j(rho), pi_j(rho)) through the implicit embedding."""
    sol = emb.newton(1, rho)
    h, om, _ = emb.family(sol.z)
    base = emb.array(rho) + emb.omega0[0] - om[0]
    n = emb.n

    def pair(v):
        return MatPair.from_flat(np.array([float(x) for x in v]), 2, n)

    kap = [float(v) for v in sol.z[10 * n - 5:]]
    return build_tn(pair(base), [pair(h[j]) for j in range(5)], kap, tol=1e-9)


# ---------------------------------------------------------------------------
# refinement step


def step_refine(
    Y: MatPair,
    q: float,
    i: int,
    lam_p: float,
    cfg_rho: TNConfig,
    cfg_rhop: TNConfig,
    mu: float,
    G: SpaceTimeBox,
    tau: float,
    resolution: int,
    tol: float = 1e-9,
) -> PerturbationField:
    """Refinement block moving Y = q zeta_i(lam', rho) + (1 - q) pi_i(rho') onto the mu-sheets.

    ``cfg_rho`` and ``cfg_rhop`` are the configurations at rho and rho'
    (from ``embedded_config`` or ``tn_config``).
    """
    if not 0 <= q <= 1:
        raise ValueError("q must lie in [0, 1]")
    if not 0 < lam_p <= mu < 1:
        raise ValueError("need 0 < lambda' <= mu < 1")
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    A, Ap = float_config(cfg_rho), float_config(cfg_rhop)
    N = A.N
    m, n = A.rho.dims
    zeta = A.xis[i - 1] * lam_p + A.pis[i - 1] * (1 - lam_p)
    pip = Ap.pis[i - 1]
    expect = zeta * q + pip * (1 - q)
    if not Y.to_float().equals(expect, tol=tol * max(1.0, expect.norm())):
        raise ValueError("Y does not match q zeta_i(lambda', rho) + (1 - q) pi_i(rho')")
    gamma = zeta - pip
    if gamma.norm() > 0 and not cone_member(gamma, tol=tol)[0]:
        raise ConeConditionError("zeta_i(lambda', rho) - pi_i(rho') is not in the wave cone")
    delta = 0.9 * min(tau / 2, 1 - math.sqrt(1 - tau))
    sup = box_support(G)
    outer = build_wave(gamma, q, delta, sup) if gamma.norm() > 0 else Wave(gamma, 1.0 if q > 0 else 0.0, delta, sup)
    X = shrink(A, [mu] * N)
    Xp = shrink(Ap, [mu] * N)
    waves = [outer]
    tags2 = {j: [] for j in range(1, N + 1)}
    tags3 = {j: [] for j in range(1, N + 1)}
    info = {"delta": delta, "tau": tau, "q": q, "mu": mu, "lambda_prime": lam_p}
    if outer.support_second:
        w2, tags2, info["step2"] = spread_waves(Xp, i, 0.0, outer.support_second, delta)
        waves += w2
    if outer.support_prime:
        w3, tags3, info["step3"] = spread_waves(X, i, min(1.0, lam_p / mu), outer.support_prime, delta)
        waves += w3
    nu = nu_coefficients([float(c) for c in X.chis])[i - 1]
    nup = nu_coefficients([float(c) for c in Xp.chis])[i - 1]
    r = lam_p / mu
    meas = G.measure()
    tags = []
    for j in range(1, N + 1):
        tags.append(Tag(f"G'{j}", tags3[j], X.xis[j - 1]))
        tags.append(Tag(f"G''{j}", tags2[j], Xp.xis[j - 1]))
    for j in range(1, N + 1):
        own = r if j == i else 0.0
        w = (1 - q) * float(nup[j - 1]) + q * (own + (1 - r) * float(nu[j - 1]))
        tags.append(Tag(f"G{j}", tags3[j] + tags2[j], None, (1 - tau) * w * meas))
    segs = [(zeta, pip)] + X.segments() + Xp.segments()
    info["levels"] = len(waves)
    return PerturbationField(G, int(resolution), m, n, waves, tags, Y.to_float(), segs, delta, tau,
                             total_bound=(1 - tau) * meas, params=info)
