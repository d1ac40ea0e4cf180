"""Numerical implicit embedding of the five-direction family into the graph of DF.

Pairs rho = (rho^1, rho^2) are flat vectors of length 4n (first the 2n
entries of rho^1, then those of rho^2). Vertex indices i, j are 1-based.

Two arithmetic backends are available. The float backend evaluates DF with
the full evaluator of ConvexEnergy. The multiprecision backend (``dps``
given) works in mpmath and evaluates DF through its exact affine branch
DF(A) = zeta_j^2 + H_j (A - zeta_j^1) on the balls about the vertices where
F is quadratic; leaving those balls is reported as a solver failure. The
implicit-function ball of the construction is far smaller than double
precision can resolve, which is what the second backend is for.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import mpmath
import numpy as np

from .convex_builder import ConvexEnergy
from .foundation import jacobian_forward
from .nondegeneracy import _stack_family
from .param_family import ReducedParams

COND_LIMIT = 1e14


class EmbeddingError(RuntimeError):
    pass


class SingularJacobianError(EmbeddingError):
    pass


class DivergenceError(EmbeddingError):
    pass


class OutsideBranchError(DivergenceError):
    """An argument left the balls on which the exact affine branch of DF is valid."""


class MaxIterError(EmbeddingError):
    pass


class CertificateFailure(RuntimeError):
    pass


@dataclass
class EmbeddingSolution:
    i: int
    rho: np.ndarray
    Z: ReducedParams
    residual: float
    iterations: int
    history: list = field(default_factory=list)

    @property
    def z(self) -> np.ndarray:
        return self.Z.Z


def trust_radius(Z0: ReducedParams) -> float:
    """Half the smallest gap between distinct coordinates of Z0."""
    vals = sorted({float(v) for v in Z0.Z})
    gaps = [b - a for a, b in zip(vals, vals[1:])]
    return 0.5 * min(gaps) if gaps else 0.5


class Embedder:
    """Solves Phi_i(rho, Z) = 0 for Z near Z0 with sigma = DF."""

    def __init__(self, F: ConvexEnergy, Z0: ReducedParams, k0: float | None = None, dps: int | None = None):
        self.F = F
        self.Z0 = Z0
        self.n = Z0.n
        self.dps = dps
        self.k0 = trust_radius(Z0) if k0 is None else float(k0)
        if dps is None:
            self.ctx = None
            self.tol = 1e-11
        else:
            self.ctx = mpmath.MPContext()
            self.ctx.dps = int(dps)
            self.tol = 10.0 ** -(int(dps) - 10)
            self.branch_radius = F.branch_radius
            self._centers = F.centers
            self._branch = [
                (self.array(z1), self.array(z2), self.array(H))
                for z1, z2, H in zip(F.G.vd.zeta1, F.G.vd.zeta2, F.vertex_hessians())
            ]
        self.z0 = self.array(Z0.Z)
        self.omega0 = self.family(self.z0)[1]

    # scalars ---------------------------------------------------------------

    @property
    def exact_branch(self) -> bool:
        return self.ctx is not None

    def num(self, x):
        if self.ctx is None:
            return float(x)
        if isinstance(x, Fraction):
            return self.ctx.mpf(x.numerator) / x.denominator
        return self.ctx.mpf(x)

    def array(self, values) -> np.ndarray:
        arr = np.asarray(values, dtype=object)
        if self.ctx is None:
            return np.array([float(v) for v in arr.ravel()], dtype=float).reshape(arr.shape)
        out = np.empty(arr.shape, dtype=object)
        for idx in np.ndindex(arr.shape):
            out[idx] = self.num(arr[idx])
        return out

    def norm(self, v) -> float:
        v = np.ravel(v)
        if self.ctx is None:
            return float(np.linalg.norm(v))
        return float(self.ctx.sqrt(sum(x * x for x in v)))

    def solve_linear(self, J: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        if self.ctx is None:
            if not np.all(np.isfinite(J)):
                raise SingularJacobianError("non-finite Jacobian")
            c = np.linalg.cond(J)
            if c > COND_LIMIT:
                raise SingularJacobianError(f"Jacobian condition number {c:.2e} exceeds {COND_LIMIT:.0e}")
            return np.linalg.solve(J, rhs)
        try:
            x = self.ctx.lu_solve(self.ctx.matrix(J.tolist()), self.ctx.matrix(list(rhs)))
        except ZeroDivisionError as ex:
            raise SingularJacobianError("singular Jacobian") from ex
        return np.array([x[k] for k in range(len(rhs))], dtype=object)

    def det(self, M: np.ndarray):
        if self.ctx is None:
            return float(np.linalg.det(M))
        return self.ctx.det(self.ctx.matrix(M.tolist()))

    def eye(self, k: int) -> np.ndarray:
        return self.array(np.eye(k))

    # family values -------------------------------------------------------

    def family(self, z: np.ndarray):
        """(h, omega, zeta) as arrays of shape (5, 4n)."""
        v = self.array(_stack_family(z, self.n)).reshape(15, 4 * self.n)
        return v[0:5], v[5:10], v[10:15]

    def family_jacobian(self, z: np.ndarray):
        J = jacobian_forward(lambda w: _stack_family(w, self.n), z, exact=self.ctx is not None)
        J = self.array(J).reshape(15, 4 * self.n, len(z))
        return J[0:5], J[5:10], J[10:15]

    # sigma -------------------------------------------------------------------

    def _branch_index(self, a) -> int:
        af = np.array([float(v) for v in a])
        dist = np.linalg.norm(self._centers - af[None], axis=1)
        j = int(np.argmin(dist))
        if not dist[j] < self.branch_radius:
            raise OutsideBranchError(f"argument at distance {dist[j]:.3e} from the nearest vertex, branch radius {self.branch_radius:.3e}")
        return j

    def sigma_hess(self, A1: np.ndarray):
        """(DF, D^2F) at the rows of A1."""
        if self.ctx is None:
            _, g, h = self.F.evaluate(np.asarray(A1, dtype=float))
            return g, h
        k = 2 * self.n
        g = np.empty((len(A1), k), dtype=object)
        h = np.empty((len(A1), k, k), dtype=object)
        for r, a in enumerate(A1):
            z1, z2, H = self._branch[self._branch_index(a)]
            g[r] = z2 + H.dot(a - z1)
            h[r] = H
        return g, h

    def sigma(self, A1: np.ndarray) -> np.ndarray:
        return self.sigma_hess(np.atleast_2d(A1))[0]

    # residual and Jacobian -----------------------------------------------

    def arguments(self, i: int, rho: np.ndarray, z: np.ndarray) -> np.ndarray:
        """A_j = rho + omega_i(Z0') - omega_i(Z') + zeta_j(Z), shape (5, 4n)."""
        _, om, ze = self.family(z)
        return rho[None, :] + self.omega0[i - 1][None, :] - om[i - 1][None, :] + ze

    def _z(self, z) -> np.ndarray:
        return self.array(z.Z if isinstance(z, ReducedParams) else z)

    def phi_eval(self, i: int, rho, z) -> np.ndarray:
        """Stacked Psi(A_j) = sigma(A_j^1) - A_j^2, shape (5, 2n)."""
        A = self.arguments(i, self.array(rho), self._z(z))
        k = 2 * self.n
        return self.sigma(A[:, :k]) - A[:, k:]

    def phi_jacobian(self, i: int, rho, z) -> np.ndarray:
        k = 2 * self.n
        z = self._z(z)
        A = self.arguments(i, self.array(rho), z)
        H = self.sigma_hess(A[:, :k])[1]
        _, Dom, Dze = self.family_jacobian(z)
        rows = []
        for j in range(5):
            D = Dze[j] - Dom[i - 1]
            rows.append(H[j].dot(D[:k]) - D[k:])
        return np.vstack(rows)

    # Newton ----------------------------------------------------------------

    def newton(self, i: int, rho, z_init=None, tol: float | None = None, max_iter: int = 30) -> EmbeddingSolution:
        tol = self.tol if tol is None else tol
        rho = self.array(rho)
        z = self.z0.copy() if z_init is None else self._z(z_init)
        r = self.phi_eval(i, rho, z).ravel()
        res = self.norm(r)
        hist = [res]
        for it in range(max_iter + 1):
            if res <= tol:
                return EmbeddingSolution(i, rho, ReducedParams(self.n, z), res, it, hist)
            if it == max_iter:
                break
            step = self.solve_linear(self.phi_jacobian(i, rho, z), -r)
            t = 1.0
            while True:
                zn = z + step * t
                if self.norm(zn - self.z0) > self.k0:
                    raise DivergenceError(f"iterate left the trust ball of radius {self.k0} at iteration {it}")
                try:
                    rn = self.phi_eval(i, rho, zn).ravel()
                    resn = self.norm(rn)
                except OutsideBranchError:
                    if t < 1e-6:
                        raise
                    resn = np.inf
                if resn < res or t < 1e-6:
                    break
                t /= 2
            if not np.isfinite(resn):
                raise DivergenceError(f"no finite residual along the Newton step at iteration {it}")
            z, r, res = zn, rn, resn
            hist.append(res)
        raise MaxIterError(f"no convergence in {max_iter} iterations (residual {res:.3e})")

    def solve(self, i: int, rho, **kw) -> EmbeddingSolution:
        return self.newton(i, rho, **kw)

    # derived maps ----------------------------------------------------------

    def xi_pi(self, i: int, j: int, rho, sol: EmbeddingSolution | None = None):
        """(xi_ij(rho), pi_ij(rho)) as flat 4n vectors."""
        sol = sol or self.newton(i, rho)
        _, om, ze = self.family(sol.z)
        base = self.array(rho) + self.omega0[i - 1] - om[i - 1]
        return base + ze[j - 1], base + om[j - 1]

    def graph_error(self, xi) -> float:
        k = 2 * self.n
        xi = np.atleast_2d(xi)
        diff = self.sigma(xi[:, :k]) - xi[:, k:]
        return float(max(abs(v) for v in diff.ravel()))

    def z_consistency(self, i: int, j: int, rho, sol: EmbeddingSolution | None = None) -> dict:
        """Z_i(rho) against Z_j(pi_ij(rho) - omega_j(Z0')) and the inverse formula for pi_ij."""
        sol = sol or self.newton(i, rho)
        rho = self.array(rho)
        _, pij = self.xi_pi(i, j, rho, sol)
        y = pij - self.omega0[j - 1]
        solj = self.newton(j, y)
        _, pji = self.xi_pi(j, i, y, solj)
        back = pji - self.omega0[i - 1]
        dz = self.norm(sol.z - solj.z)
        moved = self.norm(sol.z - self.z0)
        drho = self.norm(back - rho)
        return {
            "z_error": dz,
            "z_relative": dz / moved if moved > 0 else 0.0,
            "inverse_error": drho,
            "inverse_relative": drho / self.norm(rho) if self.norm(rho) > 0 else 0.0,
        }

    def mu(self, i: int, y, sol: EmbeddingSolution | None = None) -> np.ndarray:
        """mu_i(y) = kappa_i h_i(Z_i'(y))."""
        sol = sol or self.newton(i, y)
        z = sol.z
        h, _, _ = self.family(z)
        return h[i - 1] * z[10 * self.n - 5 + i - 1]

    def s_set_check(self, i: int, rho, lam: float, sol: EmbeddingSolution | None = None) -> float:
        """|lam xi_i + (1 - lam) pi_i - (y + lam mu_i(y) + omega_i(Z0'))| with y = pi_i(rho) - omega_i(Z0').

        Here xi_i = xi_1i and pi_i = pi_1i, and ``sol`` solves the i = 1 system at rho.
        """
        sol = sol or self.newton(1, rho)
        lam = self.num(lam)
        xi, pi = self.xi_pi(1, i, rho, sol)
        y = pi - self.omega0[i - 1]
        soly = self.newton(i, y, z_init=sol.z)
        rhs = y + self.mu(i, y, soly) * lam + self.omega0[i - 1]
        return self.norm(xi * lam + pi * (1 - lam) - rhs)

    def mu_jacobian(self, i: int, y, step: float = 1e-5) -> np.ndarray:
        y = self.array(y)
        step = self.num(step)
        base = self.newton(i, y)
        cols = []
        for k in range(len(y)):
            e = self.array(np.zeros(len(y)))
            e[k] = step
            zp = self.newton(i, y + e, z_init=base.z)
            zm = self.newton(i, y - e, z_init=base.z)
            cols.append((self.mu(i, y + e, zp) - self.mu(i, y - e, zm)) / (2 * step))
        return np.column_stack(cols)

    def M_matrix(self, i: int, y, step: float = 1e-5, Dmu: np.ndarray | None = None) -> np.ndarray:
        """M_i(y) = D'mu^1 + D''mu^1 H_i(y) with H_i(y) = D sigma(y^1 + mu^1 + omega_i^1(Z0'))."""
        k = 2 * self.n
        y = self.array(y)
        Dmu = self.mu_jacobian(i, y, step) if Dmu is None else Dmu
        m = self.mu(i, y)
        H = self.sigma_hess((y[:k] + m[:k] + self.omega0[i - 1][:k])[None])[1][0]
        return Dmu[:k, :k] + Dmu[:k, k:].dot(H)

    def openness_cert(self, i: int, y, lam: float, step: float = 1e-5) -> dict:
        """det(I + lam M_i(y)) with the full-space identity as a side check."""
        y = self.array(y)
        lam = self.num(lam)
        Dmu = self.mu_jacobian(i, y, step)
        M = self.M_matrix(i, y, step, Dmu)
        k = 2 * self.n
        small = self.det(self.eye(k) + M * lam)
        full = self.det(self.eye(2 * k) + Dmu * lam)
        return {"det": small, "full": full, "predicted_full": (lam - 1) ** k * small, "M": M}


# ---------------------------------------------------------------------------
# sampling helpers


def ball_samples(rng: np.random.Generator, count: int, dim: int, radius: float) -> np.ndarray:
    """Uniform samples in the closed ball, the origin first."""
    d = rng.normal(size=(count, dim))
    d /= np.linalg.norm(d, axis=1)[:, None]
    r = radius * rng.random(count) ** (1.0 / dim)
    out = d * r[:, None]
    out[0] = 0.0
    return out


def critical_lambdas(M: np.ndarray) -> list[float]:
    """lambda in (0, 1] with det(I + lambda M) = 0, i.e. -1/mu for real eigenvalues mu of M."""
    out = []
    for ev in np.linalg.eigvals(np.asarray(M, dtype=float)):
        if abs(ev.imag) < 1e-12 * max(1.0, abs(ev)) and ev.real < 0:
            lam = -1.0 / ev.real
            if 0 < lam <= 1:
                out.append(float(lam))
    return out


@dataclass
class ConditionOData:
    r0: float
    delta0: float
    delta1: float
    delta2: float
    tau0: float
    tau1: float
    tau2: float
    ell0: float
    kappa_min: list
    kappa_max: list
    samples: dict

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def find_tau0(emb: Embedder, tau0_guess: float = 1e-2, floor: float = 1e-6, rng: np.random.Generator | None = None, samples: int = 50, i: int = 1, max_iter: int = 12):
    """Halve tau0 until Newton succeeds on every sample of the closed ball."""
    rng = rng or np.random.default_rng(0)
    dim = 4 * emb.n
    tau0 = tau0_guess
    failures = []
    while tau0 >= floor:
        pts = ball_samples(rng, samples, dim, tau0)
        try:
            sols = []
            for p in pts[np.argsort(-np.linalg.norm(pts, axis=1))]:
                sols.append(emb.newton(i, p, max_iter=max_iter))
            return tau0, sols
        except EmbeddingError as ex:
            failures.append((tau0, type(ex).__name__))
            tau0 /= 2
    raise CertificateFailure(f"no admissible tau0 above {floor:g}; last failure {failures[-1] if failures else None}")


def o5_constants(
    emb: Embedder,
    tau0_guess: float = 1e-2,
    rng: np.random.Generator | None = None,
    rho_samples: int = 50,
    y_samples: int = 4,
    fd_rel: float = 1e-5,
    set_samples: int = 12,
    tau0_floor: float = 1e-6,
    tau0_result: tuple | None = None,
) -> ConditionOData:
    """Sampled Condition-O constants; ``tau0_result`` reuses an earlier (tau0, solutions) search."""
    rng = rng or np.random.default_rng(0)
    dim = 4 * emb.n
    tau0, sols = tau0_result or find_tau0(emb, tau0_guess, tau0_floor, rng, rho_samples)
    kap = np.array([[float(v) for v in s.Z.kappa] for s in sols])
    if np.any(kap <= 1):
        raise CertificateFailure("kappa_i(rho) <= 1 on the sample")

    # tau1: pi_ij(B_tau1) inside B_tau0(omega_j(Z0')); start from the sampled Lipschitz ratio
    probe = ball_samples(rng, 4, dim, tau0)[1:]
    ratio = 1.0
    for p in probe:
        for i in range(1, 6):
            sol = emb.newton(i, p)
            for j in range(1, 6):
                _, pij = emb.xi_pi(i, j, p, sol)
                ratio = max(ratio, emb.norm(pij - emb.omega0[j - 1]) / float(np.linalg.norm(p)))
    tau1 = tau0 / (2 * ratio)
    while True:
        ok = True
        for p in ball_samples(rng, 4, dim, tau1)[1:]:
            for i in range(1, 6):
                sol = emb.newton(i, p)
                for j in range(1, 6):
                    _, pij = emb.xi_pi(i, j, p, sol)
                    if emb.norm(pij - emb.omega0[j - 1]) >= tau0:
                        ok = False
        if ok:
            break
        tau1 /= 2
    tau2 = tau1 / 2

    # ell0 from the critical lambdas of det(I + lambda M_i(y))
    worst = 0.5
    count = 0
    for i in range(1, 6):
        for y in ball_samples(rng, y_samples, dim, tau2):
            M = emb.M_matrix(i, y, fd_rel * tau2)
            count += 1
            for lam in critical_lambdas(M):
                if lam >= 1 - 1e-9:
                    raise CertificateFailure(f"det(I + M_{i}(y)) vanishes")
                worst = max(worst, lam, 1 - lam)
    ell0 = worst + (1 - worst) / 4

    delta1 = float(min(1 - ell0, (1 / kap).min()))
    delta2 = float(max(ell0, (1 / kap).max()))

    # r0, delta0: sampled S-sets pairwise disjoint for lambda in {0} u [delta0, 1]
    r0 = tau2
    lam_grid = np.linspace(delta2, 1.0, 41)
    while True:
        rhos = ball_samples(rng, set_samples, dim, r0)
        xs, ps = [], []
        for p in rhos:
            sol = emb.newton(1, p)
            xp = [emb.xi_pi(1, j, p, sol) for j in range(1, 6)]
            xs.append([np.array(a, dtype=float) for a, _ in xp])
            ps.append([np.array(b, dtype=float) for _, b in xp])
        xs = np.array(xs)
        ps = np.array(ps)

        def disjoint(lam):
            pts = lam * xs + (1 - lam) * ps
            c = pts[0]
            R = np.linalg.norm(pts - c[None], axis=2).max(axis=0)
            return all(np.linalg.norm(c[a] - c[b]) > R[a] + R[b] for a in range(5) for b in range(a + 1, 5))

        bad = [lam for lam in lam_grid if not disjoint(lam)]
        if disjoint(0.0) and disjoint(1.0):
            lo = max([delta2] + bad)
            if lo < 1.0:
                break
        r0 /= 2
        if r0 < tau2 * 1e-6:
            raise CertificateFailure("no radius r0 with disjoint S-sets")
    delta0 = (lo + 1.0) / 2
    return ConditionOData(
        r0=float(r0),
        delta0=float(delta0),
        delta1=delta1,
        delta2=delta2,
        tau0=float(tau0),
        tau1=float(tau1),
        tau2=float(tau2),
        ell0=float(ell0),
        kappa_min=[float(v) for v in kap.min(axis=0)],
        kappa_max=[float(v) for v in kap.max(axis=0)],
        samples={"rho": rho_samples, "y": y_samples * 5, "M_evaluations": count, "sets": set_samples, "lambda_grid": len(lam_grid)},
    )


@dataclass
class ResidualLaw:
    lambdas: list
    sups: list
    slope: float
    bound_constant: float
    correlation: float

    def to_dict(self) -> dict:
        return asdict(self)


def graph_residual_law(emb: Embedder, o5: ConditionOData, lambdas, rng: np.random.Generator | None = None, samples: int = 20) -> ResidualLaw:
    """sup over sampled S^{r0}_i(lambda) of |sigma(xi^1) - xi^2| against 1 - lambda.

    The sheet points lie far from the vertices, so sigma is evaluated with the
    full float evaluator of F in both backends.
    """
    rng = rng or np.random.default_rng(1)
    dim = 4 * emb.n
    k = 2 * emb.n
    rhos = ball_samples(rng, samples, dim, o5.r0)
    pairs = []
    for p in rhos:
        sol = emb.newton(1, p)
        for i in range(1, 6):
            x, q = emb.xi_pi(1, i, p, sol)
            pairs.append((np.array(x, dtype=float), np.array(q, dtype=float)))
    sups = []
    for lam in lambdas:
        pts = np.array([lam * x + (1 - lam) * q for x, q in pairs])
        res = np.linalg.norm(emb.F.sigma(pts[:, :k]) - pts[:, k:], axis=1)
        sups.append(float(res.max()))
    x = 1 - np.asarray(lambdas, dtype=float)
    y = np.asarray(sups)
    slope = float(x @ y / (x @ x))
    corr = float(np.corrcoef(x, y)[0, 1]) if len(x) > 1 else 1.0
    C = float(np.max(y / np.where(x > 0, x, np.inf))) if np.any(x > 0) else 0.0
    return ResidualLaw([float(v) for v in lambdas], sups, slope, C, corr)


# ---------------------------------------------------------------------------
# bundled checks


def embedding_checks(
    emb: Embedder,
    ratios: dict,
    tau0: float,
    sols: list | None = None,
    rng: np.random.Generator | None = None,
    rho_samples: int = 50,
    pair_samples: int = 10,
    fd_rel: float = 1e-5,
) -> dict:
    """Newton residuals on |rho| <= tau0, the consistency identities on all (i, j) and det(I + M_i(0)).

    ``ratios`` maps i to the exact value N_i / J_i. The identities are tested on
    a ball small enough that pi_ij stays inside the tau0 ball.
    """
    rng = rng or np.random.default_rng(2)
    dim = 4 * emb.n
    if sols is None:
        sols = [emb.newton(1, p) for p in ball_samples(rng, rho_samples, dim, tau0)]
    residual = max(s.residual for s in sols)
    iterations = max(s.iterations for s in sols)

    # radius for the identities: pi_ij(rho) - omega_j(Z0') must stay in the tau0 ball
    probe = ball_samples(rng, 2, dim, tau0)[1]
    growth = 1.0
    for i in range(1, 6):
        sol = emb.newton(i, probe)
        for j in range(1, 6):
            _, pij = emb.xi_pi(i, j, probe, sol)
            growth = max(growth, emb.norm(pij - emb.omega0[j - 1]) / float(np.linalg.norm(probe)))
    radius = tau0 / (2 * growth)
    z_err = z_rel = inv_err = inv_rel = graph = 0.0
    pairs = 0
    for p in ball_samples(rng, pair_samples + 1, dim, radius)[1:]:
        for i in range(1, 6):
            sol = emb.newton(i, p)
            for j in range(1, 6):
                c = emb.z_consistency(i, j, p, sol)
                z_err = max(z_err, c["z_error"])
                z_rel = max(z_rel, c["z_relative"])
                inv_err = max(inv_err, c["inverse_error"])
                inv_rel = max(inv_rel, c["inverse_relative"])
                xi, _ = emb.xi_pi(i, j, p, sol)
                graph = max(graph, emb.graph_error(xi))
                pairs += 1

    zero = np.zeros(dim)
    det_rel = {}
    for i in range(1, 6):
        M = emb.M_matrix(i, zero, fd_rel * tau0)
        d = emb.det(emb.eye(2 * emb.n) + M)
        exact = emb.num(ratios[i])
        det_rel[i] = float(abs(d - exact) / abs(exact))
    return {
        "tau0": float(tau0),
        "rho_samples": len(sols),
        "max_residual": residual,
        "max_iterations": iterations,
        "identity_radius": float(radius),
        "pair_evaluations": pairs,
        "z_error": z_err,
        "z_relative": z_rel,
        "inverse_error": inv_err,
        "inverse_relative": inv_rel,
        "graph_error": graph,
        "det_relative": det_rel,
    }
