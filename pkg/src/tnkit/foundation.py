"""Shared numeric and geometric primitives.

Two arithmetic modes run through the whole package: exact rationals
(``fractions.Fraction`` stored in numpy object arrays) for algebraic
identities and certificates, and IEEE doubles for calculus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np

Scalar = Union[Fraction, float, int]


def frac(x) -> Fraction:
    """Convert ints, strings, Fractions and floats (exactly) to Fraction."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, (float, np.floating)):
        return Fraction(float(x))
    raise TypeError(f"cannot convert {type(x).__name__} to Fraction")


def exact_array(values) -> np.ndarray:
    """Object array of Fractions with the shape of ``values``."""
    arr = np.asarray(values, dtype=object)
    out = np.empty(arr.shape, dtype=object)
    for idx in np.ndindex(arr.shape):
        out[idx] = frac(arr[idx])
    return out


def float_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=object)
    out = np.empty(arr.shape, dtype=float)
    for idx in np.ndindex(arr.shape):
        out[idx] = float(arr[idx])
    return out


def is_exact(arr: np.ndarray) -> bool:
    return np.asarray(arr).dtype == object


def zeros(shape, exact: bool = True) -> np.ndarray:
    if exact:
        out = np.empty(shape, dtype=object)
        out.fill(Fraction(0))
        return out
    return np.zeros(shape)


def eye(k: int, exact: bool = True) -> np.ndarray:
    out = zeros((k, k), exact)
    for i in range(k):
        out[i, i] = Fraction(1) if exact else 1.0
    return out


def outer(p, a) -> np.ndarray:
    p = np.asarray(p)
    a = np.asarray(a)
    return np.array([[pi * aj for aj in a] for pi in p], dtype=p.dtype if p.dtype == a.dtype else object)


# ---------------------------------------------------------------------------
# matrix pairs


@dataclass(frozen=True, eq=False)
class MatPair:
    """A point (first, second) of R^{m x n} x R^{m x n}."""

    first: np.ndarray
    second: np.ndarray

    def __post_init__(self):
        if np.shape(self.first) != np.shape(self.second):
            raise ValueError(f"block shapes differ: {np.shape(self.first)} vs {np.shape(self.second)}")
        if np.ndim(self.first) != 2:
            raise ValueError("blocks must be matrices")

    @property
    def dims(self) -> tuple[int, int]:
        return tuple(np.shape(self.first))

    @property
    def exact(self) -> bool:
        return is_exact(self.first) and is_exact(self.second)

    @classmethod
    def zero(cls, m: int, n: int, exact: bool = True) -> "MatPair":
        return cls(zeros((m, n), exact), zeros((m, n), exact))

    @classmethod
    def of(cls, first, second, exact: bool = True) -> "MatPair":
        conv = exact_array if exact else float_array
        return cls(conv(first), conv(second))

    @classmethod
    def from_flat(cls, v, m: int, n: int) -> "MatPair":
        v = np.asarray(v)
        return cls(v[: m * n].reshape(m, n), v[m * n:].reshape(m, n))

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.first), np.ravel(self.second)])

    def to_float(self) -> "MatPair":
        return MatPair(float_array(self.first), float_array(self.second))

    def to_exact(self) -> "MatPair":
        return MatPair(exact_array(self.first), exact_array(self.second))

    def _check(self, other: "MatPair"):
        if self.dims != other.dims:
            raise ValueError(f"dimension mismatch {self.dims} vs {other.dims}")

    def __add__(self, other: "MatPair") -> "MatPair":
        self._check(other)
        return MatPair(self.first + other.first, self.second + other.second)

    def __sub__(self, other: "MatPair") -> "MatPair":
        self._check(other)
        return MatPair(self.first - other.first, self.second - other.second)

    def __neg__(self) -> "MatPair":
        return MatPair(-self.first, -self.second)

    def __mul__(self, c) -> "MatPair":
        return MatPair(self.first * c, self.second * c)

    __rmul__ = __mul__

    def inner(self, other: "MatPair"):
        self._check(other)
        return np.sum(self.first * other.first) + np.sum(self.second * other.second)

    def norm2(self):
        return self.inner(self)

    def norm(self) -> float:
        return math.sqrt(float(self.norm2()))

    def equals(self, other: "MatPair", tol: float = 0.0) -> bool:
        if self.dims != other.dims:
            return False
        d = self - other
        if tol == 0.0:
            return all(x == 0 for x in d.flat())
        return d.norm() <= tol

    def __repr__(self) -> str:
        return f"MatPair(first={self.first.tolist()}, second={self.second.tolist()})"


def segment_dist2(x: MatPair, a: MatPair, b: MatPair):
    """Squared distance from x to the closed segment [a, b] (exact when inputs are)."""
    x._check(a)
    a._check(b)
    d = b - a
    dd = d.norm2()
    if dd == 0:
        return (x - a).norm2()
    t = (x - a).inner(d) / dd
    if t < 0:
        t = 0 * t
    elif t > 1:
        t = t / t
    r = x - (a + d * t)
    return r.norm2()


def segment_dist(x: MatPair, a: MatPair, b: MatPair) -> float:
    """Euclidean distance from x to the closed segment [a, b]."""
    return math.sqrt(float(segment_dist2(x, a, b)))


def segment_dist_batch(X: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorised float distance from rows of X to the segment [a, b] (flattened points)."""
    d = b - a
    dd = float(d @ d)
    if dd == 0.0:
        return np.linalg.norm(X - a, axis=-1)
    t = np.clip((X - a) @ d / dd, 0.0, 1.0)
    return np.linalg.norm(X - a - t[..., None] * d, axis=-1)


# ---------------------------------------------------------------------------
# exact linear algebra


def _row_to_ints(row: Sequence[Fraction]) -> tuple[list[int], int]:
    den = reduce(math.lcm, (frac(v).denominator for v in row), 1)
    return [int(frac(v) * den) for v in row], den


def bareiss_det(M) -> Fraction:
    """Exact determinant by fraction-free (Bareiss) elimination.

    Rows are first scaled to integers; the returned value is rescaled.
    """
    rows = [list(r) for r in np.asarray(M, dtype=object)]
    k = len(rows)
    if k == 0:
        return Fraction(1)
    if any(len(r) != k for r in rows):
        raise ValueError("matrix must be square")
    scale = 1
    A = []
    for r in rows:
        ints, den = _row_to_ints(r)
        A.append(ints)
        scale *= den
    sign = 1
    prev = 1
    for c in range(k - 1):
        if A[c][c] == 0:
            piv = next((r for r in range(c + 1, k) if A[r][c] != 0), None)
            if piv is None:
                return Fraction(0)
            A[c], A[piv] = A[piv], A[c]
            sign = -sign
        acc = A[c][c]
        rc = A[c]
        for r in range(c + 1, k):
            rr = A[r]
            arc = rr[c]
            for j in range(c + 1, k):
                rr[j] = (acc * rr[j] - arc * rc[j]) // prev
            rr[c] = 0
        prev = acc
    return Fraction(sign * A[k - 1][k - 1], scale)


def cofactor_det(M) -> Fraction:
    """Laplace expansion along the first row; slow, used as an oracle on small minors."""
    A = [list(map(frac, r)) for r in np.asarray(M, dtype=object)]
    k = len(A)
    if k == 0:
        return Fraction(1)
    if k == 1:
        return A[0][0]
    if k == 2:
        return A[0][0] * A[1][1] - A[0][1] * A[1][0]
    total = Fraction(0)
    for j in range(k):
        if A[0][j] == 0:
            continue
        minor = [row[:j] + row[j + 1:] for row in A[1:]]
        term = A[0][j] * cofactor_det(minor)
        total += term if j % 2 == 0 else -term
    return total


def exact_solve(M, rhs) -> np.ndarray:
    """Solve M X = rhs over the rationals by Gauss-Jordan elimination."""
    A = [list(map(frac, r)) for r in np.asarray(M, dtype=object)]
    B = np.asarray(rhs, dtype=object)
    vec = B.ndim == 1
    Bm = [list(map(frac, (r if not vec else [r]))) for r in B]
    k = len(A)
    for c in range(k):
        piv = next((r for r in range(c, k) if A[r][c] != 0), None)
        if piv is None:
            raise ZeroDivisionError("singular matrix")
        A[c], A[piv] = A[piv], A[c]
        Bm[c], Bm[piv] = Bm[piv], Bm[c]
        inv = 1 / A[c][c]
        A[c] = [v * inv for v in A[c]]
        Bm[c] = [v * inv for v in Bm[c]]
        for r in range(k):
            if r != c and A[r][c] != 0:
                f = A[r][c]
                A[r] = [x - f * y for x, y in zip(A[r], A[c])]
                Bm[r] = [x - f * y for x, y in zip(Bm[r], Bm[c])]
    out = exact_array(Bm)
    return out[:, 0] if vec else out


# ---------------------------------------------------------------------------
# forward-mode dual numbers


class Dual:
    """First-order dual number v + d*e with e^2 = 0; works over Fraction or float."""

    __slots__ = ("v", "d")

    def __init__(self, v, d=0):
        self.v = v
        self.d = d

    @staticmethod
    def _parts(o):
        if isinstance(o, Dual):
            return o.v, o.d
        return o, 0

    def __add__(self, o):
        v, d = self._parts(o)
        return Dual(self.v + v, self.d + d)

    __radd__ = __add__

    def __sub__(self, o):
        v, d = self._parts(o)
        return Dual(self.v - v, self.d - d)

    def __rsub__(self, o):
        v, d = self._parts(o)
        return Dual(v - self.v, d - self.d)

    def __mul__(self, o):
        v, d = self._parts(o)
        return Dual(self.v * v, self.v * d + self.d * v)

    __rmul__ = __mul__

    def __truediv__(self, o):
        v, d = self._parts(o)
        return Dual(self.v / v, (self.d * v - self.v * d) / (v * v))

    def __rtruediv__(self, o):
        v, d = self._parts(o)
        return Dual(v / self.v, (d * self.v - v * self.d) / (self.v * self.v))

    def __neg__(self):
        return Dual(-self.v, -self.d)

    def __pos__(self):
        return self

    def __repr__(self) -> str:
        return f"Dual({self.v!r}, {self.d!r})"


def dual_parts(arr, width: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Split an array of Duals (or plain scalars) into value and derivative arrays.

    With ``width`` the derivative parts are vectors of that length and the
    derivative array gains a trailing axis.
    """
    arr = np.asarray(arr, dtype=object)
    val = np.empty(arr.shape, dtype=object)
    der = np.empty(arr.shape + (() if width is None else (width,)), dtype=object)
    for idx in np.ndindex(arr.shape):
        x = arr[idx]
        if isinstance(x, Dual):
            val[idx], der[idx] = x.v, x.d
        else:
            val[idx], der[idx] = x, 0 * x
    return val, der


def jacobian_forward(fun, z: Sequence, exact: bool = True) -> np.ndarray:
    """Jacobian of a vector-valued polynomial map by one pass with vector-valued duals.

    Seeds take the scalar type of ``z`` (Fraction when exact, float otherwise,
    or the type of z itself for other number types such as mpmath floats).
    """
    z = list(z)
    k = len(z)
    if not exact:
        z = [float(v) for v in z]
    one = z[0] * 0 + 1 if k else 1
    seeds = np.empty((k, k), dtype=object)
    seeds.fill(one * 0)
    for j in range(k):
        seeds[j, j] = one
    zd = np.empty(k, dtype=object)
    for j, v in enumerate(z):
        zd[j] = Dual(v, seeds[j].copy())
    _, der = dual_parts(fun(zd), k)
    J = der.reshape(-1, k)
    return J if exact else J.astype(float)


# ---------------------------------------------------------------------------
# space-time boxes and rasters


@dataclass(frozen=True, eq=False)
class SpaceTimeBox:
    """Axis-aligned box in R^{n+1}; the last coordinate is time."""

    center: np.ndarray
    half_widths: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        h = np.asarray(self.half_widths, dtype=float)
        if c.shape != h.shape or c.ndim != 1:
            raise ValueError("center and half_widths must be vectors of equal length")
        if np.any(h <= 0):
            raise ValueError("half widths must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_widths", h)

    @classmethod
    def unit(cls, dim: int) -> "SpaceTimeBox":
        return cls(np.full(dim, 0.5), np.full(dim, 0.5))

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.half_widths

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.half_widths

    def measure(self) -> float:
        return float(np.prod(2 * self.half_widths))

    def spacing(self, resolution: int) -> np.ndarray:
        return 2 * self.half_widths / resolution

    def axes(self, resolution: int) -> list[np.ndarray]:
        """Cell-centre coordinates along each axis."""
        h = self.spacing(resolution)
        return [self.lower[k] + h[k] * (np.arange(resolution) + 0.5) for k in range(self.dim)]

    def cell_centers(self, resolution: int) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(resolution), indexing="ij")


class Measure(NamedTuple):
    value: float
    uncertainty: float


@dataclass(frozen=True, eq=False)
class Region:
    """Boolean raster of cells over a box."""

    box: SpaceTimeBox
    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != self.box.dim or len(set(m.shape)) != 1:
            raise ValueError("mask must be a cube raster matching the box dimension")
        object.__setattr__(self, "mask", m)

    @property
    def resolution(self) -> int:
        return self.mask.shape[0]

    def cell_volume(self) -> float:
        return float(np.prod(self.box.spacing(self.resolution)))

    def boundary_cells(self) -> np.ndarray:
        """Member cells with at least one face neighbour outside the region (inside the grid)."""
        m = self.mask
        edge = np.zeros_like(m)
        for ax in range(m.ndim):
            fwd = np.zeros_like(m)
            bwd = np.zeros_like(m)
            sl_a = [slice(None)] * m.ndim
            sl_b = [slice(None)] * m.ndim
            sl_a[ax] = slice(0, -1)
            sl_b[ax] = slice(1, None)
            fwd[tuple(sl_a)] = m[tuple(sl_a)] & ~m[tuple(sl_b)]
            bwd[tuple(sl_b)] = m[tuple(sl_b)] & ~m[tuple(sl_a)]
            edge |= fwd | bwd
        return edge

    def __and__(self, other: "Region") -> "Region":
        return Region(self.box, self.mask & other.mask)

    def __or__(self, other: "Region") -> "Region":
        return Region(self.box, self.mask | other.mask)


def region_measure(r: Region) -> Measure:
    """Cell-count estimate of the Lebesgue measure with a one-boundary-layer uncertainty."""
    vol = r.cell_volume()
    return Measure(float(np.count_nonzero(r.mask)) * vol, float(np.count_nonzero(r.boundary_cells())) * vol)


def rasterize(box: SpaceTimeBox, resolution: int, predicate) -> Region:
    """Region of cells whose centres satisfy ``predicate(*coords)``."""
    return Region(box, np.asarray(predicate(*box.cell_centers(resolution)), dtype=bool))


def fraction_str(x) -> str:
    x = frac(x)
    return f"{x.numerator}/{x.denominator}"


def encode_rational(x) -> dict:
    x = frac(x)
    return {"num": str(x.numerator), "den": str(x.denominator)}


def decode_rational(d) -> Fraction:
    if isinstance(d, dict):
        return Fraction(int(d["num"]), int(d["den"]))
    return frac(d)


def as_float_list(values: Iterable) -> list[float]:
    return [float(v) for v in values]


# ---------------------------------------------------------------------------
# smooth transitions


def smoothstep(x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """C-infinity step S with S = 0 for x <= 0, S = 1 for x >= 1, and S', S''.

    S(x) = 1 / (1 + exp(1/x - 1/(1-x))) on (0, 1).
    """
    from scipy.special import expit

    x = np.asarray(x, dtype=float)
    S = np.where(x >= 1.0, 1.0, 0.0)
    S1 = np.zeros_like(x)
    S2 = np.zeros_like(x)
    inner = (x > 0.0) & (x < 1.0)
    if np.any(inner):
        t = x[inner]
        w = 1.0 / t - 1.0 / (1.0 - t)
        w1 = -1.0 / t**2 - 1.0 / (1.0 - t) ** 2
        w2 = 2.0 / t**3 - 2.0 / (1.0 - t) ** 3
        s = expit(-w)
        ss = s * expit(w)
        d1 = -ss * w1
        S[inner] = s
        S1[inner] = d1
        S2[inner] = -(d1 * (1.0 - 2.0 * s) * w1 + ss * w2)
    return S, S1, S2
