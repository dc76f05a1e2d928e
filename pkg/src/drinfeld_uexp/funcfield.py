"""Exact arithmetic over A = F_q[t] and F = F_q(t).

Polynomials carry coefficients in F_q as F_p digit rows, so one convolution
kernel serves both series and polynomial multiplication.  On top of the
polynomial ring sit rational functions, small matrices over F, Hermite-style
column reduction, weak Popov form (which gives predictable degrees for
lattice enumeration), integral kernels, and the supported arithmetic-group
descriptors with their unipotent lattices.
"""

import itertools
import threading
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import gf
from ._kernels import conv_mod
from .errors import EnumerationTooLarge, UnsupportedGroup, ZeroVector
from .nonarch import FieldParams, QMag, SeriesBall

_RING_CACHE = {}
_RING_LOCK = threading.Lock()


class PolyRing:
    """The ring A = F_q[t]; also hands out rational functions over it."""

    def __init__(self, q):
        self.q = q
        self.p, self.s = gf.prime_power_split(q)
        self.base = gf.canonical_field(self.p, self.s)
        self.zero = Poly(self, np.zeros((0, self.s), dtype=np.int64))
        one = np.zeros((1, self.s), dtype=np.int64)
        one[0, 0] = 1
        self.one = Poly(self, one)
        t = np.zeros((2, self.s), dtype=np.int64)
        t[1, 0] = 1
        self.t = Poly(self, t)

    @staticmethod
    def for_q(q):
        with _RING_LOCK:
            if q not in _RING_CACHE:
                _RING_CACHE[q] = PolyRing(q)
            return _RING_CACHE[q]

    def poly(self, coeffs):
        """Build from ints (F_p), digit rows, or another Poly."""
        if isinstance(coeffs, Poly):
            return coeffs
        if isinstance(coeffs, (int, np.integer)):
            coeffs = [int(coeffs)]
        rows = np.zeros((len(coeffs), self.s), dtype=np.int64)
        for i, c in enumerate(coeffs):
            if isinstance(c, (int, np.integer)):
                rows[i, 0] = int(c) % self.p
            else:
                rows[i, : len(c)] = np.asarray(c, dtype=np.int64) % self.p
        return Poly(self, rows)

    def units(self):
        """The q - 1 nonzero constants of F_q as Poly objects."""
        out = []
        for a in self.base.subfield_elements(self.q):
            if a.any():
                out.append(Poly(self, a.reshape(1, -1)))
        return out

    def fq_elements(self):
        return [Poly(self, a.reshape(1, -1)) for a in self.base.subfield_elements(self.q)]

    def unit_generator(self):
        """A generator of F_q^times."""
        if self.q == 2:
            return self.one
        g = self.base.multiplicative_generator()
        # the generator of the full field is a generator of F_q only when s=1
        if self.s == 1 or self.base.element_order(g) == self.q - 1:
            return Poly(self, g.reshape(1, -1))
        for a in self.base.subfield_elements(self.q):
            if a.any() and self.base.element_order(a) == self.q - 1:
                return Poly(self, a.reshape(1, -1))
        raise RuntimeError("no unit generator")

    def rat(self, num, den=None):
        num = self.poly(num) if not isinstance(num, Poly) else num
        den = self.one if den is None else (self.poly(den) if not isinstance(den, Poly) else den)
        return RatFunc.make(num, den)

    def parse(self, text):
        """Parse 't^2+t+1' style strings; coefficients are F_p integers."""
        text = text.replace(" ", "").replace("-", "+-")
        if not text:
            raise ValueError("empty polynomial")
        acc = {}
        for term in text.split("+"):
            if not term:
                continue
            sign = 1
            if term.startswith("-"):
                sign = -1
                term = term[1:]
            if "t" in term:
                coeff, _, rest = term.partition("t")
                c = int(coeff.rstrip("*")) if coeff.rstrip("*") else 1
                k = int(rest[1:]) if rest.startswith("^") else (1 if rest == "" else int(rest))
            else:
                c = int(term)
                k = 0
            acc[k] = (acc.get(k, 0) + sign * c) % self.p
        deg = max(acc) if acc else 0
        return self.poly([acc.get(i, 0) for i in range(deg + 1)])


class Poly:
    """Polynomial in t over F_q; rows of ``c`` are F_p digit vectors."""

    __slots__ = ("ring", "c")

    def __init__(self, ring, c):
        c = np.asarray(c, dtype=np.int64)
        nz = np.flatnonzero(c.any(axis=1))
        self.ring = ring
        self.c = np.ascontiguousarray(c[: int(nz[-1]) + 1] if nz.size else c[:0])
        self.c.setflags(write=False)

    def deg(self):
        return self.c.shape[0] - 1

    def is_zero(self):
        return self.c.shape[0] == 0

    def is_one(self):
        return self.c.shape[0] == 1 and self.c[0, 0] == 1 and not self.c[0, 1:].any()

    def is_unit(self):
        return self.c.shape[0] == 1

    def is_monic(self):
        return self.c.shape[0] >= 1 and self.c[-1, 0] == 1 and not self.c[-1, 1:].any()

    def lc(self):
        if self.is_zero():
            raise ValueError("leading coefficient of zero")
        return self.c[-1]

    def __hash__(self):
        return hash((self.ring.q, self.c.tobytes(), self.c.shape))

    def __eq__(self, other):
        return (
            isinstance(other, Poly)
            and self.ring.q == other.ring.q
            and self.c.shape == other.c.shape
            and np.array_equal(self.c, other.c)
        )

    def __add__(self, other):
        n = max(self.c.shape[0], other.c.shape[0])
        out = np.zeros((n, self.ring.s), dtype=np.int64)
        out[: self.c.shape[0]] += self.c
        out[: other.c.shape[0]] += other.c
        return Poly(self.ring, out % self.ring.p)

    def __neg__(self):
        return Poly(self.ring, (-self.c) % self.ring.p)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if self.is_zero() or other.is_zero():
            return self.ring.zero
        fld = self.ring.base
        return Poly(self.ring, conv_mod(self.c, other.c, fld.red, fld.p))

    def scale(self, unit):
        """Multiply by a constant Poly."""
        return self * unit

    def shift(self, k):
        """Multiply by t^k, k >= 0."""
        if self.is_zero() or k == 0:
            return self
        out = np.zeros((self.c.shape[0] + k, self.ring.s), dtype=np.int64)
        out[k:] = self.c
        return Poly(self.ring, out)

    def divmod(self, other):
        if other.is_zero():
            raise ZeroDivisionError("polynomial division by zero")
        fld = self.ring.base
        db = other.deg()
        inv_lead = fld.inv(other.lc())
        rem = self.c.copy()
        L = rem.shape[0]
        if L - 1 < db:
            return self.ring.zero, self
        quo = np.zeros((L - db, self.ring.s), dtype=np.int64)
        for i in range(L - 1 - db, -1, -1):
            c = fld.mul(rem[i + db], inv_lead)
            if c.any():
                quo[i] = c
                for j in range(db + 1):
                    rem[i + j] = (rem[i + j] - fld.mul(c, other.c[j])) % fld.p
        return Poly(self.ring, quo), Poly(self.ring, rem[:db] if db else rem[:0])

    def __mod__(self, other):
        return self.divmod(other)[1]

    def __floordiv__(self, other):
        return self.divmod(other)[0]

    def monic(self):
        if self.is_zero():
            return self
        inv = self.ring.base.inv(self.lc())
        return self.scale(Poly(self.ring, inv.reshape(1, -1)))

    def __str__(self):
        if self.is_zero():
            return "0"
        parts = []
        for k in range(self.deg(), -1, -1):
            row = self.c[k]
            if not row.any():
                continue
            if self.ring.s == 1:
                cs = str(int(row[0]))
            else:
                cs = "[" + ",".join(str(int(x)) for x in row) + "]"
            if k == 0:
                parts.append(cs)
            else:
                tpow = "t" if k == 1 else f"t^{k}"
                parts.append(tpow if cs == "1" else f"{cs}*{tpow}")
        return "+".join(parts)

    def to_json(self):
        return [[int(x) for x in row] for row in self.c]

    def abs_mag(self):
        return QMag.zero() if self.is_zero() else QMag.q_pow(self.deg())


def poly_gcd(a, b):
    while not b.is_zero():
        a, b = b, a % b
    return a.monic()


def poly_xgcd(a, b):
    """Monic g with u*a + v*b = g."""
    ring = a.ring
    r0, r1 = a, b
    u0, u1 = ring.one, ring.zero
    v0, v1 = ring.zero, ring.one
    while not r1.is_zero():
        quo, rem = r0.divmod(r1)
        r0, r1 = r1, rem
        u0, u1 = u1, u0 - quo * u1
        v0, v1 = v1, v0 - quo * v1
    if r0.is_zero():
        return ring.zero, ring.zero, ring.zero
    lead_inv = Poly(ring, ring.base.inv(r0.lc()).reshape(1, -1))
    return r0 * lead_inv, u0 * lead_inv, v0 * lead_inv


class RatFunc:
    """num/den in lowest terms; den monic."""

    __slots__ = ("num", "den")

    def __init__(self, num, den, _normalized=False):
        if not _normalized:
            raise RuntimeError("use RatFunc.make")
        self.num = num
        self.den = den

    @staticmethod
    def make(num, den):
        if den.is_zero():
            raise ZeroDivisionError("zero denominator")
        if num.is_zero():
            return RatFunc(num.ring.zero, num.ring.one, _normalized=True)
        g = poly_gcd(num, den)
        if not g.is_one():
            num = num.divmod(g)[0]
            den = den.divmod(g)[0]
        if not den.is_monic():
            inv = Poly(den.ring, den.ring.base.inv(den.lc()).reshape(1, -1))
            num = num * inv
            den = den * inv
        return RatFunc(num, den, _normalized=True)

    def ring(self):
        return self.num.ring

    def is_zero(self):
        return self.num.is_zero()

    def is_integral(self):
        return self.den.is_one()

    def __hash__(self):
        return hash((self.num, self.den))

    def __eq__(self, other):
        return isinstance(other, RatFunc) and self.num == other.num and self.den == other.den

    def __add__(self, other):
        return RatFunc.make(self.num * other.den + other.num * self.den, self.den * other.den)

    def __neg__(self):
        return RatFunc(-self.num, self.den, _normalized=True)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        return RatFunc.make(self.num * other.num, self.den * other.den)

    def inv(self):
        if self.is_zero():
            raise ZeroDivisionError("inverse of zero")
        return RatFunc.make(self.den, self.num)

    def __truediv__(self, other):
        return self * other.inv()

    def abs_mag(self):
        if self.is_zero():
            return QMag.zero()
        return QMag.q_pow(self.num.deg() - self.den.deg())

    def __str__(self):
        if self.den.is_one():
            return str(self.num)
        return f"({self.num})/({self.den})"

    def to_json(self):
        return {"num": self.num.to_json(), "den": self.den.to_json()}

    def embed(self, params, prec=None):
        """Image in F_{q^f}((pi^(1/e))) with t = pi^(-1); exact when possible."""
        num = embed_poly(self.num, params)
        if self.den.is_one():
            return num
        den = embed_poly(self.den, params)
        if den.is_monomial():
            return num * den.inv()
        if prec is None:
            raise ValueError("precision required to embed a non-monomial denominator")
        return num * den.inv(prec=Fraction(prec) - Fraction(num.val, params.e))


def embed_poly(poly, params):
    """Exact image of an A-element: t maps to pi^(-1)."""
    if poly.is_zero():
        return SeriesBall.exact_zero(params)
    mat = gf.embedding_matrix(poly.ring.base, params.field)
    L = poly.c.shape[0]
    e = params.e
    arr = np.zeros(((L - 1) * e + 1, params.field.deg), dtype=np.int64)
    arr[::e] = (poly.c[::-1] @ mat) % params.p
    return SeriesBall(params, -(L - 1) * e, None, arr)


def fq_constant(poly, params):
    """Embed a constant Poly (deg 0) as an exact field digit vector."""
    if poly.is_zero():
        return params.field.zero.copy()
    if poly.deg() != 0:
        raise ValueError("not a constant")
    mat = gf.embedding_matrix(poly.ring.base, params.field)
    return (poly.c[0] @ mat) % params.p


# ---------------------------------------------------------------------------
# matrices over F


class FMat:
    """Dense small matrix over F = F_q(t)."""

    __slots__ = ("ring", "rows")

    def __init__(self, ring, rows):
        self.ring = ring
        self.rows = tuple(tuple(x if isinstance(x, RatFunc) else ring.rat(x) for x in row) for row in rows)

    @staticmethod
    def identity(ring, r):
        return FMat(ring, [[ring.rat(1 if i == j else 0) for j in range(r)] for i in range(r)])

    @property
    def shape(self):
        return (len(self.rows), len(self.rows[0]) if self.rows else 0)

    def __getitem__(self, ij):
        return self.rows[ij[0]][ij[1]]

    def __eq__(self, other):
        return isinstance(other, FMat) and self.rows == other.rows

    def __hash__(self):
        return hash(self.rows)

    def __mul__(self, other):
        n, m = self.shape
        m2, k = other.shape
        assert m == m2
        zero = self.ring.rat(0)
        out = []
        for i in range(n):
            row = []
            for j in range(k):
                acc = zero
                for l in range(m):
                    acc = acc + self.rows[i][l] * other.rows[l][j]
                row.append(acc)
            out.append(row)
        return FMat(self.ring, out)

    def matvec(self, vec):
        n, m = self.shape
        zero = self.ring.rat(0)
        out = []
        for i in range(n):
            acc = zero
            for l in range(m):
                acc = acc + self.rows[i][l] * vec[l]
            out.append(acc)
        return tuple(out)

    def vecmat(self, vec):
        n, m = self.shape
        zero = self.ring.rat(0)
        out = []
        for j in range(m):
            acc = zero
            for l in range(n):
                acc = acc + vec[l] * self.rows[l][j]
            out.append(acc)
        return tuple(out)

    def det(self):
        n, m = self.shape
        assert n == m
        if n == 1:
            return self.rows[0][0]
        zero = self.ring.rat(0)
        acc = zero
        for j in range(n):
            minor = FMat(self.ring, [row[:j] + row[j + 1 :] for row in self.rows[1:]])
            term = self.rows[0][j] * minor.det()
            acc = acc + (term if j % 2 == 0 else -term)
        return acc

    def inv(self):
        n, _ = self.shape
        aug = [list(row) + [self.ring.rat(1 if i == j else 0) for j in range(n)] for i, row in enumerate(self.rows)]
        for c in range(n):
            piv = next((r for r in range(c, n) if not aug[r][c].is_zero()), None)
            if piv is None:
                raise ZeroDivisionError("singular matrix")
            aug[c], aug[piv] = aug[piv], aug[c]
            inv = aug[c][c].inv()
            aug[c] = [x * inv for x in aug[c]]
            for r in range(n):
                if r != c and not aug[r][c].is_zero():
                    factor = aug[r][c]
                    aug[r] = [x - factor * y for x, y in zip(aug[r], aug[c])]
        return FMat(self.ring, [row[n:] for row in aug])

    def transpose(self):
        n, m = self.shape
        return FMat(self.ring, [[self.rows[i][j] for i in range(n)] for j in range(m)])

    def is_integral(self):
        return all(x.is_integral() for row in self.rows for x in row)

    def max_entry_mag(self):
        mags = [x.abs_mag() for row in self.rows for x in row if not x.is_zero()]
        return max(mags) if mags else QMag.zero()

    def to_json(self):
        return [[x.to_json() for x in row] for row in self.rows]


class GroupElem:
    """An element of GL_r(F), determinant cached."""

    __slots__ = ("mat", "_det")

    def __init__(self, mat):
        self.mat = mat
        self._det = mat.det()
        if self._det.is_zero():
            raise ValueError("singular matrix is not a group element")

    @staticmethod
    def from_rows(ring, rows):
        return GroupElem(FMat(ring, rows))

    @staticmethod
    def identity(ring, r):
        return GroupElem(FMat.identity(ring, r))

    @property
    def ring(self):
        return self.mat.ring

    @property
    def r(self):
        return self.mat.shape[0]

    def det(self):
        return self._det

    def __mul__(self, other):
        return GroupElem(self.mat * other.mat)

    def inv(self):
        return GroupElem(self.mat.inv())

    def __eq__(self, other):
        return isinstance(other, GroupElem) and self.mat == other.mat

    def __hash__(self):
        return hash(self.mat)

    def is_integral_unit(self):
        """Entries in A and det in F_q^times."""
        return self.mat.is_integral() and self._det.is_integral() and self._det.num.is_unit()

    def to_json(self):
        return self.mat.to_json()


def iota(ring, v):
    """Unipotent matrix with first row (1, v), v a tuple over F."""
    r = len(v) + 1
    rows = [[ring.rat(1)] + [x if isinstance(x, RatFunc) else ring.rat(x) for x in v]]
    for i in range(1, r):
        rows.append([ring.rat(1 if j == i else 0) for j in range(r)])
    return GroupElem.from_rows(ring, rows)


def block_diag(ring, alpha, gamma_prime):
    """block(alpha, gamma') in M(F)."""
    r = gamma_prime.r + 1
    alpha = alpha if isinstance(alpha, RatFunc) else ring.rat(alpha)
    rows = [[alpha] + [ring.rat(0)] * (r - 1)]
    for i in range(r - 1):
        rows.append([ring.rat(0)] + list(gamma_prime.mat.rows[i]))
    return GroupElem.from_rows(ring, rows)


# ---------------------------------------------------------------------------
# Hermite reduction of a column, weak Popov form, integral kernels


def hnf_reduce(ring, column):
    """gamma in GL_r(A) with gamma*x = (g, 0, ..., 0)^T, g generating sum A x_i.

    ``column`` is a sequence of RatFunc (or coercibles); g is monic-normalized
    up to the ideal generator convention (monic numerator).
    """
    x = [v if isinstance(v, RatFunc) else ring.rat(v) for v in column]
    if all(v.is_zero() for v in x):
        raise ZeroVector("hnf_reduce of the zero vector")
    den = ring.one
    for v in x:
        den = den * v.den.divmod(poly_gcd(den, v.den))[0]
    ints = [v.num * den.divmod(v.den)[0] for v in x]
    r = len(ints)
    gamma = FMat.identity(ring, r)
    for i in range(1, r):
        a, b = ints[0], ints[i]
        if b.is_zero():
            continue
        if a.is_zero():
            rows = [list(row) for row in gamma.rows]
            rows[0], rows[i] = rows[i], [(-p) for p in rows[0]]
            gamma = FMat(ring, rows)
            ints[0], ints[i] = b, ring.zero
            continue
        g, u, v = poly_xgcd(a, b)
        adiv = a.divmod(g)[0]
        bdiv = b.divmod(g)[0]
        rows = [list(row) for row in gamma.rows]
        r0 = [ring.rat(u) * rows[0][j] + ring.rat(v) * rows[i][j] for j in range(r)]
        ri = [ring.rat(adiv) * rows[i][j] - ring.rat(bdiv) * rows[0][j] for j in range(r)]
        rows[0], rows[i] = r0, ri
        gamma = FMat(ring, rows)
        ints[0], ints[i] = g, ring.zero
    if not ints[0].is_monic():
        unit_inv = Poly(ring, ring.base.inv(ints[0].lc()).reshape(1, -1))
        rows = [list(row) for row in gamma.rows]
        rows[0] = [ring.rat(unit_inv) * v for v in rows[0]]
        gamma = FMat(ring, rows)
        ints[0] = ints[0].monic()
    elem = GroupElem(gamma)
    canonical = tuple(RatFunc.make(ints[0], den) if j == 0 else ring.rat(0) for j in range(r))
    return elem, canonical


def weak_popov(ring, rows):
    """Row-reduced basis of the row module spanned by ``rows`` (Poly matrices)."""
    rows = [list(r) for r in rows]

    def pivot(row):
        degs = [p.deg() for p in row]
        d = max(degs)
        if d < 0:
            return None, -1
        for j in range(len(row) - 1, -1, -1):
            if degs[j] == d:
                return j, d
        return None, -1

    changed = True
    while changed:
        changed = False
        info = [pivot(r) for r in rows]
        for i in range(len(rows)):
            for k in range(len(rows)):
                if i == k:
                    continue
                ji, di = info[i]
                jk, dk = info[k]
                if ji is None or jk is None or ji != jk or di < dk:
                    continue
                # reduce row i by row k
                fld = ring.base
                c = fld.mul(rows[i][ji].lc(), fld.inv(rows[k][jk].lc()))
                shift = di - dk
                factor = Poly(ring, c.reshape(1, -1)).shift(shift)
                rows[i] = [a - factor * b for a, b in zip(rows[i], rows[k])]
                info[i] = pivot(rows[i])
                changed = True
    return [r for r in rows if any(not p.is_zero() for p in r)]


def triangular_basis(ring, rows):
    """Lower-triangular basis (list of rows) of the A-row-module of ``rows``.

    Row i has zero entries beyond column i and a monic diagonal.  Requires the
    module to have full rank equal to the number of columns.
    """
    k = len(rows[0])
    work = [list(r) for r in rows]
    out = [None] * k
    for col in range(k - 1, -1, -1):
        live = [r for r in work if not r[col].is_zero()]
        rest = [r for r in work if r[col].is_zero()]
        if not live:
            raise ValueError("row module does not have full rank")
        pivot = live[0]
        for other in live[1:]:
            a, b = pivot[col], other[col]
            g, u, v = poly_xgcd(a, b)
            adiv, bdiv = a.divmod(g)[0], b.divmod(g)[0]
            new_p = [u * x + v * y for x, y in zip(pivot, other)]
            new_o = [adiv * y - bdiv * x for x, y in zip(pivot, other)]
            pivot, other[:] = new_p, new_o
            if any(not x.is_zero() for x in new_o):
                rest.append(other)
        # clear the tail columns of the pivot against rows already fixed
        for c2 in range(k - 1, col, -1):
            if not pivot[c2].is_zero():
                quo = pivot[c2].divmod(out[c2][c2])[0]
                pivot = [x - quo * y for x, y in zip(pivot, out[c2])]
        if not pivot[col].is_monic():
            inv = Poly(ring, ring.base.inv(pivot[col].lc()).reshape(1, -1))
            pivot = [inv * x for x in pivot]
        out[col] = pivot
        work = rest
    return out


def kernel_integral(ring, P, modulus):
    """Basis of {x in A^k : x P = 0 mod modulus}, P a k x m Poly matrix."""
    k = len(P)
    m = len(P[0]) if k else 0
    stacked = [list(row) for row in P]
    for j in range(m):
        stacked.append([modulus if i == j else ring.zero for i in range(m)])
    n = k + m
    U = [[ring.one if i == j else ring.zero for j in range(n)] for i in range(n)]
    work = [list(r) for r in stacked]
    row_at = 0
    for col in range(m):
        live = [i for i in range(row_at, n) if not work[i][col].is_zero()]
        if not live:
            continue
        piv = live[0]
        work[row_at], work[piv] = work[piv], work[row_at]
        U[row_at], U[piv] = U[piv], U[row_at]
        for i in range(row_at + 1, n):
            while not work[i][col].is_zero():
                a, b = work[row_at][col], work[i][col]
                g, u, v = poly_xgcd(a, b)
                adiv, bdiv = a.divmod(g)[0], b.divmod(g)[0]
                new_r = [u * x + v * y for x, y in zip(work[row_at], work[i])]
                new_i = [adiv * y - bdiv * x for x, y in zip(work[row_at], work[i])]
                new_ur = [u * x + v * y for x, y in zip(U[row_at], U[i])]
                new_ui = [adiv * y - bdiv * x for x, y in zip(U[row_at], U[i])]
                work[row_at], work[i] = new_r, new_i
                U[row_at], U[i] = new_ur, new_ui
        row_at += 1
    basis = []
    for i in range(n):
        if all(x.is_zero() for x in work[i]):
            basis.append(tuple(U[i][:k]))
    return basis


# ---------------------------------------------------------------------------
# lattices


@dataclass(frozen=True)
class LatticeSpec:
    """A-lattice in F^k given by generator rows over F (row span over A)."""

    gens: FMat

    @property
    def rank(self):
        return self.gens.shape[0]

    @property
    def ring(self):
        return self.gens.ring

    @staticmethod
    def standard(ring, k):
        return LatticeSpec(FMat.identity(ring, k))

    @staticmethod
    def scaled_standard(ring, k, c):
        c = c if isinstance(c, RatFunc) else ring.rat(c)
        return LatticeSpec(FMat(ring, [[c if i == j else ring.rat(0) for j in range(k)] for i in range(k)]))

    def scaled(self, c):
        c = c if isinstance(c, RatFunc) else self.ring.rat(c)
        return LatticeSpec(FMat(self.ring, [[c * x for x in row] for row in self.gens.rows]))

    def transformed(self, gamma_prime):
        """The lattice Lambda * gamma' (right action on row vectors)."""
        return LatticeSpec(self.gens * gamma_prime.mat)

    def integral_form(self):
        """(M, d): rows of M over A, lattice = rowspan(M)/d."""
        ring = self.ring
        den = ring.one
        for row in self.gens.rows:
            for x in row:
                den = den * x.den.divmod(poly_gcd(den, x.den))[0]
        M = [[x.num * den.divmod(x.den)[0] for x in row] for row in self.gens.rows]
        return M, den

    def reduced_rows(self):
        M, den = self.integral_form()
        return weak_popov(self.ring, M), den

    def min_valuation(self):
        """min over nonzero lattice vectors of -log_q |lambda'| (can be negative)."""
        rows, den = self.reduced_rows()
        degs = [max(p.deg() for p in row) for row in rows]
        return -(min(degs) - den.deg())

    def contains(self, vec):
        sol = self.gens.inv().vecmat(vec)  # x with x*gens = vec  (vec * gens^-1)
        return all(x.is_integral() for x in sol)

    def coordinates(self, vec):
        return self.gens.inv().vecmat(vec)

    def enumerate(self, bound_exp, cap=200000):
        """All lattice vectors with |.| <= q^bound_exp, as tuples of RatFunc."""
        ring = self.ring
        rows, den = self.reduced_rows()
        rowdeg = [max(p.deg() for p in row) for row in rows]
        caps = [bound_exp + den.deg() - rd for rd in rowdeg]
        total = 1
        for c in caps:
            total *= ring.q ** (c + 1) if c >= 0 else 1
        if total > cap:
            raise EnumerationTooLarge(f"{total} lattice points exceed cap {cap}")
        fq = ring.fq_elements()
        den_rf = ring.rat(den)
        out = []
        ranges = []
        for c in caps:
            if c < 0:
                ranges.append([ring.zero])
            else:
                ranges.append([_poly_from_digits(ring, digits) for digits in itertools.product(fq, repeat=c + 1)])
        for combo in itertools.product(*ranges):
            vec = []
            for j in range(len(rows[0])):
                acc = ring.zero
                for i, x in enumerate(combo):
                    acc = acc + x * rows[i][j]
                vec.append(RatFunc.make(acc, den))
            out.append(tuple(vec))
        return out

    def quotient_data(self, sub):
        """(index_log_p d, reps B) for a full-index sublattice: reps of the
        nonzero classes of self/sub, as tuples over F."""
        X = []
        for row in sub.gens.rows:
            coords = self.coordinates(row)
            if not all(x.is_integral() for x in coords):
                raise ValueError("not a sublattice")
            X.append([x.num for x in coords])
        ring = self.ring
        H = triangular_basis(ring, X)
        diag_degs = [H[i][i].deg() for i in range(len(H))]
        fq = ring.fq_elements()
        reps = []
        spaces = []
        for d in diag_degs:
            if d == 0:
                spaces.append([ring.zero])
            else:
                spaces.append([_poly_from_digits(ring, digits) for digits in itertools.product(fq, repeat=d)])
        for combo in itertools.product(*spaces):
            if all(x.is_zero() for x in combo):
                continue
            vec = self.gens.vecmat(tuple(ring.rat(x) for x in combo))
            reps.append(vec)
        log_p_index = sum(diag_degs) * ring.s
        return log_p_index, reps

    def to_json(self):
        return {"gens": self.gens.to_json()}


def _poly_from_digits(ring, digits):
    acc = ring.zero
    for i, d in enumerate(digits):
        acc = acc + d.shift(i)
    return acc


# ---------------------------------------------------------------------------
# arithmetic subgroup descriptors


@dataclass(frozen=True)
class GroupSpec:
    """Supported arithmetic subgroups of GL_r(F)."""

    r: int
    kind: str  # full | principal | conjugate | levi
    q: int
    level: Poly = None
    delta: GroupElem = None
    base: "GroupSpec" = None
    parent: "GroupSpec" = None

    @staticmethod
    def full(q, r):
        return GroupSpec(r=r, kind="full", q=q)

    @staticmethod
    def principal(q, r, level):
        ring = PolyRing.for_q(q)
        level = ring.parse(level) if isinstance(level, str) else level
        if level.deg() < 1:
            raise ValueError("principal level must be non-constant")
        return GroupSpec(r=r, kind="principal", q=q, level=level.monic())

    @staticmethod
    def conjugate(delta, base):
        if base.kind == "conjugate":  # delta'^-1 (delta^-1 G delta) delta' = (delta delta')^-1 G (delta delta')
            return GroupSpec.conjugate(base.delta * delta, base.base)
        if base.kind == "levi":
            raise UnsupportedGroup("conjugate of a levi descriptor")
        return GroupSpec(r=base.r, kind="conjugate", q=base.q, delta=delta, base=base)

    @staticmethod
    def levi(parent):
        if parent.r < 2:
            raise ValueError("levi of a rank < 2 group")
        return GroupSpec(r=parent.r - 1, kind="levi", q=parent.q, parent=parent)

    @property
    def ring(self):
        return PolyRing.for_q(self.q)

    def contains(self, g):
        if g.r != self.r:
            return False
        if self.kind == "full":
            return g.is_integral_unit()
        if self.kind == "principal":
            if not g.is_integral_unit():
                return False
            n = self.level
            for i in range(self.r):
                for j in range(self.r):
                    entry = g.mat.rows[i][j].num
                    target = entry - (self.ring.one if i == j else self.ring.zero)
                    if not (target % n).is_zero():
                        return False
            return True
        if self.kind == "conjugate":
            return self.base.contains(self.delta * g * self.delta.inv())
        if self.kind == "levi":
            return self.parent.contains(block_diag(self.ring, 1, g))
        raise UnsupportedGroup(self.kind)

    def scalar_order(self):
        """|Gamma intersect scalars|, a divisor of q - 1."""
        count = 0
        for u in self.ring.units():
            g = GroupElem(FMat(self.ring, [[self.ring.rat(u if i == j else 0) for j in range(self.r)] for i in range(self.r)]))
            if self.contains(g):
                count += 1
        return count

    def det_order(self):
        """|det(Gamma)|, a divisor of q - 1."""
        if self.kind == "full":
            return self.q - 1
        if self.kind == "principal":
            return 1
        if self.kind == "conjugate":
            return self.base.det_order()
        if self.kind == "levi":
            # determinants of gamma' with diag(1, gamma') in the parent
            if self.parent.kind == "full":
                return self.q - 1
            if self.parent.kind == "principal":
                return 1
            if self.parent.kind == "conjugate":
                # conjugation preserves determinants
                return GroupSpec.levi(self.parent.base).det_order() if self.parent.base.r >= 2 else 1
        raise UnsupportedGroup(self.kind)

    def to_json(self):
        out = {"kind": self.kind, "r": self.r, "q": self.q}
        if self.kind == "principal":
            out["n"] = str(self.level)
        if self.kind == "conjugate":
            out["delta"] = self.delta.to_json()
            out["base"] = self.base.to_json()
        if self.kind == "levi":
            out["parent"] = self.parent.to_json()
        return out


def _unipotent_lattice_conjugate(spec, row_index=0):
    """Lattice of v with the unipotent u_row(v) inside the conjugate group.

    u_row(v) = Id + e_{row} * (0,...,0,v) with v of length r - row_index - 1.
    """
    delta, base = spec.delta, spec.base
    ring = spec.ring
    r = spec.r
    k = r - row_index - 1
    dinv = delta.inv().mat
    u_col = [delta.mat.rows[i][row_index] for i in range(r)]
    # entry (i,j) of delta*u(v)*delta^-1 - Id = u_col[i] * sum_l v_l dinv[row_index+1+l][j]
    cols = []
    for i in range(r):
        for j in range(r):
            cols.append([u_col[i] * dinv.rows[row_index + 1 + l][j] for l in range(k)])
    c_mod = ring.one if base.kind == "full" else base.level
    den = ring.one
    for col in cols:
        for x in col:
            den = den * x.den.divmod(poly_gcd(den, x.den))[0]
    N = [[col[l].num * den.divmod(col[l].den)[0] for col in cols] for l in range(k)]
    modulus = c_mod * den
    # lattice L0 containing the solutions: modulus * A^k * NJ^{-1}
    cols_idx = _independent_columns(ring, N, k)
    NJ = FMat(ring, [[ring.rat(N[l][c]) for c in cols_idx] for l in range(k)])
    G0 = NJ.inv()
    G0 = FMat(ring, [[ring.rat(modulus) * x for x in row] for row in G0.rows])
    # refine: x with x * (G0 N / modulus) integral
    B = []
    for l in range(k):
        row = []
        for cidx in range(len(cols)):
            acc = ring.rat(0)
            for m in range(k):
                acc = acc + G0.rows[l][m] * ring.rat(N[m][cidx])
            row.append(acc / ring.rat(modulus))
        B.append(row)
    den2 = ring.one
    for row in B:
        for x in row:
            den2 = den2 * x.den.divmod(poly_gcd(den2, x.den))[0]
    P = [[x.num * den2.divmod(x.den)[0] for x in row] for row in B]
    basis = kernel_integral(ring, P, den2)
    rows = []
    for x in basis:
        vec = []
        for j in range(k):
            acc = ring.rat(0)
            for m in range(k):
                acc = acc + ring.rat(x[m]) * G0.rows[m][j]
            vec.append(acc)
        rows.append(vec)
    if len(rows) != k:
        raise UnsupportedGroup("conjugate unipotent part is not of lattice form")
    return LatticeSpec(FMat(ring, rows))


def _independent_columns(ring, N, k):
    """Indices of k F-linearly independent columns of the k x m matrix N."""
    chosen = []
    mat_rows = []
    m = len(N[0])
    for c in range(m):
        cand = [N[l][c] for l in range(k)]
        test = mat_rows + [[ring.rat(x) for x in cand]]
        if _f_rank(ring, test) == len(test):
            mat_rows.append([ring.rat(x) for x in cand])
            chosen.append(c)
        if len(chosen) == k:
            return chosen
    raise ValueError("matrix does not have full rank")


def _f_rank(ring, rows):
    work = [list(r) for r in rows]
    rank = 0
    cols = len(work[0]) if work else 0
    used = set()
    for row in work:
        piv = next((c for c in range(cols) if c not in used and not row[c].is_zero()), None)
        if piv is None:
            continue
        rank += 1
        used.add(piv)
        inv = row[piv].inv()
        row[:] = [x * inv for x in row]
        for other in work:
            if other is not row and not other[piv].is_zero():
                f = other[piv]
                other[:] = [x - f * y for x, y in zip(other, row)]
    return rank


def gamma_data(spec):
    """(Lambda', Gamma_M, scalar_order, det_order) of a supported group."""
    ring = spec.ring
    r = spec.r
    if r < 2:
        raise ValueError("gamma_data needs rank >= 2")
    if spec.kind == "full":
        return (
            LatticeSpec.standard(ring, r - 1),
            GroupSpec.full(spec.q, r - 1),
            spec.q - 1,
            spec.q - 1,
        )
    if spec.kind == "principal":
        lat = LatticeSpec.scaled_standard(ring, r - 1, ring.rat(spec.level))
        if r - 1 >= 2:
            gm = GroupSpec.principal(spec.q, r - 1, spec.level)
        else:
            gm = GroupSpec(r=1, kind="principal", q=spec.q, level=spec.level)
        return lat, gm, spec.scalar_order(), 1
    if spec.kind == "conjugate":
        lat = _unipotent_lattice_conjugate(spec, row_index=0)
        return lat, GroupSpec.levi(spec), spec.scalar_order(), spec.det_order()
    if spec.kind == "levi":
        # unipotent part of the levi inside its parent
        if spec.parent.kind in ("full", "principal"):
            inner = gamma_data(spec.parent)[1]
            return gamma_data(inner)
        if spec.parent.kind == "conjugate":
            lat = _unipotent_lattice_conjugate(spec.parent, row_index=1)
            return lat, GroupSpec.levi(spec), spec.scalar_order(), spec.det_order()
    raise UnsupportedGroup(spec.kind)


def full_group_generators(q, r):
    """Elementary matrices, a diagonal unit, and a cycle: generate GL_r(A)."""
    ring = PolyRing.for_q(q)
    gens = []
    for i in range(r):
        for j in range(r):
            if i == j:
                continue
            for val in (ring.one, ring.t):
                rows = [[ring.rat(1 if a == b else 0) for b in range(r)] for a in range(r)]
                rows[i][j] = ring.rat(val)
                gens.append(GroupElem.from_rows(ring, rows))
    alpha = ring.unit_generator()
    if not alpha.is_one():
        rows = [[ring.rat(alpha if (a == b == 0) else (1 if a == b else 0)) for b in range(r)] for a in range(r)]
        gens.append(GroupElem.from_rows(ring, rows))
    if r >= 2:
        rows = [[ring.rat(1 if b == (a + 1) % r else 0) for b in range(r)] for a in range(r)]
        gens.append(GroupElem.from_rows(ring, rows))
    return gens
