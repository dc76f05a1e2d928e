"""Finite-precision ball arithmetic in towers F_{q^f}((pi^(1/e))).

A :class:`SeriesBall` is a truncated Laurent series in pi = 1/t with
coefficients in F_{q^f}, together with an absolute precision: the ball
consists of all field elements within q^(-prec) of the stored expansion.
Valuations and precisions are kept internally as integers in units of 1/e.
``prec is None`` marks an exact element (a Laurent polynomial known with
infinite precision); arithmetic degrades exactness only where forced.

The module also provides distances to F_infty-rational spans via greedy
leading-coefficient reduction, exact roots of unity, and the JSON wire
format for balls.
"""

import json
import threading
from dataclasses import dataclass
from fractions import Fraction
from functools import total_ordering

import numpy as np

from . import gf
from ._kernels import conv_mod, series_inv
from .errors import InversionOfZeroBall, PrecisionExhausted

BORDERLINE = "borderline"

_PARAMS_CACHE = {}
_PARAMS_LOCK = threading.Lock()


@dataclass(frozen=True)
class FieldParams:
    """Ambient arena for a ball: the field F_{q^f} and ramification e."""

    q: int
    f: int
    e: int
    modulus: tuple

    @staticmethod
    def make(q, f=1, e=1, modulus=None):
        p, s = gf.prime_power_split(q)
        if modulus is None:
            modulus = gf.smallest_irreducible(p, s * f)
        modulus = tuple(int(c) for c in modulus)
        if len(modulus) - 1 != s * f:
            raise ValueError("modulus degree must equal deg(F_{q^f} / F_p)")
        key = (q, f, e, modulus)
        with _PARAMS_LOCK:
            if key not in _PARAMS_CACHE:
                _PARAMS_CACHE[key] = FieldParams(q, f, e, modulus)
            return _PARAMS_CACHE[key]

    @property
    def p(self):
        return gf.prime_power_split(self.q)[0]

    @property
    def s(self):
        return gf.prime_power_split(self.q)[1]

    @property
    def field(self):
        return gf.field_for_modulus(self.p, self.modulus)

    def is_canonical(self):
        return self.modulus == gf.smallest_irreducible(self.p, self.s * self.f)

    def extend(self, f=None, e=None):
        return FieldParams.make(self.q, f or self.f, e or self.e)


def common_params(pa, pb):
    if pa.q != pb.q:
        raise ValueError(f"mixed base fields q={pa.q} and q={pb.q}")
    if pa is pb:
        return pa
    f = _lcm(pa.f, pb.f)
    e = _lcm(pa.e, pb.e)
    if f != pa.f or f != pb.f:
        if not (pa.is_canonical() and pb.is_canonical()):
            raise ValueError("cannot mix custom moduli of different degrees")
        return FieldParams.make(pa.q, f, e)
    modulus = pa.modulus  # same f: moduli must agree
    if pa.modulus != pb.modulus:
        raise ValueError("distinct moduli of equal degree")
    return FieldParams.make(pa.q, f, e, modulus)


def _lcm(a, b):
    from math import gcd

    return a * b // gcd(a, b)


@total_ordering
class QMag:
    """A magnitude q^(-v) with v rational, or exactly zero.

    Ordering and arithmetic are exact; only rendering needs q.
    """

    __slots__ = ("v", "is_zero")

    def __init__(self, v, is_zero=False):
        self.v = Fraction(v) if not is_zero else None
        self.is_zero = is_zero

    @staticmethod
    def zero():
        return QMag(0, is_zero=True)

    @staticmethod
    def q_pow(k):
        """The magnitude q^k."""
        return QMag(-Fraction(k))

    def __eq__(self, other):
        if self.is_zero or other.is_zero:
            return self.is_zero and other.is_zero
        return self.v == other.v

    def __lt__(self, other):
        if self.is_zero:
            return not other.is_zero
        if other.is_zero:
            return False
        return self.v > other.v

    def __mul__(self, other):
        if self.is_zero or other.is_zero:
            return QMag.zero()
        return QMag(self.v + other.v)

    def __truediv__(self, other):
        if other.is_zero:
            raise ZeroDivisionError("division by zero magnitude")
        if self.is_zero:
            return QMag.zero()
        return QMag(self.v - other.v)

    def __pow__(self, k):
        if self.is_zero:
            if k <= 0:
                raise ZeroDivisionError("zero magnitude to non-positive power")
            return QMag.zero()
        return QMag(self.v * k)

    def inverse(self):
        if self.is_zero:
            raise ZeroDivisionError("inverse of zero magnitude")
        return QMag(-self.v)

    def __repr__(self):
        if self.is_zero:
            return "QMag(0)"
        return f"QMag(q^{-self.v})"

    def as_float(self, q):
        return 0.0 if self.is_zero else float(q) ** float(-self.v)

    def to_json(self):
        if self.is_zero:
            return {"zero": True}
        return {"zero": False, "log_q_num": self.v.numerator, "log_q_den": self.v.denominator}


class SeriesBall:
    """Element of F_{q^f}((pi^(1/e))) known up to absolute precision q^(-prec).

    ``val`` and ``prec`` are integers in units of 1/e.  Invariants: a nonzero
    ball has a nonzero coefficient row at ``val`` and (if finite precision)
    exactly ``prec - val`` stored rows; a zero ball stores no rows and
    ``val == prec``.  Instances are immutable.
    """

    __slots__ = ("params", "val", "prec", "coeffs")

    def __init__(self, params, val, prec, coeffs, _normalized=False):
        coeffs = np.asarray(coeffs, dtype=np.int64)
        if coeffs.ndim == 1:
            coeffs = coeffs.reshape(0, params.field.deg) if coeffs.size == 0 else coeffs.reshape(1, -1)
        if not _normalized:
            params, val, prec, coeffs = _normalize(params, val, prec, coeffs)
        self.params = params
        self.val = val
        self.prec = prec
        self.coeffs = coeffs
        self.coeffs.setflags(write=False)

    # -- constructors --

    @staticmethod
    def zero_ball(params, prec_units):
        return SeriesBall(params, prec_units, prec_units, np.zeros((0, params.field.deg)), _normalized=True)

    @staticmethod
    def exact_zero(params):
        return SeriesBall(params, 0, None, np.zeros((0, params.field.deg)), _normalized=True)

    @staticmethod
    def from_terms(params, terms, prec=None):
        """Build from {valuation: coefficient} with Fraction/int valuations.

        Coefficients may be ints (F_p) or digit vectors in the params field.
        ``prec`` is an absolute precision as a Fraction (None = exact).
        """
        d = params.field.deg
        units = {}
        for k, c in terms.items():
            u = Fraction(k) * params.e
            if u.denominator != 1:
                raise ValueError(f"valuation {k} not representable with e={params.e}")
            vec = np.zeros(d, dtype=np.int64)
            if isinstance(c, (int, np.integer)):
                vec[0] = int(c) % params.p
            else:
                vec[: len(c)] = np.asarray(c, dtype=np.int64) % params.p
            units[int(u)] = vec
        prec_u = None
        if prec is not None:
            pu = Fraction(prec) * params.e
            if pu.denominator != 1:
                raise ValueError(f"precision {prec} not representable with e={params.e}")
            prec_u = int(pu)
        if not units:
            return SeriesBall.exact_zero(params) if prec_u is None else SeriesBall.zero_ball(params, prec_u)
        lo = min(units)
        hi = max(units) + 1
        if prec_u is not None:
            hi = prec_u
        arr = np.zeros((max(hi - lo, 0), d), dtype=np.int64)
        for u, vec in units.items():
            if lo <= u < hi:
                arr[u - lo] = vec
        return SeriesBall(params, lo, prec_u, arr)

    @staticmethod
    def one(params):
        return SeriesBall.from_terms(params, {0: 1})

    @staticmethod
    def constant(params, digits):
        return SeriesBall.from_terms(params, {0: digits})

    @staticmethod
    def pi_pow(params, k):
        """Exact monomial pi^k, k a Fraction with denominator dividing e."""
        return SeriesBall.from_terms(params, {Fraction(k): 1})

    # -- predicates and views --

    def is_zero_ball(self):
        return self.coeffs.shape[0] == 0

    def is_exact(self):
        return self.prec is None

    def is_exact_zero(self):
        return self.prec is None and self.coeffs.shape[0] == 0

    def contains_zero(self):
        return self.coeffs.shape[0] == 0

    def is_monomial(self):
        return self.coeffs.shape[0] >= 1 and not self.coeffs[1:].any()

    def valuation(self):
        """Valuation as a Fraction; raises on balls indistinguishable from 0."""
        if self.is_zero_ball():
            raise PrecisionExhausted("valuation of a ball containing zero")
        return Fraction(self.val, self.params.e)

    def magnitude(self):
        if self.is_exact_zero():
            return QMag.zero()
        if self.is_zero_ball():
            raise PrecisionExhausted(
                f"magnitude undetermined below q^-{Fraction(self.prec, self.params.e)}"
            )
        return QMag(self.valuation())

    def magnitude_upper(self):
        """Upper bound on the magnitude, defined for every ball."""
        if self.is_exact_zero():
            return QMag.zero()
        return QMag(Fraction(self.val, self.params.e))

    def precision(self):
        return None if self.prec is None else Fraction(self.prec, self.params.e)

    def lead(self):
        return self.coeffs[0]

    # -- structural ops --

    def embed(self, params2):
        """Image in a larger arena (f divides, e divides)."""
        if params2 is self.params:
            return self
        pa, pb = self.params, params2
        if pa.q != pb.q or pb.f % pa.f or pb.e % pa.e:
            raise ValueError(f"cannot embed {pa} into {pb}")
        mat = gf.embedding_matrix(pa.field, pb.field)
        stride = pb.e // pa.e
        L = self.coeffs.shape[0]
        new = np.zeros(((L - 1) * stride + 1 if L else 0, pb.field.deg), dtype=np.int64)
        if L:
            new[::stride] = self.coeffs @ mat % pa.p
        val = self.val * stride
        prec = None if self.prec is None else self.prec * stride
        return SeriesBall(pb, val, prec, new)

    def with_precision(self, prec):
        """Cap absolute precision at ``prec`` (Fraction); forces a finite ball."""
        pu = Fraction(prec) * self.params.e
        if pu.denominator != 1:
            raise ValueError("precision not representable at this ramification")
        pu = int(pu)
        if self.prec is not None and self.prec <= pu:
            return self
        return SeriesBall(self.params, self.val, pu, self.coeffs[: max(pu - self.val, 0)])

    def shift(self, k):
        """Multiply by the exact monomial pi^k (k Fraction, denominator | e)."""
        u = Fraction(k) * self.params.e
        if u.denominator != 1:
            raise ValueError("shift not representable at this ramification")
        u = int(u)
        prec = None if self.prec is None else self.prec + u
        return SeriesBall(self.params, self.val + u, prec, self.coeffs, _normalized=True)

    def scale(self, digits):
        """Multiply by an exact field constant given as a digit vector."""
        digits = np.asarray(digits, dtype=np.int64).reshape(1, -1)
        if not digits.any():
            return SeriesBall.exact_zero(self.params) if self.is_exact() else SeriesBall.zero_ball(self.params, self.prec)
        if self.is_zero_ball():
            return self
        fld = self.params.field
        out = conv_mod(self.coeffs, digits, fld.red, fld.p)[: self.coeffs.shape[0]]
        return SeriesBall(self.params, self.val, self.prec, out)

    # -- ring ops --

    def __neg__(self):
        return SeriesBall(self.params, self.val, self.prec, (-self.coeffs) % self.params.p, _normalized=True)

    def __add__(self, other):
        a, b = _align(self, other)
        if a.is_exact_zero():
            return b
        if b.is_exact_zero():
            return a
        if a.prec is None and b.prec is None:
            lo = min(a.val, b.val)
            hi = max(a.val + a.coeffs.shape[0], b.val + b.coeffs.shape[0])
            arr = np.zeros((hi - lo, a.coeffs.shape[1]), dtype=np.int64)
            arr[a.val - lo : a.val - lo + a.coeffs.shape[0]] += a.coeffs
            arr[b.val - lo : b.val - lo + b.coeffs.shape[0]] += b.coeffs
            return SeriesBall(a.params, lo, None, arr % a.params.p)
        prec = min(p for p in (a.prec, b.prec) if p is not None)
        lo = min(a.val, b.val, prec)
        arr = np.zeros((prec - lo, a.params.field.deg), dtype=np.int64)
        for x in (a, b):
            n = min(x.coeffs.shape[0], prec - x.val)
            if n > 0:
                arr[x.val - lo : x.val - lo + n] += x.coeffs[:n]
        return SeriesBall(a.params, lo, prec, arr % a.params.p)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        a, b = _align(self, other)
        if a.is_exact_zero() or b.is_exact_zero():
            return SeriesBall.exact_zero(a.params)
        pa = None if a.prec is None else a.prec
        pb = None if b.prec is None else b.prec
        va = a.val
        vb = b.val
        cands = []
        if pa is not None:
            cands.append(pa + vb)
        if pb is not None:
            cands.append(pb + va)
        prec = min(cands) if cands else None
        if a.is_zero_ball() or b.is_zero_ball():
            return SeriesBall.zero_ball(a.params, prec)
        fld = a.params.field
        out = conv_mod(a.coeffs, b.coeffs, fld.red, fld.p)
        return SeriesBall(a.params, va + vb, prec, out if prec is None else out[: max(prec - va - vb, 0)])

    def inv(self, prec=None):
        """Multiplicative inverse.

        ``prec``: requested absolute precision of the result (Fraction),
        mandatory when inverting an exact non-monomial.
        """
        if self.is_zero_ball():
            raise InversionOfZeroBall("ball is indistinguishable from zero")
        fld = self.params.field
        if self.is_exact() and self.is_monomial():
            inv_c = fld.inv(self.coeffs[0])
            return SeriesBall(self.params, -self.val, None, inv_c.reshape(1, -1))
        if self.prec is None and prec is None:
            raise ValueError("precision required to invert an exact non-monomial")
        out_prec = None
        if self.prec is not None:
            out_prec = self.prec - 2 * self.val
        if prec is not None:
            pu = Fraction(prec) * self.params.e
            if pu.denominator != 1:
                raise ValueError("precision not representable at this ramification")
            pu = int(pu)
            out_prec = pu if out_prec is None else min(out_prec, pu)
        n_digits = out_prec + self.val
        if n_digits <= 0:
            raise PrecisionExhausted("inverse has no representable digits")
        lc_inv = fld.inv(self.coeffs[0])
        digits = series_inv(self.coeffs, fld.red, fld.p, lc_inv, n_digits)
        return SeriesBall(self.params, -self.val, out_prec, digits)

    def __truediv__(self, other):
        a, b = _align(self, other)
        hint = None
        if b.is_exact() and not b.is_monomial():
            if a.prec is None:
                raise ValueError("dividing exact series: pass an explicit inverse precision")
            hint = Fraction(a.prec - a.val - b.val, a.params.e)
        return a * b.inv(prec=hint)

    def __pow__(self, n):
        n = int(n)
        if n < 0:
            return self.inv() ** (-n)
        result = SeriesBall.one(self.params)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    def qpow(self, times=1):
        """q-th power Frobenius, applied ``times`` times; exact on balls."""
        out = self
        for _ in range(times):
            out = out._qpow_once()
        return out

    def _qpow_once(self):
        q = self.params.q
        fld = self.params.field
        frob = fld.frobenius_matrix(self.params.s)
        L = self.coeffs.shape[0]
        arr = np.zeros(((L - 1) * q + 1 if L else 0, fld.deg), dtype=np.int64)
        if L:
            arr[::q] = self.coeffs @ frob % self.params.p
        prec = None if self.prec is None else self.prec * q
        return SeriesBall(self.params, self.val * q, prec, arr)

    def inverse_qpow(self):
        """The unique q-th root (Frobenius is bijective); exact monomial support only
        when all indices are divisible by q."""
        q = self.params.q
        fld = self.params.field
        if self.val % q:
            raise ValueError("valuation not divisible by q; no root in this arena")
        L = self.coeffs.shape[0]
        idx = np.arange(L)
        if self.coeffs[idx % q != 0].any():
            raise ValueError("support not divisible by q; no root in this arena")
        frob_inv = fld.frobenius_matrix((fld.deg - self.params.s) % fld.deg if fld.deg > 1 else 0)
        arr = self.coeffs[::q] @ frob_inv % self.params.p
        prec = None if self.prec is None else -(-self.prec // q)
        return SeriesBall(self.params, self.val // q, prec, arr)

    def __repr__(self):
        if self.is_exact_zero():
            return "SeriesBall(0)"
        e = self.params.e
        if self.is_zero_ball():
            return f"SeriesBall(O(pi^{Fraction(self.prec, e)}))"
        terms = []
        for i, row in enumerate(self.coeffs[:6]):
            if row.any():
                c = self.params.field.encode(row)
                terms.append(f"[{c}]pi^{Fraction(self.val + i, e)}")
        tail = " + ..." if self.coeffs.shape[0] > 6 else ""
        prec = "" if self.prec is None else f" + O(pi^{Fraction(self.prec, e)})"
        return "SeriesBall(" + " + ".join(terms) + tail + prec + ")"

    # -- JSON --

    def to_json(self):
        e = self.params.e
        val = Fraction(self.val, e)
        out = {
            "q": self.params.q,
            "f": self.params.f,
            "e": e,
            "modulus": list(self.params.modulus),
            "val_num": val.numerator,
            "val_den": val.denominator,
            "coeffs": [[int(x) for x in row] for row in self.coeffs],
        }
        if self.prec is None:
            out["prec_num"] = None
            out["prec_den"] = None
        else:
            prec = Fraction(self.prec, e)
            out["prec_num"] = prec.numerator
            out["prec_den"] = prec.denominator
        return out

    @staticmethod
    def from_json(obj):
        params = FieldParams.make(obj["q"], obj["f"], obj["e"], tuple(obj["modulus"]))
        val = Fraction(obj["val_num"], obj["val_den"]) * params.e
        if val.denominator != 1:
            raise ValueError("valuation incompatible with ramification index")
        prec = None
        if obj.get("prec_num") is not None:
            prec = Fraction(obj["prec_num"], obj["prec_den"]) * params.e
            if prec.denominator != 1:
                raise ValueError("precision incompatible with ramification index")
            prec = int(prec)
        coeffs = np.array(obj["coeffs"], dtype=np.int64).reshape(len(obj["coeffs"]), -1)
        if coeffs.size == 0:
            coeffs = coeffs.reshape(0, params.field.deg)
        return SeriesBall(params, int(val), prec, coeffs)


def _normalize(params, val, prec, coeffs):
    L = coeffs.shape[0]
    if prec is not None and L > prec - val:
        coeffs = coeffs[: max(prec - val, 0)]
        L = coeffs.shape[0]
    nz = np.flatnonzero(coeffs.any(axis=1))
    if nz.size == 0:
        if prec is None:
            return params, 0, None, np.zeros((0, params.field.deg), dtype=np.int64)
        return params, prec, prec, np.zeros((0, params.field.deg), dtype=np.int64)
    lead = int(nz[0])
    val += lead
    coeffs = coeffs[lead:]
    if prec is None:
        coeffs = coeffs[: int(nz[-1]) - lead + 1]
    else:
        want = prec - val
        if coeffs.shape[0] < want:
            pad = np.zeros((want - coeffs.shape[0], coeffs.shape[1]), dtype=np.int64)
            coeffs = np.vstack([coeffs, pad])
    return params, val, prec, np.ascontiguousarray(coeffs)


def _align(a, b):
    pc = common_params(a.params, b.params)
    return a.embed(pc), b.embed(pc)


def ball_arith(op, x, y=None, prec=None):
    """Dispatcher over ball operations: add, mul, inv, neg, pow."""
    if op == "add":
        return x + y
    if op == "mul":
        return x * y
    if op == "neg":
        return -x
    if op == "inv":
        return x.inv(prec=prec)
    if op == "pow":
        return x**y
    raise ValueError(f"unknown ball operation {op!r}")


# ---------------------------------------------------------------------------
# distances to F_infty-rational spans


@dataclass(frozen=True)
class RationalSpan:
    """A tuple of balls certified F_infty-linearly independent."""

    basis: tuple

    @property
    def rank(self):
        return len(self.basis)


@dataclass(frozen=True)
class DistResult:
    """Distance outcome: exact magnitude, or an upper bound at the floor."""

    mag: QMag
    floor: bool  # True: distance only known to be <= mag (residual hit precision)

    def is_exact_zero(self):
        return self.mag.is_zero and not self.floor


def _fq_basis_in(field, q):
    """F_p-basis of the subfield of order q inside ``field``."""
    elems = field.subfield_elements(q)
    p, s = gf.prime_power_split(q)
    basis = []
    seen = []
    for a in elems:
        if not a.any():
            continue
        cand = seen + [a]
        if _rank_mod_p(np.array(cand), p) == len(cand):
            seen.append(a)
            basis.append(a)
        if len(basis) == s:
            break
    return basis


def _rank_mod_p(mat, p):
    mat = mat.copy() % p
    rows, cols = mat.shape
    r = 0
    for c in range(cols):
        piv = -1
        for rr in range(r, rows):
            if mat[rr, c]:
                piv = rr
                break
        if piv < 0:
            continue
        mat[[r, piv]] = mat[[piv, r]]
        inv = pow(int(mat[r, c]), p - 2, p)
        mat[r] = mat[r] * inv % p
        for rr in range(rows):
            if rr != r and mat[rr, c]:
                mat[rr] = (mat[rr] - mat[rr, c] * mat[r]) % p
        r += 1
    return r


def _solve_mod_p(cols, rhs, p):
    """Solve sum x_j cols[j] = rhs over F_p; returns x or None."""
    if not cols:
        return None if rhs.any() else []
    A = np.array(cols, dtype=np.int64).T % p
    b = rhs.copy() % p
    rows, ncols = A.shape
    aug = np.hstack([A, b.reshape(-1, 1)])
    pivots = []
    r = 0
    for c in range(ncols):
        piv = -1
        for rr in range(r, rows):
            if aug[rr, c]:
                piv = rr
                break
        if piv < 0:
            continue
        aug[[r, piv]] = aug[[piv, r]]
        inv = pow(int(aug[r, c]), p - 2, p)
        aug[r] = aug[r] * inv % p
        for rr in range(rows):
            if rr != r and aug[rr, c]:
                aug[rr] = (aug[rr] - aug[rr, c] * aug[r]) % p
        pivots.append(c)
        r += 1
    for rr in range(r, rows):
        if aug[rr, -1]:
            return None
    x = [0] * ncols
    for i, c in enumerate(pivots):
        x[c] = int(aug[i, -1])
    return x


class _SpanReducer:
    """Greedy leading-coefficient reduction against a span.

    mode "full": coefficients range over F_infty (rational distances);
    mode "integral": coefficients range over its valuation ring (used for
    the boundary-distance function of the period domain).

    ``prec`` caps exact inputs at a working precision; without a cap, an
    element lying in the span would be reduced digit by digit forever.
    """

    def __init__(self, basis, mode, prec=None, extra_params=None):
        self.mode = mode
        params = basis[0].params
        for b in basis[1:]:
            params = common_params(params, b.params)
        if extra_params is not None:
            params = common_params(params, extra_params)
        self.params = params
        self.fqb = _fq_basis_in(params.field, params.q)
        self.e = params.e
        self.p = params.p
        self.prec = Fraction(prec) if prec is not None else None
        if self.prec is None and all(b.is_exact() for b in basis):
            raise ValueError("working precision required when the span basis is exact")
        self.ortho = []
        import heapq

        heap = []
        for i, b in enumerate(basis):
            b = b.embed(params)
            if self.prec is not None:
                b = b.with_precision(self.prec)
            if b.is_exact_zero():
                raise ValueError("span basis contains zero")
            if b.is_zero_ball():
                raise PrecisionExhausted("span basis element indistinguishable from zero")
            heap.append((b.val, i, b))
        heapq.heapify(heap)
        self._heap = heap
        self._counter = len(basis)
        while self._heap:
            _, _, b = heapq.heappop(self._heap)
            combo = self._cancel_combo(b)
            if combo is None:
                self.ortho.append(b)
                continue
            b2 = b
            for o, shift, cvec in combo:
                b2 = b2 - o.shift(Fraction(shift, self.e)).scale(cvec)
            if b2.is_exact_zero():
                raise ValueError("span basis is linearly dependent")
            if b2.is_zero_ball():
                raise PrecisionExhausted("span basis dependent at working precision")
            heapq.heappush(self._heap, (b2.val, self._counter, b2))
            self._counter += 1

    def _cancel_combo(self, residual):
        """F_q-combination of shifted ortho elements cancelling the lead, or None."""
        v = residual.val
        cols = []
        labels = []
        for o in self.ortho:
            shift = v - o.val
            if shift % self.e:
                continue
            if self.mode == "integral" and shift < 0:
                continue
            for svec in self.fqb:
                cols.append(self.params.field.mul(svec, o.lead()))
                labels.append((o, shift, svec))
        sol = _solve_mod_p(cols, residual.lead(), self.p)
        if sol is None:
            return None
        combo = []
        for x, (o, shift, svec) in zip(sol, labels):
            if x:
                combo.append((o, shift, (x * svec) % self.p))
        return combo

    def distance(self, z):
        z = z.embed(self.params)
        if self.prec is not None:
            z = z.with_precision(self.prec)
        elif z.is_exact():
            raise ValueError("working precision required for an exact query point")
        while True:
            if z.is_exact_zero():
                return DistResult(QMag.zero(), floor=False)
            if z.is_zero_ball():
                return DistResult(QMag(Fraction(z.prec, self.e)), floor=True)
            combo = self._cancel_combo(z)
            if combo is None:
                return DistResult(QMag(Fraction(z.val, self.e)), floor=False)
            for o, shift, cvec in combo:
                z = z - o.shift(Fraction(shift, self.e)).scale(cvec)


def dist_to_rational_span(z, span, prec=None):
    """Distance from z to the F_infty-span of the basis.

    Returns a :class:`DistResult`; ``mag`` is exact unless ``floor`` is set,
    in which case the true distance is at most ``mag`` (z lies in the span
    at working precision).  ``prec`` caps the working precision and is
    mandatory when both z and the basis are exact.
    """
    basis = span.basis if isinstance(span, RationalSpan) else tuple(span)
    prec = _resolve_span_prec(list(basis) + [z], prec)
    red = _SpanReducer(list(basis), mode="full", prec=prec, extra_params=z.params)
    return red.distance(z)


def dist_to_integral_span(z, basis, prec=None):
    prec = _resolve_span_prec(list(basis) + [z], prec)
    red = _SpanReducer(list(basis), mode="integral", prec=prec, extra_params=z.params)
    return red.distance(z)


def _resolve_span_prec(balls, prec):
    if prec is not None:
        return Fraction(prec)
    finite = [b.precision() for b in balls if b.precision() is not None]
    return min(finite) if finite else None


# ---------------------------------------------------------------------------
# roots of unity


def root_of_unity(M, q, f_cap=8):
    """Exact element of order M in the smallest F_{q^f}, as a SeriesBall."""
    M = int(M)
    if M < 1:
        raise ValueError("order must be positive")
    p, _ = gf.prime_power_split(q)
    if M % p == 0:
        raise ValueError(f"order {M} not prime to the characteristic {p}")
    f = gf.minimal_extension_for_order(q, M, f_cap)
    if f is None:
        raise ValueError(f"no extension of degree <= {f_cap} contains mu_{M}")
    params = FieldParams.make(q, f)
    fld = params.field
    g = fld.multiplicative_generator()
    zeta = fld.pow(g, (fld.order - 1) // M)
    return SeriesBall.constant(params, zeta)


def balls_agree(a, b):
    """True when the two balls overlap: their difference contains zero."""
    return (a - b).contains_zero()


def dumps_ball(ball):
    return json.dumps(ball.to_json(), sort_keys=True)
