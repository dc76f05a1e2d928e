"""Finite fields F_p[x]/(m) with deterministic towers and embeddings.

Field elements are ``int64`` digit vectors of length ``deg(m)``.  Fields are
cached per ``(p, modulus)``; the canonical modulus of each degree is the
lexicographically smallest monic irreducible, so towers are reproducible
across runs.  Embeddings between canonical fields are chosen compatibly: the
map F_{p^a} -> F_{p^c} agrees with going through any intermediate F_{p^b}.
"""

import threading
from functools import lru_cache

import numpy as np

from ._kernels import conv_mod

_REGISTRY_LOCK = threading.Lock()
_FIELD_CACHE = {}
_EMBED_CACHE = {}

ENUM_FIELD_CAP = 1 << 14  # largest field order we will scan exhaustively


def _is_prime(n):
    if n < 2:
        return False
    i = 2
    while i * i <= n:
        if n % i == 0:
            return False
        i += 1
    return True


def prime_power_split(q):
    """Return (p, s) with q = p**s, p prime."""
    for p in range(2, q + 1):
        if _is_prime(p):
            s = 0
            m = q
            while m % p == 0:
                m //= p
                s += 1
            if m == 1 and s >= 1:
                return p, s
            if q % p == 0:
                break
    raise ValueError(f"{q} is not a prime power")


def _poly_mul_mod_p(a, b, p):
    return np.convolve(a, b) % p


def _poly_divmod(a, b, p):
    a = np.array(a, dtype=np.int64) % p
    b = np.array(b, dtype=np.int64) % p
    db = len(b) - 1
    while db > 0 and b[db] == 0:
        db -= 1
    inv_lead = pow(int(b[db]), p - 2, p)
    q = np.zeros(max(len(a) - db, 1), dtype=np.int64)
    r = a.copy()
    for i in range(len(r) - 1 - db, -1, -1):
        c = r[i + db] * inv_lead % p
        if c:
            q[i] = c
            r[i : i + db + 1] = (r[i : i + db + 1] - c * b[: db + 1]) % p
    return q, r[:db] if db > 0 else np.zeros(0, dtype=np.int64)


def _poly_pow_mod(base, n, mod, p):
    result = np.array([1], dtype=np.int64)
    base = _poly_divmod(base, mod, p)[1]
    while n:
        if n & 1:
            result = _poly_divmod(_poly_mul_mod_p(result, base, p), mod, p)[1]
            if len(result) == 0:
                result = np.array([0], dtype=np.int64)
        base = _poly_divmod(_poly_mul_mod_p(base, base, p), mod, p)[1]
        if len(base) == 0:
            base = np.array([0], dtype=np.int64)
        n >>= 1
    return result


def _poly_gcd(a, b, p):
    a = np.trim_zeros(np.asarray(a) % p, "b")
    b = np.trim_zeros(np.asarray(b) % p, "b")
    while len(b):
        _, r = _poly_divmod(a, b, p)
        a, b = b, np.trim_zeros(r, "b")
    return a


def _is_irreducible(m, p):
    # Rabin test: x^(p^d) == x mod m, and x^(p^(d/l)) - x coprime to m
    d = len(m) - 1
    x = np.array([0, 1], dtype=np.int64)
    xpd = _poly_pow_mod(x, p**d, m, p)
    diff = np.zeros(max(len(xpd), 2), dtype=np.int64)
    diff[: len(xpd)] = xpd
    diff[1] = (diff[1] - 1) % p
    if len(np.trim_zeros(diff, "b")):
        return False
    for l in {f for f in range(2, d + 1) if d % f == 0 and _is_prime(f)}:
        xe = _poly_pow_mod(x, p ** (d // l), m, p)
        diff = np.zeros(max(len(xe), 2), dtype=np.int64)
        diff[: len(xe)] = xe
        diff[1] = (diff[1] - 1) % p
        g = _poly_gcd(diff, m, p)
        if len(g) - 1 > 0:
            return False
    return True


@lru_cache(maxsize=None)
def smallest_irreducible(p, d):
    """Lexicographically smallest monic irreducible of degree d over F_p."""
    if d == 1:
        return (0, 1)
    for n in range(p**d):
        digits = []
        m = n
        for _ in range(d):
            digits.append(m % p)
            m //= p
        cand = np.array(digits + [1], dtype=np.int64)
        if _is_irreducible(cand, p):
            return tuple(int(c) for c in cand)
    raise RuntimeError("no irreducible found")  # unreachable


class GF:
    """The field F_p[x]/(modulus); elements are digit vectors length deg."""

    def __init__(self, p, modulus):
        self.p = int(p)
        self.modulus = np.array(modulus, dtype=np.int64)
        self.deg = len(self.modulus) - 1
        self.order = self.p**self.deg
        d = self.deg
        # red[m] = x^m mod modulus, for m = 0 .. 2d-2
        red = np.zeros((max(2 * d - 1, 1), d), dtype=np.int64)
        cur = np.zeros(d, dtype=np.int64)
        cur[0] = 1
        for m in range(2 * d - 1):
            red[m] = cur
            cur = np.roll(cur, 1)
            top = cur[0]
            cur[0] = 0
            if top:
                cur = (cur - top * self.modulus[:d]) % self.p
        self.red = red
        self.zero = np.zeros(d, dtype=np.int64)
        self.one = np.zeros(d, dtype=np.int64)
        self.one[0] = 1
        self._lock = threading.Lock()
        self._gen = None
        self._subfields = {}
        self._frob = {}

    def __repr__(self):
        return f"GF({self.p}^{self.deg})"

    def key(self):
        return (self.p, tuple(int(c) for c in self.modulus))

    # -- element arithmetic (digit vectors) --

    def mul(self, a, b):
        return conv_mod(a.reshape(1, -1), b.reshape(1, -1), self.red, self.p)[0]

    def pow(self, a, n):
        n = int(n)
        if n < 0:
            return self.pow(self.inv(a), -n)
        result = self.one.copy()
        base = a % self.p
        while n:
            if n & 1:
                result = self.mul(result, base)
            base = self.mul(base, base)
            n >>= 1
        return result

    def inv(self, a):
        if not a.any():
            raise ZeroDivisionError("inverse of zero field element")
        return self.pow(a, self.order - 2)

    def encode(self, a):
        n = 0
        for digit in a[::-1]:
            n = n * self.p + int(digit)
        return n

    def decode(self, n):
        out = np.zeros(self.deg, dtype=np.int64)
        for i in range(self.deg):
            out[i] = n % self.p
            n //= self.p
        return out

    def elements(self):
        if self.order > ENUM_FIELD_CAP:
            raise ValueError(f"field of order {self.order} too large to enumerate")
        return (self.decode(n) for n in range(self.order))

    def eval_poly(self, coeffs, a):
        """Evaluate a polynomial with F_p coefficients at field element a."""
        acc = self.zero.copy()
        for c in coeffs[::-1]:
            acc = self.mul(acc, a)
            acc[0] = (acc[0] + int(c)) % self.p
        return acc

    def frobenius_matrix(self, k=1):
        """Matrix of the F_p-linear map a -> a^(p^k), rows = basis images."""
        k = k % self.deg if self.deg > 1 else 0
        with self._lock:
            if k not in self._frob:
                mat = np.zeros((self.deg, self.deg), dtype=np.int64)
                for i in range(self.deg):
                    e = np.zeros(self.deg, dtype=np.int64)
                    e[i] = 1
                    mat[i] = self.pow(e, self.p**k)
                self._frob[k] = mat
            return self._frob[k]

    def subfield_elements(self, q):
        """All elements of the subfield of order q, sorted by encoding."""
        p, s = prime_power_split(q)
        if p != self.p or self.deg % s != 0:
            raise ValueError(f"no subfield of order {q} in {self!r}")
        with self._lock:
            if q in self._subfields:
                return self._subfields[q]
        # kernel of Frob^s - id over F_p
        mat = (self.frobenius_matrix(s) - np.eye(self.deg, dtype=np.int64)) % self.p
        basis = _nullspace_mod_p(mat.T, self.p)
        assert len(basis) == s
        elems = []
        for n in range(p**s):
            acc = np.zeros(self.deg, dtype=np.int64)
            m = n
            for vec in basis:
                acc = (acc + (m % p) * vec) % self.p
                m //= p
            elems.append(acc)
        elems.sort(key=self.encode)
        with self._lock:
            self._subfields[q] = elems
        return elems

    def element_order(self, a):
        if not a.any():
            raise ValueError("zero element")
        n = self.order - 1
        order = n
        for f in _prime_factors(n):
            while order % f == 0 and np.array_equal(self.pow(a, order // f), self.one):
                order //= f
        return order

    def multiplicative_generator(self):
        with self._lock:
            if self._gen is not None:
                return self._gen
        for n in range(1, self.order):
            a = self.decode(n)
            if self.element_order(a) == self.order - 1:
                with self._lock:
                    self._gen = a
                return a
        raise RuntimeError("no generator found")  # unreachable


def _prime_factors(n):
    out = []
    f = 2
    while f * f <= n:
        if n % f == 0:
            out.append(f)
            while n % f == 0:
                n //= f
        f += 1
    if n > 1:
        out.append(n)
    return out


def _nullspace_mod_p(mat, p):
    """Basis of the right nullspace of ``mat`` over F_p (column vectors)."""
    mat = mat.copy() % p
    rows, cols = mat.shape
    pivots = {}
    r = 0
    for c in range(cols):
        pivot = -1
        for rr in range(r, rows):
            if mat[rr, c] % p:
                pivot = rr
                break
        if pivot < 0:
            continue
        mat[[r, pivot]] = mat[[pivot, r]]
        inv = pow(int(mat[r, c]), p - 2, p)
        mat[r] = mat[r] * inv % p
        for rr in range(rows):
            if rr != r and mat[rr, c]:
                mat[rr] = (mat[rr] - mat[rr, c] * mat[r]) % p
        pivots[c] = r
        r += 1
    basis = []
    free = [c for c in range(cols) if c not in pivots]
    for fc in free:
        vec = np.zeros(cols, dtype=np.int64)
        vec[fc] = 1
        for c, rr in pivots.items():
            vec[c] = (-mat[rr, fc]) % p
        basis.append(vec)
    return basis


def canonical_field(p, deg):
    key = (p, deg)
    with _REGISTRY_LOCK:
        if key in _FIELD_CACHE:
            return _FIELD_CACHE[key]
    field = GF(p, smallest_irreducible(p, deg))
    with _REGISTRY_LOCK:
        _FIELD_CACHE.setdefault(key, field)
        return _FIELD_CACHE[key]


def field_for_modulus(p, modulus):
    key = (p, tuple(int(c) for c in modulus))
    with _REGISTRY_LOCK:
        if key in _FIELD_CACHE:
            return _FIELD_CACHE[key]
    field = GF(p, modulus)
    with _REGISTRY_LOCK:
        _FIELD_CACHE.setdefault(key, field)
        return _FIELD_CACHE[key]


def embedding_matrix(src, dst):
    """F_p-linear matrix of the chosen embedding src -> dst, rows = images.

    For canonical fields the choice is compatible with all intermediate
    canonical fields: embedding through F_{p^b} agrees with the direct map.
    """
    if src.p != dst.p:
        raise ValueError("different characteristics")
    if dst.deg % src.deg != 0:
        raise ValueError(f"{src!r} does not embed into {dst!r}")
    key = (src.key(), dst.key())
    with _REGISTRY_LOCK:
        if key in _EMBED_CACHE:
            return _EMBED_CACHE[key]
    if src.deg == dst.deg:
        if src.key() != dst.key():
            raise ValueError("distinct moduli of equal degree; no canonical map")
        mat = np.eye(src.deg, dtype=np.int64)
    else:
        mat = _find_embedding(src, dst)
    with _REGISTRY_LOCK:
        _EMBED_CACHE.setdefault(key, mat)
        return _EMBED_CACHE[key]


def _find_embedding(src, dst):
    p = src.p
    roots = []
    for a in dst.elements():
        if not dst.eval_poly(src.modulus, a).any():
            roots.append(a)
    if not roots:
        raise ValueError(f"{src!r} has no root in {dst!r}")
    # keep only roots compatible with embeddings of proper canonical subfields
    canon_src = canonical_field(p, src.deg)
    compatible = roots
    if src.key() == canon_src.key():
        for b in range(2, src.deg):
            if src.deg % b != 0:
                continue
            mid = canonical_field(p, b)
            to_src = embedding_matrix(mid, src)
            to_dst = embedding_matrix(mid, dst)
            gen_img_src = to_src[1] if b > 1 else None
            kept = []
            for root in compatible:
                img = _apply_root(gen_img_src, root, dst)
                if np.array_equal(img, to_dst[1]):
                    kept.append(root)
            compatible = kept or compatible
    root = min(compatible, key=dst.encode)
    mat = np.zeros((src.deg, dst.deg), dtype=np.int64)
    cur = dst.one.copy()
    for i in range(src.deg):
        mat[i] = cur
        cur = dst.mul(cur, root)
    return mat


def _apply_root(digits, root, dst):
    """Image in dst of the src element ``digits`` when x_src maps to root."""
    acc = dst.zero.copy()
    for c in digits[::-1]:
        acc = dst.mul(acc, root)
        acc[0] = (acc[0] + int(c)) % dst.p
    return acc


def minimal_extension_for_order(q, m, f_cap):
    """Smallest f <= f_cap with m | q^f - 1, or None."""
    for f in range(1, f_cap + 1):
        if (q**f - 1) % m == 0:
            return f
    return None
