"""Points of the rank-r period domain and the GL_r action on them.

A point is a column of balls with last entry exactly xi and entries
certified F_infty-linearly independent through membership in some
Omega^r_n.  The boundary-distance function h is computed exactly as a
minimum of integral-span distances, which realizes the threshold tests
h >= |pi|^n without enumerating unimodular forms.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import PrecisionExhausted
from .funcfield import GroupElem, embed_poly, poly_gcd
from .nonarch import (
    BORDERLINE,
    DistResult,
    QMag,
    SeriesBall,
    common_params,
    dist_to_integral_span,
    dist_to_rational_span,
)


@dataclass(frozen=True)
class NeighborhoodParams:
    """The region I(n, R_n): omega' in Omega^{r-1}_n and dist(omega_1, .) >= R_n."""

    n: int
    radius: QMag

    def __post_init__(self):
        if self.radius.is_zero:
            raise ValueError("neighborhood radius must be positive")


@dataclass(frozen=True)
class PeriodPoint:
    """omega in Omega^r, normalized so the last entry is exactly xi."""

    entries: tuple
    certified_level: int
    xi: SeriesBall
    work_prec: Fraction

    @property
    def r(self):
        return len(self.entries)

    @property
    def params(self):
        params = self.entries[0].params
        for x in self.entries[1:]:
            params = common_params(params, x.params)
        return params

    @staticmethod
    def create(entries, xi, work_prec, level_cap=16):
        entries = tuple(entries)
        if not entries:
            raise ValueError("empty point")
        if entries[-1] is not xi and not (entries[-1] - xi).is_exact_zero():
            raise ValueError("last entry must equal xi exactly")
        level = certify_level(entries, level_cap)
        return PeriodPoint(entries, level, xi, Fraction(work_prec))

    def omega_prime(self):
        """The lower-rank point (omega_2, ..., omega_r); keeps the level."""
        if self.r < 2:
            raise ValueError("no projection from rank 1")
        return PeriodPoint(self.entries[1:], self.certified_level, self.xi, self.work_prec)

    def norm(self):
        """|omega| = max |omega_i|."""
        return max(x.magnitude() for x in self.entries)

    def to_json(self):
        return {
            "entries": [x.to_json() for x in self.entries],
            "certified_level": self.certified_level,
            "xi": self.xi.to_json(),
        }

    @staticmethod
    def from_json(obj, work_prec):
        entries = tuple(SeriesBall.from_json(x) for x in obj["entries"])
        xi = SeriesBall.from_json(obj["xi"])
        return PeriodPoint(entries, int(obj["certified_level"]), xi, Fraction(work_prec))


def _auto_prec(entries, depth):
    """Working precision deep enough to settle comparisons at level ``depth``."""
    vmin = min(Fraction(x.val, x.params.e) for x in entries)
    vmax = max(Fraction(x.val, x.params.e) for x in entries)
    return max(Fraction(depth) + vmin + 4, vmax + 2)


def boundary_h(entries, prec=None):
    """The boundary-distance h(omega) as a DistResult (exact unless floored)."""
    entries = list(entries)
    if any(x.is_exact_zero() for x in entries):
        return DistResult(QMag.zero(), floor=False)
    if any(x.is_zero_ball() for x in entries):
        bound = min(x.magnitude_upper() for x in entries if x.is_zero_ball())
        norm = max(x.magnitude_upper() for x in entries)
        return DistResult(bound / norm, floor=True)
    norm = max(x.magnitude() for x in entries)
    if len(entries) == 1:
        return DistResult(entries[0].magnitude() / norm, floor=False)
    best = None
    floor = False
    for i, z in enumerate(entries):
        others = entries[:i] + entries[i + 1 :]
        d = dist_to_integral_span(z, others, prec=prec)
        if best is None or d.mag < best:
            best = d.mag
            floor = d.floor
        elif d.mag == best:
            floor = floor or d.floor
    return DistResult(best / norm, floor=floor)


def in_omega_n(entries, n, prec=None):
    """Decide h(omega) >= |pi|^n; returns True, False, or BORDERLINE."""
    entries = list(entries)
    if prec is None and all(x.is_exact() for x in entries):
        prec = _auto_prec([x for x in entries if not x.contains_zero()], n)
    h = boundary_h(entries, prec=prec)
    threshold = QMag.q_pow(-n)
    if h.mag < threshold:
        return False
    if not h.floor:
        return True
    return BORDERLINE


def certify_level(entries, cap, prec=None):
    """Smallest n >= 0 with omega in Omega^r_n, or raise."""
    entries = list(entries)
    if prec is None and all(x.is_exact() for x in entries):
        prec = _auto_prec([x for x in entries if not x.contains_zero()], cap)
    h = boundary_h(entries, prec=prec)
    if h.floor or h.mag.is_zero:
        raise PrecisionExhausted(
            "entries are F_infty-dependent at working precision; refusing the point"
        )
    n = max(0, math.ceil(h.mag.v))
    if n > cap:
        raise PrecisionExhausted(f"certified level {n} exceeds cap {cap}")
    return n


def in_neighborhood(point, params):
    """Membership of I(n, R_n); tri-state."""
    if point.r < 2:
        raise ValueError("neighborhoods need rank >= 2")
    verdict = in_omega_n(point.entries[1:], params.n, prec=point.work_prec)
    if verdict is False:
        return False
    d = dist_to_rational_span(point.entries[0], point.entries[1:], prec=point.work_prec)
    if d.mag < params.radius:
        return False
    if verdict is BORDERLINE or d.floor:
        return BORDERLINE
    return True


def _embedded_rows(gamma, params):
    """Embed gamma as (numerator balls, common denominator ball), both exact."""
    ring = gamma.ring
    den = ring.one
    for row in gamma.mat.rows:
        for x in row:
            den = den * x.den.divmod(poly_gcd(den, x.den))[0]
    nums = [[x.num * den.divmod(x.den)[0] for x in row] for row in gamma.mat.rows]
    return [[embed_poly(nm, params) for nm in row] for row in nums], embed_poly(den, params)


def _matrix_apply(gamma, point):
    params = point.params
    rows, den = _embedded_rows(gamma, params)
    out = []
    for row in rows:
        acc = row[0] * point.entries[0]
        for coef, omega in zip(row[1:], point.entries[1:]):
            acc = acc + coef * omega
        out.append(acc)
    return out, den


def j_factor(gamma, point, prec=None):
    """xi^{-1} times the last entry of gamma * omega."""
    w, den = _matrix_apply(gamma, point)
    last = w[-1]
    if last.is_zero_ball() or last.is_exact_zero():
        raise PrecisionExhausted("last entry of gamma*omega is indistinguishable from zero")
    prec = Fraction(prec) if prec is not None else point.work_prec
    denom = den * point.xi
    if denom.is_monomial() and last.is_exact():
        return last * denom.inv()
    if last.is_exact():
        last = last.with_precision(prec + last.valuation())
    return last / denom


def act(gamma, point, level_cap=16):
    """gamma(omega) = j^{-1} gamma omega, renormalized to last entry xi."""
    w, _ = _matrix_apply(gamma, point)
    last = w[-1]
    if last.is_zero_ball() or last.is_exact_zero():
        raise PrecisionExhausted("last entry of gamma*omega is indistinguishable from zero")
    vals = [x.valuation() for x in w if not x.contains_zero()]
    hint = point.work_prec - min(vals) + last.valuation()
    inv_last = last.inv(prec=hint) if last.is_exact() and not last.is_monomial() else last.inv()
    entries = [x * inv_last * point.xi for x in w[:-1]] + [point.xi]
    level = certify_level(entries, level_cap)
    return PeriodPoint(tuple(entries), level, point.xi, point.work_prec)


def gamma_bounds(gamma, xi_mag=None):
    """The explicit constants (c1, c2, c3) controlling h along gamma.

    c1 = |x^{-1} xi| for x a largest entry of the last row; c2 = c1 * c2'
    with c2' the largest entry magnitude of gamma; c3 = 1/(c2' c3') with c3'
    the largest entry magnitude of gamma^{-1}.
    """
    xi_mag = xi_mag or QMag.q_pow(0)
    last_row = gamma.mat.rows[-1]
    x = max(v.abs_mag() for v in last_row)
    c2p = gamma.mat.max_entry_mag()
    c3p = gamma.inv().mat.max_entry_mag()
    c1 = xi_mag / x
    c2 = c1 * c2p
    c3 = (c2p * c3p).inverse()
    return c1, c2, c3


def sample_period_points(rng, config, r, count, params=None):
    """Deterministic certified sample points from ramified/unramified tails.

    Entries are exact Laurent polynomials like pi^{-k} + a pi^{m + 1/2} with
    a drawn from F_{q^2}; redraws until certification succeeds.
    """
    from .nonarch import FieldParams

    params = params or FieldParams.make(config.q, f=2, e=2)
    xi = config.xi_ball(params)
    out = []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > 200 * count:
            raise PrecisionExhausted("sample generator failed to certify points")
        entries = []
        used_k = set()
        for i in range(r - 1):
            k = rng.randrange(1, 4)
            while (k, i % 2) in used_k:
                k += 1
            used_k.add((k, i % 2))
            m = rng.randrange(0, 2) + i
            a = rng.randrange(1, params.field.order)
            terms = {
                Fraction(-k): 1,
                Fraction(2 * m + 1, 2): params.field.decode(a),
            }
            if rng.random() < 0.5:
                terms[Fraction(0)] = rng.randrange(1, params.q)
            entries.append(SeriesBall.from_terms(params, terms))
        entries.append(xi)
        try:
            point = PeriodPoint.create(entries, xi, config.prec, level_cap=config.level_cap)
        except PrecisionExhausted:
            continue
        out.append(point)
    return out
