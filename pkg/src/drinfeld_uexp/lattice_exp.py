"""Exponentials of strongly discrete subgroups and their q-polynomials.

The exponential of a finite F_q-subspace is built by composing the
one-dimensional closed form w - w^q/c^(q-1) along a basis filtration of the
degree-truncated lattice, giving the exact exponential of the truncated
group.  Truncation errors relative to the full lattice are controlled by
the certified anchor bound |lam . anchor| >= |lam| q^(-mu), which yields an
explicit lower bound on omitted roots, hence on omitted product factors.

Inversion solves e(z) = target by Newton-polygon descent on the valuation
of the residual, which works at every scale of the target (the plain
iteration z -> z - (e(z) - target) is the special case where the constant
term of the polygon dominates).
"""

import math
import threading
from dataclasses import dataclass
from fractions import Fraction

from .errors import (
    EnumerationTooLarge,
    NoConvergence,
    OnLattice,
    PrecisionExhausted,
    RankMismatch,
)
from .funcfield import LatticeSpec, embed_poly
from .nonarch import QMag, SeriesBall, common_params


@dataclass(frozen=True)
class DiscreteGroup:
    """The strongly discrete subgroup {lam . anchor : lam in lattice}.

    ``mu`` certifies |lam . anchor| >= |lam| * q^(-mu) for every nonzero
    lam in F^k; for period-point anchors this is level + v(xi), for a
    single anchor z it is v(z) exactly.
    """

    lattice: LatticeSpec
    anchor: tuple
    mu: Fraction
    work_prec: Fraction

    @staticmethod
    def translation(lattice, omega_prime):
        """Lambda' acting on the tail coordinates of a period point."""
        xi_v = omega_prime.xi.valuation()
        return DiscreteGroup(
            lattice,
            tuple(omega_prime.entries),
            Fraction(omega_prime.certified_level) + xi_v,
            omega_prime.work_prec,
        )

    @staticmethod
    def full_rank(omega):
        """A omega_1 + ... + A omega_r for a certified point."""
        ring = _ring_of(omega)
        xi_v = omega.xi.valuation()
        return DiscreteGroup(
            LatticeSpec.standard(ring, omega.r),
            tuple(omega.entries),
            Fraction(omega.certified_level) + xi_v,
            omega.work_prec,
        )

    @staticmethod
    def line(z, ring, work_prec=None):
        """The rank-one subgroup A.z."""
        return DiscreteGroup(
            LatticeSpec.standard(ring, 1),
            (z,),
            z.valuation(),
            work_prec if work_prec is not None else (z.precision() or Fraction(24)),
        )

    def scaled_anchor(self, c):
        """The subgroup of c-scaled points: lattice . (c*anchor)."""
        return DiscreteGroup(
            self.lattice,
            tuple(c * a for a in self.anchor),
            self.mu - c.valuation(),
            self.work_prec,
        )

    def scaled_lattice(self, a):
        """(a * lattice) . anchor for a in F^x; mu is anchor-only, unchanged."""
        return DiscreteGroup(self.lattice.scaled(a), self.anchor, self.mu, self.work_prec)

    def cache_key(self):
        parts = [repr(self.lattice.to_json()), str(self.mu)]
        for a in self.anchor:
            parts.append(a.coeffs.tobytes().hex() + f":{a.val}:{a.prec}:{a.params.q}:{a.params.f}:{a.params.e}")
        return "|".join(parts)


class QPolynomial:
    """F_q-linear polynomial sum_j c_j z^(q^j) with ball coefficients."""

    def __init__(self, coeffs):
        self.coeffs = list(coeffs)

    def degree_index(self):
        return len(self.coeffs) - 1

    def eval(self, z, floor=None):
        """Value at z; ``floor`` caps the absolute precision carried along.

        Without a cap, the q-power stretching of deep terms would material-
        ize enormous digit arrays whose tails are far below any useful
        precision.
        """
        if floor is None:
            floor = _default_eval_floor(self.coeffs, z)
        return _eval_qpoly(self.coeffs, z, floor)

    def compose(self, inner):
        """self(inner(z)) as a QPolynomial."""
        n = len(self.coeffs) + len(inner.coeffs) - 1
        out = [None] * n
        for i, ci in enumerate(self.coeffs):
            for j, cj in enumerate(inner.coeffs):
                term = ci * cj.qpow(i)
                k = i + j
                out[k] = term if out[k] is None else out[k] + term
        return QPolynomial(out)

    def to_json(self):
        return {
            "q_degrees": list(range(len(self.coeffs))),
            "coeffs": [c.to_json() for c in self.coeffs],
        }

    @staticmethod
    def from_json(obj):
        return QPolynomial([SeriesBall.from_json(c) for c in obj["coeffs"]])


def _ring_of(point):
    from .funcfield import PolyRing

    return PolyRing.for_q(point.entries[0].params.q)


def _coeff_val_upper(c):
    """Valuation lower bound of a coefficient (prec for balls around zero)."""
    if c.is_exact_zero():
        return None
    return Fraction(c.val, c.params.e)


def _default_eval_floor(coeffs, z):
    vals = [v for v in (_coeff_val_upper(c) for c in coeffs) if v is not None]
    vz = Fraction(z.val, z.params.e)
    base = min(v + vz for v in vals) if vals else vz
    precs = [c.precision() for c in coeffs if c.precision() is not None]
    if z.precision() is not None:
        precs.append(z.precision())
    return min(precs) if precs else base + 32


def _eval_qpoly(coeffs, z, floor):
    """sum c_j z^(q^j) carried to absolute precision ``floor``.

    The running power is truncated as aggressively as the remaining terms
    allow: q-powers multiply precision by q, so the cap at step j is the
    max over future steps j' of (floor - v(c_j')) / q^(j'-j).
    """
    floor = Fraction(floor)
    q = z.params.q
    needs = []
    for c in coeffs:
        v = _coeff_val_upper(c)
        needs.append(None if v is None else floor - v)
    caps = [None] * len(coeffs)
    running = None
    for j in range(len(coeffs) - 1, -1, -1):
        if running is not None:
            running = running / q
        if needs[j] is not None:
            running = needs[j] if running is None else max(running, needs[j])
        caps[j] = running
    acc = None
    power = z
    for j, c in enumerate(coeffs):
        if j > 0:
            power = power.qpow()
        cap = caps[j]
        if cap is not None:
            cap_units = math.ceil(cap * power.params.e)
            cap = Fraction(cap_units, power.params.e)
            if power.prec is None or Fraction(power.prec, power.params.e) > cap:
                power = power.with_precision(cap)
        term = c * power
        acc = term if acc is None else acc + term
    return acc if acc is not None else z


class ExpEngine:
    """Composed exponential of degree-truncated subgroups, cached per group."""

    def __init__(self, group):
        self.group = group
        ring = group.lattice.ring
        self.ring = ring
        self.q = ring.q
        rows, den = group.lattice.reduced_rows()
        self.rows = rows
        self.den = den
        self.rowdeg = [max(p.deg() for p in row) for row in rows]
        params = group.anchor[0].params
        for a in group.anchor[1:]:
            params = common_params(params, a.params)
        self.params = params
        self.anchor = [a.embed(params) for a in group.anchor]
        self.anchor_max_v = min(a.valuation() for a in self.anchor)  # -log of max |anchor_i|
        # exponential state: coefficients of e for the composed subgroup
        self.E = [SeriesBall.one(params)]
        self.composed_deg = None  # largest vector degree composed, None = empty
        self.dim = 0
        self._lock = threading.Lock()

    # -- lattice bookkeeping --

    def shell_vectors(self, d):
        """Basis vectors t^m g_i / den of degree exactly d, deterministic order."""
        out = []
        for i, row in enumerate(self.rows):
            m = d + self.den.deg() - self.rowdeg[i]
            if m >= 0:
                num = [p.shift(m) for p in row]
                out.append((i, [self.ring.rat(x, self.den) for x in num]))
        return [vec for _, vec in sorted(out, key=lambda t: t[0])]

    def count_leq(self, d):
        """Number of lattice vectors of degree <= d (including zero)."""
        total = 1
        for rd in self.rowdeg:
            c = d + self.den.deg() - rd
            if c >= 0:
                total *= self.q ** (c + 1)
        return total

    def dim_leq(self, d):
        """F_q-dimension of the ball of degree <= d (= composition steps)."""
        return sum(max(0, d + self.den.deg() - rd + 1) for rd in self.rowdeg)

    def min_degree(self):
        return min(self.rowdeg) - self.den.deg()

    def anchor_value(self, vec):
        acc = None
        for x, a in zip(vec, self.anchor):
            if x.is_zero():
                continue
            term = x.embed(self.params, prec=self.group.work_prec) * a
            acc = term if acc is None else acc + term
        return acc

    # -- composition --

    DIM_CAP = 512

    def extend_to(self, d, enum_cap=400000):
        """Compose all basis vectors of degree <= d."""
        with self._lock:
            if self.composed_deg is not None and self.composed_deg >= d:
                return
            if self.dim_leq(d) > self.DIM_CAP:
                raise EnumerationTooLarge(
                    f"exponential ball of degree {d} needs {self.dim_leq(d)} compositions"
                )
            start = self.min_degree() if self.composed_deg is None else self.composed_deg + 1
            for dd in range(start, d + 1):
                for vec in self.shell_vectors(dd):
                    self._compose_one(vec)
            self.composed_deg = d

    def _compose_one(self, vec):
        x = self.anchor_value(vec)
        floor = self.phi_val(x.valuation()) + self.group.work_prec
        c = self.E_eval_locked(x, floor)
        if c.contains_zero():
            raise PrecisionExhausted("exponential of a new basis vector vanished")
        if c.is_exact():
            # keep work_prec relative digits before inverting
            c = c.with_precision(c.valuation() + self.group.work_prec)
        cpow = c ** (self.q - 1)
        factor = -cpow.inv()
        newE = list(self.E) + [None]
        for j in range(len(self.E), 0, -1):
            prev = self.E[j - 1].qpow() * factor
            newE[j] = prev if j >= len(self.E) else self.E[j] + prev
        self.E = newE
        self.dim += 1

    def phi_val(self, v_z):
        """Valuation of the dominant term of E at points of valuation v_z."""
        best = None
        for j, c in enumerate(self.E):
            vc = _coeff_val_upper(c)
            if vc is None:
                continue
            v = vc + self.q**j * v_z
            if best is None or v < best:
                best = v
        return best if best is not None else v_z

    def E_eval_locked(self, z, floor):
        return _eval_qpoly(self.E, z, floor)

    # -- error control --

    def tail_valuation_bound(self, d_next):
        """Lower bound on v-exponent of corrections from vectors of degree >= d_next.

        Every omitted vector v satisfies |e_{H_D}(v . anchor)| >= q^(-v_LB)
        with v_LB computed from the certified anchor bound; the correction to
        any stored coefficient is then at most M^q / |c|^(q-1).
        """
        mu = self.group.mu
        a_log = -self.anchor_max_v  # log_q of max anchor magnitude
        v_lb = mu - d_next
        dmin = self.min_degree()
        for dp in range(dmin, (self.composed_deg if self.composed_deg is not None else dmin - 1) + 1):
            cnt = self.count_leq(dp) - self.count_leq(dp - 1)
            if cnt <= 0:
                continue
            penalty = mu + a_log + dp - d_next
            if penalty > 0:
                v_lb += cnt * penalty
        v_min_e = min(
            (c.valuation() for c in self.E if not c.contains_zero()),
            default=Fraction(0),
        )
        return self.q * v_min_e - (self.q - 1) * v_lb

    def series(self, j_max, tol_exp, enum_cap=400000):
        """First j_max+1 coefficients with tail corrections below q^(-tol_exp)."""
        d = self.min_degree() if self.composed_deg is None else self.composed_deg
        d = max(d, self.min_degree())
        while True:
            self.extend_to(d, enum_cap=enum_cap)
            if self.tail_valuation_bound(d + 1) >= tol_exp:
                break
            d += 1
        cap = self.tail_valuation_bound(self.composed_deg + 1)
        cap_units = int(math.floor(cap * self.params.e))
        out = []
        for j in range(j_max + 1):
            if j < len(self.E):
                out.append(self.E[j].with_precision(min(cap, _prec_of(self.E[j]))))
            else:
                out.append(SeriesBall.zero_ball(self.params, cap_units))
        return QPolynomial(out)

    def eval(self, z, rel_tol_exp, enum_cap=400000):
        """e_H(z) with relative error below q^(-rel_tol_exp)."""
        if z.contains_zero():
            return z
        v_z = z.valuation()
        # omitted factors differ from 1 by |z| / (|v| q^-mu), |v| > q^D
        d_need = math.ceil(self.group.mu - v_z + rel_tol_exp) + 1
        d_need = max(d_need, self.min_degree())
        self.extend_to(d_need, enum_cap=enum_cap)
        with self._lock:
            floor = self.phi_val(v_z) + rel_tol_exp + 2
            value = self.E_eval_locked(z, floor)
        if value.contains_zero():
            return value
        return value.with_precision(value.valuation() + rel_tol_exp)


def _prec_of(ball):
    p = ball.precision()
    return p if p is not None else Fraction(10**9)


_ENGINES = {}
_ENGINES_LOCK = threading.Lock()


def engine_for(group):
    key = group.cache_key()
    with _ENGINES_LOCK:
        eng = _ENGINES.get(key)
        if eng is None:
            eng = ExpEngine(group)
            _ENGINES[key] = eng
        return eng


def exp_eval(group, z, rel_tol_exp, enum_cap=400000):
    """Value of the exponential of the subgroup at z (relative tolerance)."""
    return engine_for(group).eval(z, rel_tol_exp, enum_cap=enum_cap)


def exp_series(group, j_max, tol_exp, enum_cap=400000):
    """Coefficients e_{q^0}, ..., e_{q^j_max} of the exponential."""
    return engine_for(group).series(j_max, tol_exp, enum_cap=enum_cap)


def u_param(omega, lattice):
    """1/e_{Lambda' omega'}(omega_1); the local parameter at the boundary."""
    group = DiscreteGroup.translation(lattice, omega.omega_prime())
    tol = omega.work_prec
    value = exp_eval(group, omega.entries[0], tol)
    if value.contains_zero():
        raise OnLattice("omega_1 lies on Lambda' omega' at working precision")
    return value.inv()


def exp_invert(group, target, seed=None, max_steps=None, enum_cap=400000, e_cap=8):
    """Solve e_H(z) = target to the precision floor.

    With ``seed`` the plain contraction z <- z - (e(z) - target) is used and
    must start inside the contraction region.  Without a seed the solution
    is grown digit by digit along the Newton polygon of the exponential,
    which handles targets of any magnitude; preimages may need ramification
    up to ``e_cap`` (beyond it the solve reports NoConvergence).
    """
    eng = engine_for(group)
    if target.contains_zero():
        return target
    v_t = target.valuation()
    tol = group.work_prec
    if seed is not None:
        z = seed
        last_v = None
        for _ in range(max_steps or 64):
            res = eng.eval(z, tol - min(v_t, Fraction(0)), enum_cap=enum_cap) - target
            if res.contains_zero():
                return z
            if last_v is not None and res.valuation() <= last_v:
                raise NoConvergence("residual stopped shrinking; seed outside the contraction region")
            last_v = res.valuation()
            z = z - res
        raise NoConvergence("contraction from the provided seed did not reach the floor")
    # polygon descent
    d_need = max(eng.min_degree() + 1, math.ceil(eng.group.mu - v_t + 2))
    eng.extend_to(d_need, enum_cap=enum_cap)
    params = eng.params
    z = None
    max_steps = max_steps or 4 * int((tol - v_t + 8) * params.e) + 32
    for _ in range(max_steps):
        if z is None:
            residual = target
        else:
            value = eng.eval(z, tol + abs(v_t) + 8, enum_cap=enum_cap)
            residual = target - value
        if residual.contains_zero():
            return z if z is not None else SeriesBall.zero_ball(params, int(tol * params.e))
        corr = _polygon_step(eng, list(eng.E), residual, e_cap)
        z = corr if z is None else z + corr
        # widen the composed ball if the solution grew beyond the safe zone
        v_z = z.valuation()
        d2 = math.ceil(eng.group.mu - v_z + tol) + 1
        if eng.composed_deg < d2:
            eng.extend_to(d2, enum_cap=enum_cap)
    raise NoConvergence("polygon descent did not reach the precision floor")


def _polygon_step(eng, E, residual, e_cap):
    """Monomial correction cancelling the residual's leading term."""
    params = common_params(residual.params, eng.params)
    q = eng.q
    v_r = residual.valuation()
    cands = []
    for j, c in enumerate(E):
        if c.contains_zero():
            continue
        cands.append((Fraction(v_r - c.valuation(), q**j), j))
    if not cands:
        raise NoConvergence("no usable polygon terms")
    v_c = max(x[0] for x in cands)
    ties = [j for (v, j) in cands if v == v_c]
    # a truncated coefficient must not be able to dominate the chosen slope
    for j, c in enumerate(E):
        if not c.contains_zero():
            continue
        bound_v = c.magnitude_upper()
        if not bound_v.is_zero and bound_v.v + q**j * v_c <= v_r:
            raise PrecisionExhausted("polygon slope masked by a truncated coefficient")
    e_new = _lcm(params.e, v_c.denominator)
    if e_new > e_cap:
        raise NoConvergence(f"preimage needs ramification e={e_new} beyond the cap {e_cap}")
    if e_new != params.e:
        from .nonarch import FieldParams

        params2 = FieldParams.make(params.q, params.f, e_new)
    else:
        params2 = params
    fld = params2.field
    r_emb = residual.embed(params2)
    lead_r = r_emb.lead()
    if len(ties) == 1:
        j0 = ties[0]
        lead_e = E[j0].embed(params2).lead()
        rhs = fld.mul(lead_r, fld.inv(lead_e))
        # solve c^(q^j0) = rhs by inverse Frobenius
        s = params2.s
        k = ((fld.deg - s) % fld.deg) * j0 % fld.deg if fld.deg > 1 else 0
        sol = fld.pow(rhs, params2.p**k) if fld.deg > 1 else rhs
    else:
        sol = None
        for n in range(1, fld.order):
            cand = fld.decode(n)
            acc = fld.zero.copy()
            for j in ties:
                lead_e = E[j].embed(params2).lead()
                acc = (acc + fld.mul(lead_e, fld.pow(cand, q**j))) % params2.p
            if (acc == lead_r % params2.p).all():
                sol = cand
                break
        if sol is None:
            raise NoConvergence("polygon vertex equation has no root in the working field")
    return SeriesBall.from_terms(params2, {v_c: sol})


def _lcm(a, b):
    return a * b // math.gcd(a, b)


def drinfeld_module(omega, a, tol_exp, extra_checks=2, enum_cap=400000):
    """phi_a of the rank-r lattice A omega_1 + ... + A omega_r.

    Coefficients are solved degree by degree from phi_a(e(z)) = e(az); the
    result has exactly 1 + r*deg(a) coefficients, and the next
    ``extra_checks`` coefficients are verified to vanish at tolerance.
    """
    group = DiscreteGroup.full_rank(omega)
    r = omega.r
    ring = group.lattice.ring
    a = ring.parse(a) if isinstance(a, str) else a
    deg_total = r * a.deg()
    series = exp_series(group, deg_total + extra_checks, tol_exp, enum_cap=enum_cap)
    params = series.coeffs[0].params
    a_ball = embed_poly(a, params)
    phi = [a_ball]
    for m in range(1, deg_total + extra_checks + 1):
        acc = series.coeffs[m] * a_ball.qpow(m)
        for i in range(m):
            if m - i < len(series.coeffs):
                acc = acc - phi[i] * series.coeffs[m - i].qpow(i)
        phi.append(acc)
    for m in range(deg_total + 1, deg_total + extra_checks + 1):
        coeff = phi[m]
        if not coeff.contains_zero() and coeff.valuation() < tol_exp:
            raise RankMismatch(
                f"phi_a coefficient at q-degree {m} is above tolerance; lattice rank mismatch"
            )
    top = phi[deg_total]
    if top.contains_zero():
        raise PrecisionExhausted("top Drinfeld coefficient vanished at working precision")
    return QPolynomial(phi[: deg_total + 1])
