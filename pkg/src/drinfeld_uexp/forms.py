"""Form expressions, u-expansion extraction, transforms, and classification.

Eisenstein series are evaluated by partial fractions: the inner rank-one
sums over A omega_1 collapse to Goss-polynomial values of the reciprocal
exponential, so shells of the outer lattice decay superexponentially and a
certified next-shell bound stops the enumeration.

Extraction samples the boundary parameter on a circle of tower points
zeta^i c0 pi^(-V), evaluates u forward, and solves the window coefficients
from the resulting ultrametric Vandermonde system; aliasing is controlled
by re-extracting at a smaller radius and comparing.
"""

import itertools
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import (
    AliasingDetected,
    ComputationError,
    ConditionViolated,
    EnumerationTooLarge,
    Inconclusive,
    NoConvergence,
    PrecisionExhausted,
)
from .funcfield import (
    GroupElem,
    GroupSpec,
    LatticeSpec,
    PolyRing,
    block_diag,
    fq_constant,
    full_group_generators,
    gamma_data,
    hnf_reduce,
    iota,
    poly_gcd,
)
from .lattice_exp import DiscreteGroup, engine_for, exp_eval, u_param
from .nonarch import FieldParams, QMag, SeriesBall, balls_agree, common_params, root_of_unity
from .period_domain import PeriodPoint, act, j_factor


# ---------------------------------------------------------------------------
# form expressions


@dataclass(frozen=True)
class FormExpr:
    """AST for the forms the toolkit can evaluate and transform."""

    kind: str  # const | eisenstein | drinfeld | upower | sum | product | slashed
    weight: int
    type_m: int
    k: int = 0  # eisenstein weight / drinfeld index / u power
    value: object = None  # constant payload (RatFunc)
    parts: tuple = ()
    gamma: GroupElem = None

    @staticmethod
    def const(ring, c):
        c = c if not isinstance(c, (int, str)) else ring.rat(ring.parse(str(c)))
        return FormExpr(kind="const", weight=0, type_m=0, value=c)

    @staticmethod
    def eisenstein(k):
        return FormExpr(kind="eisenstein", weight=k, type_m=0, k=k)

    @staticmethod
    def drinfeld_coeff(q, i):
        return FormExpr(kind="drinfeld", weight=q**i - 1, type_m=0, k=i)

    @staticmethod
    def upower(n):
        return FormExpr(kind="upower", weight=0, type_m=0, k=n)

    @staticmethod
    def product(a, b):
        return FormExpr(
            kind="product",
            weight=a.weight + b.weight,
            type_m=a.type_m + b.type_m,
            parts=(a, b),
        )

    @staticmethod
    def sum(a, b):
        if (a.weight, a.type_m) != (b.weight, b.type_m):
            raise ValueError("sum of forms with mismatched weight or type")
        return FormExpr(kind="sum", weight=a.weight, type_m=a.type_m, parts=(a, b))

    def slashed(self, gamma, k, m):
        if (self.weight, self.type_m) != (k, m):
            raise ValueError("slash weight/type must match the form metadata")
        return FormExpr(kind="slashed", weight=k, type_m=m, parts=(self,), gamma=gamma)

    def describe(self):
        if self.kind == "const":
            return f"c({self.value})"
        if self.kind == "eisenstein":
            return f"E({self.k})"
        if self.kind == "drinfeld":
            return f"g({self.k})"
        if self.kind == "upower":
            return f"u({self.k})"
        if self.kind == "product":
            return "*".join(p.describe() for p in self.parts)
        if self.kind == "sum":
            return "+".join(p.describe() for p in self.parts)
        if self.kind == "slashed":
            return f"({self.parts[0].describe()})|gamma"
        return self.kind


def slash(f, gamma, k, m):
    """The right-action node; evaluation applies det^m j^{-k} f(gamma(omega))."""
    return f.slashed(gamma, k, m)


def parse_form(ring, text):
    """Parse 'E(2)*g(1)+c(1)' style expressions."""
    text = text.replace(" ", "")

    def parse_sum(s):
        depth = 0
        for i in range(len(s) - 1, -1, -1):
            ch = s[i]
            if ch == ")":
                depth += 1
            elif ch == "(":
                depth -= 1
            elif ch == "+" and depth == 0 and i > 0:
                return FormExpr.sum(parse_sum(s[:i]), parse_product(s[i + 1 :]))
        return parse_product(s)

    def parse_product(s):
        depth = 0
        for i in range(len(s) - 1, -1, -1):
            ch = s[i]
            if ch == ")":
                depth += 1
            elif ch == "(":
                depth -= 1
            elif ch == "*" and depth == 0 and i > 0:
                return FormExpr.product(parse_product(s[:i]), parse_atom(s[i + 1 :]))
        return parse_atom(s)

    def parse_atom(s):
        if not s or "(" not in s or not s.endswith(")"):
            raise ValueError(f"cannot parse form atom {s!r}")
        head, _, inner = s.partition("(")
        inner = inner[:-1]
        if head == "E":
            return FormExpr.eisenstein(int(inner))
        if head == "g":
            return FormExpr.drinfeld_coeff(ring.q, int(inner))
        if head == "u":
            return FormExpr.upower(int(inner))
        if head == "c":
            return FormExpr.const(ring, ring.rat(ring.parse(inner)))
        raise ValueError(f"unknown form atom {head!r}")

    return parse_sum(text)


# ---------------------------------------------------------------------------
# evaluation context


class EvalContext:
    """Holds the group data and caches used by form evaluation."""

    def __init__(self, config, gamma_spec):
        self.config = config
        self.gamma = gamma_spec
        self.ring = PolyRing.for_q(config.q)
        lat, levi, scal, deto = gamma_data(gamma_spec)
        self.lattice = lat
        self.levi = levi
        self.scalar_order = scal
        self.det_order = deto
        self._drinfeld = {}
        self._goss = {}
        self._lock = threading.Lock()

    def tol_exp(self):
        return self.config.tol_exp

    def drinfeld_coeffs(self, omega):
        key = tuple(x.coeffs.tobytes() for x in omega.entries) + (omega.entries[0].val,)
        with self._lock:
            cached = self._drinfeld.get(key)
        if cached is not None:
            return cached
        from .lattice_exp import drinfeld_module

        phi = drinfeld_module(omega, self.ring.t, self.tol_exp(), enum_cap=self.config.enum_cap)
        with self._lock:
            self._drinfeld.setdefault(key, phi)
        return phi

    def goss_coeffs(self, k, line_group):
        """Coefficients c_{k,j} with sum_h (z-h)^(-k) = sum_j c_{k,j} u^(j+1)."""
        key = (k, line_group.cache_key())
        with self._lock:
            cached = self._goss.get(key)
        if cached is not None:
            return cached
        j_needed = max(j for j in range(k) if _qpow_le(line_group.lattice.ring.q, j, k - 1)) if k > 1 else 0
        series = engine_for(line_group).series(j_needed, self.tol_exp() + k + 4, enum_cap=self.config.enum_cap)
        params = series.coeffs[0].params
        one = SeriesBall.one(params)
        zero = SeriesBall.exact_zero(params)
        # dense truncated polynomial of e(w) up to degree k-1
        e_dense = [zero] * k
        if k >= 1:
            q = params.q
            for j, c in enumerate(series.coeffs):
                if q**j <= k - 1:
                    e_dense[q**j] = c
        coeffs = []
        power = [one] + [zero] * (k - 1)  # e(w)^0
        for j in range(k):
            coeffs.append(power[k - 1])
            if j < k - 1:
                power = _poly_mul_trunc(power, e_dense, k)
        with self._lock:
            self._goss.setdefault(key, coeffs)
        return coeffs


def _qpow_le(q, j, bound):
    return q**j <= bound


def _poly_mul_trunc(a, b, n):
    out = [None] * n
    for i, x in enumerate(a):
        if x.is_exact_zero():
            continue
        for j, y in enumerate(b):
            if i + j >= n:
                break
            if y.is_exact_zero():
                continue
            t = x * y
            out[i + j] = t if out[i + j] is None else out[i + j] + t
    zero = SeriesBall.exact_zero(a[0].params)
    return [zero if c is None else c for c in out]


def _unit_power_sum(ring, k):
    """sum over alpha in F_q^x of alpha^(-k): -1 if (q-1) | k else 0, in F_p."""
    if (ring.q - 1) % 1 == 0 and k % (ring.q - 1) == 0:
        return -1
    return 0


# ---------------------------------------------------------------------------
# evaluation


def eval_form(f, omega, ctx, tol_exp=None):
    """Value of the form at a certified point."""
    tol = tol_exp if tol_exp is not None else ctx.tol_exp()
    if f.kind == "const":
        return f.value.embed(omega.params, prec=omega.work_prec)
    if f.kind == "sum":
        return eval_form(f.parts[0], omega, ctx, tol) + eval_form(f.parts[1], omega, ctx, tol)
    if f.kind == "product":
        return eval_form(f.parts[0], omega, ctx, tol) * eval_form(f.parts[1], omega, ctx, tol)
    if f.kind == "upower":
        u = u_param(omega, ctx.lattice)
        return u**f.k
    if f.kind == "drinfeld":
        phi = ctx.drinfeld_coeffs(omega)
        if f.k >= len(phi.coeffs):
            raise ValueError(f"phi_t has no coefficient at q-degree {f.k}")
        return phi.coeffs[f.k]
    if f.kind == "eisenstein":
        return eisenstein_value(f.k, omega, ctx, tol)
    if f.kind == "slashed":
        inner = f.parts[0]
        gamma = f.gamma
        moved = act(gamma, omega, level_cap=ctx.config.level_cap)
        jf = j_factor(gamma, omega)
        det = gamma.det().embed(omega.params, prec=omega.work_prec)
        val = eval_form(inner, moved, ctx, tol)
        return det**f.type_m * jf ** (-f.weight) * val
    raise ValueError(f"unknown form kind {f.kind}")


def eisenstein_value(k, omega, ctx, tol_exp):
    """sum over nonzero lam in A^r of (lam . omega)^(-k), by partial fractions."""
    if k < 1:
        raise ValueError("Eisenstein weight must be positive")
    ring = ctx.ring
    unit_sum = _unit_power_sum(ring, k)
    params = omega.params
    if unit_sum == 0:
        return SeriesBall.zero_ball(params, int(Fraction(tol_exp) * params.e))
    line = DiscreteGroup.line(omega.entries[0], ring, work_prec=omega.work_prec + 2 * k)
    goss = ctx.goss_coeffs(k, line)
    # lam' = 0 term: omega_1^(-k) * unit_sum * sum over monic a of a^(-k)
    zeta_val = _monic_power_sum(ring, k, params, tol_exp + max(0, -k * int(omega.entries[0].valuation())) + 2)
    omega1_inv_k = omega.entries[0].inv(prec=omega.work_prec) ** k
    total = zeta_val * omega1_inv_k
    if omega.r >= 2:
        total = total + _eisenstein_tail_shells(k, omega, ctx, tol_exp, line, goss)
    if unit_sum == -1:
        total = -total
    else:
        const = SeriesBall.from_terms(params, {0: unit_sum % params.p})
        total = const * total
    return total.with_precision(Fraction(tol_exp))


def _rank1_exp_lower_log(x_log, lam_deg, nq, w1, q):
    """Certified log_q lower bound on |e_{A omega_1}(x)| for x = lam' omega'.

    Factors |1 - x/(a omega_1)| with |a omega_1| < |x| contribute
    |x|/|a omega_1| > 1 (superexponentially many as lam_deg grows); factors
    on the circle |a omega_1| = |x| carry the certified floor
    |x - a omega_1| >= max(|lam'|, |a|) q^(-nq).
    """
    total = x_log
    d_equal = x_log - w1
    da = 0
    while Fraction(da) + w1 < x_log:
        cnt = (q - 1) * q**da
        total += cnt * (x_log - da - w1)
        da += 1
    if d_equal.denominator == 1 and d_equal >= 0:
        cnt = (q - 1) * q ** int(d_equal)
        total += cnt * (max(Fraction(lam_deg), d_equal) - nq - d_equal - w1)
    return total


def _eisenstein_tail_shells(k, omega, ctx, tol_exp, line, goss):
    """sum over nonzero lam' of G_k(u_{A omega_1}(lam' omega')), by shells."""
    ring = ctx.ring
    params = omega.params
    j_min = next(j for j, c in enumerate(goss) if not c.contains_zero())
    goss_vals = [(j, c.valuation()) for j, c in enumerate(goss) if not c.contains_zero()]
    lat = LatticeSpec.standard(ring, omega.r - 1)
    nq = Fraction(omega.certified_level) + omega.xi.valuation()
    w1 = -omega.entries[0].valuation()  # log_q |omega_1|
    q = ring.q
    tail = omega.entries[1:]
    tol = QMag(Fraction(tol_exp))

    def term_bound_v(e_lower_log):
        if e_lower_log <= 0:
            return None  # |u| bound >= 1: no usable estimate
        return min(vc + (j + 1) * e_lower_log for j, vc in goss_vals)

    total = None
    d = 0
    max_shell = 40
    while True:
        shell = [
            v
            for v in lat.enumerate(d, cap=ctx.config.enum_cap)
            if any(not x.is_zero() for x in v) and _deg_vec(v) == d
        ]
        shell_max = None
        for rep in _unit_orbit_reps(ring, shell):
            c_val = None
            for x, w in zip(rep, tail):
                term = x.embed(params, prec=omega.work_prec) * w
                c_val = term if c_val is None else c_val + term
            x_log = -c_val.valuation()
            bound_v = term_bound_v(_rank1_exp_lower_log(x_log, d, nq, w1, q))
            if bound_v is not None and bound_v > tol_exp:
                continue  # contribution certified below tolerance
            uval = exp_eval(line, c_val, tol_exp + k + 2, enum_cap=ctx.config.enum_cap)
            u = uval.inv()
            gval = None
            upow = u ** (j_min + 1)
            for j in range(j_min, len(goss)):
                if not goss[j].contains_zero():
                    term = goss[j] * upow
                    gval = term if gval is None else gval + term
                upow = upow * u
            total = gval if total is None else total + gval
            mag = gval.magnitude_upper()
            if shell_max is None or mag > shell_max:
                shell_max = mag
        # whole-shell a-priori bound at the minimal size |x| >= q^(d+1-nq)
        next_bound = term_bound_v(
            _rank1_exp_lower_log(Fraction(d + 1) - nq, d + 1, nq, w1, q)
        )
        if (shell_max is None or shell_max < tol) and next_bound is not None and next_bound > tol_exp:
            break
        d += 1
        if d > max_shell:
            raise EnumerationTooLarge("Eisenstein shells did not reach tolerance")
    if total is None:
        return SeriesBall.zero_ball(params, int(Fraction(tol_exp) * params.e))
    return total


def _deg_vec(vec):
    degs = [x.num.deg() - x.den.deg() for x in vec if not x.is_zero()]
    return max(degs) if degs else -(10**9)


def _unit_orbit_reps(ring, vectors):
    seen = set()
    reps = []
    units = ring.units()
    for v in vectors:
        key = min(
            tuple((u * x.num, x.den) for x in v)
            for u in units
        )
        hkey = tuple((p.c.tobytes(), p.c.shape[0], q.c.tobytes()) for p, q in key)
        if hkey in seen:
            continue
        seen.add(hkey)
        reps.append(v)
    return reps


_MONIC_CACHE = {}
_MONIC_LOCK = threading.Lock()


def _monic_power_sum(ring, k, params, tol_exp):
    """sum over monic a in A of a^(-k), to absolute precision q^(-tol_exp)."""
    key = (ring.q, k, params.q, params.f, params.e, int(tol_exp))
    with _MONIC_LOCK:
        if key in _MONIC_CACHE:
            return _MONIC_CACHE[key]
    from .funcfield import embed_poly

    total = SeriesBall.one(params)  # a = 1
    d = 1
    while True:
        shell_val = None
        for digits in itertools.product(ring.fq_elements(), repeat=d):
            a = ring.poly([0] * d + [1])
            for i, c in enumerate(digits):
                a = a + c.shift(i)
            term = embed_poly(a, params).inv(prec=Fraction(tol_exp) + k * d + 2) ** k
            shell_val = term if shell_val is None else shell_val + term
        total = total + shell_val
        if shell_val.contains_zero() or shell_val.valuation() > tol_exp:
            break
        d += 1
        if d > 24:
            raise EnumerationTooLarge("monic power sum did not reach tolerance")
    total = total.with_precision(Fraction(tol_exp))
    with _MONIC_LOCK:
        _MONIC_CACHE.setdefault(key, total)
    return total


# ---------------------------------------------------------------------------
# u-expansion extraction


@dataclass
class UExpansion:
    """Window of u-expansion coefficient values at a fixed lower-rank point."""

    omega_prime: PeriodPoint
    lattice: LatticeSpec
    window: tuple
    values: dict
    meta: dict = field(default_factory=dict)

    def leading(self, tol_exp=None):
        """(n, value) of the first window coefficient not containing zero."""
        for n in range(self.window[0], self.window[1] + 1):
            v = self.values[n]
            if not v.contains_zero():
                return n, v
        return None

    def to_json(self):
        return {
            "window": list(self.window),
            "values": {str(n): self.values[n].to_json() for n in sorted(self.values)},
            "meta": {
                "M": self.meta.get("M"),
                "radius_exp": str(self.meta.get("radius_exp")),
                "stability_checked": self.meta.get("stability_checked", False),
            },
            "omega_prime": self.omega_prime.to_json(),
        }


def auto_dft_order(q, span, f_cap, char):
    """Smallest sample count exceeding the window span, prime to char."""
    M = span + 1
    while M % char == 0:
        M += 1
    return M


def _circle_points(group, omega_prime, M, V, config, extra_exp=0):
    """M certified sample points c pi^(-V') with directions c outside F_q.

    A direction outside F_q keeps the point q^(V') away from every
    F_infty-rational line, so its boundary parameter is small and certified.
    When one field layer has fewer than M usable directions, further layers
    at radius V'+1, V'+2, ... are used.  ``extra_exp`` adds working digits
    for the downstream linear solve.
    """
    q = config.q
    f_use = next((f for f in range(2, config.f_cap + 1) if q**f - q >= M), config.f_cap)
    e0 = omega_prime.entries[0].params.e
    e_use = e0 * 2 if e0 % 2 else e0  # keep a ramified tail slot available
    params = common_params(
        FieldParams.make(q, f=f_use), FieldParams.make(q, f=f_use, e=e_use)
    )
    fld = params.field
    fq_elems = fld.subfield_elements(q)
    fq_set = {fld.encode(a) for a in fq_elems}
    # one representative per nonzero F_q-coset: differences inside F_q shift
    # the point by a lattice vector and collapse its boundary parameter
    kept = []
    for n in range(1, fld.order):
        if n in fq_set:
            continue
        c = fld.decode(n)
        if any(fld.encode((c - k) % fld.p) in fq_set for k in kept):
            continue
        kept.append(c)
    directions = [SeriesBall.constant(params, c) for c in kept]
    if not directions:
        raise NoConvergence("no sampling directions outside F_q at this f cap")
    for tail_exp in (None, Fraction(1, 2), Fraction(3, 2)):
        points = []
        us = []
        ok = True
        layer = 0
        idx = 0
        while len(points) < M:
            if idx >= len(directions):
                idx = 0
                layer += 1
                if layer > 8:
                    ok = False
                    break
            c = directions[idx]
            idx += 1
            z = c * SeriesBall.pi_pow(params, -(V + layer))
            if tail_exp is not None:
                z = z + SeriesBall.pi_pow(params, tail_exp)
            try:
                point = PeriodPoint.create(
                    (z,) + tuple(omega_prime.entries),
                    omega_prime.xi,
                    max(omega_prime.work_prec, Fraction(config.tol_exp) + extra_exp + 8),
                    level_cap=config.level_cap,
                )
            except PrecisionExhausted:
                continue
            ev = exp_eval(
                group, z, config.tol_exp + extra_exp + V + layer + 4, enum_cap=config.enum_cap
            )
            if ev.contains_zero():
                continue
            points.append(point)
            us.append(ev.inv())
        if not ok:
            continue
        # pairwise separation: the Vandermonde solve needs distinct directions
        sep = all(
            not (us[i] - us[j]).contains_zero() for i in range(M) for j in range(i + 1, M)
        )
        if sep:
            u_val = min(u.valuation() for u in us)
            return points, us, u_val
    raise NoConvergence(f"could not build {M} separated sample points at radius index {V}")


def _vandermonde_solve(us, ys, window):
    """Solve y_i = sum_{n in window} f_n u_i^n for the window coefficients."""
    n_min, n_max = window
    W = n_max - n_min + 1
    rows = []
    rhs = []
    for u, y in zip(us[:W], ys[:W]):
        shift = u ** (-n_min)
        row = []
        cur = SeriesBall.one(u.params)
        for n in range(n_min, n_max + 1):
            row.append(cur)
            cur = cur * u
        rows.append(row)
        rhs.append(y * shift)
    # Gaussian elimination with ultrametric pivoting
    n = W
    for col in range(n):
        piv = None
        piv_mag = None
        for r in range(col, n):
            cell = rows[r][col]
            if cell.contains_zero():
                continue
            mag = cell.magnitude()
            if piv_mag is None or mag > piv_mag:
                piv, piv_mag = r, mag
        if piv is None:
            raise PrecisionExhausted("sample matrix is singular at working precision")
        rows[col], rows[piv] = rows[piv], rows[col]
        rhs[col], rhs[piv] = rhs[piv], rhs[col]
        inv = rows[col][col].inv()
        rows[col] = [x * inv for x in rows[col]]
        rhs[col] = rhs[col] * inv
        for r in range(n):
            if r != col and not rows[r][col].contains_zero():
                factor = rows[r][col]
                rows[r] = [x - factor * y for x, y in zip(rows[r], rows[col])]
                rhs[r] = rhs[r] - factor * rhs[col]
    return {n_min + i: rhs[i] for i in range(n)}


def extract_uexpansion(
    f,
    gamma_spec,
    omega_prime,
    window,
    config,
    ctx=None,
    lattice=None,
    M=None,
    radius_exp=None,
    stability=True,
):
    """Window of u-expansion coefficients of f at the given lower-rank point.

    The caller is responsible for the translation-invariance of f; the
    two-radius stability flag is the operative aliasing control.
    """
    ctx = ctx or EvalContext(config, gamma_spec)
    lattice = lattice if lattice is not None else ctx.lattice
    n_min, n_max = window
    span = n_max - n_min
    M = M or config.dft_order or auto_dft_order(config.q, span, config.f_cap, PolyRing.for_q(config.q).p)
    if M <= span:
        raise ValueError("sample order must exceed the window span")
    group = DiscreteGroup.translation(lattice, omega_prime)
    V0 = int(radius_exp if radius_exp is not None else (config.radius_exp or 1))
    last_error = None
    for V in range(V0, V0 + 10):
        try:
            values, u_val = _extract_at_radius(f, ctx, group, omega_prime, M, V, window, lattice)
            if not stability:
                return UExpansion(
                    omega_prime,
                    lattice,
                    window,
                    values,
                    {"M": M, "radius_exp": V, "u_valuation": u_val, "stability_checked": False},
                )
            values2, _ = _extract_at_radius(f, ctx, group, omega_prime, M, V + 1, window, lattice)
            for n in range(n_min, n_max + 1):
                if not balls_agree(values[n], values2[n]):
                    raise AliasingDetected(
                        f"coefficient {n} differs between radii {V} and {V + 1}"
                    )
            merged = {n: _tighter(values[n], values2[n]) for n in values}
            return UExpansion(
                omega_prime,
                lattice,
                window,
                merged,
                {"M": M, "radius_exp": V, "u_valuation": u_val, "stability_checked": True},
            )
        except (NoConvergence, PrecisionExhausted, AliasingDetected, EnumerationTooLarge) as exc:
            last_error = exc
            continue
    raise last_error if last_error is not None else NoConvergence("no usable radius found")


def _tighter(a, b):
    pa = a.precision()
    pb = b.precision()
    if pb is None or (pa is not None and pa >= pb):
        return a
    return b


def _extract_at_radius(f, ctx, group, omega_prime, M, V, window, lattice):
    # probe pass: learn the parameter size at this radius, cheaply
    _, probe_us, u_val = _circle_points(group, omega_prime, M, V, ctx.config)
    # the linear solve divides by powers of u, amplifying evaluation error by
    # |u|^-(W-1+|n_min|); evaluate with matching extra digits
    W = window[1] - window[0] + 1
    amp = (W - 1 + max(0, -window[0])) * max(u_val, Fraction(0))
    points, us, u_val = _circle_points(group, omega_prime, M, V, ctx.config, extra_exp=amp)
    local_ctx = ctx if lattice is ctx.lattice else _ctx_with_lattice(ctx, lattice)
    tol_eval = ctx.config.tol_exp + amp + 4
    if ctx.config.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=ctx.config.threads) as pool:
            ys = list(pool.map(lambda pt: eval_form(f, pt, local_ctx, tol_eval), points))
    else:
        ys = [eval_form(f, point, local_ctx, tol_eval) for point in points]
    return _vandermonde_solve(us, ys, window), u_val


def _ctx_with_lattice(ctx, lattice):
    clone = EvalContext.__new__(EvalContext)
    clone.__dict__.update(ctx.__dict__)
    clone.lattice = lattice
    return clone


# ---------------------------------------------------------------------------
# the expansion-transformation calculus


def transform_levi(exp, alpha, gamma_prime, k, m, config, gamma_spec=None):
    """Expansion of f|_{k,m} block(alpha, gamma') at omega' from the expansion
    of f at gamma'(omega'); the lattice becomes alpha^{-1} Lambda' gamma'."""
    ring = exp.lattice.ring
    alpha = alpha if not isinstance(alpha, (int, str)) else ring.rat(ring.parse(str(alpha)))
    base = exp.omega_prime
    gp_inv = gamma_prime.inv()
    omega_prime = act(gp_inv, base, level_cap=config.level_cap)
    jf = j_factor(gamma_prime, omega_prime)
    det = gamma_prime.det().embed(base.params, prec=base.work_prec)
    alpha_ball = alpha.embed(base.params, prec=base.work_prec)
    new_values = {}
    for n, val in exp.values.items():
        scale = alpha_ball ** (m - n) * det**m * jf ** (-(k - n))
        new_values[n] = scale * val
    new_lattice = exp.lattice.transformed(gamma_prime).scaled(alpha.inv())
    meta = dict(exp.meta)
    meta["transformed"] = "levi"
    return UExpansion(omega_prime, new_lattice, exp.window, new_values, meta)


def _generalized_binom(top, j, p):
    """binom(top, j) mod p via the exact falling factorial (top may be < 0)."""
    num = 1
    for i in range(j):
        num *= top - i
    return (num // math.factorial(j)) % p


def transform_unipotent(exp, beta, k, m, config, j_cap=64):
    """Expansion of f|_{k,m} iota(beta) from the expansion of f.

    g_n = sum_j binom(j-n, j) f_{n-j} e(beta omega')^j; requires
    |e(beta omega') u| < 1 at the extraction radius.
    """
    group = DiscreteGroup.translation(exp.lattice, exp.omega_prime)
    params = exp.omega_prime.params
    ring = exp.lattice.ring
    beta_val = None
    for x, w in zip(beta, exp.omega_prime.entries):
        x = x if not isinstance(x, (int, str)) else ring.rat(ring.parse(str(x)))
        term = x.embed(params, prec=exp.omega_prime.work_prec) * w
        beta_val = term if beta_val is None else beta_val + term
    e_beta = exp_eval(group, beta_val, config.tol_exp + 4, enum_cap=config.enum_cap)
    p = PolyRing.for_q(config.q).p
    n_min, n_max = exp.window
    if not e_beta.contains_zero():
        radius_v = Fraction(exp.meta.get("u_valuation", exp.meta.get("radius_exp", 1)))
        if e_beta.valuation() + radius_v <= 0:
            raise ConditionViolated(
                "|e(beta omega') u| >= 1 at the extraction radius; expansion invalid"
            )
        # j_cap so the omitted tail is below tolerance
        needed = int(math.ceil((config.tol_exp + 1) / max(e_beta.valuation(), Fraction(1, 4))))
        j_cap = min(j_cap, max(needed, 1))
    out = {}
    for n in range(n_min, n_max + 1):
        acc = None
        power = None
        for j in range(j_cap + 1):
            if n - j < n_min:
                break
            coeff = _generalized_binom(j - n, j, p)
            if j == 0:
                power = SeriesBall.one(params)
            else:
                power = power * e_beta
            if coeff == 0:
                continue
            c_ball = SeriesBall.from_terms(params, {0: coeff})
            term = c_ball * exp.values[n - j] * power
            acc = term if acc is None else acc + term
        out[n] = acc if acc is not None else SeriesBall.zero_ball(params, int(config.tol_exp * params.e))
    meta = dict(exp.meta)
    meta["transformed"] = "unipotent"
    return UExpansion(exp.omega_prime, exp.lattice, exp.window, out, meta)


def rescale_subgroup(exp, sub_lattice, config):
    """Re-express the expansion w.r.t. a finite-index sublattice's parameter.

    u = u1^(p^d) prod_beta e1(beta omega') / (e1(beta omega') u1 - 1); the
    output window is the input window scaled by p^d.
    """
    log_p_index, reps = exp.lattice.quotient_data(sub_lattice)
    pd = PolyRing.for_q(config.q).p ** log_p_index
    group1 = DiscreteGroup.translation(sub_lattice, exp.omega_prime)
    params = exp.omega_prime.params
    e_betas = []
    for rep in reps:
        val = None
        for x, w in zip(rep, exp.omega_prime.entries):
            term = x.embed(params, prec=exp.omega_prime.work_prec) * w
            val = term if val is None else val + term
        e_b = exp_eval(group1, val, config.tol_exp + 6, enum_cap=config.enum_cap)
        if e_b.contains_zero():
            raise ConditionViolated("coset representative lies on the sublattice")
        e_betas.append(e_b)
    n_min, n_max = exp.window
    out_window = (n_min * pd, n_max * pd)
    order = out_window[1] - out_window[0] + 1
    # u as a series in u1: u1^(p^d) * prod (-e_b) * (1 - e_b u1)^(-1)
    sseries = _PowSeries.constant(params, 1, order)
    for e_b in e_betas:
        geom = _PowSeries([(e_b**j) for j in range(order)], 0)
        sseries = sseries.mul(geom.scale(-e_b), order)
    u_series = sseries.shift(pd)
    out = {n: None for n in range(out_window[0], out_window[1] + 1)}
    for n in range(n_min, n_max + 1):
        fn = exp.values[n]
        power = u_series.power(n, order)
        for idx, c in power.terms():
            if out_window[0] <= idx <= out_window[1]:
                term = fn * c
                out[idx] = term if out[idx] is None else out[idx] + term
    floor = SeriesBall.zero_ball(params, int(config.tol_exp * params.e))
    out = {n: (v if v is not None else floor) for n, v in out.items()}
    meta = dict(exp.meta)
    meta["transformed"] = f"rescale_p^{log_p_index}"
    return UExpansion(exp.omega_prime, sub_lattice, out_window, out, meta)


class _PowSeries:
    """Truncated power series in the auxiliary parameter with ball coefficients."""

    def __init__(self, coeffs, offset):
        self.coeffs = coeffs
        self.offset = offset

    @staticmethod
    def constant(params, c, order):
        one = SeriesBall.from_terms(params, {0: c})
        zero = SeriesBall.exact_zero(params)
        return _PowSeries([one] + [zero] * (order - 1), 0)

    def scale(self, c):
        return _PowSeries([c * x for x in self.coeffs], self.offset)

    def shift(self, k):
        return _PowSeries(self.coeffs, self.offset + k)

    def mul(self, other, order):
        out = [None] * order
        for i, x in enumerate(self.coeffs):
            if x.is_exact_zero():
                continue
            for j, y in enumerate(other.coeffs):
                if i + j >= order:
                    break
                t = x * y
                out[i + j] = t if out[i + j] is None else out[i + j] + t
        zero = SeriesBall.exact_zero(self.coeffs[0].params)
        return _PowSeries([zero if c is None else c for c in out], self.offset + other.offset)

    def inverse(self, order):
        lead = self.coeffs[0]
        inv0 = lead.inv()
        zero = SeriesBall.exact_zero(lead.params)
        out = [inv0] + [zero] * (order - 1)
        for k in range(1, order):
            acc = None
            for m in range(1, min(k, len(self.coeffs) - 1) + 1):
                t = self.coeffs[m] * out[k - m]
                acc = t if acc is None else acc + t
            out[k] = -(inv0 * acc) if acc is not None else zero
        return _PowSeries(out, -self.offset)

    def power(self, n, order):
        if n == 0:
            return _PowSeries.constant(self.coeffs[0].params, 1, order)
        base = self if n > 0 else self.inverse(order)
        n = abs(n)
        result = None
        cur = base
        while n:
            if n & 1:
                result = cur if result is None else result.mul(cur, order)
            n >>= 1
            if n:
                cur = cur.mul(cur, order)
        return result

    def terms(self):
        for i, c in enumerate(self.coeffs):
            yield self.offset + i, c


# ---------------------------------------------------------------------------
# order at infinity and classification


def order_at_infinity(f, gamma_spec, config, sample_count=3, window=None, ctx=None, seed_offset=0):
    """Minimal window index with a coefficient not containing zero at some
    sample point; 'all_zero_in_window' when none is found (semi-decision)."""
    import random

    window = window or config.window
    ctx = ctx or EvalContext(config, gamma_spec)
    rng = random.Random(config.seed + 104729 * seed_offset)
    from .period_domain import sample_period_points

    r = gamma_spec.r
    if r == 2:
        # Omega^1 is the single point (xi); one base suffices
        params = FieldParams.make(config.q, f=1, e=1)
        xi = config.xi_ball(params)
        bases = [PeriodPoint((xi,), 0, xi, config.prec)]
    else:
        bases = [
            pt.omega_prime()
            for pt in sample_period_points(rng, config, r, sample_count)
        ]
    best = None
    for base in bases[:sample_count]:
        exp = extract_uexpansion(f, gamma_spec, base, window, config, ctx=ctx)
        lead = exp.leading()
        if lead is not None and (best is None or lead[0] < best):
            best = lead[0]
    return best if best is not None else "all_zero_in_window"


@dataclass(frozen=True)
class CosetReps:
    reps: tuple
    group: GroupSpec

    def to_json(self):
        return {"count": len(self.reps), "reps": [g.to_json() for g in self.reps]}


def coset_reps(gamma_spec, cap=4096):
    """Representatives of Gamma \\ GL_r(F) / P(F) for the supported groups."""
    ring = gamma_spec.ring
    r = gamma_spec.r
    if gamma_spec.kind == "full":
        return CosetReps((GroupElem.identity(ring, r),), gamma_spec)
    if gamma_spec.kind != "principal":
        raise ComputationError(f"coset enumeration unsupported for kind {gamma_spec.kind}")
    n = gamma_spec.level
    deg = n.deg()
    residues = list(itertools.product(
        [_poly_from_digit_tuple(ring, digits) for digits in itertools.product(ring.fq_elements(), repeat=deg)],
        repeat=r,
    ))
    if len(residues) > cap:
        raise EnumerationTooLarge(f"{len(residues)} residue vectors exceed cap {cap}")
    units = ring.units()
    seen = set()
    reps = []
    for vec in residues:
        g = n
        for x in vec:
            g = poly_gcd(g, x)
        if not g.is_unit():
            continue
        key = min(_vec_key(tuple((u * x) % n for x in vec)) for u in units)
        if key in seen:
            continue
        seen.add(key)
        lift = _primitive_lift(ring, vec, n)
        gamma, canon = hnf_reduce(ring, [ring.rat(x) for x in lift])
        reps.append(gamma.inv())
    return CosetReps(tuple(reps), gamma_spec)


def _poly_from_digit_tuple(ring, digits):
    acc = ring.zero
    for i, d in enumerate(digits):
        acc = acc + d.shift(i)
    return acc


def _vec_key(vec):
    return tuple((p.c.tobytes(), p.c.shape[0]) for p in vec)


def _primitive_lift(ring, vec, n):
    lift = list(vec)
    if all(x.is_zero() for x in lift):
        raise ValueError("zero residue vector")
    g = lift[0]
    for x in lift[1:]:
        g = poly_gcd(g, x)
    if g.is_zero() or not g.is_unit():
        for i in range(len(lift)):
            cand = list(lift)
            cand[i] = cand[i] + n
            g2 = cand[0]
            for x in cand[1:]:
                g2 = poly_gcd(g2, x)
            if g2.is_unit():
                return cand
        raise ValueError("no primitive lift found")  # defensive; cannot occur for gcd(vec, n) = 1
    return lift


def classify(f, gamma_spec, k, m, config, generators=None, sample_count=3, window=None):
    """Weak/modular/cusp verdict with a per-coset order report.

    Each verdict is evidence at the sampled points and window, not a proof.
    """
    ring = gamma_spec.ring
    ctx = EvalContext(config, gamma_spec)
    window = window or config.window
    if generators is None:
        if gamma_spec.kind == "full":
            generators = full_group_generators(config.q, gamma_spec.r)
        else:
            raise ValueError("a generating set must be supplied for non-full groups")
    import random

    rng = random.Random(config.seed + 31337)
    from .period_domain import sample_period_points

    pts = sample_period_points(rng, config, gamma_spec.r, 2)
    weak = True
    for gen in generators:
        for pt in pts:
            lhs = eval_form(slash(f, gen, k, m), pt, ctx)
            rhs = eval_form(f, pt, ctx)
            if not balls_agree(lhs, rhs):
                weak = False
                break
        if not weak:
            break
    report = {"weak": weak, "cosets": []}
    if not weak:
        report["verdict"] = "not_weak"
        return report
    reps = coset_reps(gamma_spec)
    orders = []
    for idx, delta in enumerate(reps.reps):
        conj = GroupSpec.conjugate(delta, gamma_spec) if not _is_identity(delta) else gamma_spec
        fd = slash(f, delta, k, m) if not _is_identity(delta) else f
        order = order_at_infinity(fd, conj, config, sample_count=sample_count, window=window, seed_offset=idx)
        orders.append(order)
        report["cosets"].append({"delta_index": idx, "order": order})
    if any(o == "all_zero_in_window" for o in orders):
        report["verdict"] = "inconclusive"
        return report
    if all(o >= 1 for o in orders):
        report["verdict"] = "cusp"
    elif all(o >= 0 for o in orders):
        report["verdict"] = "modular"
    else:
        report["verdict"] = "weak"
    return report


def _is_identity(g):
    return g == GroupElem.identity(g.ring, g.r)
