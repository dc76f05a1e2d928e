"""Run configuration: precision, caps, seeds, tolerances.

A config is immutable; the CLI builds one from an optional key=value file
overridden by flags.  ``seed`` pins every random draw, so identical configs
reproduce identical outputs byte for byte.
"""

from dataclasses import dataclass, field, replace
from fractions import Fraction

from .nonarch import QMag, SeriesBall


@dataclass(frozen=True)
class RunConfig:
    q: int = 2
    r: int = 2
    level: int = 2
    prec: Fraction = Fraction(24)
    e_cap: int = 4
    f_cap: int = 4
    xi_exp: Fraction = Fraction(0)
    seed: int = 7
    enum_cap: int = 400000
    window: tuple = (-4, 8)
    tol_exp: Fraction = Fraction(10)
    threads: int = 1
    level_cap: int = 16
    dft_order: int = 0  # 0 = choose automatically
    radius_exp: Fraction = None  # None = search

    def tol(self):
        return QMag(self.tol_exp)

    def xi_ball(self, params):
        return SeriesBall.pi_pow(params, self.xi_exp)

    def xi_mag(self):
        return QMag(self.xi_exp)

    def override(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    def provenance(self):
        return {
            "q": self.q,
            "r": self.r,
            "seed": self.seed,
            "precision": str(self.prec),
            "tolerance_exp": str(self.tol_exp),
            "window": list(self.window),
            "threads": self.threads,
        }


_FIELDS = {
    "q": int,
    "r": int,
    "level": int,
    "prec": Fraction,
    "e_cap": int,
    "f_cap": int,
    "xi_exp": Fraction,
    "seed": int,
    "enum_cap": int,
    "tol_exp": Fraction,
    "threads": int,
    "level_cap": int,
    "dft_order": int,
    "radius_exp": Fraction,
}


def load_config_file(path):
    """Parse a key=value config file into a dict of typed overrides."""
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key == "window":
                lo, hi = value.split(",")
                out["window"] = (int(lo), int(hi))
            elif key in _FIELDS:
                out[key] = _FIELDS[key](value)
            else:
                raise ValueError(f"unknown config key {key!r}")
    return out
