"""Hot integer kernels: convolution and long division of digit arrays mod p.

A series (or polynomial) is a 2-d ``int64`` array of shape ``(L, d)``: row
``i`` holds the F_p digits of the i-th coefficient, an element of
F_p[x]/(modulus) with ``d = deg(modulus)``.  Multiplication is a full 2-d
convolution followed by reduction of the x-degree overflow through a
precomputed ``(2d-1, d)`` reduction matrix.

The backend is chosen once at import time.  Set
``DRINFELD_UEXP_BACKEND={numba,numpy}`` to force one; default is numba when
importable, else numpy.  Both backends are exact integer arithmetic and
produce identical digits.
"""

import os

import numpy as np

_choice = os.environ.get("DRINFELD_UEXP_BACKEND", "auto").lower()
if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(f"DRINFELD_UEXP_BACKEND must be numba or numpy, got {_choice!r}")

HAS_NUMBA = False
if _choice in ("auto", "numba"):
    try:
        import numba

        HAS_NUMBA = True
    except ImportError:
        if _choice == "numba":
            raise


def _conv_mod_numpy(a, b, red, p):
    la, d = a.shape
    lb = b.shape[0]
    raw = np.zeros((la + lb - 1, 2 * d - 1), dtype=np.int64)
    for s in range(d):
        for t in range(d):
            raw[:, s + t] += np.convolve(a[:, s], b[:, t])
    return (raw % p) @ red % p


def _series_inv_numpy(a, red, p, lc_inv, out_len):
    la, d = a.shape
    out = np.zeros((out_len, d), dtype=np.int64)
    out[0] = lc_inv
    for k in range(1, out_len):
        m = min(k, la - 1)
        if m < 1:
            continue
        rows_a = a[1 : m + 1]
        rows_c = out[k - 1 : k - m - 1 if k - m - 1 >= 0 else None : -1]
        sq = np.einsum("ms,mt->st", rows_a, rows_c)
        raw = np.zeros(2 * d - 1, dtype=np.int64)
        for s in range(d):
            raw[s : s + d] += sq[s]
        acc = (raw % p) @ red % p
        # out[k] = -lc_inv * acc in the residue field
        raw2 = np.zeros(2 * d - 1, dtype=np.int64)
        for s in range(d):
            raw2[s : s + d] += lc_inv[s] * acc
        out[k] = (-(raw2 % p) @ red) % p
    return out


if HAS_NUMBA:

    @numba.njit(cache=True)
    def _conv_mod_numba(a, b, red, p):  # pragma: no cover - jitted
        la, d = a.shape
        lb = b.shape[0]
        lc = la + lb - 1
        raw = np.zeros((lc, 2 * d - 1), dtype=np.int64)
        for i in range(la):
            for j in range(lb):
                k = i + j
                for s in range(d):
                    av = a[i, s]
                    if av == 0:
                        continue
                    for t in range(d):
                        raw[k, s + t] += av * b[j, t]
        out = np.zeros((lc, d), dtype=np.int64)
        for k in range(lc):
            for m in range(2 * d - 1):
                v = raw[k, m] % p
                if v == 0:
                    continue
                for s in range(d):
                    out[k, s] += v * red[m, s]
        return out % p

    @numba.njit(cache=True)
    def _series_inv_numba(a, red, p, lc_inv, out_len):  # pragma: no cover - jitted
        la, d = a.shape
        out = np.zeros((out_len, d), dtype=np.int64)
        for s in range(d):
            out[0, s] = lc_inv[s]
        raw = np.zeros(2 * d - 1, dtype=np.int64)
        acc = np.zeros(d, dtype=np.int64)
        for k in range(1, out_len):
            m = min(k, la - 1)
            if m < 1:
                continue
            for u in range(2 * d - 1):
                raw[u] = 0
            for i in range(1, m + 1):
                for s in range(d):
                    av = a[i, s]
                    if av == 0:
                        continue
                    for t in range(d):
                        raw[s + t] += av * out[k - i, t]
            for s in range(d):
                acc[s] = 0
            for u in range(2 * d - 1):
                v = raw[u] % p
                if v == 0:
                    continue
                for s in range(d):
                    acc[s] += v * red[u, s]
            for u in range(2 * d - 1):
                raw[u] = 0
            for s in range(d):
                av = lc_inv[s]
                if av == 0:
                    continue
                for t in range(d):
                    raw[s + t] += av * (acc[t] % p)
            for s in range(d):
                v = 0
                for u in range(2 * d - 1):
                    v += (raw[u] % p) * red[u, s]
                out[k, s] = (-v) % p
        return out

    conv_mod = _conv_mod_numba
    series_inv = _series_inv_numba
    BACKEND = "numba"
else:
    conv_mod = _conv_mod_numpy
    series_inv = _series_inv_numpy
    BACKEND = "numpy"

# the numpy implementations stay importable for the backend benchmark
conv_mod_numpy = _conv_mod_numpy
series_inv_numpy = _series_inv_numpy
