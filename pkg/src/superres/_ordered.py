"""Time-ordered multiple integrals over piecewise-linear control phase.

Computes ``int_{T > t1 > ... > tp > 0} prod_j u(t_j)^{sigma_j} exp(i w_j (t_j - T/2))``
with ``u = exp(2 i theta)``.  Within one piece every factor is
``p exp(lam s)``; the simplex integral of a run of factors is
``h^q`` times the exponential divided difference at the running sums of
``h lam`` (Hermite-Genocchi).  Pieces are chained with exclusive cumulative
sums, so the whole integral is O(pieces).  ``w_j`` may be complex.
"""
from __future__ import annotations

from math import factorial

import numpy as np

_TERMS = 30
_INV_FACT = np.array([1.0 / factorial(n) for n in range(_TERMS + 8)])


def exp_divdiff(z):
    """Divided difference of exp at nodes ``z[0..q]`` (``z`` shape ``(q+1, n)``).

    Series in complete homogeneous polynomials; nodes should satisfy ``|z| <~ 2``.
    """
    q = z.shape[0] - 1
    n = z.shape[1]
    # hk[m] holds h_k(z_0..z_m) for the current k
    hk = np.ones((q + 1, n), dtype=complex)
    total = hk[q] * _INV_FACT[q]
    for k in range(1, _TERMS):
        new = np.empty_like(hk)
        new[0] = hk[0] * z[0]
        for m in range(1, q + 1):
            new[m] = new[m - 1] + z[m] * hk[m]
        hk = new
        total = total + hk[q] * _INV_FACT[k + q]
    return total


def _excl_cumsum(a):
    out = np.empty_like(a)
    out[0] = 0
    np.cumsum(a[:-1], out=out[1:])
    return out


def _rev_excl_cumsum(a):
    return _excl_cumsum(a[::-1])[::-1]


class _Run:
    """Within-piece simplex integral of factors ``a..b`` (inclusive)."""

    def __init__(self, seg, T, factors, a, b, grad):
        sig = np.array([factors[j][0] for j in range(a, b + 1)], dtype=float)
        w = np.array([factors[j][1] for j in range(a, b + 1)], dtype=complex)
        h = seg.h
        tc = seg.t0 - T / 2
        lam = 1j * (w[:, None] + 2 * sig[:, None] * seg.rate[None, :])  # (q, n)
        cum = np.cumsum(lam, axis=0) * h
        z = np.vstack([np.zeros((1, h.size), dtype=complex), cum])
        self.pref = np.exp(1j * (2 * sig.sum() * seg.theta0 + w.sum() * tc)) * h ** (b - a + 1)
        dd = exp_divdiff(z)
        self.value = self.pref * dd
        self.sig_sum = sig.sum()
        if grad:
            # d value / d rate: nodes z_m depend on rate through 2 i h sum_{j<m} sigma_j
            dz = np.cumsum(2j * sig) if sig.size else sig
            drate = np.zeros(h.size, dtype=complex)
            for m in range(1, z.shape[0]):
                zz = np.vstack([z, z[m:m + 1]])
                drate += exp_divdiff(zz) * dz[m - 1] * h
            self.d_rate = self.pref * drate
            self.d_theta = 2j * self.sig_sum * self.value


def ordered_integral(seg, T, factors, grad: bool = False):
    """Time-ordered integral of ``factors = [(sigma_1, w_1), ..., (sigma_p, w_p)]``,
    ``t1`` latest.  With ``grad`` also returns partials with respect to each
    piece's start phase and rate (holomorphic derivatives)."""
    p = len(factors)
    runs = {}
    for a in range(p):
        for b in range(a, p):
            runs[(a, b)] = _Run(seg, T, factors, a, b, grad)
    n = seg.h.size
    # S[m]: integral of the last m factors over all earlier pieces (before piece k)
    S = [np.ones(n, dtype=complex)]
    Y = [None]
    for m in range(1, p):
        y = np.zeros(n, dtype=complex)
        for r in range(1, m + 1):
            y += runs[(p - m, p - m + r - 1)].value * S[m - r]
        Y.append(y)
        S.append(_excl_cumsum(y))
    total = 0.0 + 0.0j
    for r in range(1, p + 1):
        total += np.sum(runs[(0, r - 1)].value * S[p - r])
    if not grad:
        return total
    # reverse sweep
    Ebar = {key: np.zeros(n, dtype=complex) for key in runs}
    Sbar = [np.zeros(n, dtype=complex) for _ in range(p)]
    for r in range(1, p + 1):
        Ebar[(0, r - 1)] += S[p - r]
        if p - r >= 1:
            Sbar[p - r] += runs[(0, r - 1)].value
    for m in range(p - 1, 0, -1):
        ybar = _rev_excl_cumsum(Sbar[m])
        for r in range(1, m + 1):
            key = (p - m, p - m + r - 1)
            Ebar[key] += ybar * S[m - r]
            if m - r >= 1:
                Sbar[m - r] += ybar * runs[key].value
    d_theta = np.zeros(n, dtype=complex)
    d_rate = np.zeros(n, dtype=complex)
    for key, run in runs.items():
        d_theta += Ebar[key] * run.d_theta
        d_rate += Ebar[key] * run.d_rate
    return total, d_theta, d_rate
