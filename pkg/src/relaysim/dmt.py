"""Closed-form diversity-multiplexing tradeoffs and empirical slope fits.

Every protocol's tradeoff is a single line ``d(r) = d_max * (1 - r / r_max)``
clamped at zero. Inputs given as ints or :class:`fractions.Fraction` are
evaluated exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import stats

from .errors import EstimationError, ParameterError
from .schedule import Protocol

__all__ = [
    "DmtCurve",
    "dmt_curve",
    "theoretical_dmt",
    "crossover_points",
    "estimate_diversity",
    "DEFAULT_WINDOW_DB",
]

DEFAULT_WINDOW_DB = 15.0


@dataclass(frozen=True)
class DmtCurve:
    protocol: Protocol
    N: int
    L: int
    M: int
    max_d: Fraction
    max_r: Fraction

    @property
    def breakpoints(self) -> list:
        return [(Fraction(0), self.max_d), (self.max_r, Fraction(0))]

    def __call__(self, r):
        return theoretical_dmt(self.protocol, self.N, self.L, self.M, r)


def dmt_curve(protocol, N: int, L: int = 1, M: int = 2) -> DmtCurve:
    p = Protocol.parse(protocol)
    if min(N, L, M) < 1:
        raise ParameterError("N, L and M must be positive")
    if p is Protocol.DIRECT:
        d, r = N, Fraction(1, 2)
    elif p is Protocol.STANDARD:
        d, r = 3 * N, Fraction(1, 4)
    elif p is Protocol.REPETITION:
        d, r = 2 * N, Fraction(L, 2 * L + 1)
    elif p is Protocol.SUPERPOSITION:
        d, r = 3 * N, Fraction(L, 2 * L + 2)
    else:
        d, r = 3 * N, Fraction(L, M * L + 2)
    return DmtCurve(p, N, L, M, Fraction(d), r)


def theoretical_dmt(protocol, N: int, L: int = 1, M: int = 2, r=0):
    """Diversity gain at multiplexing gain ``r``; zero past the protocol's max_r."""
    if r < 0:
        raise ParameterError(f"multiplexing gain must be nonnegative, got {r}")
    curve = dmt_curve(protocol, N, L, M)
    exact = isinstance(r, (int, Fraction))
    rr = Fraction(r) if exact else float(r)
    d = curve.max_d * (1 - rr / curve.max_r) if exact else \
        float(curve.max_d) * (1 - rr / float(curve.max_r))
    return max(d, 0 if exact else 0.0)


def crossover_points(curve_a: DmtCurve, curve_b: DmtCurve) -> list:
    """Multiplexing gains where two tradeoff curves meet.

    The common domain is ``[0, min(max_r)]``, where both protocols still
    offer positive diversity. Curves that coincide on a segment report that
    segment's endpoints.
    """
    hi = min(curve_a.max_r, curve_b.max_r)
    knots = sorted({Fraction(0), hi} | {r for r in (curve_a.max_r, curve_b.max_r) if r < hi})
    found = set()
    for lo, up in zip(knots, knots[1:]):
        fa = (curve_a(lo), curve_a(up))
        fb = (curve_b(lo), curve_b(up))
        d0, d1 = fa[0] - fb[0], fa[1] - fb[1]
        if d0 == 0 and d1 == 0:
            found.update((lo, up))
        elif d0 == 0:
            found.add(lo)
        elif d1 == 0:
            found.add(up)
        elif (d0 < 0) != (d1 < 0):
            found.add(lo + (up - lo) * d0 / (d0 - d1))
    return sorted(found)


def _as_arrays(curve):
    if hasattr(curve, "points"):
        snr = np.array([p.snr_db for p in curve.points], dtype=float)
        prob = np.array([p.estimate for p in curve.points], dtype=float)
        events = np.array([p.events for p in curve.points])
        return snr, prob, events
    arrays = [np.asarray(a, dtype=float) for a in curve]
    snr, prob = arrays[0], arrays[1]
    events = arrays[2] if len(arrays) > 2 else (prob > 0).astype(int)
    return snr, prob, events


def estimate_diversity(curve, snr_window_db: tuple | None = None) -> tuple:
    """Least-squares slope of ``-log10 P`` against ``log10 rho`` inside a window.

    ``curve`` is a :class:`~relaysim.sim.ResultCurve` or a tuple
    ``(snr_db, probability[, events])``. The default window is the top 15 dB of the
    grid. A cell with zero events inside the window is an error rather than
    something to floor or skip. Returns ``(slope, standard_error)``.
    """
    snr, prob, events = _as_arrays(curve)
    if snr.size == 0:
        raise EstimationError("empty curve")
    if snr_window_db is None:
        snr_window_db = (snr.max() - DEFAULT_WINDOW_DB, snr.max())
    lo, hi = snr_window_db
    keep = (snr >= lo - 1e-9) & (snr <= hi + 1e-9)
    empty = keep & ((events <= 0) | (prob <= 0))
    if empty.any():
        raise EstimationError(
            f"no events at {', '.join(f'{s:g}' for s in snr[empty])} dB inside {lo:g}-{hi:g} dB; "
            "run more trials or narrow the window")
    if keep.sum() < 3:
        raise EstimationError(
            f"only {int(keep.sum())} grid points with events inside {lo:g}-{hi:g} dB; "
            "need at least 3 (run more trials or move the window)")
    x = snr[keep] / 10.0
    y = -np.log10(prob[keep])
    fit = stats.linregress(x, y)
    return float(fit.slope), float(fit.stderr)
