"""Multiple-access rate constraints and outage decisions.

A realization is in outage when some non-empty codeword subset ``S`` has
``|S| * R > log2 det(I + rho * H_S H_S^H)``. Rates are in bits per codeword
channel use; all codewords carry the same rate.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import CapacityError, ComputationError, ParameterError
from .schedule import EquivalentChannel, Protocol, subset_columns

__all__ = [
    "EXHAUSTIVE_LIMIT",
    "rate_scale",
    "rate_from_multiplexing",
    "mutual_info_subset",
    "is_outage",
    "outage_events",
    "outage_probability",
]

EXHAUSTIVE_LIMIT = 20


def rate_scale(protocol, L: int = 1, M: int = 2) -> Fraction:
    """Slots-per-frame over codewords-per-source: maps r to the per-codeword prelog."""
    p = Protocol.parse(protocol)
    if L < 1 or M < 1:
        raise ParameterError("L and M must be positive")
    if p is Protocol.DIRECT:
        return Fraction(2)
    if p is Protocol.STANDARD:
        return Fraction(4)
    if p is Protocol.REPETITION:
        return Fraction(2 * L + 1, L)
    if p is Protocol.SUPERPOSITION:
        return Fraction(2 * L + 2, L)
    return Fraction(M * L + 2, L)


def rate_from_multiplexing(r, rho: float, protocol, L: int = 1, M: int = 2) -> float:
    """Per-codeword rate in bits for multiplexing gain ``r`` at linear SNR ``rho``."""
    if r < 0:
        raise ParameterError(f"multiplexing gain must be nonnegative, got {r}")
    if r == 0:
        return 0.0
    if not rho > 1:
        raise ParameterError(f"rho must exceed 1 for a positive rate, got {rho}")
    return float(rate_scale(protocol, L, M)) * float(r) * math.log2(rho)


def _as_matrix(H) -> np.ndarray:
    return H.matrix if isinstance(H, EquivalentChannel) else np.asarray(H, dtype=complex)


def _logdet2_gram(G: np.ndarray, rho: float) -> np.ndarray:
    """log2 det(I + rho * G) for Hermitian PSD ``G`` (batched over leading axes)."""
    m = G.shape[-1]
    A = np.eye(m) + rho * G
    try:
        C = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise ComputationError(f"factorization failed: {exc}") from exc
    diag = np.real(np.diagonal(C, axis1=-2, axis2=-1))
    return 2.0 * np.sum(np.log2(diag), axis=-1)


def mutual_info_subset(H_sub, rho: float) -> float | np.ndarray:
    """``log2 det(I + rho H H^H)`` evaluated on the smaller Gram ``I + rho H^H H``."""
    H_sub = np.asarray(H_sub, dtype=complex)
    if H_sub.ndim == 1:
        H_sub = H_sub[:, None]
    if H_sub.shape[-1] == 0:
        raise ParameterError("subset matrix has no columns")
    if not np.all(np.isfinite(H_sub)) or not np.isfinite(rho):
        raise ComputationError("non-finite channel entries or SNR")
    if rho < 0:
        raise ParameterError(f"rho must be nonnegative, got {rho}")
    G = np.conj(np.swapaxes(H_sub, -1, -2)) @ H_sub
    out = _logdet2_gram(G, rho)
    return float(out) if np.ndim(out) == 0 else out


@lru_cache(maxsize=None)
def _subsets_by_size(K: int) -> tuple:
    return tuple(np.array(list(itertools.combinations(range(K), m)), dtype=int)
                 for m in range(1, K + 1))


def _components(support: np.ndarray) -> list:
    """Connected components of the codeword interaction graph (boolean KxK)."""
    K = support.shape[0]
    seen, comps = set(), []
    for start in range(K):
        if start in seen:
            continue
        stack, comp = [start], []
        seen.add(start)
        while stack:
            i = stack.pop()
            comp.append(i)
            for j in np.nonzero(support[i])[0]:
                if j not in seen:
                    seen.add(int(j))
                    stack.append(int(j))
        comps.append(sorted(comp))
    return comps


def _check_limit(K: int, limit: int):
    if K > limit:
        raise CapacityError(
            f"{K} codewords means {2 ** K - 1} subset constraints, above the limit of "
            f"2^{limit}-1; reduce L or raise the limit")


def outage_events(H, rho: float, R: float, limit: int = EXHAUSTIVE_LIMIT,
                  columns=None) -> np.ndarray:
    """Vectorized outage test for a batch of equivalent channels.

    Works on the Gram matrix ``H^H H`` so each subset costs one small
    Cholesky. Codewords that never share a receive dimension (in any trial)
    form separate components; a subset spanning components violates its
    constraint only if one of its per-component pieces does, so only subsets
    inside a component are enumerated.

    ``columns`` restricts the constraints to subsets of those codewords,
    i.e. the outage of one source with the other codewords known.
    """
    H = _as_matrix(H)
    if columns is not None:
        H = subset_columns(H, columns)
    if R < 0:
        raise ParameterError(f"rate must be nonnegative, got {R}")
    batch = H.shape[:-2]
    K = H.shape[-1]
    if R == 0:
        return np.zeros(batch, dtype=bool)
    if not np.all(np.isfinite(H)):
        raise ComputationError("non-finite channel entries")
    G = np.conj(np.swapaxes(H, -1, -2)) @ H
    structural = (np.abs(H) > 0).reshape(-1, H.shape[-2], K).any(axis=0)
    support = (structural.T.astype(int) @ structural.astype(int)) > 0
    out = np.zeros(batch, dtype=bool)
    for comp in _components(support):
        _check_limit(len(comp), limit)
        Gc = G[..., comp, :][..., :, comp]
        for m, subsets in enumerate(_subsets_by_size(len(comp)), start=1):
            sub = Gc[..., subsets[:, :, None], subsets[:, None, :]]  # (..., n_sub, m, m)
            info = _logdet2_gram(sub, rho)
            out |= np.any(m * R > info, axis=-1)
    return out


def is_outage(H, rho: float, R: float, exhaustive: bool = True,
              limit: int = EXHAUSTIVE_LIMIT, columns=None) -> bool:
    """Whether any of the ``2^K - 1`` multiple-access constraints fails.

    ``exhaustive=True`` walks every subset through :func:`subset_columns`
    and :func:`mutual_info_subset`; otherwise the Gram-based path of
    :func:`outage_events` is used. Both give the same answer. ``columns``
    limits the subsets as in :func:`outage_events`.
    """
    M = _as_matrix(H)
    if columns is not None:
        M = subset_columns(M, columns)
    if M.ndim != 2:
        raise ParameterError("is_outage takes a single realization; use outage_events for batches")
    if R < 0:
        raise ParameterError(f"rate must be nonnegative, got {R}")
    if R == 0:
        return False
    K = M.shape[1]
    if not exhaustive:
        return bool(outage_events(M, rho, R, limit=limit))
    _check_limit(K, limit)
    for m in range(1, K + 1):
        for S in itertools.combinations(range(K), m):
            if m * R > mutual_info_subset(subset_columns(M, S), rho):
                return True
    return False


def outage_probability(spec, r_or_R, snr_grid_db, trials: int, seed: int,
                       fixed_rate: bool = False, workers: int = 1, **kwargs):
    """Monte-Carlo outage curve; ``r_or_R`` is a multiplexing gain unless ``fixed_rate``."""
    from .sim import SimConfig, run

    config = SimConfig(
        spec=spec,
        mode="outage",
        snr_grid_db=tuple(snr_grid_db),
        r=None if fixed_rate else r_or_R,
        rate=r_or_R if fixed_rate else None,
        trials=trials,
        seed=seed,
        workers=workers,
        **kwargs,
    )
    return run(config)
