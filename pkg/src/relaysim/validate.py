"""Fast self-checks behind ``relaysim validate``."""

from __future__ import annotations

import itertools
import math
import traceback
from fractions import Fraction

import numpy as np

from .channel import ChannelRealization, draw_realization
from .dmt import crossover_points, dmt_curve
from .modem import BerChain, qam
from .outage import is_outage, outage_events
from .schedule import (Protocol, ProtocolSpec, SpMode, assemble, build_msource_matrix,
                       build_superposition_matrix, schedule_slots)

TOL = 1e-12


def _specs():
    for L in range(1, 4):
        for N in (1, 2):
            for p in (Protocol.DIRECT, Protocol.STANDARD, Protocol.REPETITION, Protocol.SUPERPOSITION):
                yield ProtocolSpec(p, frame_length=L, n_antennas=N)
            for M in range(1, 4):
                yield ProtocolSpec(Protocol.MSOURCE, frame_length=L, n_sources=M, n_antennas=N)


def check_power_sums(rng):
    for spec in _specs():
        for t, slot in enumerate(schedule_slots(spec)):
            if abs(slot.power - 1.0) > TOL:
                return False, f"{spec.protocol.value} L={spec.L} M={spec.M} slot {t + 1}: {slot.power}"
    return True, ""


def check_superposition_example(rng):
    ch = ChannelRealization.from_vectors([[1], [1]], [1], [1])
    s = 1 / math.sqrt(2)
    want = {1: [[1, 0], [s, s], [s, s], [0, 1]],
            2: [[1, 0, 0, 0], [s, s, 0, 0], [.5, .5, s, 0], [0, .5, .5, s], [0, 0, s, s], [0, 0, 0, 1]]}
    for L, rows in want.items():
        got = build_superposition_matrix(ch, L).matrix
        if not np.allclose(got, rows, atol=TOL):
            return False, f"L={L} matrix mismatch"
    return True, ""


def check_column_support(rng):
    for L in range(1, 4):
        for N in (1, 2):
            ch = draw_realization(rng, N, 2)
            for p, paths in ((Protocol.SUPERPOSITION, 3), (Protocol.REPETITION, 2)):
                H = assemble(ch, ProtocolSpec(p, frame_length=L, n_antennas=N))
                for c in range(H.n_codewords):
                    if len(H.column_support(c)) != paths:
                        return False, f"{p.value} L={L} column {c} touches {H.column_support(c)}"
    return True, ""


def check_msource_specialisation(rng):
    for L in range(1, 4):
        ch = draw_realization(rng, 2, 2)
        a = build_msource_matrix(ch, 2, L).matrix
        b = build_superposition_matrix(ch, L).matrix
        if not np.array_equal(a, b):
            return False, f"L={L}"
    return True, ""


def check_constellations(rng):
    for order in (4, 8, 16):
        c = qam(order)
        if abs(np.mean(np.abs(c.points) ** 2) - 1) > TOL:
            return False, f"{order}-QAM energy"
        if sorted(c.labels) != [format(i, f"0{c.bits_per_symbol}b") for i in range(order)]:
            return False, f"{order}-QAM labels"
    return True, ""


def check_outage_oracle(rng, instances: int = 200):
    for L, proto in itertools.product((1, 2), (Protocol.SUPERPOSITION, Protocol.REPETITION,
                                               Protocol.DIRECT, Protocol.STANDARD)):
        spec = ProtocolSpec(proto, frame_length=L, n_antennas=2)
        ch = draw_realization(rng, 2, 2, size=instances)
        H = assemble(ch, spec).matrix
        rho = 10 ** rng.uniform(0, 3)
        R = rng.uniform(0.5, 8)
        fast = outage_events(H, rho, R)
        for i in range(instances):
            if is_outage(H[i], rho, R, exhaustive=True) != fast[i]:
                return False, f"{proto.value} L={L} instance {i}"
    return True, ""


def check_noiseless_chain(rng, trials: int = 50):
    specs = [ProtocolSpec(Protocol.DIRECT, 1, n_antennas=2),
             ProtocolSpec(Protocol.STANDARD, 1, n_antennas=2),
             ProtocolSpec(Protocol.REPETITION, 1, n_antennas=2),
             ProtocolSpec(Protocol.SUPERPOSITION, 2, n_antennas=2, sp_mode=SpMode.SUM),
             ProtocolSpec(Protocol.SUPERPOSITION, 2, n_antennas=2, sp_mode=SpMode.XOR)]
    for spec in specs:
        chain = BerChain(spec)
        ch = draw_realization(rng, 2, 2, size=trials)
        bits = rng.random((trials, chain.bits_per_trial)) < 0.5
        errors = chain.run(ch, np.zeros((trials, chain.noise_dim), complex), bits, 100.0)
        if errors.sum():
            return False, f"{spec.protocol.value} mode {int(spec.sp_mode)}: {errors.sum()} bit errors"
    return True, ""


def check_dmt_endpoints(rng):
    for N, L, M in itertools.product((1, 2, 3), (1, 2, 15), (1, 2, 4)):
        if dmt_curve("superposition", N, L).max_r != Fraction(L, 2 * L + 2):
            return False, "superposition max_r"
        if dmt_curve("repetition", N, L).max_r != Fraction(L, 2 * L + 1):
            return False, "repetition max_r"
        if dmt_curve("msource", N, L, M).max_r != Fraction(L, M * L + 2):
            return False, "msource max_r"
        pts = crossover_points(dmt_curve("repetition", N, L), dmt_curve("standard", N, L))
        if pts != [Fraction(L, 8 * L - 2)]:
            return False, f"repetition/standard crossover {pts}"
    return True, ""


CHECKS = [
    ("slot-power-sums", check_power_sums),
    ("superposition-matrix-example", check_superposition_example),
    ("column-path-counts", check_column_support),
    ("msource-m2-equals-two-source", check_msource_specialisation),
    ("constellation-energy-and-labels", check_constellations),
    ("outage-fast-vs-exhaustive", check_outage_oracle),
    ("noiseless-end-to-end", check_noiseless_chain),
    ("dmt-endpoints-and-crossover", check_dmt_endpoints),
]


def run_checks(seed: int = 0) -> list:
    """``[(name, passed, detail), ...]``; an exception counts as a failure."""
    results = []
    for name, fn in CHECKS:
        rng = np.random.default_rng([seed, len(results)])
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # report, keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=2)}"
        results.append((name, ok, detail))
    return results
