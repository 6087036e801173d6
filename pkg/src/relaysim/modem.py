"""Uncoded QAM transmission chain for the BER study.

Constellation convention: point ``i`` carries the label whose bits are the
binary expansion of ``i`` (MSB first). Each axis uses a Gray map; with two
bits per axis the levels are ``00 -> +1, 01 -> +3, 10 -> -1, 11 -> -3`` and
with one bit ``0 -> +1, 1 -> -1``. The leading bits pick the in-phase level:

    order  in-phase bits  quadrature bits  normalisation
    4      b0             b1               1/sqrt(2)
    8      b0 b1          b2               1/sqrt(6)
    16     b0 b1          b2 b3            1/sqrt(10)

8-QAM is the rectangular 4x2 grid. :func:`constellation_table` prints the
exact tables.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .channel import ChannelRealization
from .errors import CapacityError, ParameterError
from .schedule import Protocol, ProtocolSpec, Slot, SpMode, schedule_slots

__all__ = [
    "Constellation",
    "qam",
    "constellation_table",
    "default_order",
    "modulate",
    "demodulate_hard",
    "superpose_mode1",
    "superpose_mode2",
    "alamouti_transmit",
    "alamouti_combine",
    "mrc_detect",
    "mlsd_detect",
    "MLSD_BUDGET",
    "BerChain",
    "simulate_ber",
]

MLSD_BUDGET = 2 ** 16

_AXIS_LEVELS = {
    1: {0: 1.0, 1: -1.0},
    2: {0b00: 1.0, 0b01: 3.0, 0b10: -1.0, 0b11: -3.0},
}
_AXIS_BITS = {4: (1, 1), 8: (2, 1), 16: (2, 2)}


@dataclass(frozen=True)
class Constellation:
    order: int
    points: np.ndarray
    labels: tuple

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.order))

    def index_of(self, bits) -> int:
        bits = [int(b) for b in bits]
        if len(bits) != self.bits_per_symbol or any(b not in (0, 1) for b in bits):
            raise ParameterError(f"{self.order}-QAM takes {self.bits_per_symbol} bits, got {bits}")
        return int("".join(map(str, bits)), 2)

    def bits_of(self, index: int) -> tuple:
        return tuple(int(c) for c in self.labels[index])


@lru_cache(maxsize=None)
def qam(order: int) -> Constellation:
    if order not in _AXIS_BITS:
        raise ParameterError(f"supported orders are 4, 8 and 16, got {order}")
    bi, bq = _AXIS_BITS[order]
    nbits = bi + bq
    pts = []
    for i in range(order):
        re = _AXIS_LEVELS[bi][i >> bq]
        im = _AXIS_LEVELS[bq][i & ((1 << bq) - 1)]
        pts.append(complex(re, im))
    pts = np.array(pts)
    pts = pts / np.sqrt(np.mean(np.abs(pts) ** 2))
    pts.setflags(write=False)
    labels = tuple(format(i, f"0{nbits}b") for i in range(order))
    return Constellation(order, pts, labels)


def constellation_table(const: Constellation | int) -> str:
    """Whitespace-delimited table: index, real, imag, label."""
    if not isinstance(const, Constellation):
        const = qam(int(const))
    lines = [f"# {const.order}-QAM, unit average energy", "index real imag label"]
    for i, p in enumerate(const.points):
        lines.append(f"{i} {p.real:+.17f} {p.imag:+.17f} {const.labels[i]}")
    return "\n".join(lines) + "\n"


def default_order(protocol) -> int:
    """Orders giving every protocol 2 bits per channel use."""
    p = Protocol.parse(protocol)
    if p is Protocol.DIRECT:
        return 4
    if p is Protocol.STANDARD:
        return 16
    return 8


def modulate(bits, const: Constellation) -> complex:
    return complex(const.points[const.index_of(bits)])


def _nearest(z: np.ndarray, const: Constellation) -> np.ndarray:
    # argmin keeps the lowest index on ties
    return np.argmin(np.abs(np.asarray(z)[..., None] - const.points) ** 2, axis=-1)


def demodulate_hard(symbol_estimate, const: Constellation) -> tuple:
    return const.bits_of(int(_nearest(np.asarray(symbol_estimate), const)))


def superpose_mode1(desired, interference):
    """Amplitude sum normalised to unit average energy."""
    return (np.asarray(desired) + np.asarray(interference)) / math.sqrt(2.0)


def superpose_mode2(desired, interference, const: Constellation):
    """Constellation point whose label is the XOR of the two input labels."""
    a = _nearest(np.asarray(desired), const)
    b = _nearest(np.asarray(interference), const)
    out = const.points[a ^ b]
    return complex(out) if np.ndim(out) == 0 else out


def alamouti_transmit(s1, s2) -> np.ndarray:
    """``[slot, transmitter]`` block with each relay at half power."""
    s1, s2 = np.asarray(s1), np.asarray(s2)
    block = np.stack([np.stack([s1, s2], axis=-1),
                      np.stack([-np.conj(s2), np.conj(s1)], axis=-1)], axis=-2)
    return block / math.sqrt(2.0)


def alamouti_combine(received, h1, h2, snr: float = 1.0):
    """Linear Alamouti combining.

    ``received`` has shape ``(..., 2, N)`` (two slots). Returns the symbol
    estimates normalised to unit gain together with the per-symbol effective
    channel energy ``(|h1|^2 + |h2|^2) / 2`` that the estimates were divided
    by (times ``snr``).
    """
    y = np.asarray(received)
    h1, h2 = np.asarray(h1), np.asarray(h2)
    y1, y2 = y[..., 0, :], y[..., 1, :]
    r1 = np.sum(np.conj(h1) * y1 + h2 * np.conj(y2), axis=-1)
    r2 = np.sum(np.conj(h2) * y1 - h1 * np.conj(y2), axis=-1)
    energy = (np.sum(np.abs(h1) ** 2, axis=-1) + np.sum(np.abs(h2) ** 2, axis=-1)) / 2.0
    gain = math.sqrt(snr) * math.sqrt(2.0) * energy
    with np.errstate(divide="ignore", invalid="ignore"):
        e1 = np.where(gain > 0, r1 / gain, 0)
        e2 = np.where(gain > 0, r2 / gain, 0)
    return (e1, e2), snr * energy


def mrc_detect(received, h, const: Constellation, snr: float = 1.0):
    """Minimum-distance decision on ``received = sqrt(snr) * h * s + n``.

    Implemented as matched-filter combining followed by scalar slicing,
    which has the same argmin as the vector metric. Returns point indices.
    """
    y, h = np.asarray(received), np.asarray(h)
    energy = np.sum(np.abs(h) ** 2, axis=-1)
    z = np.sum(np.conj(h) * y, axis=-1)
    # |y - a h s|^2 = const - 2a Re(conj(s) z) + a^2 |h|^2 |s|^2
    a = math.sqrt(snr)
    metric = a * a * energy[..., None] * np.abs(const.points) ** 2 \
        - 2 * a * np.real(np.conj(const.points) * z[..., None])
    return np.argmin(metric, axis=-1)


def _node_rows(spec: ProtocolSpec) -> dict:
    rows = {f"S{i + 1}": i for i in range(spec.n_sources)}
    rows["R1"], rows["R2"] = spec.n_sources, spec.n_sources + 1
    return rows


def _tx_signal(tx, symbols: np.ndarray, cols: list, const: Constellation,
               mode: SpMode) -> np.ndarray:
    """Signal a terminal emits given ``symbols[..., j]`` = point index of ``cols[j]``."""
    pick = [cols.index(c) for c in tx.codewords]
    if len(pick) == 1:
        return const.points[symbols[..., pick[0]]] * tx.scale
    amp = math.sqrt(tx.power)
    if mode is SpMode.XOR:
        label = symbols[..., pick[0]]
        for p in pick[1:]:
            label = label ^ symbols[..., p]
        return const.points[label] * amp
    # amplitude sum: each codeword at its own scale, as in the equivalent matrix
    return sum(const.points[symbols[..., p]] for p in pick) * tx.scale


def _slot_signal(slot: Slot, gains: np.ndarray, idx: np.ndarray, const, mode, rows) -> np.ndarray:
    """Noiseless received slot (without sqrt(snr)) for point indices ``idx[..., K]``."""
    cols = list(range(idx.shape[-1]))
    out = 0
    for tx in slot.transmissions:
        sig = _tx_signal(tx, idx, cols, const, mode)
        out = out + gains[..., rows[tx.node], :] * sig[..., None]
    return out


def transmit_concurrent(ch: ChannelRealization, spec: ProtocolSpec, idx: np.ndarray,
                        const: Constellation, snr: float, noise: np.ndarray | None = None):
    """Received per-slot vectors ``(..., n_slots, N)`` for a non-Alamouti schedule."""
    slots = schedule_slots(spec)
    if any(s.alamouti for s in slots):
        raise ParameterError("Alamouti slots are handled by the standard-protocol chain")
    rows = _node_rows(spec)
    y = np.stack([_slot_signal(s, ch.gains, idx, const, spec.sp_mode, rows) for s in slots], axis=-2)
    y = math.sqrt(snr) * y
    if noise is not None:
        y = y + noise.reshape(y.shape)
    return y


@lru_cache(maxsize=None)
def _combos(order: int, m: int) -> np.ndarray:
    return np.array(list(itertools.product(range(order), repeat=m)), dtype=np.int64).reshape(-1, m)


def _outer_re(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``Re(u[:, None] * v[None, :])`` without a complex temporary."""
    return np.multiply.outer(u.real, v.real) - np.multiply.outer(u.imag, v.imag)


def _slot_metric(y: np.ndarray, gains: np.ndarray, signals: list, a: float) -> np.ndarray:
    """``|y - a * sum_i h_i sig_i|^2 - |y|^2`` for every hypothesis of one slot.

    Expanded into matched-filter outputs ``z_i = h_i^H y`` and the Gram
    ``h_i^H h_j`` so the per-hypothesis work is a few real outer products.
    """
    hs = [gains[:, row, :] for row, _ in signals]
    sig = [s for _, s in signals]
    out = 0
    for i, (h, s) in enumerate(zip(hs, sig)):
        z = np.sum(np.conj(h) * y, axis=-1)
        out = out - 2 * a * _outer_re(np.conj(z), s)
        gii = np.sum(np.abs(h) ** 2, axis=-1)
        out = out + a * a * np.multiply.outer(gii, np.abs(s) ** 2)
        for j in range(i + 1, len(hs)):
            gij = np.sum(np.conj(h) * hs[j], axis=-1)
            out = out + 2 * a * a * _outer_re(gij, np.conj(s) * sig[j])
    return out


def mlsd_detect(received, ch: ChannelRealization, spec: ProtocolSpec,
                const: Constellation | None = None, snr: float = 1.0,
                budget: int = MLSD_BUDGET, chunk: int | None = None) -> np.ndarray:
    """Exhaustive maximum-likelihood sequence detection.

    Every length-K sequence of point indices is scored with the total
    Euclidean metric over all slots; relay transmissions are regenerated per
    hypothesis (repetition, amplitude sum or label XOR). The slot metrics
    only depend on the codewords active in that slot, so each is tabulated
    over those codewords and broadcast into the full ``order**K`` hypothesis
    array before the argmin. Ties go to the lowest sequence index, with
    codeword 0 as the most significant digit.

    ``received`` has shape ``(..., n_slots, N)``; returns ``(..., K)`` indices.
    """
    if spec.protocol is Protocol.STANDARD:
        raise ParameterError("the standard protocol uses the MRC receiver")
    const = const or qam(default_order(spec.protocol))
    K, Q = spec.n_codewords, const.order
    n_hyp = Q ** K
    if n_hyp > budget:
        raise CapacityError(f"{Q}^{K} = {n_hyp} hypotheses exceeds the budget of {budget}; "
                            "use a smaller L or constellation")
    slots = schedule_slots(spec)
    rows = _node_rows(spec)
    y = np.asarray(received, dtype=complex)
    gains = ch.gains
    batch = y.shape[:-2]
    y = y.reshape((-1,) + y.shape[-2:])
    gains = np.broadcast_to(gains, batch + gains.shape[-2:]).reshape((-1,) + gains.shape[-2:])
    T = y.shape[0]
    if chunk is None:
        chunk = max(1, 2 ** 22 // n_hyp)
    a = math.sqrt(snr)
    plan = []
    for slot in slots:
        cols = list(slot.codewords)
        combos = _combos(Q, len(cols))
        signals = [(rows[tx.node], _tx_signal(tx, combos, cols, const, spec.sp_mode))
                   for tx in slot.transmissions]
        shape = [1] * K
        for c in cols:
            shape[c] = Q
        plan.append((signals, tuple(shape)))
    order = sorted(range(len(plan)), key=lambda t: -sum(q > 1 for q in plan[t][1]))
    decisions = np.empty((T, K), dtype=np.int64)
    for t0 in range(0, T, chunk):
        sl = slice(t0, min(T, t0 + chunk))
        n = sl.stop - sl.start
        # fold each slot table into a small accumulator covering its codewords,
        # so the full Q**K array is touched once per accumulator
        accs = []
        for t in order:
            signals, shape = plan[t]
            table = _slot_metric(y[sl, t], gains[sl], signals, a).reshape((n,) + shape)
            for acc in accs:
                if all(s == 1 or s == q for s, q in zip(shape, acc.shape[1:])):
                    acc += table
                    break
            else:
                accs.append(table.copy())
        total = accs[0]
        for acc in accs[1:]:
            if np.broadcast_shapes(total.shape, acc.shape) == total.shape:
                total += acc
            else:
                total = total + acc
        total = np.broadcast_to(total, (n,) + (Q,) * K)
        best = np.argmin(total.reshape(n, -1), axis=-1)
        decisions[sl] = np.stack(np.unravel_index(best, (Q,) * K), axis=-1)
    return decisions.reshape(batch + (K,))


_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


def bit_errors(sent: np.ndarray, decided: np.ndarray) -> np.ndarray:
    """Bit errors per trial between index arrays ``(..., K)`` (labels = indices)."""
    return _POPCOUNT[np.bitwise_xor(sent, decided)].sum(axis=-1)


class BerChain:
    """Batched transmit/detect chain for one protocol and constellation.

    ``run(gains, noise, bits)`` takes per-trial channel gains, unit-variance
    noise and uniform bit draws and returns bit errors per trial.
    """

    def __init__(self, spec: ProtocolSpec, order: int | None = None):
        self.spec = spec
        self.const = qam(order or default_order(spec.protocol))
        K = spec.n_codewords
        # standard protocol: each codeword is an Alamouti pair of symbols
        self.symbols_per_codeword = 2 if spec.protocol is Protocol.STANDARD else 1
        self.n_symbols = K * self.symbols_per_codeword
        self.bits_per_trial = self.n_symbols * self.const.bits_per_symbol
        if spec.protocol is Protocol.STANDARD:
            self.noise_dim = 4 * K * spec.N
        else:
            self.noise_dim = len(schedule_slots(spec)) * spec.N
        if spec.protocol is not Protocol.STANDARD:
            n_hyp = self.const.order ** K
            if n_hyp > MLSD_BUDGET:
                raise CapacityError(f"MLSD would need {n_hyp} hypotheses; budget is {MLSD_BUDGET}")

    def symbols_from_bits(self, bits: np.ndarray) -> np.ndarray:
        b = self.const.bits_per_symbol
        bits = bits.reshape(bits.shape[:-1] + (self.n_symbols, b)).astype(np.int64)
        weights = 1 << np.arange(b - 1, -1, -1)
        return bits @ weights

    def run(self, ch: ChannelRealization, noise: np.ndarray, bits: np.ndarray, snr: float) -> np.ndarray:
        idx = self.symbols_from_bits(bits)
        if self.spec.protocol is Protocol.STANDARD:
            decided = self._standard(ch, idx, noise, snr)
        elif self.spec.protocol is Protocol.DIRECT:
            y = transmit_concurrent(ch, self.spec, idx, self.const, snr, noise)
            src = ch.gains[..., [c % self.spec.n_sources for c in range(self.spec.n_codewords)], :]
            decided = mrc_detect(y, src, self.const, snr)
        else:
            y = transmit_concurrent(ch, self.spec, idx, self.const, snr, noise)
            decided = mlsd_detect(y, ch, self.spec, self.const, snr)
        return bit_errors(idx, decided)

    def _standard(self, ch, idx, noise, snr):
        spec, N = self.spec, self.spec.N
        K = spec.n_codewords
        pts = self.const.points[idx].reshape(idx.shape[:-1] + (K, 2))
        noise = noise.reshape(noise.shape[:-1] + (K, 4, N))
        a = math.sqrt(snr)
        h_src = ch.gains[..., [c % spec.n_sources for c in range(K)], :]  # (..., K, N)
        h1 = ch.h_r1[..., None, :]
        h2 = ch.h_r2[..., None, :]
        # broadcast step: source sends the pair over two channel uses
        y_direct = a * h_src[..., None, :] * pts[..., None] + noise[..., 0:2, :]
        # relaying step: distributed Alamouti, each relay at half power
        block = alamouti_transmit(pts[..., 0], pts[..., 1])  # (..., K, slot, relay)
        y_relay = a * (block[..., 0, None] * h1[..., None, :] + block[..., 1, None] * h2[..., None, :]) \
            + noise[..., 2:4, :]
        # virtual SIMO per symbol: [y_direct; y1; conj(y2)] with columns [h_s; c_k / sqrt(2)]
        y1, y2c = y_relay[..., 0, :], np.conj(y_relay[..., 1, :])
        h1b = np.broadcast_to(h1, h_src.shape)
        h2b = np.broadcast_to(h2, h_src.shape)
        s = 1.0 / math.sqrt(2.0)
        obs = [np.concatenate([y_direct[..., 0, :], y1, y2c], axis=-1),
               np.concatenate([y_direct[..., 1, :], y1, y2c], axis=-1)]
        cols = [np.concatenate([h_src, s * h1b, s * np.conj(h2b)], axis=-1),
                np.concatenate([h_src, s * h2b, -s * np.conj(h1b)], axis=-1)]
        d = [mrc_detect(o, c, self.const, snr) for o, c in zip(obs, cols)]
        return np.stack(d, axis=-1).reshape(idx.shape)


def simulate_ber(spec: ProtocolSpec, snr_grid_db, min_bit_errors: int = 500,
                 max_trials: int = 10 ** 7, seed: int = 0, order: int | None = None,
                 workers: int = 1, **kwargs):
    """Bit-error-rate curve; thin wrapper over :func:`relaysim.sim.run`."""
    from .sim import SimConfig, run

    config = SimConfig(spec=spec, mode="ber", snr_grid_db=tuple(snr_grid_db), order=order,
                       min_events=min_bit_errors, max_trials=max_trials, seed=seed,
                       workers=workers, **kwargs)
    return run(config)
