"""Time-division schedules and the stacked equivalent channel matrix.

Every protocol is described as a list of :class:`Slot` objects, each holding
the terminals active in that slot and which codewords they carry. The
equivalent channel ``H`` is then assembled generically: the row block of a
slot is ``sum(scale * h_node)`` placed in the columns of the codewords that
terminal carries. Columns are ordered ``x_1^1, x_2^1, ..., x_M^1, x_1^2, ...``.

Power rule (uniform allocation): in a slot with ``k`` active terminals each
terminal gets power ``1/k``; a relay carrying ``m`` codewords splits its share
evenly, so each codeword contribution has amplitude ``1/sqrt(k*m)``.

The Alamouti relaying slot of the standard protocol occupies ``2N`` rows: the
orthogonal code turns the two-relay transmission of one codeword into a
virtual SIMO channel ``[h_r1; h_r2] / sqrt(2)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .channel import ChannelRealization
from .errors import ParameterError

__all__ = [
    "Protocol",
    "SpMode",
    "ProtocolSpec",
    "Tx",
    "Slot",
    "EquivalentChannel",
    "schedule_slots",
    "build_equivalent_channel",
    "build_superposition_matrix",
    "build_repetition_matrix",
    "build_direct_matrix",
    "build_standard_schedule",
    "build_msource_matrix",
    "subset_columns",
    "slot_powers",
]


class Protocol(str, enum.Enum):
    DIRECT = "direct"
    STANDARD = "standard"
    REPETITION = "repetition"
    SUPERPOSITION = "superposition"
    MSOURCE = "msource"

    @classmethod
    def parse(cls, value) -> "Protocol":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {
            "tdma": cls.DIRECT,
            "stbc": cls.STANDARD,
            "standardstbc": cls.STANDARD,
            "repetitionconcurrent": cls.REPETITION,
            "superpositionconcurrent": cls.SUPERPOSITION,
            "msourcesuperposition": cls.MSOURCE,
        }
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            names = ", ".join(p.value for p in cls)
            raise ParameterError(f"unknown protocol {value!r}; expected one of {names}") from None

    @property
    def concurrent(self) -> bool:
        return self in (Protocol.REPETITION, Protocol.SUPERPOSITION, Protocol.MSOURCE)


class SpMode(enum.IntEnum):
    """Relay superposition for the symbol-level chain: amplitude sum or label XOR."""

    SUM = 1
    XOR = 2


@dataclass(frozen=True)
class ProtocolSpec:
    protocol: Protocol
    frame_length: int = 1
    n_sources: int = 2
    n_antennas: int = 1
    sp_mode: SpMode = SpMode.SUM

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol.parse(self.protocol))
        try:
            object.__setattr__(self, "sp_mode", SpMode(int(self.sp_mode)))
        except ValueError:
            raise ParameterError(f"sp_mode must be 1 or 2, got {self.sp_mode!r}") from None
        for name in ("frame_length", "n_sources", "n_antennas"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ParameterError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.protocol is not Protocol.MSOURCE and self.n_sources != 2:
            raise ParameterError(f"{self.protocol.value} is a two-source protocol (n_sources=2)")

    @property
    def L(self) -> int:
        return self.frame_length

    @property
    def M(self) -> int:
        return self.n_sources

    @property
    def N(self) -> int:
        return self.n_antennas

    @property
    def n_codewords(self) -> int:
        return self.n_sources * self.frame_length


@dataclass(frozen=True)
class Tx:
    """One terminal's transmission in a slot; ``scale`` is the per-codeword amplitude."""

    node: str
    codewords: tuple
    scale: float

    @property
    def power(self) -> float:
        return len(self.codewords) * self.scale ** 2


@dataclass(frozen=True)
class Slot:
    transmissions: tuple
    alamouti: bool = False

    @property
    def codewords(self) -> tuple:
        return tuple(sorted({c for tx in self.transmissions for c in tx.codewords}))

    @property
    def power(self) -> float:
        return sum(tx.power for tx in self.transmissions)


@dataclass
class EquivalentChannel:
    matrix: np.ndarray
    n_slots: int
    n_codewords: int
    slot_map: list
    slot_rows: list = field(repr=False)
    spec: ProtocolSpec | None = None

    def row_block(self, slot: int) -> np.ndarray:
        """Rows of ``matrix`` belonging to 0-based slot index ``slot``."""
        return self.matrix[..., self.slot_rows[slot], :]

    def column_support(self, column: int) -> list:
        """0-based slot indices whose row block is nonzero in ``column``."""
        return [t for t in range(self.n_slots)
                if np.any(self.row_block(t)[..., :, column] != 0)]


def _source_node(codeword: int, n_sources: int) -> str:
    return f"S{codeword % n_sources + 1}"


def _relay_node(slot_number: int) -> str:
    # R1 speaks in even slots, R2 in odd ones (1-based slot numbers)
    return "R1" if slot_number % 2 == 0 else "R2"


def _share_power(entries: Sequence[tuple]) -> Slot:
    """Turn ``[(node, codewords), ...]`` into a slot obeying the uniform power rule."""
    k = len(entries)
    txs = tuple(Tx(node, tuple(cws), 1.0 / math.sqrt(k * len(cws))) for node, cws in entries)
    return Slot(txs)


def _concurrent_slots(n_codewords: int, n_sources: int, relay_lags: tuple) -> list:
    """Slots for a relay-alternating schedule.

    In 1-based slot ``t`` the active source sends codeword ``t-1`` and the
    active relay forwards codewords ``t-1-lag`` for every lag in
    ``relay_lags`` that falls inside the frame.
    """
    K = n_codewords
    slots = []
    for t in range(1, K + max(relay_lags) + 1):
        entries = []
        if t - 1 < K:
            entries.append((_source_node(t - 1, n_sources), (t - 1,)))
        fwd = sorted(t - 1 - lag for lag in relay_lags if 0 <= t - 1 - lag < K)
        if fwd:
            entries.append((_relay_node(t), tuple(fwd)))
        slots.append(_share_power(entries))
    return slots


def schedule_slots(spec: ProtocolSpec) -> list:
    """The channel-independent slot plan for ``spec``."""
    K, M = spec.n_codewords, spec.n_sources
    p = spec.protocol
    if p is Protocol.DIRECT:
        return [_share_power([(_source_node(c, M), (c,))]) for c in range(K)]
    if p is Protocol.STANDARD:
        slots = []
        half = 1.0 / math.sqrt(2.0)
        for c in range(K):
            slots.append(_share_power([(_source_node(c, M), (c,))]))
            slots.append(Slot((Tx("R1", (c,), half), Tx("R2", (c,), half)), alamouti=True))
        return slots
    if p is Protocol.REPETITION:
        return _concurrent_slots(K, M, relay_lags=(1,))
    # superposition: the relay re-sends the codeword it just decoded plus the one before
    return _concurrent_slots(K, M, relay_lags=(1, 2))


def slot_powers(slots: Iterable[Slot]) -> list:
    return [s.power for s in slots]


def _node_row(node: str, n_sources: int) -> int:
    kind, idx = node[0], int(node[1:])
    if kind == "S":
        return idx - 1
    return n_sources + idx - 1


def assemble(ch: ChannelRealization, spec: ProtocolSpec, slots: list | None = None) -> EquivalentChannel:
    """Build ``H`` from a slot plan; batched realizations give a batched matrix."""
    if ch.n_sources != spec.n_sources:
        raise ParameterError(f"realization has {ch.n_sources} sources, schedule needs {spec.n_sources}")
    if slots is None:
        slots = schedule_slots(spec)
    N, K = ch.n_antennas, spec.n_codewords
    heights = [2 * N if s.alamouti else N for s in slots]
    H = np.zeros(ch.batch_shape + (sum(heights), K), dtype=complex)
    rows, start = [], 0
    for slot, height in zip(slots, heights):
        rows.append(slice(start, start + height))
        for j, tx in enumerate(slot.transmissions):
            h = ch.gains[..., _node_row(tx.node, spec.n_sources), :] * tx.scale
            # Alamouti: each relay gets its own N-row half of the virtual SIMO block
            r0 = start + (j * N if slot.alamouti else 0)
            for c in tx.codewords:
                H[..., r0:r0 + N, c] += h
        start += height
    return EquivalentChannel(matrix=H, n_slots=len(slots), n_codewords=K,
                             slot_map=list(slots), slot_rows=rows, spec=spec)


def _two_source_spec(protocol: Protocol, ch: ChannelRealization, L: int) -> ProtocolSpec:
    if ch.n_sources != 2:
        raise ParameterError("two-source protocol needs a realization with exactly two sources")
    return ProtocolSpec(protocol, frame_length=L, n_sources=2, n_antennas=ch.n_antennas)


def build_superposition_matrix(ch: ChannelRealization, L: int) -> EquivalentChannel:
    return assemble(ch, _two_source_spec(Protocol.SUPERPOSITION, ch, L))


def build_repetition_matrix(ch: ChannelRealization, L: int) -> EquivalentChannel:
    return assemble(ch, _two_source_spec(Protocol.REPETITION, ch, L))


def build_direct_matrix(ch: ChannelRealization, L: int) -> EquivalentChannel:
    return assemble(ch, _two_source_spec(Protocol.DIRECT, ch, L))


def build_standard_schedule(ch: ChannelRealization, L: int) -> EquivalentChannel:
    return assemble(ch, _two_source_spec(Protocol.STANDARD, ch, L))


def build_msource_matrix(ch: ChannelRealization, M: int, L: int) -> EquivalentChannel:
    spec = ProtocolSpec(Protocol.MSOURCE, frame_length=L, n_sources=M, n_antennas=ch.n_antennas)
    return assemble(ch, spec)


def build_equivalent_channel(ch: ChannelRealization, spec: ProtocolSpec) -> EquivalentChannel:
    return assemble(ch, spec)


def subset_columns(H, S) -> np.ndarray:
    """Column submatrix of ``H`` for the 0-based codeword indices in ``S``."""
    matrix = H.matrix if isinstance(H, EquivalentChannel) else np.asarray(H)
    idx = sorted({int(i) for i in S})
    if not idx:
        raise ParameterError("subset must be non-empty")
    K = matrix.shape[-1]
    if idx[0] < 0 or idx[-1] >= K:
        raise ParameterError(f"subset indices must lie in [0, {K}), got {idx}")
    return matrix[..., idx]
