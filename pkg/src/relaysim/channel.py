"""Block Rayleigh fading and AWGN for the sources/relays/destination network.

All complex Gaussian samples are produced by Box-Muller from exactly two
uniform draws per entry. That fixed consumption is what lets the simulator
address any trial's randomness by counter offset (see :mod:`relaysim.sim`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

__all__ = [
    "ChannelRealization",
    "NoiseBlock",
    "complex_normal",
    "complex_from_uniforms",
    "draw_realization",
    "draw_noise",
    "uniforms_per_realization",
]


def complex_from_uniforms(u: np.ndarray) -> np.ndarray:
    """Box-Muller: pairs along the last axis of ``u`` become one CN(0, 1) sample."""
    radius = np.sqrt(-np.log1p(-u[..., 0]))  # u in [0, 1) so 1-u is never 0
    return radius * np.exp(2j * np.pi * u[..., 1])


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly-symmetric CN(0, 1) samples (variance 1/2 per real part)."""
    shape = (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)
    return complex_from_uniforms(rng.random(shape + (2,)))


@dataclass(frozen=True)
class ChannelRealization:
    """Destination-facing fading vectors for one coherence interval.

    ``gains`` has shape ``(..., M + 2, N)``: rows ``0..M-1`` are the sources,
    row ``M`` is relay R1 and row ``M + 1`` is relay R2. Leading axes, if any,
    index independent trials.
    """

    gains: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=complex)
        if g.ndim < 2 or g.shape[-2] < 3 or g.shape[-1] < 1:
            raise ParameterError(f"gains must have shape (..., M+2, N) with M, N >= 1, got {g.shape}")
        if not np.all(np.isfinite(g)):
            raise ParameterError("channel gains must be finite")
        object.__setattr__(self, "gains", g)

    @classmethod
    def from_vectors(cls, h_s, h_r1, h_r2) -> "ChannelRealization":
        """Build from a list of source vectors and the two relay vectors."""
        h_s = [np.atleast_1d(np.asarray(h, dtype=complex)) for h in h_s]
        rows = h_s + [np.atleast_1d(np.asarray(h_r1, dtype=complex)),
                      np.atleast_1d(np.asarray(h_r2, dtype=complex))]
        lengths = {r.shape[-1] for r in rows}
        if len(lengths) != 1:
            raise ParameterError("all channel vectors must have the same length")
        return cls(np.stack(rows, axis=-2))

    @property
    def n_antennas(self) -> int:
        return self.gains.shape[-1]

    @property
    def n_sources(self) -> int:
        return self.gains.shape[-2] - 2

    @property
    def batch_shape(self) -> tuple:
        return self.gains.shape[:-2]

    @property
    def h_s(self) -> list:
        return [self.gains[..., i, :] for i in range(self.n_sources)]

    @property
    def h_s1(self) -> np.ndarray:
        return self.gains[..., 0, :]

    @property
    def h_s2(self) -> np.ndarray:
        if self.n_sources < 2:
            raise ParameterError("realization has a single source")
        return self.gains[..., 1, :]

    @property
    def h_r1(self) -> np.ndarray:
        return self.gains[..., self.n_sources, :]

    @property
    def h_r2(self) -> np.ndarray:
        return self.gains[..., self.n_sources + 1, :]

    def scaled(self, c: complex) -> "ChannelRealization":
        return ChannelRealization(self.gains * c)

    def __getitem__(self, index) -> "ChannelRealization":
        """Select trials along the leading batch axes."""
        if not self.batch_shape:
            raise IndexError("unbatched realization")
        return ChannelRealization(self.gains[index])


@dataclass(frozen=True)
class NoiseBlock:
    n: np.ndarray

    @property
    def dimension(self) -> int:
        return self.n.shape[-1]


def uniforms_per_realization(n_antennas: int, n_sources: int) -> int:
    return 2 * (n_sources + 2) * n_antennas


def draw_realization(rng: np.random.Generator, n_antennas: int, n_sources: int = 2,
                     size: int | None = None) -> ChannelRealization:
    """Draw i.i.d. CN(0, 1) gains for every node-to-destination link.

    With ``size`` the result carries a leading trial axis of that length; the
    draws are laid out trial-major so trial ``i`` consumes uniforms
    ``[i * U, (i + 1) * U)`` with ``U = uniforms_per_realization(...)``.
    """
    if int(n_antennas) < 1 or int(n_sources) < 1:
        raise ParameterError(f"need n_antennas >= 1 and n_sources >= 1, got {n_antennas}, {n_sources}")
    shape = (n_sources + 2, n_antennas) if size is None else (int(size), n_sources + 2, n_antennas)
    return ChannelRealization(complex_normal(rng, shape))


def draw_noise(rng: np.random.Generator, dimension: int, size: int | None = None) -> NoiseBlock:
    """Unit-variance complex AWGN of the given receive dimension."""
    if int(dimension) < 1:
        raise ParameterError(f"noise dimension must be >= 1, got {dimension}")
    shape = (int(dimension),) if size is None else (int(size), int(dimension))
    return NoiseBlock(complex_normal(rng, shape))
