"""Monte-Carlo orchestration.

Randomness is addressed per trial: SNR point ``k`` owns a Philox key derived
from ``(seed, k)``, and trial ``i`` reads the ``D`` uniforms starting at
stream position ``i * D`` (``D`` is the per-trial draw count rounded up to a
multiple of four, one Philox counter step). Any partition of the trial range
into blocks, in any order, on any number of workers, therefore sees exactly
the same draws, and counts are merged by summation.
"""

from __future__ import annotations

import dataclasses
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy import stats

from . import __version__
from .channel import ChannelRealization, complex_from_uniforms
from .errors import MergeError, ParameterError, RunCancelled
from .outage import EXHAUSTIVE_LIMIT, outage_events, rate_from_multiplexing
from .schedule import ProtocolSpec, assemble

__all__ = [
    "SimConfig",
    "PointEstimate",
    "ResultCurve",
    "run",
    "merge",
    "wilson_interval",
    "db_to_linear",
    "trial_uniforms",
    "MAX_WORKERS_ENV",
]

MAX_WORKERS_ENV = "RELAYSIM_MAX_WORKERS"
OUTAGE_BLOCK = 1 << 16
BER_BLOCK = 1 << 12


def db_to_linear(snr_db: float) -> float:
    return 10.0 ** (snr_db / 10.0)


def wilson_interval(events: int, trials: int, confidence: float = 0.95) -> tuple:
    if trials == 0:
        return 0.0, 1.0
    ci = stats.binomtest(int(events), int(trials)).proportion_ci(confidence, method="wilson")
    p = events / trials
    return min(float(ci.low), p), max(float(ci.high), p)


@dataclass(frozen=True)
class SimConfig:
    spec: ProtocolSpec
    mode: str = "outage"
    snr_grid_db: tuple = ()
    r: Fraction | float | None = None
    rate: float | None = None
    order: int | None = None
    trials: int = 10 ** 6
    min_events: int | None = None
    max_trials: int = 10 ** 7
    seed: int = 0
    workers: int = 1
    first_trial: int = 0
    exhaustive_limit: int = EXHAUSTIVE_LIMIT
    scope: str = "system"

    def __post_init__(self):
        if not isinstance(self.spec, ProtocolSpec):
            raise ParameterError("spec must be a ProtocolSpec")
        if self.mode not in ("outage", "ber"):
            raise ParameterError(f"mode must be 'outage' or 'ber', got {self.mode!r}")
        grid = tuple(float(x) for x in self.snr_grid_db)
        if not grid:
            raise ParameterError("SNR grid is empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ParameterError("SNR grid must be strictly increasing")
        object.__setattr__(self, "snr_grid_db", grid)
        if self.mode == "outage":
            if (self.r is None) == (self.rate is None):
                raise ParameterError("outage runs need exactly one of r (multiplexing gain) or rate")
            if self.r is not None and self.r < 0 or self.rate is not None and self.rate < 0:
                raise ParameterError("rates must be nonnegative")
        for name in ("trials", "max_trials", "workers"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be positive")
        if self.min_events is not None and self.min_events < 1:
            raise ParameterError("min_events must be positive")
        if self.scope not in ("system", "source"):
            raise ParameterError(f"scope must be 'system' or 'source', got {self.scope!r}")
        if self.first_trial < 0:
            raise ParameterError("first_trial must be nonnegative")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ParameterError("seed must fit in 64 bits")

    @property
    def event_target(self) -> int:
        if self.min_events is not None:
            return self.min_events
        return 500 if self.mode == "ber" else 10

    def rate_at(self, snr_db: float) -> float:
        if self.rate is not None:
            return float(self.rate)
        s = self.spec
        return rate_from_multiplexing(self.r, db_to_linear(snr_db), s.protocol, s.L, s.M)

    def echo(self) -> dict:
        """Plain-data view of the settings that determine the counts."""
        s = self.spec
        out = {
            "protocol": s.protocol.value, "L": s.L, "M": s.M, "N": s.N,
            "sp_mode": int(s.sp_mode), "mode": self.mode,
            "snr_grid_db": list(self.snr_grid_db), "seed": int(self.seed),
        }
        if self.mode == "outage":
            out.update(r=None if self.r is None else str(self.r), rate=self.rate,
                       scope=self.scope, trials=self.trials, first_trial=self.first_trial)
        else:
            from .modem import default_order
            out.update(order=self.order or default_order(s.protocol),
                       min_events=self.event_target, max_trials=self.max_trials,
                       first_trial=self.first_trial)
        return out

    def partition_key(self) -> tuple:
        """Fields that must agree for results to be mergeable."""
        return dataclasses.astuple(dataclasses.replace(
            self, trials=1, first_trial=0, workers=1, max_trials=1))


@dataclass
class PointEstimate:
    snr_db: float
    events: int = 0
    trials: int = 0
    intervals: int = 0
    low_confidence: bool = False

    @property
    def estimate(self) -> float:
        return self.events / self.trials if self.trials else 0.0

    @property
    def ci(self) -> tuple:
        return wilson_interval(self.events, self.trials)

    @property
    def ci_low(self) -> float:
        return self.ci[0]

    @property
    def ci_high(self) -> float:
        return self.ci[1]

    @property
    def std_error(self) -> float:
        p = self.estimate
        return math.sqrt(p * (1 - p) / self.trials) if self.trials else math.inf


@dataclass
class ResultCurve:
    """Per-SNR counts. For BER runs ``trials`` counts bits and ``intervals`` fading blocks."""

    config: SimConfig
    points: list
    metadata: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, config: SimConfig) -> "ResultCurve":
        return cls(config, [PointEstimate(s) for s in config.snr_grid_db], {"empty": True})

    @property
    def snr_db(self) -> np.ndarray:
        return np.array([p.snr_db for p in self.points])

    @property
    def estimates(self) -> np.ndarray:
        return np.array([p.estimate for p in self.points])

    @property
    def events(self) -> np.ndarray:
        return np.array([p.events for p in self.points])

    @property
    def is_empty(self) -> bool:
        return all(p.trials == 0 for p in self.points)

    def counts(self) -> list:
        return [(p.snr_db, p.events, p.trials, p.intervals) for p in self.points]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ResultCurve):
            return NotImplemented
        a, b = self.config, other.config
        return (a.partition_key() == b.partition_key() and a.first_trial == b.first_trial
                and self.counts() == other.counts())

    def csv_rows(self) -> list:
        rows = ["snr_db,estimate,ci_low,ci_high,trials,events"]
        for p in self.points:
            lo, hi = p.ci
            rows.append(f"{p.snr_db:g},{p.estimate:.10e},{lo:.10e},{hi:.10e},{p.trials},{p.events}")
        return rows

    def to_csv(self, timestamp: bool = True) -> str:
        lines = [f"# relaysim {__version__}"]
        if timestamp:
            lines.append(f"# generated: {time.strftime('%Y-%m-%dT%H:%M:%S%z')}")
        for key, value in self.config.echo().items():
            lines.append(f"# {key}: {value}")
        flagged = [f"{p.snr_db:g}" for p in self.points if p.low_confidence]
        if flagged:
            lines.append(f"# low_confidence_snr_db: {' '.join(flagged)}")
        lines.extend(self.csv_rows())
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "config": self.config.echo(),
            "points": [
                {"snr_db": p.snr_db, "estimate": p.estimate, "ci_low": p.ci_low,
                 "ci_high": p.ci_high, "trials": p.trials, "events": p.events,
                 "intervals": p.intervals, "low_confidence": p.low_confidence}
                for p in self.points
            ],
            "metadata": dict(self.metadata),
        }


def _philox_key(seed: int, snr_index: int) -> np.ndarray:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(snr_index),))
    return ss.generate_state(2, dtype=np.uint64)


def trial_uniforms(seed: int, snr_index: int, start: int, count: int, per_trial: int) -> np.ndarray:
    """Uniforms for trials ``[start, start + count)``, one row per trial."""
    if per_trial % 4:
        raise ParameterError("per-trial draw count must be a multiple of 4")
    bitgen = np.random.Philox(key=_philox_key(seed, snr_index), counter=start * per_trial // 4)
    return np.random.Generator(bitgen).random((count, per_trial))


class _Trial:
    """Per-config trial kernel: draw layout and the event counter."""

    def __init__(self, config: SimConfig):
        self.config = config
        spec = config.spec
        self.n_channel = 2 * (spec.M + 2) * spec.N
        # "source" scope: constraints over source S1's codewords only
        self.columns = list(range(0, spec.n_codewords, spec.M)) if config.scope == "source" else None
        if config.mode == "ber":
            from .modem import BerChain
            self.chain = BerChain(spec, config.order)
            used = self.n_channel + 2 * self.chain.noise_dim + self.chain.bits_per_trial
        else:
            self.chain = None
            used = self.n_channel
        self.per_trial = -(-used // 4) * 4

    def block(self, snr_index: int, start: int, count: int) -> tuple:
        """Returns ``(events, bernoulli_trials)`` for one block of trials."""
        cfg, spec = self.config, self.config.spec
        u = trial_uniforms(cfg.seed, snr_index, start, count, self.per_trial)
        a = self.n_channel
        gains = complex_from_uniforms(u[:, :a].reshape(count, spec.M + 2, spec.N, 2))
        ch = ChannelRealization(gains)
        snr_db = cfg.snr_grid_db[snr_index]
        rho = db_to_linear(snr_db)
        if self.chain is None:
            H = assemble(ch, spec)
            events = outage_events(H, rho, cfg.rate_at(snr_db), limit=cfg.exhaustive_limit,
                                   columns=self.columns)
            return int(events.sum()), count
        b = a + 2 * self.chain.noise_dim
        noise = complex_from_uniforms(u[:, a:b].reshape(count, -1, 2))
        bits = u[:, b:b + self.chain.bits_per_trial] < 0.5
        errors = self.chain.run(ch, noise, bits, rho)
        return int(errors.sum()), count * self.chain.bits_per_trial


_WORKER_KERNEL: dict = {}


def _run_unit(args) -> tuple:
    config, snr_index, start, count = args
    kernel = _WORKER_KERNEL.get(config)
    if kernel is None:
        kernel = _WORKER_KERNEL.setdefault(config, _Trial(config))
    return kernel.block(snr_index, start, count)


def _worker_count(requested: int) -> int:
    cap = os.environ.get(MAX_WORKERS_ENV)
    if cap:
        try:
            requested = min(requested, max(1, int(cap)))
        except ValueError:
            raise ParameterError(f"{MAX_WORKERS_ENV} must be an integer, got {cap!r}") from None
    return max(1, requested)


def run(config: SimConfig, progress: Callable | None = None, cancel=None) -> ResultCurve:
    """Execute every SNR point of ``config``.

    ``progress(snr_db, trials_done, events)`` is called after each block;
    ``cancel`` is any object with ``is_set()`` and is polled between blocks.
    Outage points run exactly ``config.trials`` fading blocks. BER points stop
    at the first block boundary where ``min_events`` bit errors have been seen
    or ``max_trials`` blocks were drawn; points that hit the trial budget are
    flagged ``low_confidence``.
    """
    t0 = time.perf_counter()
    workers = _worker_count(config.workers)
    kernel = _Trial(config)
    points = [PointEstimate(s) for s in config.snr_grid_db]
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    execute = (lambda units: list(pool.map(_run_unit, units))) if pool else \
        (lambda units: [kernel.block(*u[1:]) for u in units])

    def check_cancel():
        if cancel is not None and cancel.is_set():
            raise RunCancelled(ResultCurve(config, points, {"cancelled": True}))

    try:
        for k, point in enumerate(points):
            if config.mode == "outage":
                _run_fixed(config, k, point, execute, workers, progress, check_cancel)
            else:
                _run_until(config, k, point, execute, workers, progress, check_cancel)
    finally:
        if pool is not None:
            pool.shutdown()
    meta = {"version": __version__, "wall_time_s": time.perf_counter() - t0,
            "draws_per_trial": kernel.per_trial}
    return ResultCurve(config, points, meta)


def _run_fixed(config, k, point, execute, workers, progress, check_cancel):
    end = config.first_trial + config.trials
    starts = list(range(config.first_trial, end, OUTAGE_BLOCK))
    for w in range(0, len(starts), workers):
        check_cancel()
        units = [(config, k, s, min(OUTAGE_BLOCK, end - s)) for s in starts[w:w + workers]]
        for (_, _, _, count), (events, trials) in zip(units, execute(units)):
            point.events += events
            point.trials += trials
            point.intervals += count
        if progress:
            progress(point.snr_db, point.intervals, point.events)
    point.low_confidence = point.events < config.event_target


def _run_until(config, k, point, execute, workers, progress, check_cancel):
    target, budget = config.event_target, config.max_trials
    start = config.first_trial
    done = False
    while not done:
        check_cancel()
        units = []
        s = start
        for _ in range(workers):
            remaining = config.first_trial + budget - s
            if remaining <= 0:
                break
            units.append((config, k, s, min(BER_BLOCK, remaining)))
            s += units[-1][3]
        if not units:
            break
        # consume in block order so the stopping point ignores the worker count
        for (_, _, _, count), (events, trials) in zip(units, execute(units)):
            point.events += events
            point.trials += trials
            point.intervals += count
            start += count
            if point.events >= target or point.intervals >= budget:
                done = True
                break
        if progress:
            progress(point.snr_db, point.intervals, point.events)
    point.low_confidence = point.events < target


def merge(partials: list) -> ResultCurve:
    """Sum counts of runs that differ only in their trial range."""
    partials = list(partials)
    if not partials:
        raise MergeError("nothing to merge")
    key = partials[0].config.partition_key()
    for p in partials[1:]:
        if p.config.partition_key() != key:
            raise MergeError("configurations differ beyond the trial partition")
    filled = [p for p in partials if not p.is_empty]
    base = partials[0].config
    if not filled:
        return ResultCurve.empty(base)
    ranges = sorted((p.config.first_trial, p.config.first_trial + p.points[0].intervals)
                    for p in filled)
    if any(b[0] < a[1] for a, b in zip(ranges, ranges[1:])):
        raise MergeError("partial runs cover overlapping trial ranges")
    config = dataclasses.replace(
        filled[0].config,
        first_trial=min(p.config.first_trial for p in filled),
        trials=sum(p.config.trials for p in filled),
        workers=min(p.config.workers for p in partials),
    )
    points = []
    target = config.event_target
    for values in zip(*(p.points for p in filled)):
        pt = PointEstimate(values[0].snr_db)
        for v in values:
            pt.events += v.events
            pt.trials += v.trials
            pt.intervals += v.intervals
        pt.low_confidence = pt.events < target
        points.append(pt)
    wall = sum(p.metadata.get("wall_time_s", 0.0) for p in filled)
    return ResultCurve(config, points, {"version": __version__, "wall_time_s": wall,
                                        "merged_from": len(filled)})
