import dataclasses
import math
import threading
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relaysim.errors import MergeError, ParameterError, RunCancelled
from relaysim.schedule import Protocol, ProtocolSpec, SpMode
from relaysim.sim import (MAX_WORKERS_ENV, ResultCurve, SimConfig, merge, run, trial_uniforms,
                          wilson_interval)

SP = ProtocolSpec(Protocol.SUPERPOSITION, frame_length=2, n_antennas=1)


def outage_config(**kw):
    base = dict(spec=SP, mode="outage", snr_grid_db=(2.0, 5.0, 10.0), r=Fraction(1, 6),
                trials=20_000, seed=123)
    base.update(kw)
    return SimConfig(**base)


def ber_config(**kw):
    base = dict(spec=ProtocolSpec(Protocol.SUPERPOSITION, 1, n_antennas=1, sp_mode=SpMode.XOR),
                mode="ber", snr_grid_db=(6.0, 12.0), min_events=300, max_trials=50_000, seed=9)
    base.update(kw)
    return SimConfig(**base)


@pytest.mark.parametrize("make", [outage_config, ber_config], ids=["outage", "ber"])
def test_worker_count_does_not_change_counts(make):
    counts = {w: run(make(workers=w)).counts() for w in (1, 4, 8)}
    assert counts[1] == counts[4] == counts[8]


def test_same_seed_same_curve_different_seed_differs():
    assert run(outage_config()) == run(outage_config())
    assert run(outage_config()).counts() != run(outage_config(seed=124)).counts()


def test_appending_grid_points_keeps_existing_ones():
    short = run(outage_config(snr_grid_db=(2.0, 5.0)))
    longer = run(outage_config(snr_grid_db=(2.0, 5.0, 10.0)))
    assert short.counts() == longer.counts()[:2]


def test_quarter_runs_merge_to_full_run():
    full = run(outage_config(trials=80_000))
    parts = [run(outage_config(trials=20_000, first_trial=20_000 * i)) for i in range(4)]
    assert merge(parts) == full
    assert merge(parts[::-1]) == full


def test_uneven_partition_crossing_block_boundaries():
    full = run(outage_config(trials=100_000))
    parts = [run(outage_config(trials=70_001)), run(outage_config(trials=29_999, first_trial=70_001))]
    assert merge(parts).counts() == full.counts()


def test_merge_identity_and_commutativity():
    a = run(outage_config(trials=5_000))
    b = run(outage_config(trials=5_000, first_trial=5_000))
    empty = ResultCurve.empty(outage_config(trials=1, first_trial=10_000))
    assert merge([a, empty]) == a
    assert merge([a, b]) == merge([b, a])


def test_merge_rejects_mismatch_and_overlap():
    a = run(outage_config(trials=5_000))
    with pytest.raises(MergeError):
        merge([a, run(outage_config(trials=5_000, seed=1, first_trial=5_000))])
    with pytest.raises(MergeError):
        merge([a, run(outage_config(trials=5_000, first_trial=2_500))])
    with pytest.raises(MergeError):
        merge([])


@pytest.mark.parametrize("kw", [dict(snr_grid_db=()), dict(snr_grid_db=(5.0, 5.0)),
                                dict(snr_grid_db=(5.0, 0.0)), dict(trials=0), dict(workers=0),
                                dict(r=None), dict(rate=1.0), dict(seed=-1), dict(scope="x")])
def test_config_validation(kw):
    with pytest.raises(ParameterError):
        outage_config(**kw)


def test_record_invariants():
    res = run(outage_config())
    for p in res.points:
        assert 0 <= p.ci_low <= p.estimate <= p.ci_high <= 1
        assert p.events <= p.trials


def test_low_confidence_flag_and_continue():
    res = run(ber_config(snr_grid_db=(6.0, 30.0), max_trials=2_000))
    assert res.points[1].low_confidence and res.points[1].intervals == 2_000
    assert not res.points[0].low_confidence
    assert "low_confidence_snr_db: 30" in res.to_csv()


def test_ber_stops_after_target():
    res = run(ber_config())
    p = res.points[0]
    assert p.events >= 300 and p.intervals < 50_000
    assert p.trials == p.intervals * 2 * 3  # two 8-QAM symbols per fading block


def test_progress_and_cancel():
    seen = []
    run(outage_config(trials=70_000), progress=lambda *a: seen.append(a))
    assert seen and seen[-1][1] == 70_000

    class StopAfterFirst:
        calls = 0

        def is_set(self):
            self.calls += 1
            return self.calls > 1

    with pytest.raises(RunCancelled) as info:
        run(outage_config(trials=200_000), cancel=StopAfterFirst())
    partial = info.value.partial
    assert 0 < partial.points[0].intervals < 200_000
    flag = threading.Event()
    flag.set()
    with pytest.raises(RunCancelled):
        run(outage_config(), cancel=flag)


def test_worker_cap(monkeypatch):
    monkeypatch.setenv(MAX_WORKERS_ENV, "1")
    assert run(outage_config(workers=8)).counts() == run(outage_config()).counts()


def test_trial_uniforms_are_addressable():
    whole = trial_uniforms(7, 2, 0, 10, 24)
    np.testing.assert_array_equal(whole[6:9], trial_uniforms(7, 2, 6, 3, 24))
    assert not np.array_equal(whole, trial_uniforms(7, 3, 0, 10, 24))


def test_wilson_interval():
    assert wilson_interval(0, 0) == (0.0, 1.0)
    lo, hi = wilson_interval(0, 100)
    assert lo == 0 and 0 < hi < 0.05
    lo, hi = wilson_interval(50, 100)
    assert lo == pytest.approx(0.4038, abs=1e-3) and hi == pytest.approx(0.5962, abs=1e-3)


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 0.5))
@settings(max_examples=20, deadline=None)
def test_ci_width_shrinks_with_trials(seed, p):
    rng = np.random.default_rng(seed)
    n = 40_000
    draws = rng.random(2 * n) < p
    w1 = np.diff(wilson_interval(int(draws[:n].sum()), n))[0]
    w2 = np.diff(wilson_interval(int(draws.sum()), 2 * n))[0]
    assert w2 / w1 == pytest.approx(1 / math.sqrt(2), rel=0.05)


def test_csv_and_dict_output():
    res = run(outage_config(trials=2_000))
    text = res.to_csv(timestamp=False)
    assert "generated" not in text
    header = [l for l in text.splitlines() if not l.startswith("#")][0]
    assert header == "snr_db,estimate,ci_low,ci_high,trials,events"
    d = res.to_dict()
    assert d["config"]["protocol"] == "superposition" and len(d["points"]) == 3
    assert res.metadata["version"]
    assert dataclasses.replace(res.config, workers=3).partition_key() == res.config.partition_key()
