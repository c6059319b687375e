import numpy as np
import pytest

from tdrope.adaptive import (
    BootstrapInterval,
    LepskiConfig,
    block_indices,
    bootstrap_ci,
    bootstrap_ci_batched,
    lepski_index,
    lepski_select,
    moving_block_resample,
)
from tdrope.config import preset
from tdrope.estimators import TruncationSchedule
from tdrope.exceptions import DegenerateWeightsError
from tdrope.harness import batch_estimator_for, estimator_for, prepare_nuisances, simulate, stream
from tdrope.mdp import Trajectory, make_rng


def toy(T=30):
    s = np.arange(T)
    return Trajectory(s, s % 2, s.astype(float), s + 1)


class TestResample:
    def test_full_block(self):
        traj = toy()
        out = moving_block_resample(traj, 30, make_rng(0))
        assert np.array_equal(out.states, traj.states) and np.array_equal(out.next_states, traj.next_states)

    def test_unit_blocks(self):
        idx = block_indices(30, 1, make_rng(1))
        assert idx.shape == (30,) and idx.min() >= 0 and idx.max() < 30

    @pytest.mark.parametrize("ell", [1, 3, 7, 29, 30])
    def test_length_and_blocks(self, ell):
        traj = toy()
        out = moving_block_resample(traj, ell, make_rng(ell))
        assert len(out) == 30
        # tuples keep their own next state, and blocks are runs of consecutive tuples
        assert np.array_equal(out.next_states, out.states + 1)
        for k in range(0, 30, ell):
            block = out.states[k:k + ell]
            assert np.all(np.diff(block) == 1)

    def test_bad_length(self):
        with pytest.raises(ValueError):
            moving_block_resample(toy(), 31, make_rng(0))

    def test_window_coverage(self):
        rng = make_rng(2)
        starts = {int(block_indices(10, 4, rng)[0]) for _ in range(400)}
        assert starts == set(range(7))


class TestBootstrapCi:
    def test_constant(self):
        ci = bootstrap_ci(toy(), lambda tr: 4.2, 20, 3, 1.96, make_rng(0))
        assert ci.lo == ci.hi == ci.mean == 4.2 and ci.sd == 0.0

    def test_zero_z(self):
        ci = bootstrap_ci(toy(), lambda tr: float(tr.rewards.mean()), 20, 3, 0.0, make_rng(0))
        assert ci.lo == ci.hi == ci.mean and ci.sd > 0

    def test_sd_divisor(self):
        draws = []

        def est(tr):
            draws.append(float(tr.rewards.mean()))
            return draws[-1]

        ci = bootstrap_ci(toy(), est, 15, 4, 1.0, make_rng(3))
        assert ci.sd == pytest.approx(np.std(draws, ddof=1), rel=1e-14)

    def test_retry(self):
        calls = {"n": 0}

        def flaky(tr):
            calls["n"] += 1
            if calls["n"] % 3 == 0:
                raise DegenerateWeightsError("zero weights")
            return 1.0

        assert bootstrap_ci(toy(), flaky, 10, 3, 1.0, make_rng(0)).mean == 1.0

        def broken(tr):
            raise DegenerateWeightsError("zero weights")

        with pytest.raises(DegenerateWeightsError):
            bootstrap_ci(toy(), broken, 10, 3, 1.0, make_rng(0), max_retries=5)

    def test_batched_matches(self):
        traj = toy(40)
        a = bootstrap_ci(traj, lambda tr: float(np.mean(tr.rewards ** 2)), 25, 4, 1.0, make_rng(9))
        b = bootstrap_ci_batched(40, lambda idx: np.mean(traj.rewards[idx] ** 2, axis=1), 25, 4, 1.0, make_rng(9))
        assert a == b

    def test_experiment4_contains_point_estimate(self):
        cfg = preset("exp4")
        nuis = prepare_nuisances(cfg)
        run = estimator_for(cfg, nuis)
        sched = TruncationSchedule("t", 0.6)
        hits = 0
        seeds = range(50)
        for seed in seeds:
            traj = simulate(cfg, 600, [stream(seed, 5)], nuis.p_b)[0]
            batch = batch_estimator_for(cfg, nuis, traj)
            ci = bootstrap_ci_batched(600, lambda idx: batch(idx, sched), 100, 8, 1.0, stream(seed, 6))
            assert ci.sd > 0
            hits += ci.lo <= run(traj, sched).estimate <= ci.hi
        assert hits >= 0.8 * len(seeds)


def iv(lo, hi):
    return BootstrapInterval((lo + hi) / 2, (hi - lo) / 2, lo, hi)


class TestLepskiIndex:
    def test_identical(self):
        assert lepski_index([iv(0, 1)] * 4) == 3

    def test_immediate_break(self):
        assert lepski_index([iv(0, 1), iv(2, 3), iv(0, 1)]) == 0

    def test_running_intersection(self):
        # pairwise overlapping, but the third misses the intersection of the first two
        assert lepski_index([iv(0, 2), iv(1, 3), iv(0, 0.5)]) == 1

    def test_single(self):
        assert lepski_index([iv(5, 6)]) == 0


class TestLepskiSelect:
    def setup_method(self):
        self.cfg = preset("exp4")
        self.nuis = prepare_nuisances(self.cfg)
        self.run = estimator_for(self.cfg, self.nuis)
        self.traj = simulate(self.cfg, 600, [stream(3, 3)], self.nuis.p_b)[0]

    def select(self, rng, batched=False):
        batch = batch_estimator_for(self.cfg, self.nuis, self.traj) if batched else None
        return lepski_select(self.traj, self.cfg.lepski, lambda tr, s: self.run(tr, s).estimate, rng, batch)

    def test_deterministic(self):
        a, b = self.select(make_rng(4)), self.select(make_rng(4))
        assert a == b

    def test_batched_path_identical(self):
        assert self.select(make_rng(4)) == self.select(make_rng(4), batched=True)

    def test_final_estimate_is_full_data_tdr(self):
        out = self.select(make_rng(5), batched=True)
        assert out.estimate == self.run(self.traj, out.schedule).estimate
        for ci in out.intervals:
            assert ci.lo <= ci.mean <= ci.hi and np.isfinite([ci.lo, ci.hi]).all()

    def test_intersection_semantics(self):
        out = self.select(make_rng(6), batched=True)
        k = out.selected_index
        lo = max(ci.lo for ci in out.intervals[:k + 1])
        hi = min(ci.hi for ci in out.intervals[:k + 1])
        assert lo <= hi
        if k + 1 < len(out.intervals):
            nxt = out.intervals[k + 1]
            assert max(lo, nxt.lo) > min(hi, nxt.hi)

    def test_single_schedule(self):
        cfg = LepskiConfig([TruncationSchedule("t", 0.5)], B=10)
        out = lepski_select(self.traj, cfg, lambda tr, s: self.run(tr, s).estimate, make_rng(0))
        assert out.selected_index == 0

    def test_csv_rows(self):
        out = self.select(make_rng(7), batched=True)
        rows = out.csv_rows()
        assert len(rows) == 5 and sum(r[-1] for r in rows) == 1


class TestConfig:
    def test_defaults(self):
        cfg = LepskiConfig([TruncationSchedule("t", 1.0)])
        assert cfg.B == 100 and cfg.z == 1.96
        assert cfg.block_length(600) == 8 and cfg.block_length(7200) == 19

    def test_validation(self):
        with pytest.raises(ValueError):
            LepskiConfig([])
        with pytest.raises(ValueError):
            LepskiConfig([TruncationSchedule()], B=1)
        with pytest.raises(ValueError):
            LepskiConfig([TruncationSchedule()], block_len=10).block_length(5)
