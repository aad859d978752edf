import math

import numpy as np
import pytest

import oracles
from domp.analysis import (
    ScenarioSpec,
    generate_offgrid_scenario,
    nmse,
    power_capture_closed_form,
    power_capture_oracle,
    run_trial,
    split_measurements,
    sweep_measurements,
    sweep_snr,
)
from domp.channel import UlaConfig, angle_to_peak
from domp.errors import DomainError, ScenarioError
from domp.estimators import ESTIMATORS, EstimateResult

# mpmath, 40 digits, direct DTFT sums at half-cell offsets (M = N = 16 unless noted)
ETA_WORST_16 = {1: 0.16531488466691988, 4: 0.66125953866767953,
                8: 0.73665197554380111, 16: 0.84063366894636293, 64: 0.97369353496612898}
ETA_WORST_8_K4 = 0.67415093479601041


class TestPowerCapture:
    @pytest.mark.parametrize("K, expected", sorted(ETA_WORST_16.items()))
    def test_oracle_high_precision(self, K, expected):
        assert power_capture_oracle(16, 16, (0.5, 0.5), K) == pytest.approx(expected, abs=1e-14)

    def test_oracle_small_grid(self):
        assert power_capture_oracle(8, 8, (0.5, 0.5), 4) == pytest.approx(ETA_WORST_8_K4, abs=1e-14)

    @pytest.mark.parametrize("K", [1, 5, 64, 256])
    def test_on_grid_is_one(self, K):
        assert power_capture_oracle(16, 16, (0.0, 0.0), K) == pytest.approx(1.0, abs=1e-12)

    def test_oracle_monotone_and_complete(self):
        etas = [power_capture_oracle(8, 8, (0.3, 0.45), K) for K in range(1, 65)]
        assert all(b >= a - 1e-15 for a, b in zip(etas, etas[1:]))
        assert etas[-1] == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("size", [8, 16, 32])
    def test_closed_form_matches_oracle(self, size):
        for K in range(4, size * size + 1, 4):
            assert abs(power_capture_closed_form(size, size, K)
                       - power_capture_oracle(size, size, (0.5, 0.5), K)) < 1e-9

    def test_closed_form_full_sum(self):
        assert power_capture_closed_form(16, 16, 256) == pytest.approx(1.0, abs=1e-14)

    @pytest.mark.parametrize("K", [0, 257, 2.5])
    def test_oracle_rejects_bad_k(self, K):
        with pytest.raises(DomainError):
            power_capture_oracle(16, 16, (0.5, 0.5), K)

    @pytest.mark.parametrize("K", [3, 6, 0, 260])
    def test_closed_form_rejects_bad_k(self, K):
        with pytest.raises(DomainError):
            power_capture_closed_form(16, 16, K)

    def test_closed_form_rejects_odd_size(self):
        with pytest.raises(DomainError):
            power_capture_closed_form(15, 16, 4)


class TestNmse:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.H = rng.standard_normal((4, 5)) + 1j * rng.standard_normal((4, 5))

    def test_examples(self):
        assert nmse(self.H, self.H) == 0.0
        assert nmse(np.zeros_like(self.H), self.H) == pytest.approx(1.0)
        assert nmse(2 * self.H, self.H) == pytest.approx(1.0)

    def test_zero_channel(self):
        with pytest.raises(DomainError):
            nmse(self.H, np.zeros_like(self.H))


class TestScenario:
    def test_midpoints_without_displacement(self):
        spec = ScenarioSpec(config=UlaConfig(16, 16), offgrid_scale=0.0)
        for t in range(20):
            for p in generate_offgrid_scenario(spec, t).paths:
                for angle in (p.aod, p.aoa):
                    coord = oracles.peak_coordinate(angle, 16)
                    assert coord - math.floor(coord) == pytest.approx(0.5, abs=1e-9)

    def test_displacement_bound(self):
        spec = ScenarioSpec(config=UlaConfig(32, 32))
        for t in range(50):
            for p in generate_offgrid_scenario(spec, t).paths:
                for angle in (p.aod, p.aoa):
                    frac = oracles.peak_coordinate(angle, 32) % 1.0
                    assert abs(frac - 0.5) <= 0.05 + 1e-9

    def test_on_grid_placement(self):
        spec = ScenarioSpec(config=UlaConfig(16, 16), placement="ongrid")
        for p in generate_offgrid_scenario(spec, 3).paths:
            coord = angle_to_peak(p.aod, 16)
            assert abs(coord - round(coord)) < 1e-9

    def test_separation_audit(self):
        spec = ScenarioSpec(config=UlaConfig(32, 32))
        limit = math.radians(20.0)
        for t in range(1000):
            paths = generate_offgrid_scenario(spec, t).paths
            for i in range(len(paths)):
                for j in range(i):
                    assert abs(paths[i].aod - paths[j].aod) >= limit
                    assert abs(paths[i].aoa - paths[j].aoa) >= limit

    def test_single_path_ignores_separation(self):
        spec = ScenarioSpec(config=UlaConfig(8, 8), num_paths=1, min_separation_deg=179.0)
        assert len(generate_offgrid_scenario(spec, 0).paths) == 1

    def test_gain_normalization(self):
        spec = ScenarioSpec(config=UlaConfig(16, 16), num_paths=4)
        for t in range(10):
            gains = [p.gain for p in generate_offgrid_scenario(spec, t).paths]
            assert sum(abs(g) ** 2 for g in gains) == pytest.approx(4.0)
        unit = ScenarioSpec(config=UlaConfig(16, 16), gain_model="unit")
        assert all(p.gain == 1 for p in generate_offgrid_scenario(unit, 0).paths)

    def test_deterministic(self):
        spec = ScenarioSpec(config=UlaConfig(16, 16))
        a = generate_offgrid_scenario(spec, 5)
        b = generate_offgrid_scenario(spec, 5)
        np.testing.assert_array_equal(a.matrix, b.matrix)
        assert not np.array_equal(a.matrix, generate_offgrid_scenario(spec, 6).matrix)

    def test_infeasible_separation(self):
        spec = ScenarioSpec(config=UlaConfig(8, 8), num_paths=3, min_separation_deg=100.0)
        with pytest.raises(ScenarioError):
            generate_offgrid_scenario(spec, 0)

    @pytest.mark.parametrize("changes", [dict(num_paths=0), dict(trials=0), dict(offgrid_scale=1.5),
                                         dict(gain_model="rayleigh"), dict(placement="random")])
    def test_spec_validation(self, changes):
        with pytest.raises(DomainError):
            ScenarioSpec(**changes)

    def test_split_measurements(self):
        assert [split_measurements(m) for m in (36, 64, 100, 144, 196)] == [
            (6, 6), (8, 8), (10, 10), (12, 12), (14, 14)]


SMALL = ScenarioSpec(config=UlaConfig(8, 8), num_paths=2, trials=3, min_separation_deg=10.0)


class TestSweeps:
    def test_reproducible(self):
        a = sweep_snr(SMALL, [10.0], 16)
        b = sweep_snr(SMALL, [10.0], 16)
        assert a.records == b.records
        assert a.mean_nmse == b.mean_nmse

    def test_threads_do_not_change_results(self):
        a = sweep_snr(SMALL, [0.0, 20.0], 16, threads=1)
        b = sweep_snr(SMALL, [0.0, 20.0], 16, threads=3)
        assert a.records == b.records

    def test_aggregates(self):
        r = sweep_snr(SMALL, [20.0], 16, estimator_set=("omp", "domp-mslb"))
        for name in ("omp", "domp-mslb"):
            vals = [x.nmse for x in r.records if x.estimator == name]
            assert r.n_trials[(20.0, name)] == 3
            assert r.mean(name, 20.0) == pytest.approx(np.mean(vals))
            assert r.stderr_nmse[(20.0, name)] == pytest.approx(np.std(vals, ddof=1) / math.sqrt(3))

    def test_measurement_axis_matches_snr_axis(self):
        a = sweep_measurements(SMALL, [16, 25], 20.0)
        b = sweep_snr(SMALL, [20.0], 16)
        for name in ESTIMATORS:
            assert a.mean(name, 16) == b.mean(name, 20.0)

    def test_paired_observations(self, monkeypatch):
        seen = {}

        def recorder(name):
            def est(y, A, ula, config):
                seen.setdefault(name, []).append(y.copy())
                zero = np.zeros((ula.N, ula.M), complex)
                return EstimateResult([], zero, zero, [1.0], 0)
            return est

        for name in ESTIMATORS:
            monkeypatch.setitem(ESTIMATORS, name, recorder(name))
        sweep_snr(SMALL, [10.0], 16)
        first = seen["omp"]
        assert len(first) == 3
        for name in ESTIMATORS:
            for a, b in zip(first, seen[name]):
                np.testing.assert_array_equal(a, b)

    def test_failed_trials_are_recorded(self):
        spec = ScenarioSpec(config=UlaConfig(8, 8), num_paths=3, min_separation_deg=100.0, trials=2)
        r = sweep_snr(spec, [10.0], 16, estimator_set=("omp",))
        assert len(r.records) == 2
        assert all(not x.ok and x.error.startswith("ScenarioError") for x in r.records)
        assert r.n_trials[(10.0, "omp")] == 0 and math.isnan(r.mean("omp", 10.0))

    def test_unknown_estimator(self):
        with pytest.raises(DomainError):
            sweep_snr(SMALL, [10.0], 16, estimator_set=("music",))

    def test_run_trial_axis_value(self):
        recs = run_trial(SMALL, 0, 20.0, 16, ["omp"], axis_value=16)
        assert recs[0].axis_value == 16 and recs[0].ok
