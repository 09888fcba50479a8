import math

import numpy as np
import pytest

from fdicode import (
    choose_refresh_interval,
    difference_dynamics,
    stealth_gain,
    stealth_gain_from_times,
    stealth_report,
    stealth_time,
)
from fdicode.attack import DifferenceTrace
from fdicode.errors import BaseNeverDetected, HorizonExhausted

X0_SCENARIO = np.array([4.0, 4.0])


def trace_with_norms(norms):
    dz = np.zeros((len(norms), 2))
    dz[:, 0] = norms
    return DifferenceTrace(de=np.zeros((len(norms), 2)), dz=dz, coded=False)


class TestStealthTime:
    def test_silent_trace_never_detected(self):
        assert stealth_time(trace_with_norms(np.zeros(50)), 2.0) == math.inf

    def test_first_crossing_index(self):
        norms = np.concatenate([np.full(12, 1.0), [2.5], np.full(10, 1.0)])
        assert stealth_time(trace_with_norms(norms), 2.0) == 12

    def test_band_is_strict(self):
        assert stealth_time(trace_with_norms(np.full(5, 2.0)), 2.0) == math.inf

    def test_benchmark_base_attack(self, bench_system, bench_design, attack_base,
                                   sigma_rot):
        coded = difference_dynamics(bench_system, bench_design, attack_base, 1000,
                                    coding=sigma_rot)
        assert stealth_time(coded, 2.0) == 11
        plain = difference_dynamics(bench_system, bench_design, attack_base, 1000)
        assert stealth_time(plain, 2.0) == math.inf


class TestGainArithmetic:
    def test_published_example_exact(self):
        assert stealth_gain_from_times(12, 30) == 1.5

    def test_never_detected_adapted(self):
        assert stealth_gain_from_times(12, math.inf) == math.inf

    def test_base_never_detected_rejected(self):
        with pytest.raises(BaseNeverDetected):
            stealth_gain_from_times(math.inf, 30)

    def test_base_at_zero_rejected(self):
        with pytest.raises(BaseNeverDetected):
            stealth_gain_from_times(0, 30)


class TestChooseRefreshInterval:
    def test_oracle_matches_published_schedule(self, bench_system, bench_design,
                                               attack_base, sigma_rot):
        """With the published stealth times injected (12 at N=0, 20 at N=2,
        30 at N=5, 51 beyond), threshold 1.5 is reached at N = 5."""
        table = {0: 12, 5: 30}

        def ts_fn(n):
            return table.get(n, 51)

        n_sigma = choose_refresh_interval(
            bench_system, bench_design, sigma_rot, attack_base,
            t_s=5, alpha_threshold=1.5, M=2.0, ts_fn=ts_fn,
        )
        assert n_sigma == 5

    def test_zero_threshold_immediate(self, bench_system, bench_design, attack_base,
                                      sigma_rot):
        assert choose_refresh_interval(
            bench_system, bench_design, sigma_rot, attack_base,
            t_s=5, alpha_threshold=0.0, M=2.0, ts_fn=lambda n: 12,
        ) == 0

    def test_unreachable_threshold_exhausts(self, bench_system, bench_design,
                                            attack_base, sigma_rot):
        with pytest.raises(HorizonExhausted):
            choose_refresh_interval(
                bench_system, bench_design, sigma_rot, attack_base,
                t_s=5, alpha_threshold=99.0, M=2.0,
                max_measurements=20, ts_fn=lambda n: 12 if n == 0 else 30,
            )

    def test_real_pipeline_terminates(self, bench_system, bench_design, attack_base,
                                      sigma_rot):
        n_sigma = choose_refresh_interval(
            bench_system, bench_design, sigma_rot, attack_base,
            t_s=5, alpha_threshold=1.5, M=2.0, seed=0,
            max_measurements=40, x0=X0_SCENARIO, horizon=1000,
        )
        assert n_sigma in range(5, 45, 5)


class TestStealthReportPipeline:
    def test_alpha_consistency_and_determinism(self, bench_system, bench_design,
                                               attack_base, sigma_rot):
        kwargs = dict(Ns=[2, 5], M=2.0, seed=3, x0=X0_SCENARIO)
        rep1 = stealth_report(bench_system, bench_design, sigma_rot, attack_base,
                              **kwargs)
        rep2 = stealth_report(bench_system, bench_design, sigma_rot, attack_base,
                              **kwargs)
        assert rep1.ts_adapted == rep2.ts_adapted
        for n, alpha in rep1.alpha_of_n.items():
            expected = stealth_gain_from_times(rep1.ts_base, rep1.ts_adapted[n])
            assert alpha == expected  # exact arithmetic, no tolerance

    def test_gain_matches_report_with_shared_log(self, bench_system, bench_design,
                                                 attack_base, sigma_rot):
        from fdicode import record_coded_log

        log = record_coded_log(bench_system, sigma_rot, 5, 3, x0=X0_SCENARIO)
        rep = stealth_report(bench_system, bench_design, sigma_rot, attack_base,
                             Ns=[5], M=2.0, seed=3, x0=X0_SCENARIO)
        alpha = stealth_gain(bench_system, bench_design, sigma_rot, attack_base,
                             N=5, M=2.0, seed=3, x0=X0_SCENARIO, log=log)
        assert alpha == rep.alpha_of_n[5]

    def test_csv_export(self, tmp_path, bench_system, bench_design, attack_base,
                        sigma_rot):
        rep = stealth_report(bench_system, bench_design, sigma_rot, attack_base,
                             Ns=[2, 5], M=2.0, seed=0, x0=X0_SCENARIO)
        path = tmp_path / "report.csv"
        rep.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "N,T_s,alpha"
        assert len(lines) == 4  # header + base row + two sweep rows
        assert lines[1].startswith("0,11,")
