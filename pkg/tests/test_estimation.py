import numpy as np
import pytest
from scipy import stats

from fdicode import (
    FaultDetectionFilter,
    FilterState,
    KalmanDesign,
    apply_active_monitor,
    chi2_stat,
    detect,
    initial_filter_state,
    kalman_step,
    make_system,
    residue_trace,
    simulate,
    simulate_attacked,
    steady_state_kalman,
    synth_sensor_attack,
)
from fdicode.errors import RiccatiNoConvergence, SingularQuadraticForm, UnstableObserver
from fdicode.estimation import MODE_STATE_COV, riccati_step
from fdicode.lti import AttackSequence

# frozen regression values from a 10^4-step fixed-point iteration of the
# textbook two-stage Riccati recursion on the benchmark system
P_BENCH = np.array(
    [
        [1.1473298769678772e-02, -4.8173834341040146e-05],
        [-4.8173834341040146e-05, 1.5248710367529774e-02],
    ]
)
K_BENCH = np.array(
    [
        [0.399844267687724, -0.12112319567378403],
        [0.05197535827052414, 0.5884434992361843],
    ]
)


class TestSteadyStateKalman:
    def test_one_step_fixed_point_when_a_zero(self):
        q = np.diag([0.3, 0.7])
        r = 0.2 * np.eye(2)
        c = np.array([[1.0, 0.5], [0.0, 1.0]])
        sys_ = make_system(np.zeros((2, 2)), [[1.0], [0.0]], c, q, r)
        design = steady_state_kalman(sys_)
        assert design.P == pytest.approx(q)
        assert design.K == pytest.approx(q @ c.T @ np.linalg.inv(c @ q @ c.T + r))

    def test_perfect_measurements_gain_near_identity(self):
        sys_ = make_system(
            [[0.9, 0.1], [0.0, 0.8]], [[1.0], [0.0]], np.eye(2), 0.1 * np.eye(2),
            1e-8 * np.eye(2),
        )
        design = steady_state_kalman(sys_)
        assert np.abs(design.K - np.eye(2)).max() < 1e-3

    def test_benchmark_regression(self, bench_design):
        assert bench_design.P == pytest.approx(P_BENCH, abs=1e-12)
        assert bench_design.K == pytest.approx(K_BENCH, abs=1e-12)

    def test_benchmark_long_iteration_oracle(self, bench_system, bench_design):
        # independent oracle: textbook predict/update recursion, 10^4 steps
        a, c = bench_system.A, bench_system.C
        q, r = bench_system.Q, bench_system.R
        p = np.eye(2)
        for _ in range(10_000):
            kk = p @ c.T @ np.linalg.inv(c @ p @ c.T + r)
            p = a @ (np.eye(2) - kk @ c) @ p @ a.T + q
        assert bench_design.P == pytest.approx(p, abs=1e-12)

    def test_fixed_point_residual_and_stability(self, bench_system, bench_design):
        resid = np.linalg.norm(riccati_step(bench_system, bench_design.P) - bench_design.P)
        assert resid <= 1e-9 * (1.0 + np.linalg.norm(bench_design.P))
        closed = bench_system.A - bench_design.K @ bench_system.C @ bench_system.A
        assert max(abs(np.linalg.eigvals(closed))) < 1.0

    def test_marginal_integrator_without_process_noise_raises(self):
        # lambda = 1 with Q = 0: the iteration creeps sublinearly toward the
        # non-stabilizing zero solution and never meets the tolerance
        sys_ = make_system([[1.0]], [[1.0]], [[1.0]], [[0.0]], [[1.0]])
        with pytest.raises(RiccatiNoConvergence):
            steady_state_kalman(sys_, max_iter=5000)

    def test_alpha_quantile(self, bench_design):
        # closed-form oracle for p = 2: quantile = -2 ln(1 - confidence)
        assert bench_design.alpha == pytest.approx(-2.0 * np.log(0.01), rel=1e-12)
        assert bench_design.alpha == pytest.approx(9.210340371976184, rel=1e-12)


class TestKalmanStep:
    def test_zero_innovation_propagates_open_loop(self, bench_system, bench_design):
        x_hat = np.array([0.4, -0.2])
        u = np.array([0.3])
        pred = bench_system.A @ x_hat + bench_system.B @ u
        state, z = kalman_step(
            bench_design,
            bench_system,
            FilterState(x_hat=x_hat, k=3),
            u,
            bench_system.C @ pred,
        )
        assert z == pytest.approx(np.zeros(2))
        assert state.x_hat == pytest.approx(pred)
        assert state.k == 4

    def test_pure_correction(self, bench_system, bench_design):
        e1 = np.array([1.0, 0.0])
        state, z = kalman_step(
            bench_design, bench_system, initial_filter_state(bench_system), [0.0], e1
        )
        assert z == pytest.approx(e1)
        assert state.x_hat == pytest.approx(bench_design.K @ e1)

    def test_noise_free_exact_model_zero_innovations(self, bench_system, bench_design):
        sys_nf = make_system(bench_system.A, bench_system.B, bench_system.C)
        u_seq = np.sin(np.arange(30))[:, None]
        traj = simulate(sys_nf, u_seq, seed=0, T=30)
        rt = residue_trace(bench_design, sys_nf, traj)
        assert np.abs(rt.z).max() < 1e-12


class TestChi2:
    def test_zero_innovation(self, bench_design):
        assert chi2_stat(bench_design, np.zeros(2)) == 0.0

    def test_unit_innovation_covariance_is_squared_norm(self):
        design = KalmanDesign(
            P=np.eye(2),
            K=np.zeros((2, 2)),
            alpha=9.21,
            mode="innovation",
            innovation_cov=np.eye(2),
        )
        assert chi2_stat(design, [3.0, 4.0]) == pytest.approx(25.0)

    def test_state_cov_mode_matches_p_inverse(self, bench_system):
        design = steady_state_kalman(bench_system, mode=MODE_STATE_COV)
        z = np.array([0.2, -0.1])
        assert chi2_stat(design, z) == pytest.approx(z @ np.linalg.inv(design.P) @ z)

    def test_state_cov_mode_warns_when_p_not_n(self):
        sys_ = make_system(
            [[0.5, 0.1], [0.0, 0.4]], [[1.0], [0.0]], [[1.0, 0.0]],
            0.01 * np.eye(2), [[0.01]],
        )
        design = steady_state_kalman(sys_, mode=MODE_STATE_COV)
        with pytest.warns(UserWarning):
            g = chi2_stat(design, [0.5])
        assert g == pytest.approx(0.25 / design.innovation_cov[0, 0])

    def test_singular_quadratic_form(self):
        design = KalmanDesign(
            P=np.zeros((2, 2)),
            K=np.zeros((2, 2)),
            alpha=9.21,
            mode="innovation",
            innovation_cov=np.zeros((2, 2)),
        )
        with pytest.raises(SingularQuadraticForm):
            chi2_stat(design, [1.0, 0.0])


class TestDetect:
    def test_silent(self):
        assert detect([1.0, 2.0, 3.0], 9.0) is None

    def test_first_crossing(self):
        assert detect([1.0, 10.0, 1.0], 9.0) == 1

    def test_nominal_alarm_rate(self, bench_system, bench_design):
        """Monte-Carlo oracle: with the 0.99 quantile the nominal false-alarm
        rate over 10^4 steady-state steps is 1% within 0.5%."""
        traj = simulate(bench_system, seed=2024, T=10_200)
        rt = residue_trace(bench_design, bench_system, traj)
        g = rt.g[200:]  # drop the startup transient
        rate = float(np.mean(g > bench_design.alpha))
        assert 0.005 <= rate <= 0.015

    def test_nominal_statistic_matches_chi2(self, bench_system, bench_design):
        traj = simulate(bench_system, seed=77, T=10_200)
        rt = residue_trace(bench_design, bench_system, traj)
        g = rt.g[200:]
        ks = stats.kstest(g, stats.chi2(df=2).cdf).statistic
        assert ks < 1.628 / np.sqrt(len(g))  # 1% critical value


class TestFaultDetectionFilter:
    def test_unstable_observer_rejected(self, bench_system):
        with pytest.raises(UnstableObserver):
            FaultDetectionFilter(np.zeros((2, 2)), np.eye(2), bench_system)

    def test_zero_v_zero_residual(self, bench_system, bench_design):
        filt = FaultDetectionFilter(
            bench_system.A @ bench_design.K, np.zeros((2, 2)), bench_system
        )
        traj = simulate(bench_system, seed=1, T=30)
        assert np.all(filt.run(traj) == 0.0)

    def test_exact_observer_noise_free(self, bench_system, bench_design):
        sys_nf = make_system(bench_system.A, bench_system.B, bench_system.C)
        filt = FaultDetectionFilter(
            bench_system.A @ bench_design.K, np.eye(2), sys_nf
        )
        u_seq = np.cos(0.3 * np.arange(40))[:, None]
        traj = simulate(sys_nf, u_seq, seed=0, T=40)
        assert np.abs(filt.run(traj)).max() < 1e-12

    def test_blind_to_stealth_attack(self, bench_system, bench_design, attack_m2):
        """Residual-difference stays bounded for several stable observer
        gains while the estimation-error difference diverges."""
        sys_nf = make_system(bench_system.A, bench_system.B, bench_system.C)
        T = 200
        nominal = simulate(sys_nf, seed=0, T=T)
        attacked = simulate_attacked(sys_nf, attack_m2, seed=0, T=T)
        h_base = bench_system.A @ bench_design.K
        for h, v in [
            (h_base, np.eye(2)),
            (0.5 * h_base, np.eye(2)),
            (h_base, np.array([[1.0, 2.0], [0.0, 1.0]])),
        ]:
            filt = FaultDetectionFilter(h, v, sys_nf)
            dr = filt.run(attacked) - filt.run(nominal)
            assert np.linalg.norm(dr, axis=1).max() <= 10.0 * attack_m2.budget


class TestActiveMonitor:
    def test_zero_probe_identical_law(self):
        law = apply_active_monitor(None, np.zeros((10, 1)))
        assert law(3, np.zeros(2)) == pytest.approx(np.zeros(1))

    def test_monitor_invariance(self, bench_system, bench_design, attack_m2):
        """Adding any probe sequence to the input leaves the residue- and
        error-difference traces unchanged (checked via paired runs)."""
        rng = np.random.default_rng(3)
        T = 60
        for trial in range(100):
            u_d = rng.standard_normal((T, 1))
            seed = int(rng.integers(0, 2**31))
            law = apply_active_monitor(None, u_d)

            plain_nom = simulate(bench_system, seed=seed, T=T, design=bench_design)
            plain_att = simulate_attacked(
                bench_system, attack_m2, seed=seed, T=T, design=bench_design
            )
            probed_nom = simulate(
                bench_system, law, seed=seed, T=T, design=bench_design
            )
            probed_att = simulate_attacked(
                bench_system, attack_m2, law, seed=seed, T=T, design=bench_design
            )

            def diff(att_traj, nom_traj):
                rt_a = residue_trace(bench_design, bench_system, att_traj)
                rt_n = residue_trace(bench_design, bench_system, nom_traj)
                dz = rt_a.z - rt_n.z
                de = (att_traj.states - rt_a.x_hat) - (nom_traj.states - rt_n.x_hat)
                return dz, de

            dz_plain, de_plain = diff(plain_att, plain_nom)
            dz_probe, de_probe = diff(probed_att, probed_nom)
            assert np.abs(dz_probe - dz_plain).max() <= 1e-10
            assert np.abs(de_probe - de_plain).max() <= 1e-10
