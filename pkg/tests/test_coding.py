import math

import numpy as np
import pytest

from fdicode import (
    check_feasible_combined,
    check_feasible_multi,
    check_feasible_single,
    coding_matrix,
    decode,
    difference_dynamics,
    encode,
    generate_coding_matrix,
    givens_matrix,
    make_system,
    steady_state_kalman,
    unstable_eigenpairs,
)
from fdicode.coding import GivensRotation
from fdicode.errors import (
    DimensionTooSmall,
    IndexOutOfRange,
    SingularCoding,
    ZeroSubspace,
    ZeroVector,
)


class TestEncodeDecode:
    def test_identity_unchanged(self):
        cd = coding_matrix(np.eye(3))
        y = np.array([1.0, -2.0, 0.5])
        assert np.array_equal(encode(cd, y), y)

    def test_hand_multiply(self, sigma2):
        assert encode(sigma2, [1.0, 1.0]) == pytest.approx([0.0, 2.0])

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_round_trip(self, sigma1, sigma2, seed):
        rng = np.random.default_rng(seed)
        y = rng.standard_normal(2)
        for cd in (sigma1, sigma2):
            assert decode(cd, encode(cd, y)) == pytest.approx(y, rel=1e-12, abs=1e-13)

    def test_round_trip_moderately_conditioned(self):
        rng = np.random.default_rng(5)
        u, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        v, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        sigma = u @ np.diag([1.0, 0.3, 0.05, 1e-4]) @ v  # cond = 1e4
        cd = coding_matrix(sigma)
        y = rng.standard_normal(4)
        err = np.linalg.norm(decode(cd, encode(cd, y)) - y) / np.linalg.norm(y)
        assert err <= 1e4 * 1e-14  # eps * condition number with headroom

    def test_singular_matrix_rejected(self):
        with pytest.raises(SingularCoding):
            coding_matrix([[1.0, 2.0], [2.0, 4.0]])

    def test_serialization_round_trip(self, sigma1):
        from fdicode.coding import CodingMatrix

        clone = CodingMatrix.from_dict(sigma1.to_dict())
        assert np.array_equal(clone.sigma, sigma1.sigma)


class TestFeasibleSingle:
    def test_identity_infeasible(self, bench_system, bench_pair):
        assert not check_feasible_single(np.eye(2), bench_system.C, bench_pair.v)

    def test_benchmark_codes_feasible(self, bench_system, bench_pair, sigma1, sigma2):
        assert check_feasible_single(sigma1, bench_system.C, bench_pair.v)
        assert check_feasible_single(sigma2, bench_system.C, bench_pair.v)

    def test_zero_attack_direction_raises(self, sigma1):
        with pytest.raises(ZeroVector):
            check_feasible_single(sigma1, np.array([[1.0, 0.0]]), [0.0, 1.0])

    def test_scale_invariance(self, bench_system):
        rng = np.random.default_rng(31)
        for _ in range(200):
            sigma = rng.standard_normal((2, 2)) + 2 * np.eye(2)
            v = rng.standard_normal(2)
            if np.linalg.norm(bench_system.C @ v) < 1e-6:
                continue
            base = check_feasible_single(sigma, bench_system.C, v)
            a = rng.uniform(0.1, 5.0) * rng.choice([-1.0, 1.0])
            b = rng.uniform(0.1, 5.0)
            assert check_feasible_single(sigma, bench_system.C, a * v) == base
            assert check_feasible_single(b * sigma, bench_system.C, v) == base


class TestFeasibleMulti:
    def test_matches_single_on_one_eigvec(self):
        rng = np.random.default_rng(8)
        agree = 0
        for trial in range(1000):
            p = int(rng.integers(2, 5))
            n = int(rng.integers(2, 5))
            c = rng.standard_normal((p, n))
            v = rng.standard_normal(n)
            w = c @ v
            if np.linalg.norm(w) < 1e-6:
                continue
            if trial % 3 == 0:
                # constructed violation: w is an eigenvector with a
                # positive eigenvalue
                wn = w / np.linalg.norm(w)
                sigma = np.eye(p) + np.outer(wn, wn)
            else:
                sigma = rng.standard_normal((p, p)) + 2 * np.eye(p)
            single = check_feasible_single(sigma, c, v)
            multi = check_feasible_multi(sigma, c, [v])
            assert single == multi
            agree += 1
        assert agree > 900

    def test_positive_eigenpair_in_span_infeasible(self):
        w = np.array([1.0, 2.0]) / np.sqrt(5.0)
        sigma = np.eye(2) + np.outer(w, w)  # eigenpair (2, w)
        assert not check_feasible_multi(sigma, np.eye(2), [w])

    def test_planar_rotation_feasible_on_full_plane(self):
        # rotation by pi/4 has no real eigenvector at all
        g = givens_matrix(0, 1, math.pi / 4, 2)
        assert check_feasible_multi(g, np.eye(2), [np.eye(2)[:, 0], np.eye(2)[:, 1]])

    def test_zero_subspace_raises(self):
        with pytest.raises(ZeroSubspace):
            check_feasible_multi(np.eye(2), np.zeros((2, 2)), [[1.0, 0.0]])


class TestFeasibleCombined:
    def test_identity_infeasible(self):
        assert not check_feasible_combined(np.eye(3))

    def test_double_identity_feasible(self):
        assert check_feasible_combined(2.0 * np.eye(3))

    def test_rotation_code_feasible(self, sigma_rot):
        # oracle: roots of x^2 - 1.4 x + 0.74 via the quadratic formula
        disc = 1.4**2 - 4 * 0.74
        assert disc < 0
        roots = np.roots([1.0, -1.4, 0.74])
        assert min(abs(roots - 1.0)) > 1e-8
        assert check_feasible_combined(sigma_rot)

    def test_near_unit_eigenvalue_infeasible(self):
        assert not check_feasible_combined(np.diag([1.0 + 1e-12, 2.0]))


class TestGivensMatrix:
    def test_zero_angle_identity(self):
        assert np.array_equal(givens_matrix(0, 1, 0.0, 3), np.eye(3))

    def test_quarter_turn(self):
        assert givens_matrix(0, 1, math.pi / 2, 2) == pytest.approx(
            np.array([[0.0, -1.0], [1.0, 0.0]]), abs=1e-15
        )

    def test_three_dim_layout(self):
        # expansion oracle: only rows/columns 0 and 2 are touched
        c, s = math.cos(math.pi / 4), math.sin(math.pi / 4)
        expected = np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])
        assert givens_matrix(0, 2, math.pi / 4, 3) == pytest.approx(expected)

    def test_index_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            givens_matrix(0, 3, 0.1, 3)
        with pytest.raises(IndexOutOfRange):
            givens_matrix(1, 1, 0.1, 3)

    def test_rotation_dataclass_validates(self):
        with pytest.raises(ValueError):
            GivensRotation(0, 1, 0.0)
        with pytest.raises(ValueError):
            GivensRotation(0, 1, 2.0)
        with pytest.raises(IndexOutOfRange):
            GivensRotation(1, 1, 0.5)
        rot = GivensRotation(0, 1, math.pi / 2)
        assert rot.matrix(2) == pytest.approx(np.array([[0.0, -1.0], [1.0, 0.0]]))


class TestGenerateCodingMatrix:
    def test_benchmark_single_rotation(self, bench_system, bench_pair):
        cd = generate_coding_matrix(bench_system, [bench_pair.v], rng_seed=7)
        # support of C v = [0.5, 1] covers both coordinates: one rotation
        assert len(cd.provenance["rotations"]) == 1
        assert np.linalg.det(cd.sigma) == pytest.approx(1.0)
        assert check_feasible_multi(cd, bench_system.C, [bench_pair.v])

    def test_same_seed_reproducible(self, bench_system, bench_pair):
        a = generate_coding_matrix(bench_system, [bench_pair.v], rng_seed=42)
        b = generate_coding_matrix(bench_system, [bench_pair.v], rng_seed=42)
        assert np.array_equal(a.sigma, b.sigma)

    def test_scale_factor(self, bench_system, bench_pair):
        cd = generate_coding_matrix(bench_system, [bench_pair.v], rng_seed=7, scale=2.0)
        assert np.linalg.det(cd.sigma) == pytest.approx(4.0)
        assert check_feasible_multi(cd, bench_system.C, [bench_pair.v])

    def test_dimension_too_small(self):
        sys_ = make_system([[1.1]], [[1.0]], [[1.0]], [[0.01]], [[0.01]])
        with pytest.raises(DimensionTooSmall):
            generate_coding_matrix(sys_, [[1.0]], rng_seed=0)

    def test_zero_subspace(self, bench_system):
        with pytest.raises(ZeroSubspace):
            generate_coding_matrix(bench_system, [], rng_seed=0)

    def test_random_systems_always_feasible(self):
        """Sample of the soundness sweep (the full 500-system version runs
        in the acceptance suite)."""
        rng = np.random.default_rng(12)
        produced = 0
        while produced < 60:
            n = int(rng.integers(2, 6))
            p = int(rng.integers(2, 7))
            a = rng.standard_normal((n, n))
            a *= 1.1 / max(abs(np.linalg.eigvals(a)))
            c = rng.standard_normal((p, n))
            try:
                sys_ = make_system(a, rng.standard_normal((n, 1)), c,
                                   0.01 * np.eye(n), 0.01 * np.eye(p))
            except Exception:
                continue
            vecs = [pr.v for pr in unstable_eigenpairs(sys_) if pr.is_real]
            if not vecs:
                continue
            cd = generate_coding_matrix(sys_, vecs, rng_seed=int(rng.integers(1 << 30)))
            assert check_feasible_multi(cd, sys_.C, vecs)
            produced += 1


class TestFeasibilityImpliesGrowth:
    def test_strongly_feasible_codes_grow_tenfold(
        self, bench_system, bench_design, attack_m2, sigma2, sigma_rot
    ):
        plain = difference_dynamics(bench_system, bench_design, attack_m2, 200)
        bound = plain.dz_norms.max()
        for cd in (sigma2, sigma_rot):
            coded = difference_dynamics(bench_system, bench_design, attack_m2, 200,
                                        coding=cd)
            assert coded.dz_norms[200] > 10.0 * bound
