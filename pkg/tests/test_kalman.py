import numpy as np
import pytest

from grainflow.core import BBox
from grainflow.kalman import (
    CHI2_GATE_95_4DOF,
    DegenerateStateError,
    KalmanState,
    NoiseConfig,
    gating_distance,
    gating_distance_batch,
    initiate,
    predict,
    project,
    update,
)

from oracles import kf_initiate_oracle, kf_predict_oracle, kf_update_oracle

CFG = NoiseConfig()
NSA = NoiseConfig(nsa_enabled=True)


def random_measurement(rng):
    return np.array(
        [rng.uniform(-200, 200), rng.uniform(-200, 200), rng.uniform(0.3, 3.0), rng.uniform(5, 80)]
    )


class TestStateValidation:
    def test_shape_checks(self):
        with pytest.raises(ValueError):
            KalmanState(np.zeros(7), np.eye(8))
        with pytest.raises(ValueError):
            KalmanState(np.zeros(8), np.eye(7))

    def test_rejects_asymmetric_covariance(self):
        cov = np.eye(8)
        cov[0, 1] = 0.5
        with pytest.raises(ValueError):
            KalmanState(np.zeros(8), cov)

    def test_rejects_negative_diagonal(self):
        cov = np.eye(8)
        cov[2, 2] = -1.0
        with pytest.raises(ValueError):
            KalmanState(np.zeros(8), cov)

    def test_rejects_non_finite(self):
        mean = np.zeros(8)
        mean[0] = np.inf
        with pytest.raises(ValueError):
            KalmanState(mean, np.eye(8))

    def test_arrays_are_frozen_copies(self):
        mean = np.zeros(8)
        state = KalmanState(mean, np.eye(8))
        mean[0] = 99.0
        assert state.mean[0] == 0.0
        with pytest.raises(ValueError):
            state.mean[1] = 1.0


class TestInitiate:
    def test_velocities_start_at_zero(self):
        state = initiate(BBox(0, 0, 8, 4), CFG)
        assert np.all(state.mean[4:] == 0.0)

    def test_mean_matches_measurement(self):
        state = initiate(BBox(0, 0, 8, 4), CFG)
        np.testing.assert_allclose(state.mean[:4], [4, 2, 2, 4])

    def test_position_variance_example(self):
        # h = 4 with weight 1/20: std 2 * (1/20) * 4 = 0.4, variance 0.16
        state = initiate(BBox(0, 0, 8, 4), CFG)
        assert state.covariance[0, 0] == pytest.approx(0.16, rel=1e-12)

    def test_covariance_diagonal(self):
        state = initiate(BBox(0, 0, 8, 4), CFG)
        off_diag = state.covariance - np.diag(np.diag(state.covariance))
        assert np.all(off_diag == 0.0)


class TestPredict:
    def test_moves_mean_by_velocity(self):
        base = initiate(BBox(0, 0, 10, 20), CFG)
        mean = np.array(base.mean)
        mean[4:6] = [3.0, -2.0]
        state = KalmanState(mean, base.covariance)
        out = predict(state, CFG)
        np.testing.assert_allclose(out.mean[:2], state.mean[:2] + [3.0, -2.0])

    def test_grows_uncertainty(self):
        state = initiate(BBox(0, 0, 10, 20), CFG)
        out = predict(state, CFG)
        assert np.all(np.diag(out.covariance) >= np.diag(state.covariance))

    def test_does_not_mutate_input(self):
        state = initiate(BBox(0, 0, 10, 20), CFG)
        before = np.array(state.mean)
        predict(state, CFG)
        np.testing.assert_array_equal(state.mean, before)


class TestUpdate:
    def test_pulls_mean_toward_measurement(self):
        state = predict(initiate(BBox(0, 0, 10, 20), CFG), CFG)
        z = np.array([8.0, 11.0, 0.5, 21.0])
        out = update(state, z, 0.9, CFG)
        before = np.abs(state.mean[:4] - z)
        after = np.abs(out.mean[:4] - z)
        assert np.all(after <= before + 1e-12)

    def test_posterior_h_and_a_positive(self):
        rng = np.random.default_rng(3)
        state = predict(initiate(random_measurement(rng), CFG), CFG)
        out = update(state, random_measurement(rng), 0.5, CFG)
        assert out.mean[2] > 0 and out.mean[3] > 0

    def test_covariance_stays_symmetric(self):
        rng = np.random.default_rng(4)
        state = initiate(random_measurement(rng), CFG)
        for _ in range(50):
            state = predict(state, CFG)
            state = update(state, random_measurement(rng), rng.uniform(0, 1), NSA)
        assert np.abs(state.covariance - state.covariance.T).max() <= 1e-9
        assert np.all(np.diag(state.covariance) >= 0)

    def test_rejects_non_finite_measurement(self):
        state = initiate(BBox(0, 0, 10, 20), CFG)
        with pytest.raises(ValueError):
            update(state, np.array([1.0, np.nan, 1.0, 1.0]), 0.5, CFG)

    def test_rejects_bad_confidence(self):
        state = initiate(BBox(0, 0, 10, 20), CFG)
        for bad in (-0.1, 1.1, np.nan):
            with pytest.raises(ValueError):
                update(state, np.array([1.0, 1.0, 1.0, 10.0]), bad, CFG)

    def test_singular_innovation_raises(self):
        # zero covariance plus zero measurement noise (NSA at confidence 1)
        state = KalmanState(np.array([0, 0, 1, 10, 0, 0, 0, 0], dtype=float), np.zeros((8, 8)))
        with pytest.raises(DegenerateStateError):
            update(state, np.array([0.0, 0.0, 1.0, 10.0]), 1.0, NSA)

    def test_convergence_to_repeated_measurement(self):
        state = initiate(BBox(0, 0, 10, 20), CFG)
        z = np.array([40.0, 60.0, 0.8, 25.0])
        for _ in range(100):
            state = predict(state, CFG)
            state = update(state, z, 0.5, CFG)
        np.testing.assert_allclose(state.mean[:4], z, atol=1e-4)


class TestNsa:
    def test_full_confidence_recovers_measurement(self):
        rng = np.random.default_rng(11)
        state = predict(initiate(random_measurement(rng), NSA), NSA)
        z = random_measurement(rng)
        out = update(state, z, 1.0, NSA)
        np.testing.assert_allclose(out.mean[:4], z, rtol=1e-9, atol=1e-9)

    def test_zero_confidence_equals_standard_update(self):
        rng = np.random.default_rng(12)
        state = predict(initiate(random_measurement(rng), CFG), CFG)
        z = random_measurement(rng)
        with_nsa = update(state, z, 0.0, NSA)
        plain = update(state, z, 0.0, CFG)
        np.testing.assert_array_equal(with_nsa.mean, plain.mean)
        np.testing.assert_array_equal(with_nsa.covariance, plain.covariance)

    def test_monotone_in_confidence(self):
        rng = np.random.default_rng(13)
        state = predict(initiate(random_measurement(rng), NSA), NSA)
        z = random_measurement(rng)
        errs = []
        for conf in np.linspace(0, 1, 9):
            out = update(state, z, float(conf), NSA)
            errs.append(np.linalg.norm(out.mean[:4] - z))
        assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


class TestGating:
    def test_hand_computed_distance(self):
        # Diagonal innovation covariance with 4.0 in the cx slot:
        # h = 20 so R[0,0] = 1, choose P[0,0] = 3. Offset (1,0,0,0) -> 1/4.
        mean = np.array([100.0, 100.0, 1.0, 20.0, 0, 0, 0, 0])
        cov = np.zeros((8, 8))
        cov[0, 0], cov[1, 1], cov[2, 2], cov[3, 3] = 3.0, 2.0, 0.3, 2.0
        state = KalmanState(mean, cov)
        _, s = project(state, CFG)
        assert s[0, 0] == pytest.approx(4.0, rel=1e-12)
        z = mean[:4] + np.array([1.0, 0, 0, 0])
        assert gating_distance(state, z, CFG) == pytest.approx(0.25, rel=1e-12)

    def test_zero_offset_zero_distance(self):
        state = predict(initiate(BBox(0, 0, 10, 20), CFG), CFG)
        assert gating_distance(state, state.mean[:4], CFG) == pytest.approx(0.0, abs=1e-12)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(21)
        state = predict(initiate(random_measurement(rng), CFG), CFG)
        zs = [random_measurement(rng) for _ in range(5)]
        batch = gating_distance_batch(state, zs, CFG)
        for z, d in zip(zs, batch):
            assert gating_distance(state, z, CFG) == pytest.approx(d, rel=1e-12)

    def test_gate_constant(self):
        assert CHI2_GATE_95_4DOF == 9.4877

    def test_accepts_bbox_measurements(self):
        state = predict(initiate(BBox(0, 0, 10, 20), CFG), CFG)
        assert gating_distance(state, BBox(0, 0, 10, 20), CFG) >= 0.0


class TestOracleEquivalence:
    def test_matches_dense_oracle_on_random_sequences(self):
        rng = np.random.default_rng(1234)
        for trial in range(1000):
            nsa = bool(trial % 2)
            cfg = NSA if nsa else CFG
            z0 = random_measurement(rng)
            state = initiate(z0, cfg)
            o_mean, o_cov = kf_initiate_oracle(z0, cfg.std_weight_position, cfg.std_weight_velocity)
            np.testing.assert_allclose(state.mean, o_mean, rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(state.covariance, o_cov, rtol=1e-9, atol=1e-12)
            for _ in range(rng.integers(3, 9)):
                state = predict(state, cfg)
                o_mean, o_cov = kf_predict_oracle(o_mean, o_cov, cfg.std_weight_position, cfg.std_weight_velocity)
                _assert_state_close(state, o_mean, o_cov)
                if rng.random() < 0.8:
                    z = o_mean[:4] + rng.normal(0, 2.0, 4) * np.array([1, 1, 0.02, 1])
                    z[2] = max(z[2], 0.05)
                    z[3] = max(z[3], 1.0)
                    conf = float(rng.uniform(0, 0.98))
                    state = update(state, z, conf, cfg)
                    o_mean, o_cov = kf_update_oracle(o_mean, o_cov, z, conf, cfg.std_weight_position, nsa)
                    _assert_state_close(state, o_mean, o_cov)


def _assert_state_close(state, o_mean, o_cov):
    np.testing.assert_allclose(state.mean, o_mean, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(state.covariance, o_cov, rtol=1e-9, atol=1e-9)
