from types import SimpleNamespace

import numpy as np
import pytest

from payloadid.errors import DataError
from payloadid.metrics import (
    BaselineParams,
    MetricReport,
    compute_metrics,
    fit_baseline,
    predict_baseline,
    predict_baseline_batch,
    switching_force_track,
    trailing_mean,
)
from payloadid.sim import generate_random_samples
from payloadid.statics import ObjectSpec
from payloadid.torque_model import fit_normalization, init_torque_model

from test_sim import quiet_controller


class TestComputeMetrics:
    def test_single_error_hand_case(self):
        report = compute_metrics([3.0], [2.0], scale=10.0, quantity="mass")
        assert report.mae == 1.0
        assert report.nmae_percent == 10.0
        assert report.nrmse_percent == 10.0

    def test_two_errors_hand_case(self):
        report = compute_metrics([1.0, 3.0], [0.0, 0.0], scale=10.0)
        assert report.mae == 2.0
        assert report.nmae_percent == 20.0
        assert np.isclose(report.nrmse_percent, 10.0 * np.sqrt(5.0), rtol=1e-12)

    def test_vector_rows_use_euclidean_distance(self):
        est = np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 0.0]])
        truth = np.zeros((2, 3))
        report = compute_metrics(est, truth, scale=5.0)
        assert report.mae == 2.5  # distances 5 and 0
        assert np.isclose(report.nrmse_percent, 100.0 * np.sqrt(12.5) / 5.0)

    def test_nrmse_never_below_nmae(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            k = rng.integers(1, 30)
            report = compute_metrics(
                rng.normal(size=k), rng.normal(size=k), scale=rng.uniform(0.1, 5)
            )
            assert report.nrmse_percent >= report.nmae_percent - 1e-12

    def test_input_validation(self):
        with pytest.raises(ValueError, match="scale"):
            compute_metrics([1.0], [0.0], scale=0.0)
        with pytest.raises(ValueError, match="scale"):
            compute_metrics([1.0], [0.0], scale=-2.0)
        with pytest.raises(ValueError, match="equal"):
            compute_metrics([1.0, 2.0], [0.0], scale=1.0)
        with pytest.raises(ValueError, match="equal"):
            compute_metrics([], [], scale=1.0)

    def test_report_rejects_inverted_metrics(self):
        with pytest.raises(ValueError, match="NRMSE"):
            MetricReport(quantity="q", mae=1.0, nmae_percent=20.0,
                         nrmse_percent=10.0, scale=1.0)
        with pytest.raises(ValueError, match="negative"):
            MetricReport(quantity="q", mae=-1.0, nmae_percent=1.0,
                         nrmse_percent=1.0, scale=1.0)


class TestTrailingMean:
    def test_frozen_case(self):
        out = trailing_mean(np.array([1.0, 2.0, 3.0, 4.0]), 2)
        assert np.allclose(out, [1.0, 1.5, 2.5, 3.5])

    def test_width_one_is_identity(self):
        values = np.array([4.0, -1.0, 7.0])
        assert np.array_equal(trailing_mean(values, 1), values)

    def test_wide_filter_is_running_mean(self):
        values = np.array([2.0, 4.0, 6.0])
        assert np.allclose(trailing_mean(values, 100), [2.0, 3.0, 4.0])

    def test_rejects_bad_width(self):
        with pytest.raises(ValueError, match="width"):
            trailing_mean(np.array([1.0]), 0)


def synth_baseline_samples(n_samples, friction=0.05, sensor_bias=0.01,
                           kp=6.0, seed=0):
    """Noise-free samples obeying both baseline models exactly."""
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n_samples):
        q = rng.uniform(-1.0, 1.0, size=2)
        rot = rng.choice([-1.0, 1.0], size=2)
        tau_true = rng.normal(size=2)
        disc = (tau_true + rot * friction) / kp
        samples.append(
            SimpleNamespace(
                q=q,
                q_d=q + disc,
                rot_dir=rot,
                tau_true=tau_true,
                tau_sensor_raw=tau_true + rot * friction + sensor_bias,
            )
        )
    return samples


class TestBaselines:
    def test_sensor_baseline_recovers_exact_correction(self):
        samples = synth_baseline_samples(40)
        params = fit_baseline("sensor", samples)
        assert np.allclose(params.friction, 0.05, atol=1e-10)
        pred = predict_baseline_batch(params, samples)
        truth = np.array([s.tau_true for s in samples])
        assert np.allclose(pred, truth, atol=1e-10)

    def test_pe_baseline_recovers_gain_and_friction(self):
        samples = synth_baseline_samples(40)
        params = fit_baseline("pe", samples)
        assert np.allclose(params.p_gain, 6.0, atol=1e-8)
        assert np.allclose(params.friction, 0.05, atol=1e-9)
        pred = predict_baseline_batch(params, samples)
        truth = np.array([s.tau_true for s in samples])
        assert np.allclose(pred, truth, atol=1e-8)

    def test_pe_baseline_exact_on_simulated_coulomb_arm(self, desk_arm):
        ctrl = quiet_controller(4, kp=8.0, coulomb=0.03, pos_gain=0.0)
        objects = [("o", ObjectSpec(0.08, np.array([0.01, 0.0, 0.01])))]
        samples = generate_random_samples(desk_arm, ctrl, objects, 60, 5)
        params = fit_baseline("pe", samples)
        pred = predict_baseline_batch(params, samples)
        truth = np.array([s.tau_true for s in samples])
        assert np.allclose(pred, truth, atol=1e-8)
        assert np.allclose(params.p_gain, 8.0, atol=1e-6)

    def test_single_sample_prediction_matches_batch(self):
        samples = synth_baseline_samples(10)
        params = fit_baseline("sensor", samples)
        assert np.array_equal(
            predict_baseline(params, samples[3]),
            predict_baseline_batch(params, samples)[3],
        )

    def test_degenerate_direction_is_rejected(self):
        samples = synth_baseline_samples(20)
        for s in samples:
            s.rot_dir = np.ones(2)
        with pytest.raises(DataError, match="rotation-direction"):
            fit_baseline("sensor", samples)

    def test_zero_discrepancy_is_rejected_for_pe(self):
        samples = synth_baseline_samples(20)
        for s in samples:
            s.q_d = s.q.copy()
        with pytest.raises(DataError, match="discrepancy"):
            fit_baseline("pe", samples)

    def test_unknown_kind_and_empty_dataset(self):
        with pytest.raises(ValueError, match="kind"):
            fit_baseline("magic", synth_baseline_samples(5))
        with pytest.raises(DataError, match="empty"):
            fit_baseline("sensor", [])

    def test_params_validation(self):
        with pytest.raises(ValueError, match="p_gain"):
            BaselineParams(kind="pe", friction=np.zeros(2), bias=np.zeros(2))
        with pytest.raises(ValueError, match="finite"):
            BaselineParams(kind="sensor", friction=np.array([np.nan]),
                           bias=np.zeros(1))


class TestForceTrack:
    def test_stream_mechanics(self, desk_arm):
        ctrl = quiet_controller(4, kp=8.0, coulomb=0.02, pos_gain=0.05)
        objects = [("o", ObjectSpec(0.08, np.array([0.01, 0.0, 0.01])))]
        samples = generate_random_samples(desk_arm, ctrl, objects, 20, 6)
        windows = [samples[i:i + 5] for i in range(0, 20, 5)]
        norms = fit_normalization(samples)
        model = init_torque_model(4, norms, np.random.default_rng(7))

        track = switching_force_track(desk_arm, windows, model, None, 3)
        assert track.raw.shape == (4,)
        assert track.window == 5
        assert np.array_equal(track.filtered, trailing_mean(track.raw, 3))
        assert np.all(np.isfinite(track.raw))

    def test_stream_validation(self, desk_arm):
        ctrl = quiet_controller(4, kp=8.0)
        objects = [("o", ObjectSpec(0.05, np.array([0.01, 0.0, 0.0])))]
        samples = generate_random_samples(desk_arm, ctrl, objects, 6, 8)
        norms = fit_normalization(samples)
        model = init_torque_model(4, norms, np.random.default_rng(9))
        with pytest.raises(DataError, match="at least one window"):
            switching_force_track(desk_arm, [], model, None, 3)
        with pytest.raises(DataError, match="equal length"):
            switching_force_track(
                desk_arm, [samples[:4], samples[:3]], model, None, 3
            )
