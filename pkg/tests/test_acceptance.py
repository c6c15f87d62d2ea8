"""Top-level acceptance checks for the whole toolkit.

Each test exercises one advertised guarantee end to end and records a
PASS/FAIL line in the terminal summary. The desk-scale checks share the
session-scoped pipeline fixture so the expensive training runs happen once.
"""

import time

import numpy as np
import pytest

from payloadid import cli
from payloadid.arm import Pose, forward_kinematics, jacobian
from payloadid.attention_model import (
    attention_batch_gradients,
    evaluate_attention_loss,
    init_attention_model,
    joint_weights_batch,
    precompute_pool,
)
from payloadid.identify import IdentSystem, sample_regressor, solve_wls
from payloadid.metrics import compute_metrics
from payloadid.nn import init_mlp, mlp_backward, mlp_forward, mlp_forward_cached
from payloadid.sim import generate_random_samples
from payloadid.statics import ObjectSpec, free_motion_torques, loaded_torques
from payloadid.torque_model import fit_normalization, init_torque_model

from conftest import CONFIG_DIR, read_csv_rows, record_criterion
from test_sim import quiet_controller


def random_q(arm, rng):
    lo, hi = arm.joint_limits[:, 0], arm.joint_limits[:, 1]
    return rng.uniform(lo, hi)


def random_object(rng):
    return ObjectSpec(
        mass=float(rng.uniform(0.02, 0.15)),
        com_tag=rng.uniform(-0.06, 0.06, size=3),
    )


class TestCriterion1AnalyticIdentity:
    def test_regressor_reproduces_torque_difference(self, desk_arm):
        rng = np.random.default_rng(101)
        start = time.perf_counter()
        worst = 0.0
        for _ in range(1000):
            q = random_q(desk_arm, rng)
            obj = random_object(rng)
            poses = forward_kinematics(desk_arm, q)
            tau_true = loaded_torques(desk_arm, q, obj, poses=poses)
            tau_free = free_motion_torques(desk_arm, q, poses=poses)
            reg = sample_regressor(desk_arm, q, poses[desk_arm.n_joints + 1])
            x = np.concatenate([[obj.mass], obj.mass * obj.com_tag])
            worst = max(worst, np.max(np.abs((tau_true - tau_free) - reg @ x)))
        elapsed = time.perf_counter() - start
        ok = bool(worst < 1e-9 and elapsed < 5.0)
        record_criterion(
            1, ok,
            f"analytic identity: max residual {worst:.2e} N*m over 1000 "
            f"draws in {elapsed:.2f} s (limits 1e-9, 5 s)",
        )
        assert worst < 1e-9
        assert elapsed < 5.0

    def test_runs_on_other_arm_geometries(self):
        from conftest import planar_arm

        arm = planar_arm([0.3, 0.25, 0.2], masses=[0.5, 0.4, 0.2])
        rng = np.random.default_rng(102)
        for _ in range(50):
            q = random_q(arm, rng)
            obj = random_object(rng)
            poses = forward_kinematics(arm, q)
            diff = loaded_torques(arm, q, obj, poses=poses) - \
                free_motion_torques(arm, q, poses=poses)
            reg = sample_regressor(arm, q, poses[arm.n_joints + 1])
            x = np.concatenate([[obj.mass], obj.mass * obj.com_tag])
            assert np.max(np.abs(diff - reg @ x)) < 1e-9


class TestCriterion2ExactRecovery:
    def test_noise_free_windows_recover_objects(self, desk_arm):
        rng = np.random.default_rng(201)
        start = time.perf_counter()
        worst_mass = 0.0
        worst_com = 0.0
        for _ in range(100):
            obj = random_object(rng)
            regressors = []
            residuals = []
            for _ in range(64):
                q = random_q(desk_arm, rng)
                poses = forward_kinematics(desk_arm, q)
                residuals.append(
                    loaded_torques(desk_arm, q, obj, poses=poses)
                    - free_motion_torques(desk_arm, q, poses=poses)
                )
                regressors.append(
                    sample_regressor(desk_arm, q, poses[desk_arm.n_joints + 1])
                )
            system = IdentSystem(
                np.vstack(regressors), np.concatenate(residuals),
                np.ones(64 * 4), 4,
            )
            est = solve_wls(system)
            worst_mass = max(worst_mass, abs(est.mass - obj.mass) / obj.mass)
            worst_com = max(
                worst_com, float(np.max(np.abs(est.com_tag - obj.com_tag)))
            )
        elapsed = time.perf_counter() - start
        ok = bool(worst_mass < 1e-9 and worst_com < 1e-9 and elapsed < 10.0)
        record_criterion(
            2, ok,
            f"exact recovery: worst mass {worst_mass:.2e} rel, worst COM "
            f"{worst_com:.2e} m over 100 objects in {elapsed:.2f} s "
            f"(limits 1e-9, 1e-9, 10 s)",
        )
        assert worst_mass < 1e-9
        assert worst_com < 1e-9
        assert elapsed < 10.0


class TestCriterion3JacobianFiniteDifference:
    def test_jacobian_matches_finite_differences(self, desk_arm):
        rng = np.random.default_rng(301)
        h = 1e-6
        worst = 0.0
        for _ in range(100):
            q = random_q(desk_arm, rng)
            jac = jacobian(desk_arm, q)
            fd = np.zeros_like(jac)
            rot = forward_kinematics(desk_arm, q)[desk_arm.n_joints].rotation
            for j in range(desk_arm.n_joints):
                dq = np.zeros(desk_arm.n_joints)
                dq[j] = h
                plus = forward_kinematics(desk_arm, q + dq,
                                          check_limits=False)
                minus = forward_kinematics(desk_arm, q - dq,
                                           check_limits=False)
                ee_p = plus[desk_arm.n_joints]
                ee_m = minus[desk_arm.n_joints]
                fd[:3, j] = (ee_p.translation - ee_m.translation) / (2 * h)
                omega_hat = ((ee_p.rotation - ee_m.rotation) / (2 * h)) @ rot.T
                fd[3:, j] = [omega_hat[2, 1], omega_hat[0, 2], omega_hat[1, 0]]
            worst = max(worst, float(np.max(np.abs(jac - fd))))
        ok = bool(worst < 1e-6)
        record_criterion(
            3, ok,
            f"Jacobian vs finite differences: max deviation {worst:.2e} "
            "over 100 configurations (limit 1e-6)",
        )
        assert worst < 1e-6


class TestCriterion4GradientSuites:
    def test_mlp_backprop_matches_finite_differences(self):
        rng = np.random.default_rng(401)
        params = init_mlp([3, 6, 2], rng)
        inputs = rng.normal(size=(5, 3))
        targets = rng.normal(size=(5, 2))

        def loss():
            return 0.5 * float(np.sum((mlp_forward(params, inputs)
                                       - targets) ** 2))

        out, cache = mlp_forward_cached(params, inputs)
        grads, _ = mlp_backward(params, cache, out - targets)
        h = 1e-6
        worst = 0.0
        for arrays, garrays in ((params.weights, grads.weights),
                                (params.biases, grads.biases)):
            for arr, garr in zip(arrays, garrays):
                for idx in np.ndindex(arr.shape):
                    keep = arr[idx]
                    arr[idx] = keep + h
                    up = loss()
                    arr[idx] = keep - h
                    down = loss()
                    arr[idx] = keep
                    fd = (up - down) / (2 * h)
                    an = garr[idx]
                    if max(abs(fd), abs(an)) < 1e-10:
                        continue
                    worst = max(worst, abs(fd - an) / max(abs(fd), abs(an)))
        ok = bool(worst < 1e-4)
        record_criterion(
            4, ok,
            f"gradients: backprop worst rel err {worst:.2e} (limit 1e-4); "
            "attention leg recorded by the companion test",
        )
        assert worst < 1e-4

    def test_wls_through_attention_matches_finite_differences(self, desk_arm):
        ctrl = quiet_controller(4, kp=8.0, coulomb=0.02, pos_gain=0.05)
        objects = [("obj", ObjectSpec(0.1, np.array([0.01, 0.0, 0.02])))]
        samples = generate_random_samples(desk_arm, ctrl, objects, 4, 402)
        norms = fit_normalization(samples)
        rng = np.random.default_rng(403)
        torque_model = init_torque_model(4, norms, rng)
        model = init_attention_model(4, norms, rng)
        pool = precompute_pool(desk_arm, torque_model, norms, samples)
        loss0, scorer_grads, rep_grads, skipped = attention_batch_gradients(
            model, pool["enc"], [pool["regressor"].reshape(-1, 4)],
            [pool["residual"].reshape(-1)], [(pool["mass"], pool["com"])],
            1.0, 0.3,
        )
        assert skipped == 0

        def loss():
            return evaluate_attention_loss(
                model, torque_model, desk_arm, [samples], 1.0, 0.3
            )

        h = 1e-6
        worst = 0.0
        check_rng = np.random.default_rng(404)

        def probe(params, grads, n_checks):
            nonlocal worst
            for _ in range(n_checks):
                li = check_rng.integers(len(params.weights))
                arr = params.weights[li]
                idx = tuple(check_rng.integers(d) for d in arr.shape)
                keep = arr[idx]
                arr[idx] = keep + h
                up = loss()
                arr[idx] = keep - h
                down = loss()
                arr[idx] = keep
                fd = (up - down) / (2 * h)
                an = grads.weights[li][idx]
                if max(abs(fd), abs(an)) < 1e-10:
                    continue
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an)))

        probe(model.scorer, scorer_grads, 30)
        for j in range(4):
            probe(model.rep_modules[j], rep_grads[j], 6)
        ok = bool(worst < 1e-3)
        record_criterion(
            4, ok,
            f"gradients: WLS-through-attention worst rel err {worst:.2e} "
            "(limit 1e-3)",
        )
        assert worst < 1e-3


class TestCriterion5LearnedTorqueQuality:
    def test_heldout_torque_error_and_budget(self, desk_pipeline):
        config = desk_pipeline.config
        n_train = len(desk_pipeline.train_samples)
        assert n_train >= 20000
        assert np.isclose(max(config.controller.encoder_noise_sd), 1e-4)
        assert np.all(config.controller.friction_coulomb > 0)
        assert config.torque_schedule.epochs >= 50

        _, rows = read_csv_rows(desk_pipeline.out / "metrics_torque.csv")
        per_joint = [float(r[3]) for r in rows
                     if r[1] == "t-model" and r[0] != "mean"]
        assert len(per_joint) == 4
        train_time = desk_pipeline.timings["torque"]
        ok = bool(max(per_joint) <= 5.0 and train_time <= 900.0)
        record_criterion(
            5, ok,
            f"learned torque: per-joint held-out NMAE "
            f"{['%.2f' % v for v in per_joint]} % (limit 5%), "
            f"{n_train} train samples, trained in {train_time:.0f} s "
            f"over {config.torque_schedule.epochs} epochs",
        )
        assert max(per_joint) <= 5.0
        assert train_time <= 900.0


class TestCriterion6MethodOrdering:
    def test_mean_error_ordering(self, desk_pipeline):
        _, rows = read_csv_rows(desk_pipeline.out / "metrics_inertial.csv")
        nmae = {
            (r[2], r[1]): float(r[4]) for r in rows if r[0] == "mean"
        }
        mass_ok = (
            nmae[("t-a-model", "mass")] <= nmae[("t-model", "mass")]
            < nmae[("pe", "mass")]
            and nmae[("t-model", "mass")] < nmae[("sensor", "mass")]
        )
        com_ok = (
            nmae[("t-a-model", "com")] <= nmae[("t-model", "com")]
            < nmae[("pe", "com")]
            and nmae[("t-model", "com")] < nmae[("sensor", "com")]
        )
        margin_ok = (
            nmae[("t-a-model", "com")] <= 0.95 * nmae[("t-model", "com")]
        )
        ok = bool(mass_ok and com_ok and margin_ok)
        record_criterion(
            6, ok,
            "method ordering: mass NMAE "
            f"t-a {nmae[('t-a-model', 'mass')]:.3f} <= "
            f"t {nmae[('t-model', 'mass')]:.3f} < "
            f"pe {nmae[('pe', 'mass')]:.3f} / "
            f"sensor {nmae[('sensor', 'mass')]:.3f}; COM NMAE "
            f"t-a {nmae[('t-a-model', 'com')]:.3f} <= "
            f"t {nmae[('t-model', 'com')]:.3f} < "
            f"pe {nmae[('pe', 'com')]:.3f} / "
            f"sensor {nmae[('sensor', 'com')]:.3f}; "
            f"t-a com <= 0.95*t com: {margin_ok}",
        )
        assert mass_ok, f"mass ordering violated: {nmae}"
        assert com_ok, f"COM ordering violated: {nmae}"
        assert margin_ok, f"COM margin violated: {nmae}"


class TestCriterion7AttentionConcentration:
    def test_cleanest_joint_dominates_weights(self, desk_pipeline):
        noise = np.asarray(desk_pipeline.config.controller.encoder_noise_sd)
        clean = int(np.argmin(noise))
        others = np.delete(noise, clean)
        assert np.all(others >= 10 * noise[clean] - 1e-15), (
            "config premise: one joint must carry 10x lower encoder noise"
        )
        weights = joint_weights_batch(
            desk_pipeline.attention_model, desk_pipeline.test_samples
        )
        mean_w = float(weights[:, clean].mean())
        n = desk_pipeline.config.arm.n_joints
        ok = bool(mean_w > 2.0 / n)
        record_criterion(
            7, ok,
            f"attention concentration: joint {clean + 1} mean weight "
            f"{mean_w:.3f} > 2/N = {2.0 / n:.2f}",
        )
        assert mean_w > 2.0 / n


class TestCriterion8SwitchingForce:
    def test_filtered_force_settles_on_each_plateau(self, desk_pipeline):
        _, rows = read_csv_rows(desk_pipeline.out / "continuous_force.csv")
        ends = np.array([int(r[0]) for r in rows])
        filtered = np.array([float(r[2]) for r in rows])
        true_force = np.array([float(r[4]) for r in rows])

        switch_rows = np.where(np.diff(true_force) != 0)[0] + 1
        bounds = [0, *switch_rows, len(rows)]
        details = []
        all_ok = True
        for k in range(len(bounds) - 1):
            lo, hi = bounds[k], bounds[k + 1]
            target = true_force[lo]
            # the switch happens at trajectory index ends[lo] (for the first
            # plateau, at trajectory start); 256 samples later the filtered
            # estimate must be inside the 10% band and stay there
            switch_time = ends[lo] if k > 0 else 0
            settled = (ends >= switch_time + 256) & (np.arange(len(rows)) >= lo) \
                & (np.arange(len(rows)) < hi)
            assert settled.any(), "plateau too short to judge settling"
            worst = float(
                np.max(np.abs(filtered[settled] - target)) / target
            )
            all_ok = all_ok and worst <= 0.10
            details.append(f"plateau {k + 1} ({target:.2f} N): {worst:.1%}")
        record_criterion(
            8, bool(all_ok),
            "switching force, worst error after 256-sample settling: "
            + "; ".join(details) + " (limit 10%)",
        )
        assert all_ok, details


class TestCriterion9MetricIdentities:
    def test_hand_cases_and_report_invariant(self, desk_pipeline):
        single = compute_metrics([3.0], [2.0], scale=10.0)
        pair = compute_metrics([1.0, 3.0], [0.0, 0.0], scale=10.0)
        hand_ok = (
            single.mae == 1.0
            and single.nmae_percent == 10.0
            and single.nrmse_percent == 10.0
            and pair.mae == 2.0
            and pair.nmae_percent == 20.0
            and np.isclose(pair.nrmse_percent, 10.0 * np.sqrt(5.0), rtol=1e-12)
        )

        emitted_ok = True
        checked = 0
        for name in ("metrics_inertial.csv", "metrics_torque.csv"):
            header, rows = read_csv_rows(desk_pipeline.out / name)
            i_nmae = header.index("nmae_percent")
            i_nrmse = header.index("nrmse_percent")
            for row in rows:
                checked += 1
                emitted_ok = emitted_ok and (
                    float(row[i_nrmse]) >= float(row[i_nmae]) - 1e-9
                )
        ok = bool(hand_ok and emitted_ok)
        record_criterion(
            9, ok,
            f"metric identities: hand cases exact, NRMSE >= NMAE on all "
            f"{checked} emitted report rows",
        )
        assert hand_ok
        assert emitted_ok


class TestCriterion10Determinism:
    def test_two_runs_are_byte_identical(self, tmp_path):
        tiny = str(CONFIG_DIR / "tiny.yaml")
        outputs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            for argv in (
                ["gen-data", "--config", tiny, "--out", str(out)],
                ["train", "--config", tiny, "--out", str(out),
                 "--which", "torque"],
                ["train", "--config", tiny, "--out", str(out),
                 "--which", "attention"],
                ["eval", "--config", tiny, "--out", str(out)],
                ["continuous", "--config", tiny, "--out", str(out)],
            ):
                assert cli.main(argv) == 0
            outputs.append(out)

        a_names = sorted(p.name for p in outputs[0].iterdir())
        b_names = sorted(p.name for p in outputs[1].iterdir())
        assert a_names == b_names and a_names
        mismatched = [
            name for name in a_names
            if (outputs[0] / name).read_bytes() != (outputs[1] / name).read_bytes()
        ]
        ok = not mismatched
        record_criterion(
            10, bool(ok),
            f"determinism: {len(a_names)} artifacts byte-identical across "
            "two tiny-config runs"
            + ("" if ok else f"; mismatched: {mismatched}"),
        )
        assert ok, f"artifacts differ: {mismatched}"
