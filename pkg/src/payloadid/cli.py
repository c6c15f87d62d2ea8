"""Command-line front end for the full pipeline.

Subcommands: gen-data, train, identify, eval, continuous. Every run is a
pure function of (config file, seed): artifacts embed the config hash, float
text uses exact repr round-tripping, and random streams derive from the
master seed per stage, so re-running a command overwrites outputs with
byte-identical bytes (at workers=1).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .attention_model import (
    attention_model_from_dict,
    attention_model_to_dict,
    init_attention_model,
    joint_weights_batch,
    train_attention,
)
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DataError, NumericalError, RankDeficiencyError
from .identify import IdentSystem, sample_regressor, solve_wls
from .metrics import (
    compute_metrics,
    fit_baseline,
    predict_baseline_batch,
    switching_force_track,
)
from .sim import (
    generate_planning_grid,
    generate_random_samples,
    generate_switching_trajectory,
    make_inference_windows,
    read_dataset,
    write_dataset,
)
from .statics import ObjectSpec
from .torque_model import (
    estimate_torque_batch,
    normalization_from_dict,
    normalization_to_dict,
    torque_model_from_dict,
    torque_model_to_dict,
    train_torque_model,
)

METHODS = ("sensor", "pe", "t-model", "t-a-model")


# ---------------------------------------------------------------------------
# Small artifact helpers
# ---------------------------------------------------------------------------

def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise DataError(f"missing artifact: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt JSON artifact {path}: {exc}") from exc


def _file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, columns: list, rows: list, config_hash: str,
               extra_comment: str = "") -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# config_hash={config_hash}" + (f" {extra_comment}" if extra_comment else "")]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _group_by_object(samples) -> dict:
    groups: dict = {}
    for sample in samples:
        groups.setdefault(sample.object_id, []).append(sample)
    return groups


def _named_specs(object_configs) -> list:
    return [(o.name, o.spec) for o in object_configs]


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def cmd_gen_data(config: ExperimentConfig, workers: int = 1) -> dict:
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    train_objects = _named_specs(config.training_objects)
    test_objects = _named_specs(config.test_objects)
    feasible = config.feasibility_predicate()

    planning_seq, random_seq = config.stage_seed("train_data").spawn(2)
    print(f"generating planning grid ({config.grid_step_deg} deg step)...")
    planning = generate_planning_grid(
        config.arm, config.controller, train_objects, config.grid_step_deg,
        planning_seq, ranges_deg=config.grid_ranges_deg, feasible=feasible,
        workers=workers,
    )
    print(f"  {len(planning)} planning samples")
    print(f"generating {config.random_per_object} random samples per object...")
    random_part = generate_random_samples(
        config.arm, config.controller, train_objects, config.random_per_object,
        random_seq, workers=workers,
    )
    train_samples = planning + random_part
    print(f"  {len(train_samples)} training samples total")

    print(f"generating {config.test_random_per_object} test samples per object...")
    test_samples = generate_random_samples(
        config.arm, config.controller, test_objects,
        config.test_random_per_object, config.stage_seed("test_data"),
        workers=workers,
    )
    print(f"  {len(test_samples)} test samples")

    header = {"config_hash": config.config_hash, "seed": config.seed}
    train_path, test_path = out / "train.jsonl", out / "test.jsonl"
    write_dataset(train_path, train_samples, header)
    write_dataset(test_path, test_samples, header)
    manifest = {
        "config_hash": config.config_hash,
        "seed": config.seed,
        "workers": workers,
        "counts": {
            "planning": len(planning),
            "random": len(random_part),
            "train": len(train_samples),
            "test": len(test_samples),
        },
        "files": {
            "train.jsonl": _file_hash(train_path),
            "test.jsonl": _file_hash(test_path),
        },
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {train_path}, {test_path}, manifest.json")
    return manifest


def _read_matching_dataset(config: ExperimentConfig, name: str):
    header, samples = read_dataset(config.out_dir / name)
    if header.get("config_hash") != config.config_hash:
        raise DataError(
            f"{name} was generated from a different configuration "
            "(config hash mismatch); re-run gen-data"
        )
    return samples


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _save_loss_trace(path: Path, columns: list, rows, config_hash: str) -> None:
    _write_csv(path, columns, rows, config_hash)


def cmd_train(config: ExperimentConfig, which: str) -> None:
    out = config.out_dir
    train_samples = _read_matching_dataset(config, "train.jsonl")
    if which == "torque":
        print(f"training torque model on {len(train_samples)} samples "
              f"({config.torque_schedule.epochs} epochs)...")
        model, trace = train_torque_model(
            train_samples, config.torque_schedule, config.stage_seed("torque")
        )
        payload = torque_model_to_dict(model)
        payload["config_hash"] = config.config_hash
        payload["seed"] = config.seed
        _write_json(out / "torque_model.json", payload)
        _save_loss_trace(out / "torque_loss.csv",
                         ["epoch", "train_loss", "holdout_loss"], trace,
                         config.config_hash)
        print(f"final scaled MSE: train {trace[-1][1]:.3e}, "
              f"holdout {trace[-1][2]:.3e}")
        print(f"wrote {out / 'torque_model.json'}")
    elif which == "attention":
        torque_path = out / "torque_model.json"
        if not torque_path.exists():
            raise DataError(
                "attention training requires a torque checkpoint; "
                "run `train --which torque` first"
            )
        torque_model = torque_model_from_dict(_read_json(torque_path))
        torque_hash = _file_hash(torque_path)
        pools = list(_group_by_object(train_samples).values())
        rng = np.random.default_rng(config.stage_seed("attention"))
        norms = normalization_from_dict(
            normalization_to_dict(torque_model.normalization)
        )
        model = init_attention_model(config.arm.n_joints, norms, rng)
        print(f"training attention model over {len(pools)} object pools "
              f"({config.attention_schedule.epochs} epochs)...")
        trace = train_attention(
            model, torque_model, config.arm, pools,
            config.attention_schedule, rng,
        )
        payload = attention_model_to_dict(model, torque_hash)
        payload["config_hash"] = config.config_hash
        payload["seed"] = config.seed
        _write_json(out / "attention_model.json", payload)
        _save_loss_trace(out / "attention_loss.csv",
                         ["epoch", "loss", "skipped_windows"], trace,
                         config.config_hash)
        skipped = sum(row[2] for row in trace)
        print(f"final loss {trace[-1][1]:.3e}; skipped windows: {skipped}")
        print(f"wrote {out / 'attention_model.json'}")
    else:
        raise ConfigError(f"unknown training target: {which!r}")


def _load_torque_model(config: ExperimentConfig):
    path = config.out_dir / "torque_model.json"
    if not path.exists():
        raise DataError("torque checkpoint missing; run `train --which torque`")
    payload = _read_json(path)
    if payload.get("config_hash") != config.config_hash:
        raise DataError("torque checkpoint belongs to a different configuration")
    return torque_model_from_dict(payload), _file_hash(path)


def _load_attention_model(config: ExperimentConfig, torque_hash: str):
    path = config.out_dir / "attention_model.json"
    if not path.exists():
        raise DataError("attention checkpoint missing; run `train --which attention`")
    payload = _read_json(path)
    if payload.get("config_hash") != config.config_hash:
        raise DataError("attention checkpoint belongs to a different configuration")
    model, recorded = attention_model_from_dict(payload)
    if recorded != torque_hash:
        raise DataError(
            "attention checkpoint was trained against a different torque "
            "model; retrain it"
        )
    return model


# ---------------------------------------------------------------------------
# identify / eval
# ---------------------------------------------------------------------------

def _method_models(config: ExperimentConfig, methods) -> dict:
    """Load checkpoints / fit baselines needed by the requested methods."""
    ctx: dict = {}
    if any(m in ("t-model", "t-a-model") for m in methods):
        ctx["torque"], ctx["torque_hash"] = _load_torque_model(config)
    if "t-a-model" in methods:
        ctx["attention"] = _load_attention_model(config, ctx["torque_hash"])
    if any(m in ("sensor", "pe") for m in methods):
        train_samples = _read_matching_dataset(config, "train.jsonl")
        for kind in ("sensor", "pe"):
            if kind in methods:
                ctx[kind] = fit_baseline(kind, train_samples)
    return ctx


def _method_torques(method: str, samples, ctx) -> np.ndarray:
    if method in ("t-model", "t-a-model"):
        return estimate_torque_batch(ctx["torque"], samples)
    return predict_baseline_batch(ctx[method], samples)


def identify_object_windows(
    config: ExperimentConfig,
    samples,
    index_windows,
    method: str,
    ctx: dict,
    regressors: np.ndarray,
):
    """Per-window estimates for one object; returns (estimates, skipped)."""
    tau_hat = _method_torques(method, samples, ctx)
    tau_g = np.array([s.tau_g for s in samples])
    residual_all = tau_hat - tau_g
    weights_all = (
        joint_weights_batch(ctx["attention"], samples)
        if method == "t-a-model"
        else np.ones_like(residual_all)
    )
    n = config.arm.n_joints
    results = []
    skipped = 0
    for idx in index_windows:
        system = IdentSystem(
            regressors[idx].reshape(-1, 4),
            residual_all[idx].reshape(-1),
            weights_all[idx].reshape(-1),
            n,
        )
        try:
            results.append(
                solve_wls(system, condition_cap=config.condition_cap,
                          mass_floor=config.mass_floor)
            )
        except RankDeficiencyError:
            skipped += 1
            results.append(None)
    return results, skipped


def run_identification(
    config: ExperimentConfig, methods, window: int, repeats: int
) -> dict:
    """Estimates for every (method, test object, window); windows are drawn
    once and shared across methods so comparisons are paired."""
    test_samples = _read_matching_dataset(config, "test.jsonl")
    groups = _group_by_object(test_samples)
    ctx = _method_models(config, methods)
    rng = np.random.default_rng(config.stage_seed("identify"))
    by_object = {}
    for object_id, samples in groups.items():
        if window > len(samples):
            raise DataError(
                f"object {object_id!r}: window {window} exceeds its "
                f"{len(samples)} test samples"
            )
        index_windows = [
            rng.choice(len(samples), size=window, replace=False)
            for _ in range(repeats)
        ]
        regressors = np.stack(
            [sample_regressor(config.arm, s.q, s.tag_pose) for s in samples]
        )
        by_object[object_id] = (samples, index_windows, regressors)

    results = {}
    for method in methods:
        per_object = {}
        for object_id, (samples, index_windows, regressors) in by_object.items():
            estimates, skipped = identify_object_windows(
                config, samples, index_windows, method, ctx, regressors
            )
            per_object[object_id] = {"estimates": estimates, "skipped": skipped}
        results[method] = per_object
    return results


def _estimate_rows(config: ExperimentConfig, per_object: dict) -> list:
    truth = {o.name: o.spec for o in config.test_objects}
    rows = []
    for object_id, data in per_object.items():
        spec = truth.get(object_id)
        if spec is None:
            raise DataError(f"test dataset holds unknown object {object_id!r}")
        for k, est in enumerate(data["estimates"]):
            if est is None:
                continue
            rows.append(
                (
                    object_id, k, spec.mass, est.mass,
                    spec.com_tag[0], spec.com_tag[1], spec.com_tag[2],
                    est.com_tag[0], est.com_tag[1], est.com_tag[2],
                    est.com_defined, est.condition_number, est.residual_cost,
                )
            )
    return rows


ESTIMATE_COLUMNS = [
    "object", "window_index", "mass_true", "mass_est",
    "com_true_x", "com_true_y", "com_true_z",
    "com_est_x", "com_est_y", "com_est_z",
    "com_defined", "condition_number", "residual_cost",
]


def cmd_identify(config: ExperimentConfig, method: str, window: int,
                 repeats: int) -> None:
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    results = run_identification(config, [method], window, repeats)
    rows = _estimate_rows(config, results[method])
    path = config.out_dir / f"estimates_{method}.csv"
    _write_csv(path, ESTIMATE_COLUMNS, rows, config.config_hash,
               extra_comment=f"method={method} window={window} repeats={repeats}")
    skipped = sum(d["skipped"] for d in results[method].values())
    print(f"{method}: {len(rows)} window estimates "
          f"({skipped} rank-deficient windows skipped)")
    print(f"wrote {path}")


def _object_metric_rows(config: ExperimentConfig, results: dict) -> list:
    """Mass and COM metric rows per (object, method), plus mean rows."""
    rows = []
    mean_acc: dict = {}
    for method in results:
        for obj in config.test_objects:
            data = results[method].get(obj.name)
            if data is None:
                continue
            kept = [e for e in data["estimates"] if e is not None]
            masses = np.array([e.mass for e in kept])
            mass_report = compute_metrics(
                masses, np.full(len(kept), obj.spec.mass), obj.spec.mass,
                quantity="mass",
            )
            rows.append((obj.name, "mass", method, mass_report.mae,
                         mass_report.nmae_percent, mass_report.nrmse_percent,
                         mass_report.scale))
            defined = [e for e in kept if e.com_defined]
            com_est = np.array([e.com_tag for e in defined])
            com_true = np.tile(obj.spec.com_tag, (len(defined), 1))
            com_report = compute_metrics(
                com_est, com_true, obj.com_scale, quantity="com"
            )
            rows.append((obj.name, "com", method, com_report.mae,
                         com_report.nmae_percent, com_report.nrmse_percent,
                         com_report.scale))
            for quantity, report in (("mass", mass_report), ("com", com_report)):
                mean_acc.setdefault((method, quantity), []).append(report)
    for (method, quantity), reports in mean_acc.items():
        rows.append(
            ("mean", quantity, method,
             float(np.mean([r.mae for r in reports])),
             float(np.mean([r.nmae_percent for r in reports])),
             float(np.mean([r.nrmse_percent for r in reports])),
             float("nan"))
        )
    return rows


def _torque_metric_rows(config: ExperimentConfig, methods) -> list:
    """Whole-test-set torque error per joint for each estimating method."""
    test_samples = _read_matching_dataset(config, "test.jsonl")
    ctx = _method_models(config, methods)
    tau_true = np.array([s.tau_true for s in test_samples])
    scales = np.abs(tau_true).max(axis=0)
    rows = []
    for method in methods:
        tau_hat = _method_torques(method, test_samples, ctx)
        for j in range(config.arm.n_joints):
            report = compute_metrics(
                tau_hat[:, j], tau_true[:, j], scales[j],
                quantity=f"torque_joint_{j + 1}",
            )
            rows.append((j + 1, method, report.mae, report.nmae_percent,
                         report.nrmse_percent, report.scale))
        per_joint = [r for r in rows if r[1] == method]
        rows.append(
            ("mean", method,
             float(np.mean([r[2] for r in per_joint])),
             float(np.mean([r[3] for r in per_joint])),
             float(np.mean([r[4] for r in per_joint])),
             float("nan"))
        )
    return rows


def cmd_eval(config: ExperimentConfig, window: int, repeats: int) -> None:
    results = run_identification(config, list(METHODS), window, repeats)
    for method in METHODS:
        rows = _estimate_rows(config, results[method])
        _write_csv(config.out_dir / f"estimates_{method}.csv",
                   ESTIMATE_COLUMNS, rows, config.config_hash,
                   extra_comment=f"method={method} window={window} repeats={repeats}")
    inertial_rows = _object_metric_rows(config, results)
    _write_csv(config.out_dir / "metrics_inertial.csv",
               ["object", "quantity", "method", "mae", "nmae_percent",
                "nrmse_percent", "scale"],
               inertial_rows, config.config_hash,
               extra_comment=f"window={window} repeats={repeats}")
    torque_rows = _torque_metric_rows(config, ["sensor", "pe", "t-model"])
    _write_csv(config.out_dir / "metrics_torque.csv",
               ["joint", "method", "mae", "nmae_percent", "nrmse_percent",
                "scale"],
               torque_rows, config.config_hash)
    print("method summary (mean over objects):")
    for row in inertial_rows:
        if row[0] == "mean":
            print(f"  {row[2]:>9} {row[1]:>4}: NMAE {row[4]:6.2f} %  "
                  f"NRMSE {row[5]:6.2f} %")
    print(f"wrote metrics to {config.out_dir}")


# ---------------------------------------------------------------------------
# continuous
# ---------------------------------------------------------------------------

def cmd_continuous(config: ExperimentConfig) -> None:
    cont = config.continuous
    if not cont.masses:
        raise DataError("continuous script declares no segments")
    torque_model, torque_hash = _load_torque_model(config)
    attention = _load_attention_model(config, torque_hash)
    segments = [
        (f"segment{i}", ObjectSpec(mass, cont.com_tag), cont.segment_length)
        for i, mass in enumerate(cont.masses)
    ]
    print(f"simulating switching trajectory "
          f"({len(segments)} x {cont.segment_length} samples)...")
    trajectory = generate_switching_trajectory(
        config.arm, config.controller, segments,
        config.stage_seed("continuous"),
        waypoint_every=cont.waypoint_every,
    )
    windows = make_inference_windows(trajectory, cont.window, mode="trajectory")
    print(f"tracking force over {len(windows)} windows...")
    track = switching_force_track(
        config.arm, windows, torque_model, attention, cont.filter_width
    )
    g_mag = float(np.linalg.norm(config.arm.gravity))
    rows = []
    for k in range(len(track.raw)):
        end = k + cont.window - 1
        true_mass = trajectory[end].object.mass
        rows.append((end, track.raw[k], track.filtered[k], true_mass,
                     true_mass * g_mag))
    csv_path = config.out_dir / "continuous_force.csv"
    _write_csv(csv_path,
               ["window_end", "force_raw", "force_filtered", "true_mass",
                "true_force"],
               rows, config.config_hash,
               extra_comment=f"window={cont.window} filter={cont.filter_width}")
    svg_path = config.out_dir / "continuous_force.svg"
    _plot_force_track(svg_path, rows)
    print(f"wrote {csv_path} and {svg_path}")


def _plot_force_track(path: Path, rows) -> None:
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "payloadid"
    import matplotlib.pyplot as plt

    steps = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(8, 3.2))
    ax.plot(steps, [r[1] for r in rows], color="0.8", lw=0.8, label="raw")
    ax.plot(steps, [r[2] for r in rows], color="C0", lw=1.6, label="filtered")
    ax.plot(steps, [r[4] for r in rows], color="C3", ls="--", lw=1.2,
            label="true")
    ax.set_xlabel("trajectory sample")
    ax.set_ylabel("vertical force (N)")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="payloadid",
        description="Simulated sensorless payload identification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="experiment YAML file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")

    p = sub.add_parser("gen-data", help="generate training/testing datasets")
    add_common(p)
    p.add_argument("--workers", type=int, default=1,
                   help="parallel simulation workers (default 1)")

    p = sub.add_parser("train", help="train the torque or attention model")
    add_common(p)
    p.add_argument("--which", required=True, choices=("torque", "attention"))

    p = sub.add_parser("identify", help="identify payloads with one method")
    add_common(p)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--repeats", type=int, default=None)

    p = sub.add_parser("eval", help="identify with every method and emit metrics")
    add_common(p)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--repeats", type=int, default=None)

    p = sub.add_parser("continuous", help="switching-force tracking experiment")
    add_common(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, seed_override=args.seed,
                             out_dir_override=args.out)
        if args.command == "gen-data":
            cmd_gen_data(config, workers=args.workers)
        elif args.command == "train":
            cmd_train(config, args.which)
        elif args.command == "identify":
            cmd_identify(config, args.method,
                         args.window or config.ident_window,
                         args.repeats or config.ident_repeats)
        elif args.command == "eval":
            cmd_eval(config,
                     args.window or config.ident_window,
                     args.repeats or config.ident_repeats)
        elif args.command == "continuous":
            cmd_continuous(config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
