"""Command-line entry point: synth, estimate, eval, and compare subcommands.

Exit codes: 0 success, 2 validation error, 3 solver non-convergence,
4 I/O error. Flag values override manifest/spec-file values, which override
the built-in defaults. The PROPRIO_OUT_ROOT environment variable supplies
the default output root when --out is omitted.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import estimator, logio, metrics, robot, synth
from .contact import segment_phases
from .errors import GraphError, ValidationError
from .factor_graph import LMConfig

OUT_ROOT_ENV = "PROPRIO_OUT_ROOT"

IMPROVEMENT_FLOOR = 1e-6


def _resolve_out(arg: str | None, default_name: str) -> str:
    if arg:
        return arg
    root = os.environ.get(OUT_ROOT_ENV, ".")
    return os.path.join(root, default_name)


def _read_ini(path: str) -> configparser.ConfigParser:
    if not os.path.exists(path):
        raise FileNotFoundError(f"file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)
    return parser


def load_model(path: str, feet: list[str] | None = None,
               foot_type: str = "point") -> robot.RobotModel:
    if not os.path.exists(path):
        raise FileNotFoundError(f"model file not found: {path}")
    with open(path) as fh:
        text = fh.read()
    if feet is None:
        probe = robot.parse_urdf(text, [], foot_type)
        feet = [l for l in probe.links if l.endswith("_foot")]
        if not feet:
            raise ValidationError(
                f"{path}: no *_foot links found; pass foot links explicitly")
    return robot.parse_urdf(text, feet, foot_type)


def _section(parser: configparser.ConfigParser, name: str) -> dict:
    return dict(parser[name]) if parser.has_section(name) else {}


def _estimator_config(entries: dict, log, mode: str) -> estimator.EstimatorConfig:
    kwargs = {"mode": mode, "keyframe_rate": log.keyframe_rate}
    for key in ("fk_sigma_rot", "fk_sigma_trans", "cp_sigma", "cp_sigma_rot",
                "prior_pose_sigma", "prior_vel_sigma", "prior_bias_sigma",
                "baseline_sigma_rot", "baseline_sigma_trans", "keyframe_rate"):
        if key in entries:
            kwargs[key] = float(entries[key])
    if "bias_chain" in entries:
        kwargs["bias_chain"] = str(entries["bias_chain"]).lower() in ("1", "true", "yes")
    if "baseline_composed_sigma" in entries:
        kwargs["baseline_composed_sigma"] = (
            str(entries["baseline_composed_sigma"]).lower() in ("1", "true", "yes"))
    imu_kwargs = {}
    for key in ("gyro_density", "accel_density", "gyro_bias_rw", "accel_bias_rw"):
        if key in entries:
            imu_kwargs[key] = float(entries[key])
    if imu_kwargs:
        kwargs["imu_noise"] = replace(estimator.ImuNoiseParams(), **imu_kwargs)
    lm_kwargs = {}
    for key in ("rtol", "xtol"):
        if key in entries:
            lm_kwargs[key] = float(entries[key])
    if "max_iterations" in entries:
        lm_kwargs["max_iterations"] = int(entries["max_iterations"])
    if lm_kwargs:
        kwargs["lm"] = LMConfig(**lm_kwargs)
    return estimator.EstimatorConfig(**kwargs)


def _config_keyvalues(cfg: estimator.EstimatorConfig) -> dict:
    out = {}
    for name in ("mode", "keyframe_rate", "fk_sigma_rot", "fk_sigma_trans",
                 "cp_sigma", "cp_sigma_rot", "prior_pose_sigma", "prior_vel_sigma",
                 "prior_bias_sigma", "bias_chain", "baseline_sigma_rot",
                 "baseline_sigma_trans", "baseline_composed_sigma"):
        out[name] = getattr(cfg, name)
    out["gyro_density"] = cfg.imu_noise.gyro_density
    out["accel_density"] = cfg.imu_noise.accel_density
    out["lm_rtol"] = cfg.lm.rtol
    out["lm_xtol"] = cfg.lm.xtol
    out["lm_max_iterations"] = cfg.lm.max_iterations
    return out


def cmd_synth(args) -> int:
    parser = _read_ini(args.spec)
    gait_entries = _section(parser, "gait")
    if args.seed is not None:
        gait_entries["seed"] = str(args.seed)
    spec = logio.gait_spec_from_mapping(gait_entries)
    noise = logio.noise_from_mapping(_section(parser, "noise"))

    robot_entries = _section(parser, "robot")
    if "model" not in robot_entries:
        raise ValidationError(f"{args.spec}: missing model path in [robot] section")
    model_path = robot_entries["model"]
    if not os.path.isabs(model_path):
        model_path = os.path.join(os.path.dirname(os.path.abspath(args.spec)), model_path)
    feet = robot_entries.get("feet")
    feet = feet.split() if feet else None
    model = load_model(model_path, feet, robot_entries.get("foot_type", "point"))

    keyframe_rate = float(robot_entries.get("keyframe_rate",
                                            100.0 if spec.gait == "walk" else 50.0))
    imu_rate = float(robot_entries.get("imu_rate", 200.0))
    log = synth.generate_log(spec, model, noise, imu_rate, keyframe_rate)

    out_dir = _resolve_out(args.out, "log")
    logio.write_log(log, out_dir)

    phases = segment_phases(log.sample_times, log.contact_flags, log.kf_times)
    per_leg = [sum(1 for p in phases if p.leg == leg) for leg in range(model.num_legs)]
    print(f"wrote {out_dir}: duration {log.duration:g}s, "
          f"{log.num_keyframes} keyframes, phases per leg {per_leg}")
    return 0


def _write_estimate(out_dir: str, result, cfg, log):
    os.makedirs(out_dir, exist_ok=True)
    logio.write_tum(os.path.join(out_dir, "estimate.txt"), result.times, result.poses())
    report = {
        "converged": str(result.converged).lower(),
        "status": result.report.status,
        "final_objective": result.final_objective,
        "accepted_steps": result.report.accepted_steps,
    }
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        for k, v in report.items():
            v = f"{v:.17g}" if isinstance(v, float) else v
            fh.write(f"{k}={v}\n")
        fh.write("# iteration lambda objective\n")
        fh.write(result.report.to_text())
    cfg_entries = _config_keyvalues(cfg)
    cfg_entries["log_duration"] = log.duration
    logio.write_keyvalues(os.path.join(out_dir, "config.txt"), cfg_entries)


def cmd_estimate(args) -> int:
    log = logio.read_log(args.log_dir)
    model = load_model(args.model, args.feet.split(",") if args.feet else None,
                       args.foot_type)
    entries = {}
    if args.config:
        entries.update(_section(_read_ini(args.config), "estimator"))
    if args.keyframe_rate is not None:
        entries["keyframe_rate"] = args.keyframe_rate
    cfg = _estimator_config(entries, log, args.mode)
    result = estimator.estimate(log, model, cfg)
    out_dir = _resolve_out(args.out, f"estimate_{args.mode}")
    _write_estimate(out_dir, result, cfg, log)
    print(f"wrote {out_dir}: status {result.report.status}, "
          f"final objective {result.final_objective:.6e}")
    return 0 if result.converged else 3


def cmd_eval(args) -> int:
    ref_times, ref_poses = logio.read_tum(args.reference)
    est_times, est_poses = logio.read_tum(args.estimate)
    report = metrics.evaluate(metrics.Trajectory(ref_times, ref_poses),
                              metrics.Trajectory(est_times, est_poses),
                              rpe_delta=args.rpe_delta,
                              translation_only=args.translation_only)
    entries = report.to_keyvalues()
    for k, v in entries.items():
        print(f"{k}={v:.17g}" if isinstance(v, float) else f"{k}={v}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        logio.write_keyvalues(os.path.join(args.out, "metrics.txt"), entries)
        np.savetxt(os.path.join(args.out, "ape_series.txt"), report.ape.values,
                   fmt="%.17g")
        np.savetxt(os.path.join(args.out, "rpe_series.txt"), report.rpe.values,
                   fmt="%.17g")
    return 0


def _compare_cell(payload):
    """One (shape, seed) cell: synthesize once, run both modes, evaluate both."""
    (shape, seed, gait_entries, noise_entries, est_entries, model_path,
     feet, foot_type, imu_rate, keyframe_rate, bias_sigmas, out_dir) = payload
    model = load_model(model_path, feet, foot_type)
    gait_entries = dict(gait_entries, shape=shape, seed=str(seed))
    spec = logio.gait_spec_from_mapping(gait_entries)
    noise = logio.noise_from_mapping(noise_entries)
    gyro_sig, accel_sig = bias_sigmas
    if gyro_sig > 0 or accel_sig > 0:
        rng = np.random.default_rng(seed + 10_000)
        noise = replace(noise,
                        gyro_bias=rng.standard_normal(3) * gyro_sig,
                        accel_bias=rng.standard_normal(3) * accel_sig)

    log = synth.generate_log(spec, model, noise, imu_rate, keyframe_rate)
    cell_dir = os.path.join(out_dir, shape.replace("-", ""), f"seed{seed}")
    logio.write_log(log, os.path.join(cell_dir, "log"))

    reference = metrics.Trajectory(log.kf_times,
                                   [log.gt_pose(k) for k in range(log.num_keyframes)])
    records = []
    for mode in ("baseline", "proposed"):
        cfg = _estimator_config(est_entries, log, mode)
        result = estimator.estimate(log, model, cfg)
        _write_estimate(os.path.join(cell_dir, mode), result, cfg, log)
        rep = metrics.evaluate(reference,
                               metrics.Trajectory(result.times, result.poses()))
        records.append((shape, seed, mode, rep.ape.rmse, rep.rpe.rmse,
                        result.report.status))
    return records


def cmd_compare(args) -> int:
    parser = _read_ini(args.manifest)
    exp = _section(parser, "experiment")
    if "model" not in exp:
        raise ValidationError(f"{args.manifest}: missing model in [experiment]")
    model_path = exp["model"]
    if not os.path.isabs(model_path):
        model_path = os.path.join(os.path.dirname(os.path.abspath(args.manifest)),
                                  model_path)
    seeds = [int(s) for s in exp.get("seeds", "0").split()]
    if not seeds:
        raise ValidationError("manifest must list at least one seed")
    shapes = exp.get("shapes", "straight").split()
    feet = exp.get("feet")
    feet = feet.split() if feet else None
    foot_type = exp.get("foot_type", "point")
    imu_rate = float(exp.get("imu_rate", 200.0))
    keyframe_rate = float(exp.get("keyframe_rate", 50.0))
    bias_sigmas = (float(exp.get("gyro_bias_sigma", 0.0)),
                   float(exp.get("accel_bias_sigma", 0.0)))
    out_dir = _resolve_out(args.out or exp.get("out"), "compare")
    os.makedirs(out_dir, exist_ok=True)

    load_model(model_path, feet, foot_type)  # fail fast on a bad model

    gait_entries = _section(parser, "gait")
    noise_entries = _section(parser, "noise")
    est_entries = _section(parser, "estimator")

    payloads = [(shape, seed, gait_entries, noise_entries, est_entries,
                 model_path, feet, foot_type, imu_rate, keyframe_rate,
                 bias_sigmas, out_dir)
                for shape in shapes for seed in seeds]

    records = []
    failures = []
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [(p, pool.submit(_compare_cell, p)) for p in payloads]
            for payload, fut in futures:
                try:
                    records.extend(fut.result())
                except Exception as e:  # record and continue
                    failures.append((payload[0], payload[1], str(e)))
    else:
        for payload in payloads:
            try:
                records.extend(_compare_cell(payload))
            except Exception as e:
                failures.append((payload[0], payload[1], str(e)))

    records.sort(key=lambda r: (shapes.index(r[0]), r[1], r[2]))
    with open(os.path.join(out_dir, "series.txt"), "w") as fh:
        fh.write("# shape seed mode ape_rmse rpe_rmse status\n")
        for shape, seed, mode, a, r, status in records:
            fh.write(f"{shape} {seed} {mode} {a:.17g} {r:.17g} {status}\n")

    lines = ["# trajectory base_ape base_rpe prop_ape prop_rpe improvement_pct"]
    medians = {}
    for shape in shapes:
        cells = {}
        for mode in ("baseline", "proposed"):
            apes = [a for s, _, m, a, _, _ in records if s == shape and m == mode]
            rpes = [r for s, _, m, _, r, _ in records if s == shape and m == mode]
            if not apes:
                cells[mode] = None
                continue
            cells[mode] = (float(np.median(apes)), float(np.median(rpes)))
        if cells.get("baseline") is None or cells.get("proposed") is None:
            lines.append(f"{shape} error error error error n/a")
            continue
        (ba, br), (pa, pr) = cells["baseline"], cells["proposed"]
        medians[shape] = {"baseline_ape": ba, "baseline_rpe": br,
                          "proposed_ape": pa, "proposed_rpe": pr}
        if ba < IMPROVEMENT_FLOOR or br < IMPROVEMENT_FLOOR:
            imp = "n/a"
        else:
            # mean of the APE and RPE percentage improvements
            imp = f"{50.0 * ((ba - pa) / ba + (br - pr) / br):.2f}"
        lines.append(f"{shape} {ba:.6g} {br:.6g} {pa:.6g} {pr:.6g} {imp}")
    table = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(table)
        for shape, seed, err in failures:
            fh.write(f"# failed {shape} seed={seed}: {err}\n")

    med_entries = {}
    for shape, vals in medians.items():
        for key, v in vals.items():
            med_entries[f"{shape}.{key}"] = v
    logio.write_keyvalues(os.path.join(out_dir, "medians.txt"), med_entries)

    resolved = {"model": model_path, "seeds": " ".join(str(s) for s in seeds),
                "shapes": " ".join(shapes), "imu_rate": imu_rate,
                "keyframe_rate": keyframe_rate,
                "gyro_bias_sigma": bias_sigmas[0], "accel_bias_sigma": bias_sigmas[1]}
    for section, entries in (("gait", gait_entries), ("noise", noise_entries),
                             ("estimator", est_entries)):
        for k, v in entries.items():
            resolved[f"{section}.{k}"] = v
    logio.write_keyvalues(os.path.join(out_dir, "config.txt"), resolved)

    print(table, end="")
    if failures:
        for shape, seed, err in failures:
            print(f"failed: {shape} seed={seed}: {err}", file=sys.stderr)
        return 3
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proprio",
        description="Proprioceptive legged-robot state estimation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic gait log")
    p.add_argument("spec", help="gait spec file ([robot]/[gait]/[noise] sections)")
    p.add_argument("--out", help="output log directory")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("estimate", help="run an estimator over a log directory")
    p.add_argument("log_dir")
    p.add_argument("--model", required=True, help="robot description file")
    p.add_argument("--mode", choices=("proposed", "baseline"), default="proposed")
    p.add_argument("--feet", help="comma-separated foot link names")
    p.add_argument("--foot-type", choices=("point", "flat"), default="point")
    p.add_argument("--keyframe-rate", type=float)
    p.add_argument("--config", help="INI file with an [estimator] section")
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("eval", help="APE/RPE between two TUM trajectory files")
    p.add_argument("reference")
    p.add_argument("estimate")
    p.add_argument("--rpe-delta", type=float, default=1.0)
    p.add_argument("--translation-only", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="baseline-vs-proposed sweep from a manifest")
    p.add_argument("manifest")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, GraphError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
