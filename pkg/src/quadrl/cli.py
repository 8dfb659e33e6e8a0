"""Command-line entry point.

Workflows: tune-pid (CMA-ES gain search), train (SAC waypoint controller),
eval-waypoint / eval-pickup (seeded evaluation batches with CSV + figure
outputs), and select-best (checkpoint selection by pickup success rate).

Every run directory receives a config snapshot, a manifest with seeds and
schema versions, the delimited outputs, and matplotlib renderings of the
report data (unless --no-figures). Exit codes: 0 success, 1 usage error,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from multiprocessing import get_context

import numpy as np

from . import __version__
from .config import (
    RunConfig,
    default_run_config,
    load_gains,
    load_run_config,
    save_gains,
    save_run_config,
)
from .control import PIDGainSet, REFERENCE_POSE_GAINS, REFERENCE_VELOCITY_GAINS
from .controllers import (
    CascadeWaypointController,
    HoverStubController,
    LearnedWaypointController,
    PosePidWaypointController,
    TeleportStubController,
)
from .envs import (
    SUMMARY_CSV_FIELDS,
    fmt,
    CourseSpec,
    RandomizationSpec,
    WaypointEnv,
    run_payload_course,
    run_waypoint_episode,
    sample_test_params,
    summary_row,
    write_record_csv,
)
from .evaluation import (
    expectation_map,
    run_summary,
    summarize_runs,
    trajectory_heatmap,
    write_aggregate_csv,
    write_expectation_csv,
    write_heatmap_csv,
)
from .sac import SacAgent, SacConfig
from .tuning import (
    CmaEs,
    EvalBatch,
    constrain,
    fitness_pose,
    fitness_velocity,
    pose_search_spec,
    velocity_search_spec,
)

MANIFEST_SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _prepare_run_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path

def _write_manifest(out_dir, command: str, args_ns, config: RunConfig,
                    extra: dict | None = None) -> None:
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "package_version": __version__,
        "command": command,
        "seed": getattr(args_ns, "seed", None),
        "config": config.to_dict(),
        "args": {k: v for k, v in sorted(vars(args_ns).items())
                 if isinstance(v, (int, float, str, bool, type(None)))},
    }
    manifest.update(extra or {})
    tmp = os.path.join(out_dir, "manifest.json.tmp")
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, os.path.join(out_dir, "manifest.json"))
    save_run_config(config, os.path.join(out_dir, "config.yaml"))


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_run_config(args.config)
    return default_run_config()


def _on_off(value: str) -> bool:
    v = value.lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {value!r}")


# --------------------------------------------------------------------- tuning

def _pose_candidate_fitness(payload):
    vec, batch, scaling, sim = payload
    return fitness_pose(PIDGainSet.from_vector(vec), batch, scaling, sim)


def _velocity_candidate_fitness(payload):
    vec, batch, scaling, sim = payload
    return fitness_velocity(PIDGainSet.from_vector(vec), batch, scaling, sim)


def _map_candidates(worker, payloads, jobs: int):
    if jobs <= 1:
        return [worker(p) for p in payloads]
    with get_context("fork").Pool(jobs) as pool:
        return pool.map(worker, payloads)


def cmd_tune_pid(args) -> int:
    config = _load_config(args)
    out_dir = _prepare_run_dir(args.out)
    batch = EvalBatch.create(n=args.envs, seed=args.seed,
                             randomization=config.randomization)
    if args.stack == "pose":
        spec = pose_search_spec(iterations=args.iters, sigma0=args.sigma0)
        worker = _pose_candidate_fitness
    else:
        spec = velocity_search_spec(iterations=args.iters, sigma0=args.sigma0)
        worker = _velocity_candidate_fitness

    es = CmaEs(spec.x0, spec.sigma0, seed=args.seed, population=args.population)
    fitness_path = os.path.join(out_dir, "fitness.csv")
    evaluations = 0
    with open(fitness_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "evaluations", "best", "median", "best_so_far"])
        for iteration in range(args.iters):
            raw = es.ask()
            bounded = [constrain(x, spec) for x in raw]
            payloads = [(vec, batch, config.scaling, config.sim) for vec in bounded]
            fitnesses = _map_candidates(worker, payloads, args.jobs)
            es.tell(fitnesses)
            evaluations += len(fitnesses)
            finite = [f for f in fitnesses if np.isfinite(f)]
            writer.writerow([
                iteration, evaluations,
                fmt(np.min(finite)), fmt(np.median(finite)), fmt(es.best_fitness),
            ])
            fh.flush()
            print(f"iter {iteration + 1}/{args.iters}: best {np.min(finite):.4f} "
                  f"median {np.median(finite):.4f} best-so-far {es.best_fitness:.4f}")

    winner = constrain(es.best_x, spec) if es.best_x is not None else constrain(spec.x0, spec)
    gains = PIDGainSet.from_vector(winner)
    gains_path = os.path.join(out_dir, "gains.yaml")
    save_gains(gains, gains_path, stack=args.stack)
    _write_manifest(out_dir, "tune-pid", args, config, {
        "stack": args.stack,
        "evaluations": evaluations,
        "best_fitness": es.best_fitness,
        "outputs": ["fitness.csv", "gains.yaml"],
    })
    print(f"wrote {gains_path} (fitness {es.best_fitness:.4f})")
    return 0


# ------------------------------------------------------------------- training

TRAINING_CSV_FIELDS = [
    "episode", "return", "steps", "mean_position_error", "final_position_error",
    "mean_step_reward", "entropy", "tau", "outcome", "env_steps",
]


def cmd_train(args) -> int:
    config = _load_config(args)
    out_dir = _prepare_run_dir(args.checkpoint_dir)
    randomization = RandomizationSpec(enabled=args.randomize)
    sac_cfg = SacConfig(
        initial_random_steps=args.init_steps,
        gradient_steps_per_episode=args.grad_steps,
    )
    env = WaypointEnv(
        randomization=randomization,
        sim=config.sim,
        control_hz=args.control_hz,
        max_steps=args.max_steps,
        action_mode="motor" if args.controller == "learned" else "velocity",
        velocity_gains=load_gains(args.gains) if args.gains else REFERENCE_VELOCITY_GAINS,
        seed=args.seed,
    )
    agent = SacAgent(sac_cfg, seed=args.seed)

    rows = []
    csv_path = os.path.join(out_dir, "training.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAINING_CSV_FIELDS)
        for episode in range(args.episodes):
            metrics = agent.train_episode(env)
            row = {"episode": episode, **metrics}
            rows.append(row)
            writer.writerow([
                episode, fmt(metrics["return"]), metrics["steps"],
                fmt(metrics["mean_position_error"]), fmt(metrics["final_position_error"]),
                fmt(metrics["mean_step_reward"]), fmt(metrics["entropy"]),
                fmt(metrics["tau"]), metrics["outcome"], metrics["env_steps"],
            ])
            fh.flush()
            if args.checkpoint_every and (episode + 1) % args.checkpoint_every == 0:
                agent.save(os.path.join(out_dir, f"checkpoint_{episode + 1:06d}.bin"),
                           meta={"episode": episode + 1})
            if args.verbose and (episode + 1) % 10 == 0:
                print(f"episode {episode + 1}/{args.episodes}: return {metrics['return']:.1f} "
                      f"mean_err {metrics['mean_position_error']:.3f} tau {metrics['tau']:.4f}")

    final_path = os.path.join(out_dir, "checkpoint_final.bin")
    agent.save(final_path, meta={"episode": args.episodes})
    extra = {
        "episodes": args.episodes,
        "checkpoint": {"path": "checkpoint_final.bin", "sha256": _sha256(final_path)},
        "outputs": ["training.csv", "checkpoint_final.bin"],
    }
    if args.figures:
        from .figures import save_training_curves

        save_training_curves(rows, os.path.join(out_dir, "training_curves.png"))
        extra["outputs"].append("training_curves.png")
    _write_manifest(out_dir, "train", args, config, extra)
    print(f"wrote {final_path}")
    return 0


# ----------------------------------------------------------------- evaluation

def build_controller(kind: str, config: RunConfig, gains_path=None,
                     checkpoint_path=None):
    if kind == "pose-pid":
        gains = load_gains(gains_path) if gains_path else REFERENCE_POSE_GAINS
        return PosePidWaypointController(gains, config.scaling, config.sim)
    if kind == "learned":
        if not checkpoint_path:
            raise UsageError("--checkpoint is required for the learned controller")
        agent = SacAgent.load(checkpoint_path)
        return LearnedWaypointController(agent)
    if kind == "cascade":
        if not checkpoint_path:
            raise UsageError("--checkpoint is required for the cascade controller")
        agent = SacAgent.load(checkpoint_path)
        gains = load_gains(gains_path) if gains_path else REFERENCE_VELOCITY_GAINS
        return CascadeWaypointController(agent, gains, config.scaling, config.sim)
    if kind == "teleport":
        return TeleportStubController()
    if kind == "hover":
        return HoverStubController()
    raise UsageError(f"unknown controller kind {kind!r}")


def _episode_seed(master: int, index: int) -> int:
    return master * 1_000_000 + index


def _run_waypoint_case(payload):
    controller, params, seed, disturbances, sim = payload
    return run_waypoint_episode(controller, params, disturbances, sim, seed=seed)


def _run_pickup_case(payload):
    controller, params, seed, disturbances, sim, course = payload
    return run_payload_course(controller, params, course, disturbances, sim, seed=seed)


def _evaluate_batch(args, config: RunConfig, task: str) -> int:
    out_dir = _prepare_run_dir(args.out)
    controller = build_controller(args.controller, config,
                                  gains_path=args.gains,
                                  checkpoint_path=args.checkpoint)
    from .dynamics import DisturbanceConfig

    disturbances = DisturbanceConfig(
        sensor_noise_std=0.05 if args.noise else 0.0,
        motor_filter_enabled=args.motor_filter,
    )
    course = CourseSpec()
    records = []
    results = []
    summaries = []
    attempts = 0
    successes = 0
    max_attempts = args.max_attempts or 10 * args.successes
    records_dir = os.path.join(out_dir, "records")
    if args.save_records:
        os.makedirs(records_dir, exist_ok=True)

    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_CSV_FIELDS + [
            "settling_time_s", "longitudinal_error_m", "vertical_error_m", "course_time_s",
        ])
        while successes < args.successes and attempts < max_attempts:
            batch_n = min(args.successes - successes + 3,
                          max_attempts - attempts) if args.jobs > 1 else 1
            payloads = []
            for b in range(batch_n):
                idx = attempts + b
                seed = _episode_seed(args.seed, idx)
                vrng = np.random.default_rng(np.random.SeedSequence([args.seed, 77, idx]))
                if args.fixed_vehicle:
                    params = config.vehicle
                else:
                    params = sample_test_params(vrng, task=task)
                if task == "pickup":
                    payloads.append((controller, params, seed, disturbances, config.sim, course))
                else:
                    payloads.append((controller, params, seed, disturbances, config.sim))
            worker = _run_pickup_case if task == "pickup" else _run_waypoint_case
            out = _map_candidates(worker, payloads, args.jobs)
            for record in out:
                idx = attempts
                attempts += 1
                records.append(record)
                results.append((record.params, record.success))
                if record.success:
                    successes += 1
                s = run_summary(record)
                summaries.append(s)
                writer.writerow(summary_row(record, idx) + [
                    fmt(s.settling_time_s), fmt(s.longitudinal_error_m),
                    fmt(s.vertical_error_m), fmt(s.course_time_s),
                ])
                if args.save_records:
                    write_record_csv(record, os.path.join(records_dir, f"episode_{idx:05d}.csv"))
                if successes >= args.successes or attempts >= max_attempts:
                    break

    aggregate = summarize_runs(summaries)
    aggregate["attempts"] = attempts
    aggregate["success_rate"] = successes / attempts if attempts else 0.0
    write_aggregate_csv(aggregate, os.path.join(out_dir, "aggregate.csv"))

    outputs = ["summary.csv", "aggregate.csv"]
    if not args.fixed_vehicle:
        emap = expectation_map(results, task=task)
        write_expectation_csv(emap, os.path.join(out_dir, "expectation_map.csv"))
        outputs.append("expectation_map.csv")
        if args.figures:
            from .figures import save_expectation_figure

            save_expectation_figure(emap, os.path.join(out_dir, "expectation_map.png"),
                                    title=f"{args.controller} {task} expectation")
            outputs.append("expectation_map.png")
    if task == "pickup":
        succeeded = [r for r in records if r.success]
        if succeeded:
            for plane in ("XY", "XZ"):
                counts = trajectory_heatmap(succeeded, plane=plane,
                                            bounds=(-course.boundary_half_width,
                                                    course.boundary_half_width))
                write_heatmap_csv(counts, os.path.join(out_dir, f"heatmap_{plane.lower()}.csv"))
                outputs.append(f"heatmap_{plane.lower()}.csv")
                if args.figures:
                    from .figures import save_heatmap_figure

                    save_heatmap_figure(
                        counts, (-course.boundary_half_width, course.boundary_half_width),
                        os.path.join(out_dir, f"heatmap_{plane.lower()}.png"), plane=plane,
                        title=f"{args.controller} pickup routes ({plane})",
                    )
                    outputs.append(f"heatmap_{plane.lower()}.png")

    extra = {
        "task": task,
        "controller": args.controller,
        "attempts": attempts,
        "successes": successes,
        "outputs": outputs,
    }
    if args.checkpoint:
        extra["checkpoint"] = {"path": args.checkpoint, "sha256": _sha256(args.checkpoint)}
    _write_manifest(out_dir, f"eval-{task}", args, config, extra)
    print(f"{task}: {successes}/{attempts} successes "
          f"(rate {extra['successes'] / max(attempts, 1):.3f}); outputs in {out_dir}")
    return 0


def cmd_eval_waypoint(args) -> int:
    return _evaluate_batch(args, _load_config(args), "waypoint")


def cmd_eval_pickup(args) -> int:
    return _evaluate_batch(args, _load_config(args), "pickup")


def cmd_select_best(args) -> int:
    config = _load_config(args)
    out_dir = _prepare_run_dir(args.out)
    from .dynamics import DisturbanceConfig

    disturbances = DisturbanceConfig(
        sensor_noise_std=0.05 if args.noise else 0.0,
        motor_filter_enabled=args.motor_filter,
    )
    course = CourseSpec()
    rows = []
    best = None
    for ck in args.checkpoints:
        controller = build_controller(args.controller, config, gains_path=args.gains,
                                      checkpoint_path=ck)
        successes = 0
        for idx in range(args.samples):
            vrng = np.random.default_rng(np.random.SeedSequence([args.seed, 77, idx]))
            params = sample_test_params(vrng, task="pickup")
            record = run_payload_course(controller, params, course, disturbances,
                                        config.sim, seed=_episode_seed(args.seed, idx))
            successes += int(record.success)
        rate = successes / args.samples
        rows.append((ck, successes, rate))
        print(f"{ck}: {successes}/{args.samples} ({rate:.3f})")
        if best is None or rate > best[2]:
            best = (ck, successes, rate)

    with open(os.path.join(out_dir, "selection.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["checkpoint", "successes", "success_rate"])
        for ck, n, rate in rows:
            writer.writerow([ck, n, fmt(rate)])
    _write_manifest(out_dir, "select-best", args, config, {
        "best_checkpoint": best[0], "best_rate": best[2],
        "outputs": ["selection.csv"],
    })
    print(f"best: {best[0]} ({best[2]:.3f})")
    return 0


# ------------------------------------------------------------------ arg wiring

def _add_shared(p):
    p.add_argument("--config", help="YAML run configuration file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quadrl",
        description="Quadrotor waypoint-control toolkit: simulate, tune, train, evaluate.",
    )
    parser.add_argument("--version", action="version", version=f"quadrl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tune-pid", help="CMA-ES search over PID gains")
    _add_shared(p)
    p.add_argument("--stack", choices=["pose", "velocity"], required=True)
    p.add_argument("--iters", type=int, default=25,
                   help="search iterations (paper-scale: 1000)")
    p.add_argument("--envs", type=int, default=100,
                   help="frozen evaluation environments per candidate")
    p.add_argument("--sigma0", type=float, default=2.0)
    p.add_argument("--population", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune_pid)

    p = sub.add_parser("train", help="train a SAC waypoint controller")
    _add_shared(p)
    p.add_argument("--env", choices=["waypoint"], default="waypoint")
    p.add_argument("--controller", choices=["learned", "cascade"], default="learned")
    p.add_argument("--randomize", type=_on_off, default=True, metavar="on|off")
    p.add_argument("--episodes", type=int, default=300,
                   help="training episodes (paper-scale: 3000 x 10 runs)")
    p.add_argument("--init-steps", type=int, default=200, dest="init_steps",
                   help="uniform-random warm-up env steps (paper-scale: 10000)")
    p.add_argument("--grad-steps", type=int, default=128, dest="grad_steps")
    p.add_argument("--control-hz", type=int, default=20, dest="control_hz")
    p.add_argument("--max-steps", type=int, default=1200, dest="max_steps")
    p.add_argument("--gains", help="velocity gain file for the cascade stack")
    p.add_argument("--checkpoint-dir", required=True, dest="checkpoint_dir")
    p.add_argument("--checkpoint-every", type=int, default=100, dest="checkpoint_every")
    p.add_argument("--figures", dest="figures", action="store_true", default=True)
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    for name, fn in (("eval-waypoint", cmd_eval_waypoint), ("eval-pickup", cmd_eval_pickup)):
        p = sub.add_parser(name, help=f"run the {name.split('-')[1]} evaluation batch")
        _add_shared(p)
        p.add_argument("--controller",
                       choices=["pose-pid", "learned", "cascade", "teleport", "hover"],
                       required=True)
        p.add_argument("--gains", help="gain file (pose-pid / cascade)")
        p.add_argument("--checkpoint", help="policy checkpoint (learned / cascade)")
        p.add_argument("--successes", type=int, default=100,
                       help="stop after this many successful samples")
        p.add_argument("--max-attempts", type=int, default=None, dest="max_attempts")
        p.add_argument("--noise", type=_on_off, default=(name == "eval-pickup"),
                       metavar="on|off", help="sensor noise (std 0.05)")
        p.add_argument("--motor-filter", type=_on_off, default=(name == "eval-pickup"),
                       dest="motor_filter", metavar="on|off")
        p.add_argument("--fixed-vehicle", action="store_true", dest="fixed_vehicle",
                       help="evaluate the configured vehicle instead of sampling")
        p.add_argument("--save-records", dest="save_records", action="store_true", default=True)
        p.add_argument("--no-save-records", dest="save_records", action="store_false")
        p.add_argument("--figures", dest="figures", action="store_true", default=True)
        p.add_argument("--no-figures", dest="figures", action="store_false")
        p.add_argument("--out", required=True)
        p.set_defaults(func=fn)

    p = sub.add_parser("select-best", help="pick the checkpoint with the best pickup success rate")
    _add_shared(p)
    p.add_argument("--controller", choices=["learned", "cascade"], default="learned")
    p.add_argument("--gains")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--noise", type=_on_off, default=True, metavar="on|off")
    p.add_argument("--motor-filter", type=_on_off, default=True, dest="motor_filter",
                   metavar="on|off")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select_best)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
