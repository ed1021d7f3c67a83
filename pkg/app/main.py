"""
Command-line entry point: train, evaluate, simulate and compare.

Every output file carries the config hash and master seed in its header so a result can be
traced back to the documents that produced it.
"""
from pathlib import Path
from typing import Optional, Sequence
import argparse
import logging
import os
import sys

from app.core.atmosphere import wind_setting
from app.config import (config_hash, dump_config, load_airframe_config, load_evaluation_config,
                        load_training_config, settings)
from app.errors import CheckpointError, ConfigError, TrainingDivergedError
from app.models import (AirframeConfig, EvaluationConfig, RunConfig, TrainingConfig,
                        TurbulenceSeverity)
from app.services import evaluation, ppo
from app.services.environment import AttitudeControlEnv
from app.services.neuralnet import PolicyParameters, load_checkpoint
from app.utils.io import ensure_dir, write_csv, write_json
from app.utils.seeding import derive_seed
from app.utils.version_check import verify_compatibility

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_DIVERGED = 4

SETTING_CHOICES = [s.value for s in TurbulenceSeverity] + ["all"]


def setup_logging(level: Optional[str] = None, log_dir: Optional[str] = None) -> None:
    log_dir = log_dir or settings.LOG_DIR
    os.makedirs(log_dir, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, (level or settings.LOG_LEVEL).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.StreamHandler(),
            logging.FileHandler(os.path.join(log_dir, 'fixedwing_rl.log'), mode='a')
        ]
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fixedwing-rl",
                                     description="Fixed-wing attitude control: PPO training and PID baseline")
    parser.add_argument("--log-level", default=None, help="Override FWRL_LOG_LEVEL")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--airframe", default=None, help="Airframe YAML (defaults to the built-in X8 model)")
        p.add_argument("--seed", type=int, default=0, help="Master seed")
        p.add_argument("--out", default=None, help="Output directory")

    train = sub.add_parser("train", help="Train a policy with PPO")
    common(train)
    train.add_argument("--config", default=None, help="Training YAML")
    train.add_argument("--budget", type=int, default=None, help="Environment steps (overrides the config)")
    train.add_argument("--backend", choices=["sync", "subprocess"], default=None)

    evaluate = sub.add_parser("evaluate", help="Run the scenario battery for one controller")
    common(evaluate)
    evaluate.add_argument("--config", default=None, help="Evaluation YAML")
    evaluate.add_argument("--controller", choices=["rl", "pid"], default="pid")
    evaluate.add_argument("--checkpoint", default=None, help="Policy checkpoint (.npz) for --controller rl")
    evaluate.add_argument("--settings", nargs="+", choices=SETTING_CHOICES, default=None)
    evaluate.add_argument("--episodes", type=int, default=None, help="Scenarios per setting")
    evaluate.add_argument("--workers", type=int, default=None)
    evaluate.add_argument("--traces", action="store_true", help="Also write one trace CSV per episode")

    compare = sub.add_parser("compare", help="Evaluate the policy and the PID baseline on identical scenarios")
    common(compare)
    compare.add_argument("--config", default=None, help="Evaluation YAML")
    compare.add_argument("--checkpoint", required=True)
    compare.add_argument("--settings", nargs="+", choices=SETTING_CHOICES, default=None)
    compare.add_argument("--episodes", type=int, default=None)
    compare.add_argument("--workers", type=int, default=None)

    simulate = sub.add_parser("simulate", help="Fly a setpoint schedule and write the full trace")
    common(simulate)
    simulate.add_argument("--config", default=None, help="Evaluation YAML")
    simulate.add_argument("--schedule", default=None, help="Setpoint schedule CSV")
    simulate.add_argument("--controller", choices=["rl", "pid"], default="pid")
    simulate.add_argument("--checkpoint", default=None)
    simulate.add_argument("--settings", nargs=1, choices=[s.value for s in TurbulenceSeverity], default=None,
                          help="Wind setting for the run")
    return parser


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    settings_arg = getattr(args, "settings", None)
    return RunConfig(
        subcommand=args.subcommand,
        airframe_path=args.airframe,
        training_path=args.config if args.subcommand == "train" else None,
        evaluation_path=args.config if args.subcommand != "train" else None,
        checkpoint_path=getattr(args, "checkpoint", None),
        schedule_path=getattr(args, "schedule", None),
        controller=getattr(args, "controller", "pid"),
        settings=evaluation.parse_settings(settings_arg) if settings_arg else [TurbulenceSeverity.NONE],
        seed=args.seed,
        output_dir=args.out or os.path.join(settings.OUTPUT_DIR, args.subcommand),
        budget=getattr(args, "budget", None),
        episodes=getattr(args, "episodes", None),
    )


def _load_policy(path: Optional[str], env: AttitudeControlEnv) -> PolicyParameters:
    if path is None:
        raise CheckpointError("the rl controller needs --checkpoint")
    policy = load_checkpoint(path)
    obs_dim = int(env.observation_space.shape[0])
    if policy.spec.input_dim != obs_dim:
        raise CheckpointError(
            f"checkpoint expects {policy.spec.input_dim} observation inputs but the configured "
            f"environment produces {obs_dim}: {path}")
    return policy


def _controller_spec(kind: str, cfg: EvaluationConfig, airframe: AirframeConfig,
                     checkpoint: Optional[str]) -> evaluation.ControllerSpec:
    if kind == "pid":
        return evaluation.ControllerSpec("pid", gains=cfg.pid)
    env = evaluation.make_eval_env(airframe, cfg)
    try:
        policy = _load_policy(checkpoint, env)
    finally:
        env.close()
    return evaluation.ControllerSpec("rl", policy=policy)


# ---------------------------------------------------------------- subcommands

def train_cmd(run: RunConfig, backend: Optional[str] = None) -> Path:
    airframe = load_airframe_config(run.airframe_path)
    cfg: TrainingConfig = load_training_config(run.training_path)
    out_dir = ensure_dir(run.output_dir)
    run_hash = config_hash(airframe, cfg)
    dump_config(airframe, out_dir / "airframe.yaml")
    dump_config(cfg, out_dir / "training.yaml")

    def env_factory() -> AttitudeControlEnv:
        return AttitudeControlEnv(airframe, cfg.environment)

    result = ppo.train(env_factory, cfg, seed=run.seed, out_dir=out_dir, budget=run.budget,
                       backend=backend, run_hash=run_hash)
    write_json({
        "config_hash": run_hash,
        "seed": run.seed,
        "steps": result.policy.steps,
        "updates": len(result.log),
        "checkpoints": [str(p) for p in result.checkpoints],
        "final_mean_reward": result.log[-1]["mean_reward"] if result.log else None,
    }, out_dir / "summary.json")
    logger.info(f"Training artifacts written to {out_dir}")
    return out_dir


def _write_battery(battery: evaluation.BatteryResult, out_dir: Path, run_hash: str, seed: int,
                   prefix: str) -> None:
    write_csv(battery.episodes, out_dir / f"{prefix}_episodes.csv", run_hash, seed)
    frame = battery.aggregate_frame()
    write_csv(frame, out_dir / f"{prefix}_aggregate.csv", run_hash, seed)
    for _, row in frame.iterrows():
        write_csv(frame[frame["setting"] == row["setting"]], out_dir / f"{prefix}_{row['setting']}.csv",
                  run_hash, seed)


def evaluate_cmd(run: RunConfig, workers: Optional[int] = None, traces: bool = False) -> Path:
    airframe = load_airframe_config(run.airframe_path)
    cfg = load_evaluation_config(run.evaluation_path)
    out_dir = ensure_dir(run.output_dir)
    run_hash = config_hash(airframe, cfg)
    spec = _controller_spec(run.controller, cfg, airframe, run.checkpoint_path)

    battery = evaluation.run_battery(
        spec, cfg, airframe, settings=run.settings, seed=run.seed,
        workers=workers or settings.NUM_WORKERS, episodes=run.episodes,
        traces_dir=out_dir / "traces" if traces else None)
    _write_battery(battery, out_dir, run_hash, run.seed, run.controller)
    write_json({"config_hash": run_hash, "seed": run.seed, "controller": run.controller,
                "aggregate": [row.model_dump(mode="json") for row in battery.aggregate]},
               out_dir / f"{run.controller}_summary.json")
    logger.info(f"Evaluation tables written to {out_dir}")
    return out_dir


def compare_cmd(run: RunConfig, workers: Optional[int] = None) -> Path:
    airframe = load_airframe_config(run.airframe_path)
    cfg = load_evaluation_config(run.evaluation_path)
    out_dir = ensure_dir(run.output_dir)
    run_hash = config_hash(airframe, cfg)
    workers = workers or settings.NUM_WORKERS

    results = {}
    for kind in ("rl", "pid"):
        spec = _controller_spec(kind, cfg, airframe, run.checkpoint_path)
        results[kind] = evaluation.run_battery(spec, cfg, airframe, settings=run.settings, seed=run.seed,
                                               workers=workers, episodes=run.episodes)
        _write_battery(results[kind], out_dir, run_hash, run.seed, kind)
    paired = evaluation.paired_comparison(results["rl"], results["pid"])
    write_csv(paired, out_dir / "comparison.csv", run_hash, run.seed)
    write_json({"config_hash": run_hash, "seed": run.seed,
                "aggregate": {kind: [row.model_dump(mode="json") for row in result.aggregate]
                              for kind, result in results.items()}},
               out_dir / "comparison_summary.json")
    logger.info(f"Paired comparison written to {out_dir}")
    return out_dir


def simulate_cmd(run: RunConfig) -> Path:
    airframe = load_airframe_config(run.airframe_path)
    cfg = load_evaluation_config(run.evaluation_path)
    out_dir = ensure_dir(run.output_dir)
    run_hash = config_hash(airframe, cfg)

    if run.schedule_path is not None:
        schedule = evaluation.load_schedule(run.schedule_path, cfg)
    else:
        schedule = evaluation.empty_schedule()
    horizon = evaluation.schedule_horizon(schedule, cfg.environment.step_dt_s, cfg.horizon_steps)
    env = evaluation.make_eval_env(airframe, cfg, horizon=horizon)
    try:
        spec = evaluation.ControllerSpec(run.controller, gains=cfg.pid,
                                         policy=_load_policy(run.checkpoint_path, env) if run.controller == "rl" else None)
        wind = wind_setting(run.settings[0], cfg.dryden, seed=derive_seed(run.seed, "wind", 0))
        trace = evaluation.run_schedule(env, spec.build(env), schedule, horizon=horizon, wind=wind, seed=run.seed)
    finally:
        env.close()
    write_csv(trace, out_dir / f"trace_{run.controller}.csv", run_hash, run.seed)
    write_csv(evaluation.tracking_error_summary(trace), out_dir / f"tracking_{run.controller}.csv",
              run_hash, run.seed)
    logger.info(f"Trace of {len(trace)} rows written to {out_dir}")
    return out_dir


# ---------------------------------------------------------------- entry point

def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)

    try:
        if not verify_compatibility(exit_on_failure=False):
            logger.warning("Running with compatibility issues. Some features may not work correctly.")
    except Exception as e:
        logger.error(f"Error during compatibility check: {str(e)}")

    try:
        run = run_config_from_args(args)
        if run.subcommand == "train":
            train_cmd(run, backend=args.backend)
        elif run.subcommand == "evaluate":
            evaluate_cmd(run, workers=args.workers, traces=args.traces)
        elif run.subcommand == "compare":
            compare_cmd(run, workers=args.workers)
        else:
            simulate_cmd(run)
    except ConfigError as e:
        logger.error(f"Configuration error: {str(e)}")
        print(f"error: {str(e)}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as e:
        logger.error(f"Checkpoint error: {str(e)}")
        print(f"error: {str(e)}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except TrainingDivergedError as e:
        details = e.details()
        logger.error(f"Training aborted after {details['updates_logged']} logged updates: {str(e)}")
        print(f"error: {str(e)} (last checkpoint: {details['checkpoint_path']})", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
