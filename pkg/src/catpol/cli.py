"""Command line entry points: train, eval, estlab, sweep.

Each subcommand reads a flat key=value config (or a checkpoint for eval),
runs the experiment, and writes delimited output plus rendered figures into
the configured output directory. Exit codes are stable for scripting:
0 success, 1 runtime failure, 2 config or checkpoint format error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import (
    ConfigError,
    EstlabConfig,
    RunConfig,
    SweepConfig,
    load_config_file,
    parse_cell,
    parse_config_text,
    resolve_out_dir,
)
from .envs import make_env
from .estlab import estimator_stats, linear_objective, quadratic_objective, LINEAR
from .plots import estlab_figure, sweep_figure, training_curves_figure
from .policy import PolicyParams
from .seeding import named_rng, rng_from_state
from .trainer import (
    MetricsRow,
    TrainingRecord,
    evaluate,
    goal_fractions,
    make_policy,
    train,
    value_net_arrays,
)

METRICS_HEADER = (
    "update_step",
    "env_steps",
    "eval_return_mean",
    "eval_return_std",
    "actor_loss",
    "critic_loss",
    "distinct_modes_used",
)

ESTLAB_HEADER = (
    "method",
    "temperature",
    "seed",
    "n_samples",
    "bias_norm",
    "variance_trace",
    "std_error_norm",
    "exact_grad_norm",
    "self_reference_bias_norm",
)


def _fmt(value) -> str:
    """Deterministic cell text: shortest round-trip repr for floats."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: tuple[str, ...], rows: list[tuple]) -> None:
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row width {len(row)} does not match header {len(header)}")
        lines.append(",".join(_fmt(cell) for cell in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _metrics_rows(rows: list[MetricsRow]) -> list[tuple]:
    return [
        (
            r.update_step,
            r.env_steps,
            r.eval_return_mean,
            r.eval_return_std,
            r.actor_loss,
            r.critic_loss,
            r.distinct_modes_used,
        )
        for r in rows
    ]


# ---- train -------------------------------------------------------------------


def _checkpoint_for(record: TrainingRecord, config_text: str) -> Checkpoint:
    tensors = dict(record.policy.arrays())
    for name, arr in value_net_arrays(record.value_net):
        tensors[name] = arr
    return Checkpoint(tensors=tensors, config_text=config_text, rng_state=record.eval_rng_state)


def cmd_train(config_path: str) -> int:
    cfg = RunConfig.from_mapping(load_config_file(config_path))
    out = resolve_out_dir(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    per_seed_rows: dict[int, list[MetricsRow]] = {}
    summary_seeds = {}
    for seed in cfg.seeds:
        record = train(cfg.to_train_config(seed))
        per_seed_rows[seed] = record.rows

        metrics_path = out / f"metrics_seed{seed}.csv"
        _write_csv(metrics_path, METRICS_HEADER, _metrics_rows(record.rows))

        ckpt_path = out / f"checkpoint_seed{seed}.ckpt"
        save_checkpoint(ckpt_path, _checkpoint_for(record, cfg.render(seeds=(seed,))))

        summary_seeds[str(seed)] = {
            "final_return": record.final_return,
            "wall_ms": record.rows[-1].wall_ms,
            "metrics_csv": metrics_path.name,
            "checkpoint": ckpt_path.name,
        }
        print(f"seed {seed}: final return {record.final_return:.4f} "
              f"({record.rows[-1].wall_ms / 1e3:.1f} s)")

    finals = [per_seed_rows[s][-1].eval_return_mean for s in cfg.seeds]
    summary = {
        "env": cfg.env,
        "method": cfg.method,
        "n_factors": cfg.n_factors,
        "n_classes": cfg.n_classes,
        "updates": cfg.updates,
        "seeds": list(cfg.seeds),
        "final_return_mean": float(np.mean(finals)),
        "final_return_std": float(np.std(finals)),
        "per_seed": summary_seeds,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    curve_path = out / "training_curve.png"
    training_curves_figure(per_seed_rows, curve_path, f"{cfg.env} / {cfg.method}")
    print(f"final return {summary['final_return_mean']:.4f} "
          f"+- {summary['final_return_std']:.4f} over {len(cfg.seeds)} seeds -> {out}")
    return 0


# ---- eval --------------------------------------------------------------------


def policy_from_checkpoint(ckpt: Checkpoint) -> tuple[RunConfig, PolicyParams]:
    """Rebuild the policy (config echo + named tensors) stored in a checkpoint."""
    try:
        cfg = RunConfig.from_mapping(parse_config_text(ckpt.config_text))
    except ConfigError as exc:
        raise CheckpointError(f"bad config echo in checkpoint: {exc}") from None
    env = make_env(cfg.env)
    shapes_rng = np.random.default_rng(0)  # shapes only; every array is overwritten
    policy = make_policy(cfg.to_train_config(cfg.seeds[0]), env.spec.state_dim,
                         env.spec.action_dim, shapes_rng)
    for name, arr in policy.arrays():
        if name not in ckpt.tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        src = ckpt.tensors[name]
        if src.shape != arr.shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {src.shape}, expected {arr.shape}")
        arr[:] = src
    return cfg, policy


def cmd_eval(checkpoint_path: str, episodes: int, stochastic: bool) -> int:
    ckpt = load_checkpoint(checkpoint_path)
    cfg, policy = policy_from_checkpoint(ckpt)
    env = make_env(cfg.env)
    rng = rng_from_state(ckpt.rng_state)

    report = evaluate(policy, env, episodes, rng, stochastic=stochastic)
    print(f"env             {cfg.env}")
    print(f"method          {cfg.method}")
    print(f"episodes        {episodes}" + (" (stochastic)" if stochastic else ""))
    print(f"return_mean     {report.return_mean!r}")
    print(f"return_std      {report.return_std!r}")
    print(f"distinct_modes  {report.distinct_modes}")
    if report.mode_counts is not None:
        top = sorted(report.mode_counts.items(), key=lambda kv: (-kv[1], kv[0]))[:10]
        print("mode_histogram  " + " ".join(f"{idx}:{n}" for idx, n in top))
    if cfg.env == "two_goal":
        frac1, frac2 = goal_fractions(policy, env, 100, rng)
        print(f"goal_fractions  (+1,0)={frac1:.2f} (-1,0)={frac2:.2f}")
    return 0


# ---- estlab ------------------------------------------------------------------


def cmd_estlab(config_path: str) -> int:
    cfg = EstlabConfig.from_mapping(load_config_file(config_path))
    out = resolve_out_dir(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    make_objective = linear_objective if cfg.objective == LINEAR else quadratic_objective
    rows = []
    for seed in cfg.seeds:
        instance_rng = named_rng(seed, "estlab")
        logits = instance_rng.normal(0.0, 1.0, size=(cfg.n_factors, cfg.n_classes))
        obj = make_objective(cfg.n_factors, cfg.n_classes, rng=instance_rng)
        for mi, method in enumerate(cfg.methods):
            for ti, temperature in enumerate(cfg.temperatures):
                report = estimator_stats(
                    method, logits, obj, temperature, cfg.n_samples,
                    named_rng(seed, "estlab", mi, ti, 0))
                reference = estimator_stats(
                    method, logits, obj, temperature, 10 * cfg.n_samples,
                    named_rng(seed, "estlab", mi, ti, 1))
                rows.append({
                    "method": method,
                    "temperature": temperature,
                    "seed": seed,
                    "n_samples": cfg.n_samples,
                    "bias_norm": report.bias_norm,
                    "variance_trace": report.variance_trace,
                    "std_error_norm": report.std_error_norm,
                    "exact_grad_norm": float(np.linalg.norm(report.exact_grad)),
                    "self_reference_bias_norm": float(
                        np.linalg.norm(report.mean_grad - reference.mean_grad)),
                })
                print(f"{method} @ {temperature:g} seed {seed}: "
                      f"bias {report.bias_norm:.5f} var {report.variance_trace:.5f}")

    _write_csv(out / "estimator_grid.csv", ESTLAB_HEADER,
               [tuple(row[k] for k in ESTLAB_HEADER) for row in rows])
    estlab_figure(rows, out / "estimator_report.png")
    print(f"{len(rows)} grid cells -> {out}")
    return 0


# ---- sweep -------------------------------------------------------------------


def cmd_sweep(config_path: str) -> int:
    cfg = SweepConfig.from_mapping(load_config_file(config_path))
    out = resolve_out_dir(cfg.base.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    run_rows = []
    cell_stats = []
    for cell in cfg.cells:
        n_factors, n_classes = parse_cell(cell)
        cell_cfg = dataclasses.replace(cfg.base, n_factors=n_factors, n_classes=n_classes)
        finals = []
        for seed in cfg.base.seeds:
            record = train(cell_cfg.to_train_config(seed))
            _write_csv(out / f"metrics_{cell}_seed{seed}.csv", METRICS_HEADER,
                       _metrics_rows(record.rows))
            finals.append(record.final_return)
            run_rows.append((cell, seed, record.final_return))
            print(f"cell {cell} seed {seed}: final return {record.final_return:.4f}")
        cell_stats.append((cell, float(np.mean(finals)), float(np.std(finals))))

    _write_csv(out / "sweep_runs.csv", ("cell", "seed", "final_return"), run_rows)
    _write_csv(out / "sweep_cells.csv",
               ("cell", "final_return_mean", "final_return_std"), cell_stats)
    sweep_figure(cell_stats, out / "sweep_report.png", cfg.base.env)
    for cell, mean, std in cell_stats:
        print(f"cell {cell}: {mean:.4f} +- {std:.4f}")
    return 0


# ---- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catpol",
        description="Train, evaluate and analyze multimodal categorical policies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one config across its seeds")
    p_train.add_argument("config", help="path to a key=value run config")

    p_eval = sub.add_parser("eval", help="evaluate a saved checkpoint")
    p_eval.add_argument("checkpoint", help="path to a .ckpt file")
    p_eval.add_argument("--episodes", type=int, default=10)
    p_eval.add_argument("--stochastic", action="store_true",
                        help="sample the policy instead of acting deterministically")

    p_est = sub.add_parser("estlab", help="estimator bias/variance grid")
    p_est.add_argument("config", help="path to a key=value estlab config")

    p_sweep = sub.add_parser("sweep", help="mode-capacity sweep over NxM cells")
    p_sweep.add_argument("config", help="path to a key=value sweep config")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args.config)
        if args.command == "eval":
            return cmd_eval(args.checkpoint, args.episodes, args.stochastic)
        if args.command == "estlab":
            return cmd_estlab(args.config)
        return cmd_sweep(args.config)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures keep a distinct exit code
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
