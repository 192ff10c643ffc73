"""CLI for safeeval."""

from contextlib import contextmanager
from dataclasses import replace
import logging
import sys
from typing import Any, Iterator

import click
import numpy as np

from . import __version__
from .bootstrap import BootstrapConfig, hcope_lower_bound
from .config import apply_overrides, apply_preset, ExperimentConfig, load_config
from .datasource import (
    behavior_value_estimate,
    collect as collect_dataset,
    make_behavior_policy,
    policy_fingerprint,
)
from .errors import (
    ConfigError,
    DatasetError,
    EstimatorUnstableError,
    NoOverlapError,
    SnapshotError,
)
from .estimators import ESTIMATORS, EstimatorSettings, make_estimator
from .formatters import (
    emit_outputs,
    format_as_json,
    format_as_text,
    format_runs_json,
    format_runs_text,
    read_results_csv,
)
from .harness import run_experiment
from .improve import improve, ImproveConfig, METHODS
from .models import EnvConfig
from .plots import write_figures
from .snapshots import read_checkpoint, read_policy, write_checkpoint, write_policy
from .trajectory_io import read_dataset, write_dataset

EXIT_CONFIG = 2
EXIT_UNSTABLE = 3

_LOG_LEVELS = {0: logging.WARNING, 1: logging.INFO}


def parse_estimators(value: str) -> tuple[str, ...]:
    """Split a comma-separated estimator list.

    Examples:
        >>> parse_estimators("wis, MB,wdr")
        ('wis', 'mb', 'wdr')
        >>> parse_estimators("")
        ()
    """
    names = tuple(part.strip().lower() for part in value.split(",") if part.strip())
    unknown = [name for name in names if name not in ESTIMATORS]
    if unknown:
        raise ConfigError(f"unknown estimators: {', '.join(unknown)}")
    return names


@contextmanager
def _exit_codes() -> Iterator[None]:
    """Turn library errors into a message on stderr and an exit code."""
    try:
        yield
    except (ConfigError, DatasetError, SnapshotError) as exc:
        click.echo(f"Error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (EstimatorUnstableError, NoOverlapError) as exc:
        click.echo(f"Error: {exc}", err=True)
        sys.exit(EXIT_UNSTABLE)


@click.group()
@click.version_option(version=__version__, prog_name="safeeval")
@click.option("-v", "--verbose", count=True, help="Log INFO (-v) or DEBUG (-vv).")
def main(verbose: int) -> None:
    """Safeeval - evaluate offline-learned policies before deployment.

    Collects logged MountainCar data, improves policies offline and checks
    bootstrap lower bounds on their value against the logging policy.
    """
    logging.basicConfig(
        level=_LOG_LEVELS.get(verbose, logging.DEBUG),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("-n", "--episodes", default=300, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--online-episodes", default=150, show_default=True, type=int)
@click.option(
    "--behavior-out",
    type=click.Path(dir_okay=False),
    help="Also store the logging policy as a snapshot.",
)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def collect(
    episodes: int,
    seed: int,
    online_episodes: int,
    behavior_out: str | None,
    out: str,
) -> None:
    """Collect a logged dataset from a freshly trained behavior policy.

    Examples::

        safeeval collect -n 300 --seed 7 --out data/d1.jsonl
    """
    with _exit_codes():
        env = EnvConfig()
        behavior = make_behavior_policy(
            np.random.default_rng([seed, 0]), online_episodes, env
        )
        dataset = collect_dataset(
            behavior,
            episodes,
            env,
            np.random.default_rng([seed, 1]),
            source_seed=seed,
            behavior_policy_id=policy_fingerprint(behavior),
        )
        write_dataset(dataset, out)
        if behavior_out:
            write_policy(behavior, behavior_out)
        click.echo(
            f"Wrote {len(dataset)} trajectories to {out} "
            f"(mean return {behavior_value_estimate(dataset):.2f})"
        )


@main.command()
@click.argument("dataset_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--method", type=click.Choice(METHODS), default="ddqn", show_default=True)
@click.option("--updates", type=int, help="Gradient updates (method default if unset).")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option(
    "--resume",
    type=click.Path(exists=True, dir_okay=False),
    help="Continue from a checkpoint; its settings replace --method.",
)
@click.option("--checkpoint-out", type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def train(
    dataset_path: str,
    method: str,
    updates: int | None,
    seed: int,
    resume: str | None,
    checkpoint_out: str | None,
    out: str,
) -> None:
    """Improve a policy offline on DATASET_PATH and store it.

    Examples::

        safeeval train data/d1.jsonl --method bcq --out policies/bcq.jsonl
    """
    with _exit_codes():
        data = read_dataset(dataset_path)
        prior = None
        if resume:
            prior, cfg = read_checkpoint(resume)
        else:
            cfg = ImproveConfig(method=method, seed=seed)
        if updates is not None:
            cfg = replace(cfg, updates_per_iteration=updates)
        state, policy = improve(data, cfg, prior)
        write_policy(policy, out)
        if checkpoint_out:
            write_checkpoint(state, cfg, checkpoint_out)
        click.echo(
            f"Wrote {cfg.method} policy to {out} ({state.update_counter} updates)"
        )


@main.command()
@click.argument("policy_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("dataset_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--estimators", default="wis,mb,wdr", show_default=True)
@click.option("--delta", default=0.05, show_default=True, type=float)
@click.option("--B", "resamples", default=2000, show_default=True, type=int)
@click.option(
    "--bound",
    type=click.Choice(["percentile", "bca"]),
    default="percentile",
    show_default=True,
)
@click.option("--mb-rollouts", default=10_000, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option(
    "--format",
    "output_format",
    type=click.Choice(["text", "json"]),
    default="text",
    help="Output format (text or json)",
)
def evaluate(
    policy_path: str,
    dataset_path: str,
    estimators: str,
    delta: float,
    resamples: int,
    bound: str,
    mb_rollouts: int,
    seed: int,
    output_format: str,
) -> None:
    """Bootstrap lower bounds of a stored policy's value on held-out data.

    Exits with status 3 if an estimator fails on too many resamples.

    Examples::

        safeeval evaluate policies/bcq.jsonl data/test.jsonl --estimators mb,wdr
    """
    with _exit_codes():
        names = parse_estimators(estimators)
        policy = read_policy(policy_path)
        data = read_dataset(dataset_path)
        bcfg = BootstrapConfig(B=resamples, delta=delta, method=bound, seed=seed)
        settings = EstimatorSettings(
            mb_rollouts=mb_rollouts, horizon=data.meta.env_config.max_macro_steps
        )
        reports = [
            hcope_lower_bound(
                make_estimator(name, policy, settings, data),
                data,
                replace(bcfg, seed=seed + index),
                name,
            )
            for index, name in enumerate(names)
        ]
        vb_hat = behavior_value_estimate(data)
        if output_format == "json":
            click.echo(format_as_json(reports, vb_hat))
        else:
            click.echo(format_as_text(reports, vb_hat), nl=False)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--preset", type=click.Choice(["paper", "desk"]))
@click.option("--method", "methods", multiple=True, type=click.Choice(METHODS))
@click.option("--estimators", help="Comma-separated subset of wis,pdwis,mb,wdr.")
@click.option("--gate", help="Gating estimator, or 'any'.")
@click.option("--delta", type=float)
@click.option("--B", "resamples", type=int)
@click.option("--iterations", type=int)
@click.option("--runs", type=int)
@click.option("--seed", type=int)
@click.option("--jobs", type=int)
@click.option("--out", "output_dir", type=click.Path(file_okay=False))
@click.option("--continue-after-pass", is_flag=True, default=None)
@click.option("--reset-per-iteration", is_flag=True, default=None)
@click.option("--single-model-wdr", is_flag=True, default=None)
@click.option("--no-oracle", is_flag=True, default=None)
@click.option(
    "--format",
    "output_format",
    type=click.Choice(["text", "json"]),
    default="text",
    help="Run summary format (text or json)",
)
def experiment(
    config_path: str | None,
    preset: str | None,
    methods: tuple[str, ...],
    estimators: str | None,
    gate: str | None,
    delta: float | None,
    resamples: int | None,
    iterations: int | None,
    runs: int | None,
    seed: int | None,
    jobs: int | None,
    output_dir: str | None,
    continue_after_pass: bool | None,
    reset_per_iteration: bool | None,
    single_model_wdr: bool | None,
    no_oracle: bool | None,
    output_format: str,
) -> None:
    """Run the full collect / improve / safety-test experiment.

    Flags override the preset, which overrides the config file.

    Examples::

        safeeval experiment --preset desk --method ddqn --method bc --out results
    """
    with _exit_codes():
        cfg = load_config(config_path) if config_path else ExperimentConfig()
        if preset:
            cfg = apply_preset(cfg, preset)
        flags: dict[str, Any] = {
            "gate": gate,
            "max_iterations": iterations,
            "runs": runs,
            "base_seed": seed,
            "jobs": jobs,
            "output_dir": output_dir,
        }
        if methods:
            flags["methods"] = methods
        if estimators is not None:
            flags["estimators"] = parse_estimators(estimators)
        if delta is not None or resamples is not None:
            flags["bootstrap"] = {
                key: value
                for key, value in (("delta", delta), ("B", resamples))
                if value is not None
            }
        if resamples is not None:
            flags["bootstrap_overrides"] = {
                name: {"B": resamples} for name in cfg.bootstrap_overrides
            }
        if continue_after_pass:
            flags["continue_after_pass"] = True
        if reset_per_iteration:
            flags["improve"] = {"reset_per_iteration": True}
        if single_model_wdr:
            flags["refit_model_per_resample"] = False
        if no_oracle:
            flags["oracle"] = False
        cfg = apply_overrides(
            cfg, {key: value for key, value in flags.items() if value is not None}
        )

        records = run_experiment(cfg)
        written = emit_outputs(records, cfg)
        if output_format == "json":
            click.echo(format_runs_json(records))
        else:
            click.echo(format_runs_text(records), nl=False)
        for path in written:
            click.echo(f"Wrote {path}", err=True)


@main.command()
@click.argument("results_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "output_dir", required=True, type=click.Path(file_okay=False))
def plot(results_path: str, output_dir: str) -> None:
    """Redraw the figures from an existing results.csv.

    Examples::

        safeeval plot results/results.csv --out figures
    """
    with _exit_codes():
        rows = read_results_csv(results_path)
        if not rows:
            raise ConfigError(f"{results_path} holds no rows")
        for path in write_figures(rows, output_dir):
            click.echo(f"Wrote {path}")


if __name__ == "__main__":
    main()
