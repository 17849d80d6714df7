"""
Command line front end.

    legid identify --model robot.yaml --train stance.csv --val walk.csv --out output/
    legid simulate --model robot.yaml --family sinusoidal --duration 100 --seed 1 --out data/
    legid predict  --model output/identified_model.yaml --val walk.csv --out output/
    legid filter   --model robot.yaml --train raw.csv --out filtered/
    legid inspect  --model robot.yaml --train stance.csv
    legid sweep    --model robot.yaml --train stance.csv --val walk.csv --sizes 100,1000,10000

Settings come from `legid/configs/<config-name>.yaml`, then `--set key=value` overrides, then flags.
Exit codes: 0 on success, 2 when the solver fails, 1 for input, output and configuration errors.
"""

import enum
import logging
import os
from pathlib import Path
from typing import Annotated

import numpy as np
import typer
from omegaconf import DictConfig, OmegaConf
from omegaconf.errors import OmegaConfBaseException
from rich.logging import RichHandler
from rich.traceback import install

import wandb
from legid import report
from legid.config import load_run_config, validate_run_config
from legid.dataio import Dataset, concat, condition_dataset, load_log, split, write_log, write_predictions
from legid.errors import ConfigError, LegidError, SolverError
from legid.identify import (
    assemble,
    corrupt_priors,
    identify,
    learning_curve,
    observability,
    predict_solution,
    predict_torques,
    solve_svd,
    write_solution,
)
from legid.model import RobotModel, load_model, save_model, stack_priors
from legid.synth import SynthScenario, generate, write_truth

logger = logging.getLogger(__name__)

app = typer.Typer(add_completion=False, no_args_is_help=True, help="Physically consistent inertial identification.")


class Toggle(str, enum.Enum):
    on = "on"
    off = "off"


class Metric(str, enum.Enum):
    geodesic = "geodesic"
    euclidean = "euclidean"


ConfigName = Annotated[str, typer.Option("--config-name", help="Config file under legid/configs.")]
Overrides = Annotated[list[str] | None, typer.Option("--set", help="Config override key=value (repeatable).")]
ModelPath = Annotated[str | None, typer.Option("--model", help="Robot model file.")]
TrainLogs = Annotated[list[str] | None, typer.Option("--train", help="Training log (repeatable).")]
ValLogs = Annotated[list[str] | None, typer.Option("--val", help="Validation log (repeatable).")]
OutDir = Annotated[str | None, typer.Option("--out", help="Output directory.")]
Seed = Annotated[int | None, typer.Option("--seed")]


@app.callback()
def main(verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging.")] = False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=False)],
        force=True,
    )
    install(show_locals=False)


def _resolve(config_name: str, overrides: list[str] | None, **flags) -> DictConfig:
    """Compose the config, apply flags given as `section__key=value`, validate."""
    cfg = load_run_config(config_name, overrides)
    for dotted, value in flags.items():
        if value is None:
            continue
        section, _, key = dotted.partition("__")
        if key:
            cfg[section][key] = value
        else:
            cfg[section] = value
    return validate_run_config(cfg)


def _require_model(cfg: DictConfig) -> RobotModel:
    if OmegaConf.is_missing(cfg.paths, "model"):
        raise ConfigError("no model file given (--model or paths.model)")
    return load_model(cfg.paths.model)


def _load_logs(paths, model: RobotModel, cfg: DictConfig, what: str) -> Dataset:
    if not paths:
        raise ConfigError(f"no {what} logs given")
    return concat([load_log(p, model, cfg.filter) for p in paths])


def _out_dir(cfg: DictConfig) -> Path:
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run(fn) -> None:
    try:
        fn()
    except SolverError as exc:
        logger.error(f"solver failure: {exc}")
        raise typer.Exit(code=2) from exc
    except (LegidError, OSError, OmegaConfBaseException) as exc:
        logger.error(str(exc))
        raise typer.Exit(code=1) from exc


@app.command("identify")
def cmd_identify(
    config_name: ConfigName = "config",
    overrides: Overrides = None,
    model: ModelPath = None,
    train: TrainLogs = None,
    val: ValLogs = None,
    gamma: Annotated[float | None, typer.Option("--gamma", help="Regularization weight.")] = None,
    metric: Annotated[Metric | None, typer.Option("--metric")] = None,
    friction: Annotated[Toggle | None, typer.Option("--friction")] = None,
    epsilon: Annotated[float | None, typer.Option("--epsilon", help="Pseudo-inertia margin.")] = None,
    seed: Seed = None,
    out: OutDir = None,
    holdout: Annotated[list[str] | None, typer.Option("--holdout", help="Motion tag held out.")] = None,
    ratio: Annotated[float | None, typer.Option("--ratio", help="Random train fraction.")] = None,
    baseline: Annotated[bool | None, typer.Option("--baseline/--no-baseline", help="Also solve by SVD.")] = None,
):
    """Identify inertial parameters and friction; write the identified model and RMSE reports."""

    def run():
        cfg = _resolve(
            config_name,
            overrides,
            paths__model=model,
            paths__train=train,
            paths__val=val,
            paths__out=out,
            identify__gamma=gamma,
            identify__metric=metric.value if metric else None,
            identify__friction=None if friction is None else friction == Toggle.on,
            identify__epsilon=epsilon,
            identify__baseline=baseline,
            split__holdout=holdout,
            split__ratio=ratio,
            split__seed=seed,
            seed=seed,
        )
        robot = _require_model(cfg)
        train_ds = _load_logs(cfg.paths.train, robot, cfg, "training")
        if cfg.paths.val:
            val_ds = _load_logs(cfg.paths.val, robot, cfg, "validation")
        elif cfg.split.holdout or cfg.split.ratio is not None:
            train_ds, val_ds = split(train_ds, cfg.split)
        else:
            val_ds = None
        out_dir = _out_dir(cfg)

        system, lmi = identify(train_ds, robot, cfg.identify)
        solutions = {"lmi": lmi}
        if cfg.identify.baseline:
            solutions["svd"] = solve_svd(system, robot, cfg.identify.svd_cutoff, cfg.identify.epsilon)

        predictions = {}
        for method, solution in solutions.items():
            by_set = {"train": predict_solution(robot, solution, train_ds, cfg.identify)}
            if val_ds is not None and len(val_ds):
                by_set["val"] = predict_solution(robot, solution, val_ds, cfg.identify)
            predictions[method] = by_set

        write_solution(out_dir / "identified_model.yaml", robot, lmi)
        report.write_text(out_dir / "report.txt", report.identify_report(cfg, robot, solutions, predictions))
        report.write_json(out_dir / "summary.json", report.identify_summary(cfg, robot, solutions, predictions))
        final = predictions["lmi"].get("val", predictions["lmi"]["train"])
        write_predictions(out_dir / "predictions.csv", final.t, final.predicted, final.measured, final.names)
        for method, by_set in predictions.items():
            for name, prediction in by_set.items():
                logger.info(f"{method} {name} projected torque RMSE: {prediction.rmse:.6g} N m")

        if cfg.wandb_project:
            wandb.init(
                project=cfg.wandb_project,
                entity=cfg.wandb_entity,
                config=OmegaConf.to_container(cfg, resolve=True),
                name=f"identify-{robot.name}",
            )
            metrics = {"objective": lmi.objective, "train_rmse": lmi.train_rmse}
            for method, by_set in predictions.items():
                metrics.update({f"{method}/{name}_rmse": p.rmse for name, p in by_set.items()})
            wandb.log(metrics)
            wandb.finish()
        logger.info(f"Wrote results to {out_dir}")

    _run(run)


@app.command("simulate")
def cmd_simulate(
    config_name: ConfigName = "config",
    overrides: Overrides = None,
    model: ModelPath = None,
    family: Annotated[str | None, typer.Option("--family", help="static, sinusoidal or crouch_extend.")] = None,
    duration: Annotated[float | None, typer.Option("--duration", help="Seconds.")] = None,
    rate: Annotated[float | None, typer.Option("--rate", help="Sampling rate in Hz.")] = None,
    torque_noise: Annotated[float | None, typer.Option("--torque-noise", help="Torque noise std, N m.")] = None,
    tag: Annotated[str | None, typer.Option("--tag", help="Motion tag and file stem.")] = None,
    seed: Seed = None,
    out: OutDir = None,
):
    """Generate a synthetic contact-consistent log plus its truth sidecar."""

    def run():
        cfg = _resolve(
            config_name,
            overrides,
            paths__model=model,
            paths__out=out,
            simulate__family=family,
            simulate__duration=duration,
            simulate__rate_hz=rate,
            simulate__torque_noise=torque_noise,
            simulate__tag=tag,
            simulate__seed=seed,
        )
        robot = _require_model(cfg)
        scenario = SynthScenario.from_config(robot, cfg.simulate)
        result = generate(scenario)
        out_dir = _out_dir(cfg)
        stem = scenario.tag or scenario.family.value
        write_log(out_dir / f"{stem}.csv", result.dataset, robot)
        write_truth(out_dir / f"{stem}.truth.json", result)
        if cfg.simulate.prior_corruption > 0:
            rng = np.random.default_rng(cfg.simulate.seed)
            level = cfg.simulate.prior_corruption
            save_model(out_dir / "prior_model.yaml", corrupt_priors(robot, 0.5 * level, level, rng))
        logger.info(f"Wrote {len(result.dataset)} samples to {out_dir / f'{stem}.csv'}")

    _run(run)


@app.command("predict")
def cmd_predict(
    config_name: ConfigName = "config",
    overrides: Overrides = None,
    model: ModelPath = None,
    val: ValLogs = None,
    friction: Annotated[Toggle | None, typer.Option("--friction")] = None,
    out: OutDir = None,
):
    """Projected torque predictions of a model file (its priors and friction) on logs."""

    def run():
        cfg = _resolve(
            config_name,
            overrides,
            paths__model=model,
            paths__val=val,
            paths__out=out,
            identify__friction=None if friction is None else friction == Toggle.on,
        )
        robot = _require_model(cfg)
        out_dir = _out_dir(cfg)
        if not cfg.paths.val:
            raise ConfigError("no logs to predict (--val)")
        results = {}
        for path in cfg.paths.val:
            ds = load_log(path, robot, cfg.filter)
            viscous, coulomb = (robot.viscous, robot.coulomb) if cfg.identify.friction else (None, None)
            prediction = predict_torques(robot, stack_priors(robot), viscous, coulomb, ds, cfg.identify)
            stem = Path(path).name.split(".")[0]
            write_predictions(out_dir / f"predictions_{stem}.csv", prediction.t, prediction.predicted,
                              prediction.measured, prediction.names)
            results[stem] = prediction
            logger.info(f"{stem}: projected torque RMSE {prediction.rmse:.6g} N m")
        text = report.section("projected torque RMSE [N m]") + report.render(
            *[report.rmse_table(stem, p) for stem, p in results.items()]
        )
        report.write_text(out_dir / "report.txt", text)
        report.write_json(
            out_dir / "summary.json",
            {"config": OmegaConf.to_container(cfg, resolve=True),
             "rmse": {stem: report.prediction_summary(p) for stem, p in results.items()}},
        )

    _run(run)


@app.command("filter")
def cmd_filter(
    config_name: ConfigName = "config",
    overrides: Overrides = None,
    model: ModelPath = None,
    train: TrainLogs = None,
    out: OutDir = None,
):
    """Zero-phase filter velocities and torques, re-derive accelerations, and write conditioned logs."""

    def run():
        cfg = _resolve(config_name, overrides, paths__model=model, paths__train=train, paths__out=out)
        robot = _require_model(cfg)
        if not cfg.paths.train:
            raise ConfigError("no logs to filter (--train)")
        out_dir = _out_dir(cfg)
        settings = OmegaConf.to_object(cfg.filter)
        settings.enabled = True
        for path in cfg.paths.train:
            target = out_dir / os.path.basename(path)
            if target.resolve() == Path(path).resolve():
                raise ConfigError(f"refusing to overwrite the input log {path}")
            ds = condition_dataset(load_log(path, robot), settings)
            write_log(target, ds, robot)
            logger.info(f"Filtered {path} -> {target}")

    _run(run)


@app.command("inspect")
def cmd_inspect(
    config_name: ConfigName = "config",
    overrides: Overrides = None,
    model: ModelPath = None,
    train: TrainLogs = None,
    friction: Annotated[Toggle | None, typer.Option("--friction")] = None,
    out: OutDir = None,
):
    """Observability report: singular values, numerical rank and null space of the projected regressor."""

    def run():
        cfg = _resolve(
            config_name,
            overrides,
            paths__model=model,
            paths__train=train,
            paths__out=out,
            identify__friction=None if friction is None else friction == Toggle.on,
        )
        robot = _require_model(cfg)
        ds = _load_logs(cfg.paths.train, robot, cfg, "input")
        system = assemble(ds, robot, cfg.identify)
        result = observability(system, cfg.identify.svd_cutoff)
        text = report.observability_report(result, system.names)
        typer.echo(text)
        out_dir = _out_dir(cfg)
        report.write_text(out_dir / "observability.txt", text)
        report.write_json(out_dir / "observability.json", report.observability_summary(result))

    _run(run)


@app.command("sweep")
def cmd_sweep(
    config_name: ConfigName = "config",
    overrides: Overrides = None,
    model: ModelPath = None,
    train: TrainLogs = None,
    val: ValLogs = None,
    sizes: Annotated[str | None, typer.Option("--sizes", help="Comma separated training sizes.")] = None,
    seed: Seed = None,
    out: OutDir = None,
):
    """Validation RMSE of LMI and SVD solutions against the number of training samples."""

    def run():
        try:
            size_list = [int(s) for s in sizes.split(",")] if sizes else None
        except ValueError as exc:
            raise ConfigError(f"--sizes must be comma separated integers, got {sizes!r}") from exc
        cfg = _resolve(
            config_name,
            overrides,
            paths__model=model,
            paths__train=train,
            paths__val=val,
            paths__out=out,
            sweep_sizes=size_list,
            seed=seed,
        )
        robot = _require_model(cfg)
        train_ds = _load_logs(cfg.paths.train, robot, cfg, "training")
        if cfg.paths.val:
            val_ds = _load_logs(cfg.paths.val, robot, cfg, "validation")
        else:
            train_ds, val_ds = split(train_ds, cfg.split)
        points = learning_curve(train_ds, val_ds, robot, cfg.identify, list(cfg.sweep_sizes), seed=cfg.seed)
        out_dir = _out_dir(cfg)
        report.write_json(
            out_dir / "learning_curve.json",
            {"points": [{"size": p.size, "lmi_rmse": p.lmi_rmse, "svd_rmse": p.svd_rmse} for p in points]},
        )
        for p in points:
            typer.echo(f"{p.size:>8d}  lmi {p.lmi_rmse:.6g}  svd {p.svd_rmse:.6g}")

    _run(run)


if __name__ == "__main__":
    app()
