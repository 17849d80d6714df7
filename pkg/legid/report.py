"""Human-readable and machine-readable reports for the identify, predict and inspect commands."""

from __future__ import annotations

import io
import json
import os
from collections import defaultdict

import numpy as np
from omegaconf import DictConfig, OmegaConf
from rich.console import Console
from rich.table import Table

from legid.consistency import PARAM_NAMES
from legid.identify import IdentificationSolution, ObservabilityReport, Prediction, solution_summary
from legid.model import RobotModel

RULE = "=" * 80
REPORT_WIDTH = 140


def _num(x: float) -> str:
    return format(float(x), ".6g")


def render(*renderables) -> str:
    buffer = io.StringIO()
    console = Console(file=buffer, width=REPORT_WIDTH, color_system=None, force_terminal=False, highlight=False)
    for r in renderables:
        console.print(r)
    return buffer.getvalue()


def section(title: str) -> str:
    return f"{RULE}\n{title}\n{RULE}\n"


def split_joint_name(name: str) -> tuple[str, str]:
    """'FL_knee' -> ('FL', 'knee'); names without a prefix form their own group."""
    leg, sep, joint = name.partition("_")
    return (leg, joint) if sep else ("-", name)


def rmse_table(title: str, prediction: Prediction) -> Table:
    """Legs as rows, joints as columns, projected-torque RMSE in the cells."""
    grouped: dict[str, dict[str, float]] = defaultdict(dict)
    columns: list[str] = []
    for name, value in prediction.joint_rmse.items():
        leg, joint = split_joint_name(name)
        grouped[leg][joint] = value
        if joint not in columns:
            columns.append(joint)
    table = Table(title=title, show_lines=False)
    table.add_column("group")
    for joint in columns:
        table.add_column(joint, justify="right")
    for leg, row in grouped.items():
        table.add_row(leg, *[_num(row[j]) if j in row else "" for j in columns])
    return table


def parameter_table(model: RobotModel, solution: IdentificationSolution) -> Table:
    table = Table(title=f"Inertial parameters ({solution.method})")
    table.add_column("link")
    for name in PARAM_NAMES:
        table.add_column(name, justify="right")
    table.add_column("consistent")
    for j, link in enumerate(model.link_names):
        phi = solution.phi[10 * j : 10 * j + 10]
        table.add_row(link, *[_num(x) for x in phi], "yes" if solution.reports[j] else "NO")
    return table


def margin_table(solution: IdentificationSolution) -> Table:
    table = Table(title=f"Consistency margins ({solution.method})")
    for name in ("link", "min eig J", "min eig C", "tr(JQ)", "violations"):
        table.add_column(name, justify="left" if name in ("link", "violations") else "right")
    for report in solution.reports:
        table.add_row(
            report.link or "",
            _num(report.min_eig_pseudo_inertia),
            _num(report.min_eig_com),
            _num(report.trace_margin),
            "; ".join(report.violations()),
        )
    return table


def friction_table(model: RobotModel, solution: IdentificationSolution) -> Table:
    table = Table(title=f"Joint friction ({solution.method})")
    table.add_column("joint")
    table.add_column("viscous [N m s/rad]", justify="right")
    table.add_column("coulomb [N m]", justify="right")
    for i, joint in enumerate(model.actuated_joints):
        table.add_row(joint.name, _num(solution.viscous[i]), _num(solution.coulomb[i]))
    return table


def identify_report(
    cfg: DictConfig,
    model: RobotModel,
    solutions: dict[str, IdentificationSolution],
    predictions: dict[str, dict[str, Prediction]],
) -> str:
    """`predictions[method][dataset]`, dataset being 'train' or 'val'."""
    out = [section("legid identification report")]
    out.append(f"model: {model.name} (n={model.n}, n_b={model.n_b})\n\n")
    out.append(section("configuration"))
    out.append(OmegaConf.to_yaml(cfg, resolve=True))
    for method, solution in solutions.items():
        out.append(section(f"solution: {method}"))
        out.append(
            f"status: {solution.status}\nobjective: {_num(solution.objective)}\n"
            f"data term: {_num(solution.data_term)}\nregularization term: {_num(solution.regularization_term)}\n"
            f"training RMSE: {_num(solution.train_rmse)}\nconsistent: {solution.consistent}\n"
        )
        if solution.repaired:
            out.append(f"repaired links: {', '.join(solution.repaired)}\n")
        renderables = [parameter_table(model, solution), margin_table(solution)]
        if solution.friction:
            renderables.append(friction_table(model, solution))
        out.append(render(*renderables))
    out.append(section("projected torque RMSE [N m]"))
    rows = []
    for method, by_set in predictions.items():
        for name, prediction in by_set.items():
            rows.append(rmse_table(f"{method} / {name}", prediction))
    out.append(render(*rows))
    for method, by_set in predictions.items():
        for name, prediction in by_set.items():
            base = float(np.sqrt(np.mean(prediction.coordinate_rmse[:6] ** 2)))
            out.append(f"{method} {name}: overall {_num(prediction.rmse)}, base rows {_num(base)}\n")
    return "".join(out)


def observability_report(report: ObservabilityReport, names: tuple[str, ...]) -> str:
    out = [section("observability of the projected regressor")]
    out.append(
        f"unknowns: {report.n_cols}\nnumerical rank: {report.rank} (cutoff {report.cutoff:g})\n"
        f"null space dimension: {report.nullity}\ncondition number: {_num(report.condition_number)}\n"
    )
    if report.nullity > report.n_cols // 2:
        out.append("WARNING: heavy rank deficiency, most parameters are resolved by the prior alone\n")
    out.append("\nsingular values:\n")
    out.append("\n".join(f"  {k:4d}  {_num(s)}" for k, s in enumerate(report.singular_values)) + "\n")
    table = Table(title="Parameter sensitivity (column norms)")
    table.add_column("parameter")
    table.add_column("norm", justify="right")
    for name in names:
        table.add_row(name, _num(report.sensitivity[name]))
    out.append(render(table))
    return "".join(out)


def prediction_summary(prediction: Prediction) -> dict:
    return {
        "rmse": prediction.rmse,
        "joint_rmse": prediction.joint_rmse,
        "coordinate_rmse": dict(zip(prediction.names, map(float, prediction.coordinate_rmse))),
        "n_samples": int(prediction.t.size),
    }


def identify_summary(
    cfg: DictConfig,
    model: RobotModel,
    solutions: dict[str, IdentificationSolution],
    predictions: dict[str, dict[str, Prediction]],
) -> dict:
    return {
        "config": OmegaConf.to_container(cfg, resolve=True),
        "model": {"name": model.name, "n": model.n, "n_b": model.n_b},
        "solutions": {method: solution_summary(model, s) for method, s in solutions.items()},
        "rmse": {
            method: {name: prediction_summary(p) for name, p in by_set.items()}
            for method, by_set in predictions.items()
        },
    }


def observability_summary(report: ObservabilityReport) -> dict:
    return {
        "rank": report.rank,
        "n_cols": report.n_cols,
        "nullity": report.nullity,
        "cutoff": report.cutoff,
        "singular_values": report.singular_values.tolist(),
        "sensitivity": report.sensitivity,
    }


def write_json(path: str | os.PathLike, data: dict) -> None:
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def write_text(path: str | os.PathLike, text: str) -> None:
    with open(path, "w") as f:
        f.write(text)
