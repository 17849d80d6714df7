"""
Constrained identification of inertial parameters and joint friction from projected dynamics.

The training data is reduced to the objective

    1/n_s sum_k || P_k Y_k phi + P_k S^T (B_v v_k + B_c sign(v_k)) - P_k S^T tau_k ||^2
        + gamma (phi - phi_hat)^T G (phi - phi_hat)

subject, for every link, to J(phi_j) > epsilon, C(phi_j) >= 0, tr(J(phi_j) Q_j) >= 0 and nonnegative friction.
The stacked design is never materialized: each chunk of samples is reduced to the triangular factor of its
rows (targets appended as a last column), and the chunk factors are merged. The factor carries the exact
least-squares geometry, so the conic program only sees a square system of size 10 n_b + 2 n.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
from jaxtyping import Float
from tqdm import tqdm

from legid.config import IdentifyConfig
from legid.consistency import (
    PARAM_NAMES,
    PSEUDO_INERTIA_BASIS,
    ConsistencyReport,
    com_lmi_basis,
    density_realizability_row,
    is_fully_consistent,
)
from legid.contact import ProjectedSample, project_sample, projector
from legid.dataio import Dataset, TrajectorySample
from legid.errors import DataError, ModelError, SolverError
from legid.model import RobotModel, save_model, stack_priors
from legid.regularization import ParamMetric, build_metric
from legid.spatialdyn import contact_jacobian, regressor

logger = logging.getLogger(__name__)

CHUNK_SIZE = 512
# Extra margin on the pseudo-inertia LMI so interior-point round-off still certifies at epsilon.
LMI_PADDING = 1e-9
REPAIR_STEPS = 60
# Columns whose RMS falls below this fraction of the largest one are projection round-off, left unscaled.
SCALE_FLOOR = 1e-12

_PSEUDO_FLAT = PSEUDO_INERTIA_BASIS.reshape(10, 16).T


def project_dataset_sample(model: RobotModel, sample: TrajectorySample, config: IdentifyConfig) -> ProjectedSample:
    Y = regressor(model, sample.state)
    Jc = contact_jacobian(model, sample.q, sample.contacts)
    P = projector(Jc, config.projector_cutoff)
    return project_sample(Y, sample.tau, sample.v[6:], P, config.sign_deadband)


def design_rows(ps: ProjectedSample, friction: bool) -> tuple[np.ndarray, np.ndarray]:
    """Rows [A, V, C] and target of one projected sample; the residual is rows @ theta - target."""
    if friction:
        return np.hstack([ps.A, ps.viscous, ps.coulomb]), ps.torque
    return ps.A, ps.torque


def parameter_names(model: RobotModel, friction: bool) -> tuple[str, ...]:
    names = [f"{link}.{p}" for link in model.link_names for p in PARAM_NAMES]
    if friction:
        joints = [j.name for j in model.actuated_joints]
        names += [f"{j}.viscous" for j in joints] + [f"{j}.coulomb" for j in joints]
    return tuple(names)


@dataclass(frozen=True, eq=False)
class ProjectedSystem:
    """Least-squares system of the projected regression, stored as a weighted triangular factor.

    `R` satisfies ||R @ [theta; -1]||^2 == 1/n_s sum_k ||D_k theta - y_k||^2 for every theta in physical
    units. `scale` holds the column RMS values used for equilibration (ones when scaling is off).
    """

    R: Float[np.ndarray, "r k1"]
    scale: Float[np.ndarray, "k"]
    n_s: int
    n_params: int
    n_joints: int
    rows_per_sample: int
    friction: bool
    names: tuple[str, ...]
    blocks: tuple[ProjectedSample, ...] | None = field(default=None, repr=False)

    @property
    def n_cols(self) -> int:
        return self.R.shape[1] - 1

    @property
    def design(self) -> Float[np.ndarray, "r k"]:
        return self.R[:, :-1]

    @property
    def target(self) -> Float[np.ndarray, "r"]:
        return self.R[:, -1]

    @property
    def scaled_design(self) -> Float[np.ndarray, "r k"]:
        return self.design / self.scale

    def stack(
        self, phi: np.ndarray, viscous: np.ndarray | None = None, coulomb: np.ndarray | None = None
    ) -> Float[np.ndarray, "k"]:
        if not self.friction:
            return np.asarray(phi, dtype=float)
        zeros = np.zeros(self.n_joints)
        return np.concatenate([
            phi,
            zeros if viscous is None else viscous,
            zeros if coulomb is None else coulomb,
        ])

    def residual_sq(self, theta: np.ndarray) -> float:
        """Mean over samples of the squared projected residual norm."""
        r = self.design @ np.asarray(theta, dtype=float) - self.target
        return float(r @ r)

    def rmse(self, theta: np.ndarray) -> float:
        return float(np.sqrt(self.residual_sq(theta) / self.rows_per_sample))


def _factor_chunk(model: RobotModel, ds: Dataset, config: IdentifyConfig, keep_blocks: bool):
    rows, targets, blocks = [], [], []
    for k in range(len(ds)):
        ps = project_dataset_sample(model, ds.sample(k), config)
        D, y = design_rows(ps, config.friction)
        rows.append(D)
        targets.append(y)
        if keep_blocks:
            blocks.append(ps)
    M = np.column_stack([np.vstack(rows), np.concatenate(targets)])
    return np.linalg.qr(M, mode="r"), np.sum(M[:, :-1] ** 2, axis=0), blocks


def assemble(ds: Dataset, model: RobotModel, config: IdentifyConfig, keep_blocks: bool = False) -> ProjectedSystem:
    """Project every sample into its contact null space and reduce the stacked system."""
    n_s = len(ds)
    if n_s == 0:
        raise DataError(f"{ds.meta.source or 'dataset'}: no samples")
    chunks = [ds.subset(np.arange(i, min(i + CHUNK_SIZE, n_s))) for i in range(0, n_s, CHUNK_SIZE)]
    progress = dict(desc="Projecting samples", unit="chunk", disable=len(chunks) < 4)
    if config.workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, os.cpu_count() or 1)) as pool:
            futures = [pool.submit(_factor_chunk, model, c, config, keep_blocks) for c in chunks]
            results = [f.result() for f in tqdm(futures, **progress)]
    else:
        results = [_factor_chunk(model, c, config, keep_blocks) for c in tqdm(chunks, **progress)]

    R = results[0][0] if len(results) == 1 else np.linalg.qr(np.vstack([r for r, _, _ in results]), mode="r")
    R = R / np.sqrt(n_s)
    col_sq = np.sum([s for _, s, _ in results], axis=0)
    if config.column_scaling:
        scale = np.sqrt(col_sq / (n_s * model.nv))
        scale[scale <= SCALE_FLOOR * scale.max()] = 1.0
    else:
        scale = np.ones(col_sq.size)
    blocks = tuple(b for _, _, bs in results for b in bs) if keep_blocks else None
    system = ProjectedSystem(
        R=R,
        scale=scale,
        n_s=n_s,
        n_params=10 * model.n_b,
        n_joints=model.n,
        rows_per_sample=model.nv,
        friction=config.friction,
        names=parameter_names(model, config.friction),
        blocks=blocks,
    )
    logger.info(f"Assembled projected system: {n_s} samples, {system.n_cols} unknowns")
    return system


@dataclass(frozen=True, eq=False)
class IdentificationSolution:
    phi: Float[np.ndarray, "p"]
    viscous: Float[np.ndarray, "n"]
    coulomb: Float[np.ndarray, "n"]
    objective: float
    data_term: float
    regularization_term: float
    reports: tuple[ConsistencyReport, ...]
    status: str
    method: str
    train_rmse: float
    friction: bool = True
    polished: bool = False
    repaired: tuple[str, ...] = ()

    @property
    def consistent(self) -> bool:
        return all(self.reports)

    @property
    def viscous_matrix(self) -> Float[np.ndarray, "n n"]:
        return np.diag(self.viscous)

    @property
    def coulomb_matrix(self) -> Float[np.ndarray, "n n"]:
        return np.diag(self.coulomb)

    @property
    def theta(self) -> np.ndarray:
        if not self.friction:
            return self.phi
        return np.concatenate([self.phi, self.viscous, self.coulomb])


def certify(model: RobotModel, phi: np.ndarray, epsilon: float, tol: float) -> tuple[ConsistencyReport, ...]:
    return tuple(
        is_fully_consistent(phi[10 * j : 10 * j + 10], link.bounding_ellipsoid, epsilon, tol, link=link.name)
        for j, link in enumerate(model.links)
    )


def _split_theta(system: ProjectedSystem, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    p, n = system.n_params, system.n_joints
    if not system.friction:
        return theta[:p].copy(), np.zeros(n), np.zeros(n)
    return theta[:p].copy(), theta[p : p + n].copy(), theta[p + n :].copy()


def _solution(
    system: ProjectedSystem,
    model: RobotModel,
    theta: np.ndarray,
    phi_hat: np.ndarray,
    metric: ParamMetric | None,
    gamma: float,
    status: str,
    method: str,
    epsilon: float,
    tol: float,
    **extra,
) -> IdentificationSolution:
    phi, viscous, coulomb = _split_theta(system, theta)
    data = system.residual_sq(theta)
    reg = gamma * metric.distance_sq(phi, phi_hat) if metric is not None else 0.0
    return IdentificationSolution(
        phi=phi,
        viscous=viscous,
        coulomb=coulomb,
        objective=data + reg,
        data_term=data,
        regularization_term=reg,
        reports=certify(model, phi, epsilon, tol),
        status=status,
        method=method,
        train_rmse=system.rmse(theta),
        friction=system.friction,
        **extra,
    )


def _solver_options(solver: str, tol: float) -> dict:
    if solver == "CLARABEL":
        return {"tol_gap_abs": tol, "tol_gap_rel": tol, "tol_feas": tol, "max_iter": 500}
    if solver == "SCS":
        return {"eps_abs": tol, "eps_rel": tol, "max_iters": 200_000}
    return {}


def _feasible(model: RobotModel, system: ProjectedSystem, theta: np.ndarray, epsilon: float) -> bool:
    phi, viscous, coulomb = _split_theta(system, theta)
    if np.any(viscous < 0) or np.any(coulomb < 0):
        return False
    return all(certify(model, phi, epsilon, 0.0))


def _unconstrained_minimizer(system: ProjectedSystem, phi_hat: np.ndarray, L: np.ndarray, gamma: float) -> np.ndarray:
    s = system.scale
    p = system.n_params
    blocks_a = [system.scaled_design]
    blocks_b = [system.target]
    if gamma > 0:
        reg = np.zeros((p, system.n_cols))
        reg[:, :p] = L.T / s[:p]
        blocks_a.append(np.sqrt(gamma) * reg)
        blocks_b.append(np.sqrt(gamma) * (L.T @ phi_hat))
    theta_s, *_ = np.linalg.lstsq(np.vstack(blocks_a), np.concatenate(blocks_b), rcond=None)
    return theta_s / s


def _repair(
    model: RobotModel, phi: np.ndarray, phi_hat: np.ndarray, epsilon: float, tol: float
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Pull each link that fails certification toward its (strictly feasible) prior by bisection."""
    phi = phi.copy()
    repaired = []
    for j, link in enumerate(model.links):
        sl = slice(10 * j, 10 * j + 10)
        bound = link.bounding_ellipsoid
        if is_fully_consistent(phi[sl], bound, epsilon, tol):
            continue
        lo, hi = 0.0, 1.0
        for _ in range(REPAIR_STEPS):
            mid = 0.5 * (lo + hi)
            if is_fully_consistent((1 - mid) * phi[sl] + mid * phi_hat[sl], bound, epsilon):
                hi = mid
            else:
                lo = mid
        phi[sl] = (1 - hi) * phi[sl] + hi * phi_hat[sl]
        repaired.append(link.name)
        logger.warning(f"link {link.name}: solver margin short of {epsilon:g}, moved {hi:.2e} toward the prior")
    return phi, tuple(repaired)


def solve_lmi(
    system: ProjectedSystem,
    phi_hat: Float[np.ndarray, "p"],
    metric: ParamMetric,
    config: IdentifyConfig,
    model: RobotModel,
) -> IdentificationSolution:
    """Solve the regularized least squares under the per-link consistency LMIs.

    The returned parameters are re-certified with `is_fully_consistent`; the solver's own feasibility claim is
    never trusted.
    """
    if config.gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {config.gamma}")
    phi_hat = np.asarray(phi_hat, dtype=float)
    epsilon = config.epsilon
    for report in certify(model, phi_hat, epsilon, 0.0):
        if not report:
            raise ModelError(f"link {report.link}: prior is not consistent: {'; '.join(report.violations())}")
    try:
        L = metric.factor()
    except np.linalg.LinAlgError as exc:
        raise ModelError("regularization metric is not positive definite") from exc

    gamma = config.gamma
    p = system.n_params
    s = system.scale

    candidate = _unconstrained_minimizer(system, phi_hat, L, gamma)
    candidate_ok = _feasible(model, system, candidate, epsilon)

    theta_s = cp.Variable(system.n_cols)
    phi = cp.multiply(theta_s[:p], 1.0 / s[:p])
    objective = cp.sum_squares(system.scaled_design @ theta_s - system.target)
    if gamma > 0:
        objective = objective + gamma * cp.sum_squares(L.T @ phi - L.T @ phi_hat)
    constraints = []
    for j, link in enumerate(model.links):
        phi_j = phi[10 * j : 10 * j + 10]
        bound = link.bounding_ellipsoid
        J = cp.Variable((4, 4), symmetric=True)
        C = cp.Variable((4, 4), symmetric=True)
        constraints += [
            J == cp.reshape(_PSEUDO_FLAT @ phi_j, (4, 4), order="C"),
            C == cp.reshape(com_lmi_basis(bound).reshape(10, 16).T @ phi_j, (4, 4), order="C"),
            J >> (epsilon + LMI_PADDING) * np.eye(4),
            C >> 0,
            density_realizability_row(bound) @ phi_j >= 0,
        ]
    if system.friction:
        constraints.append(theta_s[p:] >= 0)
    problem = cp.Problem(cp.Minimize(objective), constraints)

    solver = config.solver.upper()
    status = "solver_error"
    try:
        problem.solve(solver=solver, **_solver_options(solver, config.solver_tol))
        status = problem.status
    except cp.error.SolverError as exc:
        logger.warning(f"{solver} failed: {exc}")
    logger.info(f"{solver} status {status}, objective {problem.value}")

    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or theta_s.value is None:
        if candidate_ok:
            logger.warning(f"{solver} returned {status}; the unconstrained minimizer is feasible and is returned")
            return _solution(system, model, candidate, phi_hat, metric, gamma, f"polished_after_{status}", "lmi",
                             epsilon, config.feas_tol, polished=True)
        raise SolverError(f"{solver} returned status {status} on a {system.n_cols}-unknown problem")
    if status == cp.OPTIMAL_INACCURATE:
        logger.warning(f"{solver} reports an inaccurate optimum")

    if candidate_ok:
        logger.info("Unconstrained minimizer satisfies every constraint, polishing to it")
        return _solution(system, model, candidate, phi_hat, metric, gamma, status, "lmi", epsilon,
                         config.feas_tol, polished=True)

    theta = np.asarray(theta_s.value) / s
    if system.friction:
        theta[p:] = np.maximum(theta[p:], 0.0)
    phi_star, repaired = _repair(model, theta[:p], phi_hat, epsilon, config.feas_tol)
    theta[:p] = phi_star
    solution = _solution(system, model, theta, phi_hat, metric, gamma, status, "lmi", epsilon, config.feas_tol,
                         repaired=repaired)
    if not solution.consistent:
        failing = [r.link for r in solution.reports if not r]
        raise SolverError(f"solution fails certification for links {failing}")
    return solution


def solve_svd(
    system: ProjectedSystem, model: RobotModel, svd_cutoff: float = 1e-8, epsilon: float = 1e-6
) -> IdentificationSolution:
    """Minimum-norm unconstrained least squares; the consistency report may flag violations."""
    theta, _, rank, _ = np.linalg.lstsq(system.design, system.target, rcond=svd_cutoff)
    logger.info(f"SVD baseline: rank {rank} of {system.n_cols}")
    return _solution(system, model, theta, stack_priors(model), None, 0.0, "optimal", "svd", epsilon, 0.0)


@dataclass(frozen=True, eq=False)
class Prediction:
    t: Float[np.ndarray, "ns"]
    predicted: Float[np.ndarray, "ns nv"]
    measured: Float[np.ndarray, "ns nv"]
    names: tuple[str, ...]

    @property
    def coordinate_rmse(self) -> Float[np.ndarray, "nv"]:
        return np.sqrt(np.mean((self.predicted - self.measured) ** 2, axis=0))

    @property
    def joint_rmse(self) -> dict[str, float]:
        return {name: float(x) for name, x in zip(self.names[6:], self.coordinate_rmse[6:])}

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean((self.predicted - self.measured) ** 2)))


def predict_torques(
    model: RobotModel,
    phi: np.ndarray,
    viscous: np.ndarray | None,
    coulomb: np.ndarray | None,
    ds: Dataset,
    config: IdentifyConfig | None = None,
) -> Prediction:
    """Projected predictions P Y phi against projected measurements P S^T (tau - B_v v - B_c sign(v))."""
    config = config or IdentifyConfig()
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (10 * model.n_b,):
        raise ValueError(f"expected {10 * model.n_b} parameters, got {phi.shape}")
    if len(ds) == 0:
        raise DataError(f"{ds.meta.source or 'dataset'}: no samples")
    predicted = np.empty((len(ds), model.nv))
    measured = np.empty((len(ds), model.nv))
    for k in tqdm(range(len(ds)), desc="Predicting", unit="sample", disable=len(ds) < 1000):
        ps = project_dataset_sample(model, ds.sample(k), config)
        predicted[k] = ps.A @ phi
        measured[k] = ps.measurement(viscous, coulomb)
    return Prediction(t=ds.t, predicted=predicted, measured=measured, names=model.velocity_names)


def predict_solution(model: RobotModel, solution: IdentificationSolution, ds: Dataset,
                     config: IdentifyConfig | None = None) -> Prediction:
    if solution.friction:
        return predict_torques(model, solution.phi, solution.viscous, solution.coulomb, ds, config)
    return predict_torques(model, solution.phi, None, None, ds, config)


@dataclass(frozen=True, eq=False)
class ObservabilityReport:
    singular_values: Float[np.ndarray, "k"]
    rank: int
    n_cols: int
    null_basis: Float[np.ndarray, "k d"]
    sensitivity: dict[str, float]
    cutoff: float

    @property
    def nullity(self) -> int:
        return self.n_cols - self.rank

    @property
    def condition_number(self) -> float:
        if self.rank == 0:
            return float("inf")
        return float(self.singular_values[0] / self.singular_values[self.rank - 1])


def observability(system: ProjectedSystem, cutoff: float = 1e-8) -> ObservabilityReport:
    """Singular-value spectrum of the column-equilibrated design, its rank and null space."""
    A = system.scaled_design
    _, sv, Vt = np.linalg.svd(A, full_matrices=True)
    sv_full = np.zeros(system.n_cols)
    sv_full[: sv.size] = sv
    rank = int(np.sum(sv_full > cutoff * sv_full[0])) if sv_full[0] > 0 else 0
    null = Vt[rank:].T / system.scale[:, None]
    if null.size:
        null = null / np.linalg.norm(null, axis=0)
    sensitivity = {name: float(x) for name, x in zip(system.names, np.linalg.norm(system.design, axis=0))}
    return ObservabilityReport(
        singular_values=sv_full,
        rank=rank,
        n_cols=system.n_cols,
        null_basis=null,
        sensitivity=sensitivity,
        cutoff=cutoff,
    )


def identify(
    train: Dataset, model: RobotModel, config: IdentifyConfig, phi_hat: np.ndarray | None = None
) -> tuple[ProjectedSystem, IdentificationSolution]:
    """assemble -> metric at the prior -> solve_lmi."""
    phi_hat = stack_priors(model) if phi_hat is None else np.asarray(phi_hat, dtype=float)
    system = assemble(train, model, config)
    metric = build_metric(config.metric, phi_hat, list(model.link_names))
    return system, solve_lmi(system, phi_hat, metric, config, model)


@dataclass(frozen=True)
class LearningCurvePoint:
    size: int
    lmi_rmse: float
    svd_rmse: float


def learning_curve(
    train: Dataset,
    val: Dataset,
    model: RobotModel,
    config: IdentifyConfig,
    sizes: list[int],
    seed: int = 0,
) -> list[LearningCurvePoint]:
    """Validation RMSE of the LMI and SVD solutions for growing random training subsets."""
    order = np.random.default_rng(seed).permutation(len(train))
    points = []
    for size in sizes:
        if size > len(train):
            logger.warning(f"Skipping size {size}: only {len(train)} training samples")
            continue
        subset = train.subset(np.sort(order[:size]))
        system, lmi = identify(subset, model, config)
        svd = solve_svd(system, model, config.svd_cutoff, config.epsilon)
        point = LearningCurvePoint(
            size=size,
            lmi_rmse=predict_solution(model, lmi, val, config).rmse,
            svd_rmse=predict_solution(model, svd, val, config).rmse,
        )
        logger.info(f"n_s={size}: LMI {point.lmi_rmse:.6g}, SVD {point.svd_rmse:.6g}")
        points.append(point)
    return points


def corrupt_priors(model: RobotModel, low: float, high: float, rng: np.random.Generator) -> RobotModel:
    """Scale each link's parameters by 1 +/- u, u ~ U(low, high); positive scaling keeps them consistent."""
    if not 0.0 <= low <= high < 1.0:
        raise ValueError(f"corruption bounds must satisfy 0 <= low <= high < 1, got ({low}, {high})")
    phi = stack_priors(model).reshape(model.n_b, 10)
    factors = 1.0 + rng.choice([-1.0, 1.0], size=model.n_b) * rng.uniform(low, high, size=model.n_b)
    return model.with_params((phi * factors[:, None]).reshape(-1))


def identified_model(model: RobotModel, solution: IdentificationSolution) -> RobotModel:
    if solution.friction:
        return model.with_params(solution.phi, solution.viscous, solution.coulomb)
    return model.with_params(solution.phi)


def write_solution(path: str | os.PathLike, model: RobotModel, solution: IdentificationSolution) -> None:
    """Write the model with identified parameters in the model-file schema (loadable with `load_model`)."""
    save_model(path, identified_model(model, solution))


def solution_summary(model: RobotModel, solution: IdentificationSolution) -> dict:
    joints = [j.name for j in model.actuated_joints]
    return {
        "method": solution.method,
        "status": solution.status,
        "objective": solution.objective,
        "data_term": solution.data_term,
        "regularization_term": solution.regularization_term,
        "train_rmse": solution.train_rmse,
        "consistent": solution.consistent,
        "polished": solution.polished,
        "repaired": list(solution.repaired),
        "links": {
            link: {
                "params": dict(zip(PARAM_NAMES, map(float, solution.phi[10 * j : 10 * j + 10]))),
                "consistency": solution.reports[j].to_dict(),
            }
            for j, link in enumerate(model.link_names)
        },
        "friction": {
            name: {"viscous": float(solution.viscous[i]), "coulomb": float(solution.coulomb[i])}
            for i, name in enumerate(joints)
        }
        if solution.friction
        else {},
    }
