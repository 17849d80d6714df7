"""
Synthetic, contact-consistent trajectories with known inertial parameters, friction and contact forces.

Driven coordinates follow an analytic reference; the remaining (dependent) coordinates are solved by
constrained inverse kinematics so that every active contact point stays where it started. Velocities and
accelerations of the dependent coordinates come from the differentiated contact constraint. Torques are the
inverse dynamics of the true model minus the contact forces, which are the minimum-norm solution of the
unactuated base rows.
"""

from __future__ import annotations

import enum
import json
import logging
import os
from dataclasses import dataclass

import numpy as np
from jaxtyping import Float
from scipy.spatial.transform import Rotation
from tqdm import tqdm

from legid.config import SimulateConfig
from legid.contact import DEFAULT_SIGN_DEADBAND, ContactSet, friction_sign
from legid.dataio import Dataset, DatasetMeta
from legid.errors import DataError, ScenarioError
from legid.model import RobotModel, model_hash, stack_priors
from legid.spatialdyn import (
    State,
    contact_bias_acceleration,
    contact_jacobian,
    contact_positions,
    integrate,
    inverse_dynamics,
)

logger = logging.getLogger(__name__)

IK_TOL = 1e-12
IK_ACCEPT = 1e-10
IK_MAX_ITER = 50
DRIFT_TOL = 1e-6
GOLDEN = (1 + 5**0.5) / 2
SINE_COMPONENTS = 3
SINE_BAND_HZ = (0.3, 2.0)
CROUCH_HZ = 0.8

# per-coordinate amplitudes: base (x, y, z, yaw, pitch, roll), then joints
BASE_SINE_AMPLITUDE = np.array([0.03, 0.03, 0.03, 0.1, 0.1, 0.1])
JOINT_SINE_AMPLITUDE = 0.5
BASE_CROUCH_DIRECTION = np.array([0.0, 0.0, -0.06, 0.0, 0.05, 0.0])
JOINT_CROUCH_AMPLITUDE = 0.6


class TrajectoryFamily(str, enum.Enum):
    STATIC = "static"
    SINUSOIDAL = "sinusoidal"
    CROUCH_EXTEND = "crouch_extend"


@dataclass(frozen=True, eq=False)
class SynthScenario:
    model: RobotModel
    family: TrajectoryFamily = TrajectoryFamily.SINUSOIDAL
    duration: float = 20.0
    rate_hz: float = 100.0
    seed: int = 0
    torque_noise: float = 0.0
    velocity_noise: float = 0.0
    contacts: tuple[str, ...] | None = None
    viscous: float = 0.05
    coulomb: float = 0.1
    amplitude: float = 1.0
    tag: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", TrajectoryFamily(self.family))
        if self.duration <= 0 or self.rate_hz <= 0:
            raise ScenarioError(f"duration and rate must be positive, got {self.duration} s at {self.rate_hz} Hz")
        if min(self.torque_noise, self.velocity_noise, self.viscous, self.coulomb) < 0:
            raise ScenarioError("noise levels and friction coefficients must be nonnegative")

    @classmethod
    def from_config(cls, model: RobotModel, cfg: SimulateConfig) -> SynthScenario:
        return cls(
            model=model,
            family=TrajectoryFamily(cfg.family),
            duration=cfg.duration,
            rate_hz=cfg.rate_hz,
            seed=cfg.seed,
            torque_noise=cfg.torque_noise,
            velocity_noise=cfg.velocity_noise,
            contacts=tuple(cfg.contacts) if cfg.contacts is not None else None,
            viscous=cfg.viscous,
            coulomb=cfg.coulomb,
            amplitude=cfg.amplitude,
            tag=cfg.tag,
        )

    @property
    def active_contacts(self) -> ContactSet:
        return ContactSet(self.contacts if self.contacts is not None else self.model.contact_names)

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.rate_hz))


@dataclass(frozen=True, eq=False)
class ContactForces:
    """Stacked world-frame contact forces, three entries per active frame."""

    frames: tuple[str, ...]
    values: Float[np.ndarray, "ns m"]


@dataclass(frozen=True, eq=False)
class SynthResult:
    dataset: Dataset
    forces: ContactForces
    phi: Float[np.ndarray, "p"]
    viscous: Float[np.ndarray, "n"]
    coulomb: Float[np.ndarray, "n"]


@dataclass(frozen=True)
class _Partition:
    dependent: tuple[int, ...]
    driven: tuple[int, ...]
    base_driven: bool


def partition_coordinates(model: RobotModel, contacts: ContactSet) -> _Partition:
    """Dependent velocity coordinates: the joints carrying contact points, plus the base when it touches."""
    topo = model.topology
    links = set()
    for name in contacts.active:
        if name not in topo.contacts:
            raise ScenarioError(f"unknown contact frame {name!r}")
        links.add(topo.contacts[name][0])
    dependent = set()
    base_dependent = topo.root in links
    if base_dependent:
        dependent.update(range(6))
    for link in links:
        dependent.update(topo.v_index[i] for i in model.ancestors(link) if i != topo.root)
    driven = tuple(i for i in range(model.nv) if i not in dependent)
    return _Partition(dependent=tuple(sorted(dependent)), driven=driven, base_driven=not base_dependent)


def _reference_scales(model: RobotModel, part: _Partition, family: TrajectoryFamily) -> np.ndarray:
    joints = [i for i in part.driven if i >= 6]
    if family == TrajectoryFamily.CROUCH_EXTEND:
        base, joint = BASE_CROUCH_DIRECTION, JOINT_CROUCH_AMPLITUDE
    else:
        base, joint = BASE_SINE_AMPLITUDE, JOINT_SINE_AMPLITUDE
    return np.concatenate([base if part.base_driven else np.zeros(0), np.full(len(joints), joint)])


def reference_trajectory(
    family: TrajectoryFamily, t: np.ndarray, scales: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Position, rate and acceleration of each driven coordinate (offsets from home)."""
    ns, d = t.size, scales.size
    x, xd, xdd = np.zeros((ns, d)), np.zeros((ns, d)), np.zeros((ns, d))
    if family == TrajectoryFamily.STATIC:
        x[:] = rng.uniform(-0.5, 0.5, size=d) * scales
    elif family == TrajectoryFamily.SINUSOIDAL:
        lo, hi = SINE_BAND_HZ
        for c in range(d):
            for i in range(SINE_COMPONENTS):
                freq = lo + (hi - lo) * ((GOLDEN * (SINE_COMPONENTS * c + i + 1)) % 1.0)
                w = 2 * np.pi * freq
                phase = rng.uniform(0.0, 2 * np.pi)
                amp = scales[c] / SINE_COMPONENTS
                x[:, c] += amp * (np.sin(w * t + phase) - np.sin(phase))
                xd[:, c] += amp * w * np.cos(w * t + phase)
                xdd[:, c] -= amp * w**2 * np.sin(w * t + phase)
    else:
        w = np.pi * CROUCH_HZ
        s, c = np.sin(w * t)[:, None], np.cos(w * t)[:, None]
        x[:] = s**4 * scales
        xd[:] = 4 * w * s**3 * c * scales
        xdd[:] = w**2 * (12 * s**2 * c**2 - 4 * s**4) * scales
    return x, xd, xdd


def euler_zyx_body_rates(
    angles: np.ndarray, rates: np.ndarray, accels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Body angular velocity and its derivative for R = Rz(yaw) Ry(pitch) Rx(roll)."""
    _, pitch, roll = angles
    dyaw, dpitch, droll = rates
    ddyaw, ddpitch, ddroll = accels
    sp, cp = np.sin(pitch), np.cos(pitch)
    sr, cr = np.sin(roll), np.cos(roll)
    w = np.array([
        droll - dyaw * sp,
        dpitch * cr + dyaw * cp * sr,
        -dpitch * sr + dyaw * cp * cr,
    ])
    dw = np.array([
        ddroll - ddyaw * sp - dyaw * dpitch * cp,
        ddpitch * cr - dpitch * droll * sr + ddyaw * cp * sr - dyaw * dpitch * sp * sr + dyaw * droll * cp * cr,
        -ddpitch * sr - dpitch * droll * cr + ddyaw * cp * cr - dyaw * dpitch * sp * cr - dyaw * droll * cp * sr,
    ])
    return w, dw


def _driven_state(model: RobotModel, part: _Partition, q_prev: np.ndarray, x, xd, xdd):
    """Configuration with driven coordinates set, plus driven velocity and acceleration (full-size vectors)."""
    q = q_prev.copy()
    v = np.zeros(model.nv)
    a = np.zeros(model.nv)
    offset = 0
    if part.base_driven:
        R = Rotation.from_euler("ZYX", x[3:6])
        w, dw = euler_zyx_body_rates(x[3:6], xd[3:6], xdd[3:6])
        Rm = R.as_matrix()
        q[0:3] = x[0:3]
        q[3:7] = R.as_quat()
        v[0:3], a[0:3] = w, dw
        v[3:6] = Rm.T @ xd[0:3]
        a[3:6] = Rm.T @ xdd[0:3] - np.cross(w, v[3:6])
        offset = 6
    home = model.home_configuration()
    for k, vi in enumerate(i for i in part.driven if i >= 6):
        q[vi + 1] = home[vi + 1] + x[offset + k]
        v[vi] = xd[offset + k]
        a[vi] = xdd[offset + k]
    return q, v, a


def solve_contact_ik(
    model: RobotModel,
    q: np.ndarray,
    contacts: ContactSet,
    targets: np.ndarray,
    dependent: tuple[int, ...],
) -> np.ndarray:
    """Newton iterations on the dependent coordinates until the contact points reach `targets`."""
    dep = list(dependent)
    residual = np.inf
    for _ in range(IK_MAX_ITER):
        r = (contact_positions(model, q, contacts) - targets).reshape(-1)
        residual = float(np.max(np.abs(r)))
        if residual < IK_TOL:
            return q
        J = contact_jacobian(model, q, contacts)[:, dep]
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        dv = np.zeros(model.nv)
        dv[dep] = step
        q = integrate(model, q, dv)
    if residual < IK_ACCEPT:
        return q
    raise ScenarioError(f"infeasible contact kinematics: residual {residual:.3e} m after {IK_MAX_ITER} iterations")


def _check_contacts(model: RobotModel, q: np.ndarray, contacts: ContactSet, part: _Partition) -> None:
    if contacts.n_e == 0:
        raise ScenarioError("a scenario needs at least one active contact frame")
    Jc = contact_jacobian(model, q, contacts)
    rank_base = np.linalg.matrix_rank(Jc[:, :6])
    if rank_base < 6:
        raise ScenarioError(
            f"contacts {list(contacts.active)} cannot balance an arbitrary base wrench (base block rank {rank_base})"
        )
    rank_dep = np.linalg.matrix_rank(Jc[:, list(part.dependent)])
    if rank_dep < len(part.dependent):
        raise ScenarioError(
            f"contact kinematics are singular at home: rank {rank_dep} for {len(part.dependent)} dependent coordinates"
        )


def generate(scenario: SynthScenario) -> SynthResult:
    model = scenario.model
    contacts = scenario.active_contacts
    part = partition_coordinates(model, contacts)
    q = model.home_configuration()
    _check_contacts(model, q, contacts, part)
    targets = contact_positions(model, q, contacts)
    dep = list(part.dependent)

    rng = np.random.default_rng(scenario.seed)
    ns = scenario.n_samples
    t = np.arange(ns) / scenario.rate_hz
    scales = _reference_scales(model, part, scenario.family) * scenario.amplitude
    x, xd, xdd = reference_trajectory(scenario.family, t, scales, rng)

    phi = stack_priors(model)
    viscous = np.full(model.n, scenario.viscous)
    coulomb = np.full(model.n, scenario.coulomb)
    Q, V, A = np.zeros((ns, model.nq)), np.zeros((ns, model.nv)), np.zeros((ns, model.nv))
    tau = np.zeros((ns, model.n))
    forces = np.zeros((ns, 3 * contacts.n_e))
    drift = 0.0
    for k in tqdm(range(ns), desc="Generating", unit="sample", disable=ns < 1000):
        q, v, a = _driven_state(model, part, q, x[k], xd[k], xdd[k])
        q = solve_contact_ik(model, q, contacts, targets, part.dependent)
        Jc = contact_jacobian(model, q, contacts)
        v[dep], *_ = np.linalg.lstsq(Jc[:, dep], -Jc @ v, rcond=None)
        bias = contact_bias_acceleration(model, q, v, contacts)
        a[dep], *_ = np.linalg.lstsq(Jc[:, dep], -Jc @ a - bias, rcond=None)
        drift = max(drift, float(np.max(np.abs(contact_positions(model, q, contacts) - targets))))

        f = inverse_dynamics(model, State(q, v, a), phi)
        lam, *_ = np.linalg.lstsq(Jc[:, :6].T, f[:6], rcond=None)
        Q[k], V[k], A[k] = q, v, a
        forces[k] = lam
        tau[k] = f[6:] - Jc[:, 6:].T @ lam + viscous * v[6:] + coulomb * friction_sign(v[6:], DEFAULT_SIGN_DEADBAND)

    if drift > DRIFT_TOL:
        raise ScenarioError(f"contact points drifted {drift:.3e} m")
    if scenario.torque_noise > 0:
        tau = tau + rng.normal(0.0, scenario.torque_noise, size=tau.shape)
    if scenario.velocity_noise > 0:
        V = V + rng.normal(0.0, scenario.velocity_noise, size=V.shape)

    motion = scenario.tag or scenario.family.value
    flags = np.array([name in contacts.active for name in model.contact_names], dtype=bool)
    dataset = Dataset(
        t=t,
        q=Q,
        v=V,
        a=A,
        tau=tau,
        contact_frames=model.contact_names,
        contact_flags=np.tile(flags, (ns, 1)),
        motions=np.array([motion] * ns, dtype=object),
        meta=DatasetMeta(source=f"synth:{motion}", model_hash=model_hash(model), rate_hz=scenario.rate_hz,
                         motion=motion),
    )
    logger.info(f"Generated {ns} samples of {motion!r}, max contact drift {drift:.2e} m")
    return SynthResult(
        dataset=dataset,
        forces=ContactForces(frames=contacts.active, values=forces),
        phi=phi,
        viscous=viscous,
        coulomb=coulomb,
    )


def write_truth(path: str | os.PathLike, result: SynthResult) -> None:
    data = {
        "phi": result.phi.tolist(),
        "viscous": result.viscous.tolist(),
        "coulomb": result.coulomb.tolist(),
        "contact_frames": list(result.forces.frames),
        "forces": result.forces.values.tolist(),
    }
    with open(path, "w") as f:
        json.dump(data, f)


@dataclass(frozen=True, eq=False)
class Truth:
    phi: Float[np.ndarray, "p"]
    viscous: Float[np.ndarray, "n"]
    coulomb: Float[np.ndarray, "n"]
    forces: ContactForces


def read_truth(path: str | os.PathLike) -> Truth:
    try:
        with open(path) as f:
            data = json.load(f)
        return Truth(
            phi=np.asarray(data["phi"], dtype=float),
            viscous=np.asarray(data["viscous"], dtype=float),
            coulomb=np.asarray(data["coulomb"], dtype=float),
            forces=ContactForces(
                frames=tuple(data["contact_frames"]),
                values=np.asarray(data["forces"], dtype=float).reshape(len(data["forces"]), -1),
            ),
        )
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"{path}: cannot read truth file: {exc}") from exc
