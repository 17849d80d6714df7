"""
Spatial-algebra kinematics and dynamics on a `RobotModel`.

Spatial motion vectors are [angular; linear] and every link quantity is expressed in that link's frame.
The root link carries the floating joint, whose velocity is the body-frame twist v[0:6]. Generalized forces
follow the same layout: the first six entries are the base wrench [moment; force] in the base frame, the
remaining ones are joint torques.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import mmh3
import numpy as np
from einops import einsum
from jaxtyping import Float
from scipy.spatial.transform import Rotation

from legid.consistency import skew
from legid.errors import StateError
from legid.model import JointType, RobotModel, stack_priors

logger = logging.getLogger(__name__)

QUATERNION_TOL = 1e-9


def crm(v: Float[np.ndarray, "6"]) -> Float[np.ndarray, "6 6"]:
    """Motion cross-product operator: crm(v) @ m == v x m."""
    out = np.zeros((6, 6))
    w = skew(v[:3])
    out[:3, :3] = w
    out[3:, :3] = skew(v[3:])
    out[3:, 3:] = w
    return out


def crf(v: Float[np.ndarray, "6"]) -> Float[np.ndarray, "6 6"]:
    """Force cross-product operator: crf(v) @ f == v x* f."""
    return -crm(v).T


def plucker(rotation: Float[np.ndarray, "3 3"], translation: Float[np.ndarray, "3"]) -> Float[np.ndarray, "6 6"]:
    """Motion transform from parent to child coordinates, the child frame being (rotation, translation)."""
    E = rotation.T
    X = np.zeros((6, 6))
    X[:3, :3] = E
    X[3:, :3] = -E @ skew(translation)
    X[3:, 3:] = E
    return X


def spatial_inertia(phi: Float[np.ndarray, "10"]) -> Float[np.ndarray, "6 6"]:
    ixx, ixy, ixz, iyy, iyz, izz = phi[4:10]
    I = np.zeros((6, 6))
    I[:3, :3] = [[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]]
    I[:3, 3:] = skew(phi[1:4])
    I[3:, :3] = skew(phi[1:4]).T
    I[3:, 3:] = phi[0] * np.eye(3)
    return I


SPATIAL_INERTIA_BASIS: Float[np.ndarray, "10 6 6"] = np.stack([spatial_inertia(e) for e in np.eye(10)])


@dataclass(frozen=True, eq=False)
class State:
    q: Float[np.ndarray, "nq"]
    v: Float[np.ndarray, "nv"]
    a: Float[np.ndarray, "nv"]

    def __post_init__(self):
        for name in ("q", "v", "a"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    def fingerprint(self) -> str:
        data = np.concatenate([self.q, self.v, self.a]).tobytes()
        return format(mmh3.hash128(data, signed=False), "032x")


@dataclass(frozen=True, eq=False)
class Regressor:
    Y: Float[np.ndarray, "nv p"]
    state_hash: str


@dataclass(frozen=True, eq=False)
class WorldPoses:
    """Homogeneous 4x4 world poses keyed by link and contact frame name."""

    links: dict[str, Float[np.ndarray, "4 4"]]
    contacts: dict[str, Float[np.ndarray, "4 4"]]


def check_configuration(model: RobotModel, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.nq,):
        raise StateError(f"configuration has shape {q.shape}, model expects ({model.nq},)")
    norm = np.linalg.norm(q[3:7])
    if abs(norm - 1.0) > QUATERNION_TOL:
        raise StateError(f"base quaternion norm is {norm!r}, expected 1 within {QUATERNION_TOL:g}")
    return q


def check_state(model: RobotModel, state: State) -> State:
    check_configuration(model, state.q)
    for name in ("v", "a"):
        shape = getattr(state, name).shape
        if shape != (model.nv,):
            raise StateError(f"{name} has shape {shape}, model expects ({model.nv},)")
    return state


def base_rotation(q: np.ndarray) -> Float[np.ndarray, "3 3"]:
    return Rotation.from_quat(q[3:7]).as_matrix()


def _joint_motion(model: RobotModel, link: int, coordinate: float) -> tuple[np.ndarray, np.ndarray]:
    """Rotation and translation of the child frame relative to the joint frame."""
    joint = model.joints[model.topology.joint[link]]
    if joint.type == JointType.REVOLUTE:
        return Rotation.from_rotvec(joint.axis * coordinate).as_matrix(), np.zeros(3)
    return np.eye(3), joint.axis * coordinate


def _motion_subspace(model: RobotModel, link: int) -> Float[np.ndarray, "6 k"]:
    if link == model.topology.root:
        return np.eye(6)
    joint = model.joints[model.topology.joint[link]]
    S = np.zeros((6, 1))
    if joint.type == JointType.REVOLUTE:
        S[:3, 0] = joint.axis
    else:
        S[3:, 0] = joint.axis
    return S


def _velocity_slice(model: RobotModel, link: int) -> slice:
    if link == model.topology.root:
        return slice(0, 6)
    k = model.topology.v_index[link]
    return slice(k, k + 1)


@dataclass
class _Kinematics:
    X_up: list[np.ndarray | None]
    v: list[np.ndarray]
    a: list[np.ndarray]
    S: list[np.ndarray]


def _kinematics(model: RobotModel, q, v, a, gravity: bool = True) -> _Kinematics:
    """Forward pass of the recursive Newton-Euler algorithm."""
    topo = model.topology
    nb = model.n_b
    X_up: list = [None] * nb
    vel: list = [None] * nb
    acc: list = [None] * nb
    S_all: list = [None] * nb
    for i in topo.order:
        S = _motion_subspace(model, i)
        S_all[i] = S
        if i == topo.root:
            vel[i] = np.array(v[0:6], dtype=float)
            acc[i] = np.array(a[0:6], dtype=float)
            if gravity:
                acc[i][3:] -= base_rotation(q).T @ model.gravity
            continue
        joint = model.joints[topo.joint[i]]
        R_J, p_J = _joint_motion(model, i, q[topo.q_index[i]])
        X = plucker(R_J, p_J) @ plucker(joint.placement.rotation, joint.placement.xyz)
        X_up[i] = X
        qd = v[topo.v_index[i]]
        qdd = a[topo.v_index[i]]
        p = topo.parent[i]
        vel[i] = X @ vel[p] + S[:, 0] * qd
        acc[i] = X @ acc[p] + S[:, 0] * qdd + crm(vel[i]) @ S[:, 0] * qd
    return _Kinematics(X_up=X_up, v=vel, a=acc, S=S_all)


def _link_params(model: RobotModel, params) -> np.ndarray:
    phi = stack_priors(model) if params is None else np.asarray(params, dtype=float)
    if phi.shape != (10 * model.n_b,):
        raise StateError(f"expected {10 * model.n_b} inertial parameters, got shape {phi.shape}")
    return phi.reshape(model.n_b, 10)


def inverse_dynamics(
    model: RobotModel, state: State, params: Float[np.ndarray, "p"] | None = None
) -> Float[np.ndarray, "nv"]:
    """M(q) a + n(q, v) with the model priors, or with `params` (stacked, link order) when given."""
    check_state(model, state)
    phi = _link_params(model, params)
    kin = _kinematics(model, state.q, state.v, state.a)
    topo = model.topology
    forces = []
    for i in range(model.n_b):
        I = spatial_inertia(phi[i])
        forces.append(I @ kin.a[i] + crf(kin.v[i]) @ I @ kin.v[i])
    tau = np.zeros(model.nv)
    for i in reversed(topo.order):
        tau[_velocity_slice(model, i)] = kin.S[i].T @ forces[i]
        p = topo.parent[i]
        if p >= 0:
            forces[p] = forces[p] + kin.X_up[i].T @ forces[i]
    return tau


def bias_forces(model: RobotModel, q, v, params=None) -> Float[np.ndarray, "nv"]:
    """n(q, v): Coriolis, centrifugal and gravity terms."""
    return inverse_dynamics(model, State(q, v, np.zeros(model.nv)), params)


def mass_matrix(model: RobotModel, q, params=None) -> Float[np.ndarray, "nv nv"]:
    """Joint-space inertia matrix by the composite rigid body algorithm."""
    q = check_configuration(model, q)
    phi = _link_params(model, params)
    zeros = np.zeros(model.nv)
    kin = _kinematics(model, q, zeros, zeros, gravity=False)
    topo = model.topology
    Ic = [spatial_inertia(phi[i]) for i in range(model.n_b)]
    for i in reversed(topo.order):
        p = topo.parent[i]
        if p >= 0:
            Ic[p] = Ic[p] + kin.X_up[i].T @ Ic[i] @ kin.X_up[i]
    H = np.zeros((model.nv, model.nv))
    for i in topo.order:
        si = _velocity_slice(model, i)
        F = Ic[i] @ kin.S[i]
        H[si, si] = kin.S[i].T @ F
        j = i
        while topo.parent[j] >= 0:
            F = kin.X_up[j].T @ F
            j = topo.parent[j]
            sj = _velocity_slice(model, j)
            H[si, sj] = F.T @ kin.S[j]
            H[sj, si] = H[si, sj].T
    return H


def regressor(model: RobotModel, state: State) -> Regressor:
    """Y(q, v, a) with Y @ phi == inverse_dynamics(model with params phi, state) for every phi.

    Column block j holds the generalized forces produced by the ten unit parameters of link j; the forward
    pass is shared since it does not depend on the inertial parameters.
    """
    check_state(model, state)
    kin = _kinematics(model, state.q, state.v, state.a)
    topo = model.topology
    Y = np.zeros((model.nv, 10 * model.n_b))
    for j in range(model.n_b):
        inertia_a = einsum(SPATIAL_INERTIA_BASIS, kin.a[j], "param row col, col -> row param")
        inertia_v = einsum(SPATIAL_INERTIA_BASIS, kin.v[j], "param row col, col -> row param")
        F = inertia_a + crf(kin.v[j]) @ inertia_v
        i = j
        while True:
            Y[_velocity_slice(model, i), 10 * j : 10 * j + 10] = kin.S[i].T @ F
            if topo.parent[i] < 0:
                break
            F = kin.X_up[i].T @ F
            i = topo.parent[i]
    return Regressor(Y=Y, state_hash=state.fingerprint())


def _world_transforms(model: RobotModel, q) -> list[np.ndarray]:
    topo = model.topology
    T = [None] * model.n_b
    for i in topo.order:
        if i == topo.root:
            T[i] = np.eye(4)
            T[i][:3, :3] = base_rotation(q)
            T[i][:3, 3] = q[0:3]
            continue
        joint = model.joints[topo.joint[i]]
        R_J, p_J = _joint_motion(model, i, q[topo.q_index[i]])
        motion = np.eye(4)
        motion[:3, :3] = R_J
        motion[:3, 3] = p_J
        T[i] = T[topo.parent[i]] @ joint.placement.matrix @ motion
    return T


def forward_kinematics(model: RobotModel, q: Float[np.ndarray, "nq"]) -> WorldPoses:
    q = check_configuration(model, q)
    T = _world_transforms(model, q)
    contacts = {}
    for i, link in enumerate(model.links):
        for frame in link.contact_frames:
            contacts[frame.name] = T[i] @ frame.placement.matrix
    return WorldPoses(links={link.name: T[i] for i, link in enumerate(model.links)}, contacts=contacts)


def _contact_entries(model: RobotModel, contacts) -> list[tuple[int, np.ndarray]]:
    names = getattr(contacts, "active", contacts)
    entries = []
    for name in names:
        if name not in model.topology.contacts:
            raise StateError(f"unknown contact frame {name!r}")
        entries.append(model.topology.contacts[name])
    return entries


def contact_positions(model: RobotModel, q, contacts) -> Float[np.ndarray, "ne 3"]:
    """World positions of the listed contact points."""
    q = check_configuration(model, q)
    T = _world_transforms(model, q)
    entries = _contact_entries(model, contacts)
    return np.array([T[i][:3, :3] @ r + T[i][:3, 3] for i, r in entries]).reshape(len(entries), 3)


def contact_jacobian(model: RobotModel, q: Float[np.ndarray, "nq"], contacts) -> Float[np.ndarray, "m nv"]:
    """Stacked world-aligned translational Jacobians of the active contact points."""
    q = check_configuration(model, q)
    entries = _contact_entries(model, contacts)
    Jc = np.zeros((3 * len(entries), model.nv))
    if not entries:
        return Jc
    T = _world_transforms(model, q)
    topo = model.topology
    R_b, p_b = T[topo.root][:3, :3], T[topo.root][:3, 3]
    for k, (link, r) in enumerate(entries):
        rows = slice(3 * k, 3 * k + 3)
        point = T[link][:3, :3] @ r + T[link][:3, 3]
        Jc[rows, 0:3] = -R_b @ skew(R_b.T @ (point - p_b))
        Jc[rows, 3:6] = R_b
        for i in model.ancestors(link)[:-1]:
            joint = model.joints[topo.joint[i]]
            axis = T[i][:3, :3] @ joint.axis
            col = topo.v_index[i]
            if joint.type == JointType.REVOLUTE:
                Jc[rows, col] = np.cross(axis, point - T[i][:3, 3])
            else:
                Jc[rows, col] = axis
    return Jc


def contact_bias_acceleration(model: RobotModel, q, v, contacts) -> Float[np.ndarray, "m"]:
    """Jc_dot @ v: contact point accelerations (world frame) at zero generalized acceleration."""
    q = check_configuration(model, q)
    entries = _contact_entries(model, contacts)
    if not entries:
        return np.zeros(0)
    kin = _kinematics(model, q, v, np.zeros(model.nv), gravity=False)
    T = _world_transforms(model, q)
    out = []
    for link, r in entries:
        w, lin = kin.v[link][:3], kin.v[link][3:]
        dw, dlin = kin.a[link][:3], kin.a[link][3:]
        local = dlin + np.cross(dw, r) + np.cross(w, lin + np.cross(w, r))
        out.append(T[link][:3, :3] @ local)
    return np.concatenate(out)


def integrate(model: RobotModel, q: Float[np.ndarray, "nq"], dv: Float[np.ndarray, "nv"]) -> Float[np.ndarray, "nq"]:
    """Configuration reached by moving along the velocity-space displacement `dv` (body-frame base twist)."""
    q = np.asarray(q, dtype=float)
    out = q.copy()
    R = base_rotation(q)
    out[0:3] = q[0:3] + R @ dv[3:6]
    quat = (Rotation.from_quat(q[3:7]) * Rotation.from_rotvec(dv[0:3])).as_quat()
    out[3:7] = quat / np.linalg.norm(quat)
    out[7:] = q[7:] + dv[6:]
    return out
