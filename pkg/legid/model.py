"""
Robot description: a kinematic tree of links joined by revolute, prismatic and one floating joint.

Model files are YAML documents with two lists, `links` and `joints`:

    gravity: [0.0, 0.0, -9.81]
    links:
      - name: base
        mass: 5.0                                 # kg
        com: [0.0, 0.0, 0.0]                      # m, link frame
        inertia: [ixx, ixy, ixz, iyy, iyz, izz]   # kg m^2, about the CoM, link axes
        ellipsoid: {center: [...], semi_axes: [...]}   # optional
        contacts:
          - {name: foot, xyz: [...], rpy: [...]}
    joints:
      - {name: root, type: floating, parent: world, child: base}
      - {name: hip, type: revolute, axis: [1, 0, 0], parent: base, child: thigh,
         xyz: [...], rpy: [...], home: 0.0, viscous: 0.0, coulomb: 0.0}

Link order fixes the block order of the stacked parameter vector. Velocities use a body-frame base twist
[omega, v] followed by the joint rates; positions use [p, quaternion (x, y, z, w), joint coordinates].
"""

from __future__ import annotations

import enum
import logging
import os
from dataclasses import dataclass, field, replace
from functools import cached_property

import mmh3
import numpy as np
import yaml
from jaxtyping import Float
from omegaconf import OmegaConf
from scipy.spatial.transform import Rotation

from legid.consistency import EllipsoidBound, com_parts, is_fully_consistent, params_from_com
from legid.errors import ModelError

logger = logging.getLogger(__name__)

WORLD = "world"
DEFAULT_GRAVITY = (0.0, 0.0, -9.81)


class JointType(str, enum.Enum):
    REVOLUTE = "revolute"
    PRISMATIC = "prismatic"
    FLOATING = "floating"


@dataclass(frozen=True, eq=False)
class Placement:
    """Rigid transform: rotation from roll-pitch-yaw (fixed xyz axes) and a translation in meters."""

    xyz: Float[np.ndarray, "3"] = field(default_factory=lambda: np.zeros(3))
    rpy: Float[np.ndarray, "3"] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "xyz", np.asarray(self.xyz, dtype=float).reshape(3))
        object.__setattr__(self, "rpy", np.asarray(self.rpy, dtype=float).reshape(3))

    @cached_property
    def rotation(self) -> Float[np.ndarray, "3 3"]:
        return Rotation.from_euler("xyz", self.rpy).as_matrix()

    @cached_property
    def matrix(self) -> Float[np.ndarray, "4 4"]:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.xyz
        return T

    @property
    def is_identity(self) -> bool:
        return not np.any(self.xyz) and not np.any(self.rpy)


@dataclass(frozen=True, eq=False)
class ContactFrame:
    name: str
    placement: Placement


@dataclass(frozen=True, eq=False)
class JointSpec:
    name: str
    type: JointType
    parent_link: str
    child_link: str
    axis: Float[np.ndarray, "3"] = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    placement: Placement = field(default_factory=Placement)
    home: float = 0.0
    viscous: float = 0.0
    coulomb: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "axis", np.asarray(self.axis, dtype=float).reshape(3))


@dataclass(frozen=True, eq=False)
class LinkSpec:
    """A link as written in the model file; `prior_params` is derived from mass, com and inertia."""

    name: str
    mass: float
    com: Float[np.ndarray, "3"]
    inertia: Float[np.ndarray, "6"]
    ellipsoid: EllipsoidBound | None = None
    contact_frames: tuple[ContactFrame, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "com", np.asarray(self.com, dtype=float).reshape(3))
        object.__setattr__(self, "inertia", np.asarray(self.inertia, dtype=float).reshape(6))

    @cached_property
    def prior_params(self) -> Float[np.ndarray, "10"]:
        ixx, ixy, ixz, iyy, iyz, izz = self.inertia
        inertia_com = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
        return params_from_com(self.mass, self.com, inertia_com)

    @cached_property
    def bounding_ellipsoid(self) -> EllipsoidBound:
        return self.ellipsoid if self.ellipsoid is not None else EllipsoidBound.default_for(self.prior_params)

    @classmethod
    def from_params(cls, template: LinkSpec, phi: Float[np.ndarray, "10"]) -> LinkSpec:
        """Copy of `template` whose mass, com and inertia reproduce `phi`."""
        mass, com, inertia_com = com_parts(phi)
        inertia = inertia_com[[0, 0, 0, 1, 1, 2], [0, 1, 2, 1, 2, 2]]
        return replace(template, mass=mass, com=com, inertia=inertia)


@dataclass(frozen=True)
class Topology:
    """Index tables derived from a validated model."""

    parent: tuple[int, ...]
    joint: tuple[int | None, ...]
    order: tuple[int, ...]
    q_index: tuple[int | None, ...]
    v_index: tuple[int | None, ...]
    contacts: dict[str, tuple[int, Float[np.ndarray, "3"]]]
    root: int


@dataclass(frozen=True, eq=False)
class RobotModel:
    links: tuple[LinkSpec, ...]
    joints: tuple[JointSpec, ...]
    gravity: Float[np.ndarray, "3"] = field(default_factory=lambda: np.array(DEFAULT_GRAVITY))
    name: str = "robot"

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float).reshape(3))

    @property
    def n(self) -> int:
        return sum(1 for j in self.joints if j.type != JointType.FLOATING)

    @property
    def n_b(self) -> int:
        return len(self.links)

    @property
    def nq(self) -> int:
        return self.n + 7

    @property
    def nv(self) -> int:
        return self.n + 6

    @property
    def actuated_joints(self) -> tuple[JointSpec, ...]:
        return tuple(j for j in self.joints if j.type != JointType.FLOATING)

    @property
    def link_names(self) -> tuple[str, ...]:
        return tuple(link.name for link in self.links)

    @property
    def contact_names(self) -> tuple[str, ...]:
        return tuple(c.name for link in self.links for c in link.contact_frames)

    @property
    def velocity_names(self) -> tuple[str, ...]:
        base = ("base_wx", "base_wy", "base_wz", "base_vx", "base_vy", "base_vz")
        return base + tuple(j.name for j in self.actuated_joints)

    @cached_property
    def topology(self) -> Topology:
        index = {link.name: i for i, link in enumerate(self.links)}
        parent = [-1] * self.n_b
        joint_of = [None] * self.n_b
        q_index = [None] * self.n_b
        v_index = [None] * self.n_b
        root = -1
        coordinate = 0
        for k, joint in enumerate(self.joints):
            child = index[joint.child_link]
            joint_of[child] = k
            if joint.type == JointType.FLOATING:
                root = child
                continue
            parent[child] = index[joint.parent_link]
            q_index[child] = 7 + coordinate
            v_index[child] = 6 + coordinate
            coordinate += 1

        children = {i: [] for i in range(self.n_b)}
        for i, p in enumerate(parent):
            if p >= 0:
                children[p].append(i)
        order, stack = [], [root]
        while stack:
            i = stack.pop()
            order.append(i)
            stack.extend(reversed(children[i]))

        contacts = {
            frame.name: (i, frame.placement.xyz)
            for i, link in enumerate(self.links)
            for frame in link.contact_frames
        }
        return Topology(
            parent=tuple(parent),
            joint=tuple(joint_of),
            order=tuple(order),
            q_index=tuple(q_index),
            v_index=tuple(v_index),
            contacts=contacts,
            root=root,
        )

    def link_index(self, name: str) -> int:
        for i, link in enumerate(self.links):
            if link.name == name:
                return i
        raise ModelError(f"unknown link {name!r}")

    def ancestors(self, link: int) -> list[int]:
        """Link indices from `link` up to and including the root."""
        chain = [link]
        while self.topology.parent[chain[-1]] >= 0:
            chain.append(self.topology.parent[chain[-1]])
        return chain

    def home_configuration(self) -> Float[np.ndarray, "nq"]:
        q = np.zeros(self.nq)
        q[6] = 1.0
        q[7:] = [j.home for j in self.actuated_joints]
        return q

    @property
    def viscous(self) -> Float[np.ndarray, "n"]:
        return np.array([j.viscous for j in self.actuated_joints])

    @property
    def coulomb(self) -> Float[np.ndarray, "n"]:
        return np.array([j.coulomb for j in self.actuated_joints])

    def with_params(
        self,
        phi: Float[np.ndarray, "p"],
        viscous: Float[np.ndarray, "n"] | None = None,
        coulomb: Float[np.ndarray, "n"] | None = None,
    ) -> RobotModel:
        """Copy of the model with priors (and optionally friction) replaced."""
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (10 * self.n_b,):
            raise ModelError(f"expected {10 * self.n_b} parameters, got {phi.shape}")
        links = tuple(
            LinkSpec.from_params(link, phi[10 * i : 10 * i + 10]) for i, link in enumerate(self.links)
        )
        joints = list(self.joints)
        if viscous is not None or coulomb is not None:
            k = 0
            for i, joint in enumerate(joints):
                if joint.type == JointType.FLOATING:
                    continue
                joints[i] = replace(
                    joint,
                    viscous=float(viscous[k]) if viscous is not None else joint.viscous,
                    coulomb=float(coulomb[k]) if coulomb is not None else joint.coulomb,
                )
                k += 1
        return replace(self, links=links, joints=tuple(joints))


def stack_priors(model: RobotModel) -> Float[np.ndarray, "p"]:
    return np.concatenate([link.prior_params for link in model.links])


def validate_model(model: RobotModel, epsilon: float = 0.0) -> RobotModel:
    """Check every model invariant, raising ModelError naming the first violation."""
    link_names = [link.name for link in model.links]
    if len(set(link_names)) != len(link_names):
        raise ModelError(f"duplicate link names in {link_names}")
    joint_names = [joint.name for joint in model.joints]
    if len(set(joint_names)) != len(joint_names):
        raise ModelError(f"duplicate joint names in {joint_names}")
    contact_names = list(model.contact_names)
    if len(set(contact_names)) != len(contact_names):
        raise ModelError(f"duplicate contact frame names in {contact_names}")

    floating = [j for j in model.joints if j.type == JointType.FLOATING]
    if len(floating) > 1:
        raise ModelError(f"multiple floating joints: {[j.name for j in floating]}")
    if not floating:
        raise ModelError("no floating joint: the tree root must be attached to the world by a floating joint")
    if floating[0].parent_link != WORLD:
        raise ModelError(f"floating joint {floating[0].name!r} must have parent {WORLD!r}")
    if not floating[0].placement.is_identity:
        raise ModelError(f"floating joint {floating[0].name!r} placement must be the identity")

    known = set(link_names)
    children = {}
    for joint in model.joints:
        if joint.child_link not in known:
            raise ModelError(f"joint {joint.name!r}: unknown child link {joint.child_link!r}")
        if joint.type != JointType.FLOATING and joint.parent_link not in known:
            raise ModelError(f"joint {joint.name!r}: unknown parent link {joint.parent_link!r}")
        if joint.child_link in children:
            raise ModelError(
                f"link {joint.child_link!r} is the child of both {children[joint.child_link]!r} and {joint.name!r}"
            )
        children[joint.child_link] = joint.name
        if joint.type != JointType.FLOATING and abs(np.linalg.norm(joint.axis) - 1.0) > 1e-9:
            raise ModelError(f"joint {joint.name!r}: axis {joint.axis.tolist()} is not a unit vector")
    orphans = known - set(children)
    if orphans:
        raise ModelError(f"links without a parent joint: {sorted(orphans)}")

    # every link must reach the floating root without revisiting a link
    parent_of = {j.child_link: j.parent_link for j in model.joints}
    for name in link_names:
        seen, cursor = set(), name
        while cursor != WORLD:
            if cursor in seen:
                raise ModelError(f"kinematic loop through link {cursor!r}")
            seen.add(cursor)
            cursor = parent_of[cursor]

    for link in model.links:
        report = is_fully_consistent(link.prior_params, link.bounding_ellipsoid, epsilon=epsilon, link=link.name)
        if not report:
            raise ModelError(f"link {link.name!r}: inconsistent prior inertia: {'; '.join(report.violations())}")
    return model


def _vector(value, where: str, size: int) -> np.ndarray:
    try:
        out = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"{where}: expected {size} numbers, got {value!r}") from exc
    if out.shape != (size,):
        raise ModelError(f"{where}: expected {size} numbers, got {value!r}")
    return out


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ModelError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _require(entry: dict, key: str, where: str):
    if key not in entry:
        raise ModelError(f"{where}: missing field {key!r}")
    return entry[key]


def _placement(entry: dict, where: str) -> Placement:
    return Placement(
        xyz=_vector(entry.get("xyz", [0.0, 0.0, 0.0]), f"{where}.xyz", 3),
        rpy=_vector(entry.get("rpy", [0.0, 0.0, 0.0]), f"{where}.rpy", 3),
    )


def _parse_link(entry: dict, where: str) -> LinkSpec:
    ellipsoid = None
    if entry.get("ellipsoid") is not None:
        e = entry["ellipsoid"]
        semi_axes = _vector(_require(e, "semi_axes", f"{where}.ellipsoid"), f"{where}.ellipsoid.semi_axes", 3)
        if not np.all(semi_axes > 0):
            raise ModelError(f"{where}.ellipsoid.semi_axes: must be strictly positive, got {semi_axes.tolist()}")
        ellipsoid = EllipsoidBound(
            center=_vector(e.get("center", [0.0, 0.0, 0.0]), f"{where}.ellipsoid.center", 3), semi_axes=semi_axes
        )
    contacts = tuple(
        ContactFrame(
            name=str(_require(c, "name", f"{where}.contacts[{k}]")),
            placement=_placement(c, f"{where}.contacts[{k}]"),
        )
        for k, c in enumerate(entry.get("contacts") or [])
    )
    return LinkSpec(
        name=str(_require(entry, "name", where)),
        mass=_number(_require(entry, "mass", where), f"{where}.mass"),
        com=_vector(entry.get("com", [0.0, 0.0, 0.0]), f"{where}.com", 3),
        inertia=_vector(_require(entry, "inertia", where), f"{where}.inertia", 6),
        ellipsoid=ellipsoid,
        contact_frames=contacts,
    )


def _parse_joint(entry: dict, where: str) -> JointSpec:
    kind = str(_require(entry, "type", where))
    try:
        joint_type = JointType(kind)
    except ValueError as exc:
        raise ModelError(f"{where}.type: unknown joint type {kind!r}") from exc
    return JointSpec(
        name=str(_require(entry, "name", where)),
        type=joint_type,
        parent_link=str(_require(entry, "parent", where)),
        child_link=str(_require(entry, "child", where)),
        axis=_vector(entry.get("axis", [0.0, 0.0, 1.0]), f"{where}.axis", 3),
        placement=_placement(entry, where),
        home=_number(entry.get("home", 0.0), f"{where}.home"),
        viscous=_number(entry.get("viscous", 0.0), f"{where}.viscous"),
        coulomb=_number(entry.get("coulomb", 0.0), f"{where}.coulomb"),
    )


def model_from_dict(data: dict, source: str = "<model>") -> RobotModel:
    if not isinstance(data, dict):
        raise ModelError(f"{source}: expected a mapping at the top level")
    links = data.get("links")
    joints = data.get("joints")
    if not links:
        raise ModelError(f"{source}: no links")
    if not joints:
        raise ModelError(f"{source}: no joints")
    model = RobotModel(
        links=tuple(_parse_link(entry, f"{source}: links[{k}]") for k, entry in enumerate(links)),
        joints=tuple(_parse_joint(entry, f"{source}: joints[{k}]") for k, entry in enumerate(joints)),
        gravity=_vector(data.get("gravity", list(DEFAULT_GRAVITY)), f"{source}: gravity", 3),
        name=str(data.get("name", "robot")),
    )
    return validate_model(model)


def load_model(path: str | os.PathLike) -> RobotModel:
    """Load and validate a model description file."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ModelError(f"model file not found: {path}")
    try:
        data = OmegaConf.to_container(OmegaConf.load(path), resolve=True)
    except yaml.YAMLError as exc:
        raise ModelError(f"{path}: parse error: {exc}") from exc
    model = model_from_dict(data, source=path)
    logger.info(f"Loaded model {model.name!r} from {path}: n={model.n}, n_b={model.n_b}")
    return model


def _placement_dict(placement: Placement) -> dict:
    return {"xyz": placement.xyz.tolist(), "rpy": placement.rpy.tolist()}


def model_to_dict(model: RobotModel) -> dict:
    links = []
    for link in model.links:
        entry = {
            "name": link.name,
            "mass": float(link.mass),
            "com": link.com.tolist(),
            "inertia": link.inertia.tolist(),
        }
        if link.ellipsoid is not None:
            entry["ellipsoid"] = {
                "center": link.ellipsoid.center.tolist(),
                "semi_axes": link.ellipsoid.semi_axes.tolist(),
            }
        if link.contact_frames:
            entry["contacts"] = [{"name": c.name, **_placement_dict(c.placement)} for c in link.contact_frames]
        links.append(entry)
    joints = []
    for joint in model.joints:
        entry = {"name": joint.name, "type": joint.type.value, "parent": joint.parent_link, "child": joint.child_link}
        if joint.type != JointType.FLOATING:
            entry.update(
                axis=joint.axis.tolist(),
                **_placement_dict(joint.placement),
                home=float(joint.home),
                viscous=float(joint.viscous),
                coulomb=float(joint.coulomb),
            )
        joints.append(entry)
    return {"name": model.name, "gravity": model.gravity.tolist(), "links": links, "joints": joints}


def save_model(path: str | os.PathLike, model: RobotModel) -> None:
    OmegaConf.save(OmegaConf.create(model_to_dict(model)), os.fspath(path))


def model_hash(model: RobotModel) -> str:
    """Fingerprint of the kinematic structure; inertial parameters and friction do not enter it."""
    data = model_to_dict(model)
    for link in data["links"]:
        for key in ("mass", "com", "inertia", "ellipsoid"):
            link.pop(key, None)
    for joint in data["joints"]:
        for key in ("viscous", "coulomb"):
            joint.pop(key, None)
    text = OmegaConf.to_yaml(OmegaConf.create(data))
    return format(mmh3.hash128(text, signed=False), "032x")
