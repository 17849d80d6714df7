"""Contact-constraint null-space projection of the floating-base dynamics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from jaxtyping import Float
from scipy.linalg import orth

logger = logging.getLogger(__name__)

DEFAULT_SVD_CUTOFF = 1e-8
DEFAULT_SIGN_DEADBAND = 1e-3


@dataclass(frozen=True)
class ContactSet:
    active: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "active", tuple(self.active))
        if len(set(self.active)) != len(self.active):
            raise ValueError(f"duplicate contact frames in {self.active}")

    @property
    def n_e(self) -> int:
        return len(self.active)


@dataclass(frozen=True, eq=False)
class Projector:
    P: Float[np.ndarray, "nv nv"]
    rank_deficiency: int
    svd_cutoff: float = DEFAULT_SVD_CUTOFF


@dataclass(frozen=True, eq=False)
class ProjectedSample:
    """One sample of the projected regression: A @ phi ~ torque - viscous @ bv - coulomb @ bc."""

    A: Float[np.ndarray, "nv p"]
    torque: Float[np.ndarray, "nv"]
    viscous: Float[np.ndarray, "nv n"] = field(repr=False)
    coulomb: Float[np.ndarray, "nv n"] = field(repr=False)

    def measurement(self, viscous: np.ndarray | None = None, coulomb: np.ndarray | None = None) -> np.ndarray:
        out = self.torque.copy()
        if viscous is not None:
            out -= self.viscous @ viscous
        if coulomb is not None:
            out -= self.coulomb @ coulomb
        return out


def projector(Jc: Float[np.ndarray, "m nv"], svd_cutoff: float = DEFAULT_SVD_CUTOFF) -> Projector:
    """P = 1 - pinv(Jc) @ Jc, singular values below svd_cutoff * sigma_max treated as zero."""
    Jc = np.asarray(Jc, dtype=float)
    nv = Jc.shape[1]
    if Jc.shape[0] == 0 or not np.any(Jc):
        return Projector(P=np.eye(nv), rank_deficiency=0, svd_cutoff=svd_cutoff)
    row_space = orth(Jc.T, rcond=svd_cutoff)
    P = np.eye(nv) - row_space @ row_space.T
    return Projector(P=0.5 * (P + P.T), rank_deficiency=row_space.shape[1], svd_cutoff=svd_cutoff)


def friction_sign(v: np.ndarray, deadband: float = DEFAULT_SIGN_DEADBAND) -> np.ndarray:
    """sign(v) with |v| < deadband mapped to 0."""
    v = np.asarray(v, dtype=float)
    return np.where(np.abs(v) < deadband, 0.0, np.sign(v))


def project_sample(
    Y: Float[np.ndarray, "nv p"],
    tau: Float[np.ndarray, "n"],
    v_joints: Float[np.ndarray, "n"],
    P: Projector,
    deadband: float = DEFAULT_SIGN_DEADBAND,
) -> ProjectedSample:
    Y = getattr(Y, "Y", Y)
    Pm = P.P
    actuated = Pm[:, 6:]
    return ProjectedSample(
        A=Pm @ Y,
        torque=actuated @ np.asarray(tau, dtype=float),
        viscous=actuated * np.asarray(v_joints, dtype=float),
        coulomb=actuated * friction_sign(v_joints, deadband),
    )
