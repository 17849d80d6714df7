"""
Inertial parameter algebra and physical-consistency constraints.

A rigid body is described by the 10-vector

    phi = [m, hx, hy, hz, ixx, ixy, ixz, iyy, iyz, izz]

with h = m * c the first moment and the inertia entries taken about the link-frame origin. The
pseudo-inertia matrix J(phi) = [[K, h], [h^T, m]], K = tr(I)/2 * 1 - I, is linear in phi. Full consistency
inside a bounding ellipsoid is J >= eps * 1, C(phi) >= 0 (CoM inside the ellipsoid) and tr(J Q) >= 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from jaxtyping import Float

logger = logging.getLogger(__name__)

PARAM_NAMES = ("m", "hx", "hy", "hz", "ixx", "ixy", "ixz", "iyy", "iyz", "izz")

# (row, col) of each inertia entry in the 3x3 tensor
_INERTIA_SLOTS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


@dataclass(frozen=True, eq=False)
class EllipsoidBound:
    """Axis-aligned ellipsoid in the link frame containing the body's mass."""

    center: Float[np.ndarray, "3"]
    semi_axes: Float[np.ndarray, "3"]

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "semi_axes", np.asarray(self.semi_axes, dtype=float).reshape(3))
        if not np.all(self.semi_axes > 0):
            raise ValueError(f"ellipsoid semi-axes must be strictly positive, got {self.semi_axes.tolist()}")

    @property
    def qs(self) -> Float[np.ndarray, "3 3"]:
        return np.diag(self.semi_axes**2)

    def contains(self, point: Float[np.ndarray, "3"]) -> bool:
        d = (np.asarray(point) - self.center) / self.semi_axes
        return float(d @ d) <= 1.0

    @classmethod
    def default_for(cls, phi: Float[np.ndarray, "10"], floor: float = 0.05) -> EllipsoidBound:
        """Isotropic bound at the link origin, 1.5x the RMS mass distance, at least `floor` meters.

        The radius scales sqrt(tr(K)/m) rather than the CoM distance |h|/m. The RMS distance is never smaller
        than the CoM distance, so the prior itself always satisfies the trace condition of its own bound; a
        CoM-distance radius can leave an extended prior outside it.
        """
        m = phi[0]
        k_trace = np.trace(pseudo_inertia(phi)[:3, :3])
        rms = np.sqrt(max(k_trace, 0.0) / m) if m > 0 else 0.0
        radius = max(1.5 * rms, floor)
        return cls(center=np.zeros(3), semi_axes=np.full(3, radius))


def skew(x: Float[np.ndarray, "3"]) -> Float[np.ndarray, "3 3"]:
    return np.array(
        [
            [0.0, -x[2], x[1]],
            [x[2], 0.0, -x[0]],
            [-x[1], x[0], 0.0],
        ]
    )


def inertia_matrix(phi: Float[np.ndarray, "10"]) -> Float[np.ndarray, "3 3"]:
    """Rotational inertia about the link origin as a symmetric 3x3 tensor."""
    inertia = np.zeros((3, 3))
    for (r, c), value in zip(_INERTIA_SLOTS, phi[4:10]):
        inertia[r, c] = value
        inertia[c, r] = value
    return inertia


def params_from_parts(
    mass: float, first_moment: Float[np.ndarray, "3"], inertia: Float[np.ndarray, "3 3"]
) -> Float[np.ndarray, "10"]:
    """Build phi from mass, first moment h and inertia about the link origin."""
    phi = np.empty(10)
    phi[0] = mass
    phi[1:4] = first_moment
    phi[4:10] = [inertia[r, c] for r, c in _INERTIA_SLOTS]
    return phi


def params_from_com(
    mass: float, com: Float[np.ndarray, "3"], inertia_com: Float[np.ndarray, "3 3"]
) -> Float[np.ndarray, "10"]:
    """Build phi from mass, CoM and inertia about the CoM (parallel axis theorem)."""
    com = np.asarray(com, dtype=float)
    inertia_origin = np.asarray(inertia_com, dtype=float) + mass * (com @ com * np.eye(3) - np.outer(com, com))
    return params_from_parts(mass, mass * com, inertia_origin)


def com_parts(phi: Float[np.ndarray, "10"]) -> tuple[float, Float[np.ndarray, "3"], Float[np.ndarray, "3 3"]]:
    """Inverse of `params_from_com`.

    Returns:
        A tuple of (mass, com, inertia about the com). Requires m > 0.
    """
    m = float(phi[0])
    if m <= 0:
        raise ValueError(f"mass must be positive to recover a CoM, got {m}")
    com = phi[1:4] / m
    inertia_com = inertia_matrix(phi) - m * (com @ com * np.eye(3) - np.outer(com, com))
    return m, com, inertia_com


def pseudo_inertia(phi: Float[np.ndarray, "10"]) -> Float[np.ndarray, "4 4"]:
    inertia = inertia_matrix(phi)
    J = np.empty((4, 4))
    J[:3, :3] = 0.5 * np.trace(inertia) * np.eye(3) - inertia
    J[:3, 3] = phi[1:4]
    J[3, :3] = phi[1:4]
    J[3, 3] = phi[0]
    return J


def params_from_pseudo_inertia(J: Float[np.ndarray, "4 4"]) -> Float[np.ndarray, "10"]:
    J = 0.5 * (J + J.T)
    K = J[:3, :3]
    inertia = np.trace(K) * np.eye(3) - K
    return params_from_parts(J[3, 3], J[:3, 3], inertia)


def _basis(fn) -> np.ndarray:
    return np.stack([fn(e) for e in np.eye(10)])


PSEUDO_INERTIA_BASIS: Float[np.ndarray, "10 4 4"] = _basis(pseudo_inertia)


def com_lmi(phi: Float[np.ndarray, "10"], bound: EllipsoidBound) -> Float[np.ndarray, "4 4"]:
    m = phi[0]
    offset = phi[1:4] - m * bound.center
    C = np.empty((4, 4))
    C[0, 0] = m
    C[0, 1:] = offset
    C[1:, 0] = offset
    C[1:, 1:] = m * bound.qs
    return C


def com_lmi_basis(bound: EllipsoidBound) -> Float[np.ndarray, "10 4 4"]:
    return _basis(lambda e: com_lmi(e, bound))


def qj_matrix(bound: EllipsoidBound) -> Float[np.ndarray, "4 4"]:
    qs_inv = np.diag(1.0 / bound.semi_axes**2)
    xc = bound.center
    Q = np.empty((4, 4))
    Q[:3, :3] = -qs_inv
    Q[:3, 3] = qs_inv @ xc
    Q[3, :3] = xc @ qs_inv
    Q[3, 3] = 1.0 - xc @ qs_inv @ xc
    return Q


def density_realizability(phi: Float[np.ndarray, "10"], bound: EllipsoidBound) -> float:
    return float(np.trace(pseudo_inertia(phi) @ qj_matrix(bound)))


def density_realizability_row(bound: EllipsoidBound) -> Float[np.ndarray, "10"]:
    """Row vector a with a @ phi == tr(J(phi) Q)."""
    Q = qj_matrix(bound)
    return np.array([np.trace(B @ Q) for B in PSEUDO_INERTIA_BASIS])


@dataclass(frozen=True)
class ConsistencyReport:
    """Margins of the three consistency conditions for one link."""

    min_eig_pseudo_inertia: float
    min_eig_com: float
    trace_margin: float
    epsilon: float
    tol: float
    link: str | None = field(default=None)

    @property
    def pseudo_inertia_ok(self) -> bool:
        return self.min_eig_pseudo_inertia > self.epsilon - self.tol

    @property
    def com_ok(self) -> bool:
        return self.min_eig_com >= -self.tol

    @property
    def density_ok(self) -> bool:
        return self.trace_margin >= -self.tol

    @property
    def consistent(self) -> bool:
        return self.pseudo_inertia_ok and self.com_ok and self.density_ok

    def __bool__(self) -> bool:
        return self.consistent

    def violations(self) -> list[str]:
        out = []
        if not self.pseudo_inertia_ok:
            out.append(f"J not > {self.epsilon:g} (min eig {self.min_eig_pseudo_inertia:.3e})")
        if not self.com_ok:
            out.append(f"CoM outside ellipsoid (min eig C {self.min_eig_com:.3e})")
        if not self.density_ok:
            out.append(f"tr(JQ) < 0 ({self.trace_margin:.3e})")
        return out

    def to_dict(self) -> dict:
        return {
            "link": self.link,
            "min_eig_pseudo_inertia": self.min_eig_pseudo_inertia,
            "min_eig_com": self.min_eig_com,
            "trace_margin": self.trace_margin,
            "consistent": self.consistent,
        }


def is_fully_consistent(
    phi: Float[np.ndarray, "10"],
    bound: EllipsoidBound,
    epsilon: float = 1e-6,
    tol: float = 0.0,
    link: str | None = None,
) -> ConsistencyReport:
    """Check J > epsilon, C >= 0 and tr(JQ) >= 0, each up to the feasibility tolerance `tol`.

    The report is truthy iff all three hold.
    """
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    phi = np.asarray(phi, dtype=float)
    return ConsistencyReport(
        min_eig_pseudo_inertia=float(np.linalg.eigvalsh(pseudo_inertia(phi))[0]),
        min_eig_com=float(np.linalg.eigvalsh(com_lmi(phi, bound))[0]),
        trace_margin=density_realizability(phi, bound),
        epsilon=epsilon,
        tol=tol,
        link=link,
    )
