"""
Weight matrices for the prior-deviation term gamma * (phi - phi_hat)^T G (phi - phi_hat).

The geodesic metric is the second-order expansion, at the prior, of the affine-invariant squared distance
between pseudo-inertia matrices, d^2(J, J_hat) = ||log(J_hat^-1/2 J J_hat^-1/2)||_F^2. Near J_hat it reads
tr(J_hat^-1 dJ J_hat^-1 dJ); pulling back through the linear map phi -> J gives one 10x10 block per link.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from einops import einsum
from jaxtyping import Float

from legid.consistency import PSEUDO_INERTIA_BASIS, pseudo_inertia
from legid.errors import ModelError

logger = logging.getLogger(__name__)

METRIC_FLOOR = 1e-9


class MetricKind(str, enum.Enum):
    GEODESIC = "geodesic"
    EUCLIDEAN = "euclidean"
    SCALED_EUCLIDEAN = "scaled_euclidean"


@dataclass(frozen=True, eq=False)
class ParamMetric:
    G: Float[np.ndarray, "p p"]
    kind: MetricKind

    @property
    def n_b(self) -> int:
        return self.G.shape[0] // 10

    def block(self, link: int) -> Float[np.ndarray, "10 10"]:
        return self.G[10 * link : 10 * link + 10, 10 * link : 10 * link + 10]

    def distance_sq(self, phi: np.ndarray, phi_hat: np.ndarray) -> float:
        d = np.asarray(phi) - np.asarray(phi_hat)
        return float(d @ self.G @ d)

    def factor(self) -> Float[np.ndarray, "p p"]:
        """Lower-triangular L with G = L L^T."""
        return np.linalg.cholesky(self.G)


def affine_invariant_distance(A: Float[np.ndarray, "k k"], B: Float[np.ndarray, "k k"]) -> float:
    """Riemannian distance between two SPD matrices."""
    return float(np.sqrt(np.sum(np.log(scipy.linalg.eigvalsh(A, B)) ** 2)))


def _floor(G: np.ndarray, floor: float) -> np.ndarray:
    G = 0.5 * (G + G.T)
    w, V = np.linalg.eigh(G)
    if w[0] >= floor:
        return G
    w = np.maximum(w, floor)
    return (V * w) @ V.T


def geodesic_block(phi_hat: Float[np.ndarray, "10"], floor: float = METRIC_FLOOR) -> Float[np.ndarray, "10 10"]:
    J_hat = pseudo_inertia(phi_hat)
    J_inv = np.linalg.inv(J_hat)
    M = einsum(J_inv, PSEUDO_INERTIA_BASIS, "row mid, param mid col -> param row col")
    G = einsum(M, M, "k a b, l b a -> k l")
    return _floor(G, floor)


def geodesic_metric(
    phi_hat: Float[np.ndarray, "p"], link_names: list[str] | None = None, floor: float = METRIC_FLOOR
) -> ParamMetric:
    phi_hat = np.asarray(phi_hat, dtype=float)
    n_b = phi_hat.size // 10
    blocks = []
    for j in range(n_b):
        block = phi_hat[10 * j : 10 * j + 10]
        eig = np.linalg.eigvalsh(pseudo_inertia(block))[0]
        if eig <= 0:
            name = link_names[j] if link_names else f"#{j}"
            raise ModelError(f"link {name}: prior pseudo-inertia is not positive definite (min eig {eig:.3e})")
        blocks.append(geodesic_block(block, floor))
    G = scipy.linalg.block_diag(*blocks)
    logger.debug(f"Geodesic metric: {n_b} blocks, condition {np.linalg.cond(G):.3e}")
    return ParamMetric(G=G, kind=MetricKind.GEODESIC)


def euclidean_metric(n_b: int, scale: tuple[float, float, float] | None = None) -> ParamMetric:
    """Identity, or the per-block diagonal diag(s_m, s_h x3, s_I x6) when `scale` is given."""
    if scale is None:
        return ParamMetric(G=np.eye(10 * n_b), kind=MetricKind.EUCLIDEAN)
    s_m, s_h, s_i = scale
    diagonal = np.array([s_m] + [s_h] * 3 + [s_i] * 6, dtype=float)
    if np.any(diagonal <= 0):
        raise ValueError(f"metric scales must be positive, got {scale}")
    return ParamMetric(G=np.diag(np.tile(diagonal, n_b)), kind=MetricKind.SCALED_EUCLIDEAN)


def build_metric(kind: str | MetricKind, phi_hat: np.ndarray, link_names: list[str] | None = None) -> ParamMetric:
    kind = MetricKind(kind)
    if kind == MetricKind.GEODESIC:
        return geodesic_metric(phi_hat, link_names)
    if kind == MetricKind.EUCLIDEAN:
        return euclidean_metric(phi_hat.size // 10)
    # inverse squared magnitudes of the prior's mass, first-moment and inertia entries
    blocks = np.asarray(phi_hat).reshape(-1, 10)
    m = max(float(np.mean(np.abs(blocks[:, 0]))), 1e-6)
    h = max(float(np.mean(np.abs(blocks[:, 1:4]))), 1e-6)
    i = max(float(np.mean(np.abs(blocks[:, 4:]))), 1e-6)
    return euclidean_metric(blocks.shape[0], (1 / m**2, 1 / h**2, 1 / i**2))
