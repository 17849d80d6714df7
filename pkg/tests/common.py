import pathlib

import numpy as np
from scipy.spatial.transform import Rotation

FIXTURES_PATH = (pathlib.Path(__file__).resolve().parent) / "fixtures"


def random_consistent_params(rng: np.random.Generator, com_scale: float = 0.05) -> np.ndarray:
    """Parameters of a random box with random CoM and orientation: consistent by construction."""
    from legid.consistency import params_from_com

    mass = rng.uniform(0.2, 3.0)
    a, b, c = rng.uniform(0.02, 0.3, size=3)
    box = mass / 12 * np.diag([b**2 + c**2, a**2 + c**2, a**2 + b**2])
    R = Rotation.random(random_state=rng.integers(1 << 31)).as_matrix()
    com = rng.uniform(-com_scale, com_scale, size=3)
    return params_from_com(mass, com, R @ box @ R.T)


def random_stacked_params(rng: np.random.Generator, n_b: int) -> np.ndarray:
    return np.concatenate([random_consistent_params(rng) for _ in range(n_b)])


def random_state(model, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    q = np.zeros(model.nq)
    q[0:3] = rng.normal(size=3)
    q[3:7] = Rotation.random(random_state=rng.integers(1 << 31)).as_quat()
    q[7:] = rng.uniform(-np.pi, np.pi, size=model.n)
    v = rng.normal(size=model.nv)
    a = rng.normal(size=model.nv)
    return q, v, a
