import numpy as np
import pytest

from legid.consistency import (
    PSEUDO_INERTIA_BASIS,
    EllipsoidBound,
    com_lmi,
    com_parts,
    density_realizability,
    density_realizability_row,
    is_fully_consistent,
    params_from_com,
    params_from_pseudo_inertia,
    pseudo_inertia,
)

from .adapters import run_is_fully_consistent, run_pseudo_inertia
from .common import random_consistent_params


def test_sphere_pseudo_inertia():
    # solid sphere, m = 1, r = 1: I = 2/5 m r^2 about every axis
    phi = params_from_com(1.0, np.zeros(3), 0.4 * np.eye(3))
    np.testing.assert_allclose(run_pseudo_inertia(phi), np.diag([0.2, 0.2, 0.2, 1.0]), atol=1e-15)


def test_pseudo_inertia_is_linear_and_invertible():
    rng = np.random.default_rng(0)
    for _ in range(50):
        phi = rng.normal(size=10)
        J = pseudo_inertia(phi)
        np.testing.assert_allclose(J, np.einsum("k,kab->ab", phi, PSEUDO_INERTIA_BASIS), atol=1e-14)
        np.testing.assert_allclose(params_from_pseudo_inertia(J), phi, atol=1e-12)


def test_com_parts_inverts_params_from_com():
    rng = np.random.default_rng(1)
    phi = random_consistent_params(rng)
    m, com, inertia = com_parts(phi)
    np.testing.assert_allclose(params_from_com(m, com, inertia), phi, atol=1e-14)


def test_triangle_inequality_violation_detected():
    phi = params_from_com(1.0, np.zeros(3), np.diag([1.0, 1.0, 3.0]))
    report = run_is_fully_consistent(phi, np.zeros(3), np.ones(3), epsilon=0.0)
    assert not report.pseudo_inertia_ok
    assert not report
    assert any("J" in v for v in report.violations())


def test_random_boxes_are_consistent():
    rng = np.random.default_rng(2)
    for _ in range(200):
        phi = random_consistent_params(rng, com_scale=0.05)
        bound = EllipsoidBound.default_for(phi)
        assert is_fully_consistent(phi, bound, epsilon=1e-9)


def test_com_lmi_sign_matches_ellipsoid_membership():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        bound = EllipsoidBound(center=rng.normal(scale=0.1, size=3), semi_axes=rng.uniform(0.05, 0.5, size=3))
        com = bound.center + rng.uniform(-0.6, 0.6, size=3)
        if abs(np.sum(((com - bound.center) / bound.semi_axes) ** 2) - 1.0) < 1e-6:
            continue
        phi = params_from_com(rng.uniform(0.1, 5.0), com, 0.01 * np.eye(3))
        inside = bound.contains(com)
        assert (np.linalg.eigvalsh(com_lmi(phi, bound))[0] >= -1e-12) == inside


def test_density_trace_sign_for_point_mass():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        bound = EllipsoidBound(center=rng.normal(scale=0.1, size=3), semi_axes=rng.uniform(0.05, 0.5, size=3))
        point = bound.center + rng.uniform(-0.6, 0.6, size=3)
        if abs(np.sum(((point - bound.center) / bound.semi_axes) ** 2) - 1.0) < 1e-6:
            continue
        phi = params_from_com(rng.uniform(0.1, 5.0), point, np.zeros((3, 3)))
        assert (density_realizability(phi, bound) >= 0) == bound.contains(point)


def test_density_row_matches_trace():
    rng = np.random.default_rng(5)
    bound = EllipsoidBound(center=[0.01, -0.02, 0.03], semi_axes=[0.1, 0.2, 0.3])
    row = density_realizability_row(bound)
    for _ in range(20):
        phi = rng.normal(size=10)
        assert row @ phi == pytest.approx(density_realizability(phi, bound), abs=1e-12)


def test_mass_outside_bound_fails_density():
    # a thin shell of radius 0.2 cannot fit in a ball of radius 0.1 even with its CoM at the center
    phi = params_from_com(1.0, np.zeros(3), 2 / 3 * 0.04 * np.eye(3))
    report = is_fully_consistent(phi, EllipsoidBound(np.zeros(3), np.full(3, 0.1)), epsilon=0.0)
    assert report.pseudo_inertia_ok
    assert report.com_ok
    assert not report.density_ok


def test_epsilon_margin_and_tolerance():
    phi = params_from_com(1.0, np.zeros(3), 0.4 * np.eye(3))
    bound = EllipsoidBound(np.zeros(3), np.ones(3))
    assert is_fully_consistent(phi, bound, epsilon=0.19)
    assert not is_fully_consistent(phi, bound, epsilon=0.21)
    assert is_fully_consistent(phi, bound, epsilon=0.21, tol=0.02)
    with pytest.raises(ValueError):
        is_fully_consistent(phi, bound, epsilon=-1.0)


def test_report_to_dict():
    phi = params_from_com(1.0, np.zeros(3), 0.4 * np.eye(3))
    report = is_fully_consistent(phi, EllipsoidBound(np.zeros(3), np.ones(3)), link="ball")
    data = report.to_dict()
    assert data["link"] == "ball"
    assert data["consistent"] is True
    assert data["min_eig_pseudo_inertia"] == pytest.approx(0.2)
