import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from legid.errors import ScenarioError
from legid.model import load_model
from legid.synth import SynthScenario, TrajectoryFamily, euler_zyx_body_rates

from .adapters import (
    run_contact_jacobian,
    run_contact_positions,
    run_generate,
    run_inverse_dynamics,
    run_partition_coordinates,
    run_project_sample,
    run_reference_trajectory,
    run_truth_roundtrip,
)
from .common import FIXTURES_PATH


@pytest.fixture(scope="module")
def arm():
    return load_model(FIXTURES_PATH / "floating_arm.yaml")


@pytest.fixture(scope="module")
def quadruped():
    return load_model(FIXTURES_PATH / "quadruped.yaml")


@pytest.fixture(scope="module")
def arm_run(arm):
    return run_generate(arm, "sinusoidal", duration=2.0, seed=3)


@pytest.fixture(scope="module")
def quadruped_run(quadruped):
    return run_generate(quadruped, "sinusoidal", duration=1.0, seed=4)


@pytest.mark.parametrize("run_name, model_name", [("arm_run", "arm"), ("quadruped_run", "quadruped")])
def test_projected_residual_vanishes_at_truth(request, run_name, model_name):
    result = request.getfixturevalue(run_name)
    model = request.getfixturevalue(model_name)
    ds = result.dataset
    worst = 0.0
    for sample in ds.samples:
        projected = run_project_sample(model, sample)
        residual = projected.A @ result.phi - projected.measurement(result.viscous, result.coulomb)
        worst = max(worst, float(np.max(np.abs(residual))))
    assert worst < 1e-6


def test_contact_forces_balance_base_rows(quadruped, quadruped_run):
    ds = quadruped_run.dataset
    for k in range(0, len(ds), 10):
        sample = ds.sample(k)
        f = run_inverse_dynamics(quadruped, sample.q, sample.v, sample.a)
        Jc = run_contact_jacobian(quadruped, sample.q, sample.contacts)
        np.testing.assert_allclose(Jc[:, :6].T @ quadruped_run.forces.values[k], f[:6], atol=1e-8)


def test_contacts_stay_put(quadruped, quadruped_run):
    ds = quadruped_run.dataset
    start = run_contact_positions(quadruped, ds.q[0], ds.contacts_at(0))
    for k in range(len(ds)):
        assert np.max(np.abs(run_contact_positions(quadruped, ds.q[k], ds.contacts_at(k)) - start)) < 1e-6
        Jc = run_contact_jacobian(quadruped, ds.q[k], ds.contacts_at(k))
        assert np.max(np.abs(Jc @ ds.v[k])) < 1e-8


def test_quadruped_base_moves(quadruped_run):
    q = quadruped_run.dataset.q
    assert np.ptp(q[:, :3], axis=0).max() > 1e-3
    np.testing.assert_allclose(np.linalg.norm(q[:, 3:7], axis=1), 1.0, atol=1e-12)


def test_generation_is_deterministic(arm):
    first = run_generate(arm, "sinusoidal", duration=0.5, seed=7, torque_noise=0.01)
    second = run_generate(arm, "sinusoidal", duration=0.5, seed=7, torque_noise=0.01)
    other = run_generate(arm, "sinusoidal", duration=0.5, seed=8, torque_noise=0.01)
    np.testing.assert_array_equal(first.dataset.q, second.dataset.q)
    np.testing.assert_array_equal(first.dataset.tau, second.dataset.tau)
    assert not np.array_equal(first.dataset.tau, other.dataset.tau)


def test_noise_touches_only_measured_channels(arm):
    clean = run_generate(arm, "sinusoidal", duration=0.5, seed=1)
    noisy = run_generate(arm, "sinusoidal", duration=0.5, seed=1, torque_noise=0.05, velocity_noise=0.01)
    np.testing.assert_array_equal(clean.dataset.q, noisy.dataset.q)
    np.testing.assert_array_equal(clean.dataset.a, noisy.dataset.a)
    assert np.std(noisy.dataset.tau - clean.dataset.tau) == pytest.approx(0.05, rel=0.3)
    assert np.std(noisy.dataset.v - clean.dataset.v) == pytest.approx(0.01, rel=0.3)


def test_static_family_holds_gravity(arm):
    result = run_generate(arm, "static", duration=0.2, viscous=0.0, coulomb=0.0)
    ds = result.dataset
    assert np.all(ds.v == 0) and np.all(ds.a == 0)
    np.testing.assert_allclose(ds.tau, np.broadcast_to(ds.tau[0], ds.tau.shape), atol=1e-12)
    # the three feet carry the full weight
    total = result.forces.values[0].reshape(-1, 3).sum(axis=0)
    assert total[2] == pytest.approx(5.5 * 9.81, rel=1e-9)


def test_single_foot_cannot_balance_base(quadruped):
    with pytest.raises(ScenarioError, match="base block rank"):
        run_generate(quadruped, duration=0.1, contacts=("FL_foot",))


def test_unknown_contact_rejected(arm):
    with pytest.raises(ScenarioError, match="nope"):
        run_generate(arm, duration=0.1, contacts=("nope",))


def test_invalid_scenario_rejected(arm):
    with pytest.raises(ScenarioError):
        SynthScenario(model=arm, duration=-1.0)
    with pytest.raises(ScenarioError):
        SynthScenario(model=arm, torque_noise=-0.1)


def test_partition_for_feet_on_legs(quadruped, arm):
    legs = run_partition_coordinates(quadruped, quadruped.contact_names)
    assert legs.base_driven
    assert legs.dependent == tuple(range(6, 18))
    base = run_partition_coordinates(arm, arm.contact_names)
    assert not base.base_driven
    assert base.dependent == tuple(range(6))
    assert base.driven == (6, 7)


@pytest.mark.parametrize("family", list(TrajectoryFamily))
def test_reference_rates_match_finite_differences(family):
    t = np.linspace(0.0, 3.0, 30001)
    x, xd, xdd = run_reference_trajectory(family, t, np.array([0.5, 1.0]))
    if family != TrajectoryFamily.STATIC:
        np.testing.assert_allclose(x[0], 0.0, atol=1e-12)
    h = t[1] - t[0]
    np.testing.assert_allclose(np.gradient(x, h, axis=0)[1:-1], xd[1:-1], atol=1e-4)
    np.testing.assert_allclose(np.gradient(xd, h, axis=0)[1:-1], xdd[1:-1], atol=1e-3)


def test_euler_body_rates_match_rotation_derivative():
    rng = np.random.default_rng(1)
    angles, rates, accels = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)
    h = 1e-5

    def body_rate(s):
        R = Rotation.from_euler("ZYX", angles + s * rates + 0.5 * s**2 * accels).as_matrix()
        dR = (
            Rotation.from_euler("ZYX", angles + (s + h) * rates + 0.5 * (s + h) ** 2 * accels).as_matrix()
            - Rotation.from_euler("ZYX", angles + (s - h) * rates + 0.5 * (s - h) ** 2 * accels).as_matrix()
        ) / (2 * h)
        W = R.T @ dR
        return np.array([W[2, 1], W[0, 2], W[1, 0]])

    w, dw = euler_zyx_body_rates(angles, rates, accels)
    np.testing.assert_allclose(w, body_rate(0.0), atol=1e-7)
    np.testing.assert_allclose(dw, (body_rate(1e-4) - body_rate(-1e-4)) / 2e-4, atol=1e-4)


def test_truth_file(tmp_path, arm):
    result = run_generate(arm, duration=0.1)
    truth = run_truth_roundtrip(tmp_path / "run.truth.json", result)
    np.testing.assert_array_equal(truth.phi, result.phi)
    np.testing.assert_array_equal(truth.forces.values, result.forces.values)
    assert truth.forces.frames == arm.contact_names


def test_swing_leg_keeps_every_contact_column(quadruped):
    stance = ("FL_foot", "FR_foot", "RL_foot")
    ds = run_generate(quadruped, "sinusoidal", duration=0.5, seed=9, contacts=stance).dataset
    assert ds.contact_frames == quadruped.contact_names
    assert ds.contacts_at(0).active == stance
    swing = run_partition_coordinates(quadruped, stance)
    # the free leg's joints follow the reference, the planted legs are solved for
    assert swing.driven == (0, 1, 2, 3, 4, 5, 15, 16, 17)
    assert np.ptp(ds.q[:, 7 + 9 :], axis=0).min() > 1e-3
