import cvxpy as cp
import numpy as np
import pytest

from legid.consistency import is_fully_consistent
from legid.dataio import concat
from legid.errors import ModelError
from legid.identify import design_rows
from legid.model import load_model, stack_priors

from .adapters import (
    run_assemble,
    run_build_metric,
    run_corrupt_priors,
    run_euclidean_metric,
    run_generate,
    run_identify,
    run_learning_curve,
    run_observability,
    run_predict,
    run_predict_solution,
    run_solve_lmi,
    run_solve_svd,
    run_write_solution,
)
from .common import FIXTURES_PATH


@pytest.fixture(scope="module")
def arm():
    return load_model(FIXTURES_PATH / "floating_arm.yaml")


@pytest.fixture(scope="module")
def quadruped():
    return load_model(FIXTURES_PATH / "quadruped.yaml")


@pytest.fixture(scope="module")
def train(arm):
    return run_generate(arm, "sinusoidal", duration=3.0, seed=11).dataset


@pytest.fixture(scope="module")
def val(arm):
    return run_generate(arm, "sinusoidal", duration=1.0, seed=12).dataset


@pytest.fixture(scope="module")
def noisy(arm):
    return run_generate(arm, "sinusoidal", duration=2.0, seed=5, torque_noise=0.05).dataset


def _row_space(design: np.ndarray, cutoff: float = 1e-8) -> np.ndarray:
    _, sv, Vt = np.linalg.svd(design, full_matrices=False)
    return Vt[sv > cutoff * sv[0]]


def test_noiseless_recovery(arm, train, val):
    system, solution = run_identify(train, arm, gamma=1e-8)
    assert solution.consistent
    assert solution.train_rmse < 1e-6
    assert run_predict_solution(arm, solution, val).rmse < 1e-6
    np.testing.assert_allclose(solution.viscous, 0.05, atol=1e-5)
    np.testing.assert_allclose(solution.coulomb, 0.1, atol=1e-5)
    assert system.n_cols == 10 * arm.n_b + 2 * arm.n


def test_roundoff_columns_are_left_unscaled(arm, train):
    # the arm's own mass never reaches its joint torques, so these columns are pure projection round-off
    system = run_assemble(train, arm)
    for name in ("base.m", "upper_arm.m", "forearm.m"):
        assert system.scale[system.names.index(name)] == 1.0
    assert np.all(np.isfinite(system.scaled_design))
    _, solution = run_identify(train, arm)
    assert solution.status in ("optimal", "optimal_inaccurate")
    assert solution.consistent


def test_identifiable_subspace_matches_truth(arm, train):
    truth = stack_priors(arm)
    phi_hat = truth.copy()
    # the base rests on its feet: none of its parameters are observable
    phi_hat[:10] *= 1.2
    prior = arm.with_params(phi_hat)
    system, solution = run_identify(train, prior, gamma=1e-8)
    rows = _row_space(system.design)
    theta_true = system.stack(truth, arm.viscous, arm.coulomb)
    error = np.linalg.norm(rows @ (solution.theta - theta_true))
    assert error < 1e-6 * np.linalg.norm(rows @ theta_true)
    # the unobservable base stays at its prior
    np.testing.assert_allclose(solution.phi[:10], phi_hat[:10], rtol=1e-6, atol=1e-9)


def test_recovery_from_corrupted_priors(arm, train, val):
    prior = run_corrupt_priors(arm, 0.2, 0.3, seed=0)
    before = run_predict(prior, stack_priors(prior), val, prior.viscous, prior.coulomb).rmse
    _, solution = run_identify(train, prior, gamma=1e-10, metric="euclidean")
    after = run_predict_solution(prior, solution, val).rmse
    assert solution.consistent
    assert before > 1e-2
    assert after < 1e-3


def test_svd_baseline_fits_noiseless_data(arm, train):
    system, lmi = run_identify(train, arm, gamma=1e-8)
    svd = run_solve_svd(system, arm)
    assert svd.method == "svd"
    assert svd.train_rmse < 1e-6
    assert svd.train_rmse <= lmi.train_rmse + 1e-9


def test_svd_baseline_flags_violations_under_noise(arm, noisy):
    svd = run_solve_svd(run_assemble(noisy, arm), arm)
    assert not svd.consistent
    # the minimum-norm completion empties the unobservable base
    assert "base" in [report.link for report in svd.reports if not report]


def test_lmi_keeps_links_consistent_under_noise(arm, noisy):
    prior = run_corrupt_priors(arm, 0.1, 0.2, seed=1)
    _, solution = run_identify(noisy, prior, gamma=1e-4)
    assert solution.consistent
    for j, link in enumerate(prior.links):
        assert is_fully_consistent(solution.phi[10 * j : 10 * j + 10], link.bounding_ellipsoid, 1e-6, 1e-7)
    assert np.all(solution.viscous >= 0) and np.all(solution.coulomb >= 0)


def test_objective_is_monotone_in_gamma(arm, noisy):
    prior = run_corrupt_priors(arm, 0.1, 0.2, seed=1)
    phi_hat = stack_priors(prior)
    system = run_assemble(noisy, prior)
    metric = run_build_metric("geodesic", phi_hat, list(prior.link_names))
    gammas = [1e-3, 2e-3, 4e-3, 8e-3]
    solutions = [run_solve_lmi(system, phi_hat, metric, prior, gamma=g) for g in gammas]
    distances = [s.regularization_term / g for s, g in zip(solutions, gammas)]
    for low, high in zip(solutions, solutions[1:]):
        assert high.objective >= low.objective * (1 - 1e-6)
        assert high.data_term >= low.data_term * (1 - 1e-5)
    for low, high in zip(distances, distances[1:]):
        assert high <= low * (1 + 1e-5)
    assert solutions[-1].objective > solutions[0].objective


def test_solver_tolerances_agree(arm):
    # frictionless truth puts the nonnegativity bounds on the active set
    ds = run_generate(arm, "sinusoidal", duration=2.0, seed=6, torque_noise=0.05, viscous=0.0, coulomb=0.0).dataset
    prior = run_corrupt_priors(arm, 0.1, 0.2, seed=2)
    phi_hat = stack_priors(prior)
    system = run_assemble(ds, prior)
    metric = run_build_metric("geodesic", phi_hat, list(prior.link_names))
    loose = run_solve_lmi(system, phi_hat, metric, prior, gamma=1e-2, solver_tol=1e-8)
    tight = run_solve_lmi(system, phi_hat, metric, prior, gamma=1e-2, solver_tol=1e-9)
    assert loose.consistent and tight.consistent
    assert np.linalg.norm(loose.phi - tight.phi) <= 1e-5 * np.linalg.norm(tight.phi)


def test_solver_failure_is_reported_when_minimizer_is_polished(arm, train, monkeypatch):
    def stall(self, *args, **kwargs):
        raise cp.error.SolverError("stalled")

    monkeypatch.setattr(cp.Problem, "solve", stall)
    _, solution = run_identify(train.subset(np.arange(100)), arm, gamma=1e-8)
    assert solution.polished
    assert solution.status == "polished_after_solver_error"
    assert solution.consistent


def test_friction_off_drops_columns(arm, tmp_path):
    ds = run_generate(arm, "sinusoidal", duration=1.0, seed=2, viscous=0.0, coulomb=0.0).dataset
    system, solution = run_identify(ds, arm, gamma=1e-8, friction=False)
    assert system.n_cols == 10 * arm.n_b
    assert not solution.friction
    np.testing.assert_array_equal(solution.viscous, 0.0)
    assert solution.train_rmse < 1e-6
    assert run_write_solution(tmp_path / "identified.yaml", arm, solution)["friction"] == {}


def test_factor_matches_stacked_rows(arm, train):
    system = run_assemble(train.subset(np.arange(50)), arm, keep_blocks=True)
    rng = np.random.default_rng(3)
    for _ in range(5):
        theta = rng.normal(size=system.n_cols)
        direct = sum(np.sum((D @ theta - y) ** 2) for D, y in (design_rows(b, True) for b in system.blocks))
        assert system.residual_sq(theta) == pytest.approx(direct / 50, rel=1e-9)


def test_chunked_and_parallel_assembly_agree(arm, train, monkeypatch):
    serial = run_assemble(train, arm)
    monkeypatch.setattr("legid.identify.CHUNK_SIZE", 64)
    parallel = run_assemble(train, arm, workers=2)
    np.testing.assert_allclose(parallel.R.T @ parallel.R, serial.R.T @ serial.R, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(parallel.scale, serial.scale)


def test_static_data_is_less_observable(arm, train):
    static = run_generate(arm, "static", duration=1.0, seed=0).dataset
    moving = run_observability(run_assemble(train, arm))
    still = run_observability(run_assemble(static, arm))
    # a yaw-pitch arm on a fixed base: eight inertial combinations plus four friction coefficients
    assert moving.rank == 12
    assert moving.nullity == moving.n_cols - 12
    assert still.rank < moving.rank
    assert moving.null_basis.shape == (moving.n_cols, moving.nullity)
    assert np.isfinite(moving.condition_number)
    assert moving.sensitivity["forearm.hx"] > 0
    assert moving.sensitivity["base.m"] < 1e-10 * max(moving.sensitivity.values())


def test_inconsistent_prior_rejected(arm, train):
    system = run_assemble(train.subset(np.arange(20)), arm)
    phi_hat = stack_priors(arm)
    phi_hat[10:20] = 0.0
    with pytest.raises(ModelError, match="upper_arm"):
        run_solve_lmi(system, phi_hat, run_euclidean_metric(arm.n_b), arm)


def test_negative_gamma_rejected(arm, train):
    system = run_assemble(train.subset(np.arange(20)), arm)
    with pytest.raises(ValueError):
        run_solve_lmi(system, stack_priors(arm), run_euclidean_metric(arm.n_b), arm, gamma=-1.0)


def test_zero_parameters_predict_zero(arm, val):
    prediction = run_predict(arm, np.zeros(10 * arm.n_b), val)
    np.testing.assert_array_equal(prediction.predicted, 0.0)
    assert prediction.rmse > 0
    assert set(prediction.joint_rmse) == {"arm_yaw", "arm_pitch"}
    with pytest.raises(ValueError):
        run_predict(arm, np.zeros(3), val)


def test_corrupt_priors_stay_consistent(arm):
    corrupted = run_corrupt_priors(arm, 0.2, 0.3, seed=4)
    ratio = stack_priors(corrupted).reshape(arm.n_b, 10)[:, 0] / stack_priors(arm).reshape(arm.n_b, 10)[:, 0]
    assert np.all((np.abs(ratio - 1) >= 0.2 - 1e-12) & (np.abs(ratio - 1) <= 0.3 + 1e-12))
    for link in corrupted.links:
        assert is_fully_consistent(link.prior_params, link.bounding_ellipsoid, 1e-6)
    with pytest.raises(ValueError):
        run_corrupt_priors(arm, 0.5, 0.2)


def test_learning_curve(arm, train, val):
    points = run_learning_curve(train, val, arm, [50, 150, 10_000], gamma=1e-8)
    assert [p.size for p in points] == [50, 150]
    assert all(p.lmi_rmse < 1e-5 for p in points)


def test_write_solution_reloads(tmp_path, arm, train):
    _, solution = run_identify(train.subset(np.arange(100)), arm, gamma=1e-8)
    path = tmp_path / "identified.yaml"
    summary = run_write_solution(path, arm, solution)
    again = load_model(path)
    np.testing.assert_allclose(stack_priors(again), solution.phi, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(again.viscous, solution.viscous, atol=1e-12)
    assert summary["links"]["forearm"]["consistency"]["consistent"]
    assert set(summary["friction"]) == {"arm_yaw", "arm_pitch"}


def test_lmi_generalizes_at_least_as_well_as_svd(quadruped):
    lmi_rmse, svd_rmse, degradation = [], [], []
    for seed in range(3):
        train = run_generate(quadruped, "sinusoidal", duration=4.0, seed=100 + seed, torque_noise=0.01).dataset
        val = run_generate(quadruped, "sinusoidal", duration=1.0, seed=200 + seed, torque_noise=0.01).dataset
        new_motion = run_generate(quadruped, "crouch_extend", duration=1.0, seed=300 + seed, torque_noise=0.01).dataset
        prior = run_corrupt_priors(quadruped, 0.1, 0.2, seed=seed)
        system, lmi = run_identify(train, prior, gamma=1e-3)
        svd = run_solve_svd(system, prior)
        assert lmi.consistent
        lmi_rmse.append(run_predict_solution(prior, lmi, val).rmse)
        svd_rmse.append(run_predict_solution(prior, svd, val).rmse)
        degradation.append(run_predict_solution(prior, lmi, new_motion).rmse / lmi_rmse[-1])
    assert np.median(lmi_rmse) <= 1.05 * np.median(svd_rmse)
    assert np.median(degradation) <= 2.5


def test_total_mass_recovered_from_heavy_prior(quadruped):
    # a planted shank pivots about its foot, so each leg swings in one segment to expose its mass
    segments = []
    for k, swing in enumerate(quadruped.contact_names):
        stance = tuple(name for name in quadruped.contact_names if name != swing)
        segments.append(
            run_generate(quadruped, "sinusoidal", duration=1.5, seed=40 + k, torque_noise=0.01, contacts=stance).dataset
        )
    truth = stack_priors(quadruped)
    heavy = quadruped.with_params(1.2 * truth)
    _, solution = run_identify(concat(segments), heavy, gamma=1e-5)
    assert solution.consistent
    total = truth.reshape(-1, 10)[:, 0].sum()
    assert solution.phi.reshape(-1, 10)[:, 0].sum() == pytest.approx(total, rel=0.01)
