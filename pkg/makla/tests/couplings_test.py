from dataclasses import replace

import numpy as np
import pytest

from makla.couplings import (
    CoupledPair,
    EpochReport,
    epoch_coupled_run,
    one_shot_accept_ratio,
    one_shot_coupled_step,
    one_shot_coupled_transition,
    one_shot_map,
    one_shot_tv_bound,
    pair_distance,
    synchronous_coupled_step,
    tv_overlap_estimate,
)
from makla.errors import ResidualSamplerError
from makla.integrator import KernelParams, ou_half_step, theta_h
from makla.target_models import IsotropicGaussian, PerturbedExample, PhaseState
from makla.tests.util import desk_params, desk_plan, iso_model, rng_for


def _random_state(rng, d, batch=()):
    return PhaseState(rng.standard_normal((*batch, d)), rng.standard_normal((*batch, d)))


def test_synchronous_step_keeps_met_pairs_identical():
    rng = rng_for('sync_met')
    model = PerturbedExample(d=3)
    z = _random_state(rng, 3, (8,))
    pair = CoupledPair.start(z, z.copy())
    assert pair.met.all()
    for _ in range(1000):
        shape = pair.z.x.shape
        pair = synchronous_coupled_step(
            model,
            pair,
            KernelParams(h=0.1, gamma=5.0),
            rng.standard_normal(shape),
            rng.standard_normal(shape),
            rng.random(8),
        )
        assert pair.z == pair.z_tilde
    assert pair.met.all()
    assert pair.steps_taken == 1000
    assert np.array_equal(pair.rejections[:, 0], pair.rejections[:, 1])


def test_synchronous_step_flags_unguaranteed_contraction():
    model = IsotropicGaussian(L=1.0, d=1)
    params = KernelParams.from_model(model, 0.05, gamma=5.0)
    pair = CoupledPair.start(PhaseState([1.0], [0.0]), PhaseState([0.0], [0.0]))
    zero = np.zeros(1)
    assert pair.contraction_guaranteed
    pair = synchronous_coupled_step(model, pair, params, zero, zero, 0.5)
    assert not pair.contraction_guaranteed


def test_direct_params_are_checked_against_the_model():
    model = IsotropicGaussian(L=1.0, d=1)
    params = KernelParams(h=0.05, gamma=5.0)
    assert params.assumptions_ok is None
    zero = np.zeros(1)
    start = CoupledPair.start(PhaseState([1.0], [0.0]), PhaseState([0.0], [0.0]))
    pair = synchronous_coupled_step(model, start, params, zero, zero, 0.5)
    assert not pair.contraction_guaranteed
    pair = synchronous_coupled_step(model, start, KernelParams(h=0.05, gamma=10.0), zero, zero, 0.5)
    assert pair.contraction_guaranteed


def test_one_shot_map_of_identical_states():
    rng = rng_for('one_shot_identical')
    model = PerturbedExample(d=2)
    z = _random_state(rng, 2)
    a1, a2 = rng.standard_normal(2), rng.standard_normal(2)
    res = one_shot_map(model, z, z, desk_params(), a1, a2)
    assert np.array_equal(res.noise_pair_tilde[0], a1)
    assert np.array_equal(res.noise_pair_tilde[1], a2)
    assert res.iterations == 1
    assert res.met and res.converged
    assert res.accept_ratio == 1.0
    assert res.log_det == 0.0
    ratio, log_det = one_shot_accept_ratio(model, z, z, desk_params(), a1, a2)
    assert (ratio, log_det) == (1.0, 0.0)


def test_one_shot_map_matches_linear_solve_on_gaussians():
    rng = rng_for('one_shot_linear')
    L, d = 2.0, 3
    model = IsotropicGaussian(L=L, d=d)
    p = KernelParams(h=0.1, gamma=5.0)
    h, c, s = p.h, p.ou_decay, p.ou_noise_scale
    z, z_tilde = _random_state(rng, d, (5,)), _random_state(rng, d, (5,))
    a1, a2 = rng.standard_normal((5, d)), rng.standard_normal((5, d))

    res = one_shot_map(model, z, z_tilde, p, a1, a2)
    assert res.met.all()

    # x~ + h w - (h^2/2) L (x~ + (h/2) w) = x_target is linear in w
    x_target = theta_h(model, ou_half_step(z, p, a1), h).x
    lhs = (h - h ** 3 * L / 4) * np.eye(d)
    rhs = x_target - z_tilde.x + 0.5 * h * h * L * z_tilde.x
    w = np.linalg.solve(lhs, rhs.T).T
    np.testing.assert_allclose(res.noise_pair_tilde[0], (w - c * z_tilde.v) / s, atol=1e-10)

    # equal Hessians give M = I
    np.testing.assert_allclose(res.log_det, 0.0, atol=1e-14)
    a1_t, a2_t = res.noise_pair_tilde
    expected_ratio = np.exp(-0.5 * (np.sum(a1_t ** 2 + a2_t ** 2 - a1 ** 2 - a2 ** 2, axis=-1)))
    np.testing.assert_allclose(res.accept_ratio, expected_ratio, rtol=1e-10)


def test_one_shot_map_sends_both_chains_to_the_same_point():
    rng = rng_for('one_shot_residual')
    model = PerturbedExample(d=4)
    p = KernelParams(h=0.1, gamma=5.0)
    z, z_tilde = _random_state(rng, 4, (20,)), _random_state(rng, 4, (20,))
    a1, a2 = rng.standard_normal((20, 4)), rng.standard_normal((20, 4))
    res = one_shot_map(model, z, z_tilde, p, a1, a2)
    assert res.converged.all()
    b1, b2 = res.noise_pair_tilde

    end = ou_half_step(theta_h(model, ou_half_step(z, p, a1), p.h), p, a2)
    end_tilde = ou_half_step(theta_h(model, ou_half_step(z_tilde, p, b1), p.h), p, b2)
    assert np.max(np.abs(end.x - end_tilde.x)) <= 1e-10
    assert np.max(np.abs(end.v - end_tilde.v)) <= 1e-10

    # the inverse map is the map with the roles swapped
    back = one_shot_map(model, z_tilde, z, p, b1, b2, with_ratio=False)
    np.testing.assert_allclose(back.noise_pair_tilde[0], a1, atol=1e-8)
    np.testing.assert_allclose(back.noise_pair_tilde[1], a2, atol=1e-8)


@pytest.mark.parametrize('d', [1, 3, 5])
def test_one_shot_jacobian_matches_finite_differences(d):
    rng = rng_for(f'one_shot_jacobian_{d}')
    model = PerturbedExample(d=d)
    p = KernelParams(h=0.2, gamma=4.0)
    z, z_tilde = _random_state(rng, d), _random_state(rng, d)
    a1, a2 = rng.standard_normal(d), rng.standard_normal(d)
    _, log_det = one_shot_accept_ratio(model, z, z_tilde, p, a1, a2)

    delta = 1e-5
    steps = delta * np.eye(d)
    plus = one_shot_map(model, z, z_tilde, p, a1 + steps, a2, with_ratio=False)
    minus = one_shot_map(model, z, z_tilde, p, a1 - steps, a2, with_ratio=False)
    # row j holds the derivative along a1_j
    jac = ((plus.noise_pair_tilde[0] - minus.noise_pair_tilde[0]) / (2 * delta)).T
    assert np.exp(log_det) == pytest.approx(abs(np.linalg.det(jac)), rel=1e-5)


def test_one_shot_step_of_identical_states_meets():
    rng = rng_for('one_shot_step_identical')
    model = iso_model(2)
    z = _random_state(rng, 2, (16,))
    pair = one_shot_coupled_step(model, CoupledPair.start(z, z.copy()), desk_params(), rng)
    assert pair.met.all()
    assert pair.z == pair.z_tilde


def test_one_shot_step_meets_close_pairs():
    rng = rng_for('one_shot_step_close')
    model = iso_model(2)
    z = _random_state(rng, 2, (200,))
    z_tilde = PhaseState(z.x + 1e-4, z.v - 1e-4)
    step = one_shot_coupled_transition(model, CoupledPair.start(z, z_tilde), desk_params(), rng)
    assert step.pair.met.mean() > 0.9
    met = step.pair.met
    assert step.pair.z.where(met, step.pair.z) == step.pair.z_tilde.where(met, step.pair.z)
    assert np.all(step.pair.met_at[met] == 1)
    assert np.all(step.pair.met_at[~met] == -1)


def test_residual_sampler_cap():
    rng = rng_for('residual_cap')
    model = iso_model(2)
    z = _random_state(rng, 2, (16,))
    far = PhaseState(z.x + 5.0, z.v)
    with pytest.raises(ResidualSamplerError):
        one_shot_coupled_transition(
            model, CoupledPair.start(z, far), desk_params(), rng, max_residual_iter=0
        )


def test_tv_overlap_estimate():
    rng = rng_for('tv_overlap')
    model = iso_model(2)
    z = _random_state(rng, 2)
    assert tv_overlap_estimate(model, z, z, desk_params(), 100, rng) == (0.0, 0.0)

    z_tilde = PhaseState(z.x + 1e-3, z.v)
    est, se = tv_overlap_estimate(model, z, z_tilde, desk_params(), 1000, rng)
    distance = float(pair_distance(CoupledPair.start(z, z_tilde), desk_params()))
    assert 0 < est <= float(one_shot_tv_bound(model, desk_params(), distance)) + 3 * se
    with pytest.raises(ValueError):
        tv_overlap_estimate(model, z, z_tilde, desk_params(), 0, rng)


def test_epoch_run_of_met_pair_returns_at_once():
    rng = rng_for('epoch_met')
    model = iso_model(2)
    z = _random_state(rng, 2, (4,))
    pair, reports = epoch_coupled_run(
        model, CoupledPair.start(z, z.copy()), desk_plan(2).with_epoch(5), rng
    )
    assert reports == []
    assert pair.steps_taken == 0
    assert not pair.rejections.any()


def test_epoch_run_reports():
    rng = rng_for('epoch_run')
    model = iso_model(2)
    plan = desk_plan(2).with_epoch(50)
    z, z_tilde = _random_state(rng, 2, (6,)), _random_state(rng, 2, (6,))
    seen = []
    pair, reports = epoch_coupled_run(
        model,
        CoupledPair.start(z, z_tilde),
        plan,
        rng,
        n_epochs=2,
        on_epoch=lambda pair, report, delta_h: seen.append((pair.steps_taken, delta_h.shape)),
    )
    assert 1 <= len(reports) <= 2
    assert seen[0] == (50, (6,))
    assert pair.steps_taken == 50 * len(reports)
    assert not pair.exited_domain.any()
    first = reports[0].to_dict()
    assert first['index'] == 0 and first['active'] == 6
    assert first['exited'] == 0
    assert first['failed_in_domain'] == 6 - first['met']


def test_epoch_report_counts():
    report = EpochReport(
        index=3,
        met_at_start=np.array([True, False, False, False]),
        met=np.array([True, True, False, False]),
        rejected=np.array([True, False, True, False]),
        exited=np.array([False, False, False, True]),
    )
    assert report.failed_in_domain.tolist() == [False, False, True, False]
    assert report.to_dict() == {
        'index': 3,
        'active': 3,
        'met': 1,
        'rejected': 1,
        'exited': 1,
        'failed_in_domain': 1,
    }


def test_epoch_run_carries_the_contraction_flag():
    rng = rng_for('epoch_flag')
    model = iso_model(2)
    plan = desk_plan(2).with_epoch(5)
    assert plan.params.assumptions_ok is True
    z, z_tilde = _random_state(rng, 2, (3,)), _random_state(rng, 2, (3,))
    pair, _ = epoch_coupled_run(model, CoupledPair.start(z, z_tilde), plan, rng, n_epochs=1)
    assert pair.contraction_guaranteed

    low_friction = replace(plan, gamma=5.0)
    pair, _ = epoch_coupled_run(
        model, CoupledPair.start(z, z_tilde), low_friction, rng, n_epochs=1
    )
    assert not pair.contraction_guaranteed
