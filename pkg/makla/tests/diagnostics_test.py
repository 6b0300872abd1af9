from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import pytest

from makla.diagnostics import (
    VerificationReport,
    estimate_mixing,
    exit_frequency,
    leading_order_energy_error,
    lyapunov_drift_check,
    ou_moment_check,
    pair_at_distance,
    rejection_rate_epoch,
    stationarity_and_bias,
    stationary_comparison_states,
    suites,
    verify_contraction,
    verify_energy_error,
    verify_leading_order,
    verify_one_shot,
    verify_reversibility,
    verify_volume_preservation,
)
from makla.errors import AssumptionError, ConfigError
from makla.geometry import TwistedNorm, twisted_distance
from makla.integrator import KernelParams, run_chain
from makla.planner import build_plan, log_lyapunov_product_gaussian
from makla.stores import validate_artifact
from makla.target_models import PerturbedExample, PhaseState
from makla.tests import TEST_SEED, data
from makla.tests.util import desk_params, desk_plan, iso_model, rng_for


def test_verification_report_passed():
    assert VerificationReport('a', trials=10, violations=0, worst_margin=-1.0).passed
    assert not VerificationReport('a', trials=10, violations=1, worst_margin=1.0).passed
    statistical = VerificationReport(
        'b', trials=10, violations=0, worst_margin=-0.2, statistical=True, stderr=0.1
    )
    assert statistical.passed
    assert not replace(statistical, worst_margin=-0.4).passed
    d = replace(statistical, details={'x': np.array([1.0, np.inf])}).to_dict()
    assert d['passed'] is True
    assert d['details'] == {'x': [1.0, None]}


def test_energy_error_bounds():
    report = verify_energy_error(iso_model(4), 0.1, 100_000, rng=rng_for('energy_iso'))
    assert report.passed, report.details
    assert report.trials == 100_000

    report = verify_energy_error(PerturbedExample(d=3), 0.1, 20_000, rng=rng_for('energy_pert'))
    assert report.passed, report.details
    assert report.details['worst_ratio_second_bound'] < 1

    def at_the_minimum(rng, n):
        return PhaseState.zeros(2, (n,))

    report = verify_energy_error(iso_model(2), 0.1, 10, at_the_minimum)
    assert report.violations == 0
    assert report.details['worst_ratio_first_bound'] == 0.0

    with pytest.raises(AssumptionError):
        verify_energy_error(iso_model(1), 2.0, 10)


def test_leading_order():
    assert leading_order_energy_error(1, 1.0) == pytest.approx(
        data.leading_order_coefficients[0][1]
    )
    d, coefficient = data.leading_order_coefficients[1]
    assert leading_order_energy_error(d, 0.1) == pytest.approx(coefficient * 1e-3)

    for d in (1, 4, 16):
        report = verify_leading_order(d)
        assert report.passed, report.details
        assert all(s > 1 for s in report.details['shrink_factors'])
    assert verify_leading_order(16).worst_margin > 0.04


def test_contraction():
    report = verify_contraction(iso_model(2), desk_params(), 2000, rng_for('contraction'))
    assert report.passed, report.details
    assert report.details['worst_ratio'] < 1

    report = verify_contraction(
        iso_model(2), desk_params(), 2000, rng_for('contraction'), c_scale=1000.0
    )
    assert not report.passed

    with pytest.raises(AssumptionError):
        verify_contraction(iso_model(2), KernelParams(h=0.05, gamma=5.0), 10)


def test_reversibility_and_volume():
    model, h = PerturbedExample(d=3), 0.1
    report = verify_reversibility(model, h, 500, rng_for('reversibility'))
    assert report.passed and report.details['max_error'] < 1e-12
    report = verify_volume_preservation(model, h, 10, rng_for('volume'))
    assert report.passed, report.details


def test_pair_at_distance():
    params = desk_params()
    z, z_tilde = pair_at_distance(iso_model(3), params, 0.25, rng_for('pair_at_distance'))
    tn = TwistedNorm.from_params(params)
    assert float(twisted_distance(tn, z, z_tilde)) == pytest.approx(0.25)


def test_one_shot_meeting_frequency():
    report = verify_one_shot(iso_model(2), desk_params(), 0.01, 4000, rng_for('one_shot'))
    assert report.passed, report.details
    assert report.details['meeting_frequency'] >= 1 - report.details['tv_bound']


def test_rejection_rate():
    model = iso_model(2)
    report = rejection_rate_epoch(model, desk_plan(2), 32, 128, rng_for('rejection_desk'))
    assert not report.passed
    assert report.details['epoch_times_sup_rejection'] > data.high_acceptance_budget

    plan = build_plan(
        model, KernelParams(h=1e-3, gamma=10.0), 0.1, log_lyapunov_product_gaussian(2)
    ).with_epoch(10)
    report = rejection_rate_epoch(model, plan, 32, 128, rng_for('rejection_small'))
    assert report.passed, report.details


def test_lyapunov_drift_and_exits():
    model = iso_model(2)
    plan = replace(desk_plan(2), R_U=50.0, lam=1.875)
    report = lyapunov_drift_check(model, plan, 64, rng_for('lyapunov'), n_trials=256)
    assert report.passed, report.details
    assert report.details['bound'] == pytest.approx(np.exp(1.875))

    # the desk plan's bound is vacuous, but reported
    report = lyapunov_drift_check(model, desk_plan(2), 8, rng_for('lyapunov'), n_trials=16)
    assert report.passed

    report = exit_frequency(model, desk_plan(2), 32, rng_for('exits'), n_steps=200)
    assert report.passed
    assert report.details == {'n_steps': 200, 'exit_bound': 1.0, 'frequency': 0.0}


def test_ou_moments():
    report = ou_moment_check(iso_model(2), desk_params(), 64, rng_for('ou_moments'))
    assert report.passed


def test_stationarity_needs_known_moments():
    with pytest.raises(ConfigError):
        stationarity_and_bias(PerturbedExample(d=2), desk_params(), 10, 0)


def _small_mixing(map_func=map, record_trace=False):
    plan = desk_plan(2).with_epoch(50)
    return estimate_mixing(
        iso_model(2),
        plan,
        8,
        TEST_SEED,
        chunk_size=4,
        map_func=map_func,
        record_trace=record_trace,
    )


def test_estimate_mixing():
    report, trace = _small_mixing()
    assert trace == []
    values = [point['value'] for point in report.curve]
    assert len(values) == report.k + 1
    assert values[0] == 1.0
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert report.curve_value(report.epoch - 1) == 1.0
    assert report.curve_value(10 ** 9) == report.curve_at_horizon
    assert report.n_replicas == 8
    assert report.epochs[0]['active'] == 8
    validate_artifact(dict(report.to_dict(), kind='mixing'))


def test_estimate_mixing_is_deterministic_across_workers():
    report, trace = _small_mixing(record_trace=True)
    with ThreadPoolExecutor(2) as executor:
        threaded, threaded_trace = _small_mixing(executor.map, record_trace=True)
    assert report.to_dict() == threaded.to_dict()
    assert trace == threaded_trace
    assert {row['replica'] for row in trace} == set(range(8))
    assert trace[0]['step'] == 50


def test_suite_registry():
    assert 'energy_error' in suites and 'stationarity' in suites
    assert suites['reversibility'].deterministic
    assert not suites['one_shot'].deterministic
    with pytest.raises(ConfigError):
        suites['nope']

    context = {'model': PerturbedExample(d=3), 'params': KernelParams(h=0.1, gamma=5.0)}
    (report,) = suites.run('reversibility', context, TEST_SEED)
    assert report.passed
    assert report.to_dict() == suites.run('reversibility', context, TEST_SEED)[0].to_dict()
    validate_artifact(dict(report.to_dict(), kind='report'))

    reports = suites.run('leading_order', {'dims': (1, 4)}, TEST_SEED)
    assert [r.details['d'] for r in reports] == [1, 4]


def test_comparison_chains_warm_up_from_the_minimum():
    model = PerturbedExample(d=2)
    plan = desk_plan(2).with_epoch(3)
    states, steps = stationary_comparison_states(
        model, plan, rng_for('warm_up'), 5, warm_up_epochs=2
    )
    assert steps == 6
    rng = rng_for('warm_up')
    z0 = PhaseState(np.tile(model.minimizer, (5, 1)), rng.standard_normal((5, 2)))
    run = run_chain(model, z0, plan.params, rng, 6, thin=6)
    np.testing.assert_array_equal(states.x, run.states.x[-1])
    np.testing.assert_array_equal(states.v, run.states.v[-1])

    _, steps = stationary_comparison_states(iso_model(2), plan, rng_for('warm_up'), 5)
    assert steps == 0
