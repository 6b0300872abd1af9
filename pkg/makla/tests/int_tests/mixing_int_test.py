import numpy as np
import pytest
from scipy import stats

from makla.couplings import CoupledPair, epoch_coupled_run
from makla.diagnostics import estimate_mixing, mixing_scaling, stationarity_and_bias
from makla.integrator import KernelParams
from makla.planner import mk_start
from makla.target_models import PhaseState, stationary_sample
from makla.tests import TEST_SEED
from makla.tests.util import desk_plan, iso_model, rng_for
from makla.util import se_of_proportion


def test_mixing_within_eps():
    model = iso_model(2)
    plan = desk_plan(2).with_epoch(2000)
    report, _ = estimate_mixing(model, plan, 1000, TEST_SEED)
    assert report.passed, report.to_dict()
    assert report.curve_at_horizon <= plan.eps
    assert report.per_epoch_failure <= np.exp(-1)
    assert report.curve_value(plan.epoch - 1) == 1.0


def test_half_horizon_misses_a_quarter_of_eps():
    # epochs short enough that one epoch does not bring every pair together
    model = iso_model(2)
    plan = desk_plan(2).with_epoch(20)
    report, _ = estimate_mixing(model, plan, 1000, TEST_SEED)
    half = report.curve_value(plan.horizon // 2)
    assert half - 3 * se_of_proportion(half, report.n_replicas) > plan.eps / 4
    assert report.curve_value(plan.horizon) <= half


def test_mixing_from_a_point_mass():
    model = iso_model(2)
    plan = desk_plan(2).with_epoch(2000)
    start = mk_start({'kind': 'dirac', 'x': [3.0, -3.0]}, model)
    report, _ = estimate_mixing(model, plan, 256, TEST_SEED, start=start)
    assert report.passed, report.to_dict()


def test_meeting_time_scales_like_inverse_step_size():
    fit = mixing_scaling(
        iso_model(2), (0.025, 0.0333, 0.05), 10.0, 0.1, 64, TEST_SEED, epoch_time=100.0
    )
    assert fit['slope'] > 0
    assert fit['r_squared'] >= 0.95


@pytest.mark.parametrize('h', [0.05, 0.1, 0.2])
def test_stationarity_and_bias(h):
    report = stationarity_and_bias(
        iso_model(4),
        KernelParams(h=h, gamma=10.0),
        2000,
        200,
        rng_for(f'stationarity_{h}'),
        h_grid=(0.05, 0.1, 0.2),
    )
    assert report.passed, report.details
    assert report.details['ukla_bias_increasing']


def test_second_chain_stays_stationary():
    model = iso_model(2)
    rng = rng_for('second_chain_marginal')
    n = 2000
    z = PhaseState(np.full((n, 2), 3.0), np.zeros((n, 2)))
    pair = CoupledPair.start(z, stationary_sample(model, rng, (n,)))
    pair, _ = epoch_coupled_run(model, pair, desk_plan(2).with_epoch(20), rng, n_epochs=1)
    for coordinate in (*pair.z_tilde.x.T, *pair.z_tilde.v.T):
        assert stats.kstest(coordinate, 'norm').pvalue > 1e-3
    # the first chain has not forgotten its start yet
    assert pair.z.x.mean() > 1


@pytest.mark.parametrize('d', [1, 4])
def test_met_pairs_stay_met(d):
    model = iso_model(d)
    rng = rng_for(f'faithful_{d}')
    z = stationary_sample(model, rng, (64,))
    pair = CoupledPair.start(z, PhaseState(z.x + 1e-6, z.v))
    pair, reports = epoch_coupled_run(model, pair, desk_plan(d).with_epoch(100), rng)
    assert pair.met.mean() > 0.9
    met = pair.met
    assert np.array_equal(pair.z.x[met], pair.z_tilde.x[met])
    for before, after in zip(reports, reports[1:]):
        assert np.all(after.met[before.met])
