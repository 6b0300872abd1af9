import pytest

from makla.diagnostics import verify_contraction, verify_energy_error, verify_one_shot
from makla.target_models import PerturbedExample
from makla.tests import data
from makla.tests.util import desk_params, iso_model, rng_for


def test_contraction_over_many_pairs():
    report = verify_contraction(iso_model(2), desk_params(), 10 ** 4, rng_for('contraction_10k'))
    assert report.passed, report.details
    assert report.trials == 10 ** 4
    assert report.details['c'] == pytest.approx(data.contraction_constant_k1_g10, rel=1e-7)

    # observed contraction is far stronger than the guaranteed rate
    doubled = verify_contraction(
        iso_model(2), desk_params(), 10 ** 4, rng_for('contraction_10k'), c_scale=2.0
    )
    assert doubled.passed, doubled.details


@pytest.mark.parametrize('model', [iso_model(4), PerturbedExample(d=3)], ids=['iso', 'perturbed'])
def test_energy_error_bounds_over_many_states(model):
    report = verify_energy_error(model, 0.05, 10 ** 5, rng=rng_for(f'energy_{model.kind}'))
    assert report.violations == 0, report.details
    assert report.passed


@pytest.mark.parametrize('d', [1, 4])
def test_one_shot_over_many_trials(d):
    report = verify_one_shot(iso_model(d), desk_params(), 0.01, 10 ** 4, rng_for(f'one_shot_{d}'))
    assert report.passed, report.details
    details = report.details
    # the overlap estimate bounds the observed failure to meet
    slack = 3 * (report.stderr + details['overlap_stderr'])
    assert details['overlap_estimate'] + slack >= 1 - details['meeting_frequency']
    assert details['ks_pvalue'] > 0.01
