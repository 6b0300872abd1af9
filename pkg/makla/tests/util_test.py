import numpy as np
import pytest

from makla.errors import DimensionMismatchError, NonFiniteError
from makla.util import (
    as_vector,
    kwargs_for,
    merge_config,
    random_stream,
    replica_chunks,
    se_of_proportion,
)


def test_random_stream():
    a = random_stream(7, 0, 3).standard_normal(1000)
    assert np.array_equal(a, random_stream(7, 0, 3).standard_normal(1000))
    assert not np.array_equal(a, random_stream(7, 3, 0).standard_normal(1000))
    assert not np.array_equal(a, random_stream(8, 0, 3).standard_normal(1000))
    # creation order does not matter
    random_stream(7, 1).random(10)
    assert np.array_equal(a, random_stream(7, 0, 3).standard_normal(1000))
    # 64-bit seeds
    random_stream(2 ** 64 - 1, 2 ** 32).random()


def test_replica_chunks():
    assert list(replica_chunks(4, 4)) == [(0, 0, 4)]
    assert list(replica_chunks(0, 3)) == []
    chunks = list(replica_chunks(1000, 64))
    assert chunks[-1] == (15, 960, 1000)
    assert sum(hi - lo for _, lo, hi in chunks) == 1000
    with pytest.raises(ValueError):
        list(replica_chunks(10, 0))


def test_merge_config():
    assert merge_config(None, None) == {}
    assert merge_config({'seed': 1, 'h': 'auto'}, {'seed': 2, 'h': None}) == {
        'seed': 2,
        'h': 'auto',
    }
    assert merge_config({}, {'eps': 0.05}) == {'eps': 0.05}


def test_kwargs_for():
    def suite(model, params, rng, n_states=10):
        ...

    config = {'model': 1, 'n_states': 5, 'replicas': 3}
    assert kwargs_for(suite, config) == {'model': 1, 'n_states': 5}
    assert kwargs_for(suite, config, exclude=['model']) == {'n_states': 5}


def test_se_of_proportion():
    assert float(se_of_proportion(0.5, 100)) == pytest.approx(0.05)
    # zero counts keep a margin
    assert float(se_of_proportion(0.0, 100)) == pytest.approx(0.01)
    assert float(se_of_proportion(1.0, 0)) == 1.0


def test_as_vector():
    assert as_vector([[1, 2], [3, 4]], 2).shape == (2, 2)
    with pytest.raises(DimensionMismatchError):
        as_vector(3.0, 1)
    with pytest.raises(DimensionMismatchError):
        as_vector([1.0, 2.0], 3, 'v')
    with pytest.raises(NonFiniteError):
        as_vector([1.0, np.inf], 2)
    assert np.isnan(as_vector([np.nan], 1, check_finite=False)[0])
