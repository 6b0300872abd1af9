"""Util functions"""

from typing import Callable, Iterable, Mapping, Optional

import numpy as np
from i2.signatures import Sig
from linkup import key_aligned_val_op_with_forced_defaults

from makla.constants import DFLT_CHUNK_SIZE
from makla.errors import DimensionMismatchError, NonFiniteError


def as_vector(obj, d: int, name='x', *, check_finite=True) -> np.ndarray:
    """Cast ``obj`` to a float array whose trailing axis has length ``d``.

    Leading axes are batch axes and are kept as they are.

    >>> as_vector([1, 2], 2)
    array([1., 2.])
    >>> as_vector([1, 2, 3], 2)
    Traceback (most recent call last):
      ...
    makla.errors.DimensionMismatchError: x has trailing dimension 3, but the model has d=2
    """
    arr = np.asarray(obj, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != d:
        got = arr.shape[-1] if arr.ndim else 0
        DimensionMismatchError.raise_error(name, got, d)
    if check_finite and not np.all(np.isfinite(arr)):
        NonFiniteError.raise_error(name)
    return arr


def sqnorm(arr: np.ndarray) -> np.ndarray:
    """Squared euclidean norm over the trailing axis"""
    return np.einsum('...i,...i->...', arr, arr)


def inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum('...i,...i->...', a, b)


def random_stream(seed: int, *counters: int) -> np.random.Generator:
    """A counter-based generator keyed by ``(seed, *counters)``.

    Streams with different counters are statistically independent, and a given key
    always produces the same draws, whatever the order in which streams are created.

    >>> a = random_stream(7, 0, 3).standard_normal(2)
    >>> b = random_stream(7, 0, 3).standard_normal(2)
    >>> bool((a == b).all())
    True
    >>> bool((random_stream(7, 1, 3).standard_normal(2) == a).any())
    False
    """
    key = np.random.SeedSequence([int(seed), *map(int, counters)])
    return np.random.Generator(np.random.Philox(key))


def replica_chunks(n_replicas: int, chunk_size: int = DFLT_CHUNK_SIZE):
    """Yield ``(chunk_index, start, stop)`` covering ``range(n_replicas)``.

    >>> list(replica_chunks(5, 2))
    [(0, 0, 2), (1, 2, 4), (2, 4, 5)]
    """
    if chunk_size < 1:
        raise ValueError(f'chunk_size must be positive, was {chunk_size}')
    for i, start in enumerate(range(0, n_replicas, chunk_size)):
        yield i, start, min(start + chunk_size, n_replicas)


def _override_unless_none(file_val, flag_val):
    return file_val if flag_val is None else flag_val


def merge_config(file_config: Optional[Mapping], flags: Optional[Mapping]) -> dict:
    """Merge a config document with command-line flags, flags winning when set.

    >>> merged = merge_config({'d': 4, 'h': 0.1}, {'h': None, 'seed': 3})
    >>> sorted(merged.items())
    [('d', 4), ('h', 0.1), ('seed', 3)]
    """
    merged = key_aligned_val_op_with_forced_defaults(
        dict(file_config or {}),
        dict(flags or {}),
        op=_override_unless_none,
        dflt_val_for_x=None,
        dflt_val_for_y=None,
    )
    return {k: v for k, v in merged.items() if v is not None}


def kwargs_for(func: Callable, config: Mapping, exclude: Iterable[str] = ()) -> dict:
    """The items of ``config`` that ``func`` accepts as keyword arguments.

    >>> def f(model, n, seed=1): ...
    >>> kwargs_for(f, {'n': 3, 'seed': 2, 'other': 0}, exclude=['model'])
    {'n': 3, 'seed': 2}
    """
    names = set(Sig(func).names) - set(exclude)
    return {k: v for k, v in config.items() if k in names}


def se_of_proportion(p, n):
    """Binomial standard error, floored at the one-event level so zero counts keep a margin"""
    p = np.asarray(p, dtype=float)
    return np.sqrt(np.maximum(p * (1 - p), 1 / max(n, 1)) / max(n, 1))
