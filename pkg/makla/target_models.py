"""Target distributions: potentials with gradient and Hessian access, plus the
Hamiltonian and energy-like functionals of phase-space states.

All evaluations broadcast over leading batch axes: ``x`` of shape ``(..., d)``
gives values of shape ``(...)``, gradients ``(..., d)`` and Hessians ``(..., d, d)``.

>>> model = IsotropicGaussian(L=4.0, d=3)
>>> value, grad = potential(model, [1.0, 0.0, 0.0])
>>> float(value), grad.tolist()
(2.0, [4.0, 0.0, 0.0])
>>> float(hamiltonian(model, PhaseState([1.0, 0, 0], [0.0, 0, 0])))
2.0
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Optional, Tuple

import numpy as np
from dol import KvReader
from scipy.optimize import minimize

from makla.errors import ConfigError, DimensionMismatchError
from makla.util import as_vector, kwargs_for, sqnorm

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PhaseState:
    """A point ``z = (x, v)`` of phase space, or a batch of them (leading axes)."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if x.shape != v.shape or x.ndim == 0:
            raise DimensionMismatchError(
                f'x and v must share a shape with a trailing dimension, got {x.shape} and {v.shape}'
            )
        object.__setattr__(self, 'x', x)
        object.__setattr__(self, 'v', v)

    @property
    def d(self) -> int:
        return self.x.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.x.shape[:-1]

    def flip(self) -> 'PhaseState':
        """The velocity flip ``(x, v) -> (x, -v)``"""
        return PhaseState(self.x, -self.v)

    def copy(self) -> 'PhaseState':
        return PhaseState(self.x.copy(), self.v.copy())

    def where(self, mask, other: 'PhaseState') -> 'PhaseState':
        """Batchwise select: ``self`` where ``mask`` holds, ``other`` elsewhere"""
        m = np.asarray(mask)[..., None]
        return PhaseState(np.where(m, self.x, other.x), np.where(m, self.v, other.v))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.v], axis=-1)

    @classmethod
    def from_vector(cls, z) -> 'PhaseState':
        z = np.asarray(z, dtype=float)
        d = z.shape[-1] // 2
        return cls(z[..., :d], z[..., d:])

    @classmethod
    def zeros(cls, d: int, batch_shape: tuple = ()) -> 'PhaseState':
        return cls(np.zeros((*batch_shape, d)), np.zeros((*batch_shape, d)))

    def __eq__(self, other):
        if not isinstance(other, PhaseState):
            return NotImplemented
        return np.array_equal(self.x, other.x) and np.array_equal(self.v, other.v)

    def __repr__(self):
        return f'PhaseState(x={self.x.tolist()}, v={self.v.tolist()})'


class TargetModel(ABC):
    """Potential ``U`` with exact gradient and Hessian, and its declared constants.

    Subclasses provide ``d`` (dimension), ``K`` (strong convexity), ``L`` (gradient
    Lipschitz) and ``L_H`` (Hessian Lipschitz). Constants are trusted, not estimated.
    """

    kind = 'abstract'
    illustration_only = False

    @abstractmethod
    def value(self, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def grad(self, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def hess(self, x: np.ndarray) -> np.ndarray:
        ...

    @property
    def kappa(self) -> float:
        return self.L / self.K

    @property
    def precision_diag(self) -> Optional[np.ndarray]:
        """Diagonal of ``A`` when ``U(x) = x.A.x/2`` with diagonal ``A``, else None"""
        return None

    @property
    def is_gaussian(self) -> bool:
        return self.precision_diag is not None

    @cached_property
    def minimizer(self) -> np.ndarray:
        """``argmin U``: the origin for Gaussian kinds, else a BFGS solve started there"""
        if self.is_gaussian:
            return np.zeros(self.d)
        res = minimize(
            lambda x: float(self.value(x)),
            np.zeros(self.d),
            jac=self.grad,
            method='BFGS',
            options={'gtol': 1e-10},
        )
        if not res.success:
            logger.warning(f'minimizing U stopped early: {res.message}')
        return res.x

    def to_dict(self) -> dict:
        return {
            'model': self.kind,
            'd': self.d,
            'K': self.K,
            'L': self.L,
            'L_H': self.L_H,
            'kappa': self.kappa,
        }

    def _check_constants(self):
        if not 0 < self.K <= self.L:
            raise ConfigError(f'need 0 < K <= L, got K={self.K}, L={self.L}')
        if self.L_H < 0:
            raise ConfigError(f'need L_H >= 0, got {self.L_H}')
        if int(self.d) != self.d or self.d < 1:
            raise ConfigError(f'd must be a positive integer, got {self.d}')


@dataclass(frozen=True)
class IsotropicGaussian(TargetModel):
    """``U(x) = (L/2)|x|^2``"""

    L: float = 1.0
    d: int = 1
    kind = 'iso_gauss'

    def __post_init__(self):
        self._check_constants()

    @property
    def K(self):
        return self.L

    L_H = 0.0

    @property
    def precision_diag(self):
        return np.full(self.d, float(self.L))

    def value(self, x):
        return 0.5 * self.L * sqnorm(x)

    def grad(self, x):
        return self.L * x

    def hess(self, x):
        return np.broadcast_to(self.L * np.eye(self.d), (*np.shape(x)[:-1], self.d, self.d))


@dataclass(frozen=True)
class DiagonalGaussian(TargetModel):
    """``U(x) = (1/2) sum_i a_i x_i^2``"""

    diag: Tuple[float, ...] = (1.0,)
    kind = 'diag_gauss'

    def __post_init__(self):
        diag = tuple(float(a) for a in np.atleast_1d(self.diag))
        if not diag or min(diag) <= 0:
            raise ConfigError(f'diagonal entries must be positive, got {diag}')
        object.__setattr__(self, 'diag', diag)

    @property
    def d(self):
        return len(self.diag)

    @property
    def K(self):
        return min(self.diag)

    @property
    def L(self):
        return max(self.diag)

    L_H = 0.0

    @property
    def precision_diag(self):
        return np.array(self.diag)

    def value(self, x):
        return 0.5 * np.einsum('...i,i,...i->...', x, self.precision_diag, x)

    def grad(self, x):
        return self.precision_diag * x

    def hess(self, x):
        return np.broadcast_to(
            np.diag(self.precision_diag), (*np.shape(x)[:-1], self.d, self.d)
        )

    def to_dict(self):
        return dict(super().to_dict(), diag=list(self.diag))


@dataclass(frozen=True)
class PerturbedExample(TargetModel):
    """``U(x) = x.diag(2, 1, ..., 1).x/2 - sin(x_1)``.

    Its minimum is not at the origin (``grad U(0) = -e_1``), so it only serves to
    illustrate the dimension dependence of the energy error.

    >>> m = PerturbedExample(d=3)
    >>> m.grad(np.zeros(3)).tolist()
    [-1.0, 0.0, 0.0]
    >>> np.diag(m.hess(np.zeros(3))).tolist()
    [2.0, 1.0, 1.0]
    """

    d: int = 1
    kind = 'perturbed'
    illustration_only = True
    K = 1.0
    L = 3.0
    L_H = 1.0

    def __post_init__(self):
        self._check_constants()

    @property
    def _a(self):
        a = np.ones(self.d)
        a[0] = 2.0
        return a

    def value(self, x):
        return 0.5 * np.einsum('...i,i,...i->...', x, self._a, x) - np.sin(x[..., 0])

    def grad(self, x):
        g = self._a * x
        g[..., 0] -= np.cos(x[..., 0])
        return g

    def hess(self, x):
        h = np.broadcast_to(np.diag(self._a), (*np.shape(x)[:-1], self.d, self.d)).copy()
        h[..., 0, 0] += np.sin(x[..., 0])
        return h


@dataclass(frozen=True)
class CustomModel(TargetModel):
    """A user potential. ``value``, ``grad`` and ``hess`` callables must broadcast over
    leading axes and the declared constants must be correct."""

    d: int
    K: float
    L: float
    L_H: float
    value_func: Callable = field(repr=False, default=None)
    grad_func: Callable = field(repr=False, default=None)
    hess_func: Optional[Callable] = field(repr=False, default=None)
    kind = 'custom'

    def __post_init__(self):
        self._check_constants()
        if self.value_func is None or self.grad_func is None:
            raise ConfigError('a custom model needs value_func and grad_func')

    def value(self, x):
        return self.value_func(x)

    def grad(self, x):
        return self.grad_func(x)

    def hess(self, x):
        if self.hess_func is None:
            raise NotImplementedError('this custom model has no Hessian')
        return self.hess_func(x)


class ModelRegistry(KvReader):
    """Model classes keyed by their config name"""

    def __init__(self, *model_classes):
        self._classes = {cls.kind: cls for cls in model_classes}

    def __getitem__(self, k):
        try:
            return self._classes[k]
        except KeyError:
            raise ConfigError(f'unknown model {k!r}, known models: {list(self)}')

    def __iter__(self):
        yield from self._classes

    def __len__(self):
        return len(self._classes)

    def __contains__(self, k):
        return k in self._classes


models = ModelRegistry(IsotropicGaussian, DiagonalGaussian, PerturbedExample)


def mk_model(spec: Mapping) -> TargetModel:
    """Make a model from a config mapping such as ``{"model": "iso_gauss", "L": 4.0, "d": 8}``.

    >>> mk_model({'model': 'diag_gauss', 'diag': [1, 4]}).kappa
    4.0
    """
    if isinstance(spec, TargetModel):
        return spec
    spec = dict(spec)
    cls = models[spec.get('model', 'iso_gauss')]
    kwargs = kwargs_for(cls, spec)
    if 'd' in kwargs:
        kwargs['d'] = int(kwargs['d'])
    return cls(**kwargs)


def check_state(model, z: PhaseState, *, check_finite=True):
    as_vector(z.x, model.d, 'x', check_finite=check_finite)
    as_vector(z.v, model.d, 'v', check_finite=check_finite)


def potential(model: TargetModel, x) -> Tuple[np.ndarray, np.ndarray]:
    """``(U(x), grad U(x))``"""
    x = as_vector(x, model.d, 'x')
    return model.value(x), model.grad(x)


def hessian(model: TargetModel, x) -> np.ndarray:
    x = as_vector(x, model.d, 'x')
    return model.hess(x)


def hamiltonian(model: TargetModel, z: PhaseState) -> np.ndarray:
    """``H(z) = |v|^2/2 + U(x)``"""
    check_state(model, z)
    return 0.5 * sqnorm(z.v) + model.value(z.x)


def energy_like(model: TargetModel, z: PhaseState) -> np.ndarray:
    """``|v|^2 + |grad U(x)|^2 / L``, whose level sets are the localization domains.

    >>> float(energy_like(IsotropicGaussian(L=4.0, d=2), PhaseState([1.0, 0], [0.0, 0])))
    4.0
    """
    check_state(model, z)
    return sqnorm(z.v) + sqnorm(model.grad(z.x)) / model.L


def in_domain(model: TargetModel, z: PhaseState, R_U: float) -> np.ndarray:
    return energy_like(model, z) <= R_U


def stationary_sample(
    model: TargetModel, rng: np.random.Generator, batch_shape: tuple = ()
) -> PhaseState:
    """Exact draws from ``N(0, A^{-1}) x N(0, I)``, for Gaussian kinds only"""
    prec = model.precision_diag
    if prec is None:
        raise ConfigError(f'{model.kind} has no exact stationary sampler')
    x = rng.standard_normal((*batch_shape, model.d)) / np.sqrt(prec)
    v = rng.standard_normal((*batch_shape, model.d))
    return PhaseState(x, v)
