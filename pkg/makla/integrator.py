"""OABAO splitting of kinetic Langevin dynamics: Ornstein-Uhlenbeck half steps around
the leapfrog core ``theta_h``, unadjusted (UKLA) and Metropolis-adjusted (MAKLA).

Every step is a pure function of its state and of explicitly supplied noise, and
broadcasts over leading batch axes.

>>> from makla.target_models import IsotropicGaussian, PhaseState
>>> z = theta_h(IsotropicGaussian(L=1.0, d=1), PhaseState([1.0], [0.0]), 0.1)
>>> np.round(z.x, 12).tolist(), np.round(z.v, 12).tolist()
([0.995], [-0.1])
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from makla.constants import DFLT_GAMMA_FACTOR, auto
from makla.errors import (
    ConfigError,
    DimensionMismatchError,
    DivergedTrajectoryError,
)
from makla.target_models import PhaseState, TargetModel, check_state, hamiltonian
from makla.util import sqnorm

logger = logging.getLogger(__name__)


def hyperparameters_ok(model: TargetModel, h: float, gamma: float) -> bool:
    """``sqrt(L)/gamma <= 1/10`` and ``gamma h <= 1``"""
    return math.sqrt(model.L) / gamma <= 0.1 and gamma * h <= 1


@dataclass(frozen=True)
class KernelParams:
    """Step size ``h`` and friction ``gamma`` of the OABAO kernel.

    >>> p = KernelParams(h=0.25, gamma=2.0)
    >>> round(p.ou_decay, 6), round(p.ou_noise_scale, 6)
    (0.778801, 0.627271)
    """

    h: float
    gamma: float
    assumptions_ok: Optional[bool] = None
    ou_decay: float = field(init=False)
    ou_noise_scale: float = field(init=False)

    def __post_init__(self):
        if not (self.h > 0 and self.gamma > 0):
            raise ConfigError(f'need h > 0 and gamma > 0, got h={self.h}, gamma={self.gamma}')
        object.__setattr__(self, 'h', float(self.h))
        object.__setattr__(self, 'gamma', float(self.gamma))
        object.__setattr__(self, 'ou_decay', math.exp(-self.gamma * self.h / 2))
        object.__setattr__(
            self, 'ou_noise_scale', math.sqrt(-math.expm1(-self.gamma * self.h))
        )

    @classmethod
    def from_model(cls, model: TargetModel, h, gamma=auto):
        """Params with ``gamma='auto'`` resolved to ``10 sqrt(L)`` and the
        hyperparameter conditions ``sqrt(L)/gamma <= 1/10``, ``gamma h <= 1`` recorded."""
        if gamma is auto or gamma == 'auto':
            gamma = DFLT_GAMMA_FACTOR * math.sqrt(model.L)
        ok = hyperparameters_ok(model, h, gamma)
        if not ok:
            logger.warning(
                f'h={h}, gamma={gamma} violate sqrt(L)/gamma <= 1/10 or gamma*h <= 1 for L={model.L}'
            )
        return cls(h=h, gamma=gamma, assumptions_ok=ok)

    def to_dict(self):
        return {
            'h': self.h,
            'gamma': self.gamma,
            'assumptions_ok': self.assumptions_ok,
            'ou_decay': self.ou_decay,
            'ou_noise_scale': self.ou_noise_scale,
        }


@dataclass(frozen=True, eq=False)
class StepOutcome:
    """Result of one MAKLA transition.

    ``proposal`` is the leapfrog image of the post-first-O state; when ``accepted``
    is false the velocity flip of that post-first-O state was used instead.
    """

    next: PhaseState
    accepted: np.ndarray
    delta_H: np.ndarray
    proposal: PhaseState


def _check_noise(noise, z: PhaseState, name):
    if np.shape(noise)[-1:] != (z.d,):
        got = np.shape(noise)[-1] if np.ndim(noise) else 0
        DimensionMismatchError.raise_error(name, got, z.d)


def ou_half_step(z: PhaseState, params: KernelParams, noise_b) -> PhaseState:
    """Exact Ornstein-Uhlenbeck flow over ``h/2``: ``x`` unchanged,
    ``v -> exp(-gamma h/2) v + sqrt(1 - exp(-gamma h)) b``"""
    _check_noise(noise_b, z, 'noise_b')
    return PhaseState(z.x, params.ou_decay * z.v + params.ou_noise_scale * np.asarray(noise_b))


def theta_h(model: TargetModel, z: PhaseState, h: float) -> PhaseState:
    """Drift ``h/2``, kick ``h``, drift ``h/2``"""
    x_mid = z.x + 0.5 * h * z.v
    v = z.v - h * model.grad(x_mid)
    return PhaseState(x_mid + 0.5 * h * v, v)


def velocity_flip(z: PhaseState) -> PhaseState:
    return z.flip()


def energy_error(model: TargetModel, z: PhaseState, h: float) -> np.ndarray:
    """``H(theta_h(z)) - H(z)``"""
    return hamiltonian(model, theta_h(model, z, h)) - hamiltonian(model, z)


def ukla_step(model, z: PhaseState, params: KernelParams, xi1, xi2) -> PhaseState:
    check_state(model, z, check_finite=False)
    z1 = ou_half_step(z, params, xi1)
    return ou_half_step(theta_h(model, z1, params.h), params, xi2)


def _energy(model, z: PhaseState):
    return 0.5 * sqnorm(z.v) + model.value(z.x)


def makla_step(model, z: PhaseState, params: KernelParams, xi1, xi2, u) -> StepOutcome:
    """One adjusted transition.

    The leapfrog core is accepted iff ``u <= exp(-max(delta_H, 0))``, where
    ``delta_H`` is evaluated at the post-first-O state; otherwise the velocity of that
    state is flipped. The second O half-step is applied in both cases.
    """
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)):
        raise ValueError('u must lie in [0, 1]')
    check_state(model, z, check_finite=False)
    z1 = ou_half_step(z, params, xi1)
    proposal = theta_h(model, z1, params.h)
    delta_H = _energy(model, proposal) - _energy(model, z1)
    if not np.all(np.isfinite(delta_H)):
        raise DivergedTrajectoryError(
            f'non-finite energy error at h={params.h}; the trajectory diverged'
        )
    accepted = u <= np.exp(-np.maximum(delta_H, 0.0))
    z2 = proposal.where(accepted, z1.flip())
    return StepOutcome(ou_half_step(z2, params, xi2), accepted, delta_H, proposal)


@dataclass(frozen=True, eq=False)
class ChainRun:
    """Recorded states (record axis first), their step indices, and acceptance counts"""

    states: PhaseState
    steps: np.ndarray
    accepted: np.ndarray
    n_steps: int
    adjusted: bool

    @property
    def acceptance_rate(self):
        return self.accepted / max(self.n_steps, 1)


def run_chain(
    model,
    z0: PhaseState,
    params: KernelParams,
    rng: np.random.Generator,
    n_steps: int,
    *,
    adjusted: bool = True,
    thin: int = 1,
    burn_in: int = 0,
) -> ChainRun:
    """Run MAKLA (``adjusted=True``) or UKLA chains from ``z0`` (batched over leading
    axes), recording every ``thin``-th state after ``burn_in`` steps."""
    z = z0
    shape = z0.x.shape
    accepted = np.zeros(z0.batch_shape, dtype=int)
    xs, vs, steps = [], [], []
    for step in range(1, n_steps + 1):
        xi1 = rng.standard_normal(shape)
        xi2 = rng.standard_normal(shape)
        if adjusted:
            out = makla_step(model, z, params, xi1, xi2, rng.random(z0.batch_shape))
            z = out.next
            accepted += out.accepted
        else:
            z = ukla_step(model, z, params, xi1, xi2)
            accepted += 1
        if step > burn_in and (step - burn_in) % thin == 0:
            xs.append(z.x)
            vs.append(z.v)
            steps.append(step)
    if xs:
        states = PhaseState(np.stack(xs), np.stack(vs))
    else:
        states = PhaseState(np.empty((0, *shape)), np.empty((0, *shape)))
    return ChainRun(states, np.array(steps, dtype=int), accepted, n_steps, adjusted)


def ukla_stationary_covariance(model: TargetModel, params: KernelParams) -> np.ndarray:
    """Exact stationary covariance of UKLA for diagonal Gaussian targets.

    Returns an array of shape ``(d, 2, 2)``: the ``(x_i, v_i)`` covariance block of
    each coordinate, from the discrete Lyapunov equation of the linear recursion.
    """
    prec = model.precision_diag
    if prec is None:
        raise ConfigError(f'{model.kind} is not Gaussian; no closed-form UKLA covariance')
    h, c, s = params.h, params.ou_decay, params.ou_noise_scale
    o = np.diag([1.0, c])
    noise_dir = np.array([0.0, s])
    blocks = []
    for a in prec:
        t = np.array(
            [[1 - h * h * a / 2, h - h ** 3 * a / 4], [-h * a, 1 - h * h * a / 2]]
        )
        transition = o @ t @ o
        b1 = o @ t @ noise_dir
        q = np.outer(b1, b1) + np.outer(noise_dir, noise_dir)
        blocks.append(solve_discrete_lyapunov(transition, q))
    return np.array(blocks)
