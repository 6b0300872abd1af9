"""Phase-space norms for the contraction analysis.

The twisted norm ``|z|_tw^2 = alpha|x|^2 + beta<x, v> + |v|^2`` with ``beta = gamma/4``
and ``alpha = (beta/h) sinh(gamma h/2)`` is the one in which the synchronous coupling
contracts. For ``gamma h <= 1`` it is equivalent to ``gamma^2|x|^2 + |v|^2``:

    (1/16) |z|^2  <=  |z|_tw^2  <=  (17/16) |z|^2

>>> from makla.target_models import PhaseState
>>> tn = TwistedNorm.from_params(gamma=2.0, h=0.25)
>>> round(tn.alpha, 7), tn.beta
(0.5052246, 0.5)
>>> float(twisted_norm(tn, PhaseState([0.0], [3.0])))
3.0
"""

import math
from dataclasses import dataclass

import numpy as np

from makla.constants import SQRT_E_34
from makla.target_models import PhaseState, TargetModel
from makla.util import inner, sqnorm


@dataclass(frozen=True)
class TwistedNorm:
    alpha: float
    beta: float
    gamma: float
    h: float

    @classmethod
    def from_params(cls, params=None, *, gamma=None, h=None):
        """Build from a ``KernelParams`` (or explicit ``gamma``, ``h``)"""
        if params is not None:
            gamma, h = params.gamma, params.h
        beta = gamma / 4
        return cls(alpha=beta / h * math.sinh(gamma * h / 2), beta=beta, gamma=gamma, h=h)


def _twisted_sq(tn: TwistedNorm, x, v):
    return tn.alpha * sqnorm(x) + tn.beta * inner(x, v) + sqnorm(v)


def twisted_norm(tn: TwistedNorm, z: PhaseState) -> np.ndarray:
    # the form is positive definite; clip round-off below zero
    return np.sqrt(np.maximum(_twisted_sq(tn, z.x, z.v), 0.0))


def twisted_distance(tn: TwistedNorm, z: PhaseState, z_tilde: PhaseState) -> np.ndarray:
    return np.sqrt(np.maximum(_twisted_sq(tn, z.x - z_tilde.x, z.v - z_tilde.v), 0.0))


def untwisted_norm(gamma: float, z: PhaseState) -> np.ndarray:
    """``sqrt(gamma^2 |x|^2 + |v|^2)``"""
    return np.sqrt(gamma * gamma * sqnorm(z.x) + sqnorm(z.v))


def contraction_constant(model: TargetModel, gamma: float) -> float:
    """``c = min(K/gamma, gamma) / (34 sqrt(e))``: per unit time twisted-norm contraction
    rate of the synchronous coupling.

    >>> from makla.target_models import IsotropicGaussian
    >>> round(contraction_constant(IsotropicGaussian(L=1.0, d=1), 10.0), 7)
    0.0017839
    """
    return min(model.K / gamma, gamma) / SQRT_E_34
