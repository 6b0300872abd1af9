import zlib
from functools import lru_cache

from makla.integrator import KernelParams
from makla.planner import build_plan, log_lyapunov_product_gaussian
from makla.target_models import IsotropicGaussian
from makla.tests import TEST_SEED
from makla.util import random_stream

# Hyperparameters that pass the kernel conditions but not the certificates: the
# planned epochs are long, so runs override them with with_epoch.
DESK_H = 0.05
DESK_GAMMA = 10.0


def rng_for(name: str, seed: int = TEST_SEED):
    """A generator of its own for each test"""
    return random_stream(seed, zlib.crc32(name.encode()))


@lru_cache()
def desk_params(h=DESK_H, gamma=DESK_GAMMA):
    return KernelParams(h=h, gamma=gamma, assumptions_ok=True)


@lru_cache()
def iso_model(d=2, L=1.0):
    return IsotropicGaussian(L=L, d=d)


@lru_cache()
def desk_plan(d=2, eps=0.1, h=DESK_H, gamma=DESK_GAMMA):
    return build_plan(
        iso_model(d), KernelParams(h=h, gamma=gamma), eps, log_lyapunov_product_gaussian(d)
    )
