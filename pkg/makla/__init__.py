"""Metropolis-adjusted kinetic Langevin sampling with certified mixing plans"""

from makla.target_models import (
    PhaseState,
    TargetModel,
    IsotropicGaussian,
    DiagonalGaussian,
    PerturbedExample,
    CustomModel,
    mk_model,
    potential,
    hessian,
    hamiltonian,
    energy_like,
    in_domain,
)
from makla.integrator import (
    KernelParams,
    ou_half_step,
    theta_h,
    velocity_flip,
    ukla_step,
    makla_step,
    run_chain,
)
from makla.geometry import TwistedNorm, twisted_norm, twisted_distance, contraction_constant
from makla.couplings import (
    CoupledPair,
    synchronous_coupled_step,
    one_shot_map,
    one_shot_coupled_step,
    epoch_coupled_run,
)
from makla.planner import (
    EpochPlan,
    StartDistribution,
    check_assumptions,
    build_plan,
    certificates,
    admissible_step_size,
    mk_start,
)
from makla.diagnostics import VerificationReport, estimate_mixing, suites
from makla.util import random_stream
