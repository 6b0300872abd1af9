"""Derived constants of the MAKLA mixing analysis, and the certificates that decide
whether a step size puts the sampler in the high acceptance regime.

The plan of an experiment is: ``epoch`` transitions per epoch (``epoch - 1`` contractive
steps and one regularizing step), ``k = ceil(ln(2/eps))`` epochs, and a localization
domain ``{energy_like <= R_U}`` that the chains leave with probability at most ``eps/4``
over the horizon ``epoch * k``.

>>> epoch_length(0.01, 40, 100)
1041
>>> epochs_for(0.01)
6
"""

import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import Mapping, Optional

import numpy as np

from makla.constants import (
    DFLT_H_BRACKET_LOW,
    DFLT_H_REL_TOL,
    DFLT_RU_MAX_ITER,
    DFLT_RU_REL_TOL,
    DFLT_RU_START,
    HIGH_ACCEPTANCE_BUDGET,
)
from makla.errors import AssumptionError, ConfigError, FixedPointError
from makla.geometry import contraction_constant
from makla.integrator import KernelParams, hyperparameters_ok
from makla.target_models import PhaseState, TargetModel, hamiltonian, stationary_sample
from makla.util import as_vector

logger = logging.getLogger(__name__)


def energy_error_constant(model: TargetModel) -> float:
    """``C_dH = 4L``, the constant of the energy error bound ``|dH| <= C_dH h^2 energy_like``"""
    return 4 * model.L


@dataclass(frozen=True)
class AssumptionReport:
    checks: dict
    values: dict

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    @property
    def failed(self):
        return [k for k, v in self.checks.items() if not v]

    def to_dict(self):
        return {'ok': self.ok, 'checks': dict(self.checks), 'values': dict(self.values)}


def check_assumptions(
    model: TargetModel, params: KernelParams, horizon: Optional[int] = None
) -> AssumptionReport:
    """Verdicts on the hyperparameter conditions (``<=`` everywhere, boundaries pass).

    >>> from makla.target_models import IsotropicGaussian
    >>> r = check_assumptions(IsotropicGaussian(L=1.0, d=1), KernelParams(h=0.05, gamma=10.0))
    >>> r.ok, r.values['energy_growth']
    (True, 1.5625)
    """
    L, h, gamma = model.L, params.h, params.gamma
    c_dh = energy_error_constant(model)
    values = {
        'sqrt_L_over_gamma': math.sqrt(L) / gamma,
        'gamma_h': gamma * h,
        'energy_growth': (1 + 25 * c_dh * h * h) ** 2 * max(gamma * h, 1.0),
        'L_h2': L * h * h,
    }
    checks = {
        'sqrt_L_over_gamma': values['sqrt_L_over_gamma'] <= 0.1,
        'gamma_h': values['gamma_h'] <= 1,
        'energy_growth': values['energy_growth'] <= 4,
        'L_h2': values['L_h2'] <= 1,
    }
    if horizon is not None:
        values['horizon'] = 400 * L * horizon * h * h
        checks['horizon'] = values['horizon'] <= 1
    return AssumptionReport(checks, values)


def contraction_rate(model: TargetModel, params: KernelParams) -> float:
    """``rho = c h``, the per-step contraction of the synchronous coupling"""
    return contraction_constant(model, params.gamma) * params.h


def regularization_constant(model: TargetModel, params: KernelParams) -> float:
    """``C_Reg = 14((gamma h)^{-3/2} + L_H sqrt(d) h^2 / gamma)``"""
    gh = params.gamma * params.h
    return 14 * (gh ** -1.5 + model.L_H * math.sqrt(model.d) * params.h ** 2 / params.gamma)


def twisted_diameter(model: TargetModel, params: KernelParams, R_U: float) -> float:
    """``R = 3 sqrt(L) gamma / K * sqrt(R_U)``, bounding the twisted diameter of the domain"""
    return 3 * math.sqrt(model.L) * params.gamma / model.K * math.sqrt(R_U)


def epoch_length(rho: float, c_reg: float, R: float) -> int:
    """``ceil(ln(3e C_Reg R) / rho) + 1``, at least 2"""
    steps = math.ceil(math.log(3 * math.e * c_reg * R) / rho) + 1
    return max(int(steps), 2)


def epochs_for(eps: float) -> int:
    """``k = ceil(ln(2/eps))`` so that ``e^{-k} <= eps/2``"""
    return int(math.ceil(math.log(2 / eps)))


def lyapunov_rate(model: TargetModel, params: KernelParams, R_U: float) -> float:
    """``lambda = (1/8)[2(1 + 25 C_dH h^2) gamma h d + 25 C_dH h^2 R_U]``

    >>> from makla.target_models import IsotropicGaussian
    >>> lyapunov_rate(IsotropicGaussian(L=1.0, d=2), KernelParams(h=0.05, gamma=10.0), 50.0)
    1.875
    """
    h, gamma, d = params.h, params.gamma, model.d
    g = 25 * energy_error_constant(model) * h * h
    return (2 * (1 + g) * gamma * h * d + g * R_U) / 8


def log_lyapunov_dirac(model: TargetModel, z: PhaseState) -> float:
    """``log e^{H(z)/8}`` for a start at the point ``z``"""
    return float(hamiltonian(model, z)) / 8


def log_lyapunov_product_gaussian(d: int) -> float:
    """``log nu(e^{H/8}) = d ln(8/7)`` for ``nu = N(0, A^{-1}) x N(0, I)`` on a Gaussian target"""
    return d * math.log(8 / 7)


def log_lyapunov_stationary_bound(model: TargetModel) -> float:
    """``(d/2) ln(2 kappa)``, bounding ``log mu(e^{H/8})`` for the target itself"""
    return model.d / 2 * math.log(2 * model.kappa)


@dataclass(frozen=True)
class EpochPlan:
    h: float
    gamma: float
    eps: float
    d: int
    rho: float
    c_reg: float
    R_U: float
    R: float
    epoch: int
    k: int
    horizon: int
    lam: float
    c_dh: float
    log_nu_lyap: float
    log_mu_lyap: float
    epoch_overridden: bool = False
    assumptions_ok: Optional[bool] = None

    @property
    def params(self) -> KernelParams:
        return KernelParams(h=self.h, gamma=self.gamma, assumptions_ok=self.assumptions_ok)

    def with_epoch(self, epoch: int) -> 'EpochPlan':
        """A copy with a chosen epoch length, for runs too long at the planned one"""
        epoch = max(int(epoch), 2)
        return replace(self, epoch=epoch, horizon=epoch * self.k, epoch_overridden=True)

    def to_dict(self) -> dict:
        d = asdict(self)
        d['lambda'] = d.pop('lam')
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> 'EpochPlan':
        d = dict(d)
        d['lam'] = d.pop('lambda')
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def domain_radius_rhs(model, params, eps, horizon, log_nu) -> float:
    """``32[gamma h horizon d + ln(4/eps) + max(log nu(e^{H/8}), (d/2) ln(2 kappa))]``"""
    log_start = max(log_nu, log_lyapunov_stationary_bound(model))
    return 32 * (params.gamma * params.h * horizon * model.d + math.log(4 / eps) + log_start)


def _horizon_for(model, params, eps, R_U, rho, c_reg):
    epoch = epoch_length(rho, c_reg, twisted_diameter(model, params, R_U))
    return epoch, epoch * epochs_for(eps)


def solve_domain_radius(
    model: TargetModel,
    params: KernelParams,
    eps: float,
    log_nu: float,
    *,
    rel_tol: float = DFLT_RU_REL_TOL,
    max_iter: int = DFLT_RU_MAX_ITER,
) -> float:
    """Least ``R_U >= 2`` solving ``R_U = rhs(horizon(R_U))``.

    The horizon grows with ``ln R_U`` only, so iterating from 2 increases monotonically
    to the fixed point.
    """
    rho = contraction_rate(model, params)
    c_reg = regularization_constant(model, params)
    R_U = DFLT_RU_START
    for i in range(max_iter):
        _, horizon = _horizon_for(model, params, eps, R_U, rho, c_reg)
        new = max(DFLT_RU_START, domain_radius_rhs(model, params, eps, horizon, log_nu))
        logger.debug(f'R_U iteration {i}: {new}')
        if abs(new - R_U) <= rel_tol * new:
            return new
        R_U = new
    raise FixedPointError(f'R_U did not converge in {max_iter} iterations (last {R_U})')


def build_plan(
    model: TargetModel,
    params: KernelParams,
    eps: float,
    start_lyapunov: float,
    *,
    check: bool = True,
) -> EpochPlan:
    """All constants of the plan for target accuracy ``eps`` and a start distribution
    with ``log nu(e^{H/8}) = start_lyapunov``."""
    if not 0 < eps <= 0.5:
        raise AssumptionError(f'eps must lie in (0, 1/2], got {eps}')
    if check:
        report = check_assumptions(model, params)
        if not report.ok:
            raise AssumptionError(
                f'hyperparameter conditions failed: {report.failed} ({report.values})', report
            )
    rho = contraction_rate(model, params)
    c_reg = regularization_constant(model, params)
    R_U = solve_domain_radius(model, params, eps, start_lyapunov)
    R = twisted_diameter(model, params, R_U)
    epoch = epoch_length(rho, c_reg, R)
    k = epochs_for(eps)
    plan = EpochPlan(
        h=params.h,
        gamma=params.gamma,
        eps=eps,
        d=model.d,
        rho=rho,
        c_reg=c_reg,
        R_U=R_U,
        R=R,
        epoch=epoch,
        k=k,
        horizon=epoch * k,
        lam=lyapunov_rate(model, params, R_U),
        c_dh=energy_error_constant(model),
        log_nu_lyap=float(start_lyapunov),
        log_mu_lyap=log_lyapunov_stationary_bound(model),
        assumptions_ok=hyperparameters_ok(model, params.h, params.gamma),
    )
    logger.info(
        f'plan h={params.h:g} gamma={params.gamma:g}: epoch={epoch} k={k} R_U={R_U:.6g}'
    )
    return plan


def exit_bound_log(model: TargetModel, plan: EpochPlan, log_lyap: float) -> float:
    """Log of ``exp((1 + 25 C h^2)/4 gamma h H d - (1 - 50 C H h^2)/16 R_U) nu(e^{H/8})``
    with ``H`` the horizon; ``inf`` when the ``R_U`` coefficient is not positive."""
    h, gh, c = plan.h, plan.gamma * plan.h, plan.c_dh
    decay = 1 - 50 * c * plan.horizon * h * h
    if decay <= 0:
        return math.inf
    growth = (1 + 25 * c * h * h) / 4 * gh * plan.horizon * model.d
    return growth - decay / 16 * plan.R_U + log_lyap


def rejection_budget(model: TargetModel, plan: EpochPlan) -> float:
    """``epoch h^3 (8 L_H (R_U^{3/2} + 3(gamma h d)^{3/2}) + L^{3/2}(R_U + gamma h d))``,
    bounding ``epoch`` times the rejection probability over the domain"""
    h = plan.h
    ghd = plan.gamma * h * model.d
    per_step = h ** 3 * (
        8 * model.L_H * (plan.R_U ** 1.5 + 3 * ghd ** 1.5) + model.L ** 1.5 * (plan.R_U + ghd)
    )
    return plan.epoch * per_step


def _finite_or_none(x):
    return x if math.isfinite(x) else None


def evaluate_certificates(model: TargetModel, params: KernelParams, plan: EpochPlan) -> dict:
    log_target = math.log(plan.eps / 4)
    exit_nu = exit_bound_log(model, plan, plan.log_nu_lyap)
    exit_mu = exit_bound_log(model, plan, plan.log_mu_lyap)
    budget = rejection_budget(model, plan)
    assumptions = check_assumptions(model, params, plan.horizon)
    report = {
        'exit_bound_log_nu': _finite_or_none(exit_nu),
        'exit_bound_log_mu': _finite_or_none(exit_mu),
        'exit_degenerate': not math.isfinite(exit_nu),
        'exit_ok': exit_nu <= log_target and exit_mu <= log_target,
        'rejection_budget': budget,
        'rejection_ok': budget <= HIGH_ACCEPTANCE_BUDGET,
        'assumptions': assumptions.to_dict(),
        'assumptions_ok': assumptions.ok,
    }
    report['all_ok'] = report['exit_ok'] and report['rejection_ok'] and report['assumptions_ok']
    return report


def is_certified(model: TargetModel, h: float, gamma: float, eps: float, log_nu: float) -> bool:
    params = KernelParams(h=h, gamma=gamma)
    if not check_assumptions(model, params).ok:
        return False
    plan = build_plan(model, params, eps, log_nu, check=False)
    return evaluate_certificates(model, params, plan)['all_ok']


def admissible_step_size(
    model: TargetModel,
    gamma: float,
    eps: float,
    log_nu: float,
    *,
    low: float = DFLT_H_BRACKET_LOW,
    rel_tol: float = DFLT_H_REL_TOL,
) -> Optional[float]:
    """Largest certified ``h`` in ``[low, min(1/gamma, 1/sqrt(L))]`` by geometric bisection,
    or None when even ``low`` fails."""
    high = min(1 / gamma, 1 / math.sqrt(model.L))
    if is_certified(model, high, gamma, eps, log_nu):
        return high
    if not is_certified(model, low, gamma, eps, log_nu):
        logger.warning(f'no certified step size in [{low}, {high}]')
        return None
    while high / low > 1 + rel_tol:
        mid = math.sqrt(low * high)
        if is_certified(model, mid, gamma, eps, log_nu):
            low = mid
        else:
            high = mid
    return low


def certificates(
    model: TargetModel, params: KernelParams, plan: EpochPlan, *, search_h: bool = True
) -> dict:
    """Exit-probability bound, rejection budget and hyperparameter conditions at ``params``,
    plus the admissible step size ``h_bar`` for the same ``gamma``, ``eps`` and start."""
    report = evaluate_certificates(model, params, plan)
    if search_h:
        report['h_bar'] = admissible_step_size(model, params.gamma, plan.eps, plan.log_nu_lyap)
    return report


@dataclass(frozen=True, eq=False)
class StartDistribution:
    """Initial law ``nu`` of the first chain: a point mass or the product Gaussian
    ``N(0, A^{-1}) x N(0, I)`` of a Gaussian target."""

    kind: str = 'product_gaussian'
    point: Optional[PhaseState] = None
    log_nu: Optional[float] = None

    def sample(self, model: TargetModel, rng: np.random.Generator, batch_shape=()) -> PhaseState:
        if self.kind == 'dirac':
            shape = (*batch_shape, model.d)
            return PhaseState(
                np.broadcast_to(self.point.x, shape).copy(),
                np.broadcast_to(self.point.v, shape).copy(),
            )
        return stationary_sample(model, rng, batch_shape)

    def log_lyapunov(self, model: TargetModel) -> float:
        """``log nu(e^{H/8})``: the declared value if given, else the closed form"""
        if self.log_nu is not None:
            return float(self.log_nu)
        if self.kind == 'dirac':
            return log_lyapunov_dirac(model, self.point)
        if not model.is_gaussian:
            raise ConfigError(
                f'no closed-form log nu(e^(H/8)) for a product-Gaussian start on {model.kind}; '
                'declare log_nu'
            )
        return log_lyapunov_product_gaussian(model.d)

    def to_dict(self):
        d = {'kind': self.kind}
        if self.point is not None:
            d.update(x=self.point.x.tolist(), v=self.point.v.tolist())
        if self.log_nu is not None:
            d['log_nu'] = self.log_nu
        return d


def mk_start(spec, model: TargetModel) -> StartDistribution:
    """From ``"product_gaussian"``, ``{"kind": "dirac", "x": [...], "v": [...]}`` and the like.

    >>> from makla.target_models import IsotropicGaussian
    >>> s = mk_start({'kind': 'dirac', 'x': [2.0, 0.0]}, IsotropicGaussian(L=1.0, d=2))
    >>> s.log_lyapunov(IsotropicGaussian(L=1.0, d=2))
    0.25
    """
    if isinstance(spec, StartDistribution):
        return spec
    if spec is None or isinstance(spec, str):
        spec = {'kind': spec or 'product_gaussian'}
    spec = dict(spec)
    kind = spec.get('kind', 'product_gaussian')
    if kind == 'dirac':
        x = as_vector(spec.get('x', np.zeros(model.d)), model.d, 'start x')
        v = as_vector(spec.get('v', np.zeros(model.d)), model.d, 'start v')
        return StartDistribution('dirac', PhaseState(x, v), spec.get('log_nu'))
    if kind == 'product_gaussian':
        return StartDistribution('product_gaussian', None, spec.get('log_nu'))
    raise ConfigError(f'unknown start kind {kind!r}; use dirac or product_gaussian')
