"""Couplings of two MAKLA chains.

* synchronous: both chains consume the same Gaussian noise and the same uniform;
  this contracts the twisted distance of strongly convex targets.
* one-shot: the second chain's noise is transported by the implicit map ``Phi`` so
  that both chains land on the same point, kept with the gamma-coupling probability
  ``min(1, ratio)`` and otherwise redrawn from the residual law.
* epochs: ``epoch - 1`` synchronous steps followed by one one-shot step, repeated.

All functions broadcast over leading batch axes of the phase states.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, NamedTuple, Optional

import numpy as np

from makla.constants import (
    DFLT_FIXED_POINT_MAX_ITER,
    DFLT_FIXED_POINT_TOL,
    DFLT_RESIDUAL_MAX_ITER,
)
from makla.errors import FixedPointError, ResidualSamplerError, SingularJacobianError
from makla.geometry import TwistedNorm, twisted_distance
from makla.integrator import KernelParams, StepOutcome, hyperparameters_ok, makla_step
from makla.target_models import PhaseState, TargetModel
from makla.util import sqnorm

logger = logging.getLogger(__name__)


def _rows_equal(z: PhaseState, z_tilde: PhaseState) -> np.ndarray:
    return np.all((z.x == z_tilde.x) & (z.v == z_tilde.v), axis=-1)


@dataclass(frozen=True, eq=False)
class CoupledPair:
    """Two chains (or two batches of chains) and their bookkeeping.

    ``met`` is faithful: once set, ``z_tilde`` is a bitwise copy of ``z`` from then on.
    ``met_at`` is the step count at meeting (``-1`` while unmet).
    """

    z: PhaseState
    z_tilde: PhaseState
    met: np.ndarray
    steps_taken: int = 0
    rejections: Optional[np.ndarray] = None
    exited_domain: Optional[np.ndarray] = None
    met_at: Optional[np.ndarray] = None
    contraction_guaranteed: bool = True

    def __post_init__(self):
        batch = self.z.batch_shape
        if self.rejections is None:
            object.__setattr__(self, 'rejections', np.zeros((*batch, 2), dtype=int))
        if self.exited_domain is None:
            object.__setattr__(self, 'exited_domain', np.zeros(batch, dtype=bool))
        if self.met_at is None:
            object.__setattr__(
                self, 'met_at', np.where(self.met, self.steps_taken, -1).astype(int)
            )

    @classmethod
    def start(cls, z: PhaseState, z_tilde: PhaseState) -> 'CoupledPair':
        met = _rows_equal(z, z_tilde)
        z_tilde = z.where(met, z_tilde)
        return cls(z, z_tilde, met)

    @property
    def n_replicas(self) -> int:
        return int(np.prod(self.z.batch_shape, dtype=int))


class SyncTransition(NamedTuple):
    pair: CoupledPair
    outcome: StepOutcome
    outcome_tilde: StepOutcome


def _advance(pair, out, out_tilde, met, transition_met=None):
    accepted = np.stack([out.accepted, out_tilde.accepted], axis=-1)
    steps = pair.steps_taken + 1
    z_tilde = out.next.where(met, out_tilde.next)
    met_at = pair.met_at
    if transition_met is not None:
        met_at = np.where(transition_met, steps, met_at)
    return replace(
        pair,
        z=out.next,
        z_tilde=z_tilde,
        met=met,
        steps_taken=steps,
        rejections=pair.rejections + ~accepted,
        met_at=met_at,
    )


def synchronous_coupled_transition(
    model: TargetModel, pair: CoupledPair, params: KernelParams, xi1, xi2, u
) -> SyncTransition:
    out = makla_step(model, pair.z, params, xi1, xi2, u)
    out_tilde = makla_step(model, pair.z_tilde, params, xi1, xi2, u)
    new = _advance(pair, out, out_tilde, pair.met)
    if pair.contraction_guaranteed and (
        params.assumptions_ok is False
        or not hyperparameters_ok(model, params.h, params.gamma)
    ):
        new = replace(new, contraction_guaranteed=False)
    return SyncTransition(new, out, out_tilde)


def synchronous_coupled_step(
    model: TargetModel, pair: CoupledPair, params: KernelParams, xi1, xi2, u
) -> CoupledPair:
    """Advance both chains by ``makla_step`` with identical noise and uniform.

    ``contraction_guaranteed`` drops to False when ``params`` fail the hyperparameter
    conditions ``sqrt(L)/gamma <= 1/10``, ``gamma h <= 1`` for ``model``; the
    twisted-norm contraction is then not guaranteed.
    """
    return synchronous_coupled_transition(model, pair, params, xi1, xi2, u).pair


@dataclass(frozen=True, eq=False)
class OneShotResult:
    """Transported noise ``(a1~, a2~) = Phi(a1, a2)`` and the gamma-coupling ratio.

    ``converged`` and ``met`` are per batch entry; ``met`` means both chains' unadjusted
    proposal paths end at the same point (within the fixed-point tolerance).
    """

    noise_pair_tilde: tuple
    converged: np.ndarray
    iterations: int
    accept_ratio: np.ndarray
    met: np.ndarray
    log_det: np.ndarray = field(repr=False, default=None)
    trace_m_minus_i: np.ndarray = field(repr=False, default=None)


def _transport(model, z, z_tilde, params, a1, a2, tol, max_iter):
    h, c, s = params.h, params.ou_decay, params.ou_noise_scale
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    v_o = c * z.v + s * a1
    x_mid = z.x + 0.5 * h * v_o
    v_prime = v_o - h * model.grad(x_mid)
    x_target = x_mid + 0.5 * h * v_prime
    same = _rows_equal(z, z_tilde) & np.ones(np.shape(a1)[:-1], dtype=bool)

    # position matching: x~ + h v~_O - (h^2/2) grad U(x~ + (h/2) v~_O) = x_target
    vt_o = np.broadcast_to(v_o, np.broadcast_shapes(v_o.shape, z_tilde.x.shape)).copy()
    shift = (x_target - z_tilde.x) / h
    residual = np.zeros(same.shape)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        new = shift + 0.5 * h * model.grad(z_tilde.x + 0.5 * h * vt_o)
        residual = np.max(np.abs(new - vt_o), axis=-1)
        vt_o = new
        scale = np.maximum(1.0, np.max(np.abs(vt_o), axis=-1))
        if np.all((residual <= tol * scale) | same):
            break
    converged = (residual <= tol * scale) | same

    xt_mid = z_tilde.x + 0.5 * h * vt_o
    vt_prime = vt_o - h * model.grad(xt_mid)
    a1_t = (vt_o - c * z_tilde.v) / s
    a2_t = a2 + c * (v_prime - vt_prime) / s

    m = same[..., None]
    a1_t = np.where(m, a1, a1_t)
    a2_t = np.where(m, a2, a2_t)
    if np.all(same):
        iterations = 1
    return a1_t, a2_t, x_mid, xt_mid, converged, iterations, same


def _jacobian(model, x_mid, xt_mid, h, same):
    """``M = (I - h^2/4 H(x~*))^{-1} (I - h^2/4 H(x*))`` with its log-det and trace minus d"""
    d = x_mid.shape[-1]
    eye = np.eye(d)
    num = eye - 0.25 * h * h * model.hess(x_mid)
    den = eye - 0.25 * h * h * model.hess(xt_mid)
    num, den = np.broadcast_arrays(num, den)
    sign_num, logdet_num = np.linalg.slogdet(num)
    sign_den, logdet_den = np.linalg.slogdet(den)
    if np.any(sign_den == 0) or np.any(sign_num == 0):
        raise SingularJacobianError(
            f'I - (h^2/4) Hessian is singular at h={h}; need (h^2/4)|Hessian| < 1'
        )
    m = np.linalg.solve(den, num)
    log_det = np.where(same, 0.0, logdet_num - logdet_den)
    trace = np.where(same, 0.0, np.trace(m, axis1=-2, axis2=-1) - d)
    return m, log_det, trace


def one_shot_map(
    model: TargetModel,
    z: PhaseState,
    z_tilde: PhaseState,
    params: KernelParams,
    a1,
    a2,
    *,
    tol: float = DFLT_FIXED_POINT_TOL,
    max_iter: int = DFLT_FIXED_POINT_MAX_ITER,
    with_ratio: bool = True,
) -> OneShotResult:
    """Solve for the noise ``(a1~, a2~)`` that sends ``z_tilde`` where ``(a1, a2)`` sends ``z``
    under ``O(a2) theta_h O(a1)``.

    The post-first-O velocity of the second chain solves a fixed point whose map
    contracts with factor ``L h^2 / 4``; ``a2~`` then follows from velocity matching.
    Non-convergence is flagged in ``converged``, never silently returned as a solution.
    The inverse map is this one with the roles of ``z`` and ``z_tilde`` swapped.
    """
    a1_t, a2_t, x_mid, xt_mid, converged, iterations, same = _transport(
        model, z, z_tilde, params, a1, a2, tol, max_iter
    )
    ratio = log_det = trace = None
    if with_ratio:
        _, log_det, trace = _jacobian(model, x_mid, xt_mid, params.h, same)
        log_ratio = -0.5 * (
            sqnorm(a1_t) + sqnorm(a2_t) - sqnorm(np.asarray(a1)) - sqnorm(np.asarray(a2))
        ) + log_det
        ratio = np.where(same, 1.0, np.exp(log_ratio))
    finite = np.all(np.isfinite(a1_t) & np.isfinite(a2_t), axis=-1)
    return OneShotResult(
        noise_pair_tilde=(a1_t, a2_t),
        converged=converged,
        iterations=iterations,
        accept_ratio=ratio,
        met=converged & finite,
        log_det=log_det,
        trace_m_minus_i=trace,
    )


def one_shot_accept_ratio(
    model: TargetModel, z: PhaseState, z_tilde: PhaseState, params: KernelParams, a1, a2
):
    """``(ratio, log_det)`` with ``ratio = phi(Phi(a)) |det M| / phi(a)``, ``phi`` the
    standard normal density on the ``2d`` noise coordinates.

    Only the ``a1``-block ``M`` of the Jacobian matters: ``a2~`` depends on ``a2`` with
    unit derivative and ``a1~`` does not depend on ``a2``.
    """
    res = one_shot_map(model, z, z_tilde, params, a1, a2)
    return res.accept_ratio, res.log_det


def one_shot_tv_bound(model: TargetModel, params: KernelParams, distance) -> np.ndarray:
    """``(7/2)((gamma h)^{-3/2} + sqrt(d) L_H h^3 / (gamma h)) * distance``: upper bound on
    the probability that the one-shot coupling fails to meet"""
    gh = params.gamma * params.h
    const = gh ** -1.5 + np.sqrt(model.d) * model.L_H * params.h ** 3 / gh
    return 3.5 * const * np.asarray(distance)


class OneShotTransition(NamedTuple):
    pair: CoupledPair
    noise: tuple
    noise_tilde: tuple
    transported: np.ndarray
    outcome: StepOutcome
    outcome_tilde: StepOutcome
    residual_draws: int


def one_shot_coupled_transition(
    model: TargetModel,
    pair: CoupledPair,
    params: KernelParams,
    rng: np.random.Generator,
    *,
    max_residual_iter: int = DFLT_RESIDUAL_MAX_ITER,
) -> OneShotTransition:
    shape = pair.z.x.shape
    batch = pair.z.batch_shape
    a1 = rng.standard_normal(shape)
    a2 = rng.standard_normal(shape)
    u = rng.random(batch)
    w = rng.random(batch)

    res = one_shot_map(model, pair.z, pair.z_tilde, params, a1, a2)
    if not np.all(res.met):
        raise FixedPointError(
            f'one-shot fixed point did not converge in {res.iterations} iterations'
        )
    transported = w <= np.minimum(1.0, res.accept_ratio)
    b1, b2 = (arr.copy() for arr in res.noise_pair_tilde)

    # residual law, by rejection from the standard normal
    pending = ~transported
    draws = 0
    while np.any(pending):
        if draws >= max_residual_iter:
            raise ResidualSamplerError(
                f'{int(pending.sum())} residual draws still pending after {draws} rounds; '
                f'last forward ratios {res.accept_ratio[pending][:5]}'
            )
        draws += 1
        w1 = rng.standard_normal(shape)
        w2 = rng.standard_normal(shape)
        u_res = rng.random(batch)
        back = one_shot_map(model, pair.z_tilde, pair.z, params, w1, w2)
        if not np.all(back.met[pending]):
            raise FixedPointError('inverse one-shot fixed point did not converge')
        take = pending & (u_res < 1.0 - np.minimum(1.0, back.accept_ratio))
        b1 = np.where(take[..., None], w1, b1)
        b2 = np.where(take[..., None], w2, b2)
        pending &= ~take

    out = makla_step(model, pair.z, params, a1, a2, u)
    out_tilde = makla_step(model, pair.z_tilde, params, b1, b2, u)
    newly_met = transported & out.accepted & out_tilde.accepted & ~pair.met
    new = _advance(pair, out, out_tilde, pair.met | newly_met, newly_met)
    return OneShotTransition(new, (a1, a2), (b1, b2), transported, out, out_tilde, draws)


def one_shot_coupled_step(
    model: TargetModel, pair: CoupledPair, params: KernelParams, rng: np.random.Generator
) -> CoupledPair:
    """Gamma-coupled transition: the second chain reuses ``Phi(xi)`` with probability
    ``min(1, ratio)``, else draws from the residual law. Its noise is exactly standard
    normal either way. The pair meets when the noise was transported and the shared
    uniform accepts both proposals; the second state is then set to a copy of the first.
    """
    return one_shot_coupled_transition(model, pair, params, rng).pair


def tv_overlap_estimate(
    model: TargetModel,
    z: PhaseState,
    z_tilde: PhaseState,
    params: KernelParams,
    n_samples: int,
    rng: np.random.Generator,
):
    """Monte Carlo ``(estimate, stderr)`` of
    ``(1/2) sqrt(E[|Phi(xi) - xi|^2 + 2 tr(DPhi - I) - 2 log|det DPhi|])``,
    the Gaussian-overlap bound on ``TV(Law(xi), Law(Phi(xi)))``."""
    if n_samples < 1:
        raise ValueError('n_samples must be at least 1')
    d = z.d
    a1 = rng.standard_normal((n_samples, d))
    a2 = rng.standard_normal((n_samples, d))
    zb = PhaseState(np.broadcast_to(z.x, (n_samples, d)), np.broadcast_to(z.v, (n_samples, d)))
    ztb = PhaseState(
        np.broadcast_to(z_tilde.x, (n_samples, d)), np.broadcast_to(z_tilde.v, (n_samples, d))
    )
    res = one_shot_map(model, zb, ztb, params, a1, a2)
    a1_t, a2_t = res.noise_pair_tilde
    q = sqnorm(a1_t - a1) + sqnorm(a2_t - a2) + 2 * res.trace_m_minus_i - 2 * res.log_det
    mean = float(np.mean(q))
    if mean <= 0:
        return 0.0, 0.0
    se_mean = float(np.std(q, ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    return 0.5 * np.sqrt(mean), 0.25 * se_mean / np.sqrt(mean)


@dataclass(frozen=True, eq=False)
class EpochReport:
    """Per-replica outcome of one epoch"""

    index: int
    met_at_start: np.ndarray
    met: np.ndarray
    rejected: np.ndarray
    exited: np.ndarray

    @property
    def failed_in_domain(self) -> np.ndarray:
        """Not met by the end of the epoch while both chains stayed in the domain"""
        return ~self.met & ~self.exited

    def to_dict(self):
        active = ~self.met_at_start
        n_active = int(active.sum())
        return {
            'index': self.index,
            'active': n_active,
            'met': int((self.met & active).sum()),
            'rejected': int((self.rejected & active).sum()),
            'exited': int((self.exited & active).sum()),
            'failed_in_domain': int((self.failed_in_domain & active).sum()),
        }


def _in_domain(model, z, R_U):
    # energy_like without input validation, evaluated every step
    return sqnorm(z.v) + sqnorm(model.grad(z.x)) / model.L <= R_U


def epoch_coupled_run(
    model: TargetModel,
    pair: CoupledPair,
    plan,
    rng: np.random.Generator,
    *,
    n_epochs: Optional[int] = None,
    on_epoch: Optional[Callable] = None,
):
    """Run up to ``plan.k`` epochs of ``plan.epoch - 1`` synchronous steps and one one-shot
    step, stopping early once every replica has met.

    Returns ``(pair, reports)``. Leaving the domain ``{energy_like <= R_U}`` is recorded
    in ``pair.exited_domain``, never raised. ``on_epoch(pair, report, last_delta_H)`` is
    called after every epoch (used to write traces).
    """
    params = plan.params
    n_epochs = plan.k if n_epochs is None else n_epochs
    shape = pair.z.x.shape
    batch = pair.z.batch_shape
    reports: List[EpochReport] = []
    for j in range(n_epochs):
        if np.all(pair.met):
            break
        met_at_start = pair.met.copy()
        rejected = np.zeros(batch, dtype=bool)
        exited = np.zeros(batch, dtype=bool)
        for _ in range(plan.epoch - 1):
            xi1 = rng.standard_normal(shape)
            xi2 = rng.standard_normal(shape)
            u = rng.random(batch)
            pair, out, out_tilde = synchronous_coupled_transition(
                model, pair, params, xi1, xi2, u
            )
            rejected |= ~out.accepted | ~out_tilde.accepted
            exited |= ~(_in_domain(model, pair.z, plan.R_U) & _in_domain(model, pair.z_tilde, plan.R_U))
        step = one_shot_coupled_transition(model, pair, params, rng)
        pair = step.pair
        rejected |= ~step.outcome.accepted | ~step.outcome_tilde.accepted
        exited |= ~(_in_domain(model, pair.z, plan.R_U) & _in_domain(model, pair.z_tilde, plan.R_U))
        pair = replace(pair, exited_domain=pair.exited_domain | exited)
        report = EpochReport(j, met_at_start, pair.met.copy(), rejected, exited)
        reports.append(report)
        logger.debug(f'epoch {j}: {report.to_dict()}')
        if on_epoch is not None:
            on_epoch(pair, report, step.outcome.delta_H)
    return pair, reports


def pair_distance(pair: CoupledPair, params: KernelParams) -> np.ndarray:
    return twisted_distance(TwistedNorm.from_params(params), pair.z, pair.z_tilde)
