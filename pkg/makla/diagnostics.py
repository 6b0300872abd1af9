"""Numerical certification of the sampler's properties, and empirical mixing estimates.

Deterministic checks (energy error bounds, contraction, reversibility, volume) allow no
violations. Statistical checks pass when the observed quantity is within 3 standard
errors of its bound. Every check returns a ``VerificationReport``.
"""

import logging
import math
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, List, Mapping, Optional

import numpy as np
from dol import KvReader
from scipy import stats

from makla.constants import (
    DFLT_CHUNK_SIZE,
    DFLT_N_SIGMA,
    DFLT_N_STATES,
    DFLT_N_TRIALS,
    DFLT_WARM_UP_EPOCHS,
    HIGH_ACCEPTANCE_BUDGET,
)
from makla.couplings import (
    CoupledPair,
    epoch_coupled_run,
    one_shot_coupled_transition,
    one_shot_tv_bound,
    pair_distance,
    tv_overlap_estimate,
)
from makla.errors import AssumptionError, ConfigError
from makla.geometry import TwistedNorm, contraction_constant, twisted_distance
from makla.integrator import (
    KernelParams,
    makla_step,
    ou_half_step,
    run_chain,
    theta_h,
    ukla_stationary_covariance,
    ukla_step,
)
from makla.planner import (
    EpochPlan,
    StartDistribution,
    build_plan,
    check_assumptions,
    exit_bound_log,
    rejection_budget,
)
from makla.target_models import (
    PerturbedExample,
    PhaseState,
    TargetModel,
    energy_like,
    hamiltonian,
    stationary_sample,
)
from makla.util import kwargs_for, random_stream, replica_chunks, se_of_proportion

logger = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


@dataclass
class VerificationReport:
    """Outcome of one check. ``worst_margin`` is ``bound - observed`` at the worst trial
    (negative means the bound was exceeded there)."""

    name: str
    trials: int
    violations: int
    worst_margin: float
    statistical: bool = False
    stderr: Optional[float] = None
    details: dict = field(default_factory=dict)
    n_sigma: float = DFLT_N_SIGMA

    @property
    def passed(self) -> bool:
        if not self.statistical:
            return self.violations == 0
        return self.violations == 0 and self.worst_margin >= -self.n_sigma * (self.stderr or 0.0)

    def to_dict(self):
        d = asdict(self)
        d['passed'] = self.passed
        return _jsonable(d)


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    return obj


def default_state_sampler(model: TargetModel, R_U: Optional[float] = None) -> Callable:
    """``sampler(rng, n) -> PhaseState``: stationary draws for Gaussian kinds, standard
    normal draws otherwise; restricted to ``{energy_like <= R_U}`` by rejection when
    ``R_U`` is given (uniform-in-domain rejection for non-Gaussian kinds)."""

    def draw(rng, n):
        if model.is_gaussian:
            return stationary_sample(model, rng, (n,))
        if R_U is None:
            return PhaseState(rng.standard_normal((n, model.d)), rng.standard_normal((n, model.d)))
        # uniform in a box containing the domain
        half = np.sqrt(R_U)
        x = rng.uniform(-half / model.K * np.sqrt(model.L), half / model.K * np.sqrt(model.L), (n, model.d))
        return PhaseState(x, rng.uniform(-half, half, (n, model.d)))

    def sampler(rng, n):
        if R_U is None:
            return draw(rng, n)
        xs, vs, got = [], [], 0
        for _ in range(1000):
            z = draw(rng, n)
            keep = energy_like(model, z) <= R_U
            xs.append(z.x[keep])
            vs.append(z.v[keep])
            got += int(keep.sum())
            if got >= n:
                break
        if got < n:
            raise ConfigError(f'could not sample {n} states inside the domain R_U={R_U}')
        return PhaseState(np.concatenate(xs)[:n], np.concatenate(vs)[:n])

    return sampler


def verify_energy_error(
    model: TargetModel,
    h: float,
    n: int,
    state_sampler: Optional[Callable] = None,
    rng: Optional[np.random.Generator] = None,
) -> VerificationReport:
    """``|dH| <= 4 L h^2 E(z)`` and ``|dH| <= 2 L_H h^3 E^{3/2} + L^{3/2} h^3 E`` on ``n``
    sampled states, ``E`` the energy-like function."""
    if model.L * h * h > 1:
        raise AssumptionError(f'need L h^2 <= 1, got {model.L * h * h}')
    rng = rng or random_stream(0)
    z = (state_sampler or default_state_sampler(model))(rng, n)
    proposal = theta_h(model, z, h)
    h0, h1 = hamiltonian(model, z), hamiltonian(model, proposal)
    dh = np.abs(h1 - h0)
    roundoff = 8 * _EPS * (np.abs(h0) + np.abs(h1))
    e = energy_like(model, z)
    first = 4 * model.L * h * h * e
    second = 2 * model.L_H * h ** 3 * e ** 1.5 + model.L ** 1.5 * h ** 3 * e
    bad_first = dh > first + roundoff
    bad_second = dh > second + roundoff
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio_first = np.where(first > 0, dh / first, 0.0)
        ratio_second = np.where(second > 0, dh / second, 0.0)
    margin = np.minimum(first - dh, second - dh)
    report = VerificationReport(
        name='energy_error',
        trials=n,
        violations=int(bad_first.sum() + bad_second.sum()),
        worst_margin=float(margin.min()) if n else 0.0,
        details={
            'h': h,
            'model': model.to_dict(),
            'violations_first_bound': int(bad_first.sum()),
            'violations_second_bound': int(bad_second.sum()),
            'worst_ratio_first_bound': float(ratio_first.max()) if n else 0.0,
            'worst_ratio_second_bound': float(ratio_second.max()) if n else 0.0,
        },
    )
    logger.info(f'energy_error h={h}: passed={report.passed} {report.details}')
    return report


def leading_order_energy_error(d: int, h: float) -> float:
    """``(h^3/24)(d^{3/2} + 12 d^{1/2})``"""
    return h ** 3 / 24 * (d ** 1.5 + 12 * d ** 0.5)


def verify_leading_order(
    d: int, h_ladder: Iterable[float] = (0.02, 0.01, 0.005), tol: float = 0.05
) -> VerificationReport:
    """Energy error of ``PerturbedExample`` at ``(0, sqrt(d) e_1)`` against its leading
    term, along a decreasing ladder of step sizes."""
    model = PerturbedExample(d=d)
    v = np.zeros(d)
    v[0] = math.sqrt(d)
    z = PhaseState(np.zeros(d), v)
    h_ladder = sorted(h_ladder, reverse=True)
    ratios = [
        float(hamiltonian(model, theta_h(model, z, h)) - hamiltonian(model, z))
        / leading_order_energy_error(d, h)
        for h in h_ladder
    ]
    deviations = [abs(r - 1) for r in ratios]
    shrink = [a / b if b > 0 else math.inf for a, b in zip(deviations, deviations[1:])]
    violations = int(deviations[-1] > tol) + sum(s <= 1 for s in shrink)
    return VerificationReport(
        name='leading_order',
        trials=len(h_ladder),
        violations=violations,
        worst_margin=tol - deviations[-1],
        details={
            'd': d,
            'h_ladder': h_ladder,
            'predicted': [leading_order_energy_error(d, h) for h in h_ladder],
            'ratios': ratios,
            'shrink_factors': shrink,
        },
    )


def _random_pairs(model, rng, n):
    sampler = default_state_sampler(model)
    return sampler(rng, n), sampler(rng, n)


def verify_contraction(
    model: TargetModel,
    params: KernelParams,
    n_pairs: int,
    rng: Optional[np.random.Generator] = None,
    *,
    c_scale: float = 1.0,
    rel_tol: float = 1e-10,
) -> VerificationReport:
    """Pathwise check that one unadjusted step with shared noise contracts the twisted
    distance by at least ``1 - c h``. ``c_scale`` multiplies ``c``."""
    if not check_assumptions(model, params).ok:
        raise AssumptionError('contraction is only guaranteed under the hyperparameter conditions')
    rng = rng or random_stream(0)
    tn = TwistedNorm.from_params(params)
    z, z_tilde = _random_pairs(model, rng, n_pairs)
    xi1 = rng.standard_normal(z.x.shape)
    xi2 = rng.standard_normal(z.x.shape)
    before = twisted_distance(tn, z, z_tilde)
    after = twisted_distance(
        tn, ukla_step(model, z, params, xi1, xi2), ukla_step(model, z_tilde, params, xi1, xi2)
    )
    keep = before > 0
    ratio = after[keep] / before[keep]
    c = c_scale * contraction_constant(model, params.gamma)
    bound = 1 - c * params.h
    violations = int((ratio > bound * (1 + rel_tol)).sum())
    worst = float(ratio.max()) if ratio.size else 0.0
    report = VerificationReport(
        name='contraction',
        trials=int(keep.sum()),
        violations=violations,
        worst_margin=bound - worst,
        details={'c': c, 'bound': bound, 'worst_ratio': worst, 'c_scale': c_scale},
    )
    logger.info(f'contraction: worst ratio {worst:.8f} vs bound {bound:.8f}')
    return report


def verify_reversibility(
    model: TargetModel, h: float, n: int, rng: Optional[np.random.Generator] = None, tol=1e-12
) -> VerificationReport:
    """``S theta_h S theta_h (z) = z``"""
    rng = rng or random_stream(0)
    z = default_state_sampler(model)(rng, n)
    back = theta_h(model, theta_h(model, z, h).flip(), h).flip()
    err = np.maximum(np.abs(back.x - z.x).max(axis=-1), np.abs(back.v - z.v).max(axis=-1))
    scale = np.maximum(1.0, np.maximum(np.abs(z.x).max(axis=-1), np.abs(z.v).max(axis=-1)))
    return VerificationReport(
        name='reversibility',
        trials=n,
        violations=int((err > tol * scale).sum()),
        worst_margin=float((tol * scale - err).min()),
        details={'max_error': float(err.max())},
    )


def verify_volume_preservation(
    model: TargetModel,
    h: float,
    n: int,
    rng: Optional[np.random.Generator] = None,
    *,
    delta: float = 1e-6,
    tol: float = 1e-6,
) -> VerificationReport:
    """``|det D theta_h| = 1`` by central finite differences"""
    rng = rng or random_stream(0)
    z = default_state_sampler(model)(rng, n).as_vector()
    dim = z.shape[-1]
    jac = np.empty((n, dim, dim))
    for j in range(dim):
        step = np.zeros(dim)
        step[j] = delta
        plus = theta_h(model, PhaseState.from_vector(z + step), h).as_vector()
        minus = theta_h(model, PhaseState.from_vector(z - step), h).as_vector()
        jac[:, :, j] = (plus - minus) / (2 * delta)
    err = np.abs(np.abs(np.linalg.det(jac)) - 1)
    return VerificationReport(
        name='volume_preservation',
        trials=n,
        violations=int((err > tol).sum()),
        worst_margin=float(tol - err.max()),
        details={'max_error': float(err.max())},
    )


def pair_at_distance(model, params, distance, rng) -> tuple:
    """A state and a second one at the given twisted distance, in a random direction"""
    tn = TwistedNorm.from_params(params)
    z = default_state_sampler(model)(rng, 1)
    z = PhaseState(z.x[0], z.v[0])
    direction = PhaseState(rng.standard_normal(model.d), rng.standard_normal(model.d))
    unit = distance / float(twisted_distance(tn, direction, PhaseState.zeros(model.d)))
    return z, PhaseState(z.x + unit * direction.x, z.v + unit * direction.v)


def verify_one_shot(
    model: TargetModel,
    params: KernelParams,
    distance: float,
    n_trials: int,
    rng: Optional[np.random.Generator] = None,
    *,
    n_overlap_samples: Optional[int] = None,
    ks_level: float = 0.01,
) -> VerificationReport:
    """Meeting frequency of the one-shot coupling for a pair at the given twisted distance,
    against ``1 - one_shot_tv_bound``; normality of the second chain's noise (KS); and the
    Gaussian-overlap estimate against ``1 - meeting frequency``."""
    rng = rng or random_stream(0)
    z, z_tilde = pair_at_distance(model, params, distance, rng)
    batch = (n_trials, model.d)
    pair = CoupledPair.start(
        PhaseState(np.broadcast_to(z.x, batch).copy(), np.broadcast_to(z.v, batch).copy()),
        PhaseState(
            np.broadcast_to(z_tilde.x, batch).copy(), np.broadcast_to(z_tilde.v, batch).copy()
        ),
    )
    step = one_shot_coupled_transition(model, pair, params, rng)
    freq = float(step.pair.met.mean())
    se = float(se_of_proportion(freq, n_trials))
    bound = float(one_shot_tv_bound(model, params, distance))
    noise = np.concatenate([step.noise_tilde[0].ravel(), step.noise_tilde[1].ravel()])
    ks = stats.kstest(noise, 'norm')
    overlap, overlap_se = tv_overlap_estimate(
        model, z, z_tilde, params, n_overlap_samples or n_trials, rng
    )
    n_sigma = DFLT_N_SIGMA
    meet_ok = freq >= 1 - bound - n_sigma * se
    overlap_ok = overlap + n_sigma * math.hypot(overlap_se, se) >= 1 - freq
    overlap_below_bound = overlap - n_sigma * overlap_se <= bound
    ks_ok = ks.pvalue > ks_level
    report = VerificationReport(
        name='one_shot',
        trials=n_trials,
        violations=sum(not ok for ok in (meet_ok, overlap_ok, overlap_below_bound, ks_ok)),
        worst_margin=freq - (1 - bound),
        statistical=True,
        stderr=se,
        details={
            'distance': distance,
            'meeting_frequency': freq,
            'tv_bound': bound,
            'overlap_estimate': overlap,
            'overlap_stderr': overlap_se,
            'ks_statistic': float(ks.statistic),
            'ks_pvalue': float(ks.pvalue),
            'residual_rounds': step.residual_draws,
        },
    )
    logger.info(f'one_shot d={model.d}: {report.details}')
    return report


def _drift_ratio(model, params, z, n_trials, rng):
    """Per-state mean and stderr of ``e^{(H(next) - H(z))/8}`` over one MAKLA step"""
    n = z.x.shape[0]
    shape = (n_trials, n, model.d)
    zb = PhaseState(np.broadcast_to(z.x, shape), np.broadcast_to(z.v, shape))
    out = makla_step(
        model,
        zb,
        params,
        rng.standard_normal(shape),
        rng.standard_normal(shape),
        rng.random(shape[:-1]),
    )
    w = np.exp((hamiltonian(model, out.next) - hamiltonian(model, zb)) / 8)
    return w.mean(axis=0), w.std(axis=0, ddof=1) / math.sqrt(n_trials)


def lyapunov_drift_check(
    model: TargetModel,
    plan: EpochPlan,
    n: int,
    rng: Optional[np.random.Generator] = None,
    *,
    n_trials: int = DFLT_N_TRIALS,
) -> VerificationReport:
    """``E[e^{H(next)/8}] / e^{H(z)/8} <= e^lambda`` for states in the domain"""
    rng = rng or random_stream(0)
    z = default_state_sampler(model, plan.R_U)(rng, n)
    mean, se = _drift_ratio(model, plan.params, z, n_trials, rng)
    # e^lambda overflows for desk-scale plans, where the check is vacuous
    bound = math.exp(plan.lam) if plan.lam < 700 else math.inf
    margin = bound - mean
    worst = int(np.argmin(margin))
    violations = int((margin < -DFLT_N_SIGMA * se).sum())
    return VerificationReport(
        name='lyapunov_drift',
        trials=n * n_trials,
        violations=violations,
        worst_margin=float(margin[worst]),
        statistical=True,
        stderr=float(se[worst]),
        details={'bound': bound, 'lambda': plan.lam, 'max_ratio': float(mean.max())},
    )


def exit_frequency(
    model: TargetModel,
    plan: EpochPlan,
    n_chains: int,
    rng: Optional[np.random.Generator] = None,
    *,
    n_steps: Optional[int] = None,
) -> VerificationReport:
    """Fraction of stationary-started MAKLA chains leaving the domain within the horizon,
    against the exit bound. A shorter ``n_steps`` keeps the bound valid."""
    rng = rng or random_stream(0)
    n_steps = plan.horizon if n_steps is None else min(n_steps, plan.horizon)
    params = plan.params
    z = default_state_sampler(model)(rng, n_chains)
    exited = energy_like(model, z) > plan.R_U
    for _ in range(n_steps):
        z = makla_step(
            model,
            z,
            params,
            rng.standard_normal(z.x.shape),
            rng.standard_normal(z.x.shape),
            rng.random(n_chains),
        ).next
        exited |= energy_like(model, z) > plan.R_U
    freq = float(exited.mean())
    se = float(se_of_proportion(freq, n_chains))
    bound = math.exp(min(exit_bound_log(model, plan, plan.log_mu_lyap), 0.0))
    return VerificationReport(
        name='exit_frequency',
        trials=n_chains,
        violations=int(freq - DFLT_N_SIGMA * se > bound),
        worst_margin=bound - freq,
        statistical=True,
        stderr=se,
        details={'n_steps': n_steps, 'exit_bound': bound, 'frequency': freq},
    )


def rejection_rate_epoch(
    model: TargetModel,
    plan: EpochPlan,
    n_states: int = DFLT_N_STATES,
    n_trials: int = DFLT_N_TRIALS,
    rng: Optional[np.random.Generator] = None,
) -> VerificationReport:
    """``epoch * max_z P(reject | z) <= 1/(3e)`` with the max over sampled domain states.

    The per-state rejection probability averages ``1 - alpha`` over the first O half-step's
    noise, so it is estimated without the extra uniform.
    """
    rng = rng or random_stream(0)
    params = plan.params
    z = default_state_sampler(model, plan.R_U)(rng, n_states)
    shape = (n_trials, n_states, model.d)
    zb = PhaseState(np.broadcast_to(z.x, shape), np.broadcast_to(z.v, shape))
    z1 = ou_half_step(zb, params, rng.standard_normal(shape))
    delta_h = hamiltonian(model, theta_h(model, z1, params.h)) - hamiltonian(model, z1)
    reject = 1 - np.exp(-np.maximum(delta_h, 0.0))
    p = reject.mean(axis=0)
    se = reject.std(axis=0, ddof=1) / math.sqrt(n_trials)
    worst = int(np.argmax(p))
    observed = plan.epoch * float(p[worst])
    margin = HIGH_ACCEPTANCE_BUDGET - observed
    stderr = plan.epoch * float(se[worst])
    return VerificationReport(
        name='rejection_rate',
        trials=n_states * n_trials,
        violations=int(margin < -DFLT_N_SIGMA * stderr),
        worst_margin=margin,
        statistical=True,
        stderr=stderr,
        details={
            'epoch': plan.epoch,
            'sup_rejection': float(p[worst]),
            'epoch_times_sup_rejection': observed,
            'budget': HIGH_ACCEPTANCE_BUDGET,
            'theoretical_budget': rejection_budget(model, plan),
        },
    )


def ou_moment_check(
    model: TargetModel,
    params: KernelParams,
    n: int,
    rng: Optional[np.random.Generator] = None,
    *,
    n_trials: int = 256,
) -> VerificationReport:
    """``E E(O(xi) z) <= E(z) + gamma h d`` and
    ``E E(O(xi) z)^{3/2} <= 4(E(z)^{3/2} + 3(gamma h d)^{3/2})`` per sampled state"""
    rng = rng or random_stream(0)
    z = default_state_sampler(model)(rng, n)
    shape = (n_trials, n, model.d)
    zb = PhaseState(np.broadcast_to(z.x, shape), np.broadcast_to(z.v, shape))
    e_next = energy_like(model, ou_half_step(zb, params, rng.standard_normal(shape)))
    e0 = energy_like(model, z)
    ghd = params.gamma * params.h * model.d
    margins, ses = [], []
    for moment, bound in ((e_next, e0 + ghd), (e_next ** 1.5, 4 * (e0 ** 1.5 + 3 * ghd ** 1.5))):
        margins.append(bound - moment.mean(axis=0))
        ses.append(moment.std(axis=0, ddof=1) / math.sqrt(n_trials))
    margin = np.concatenate(margins)
    se = np.concatenate(ses)
    worst = int(np.argmin(margin))
    return VerificationReport(
        name='ou_moments',
        trials=n * n_trials,
        violations=int((margin < -DFLT_N_SIGMA * se).sum()),
        worst_margin=float(margin[worst]),
        statistical=True,
        stderr=float(se[worst]),
    )


def _chain_moments(run):
    """Per-chain time averages of ``x``, ``x^2``, ``v^2`` (record axis first)"""
    return run.states.x.mean(axis=0), (run.states.x ** 2).mean(axis=0), (run.states.v ** 2).mean(axis=0)


def _across_chains(per_chain):
    n = per_chain.shape[0]
    return per_chain.mean(axis=0), per_chain.std(axis=0, ddof=1) / math.sqrt(n)


def stationarity_and_bias(
    model: TargetModel,
    params: KernelParams,
    n_steps: int,
    burn_in: int,
    rng: Optional[np.random.Generator] = None,
    *,
    n_chains: int = 64,
    h_grid: Optional[Iterable[float]] = None,
) -> VerificationReport:
    """MAKLA moments against the exact target; UKLA covariance bias growing in ``h``.

    Standard errors come from the spread across independent chains. The UKLA bias along
    ``h_grid`` is taken from the exact stationary covariance of its linear recursion,
    and the empirical UKLA covariance at ``params.h`` is checked against it.
    """
    prec = model.precision_diag
    if prec is None:
        raise ConfigError('stationarity_and_bias needs a Gaussian target with known moments')
    rng = rng or random_stream(0)
    z0 = stationary_sample(model, rng, (n_chains,))
    checks = []  # (name, margin, stderr)

    makla = run_chain(model, z0, params, rng, n_steps + burn_in, burn_in=burn_in)
    mean_x, sq_x, sq_v = _chain_moments(makla)
    for name, per_chain, target in (
        ('makla_mean_x', mean_x, np.zeros(model.d)),
        ('makla_var_x', sq_x, 1 / prec),
        ('makla_var_v', sq_v, np.ones(model.d)),
    ):
        est, se = _across_chains(per_chain)
        for i in range(model.d):
            checks.append((f'{name}[{i}]', -abs(est[i] - target[i]), se[i]))

    ukla_cov = ukla_stationary_covariance(model, params)
    ukla = run_chain(model, z0, params, rng, n_steps + burn_in, burn_in=burn_in, adjusted=False)
    _, sq_x_u, _ = _chain_moments(ukla)
    est_u, se_u = _across_chains(sq_x_u)
    for i in range(model.d):
        checks.append((f'ukla_var_x[{i}]', -abs(est_u[i] - ukla_cov[i, 0, 0]), se_u[i]))

    h_grid = sorted(h_grid or (params.h, 2 * params.h))
    deviations = [
        float(
            np.max(
                np.abs(
                    ukla_stationary_covariance(model, KernelParams(h=h, gamma=params.gamma))[:, 0, 0]
                    * prec
                    - 1
                )
            )
        )
        for h in h_grid
    ]
    monotone = all(a < b for a, b in zip(deviations, deviations[1:]))

    statistical_failures = [c for c in checks if c[1] < -DFLT_N_SIGMA * c[2]]
    worst = min(checks, key=lambda c: c[1] / c[2] if c[2] > 0 else c[1])
    return VerificationReport(
        name='stationarity',
        trials=n_chains * n_steps,
        violations=len(statistical_failures) + int(not monotone),
        worst_margin=float(worst[1]),
        statistical=True,
        stderr=float(worst[2]),
        details={
            'h': params.h,
            'acceptance_rate': float(makla.acceptance_rate.mean()),
            'makla_var_x': _across_chains(sq_x)[0],
            'makla_var_v': _across_chains(sq_v)[0],
            'ukla_var_x': est_u,
            'ukla_exact_var_x': ukla_cov[:, 0, 0],
            'h_grid': h_grid,
            'ukla_relative_bias': deviations,
            'ukla_bias_increasing': monotone,
            'failed_checks': [c[0] for c in statistical_failures],
        },
    )


# --------------------------------------------------------------------------------------
# Mixing


@dataclass
class ChunkResult:
    """Outcome of one chunk of coupled replicas"""

    start: int
    met_at: np.ndarray
    exited_by_epoch: np.ndarray  # (epochs run, replicas) cumulative
    epoch_rows: List[dict]
    trace_rows: List[dict]
    rejections: np.ndarray


def stationary_comparison_states(model, plan, rng, n, *, warm_up_epochs=DFLT_WARM_UP_EPOCHS):
    """Approximately stationary starts for the second chain: exact draws for Gaussian
    kinds, else MAKLA warm-up of ``warm_up_epochs * epoch`` steps from ``model.minimizer``
    with standard normal velocities. Returns ``(states, warm_up_steps)``."""
    if model.is_gaussian:
        return stationary_sample(model, rng, (n,)), 0
    steps = warm_up_epochs * plan.epoch
    x0 = np.broadcast_to(model.minimizer, (n, model.d))
    z0 = PhaseState(x0.copy(), rng.standard_normal((n, model.d)))
    run = run_chain(model, z0, plan.params, rng, steps, thin=steps)
    return PhaseState(run.states.x[-1], run.states.v[-1]), steps


def run_coupled_chunk(
    model: TargetModel,
    plan: EpochPlan,
    start: StartDistribution,
    seed: int,
    chunk: tuple,
    *,
    record_trace: bool = False,
) -> ChunkResult:
    """Run coupled replicas ``range(chunk[1], chunk[2])`` with the stream of ``chunk[0]``"""
    index, lo, hi = chunk
    n = hi - lo
    rng = random_stream(seed, index)
    z = start.sample(model, rng, (n,))
    z_tilde, _ = stationary_comparison_states(model, plan, rng, n)
    pair = CoupledPair.start(z, z_tilde)
    exited_by_epoch, epoch_rows, trace_rows = [], [], []

    def on_epoch(pair, report, delta_h):
        exited_by_epoch.append(pair.exited_domain.copy())
        epoch_rows.append(report.to_dict())
        if record_trace:
            dist = pair_distance(pair, plan.params)
            for i in range(n):
                trace_rows.append(
                    {
                        'replica': lo + i,
                        'step': pair.steps_taken,
                        'met': bool(pair.met[i]),
                        'in_domain': not bool(pair.exited_domain[i]),
                        'rejected': bool(report.rejected[i]),
                        'delta_H': float(delta_h[i]),
                        'twisted_distance': float(dist[i]),
                    }
                )

    pair, _ = epoch_coupled_run(model, pair, plan, rng, on_epoch=on_epoch)
    exited = np.array(exited_by_epoch) if exited_by_epoch else np.zeros((0, n), dtype=bool)
    return ChunkResult(lo, pair.met_at, exited, epoch_rows, trace_rows, pair.rejections)


@dataclass
class MixingReport:
    n_replicas: int
    epoch: int
    k: int
    horizon: int
    eps: float
    warm_up_steps: int
    meeting_quantiles: dict
    curve: List[dict]
    curve_at_horizon: float
    curve_stderr: float
    per_epoch_failure: float
    per_epoch_failure_stderr: float
    epochs: List[dict]
    n_sigma: float = DFLT_N_SIGMA

    @property
    def horizon_ok(self) -> bool:
        return self.curve_at_horizon - self.n_sigma * self.curve_stderr <= self.eps

    @property
    def per_epoch_ok(self) -> bool:
        return (
            self.per_epoch_failure - self.n_sigma * self.per_epoch_failure_stderr <= math.exp(-1)
        )

    @property
    def passed(self) -> bool:
        return self.horizon_ok and self.per_epoch_ok

    def curve_value(self, n: int) -> float:
        """The TV upper-bound curve at step ``n`` (a step function, changing at epoch ends)"""
        value = 1.0
        for point in self.curve:
            if point['n'] <= n:
                value = point['value']
        return value

    def to_dict(self):
        d = asdict(self)
        d.update(horizon_ok=self.horizon_ok, per_epoch_ok=self.per_epoch_ok, passed=self.passed)
        return _jsonable(d)


def summarize_mixing(
    results: List[ChunkResult], plan: EpochPlan, warm_up_steps: int = 0
) -> MixingReport:
    """Ordered reduce of chunk results into the meeting-time summary and the TV curve.

    The curve is ``P(not met by n) + P(exited by n)`` at epoch ends, made non-increasing
    by a running minimum.
    """
    met_at = np.concatenate([r.met_at for r in results])
    n = met_at.size
    exited = np.zeros((plan.k, n), dtype=bool)
    offset = 0
    for r in results:
        m = r.met_at.size
        if len(r.exited_by_epoch):
            exited[: len(r.exited_by_epoch), offset : offset + m] = r.exited_by_epoch
            # epochs skipped after a chunk finished keep its last exit state
            exited[len(r.exited_by_epoch) :, offset : offset + m] = r.exited_by_epoch[-1]
        offset += m

    meet_steps = np.where(met_at >= 0, met_at, np.inf).astype(float)
    curve, running = [], 1.0
    for j in range(plan.k + 1):
        step = j * plan.epoch
        not_met = float(np.mean(meet_steps > step))
        exit_mass = float(exited[j - 1].mean()) if j else 0.0
        running = min(running, min(1.0, not_met + exit_mass))
        curve.append({'n': step, 'value': running, 'not_met': not_met, 'exit_mass': exit_mass})
    at_horizon = curve[-1]['value']

    pooled = {'active': 0, 'failed_in_domain': 0}
    epochs = []
    for j in range(plan.k):
        rows = [r.epoch_rows[j] for r in results if j < len(r.epoch_rows)]
        summary = {
            key: sum(row[key] for row in rows)
            for key in ('active', 'met', 'rejected', 'exited', 'failed_in_domain')
        }
        summary['index'] = j
        epochs.append(summary)
        pooled['active'] += summary['active']
        pooled['failed_in_domain'] += summary['failed_in_domain']
    failure = pooled['failed_in_domain'] / pooled['active'] if pooled['active'] else 0.0

    finite = meet_steps[np.isfinite(meet_steps)]
    quantiles = {
        f'q{int(q * 100)}': (float(np.quantile(meet_steps, q)) if n else None)
        for q in (0.1, 0.5, 0.9)
    }
    quantiles['met_fraction'] = finite.size / n if n else 0.0
    return MixingReport(
        n_replicas=n,
        epoch=plan.epoch,
        k=plan.k,
        horizon=plan.horizon,
        eps=plan.eps,
        warm_up_steps=warm_up_steps,
        meeting_quantiles=quantiles,
        curve=curve,
        curve_at_horizon=at_horizon,
        curve_stderr=float(se_of_proportion(at_horizon, n)),
        per_epoch_failure=failure,
        per_epoch_failure_stderr=float(se_of_proportion(failure, max(pooled['active'], 1))),
        epochs=epochs,
    )


def estimate_mixing(
    model: TargetModel,
    plan: EpochPlan,
    n_replicas: int,
    seed: int,
    *,
    start: Optional[StartDistribution] = None,
    chunk_size: int = DFLT_CHUNK_SIZE,
    map_func: Callable = map,
    record_trace: bool = False,
):
    """Couple ``n_replicas`` pairs (first chain from ``start``, second approximately
    stationary) over the plan's epochs and summarize their meeting.

    ``map_func`` maps chunk jobs to results in order (``map`` or an executor's ``map``);
    results only depend on ``seed`` and ``chunk_size``. Returns ``(report, trace_rows)``.
    """
    start = start or StartDistribution()
    chunks = list(replica_chunks(n_replicas, chunk_size))

    def job(chunk):
        return run_coupled_chunk(model, plan, start, seed, chunk, record_trace=record_trace)

    results = list(map_func(job, chunks))
    warm_up = 0 if model.is_gaussian else DFLT_WARM_UP_EPOCHS * plan.epoch
    report = summarize_mixing(results, plan, warm_up)
    logger.info(
        f'mixing: curve at horizon {report.curve_at_horizon:.4g} '
        f'(eps {plan.eps}), per-epoch failure {report.per_epoch_failure:.4g}'
    )
    trace = [row for r in results for row in r.trace_rows]
    return report, trace


def mixing_scaling(
    model: TargetModel,
    h_grid: Iterable[float],
    gamma: float,
    eps: float,
    n_replicas: int,
    seed: int,
    *,
    start: Optional[StartDistribution] = None,
    epoch_time: Optional[float] = None,
    map_func: Callable = map,
) -> dict:
    """Regress the median meeting time on ``1/h`` across ``h_grid``.

    With ``epoch_time`` every plan gets epochs of ``ceil(epoch_time / h)`` steps (a fixed
    time span) instead of the planned length.
    """
    start = start or StartDistribution()
    h_grid = sorted(h_grid)
    medians = []
    for h in h_grid:
        plan = build_plan(model, KernelParams(h=h, gamma=gamma), eps, start.log_lyapunov(model))
        if epoch_time is not None:
            plan = plan.with_epoch(math.ceil(epoch_time / h))
        report, _ = estimate_mixing(
            model, plan, n_replicas, seed, start=start, map_func=map_func
        )
        medians.append(report.meeting_quantiles['q50'])
    fit = stats.linregress([1 / h for h in h_grid], medians)
    return {
        'h_grid': h_grid,
        'median_meeting_time': medians,
        'slope': float(fit.slope),
        'intercept': float(fit.intercept),
        'r_squared': float(fit.rvalue ** 2),
    }


# --------------------------------------------------------------------------------------
# Suites


@dataclass(frozen=True)
class Suite:
    name: str
    func: Callable
    deterministic: bool = False


class SuiteRegistry(KvReader):
    """Diagnostic suites by name. ``run(name, context)`` calls the suite with the context
    entries its signature names."""

    def __init__(self, *suites: Suite):
        self._suites = {s.name: s for s in suites}

    def __getitem__(self, k):
        try:
            return self._suites[k]
        except KeyError:
            raise ConfigError(f'unknown suite {k!r}; known suites: {list(self)}')

    def __iter__(self):
        yield from self._suites

    def __len__(self):
        return len(self._suites)

    def __contains__(self, k):
        return k in self._suites

    def run(self, name: str, context: Mapping, seed: int) -> List[VerificationReport]:
        suite = self[name]
        rng = random_stream(seed, zlib.crc32(name.encode()))
        reports = suite.func(**kwargs_for(suite.func, dict(context, rng=rng)))
        return reports if isinstance(reports, list) else [reports]


def _energy_error_suite(model, params, rng, n_states=100_000):
    return verify_energy_error(model, params.h, n_states, rng=rng)


def _leading_order_suite(dims=(1, 4, 16), h_ladder=(0.02, 0.01, 0.005)):
    return [verify_leading_order(d, h_ladder) for d in dims]


def _contraction_suite(model, params, rng, n_pairs=10_000, c_scale=1.0):
    return verify_contraction(model, params, n_pairs, rng, c_scale=c_scale)


def _reversibility_suite(model, params, rng, n_states=1000):
    return verify_reversibility(model, params.h, n_states, rng)


def _volume_suite(model, params, rng, n_states=20):
    return verify_volume_preservation(model, params.h, n_states, rng)


def _one_shot_suite(model, params, rng, distance=0.01, n_trials=10_000):
    return verify_one_shot(model, params, distance, n_trials, rng)


def _lyapunov_suite(model, plan, rng, n_states=DFLT_N_STATES):
    return lyapunov_drift_check(model, plan, n_states, rng)


def _exit_suite(model, plan, rng, replicas=64, n_steps=None):
    return exit_frequency(model, plan, replicas, rng, n_steps=n_steps)


def _rejection_suite(model, plan, rng, n_states=DFLT_N_STATES, n_trials=DFLT_N_TRIALS):
    return rejection_rate_epoch(model, plan, n_states, n_trials, rng)


def _ou_moment_suite(model, params, rng, n_states=DFLT_N_STATES):
    return ou_moment_check(model, params, n_states, rng)


def _stationarity_suite(model, params, rng, n_steps=2000, burn_in=200, replicas=64):
    return stationarity_and_bias(model, params, n_steps, burn_in, rng, n_chains=replicas)


suites = SuiteRegistry(
    Suite('energy_error', _energy_error_suite, deterministic=True),
    Suite('leading_order', _leading_order_suite, deterministic=True),
    Suite('contraction', _contraction_suite, deterministic=True),
    Suite('reversibility', _reversibility_suite, deterministic=True),
    Suite('volume', _volume_suite, deterministic=True),
    Suite('one_shot', _one_shot_suite),
    Suite('lyapunov_drift', _lyapunov_suite),
    Suite('exit_frequency', _exit_suite),
    Suite('rejection_rate', _rejection_suite),
    Suite('ou_moments', _ou_moment_suite),
    Suite('stationarity', _stationarity_suite),
)
