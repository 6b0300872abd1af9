"""Batch front end: ``kla plan|verify|mix|sample``.

Configuration comes from a JSON file (``--config``) with flags overriding it key by key.
Artifacts go under ``--out``: ``plan.json``, ``reports/*.json``, ``traces/*.csv``.
Exit status: 0 success, 1 a deterministic check or a certificate failed, 2 bad configuration.
"""

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from functools import cached_property
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import jsonschema
import numpy as np
from i2.signatures import Sig

from makla.constants import (
    DFLT_CHUNK_SIZE,
    DFLT_EPS,
    DFLT_GAMMA_FACTOR,
    DFLT_OUT_DIR,
    DFLT_REPLICAS,
    DFLT_SEED,
    DFLT_THREADS,
    EXIT_CHECK_FAILED,
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    TRACE_FIELDS,
)
from makla.diagnostics import estimate_mixing, suites
from makla.errors import (
    AssumptionError,
    ConfigError,
    DimensionMismatchError,
    DivergedTrajectoryError,
    FixedPointError,
    NonFiniteError,
    ResidualSamplerError,
    SingularJacobianError,
)
from makla.integrator import KernelParams, run_chain
from makla.planner import admissible_step_size, build_plan, certificates, mk_start
from makla.stores import RunArtifacts
from makla.target_models import mk_model
from makla.util import merge_config, random_stream, replica_chunks

logger = logging.getLogger(__name__)

COMMANDS = ('plan', 'verify', 'mix', 'sample')
DFLT_SUITES = ('energy_error', 'leading_order', 'contraction', 'reversibility', 'volume')
MODEL_KEYS = ('model', 'd', 'L', 'diag')


def _float_or_auto(value):
    if value is None or value == 'auto':
        return value
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number or 'auto', got {value!r}")


@dataclass
class RunConfig:
    """A resolved run configuration. Keys not named here are kept in ``options`` and
    routed to diagnostic suites by parameter name."""

    model: dict = field(default_factory=lambda: {'model': 'iso_gauss', 'L': 1.0, 'd': 1})
    h: object = 'auto'
    gamma: object = 'auto'
    eps: float = DFLT_EPS
    start: object = 'product_gaussian'
    replicas: int = DFLT_REPLICAS
    seed: int = DFLT_SEED
    threads: int = DFLT_THREADS
    out: str = DFLT_OUT_DIR
    chunk_size: int = DFLT_CHUNK_SIZE
    suites: List[str] = field(default_factory=lambda: list(DFLT_SUITES))
    epoch: Optional[int] = None
    n_steps: int = 1000
    thin: int = 1
    adjusted: bool = True
    trace: bool = True
    options: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, config) -> 'RunConfig':
        config = dict(config)
        model = dict(config.pop('model_spec', {}) or {})
        for key in MODEL_KEYS:
            if key in config:
                model[key] = config.pop(key)
        if isinstance(model.get('model'), dict):
            model = dict(model.pop('model'), **model)
        known = set(cls.__dataclass_fields__) - {'model', 'options'}
        kwargs = {k: config.pop(k) for k in list(config) if k in known}
        if isinstance(kwargs.get('suites'), str):
            kwargs['suites'] = [kwargs['suites']]
        self = cls(model=model or cls().model, options=config, **kwargs)
        self.h = _float_or_auto(self.h)
        self.gamma = _float_or_auto(self.gamma)
        seed = int(self.seed)
        if not 0 <= seed < 2 ** 64:
            raise ConfigError(f'seed must be a 64-bit unsigned integer, got {self.seed}')
        self.seed = seed
        if not 0 < float(self.eps) <= 0.5:
            raise ConfigError(f'eps must lie in (0, 1/2], got {self.eps}')
        return self


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fp:
            config = json.load(fp)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f'could not read config {path}: {e}')
    if not isinstance(config, dict):
        raise ConfigError(f'config {path} must hold a JSON object')
    return config


@contextmanager
def worker_map(threads: int):
    """An ordered ``map`` over a pool of ``threads`` workers (plain ``map`` for one)"""
    if threads <= 1:
        yield map
    else:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            yield executor.map


class Run:
    """Resolution of model, start, hyperparameters and plan for one configuration"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.model = mk_model(config.model)
        self.start = mk_start(config.start, self.model)
        self.artifacts = RunArtifacts(config.out)
        gamma = config.gamma
        if gamma == 'auto':
            gamma = DFLT_GAMMA_FACTOR * math.sqrt(self.model.L)
        h = config.h
        if h == 'auto':
            h = admissible_step_size(self.model, gamma, config.eps, self.log_nu)
            if h is None:
                raise AssumptionError('no certified step size for this configuration')
            logger.info(f'h=auto resolved to {h:.6g}')
        self.params = KernelParams.from_model(self.model, h, gamma)

    @cached_property
    def log_nu(self) -> float:
        return self.start.log_lyapunov(self.model)

    def plan(self):
        plan = build_plan(self.model, self.params, self.config.eps, self.log_nu)
        if self.config.epoch is not None:
            plan = plan.with_epoch(self.config.epoch)
        return plan

    def plan_document(self, plan, certs) -> dict:
        return {
            'kind': 'plan',
            'seed': self.config.seed,
            'model': self.model.to_dict(),
            'params': self.params.to_dict(),
            'plan': plan.to_dict(),
            'certificates': certs,
            'start': self.start.to_dict(),
        }


def run_plan(run: Run) -> int:
    plan = run.plan()
    certs = certificates(run.model, run.params, plan)
    run.artifacts.write_plan(run.plan_document(plan, certs))
    return EXIT_OK if certs['all_ok'] else EXIT_CHECK_FAILED


def run_verify(run: Run) -> int:
    config = run.config
    context = dict(
        config.options,
        model=run.model,
        params=run.params,
        replicas=config.replicas,
        n_steps=config.n_steps,
    )
    needs_plan = any('plan' in _suite_params(name) for name in config.suites)
    if needs_plan:
        context['plan'] = run.plan()
    status = EXIT_OK
    for name in config.suites:
        reports = suites.run(name, context, config.seed)
        for i, report in enumerate(reports):
            key = name if len(reports) == 1 else f'{name}_{i}'
            run.artifacts.reports[key] = dict(report.to_dict(), kind='report')
            if not report.passed:
                if suites[name].deterministic:
                    logger.error(f'{key} failed: {report.details}')
                    status = EXIT_CHECK_FAILED
                else:
                    logger.warning(f'statistical check {key} failed: {report.details}')
    return status


def _suite_params(name):
    return Sig(suites[name].func).names


def run_mix(run: Run) -> int:
    config = run.config
    plan = run.plan()
    certs = certificates(run.model, run.params, plan, search_h=False)
    run.artifacts.write_plan(run.plan_document(plan, certs))
    with worker_map(config.threads) as map_func:
        report, trace = estimate_mixing(
            run.model,
            plan,
            config.replicas,
            config.seed,
            start=run.start,
            chunk_size=config.chunk_size,
            map_func=map_func,
            record_trace=config.trace,
        )
    run.artifacts.reports['mixing'] = dict(report.to_dict(), kind='mixing')
    if config.trace:
        run.artifacts.traces['mixing'] = [{k: row[k] for k in TRACE_FIELDS} for row in trace]
    return EXIT_OK


def _sample_chunk(run: Run, chunk):
    index, lo, hi = chunk
    config = run.config
    rng = random_stream(config.seed, index)
    z0 = run.start.sample(run.model, rng, (hi - lo,))
    return lo, run_chain(
        run.model, z0, run.params, rng, config.n_steps, adjusted=config.adjusted, thin=config.thin
    )


def run_sample(run: Run) -> int:
    config = run.config
    d = run.model.d
    chunks = list(replica_chunks(config.replicas, config.chunk_size))
    with worker_map(config.threads) as map_func:
        results = list(map_func(lambda c: _sample_chunk(run, c), chunks))
    fields = ['replica', 'step'] + [f'x{i}' for i in range(d)] + [f'v{i}' for i in range(d)]
    rows = []
    for lo, chain in results:
        for r, step in enumerate(chain.steps):
            for i in range(chain.states.x.shape[1]):
                row = {'replica': lo + i, 'step': int(step)}
                row.update({f'x{j}': float(chain.states.x[r, i, j]) for j in range(d)})
                row.update({f'v{j}': float(chain.states.v[r, i, j]) for j in range(d)})
                rows.append(row)
    run.artifacts.traces['chain'] = [{k: row[k] for k in fields} for row in rows]

    xs = np.concatenate([c.states.x.reshape(-1, d) for _, c in results])
    vs = np.concatenate([c.states.v.reshape(-1, d) for _, c in results])
    accepted = sum(int(c.accepted.sum()) for _, c in results)
    run.artifacts.reports['sample_summary'] = {
        'kind': 'sample_summary',
        'adjusted': config.adjusted,
        'n_steps': config.n_steps,
        'replicas': config.replicas,
        'acceptance_rate': accepted / (config.replicas * config.n_steps),
        'mean_x': xs.mean(axis=0).tolist(),
        'var_x': xs.var(axis=0).tolist(),
        'var_v': vs.var(axis=0).tolist(),
    }
    return EXIT_OK


_runners = {'plan': run_plan, 'verify': run_verify, 'mix': run_mix, 'sample': run_sample}


def run(command: str, config) -> int:
    """Run ``command`` on a config (mapping or ``RunConfig``) and return the exit status"""
    if command not in _runners:
        raise ConfigError(f'unknown command {command!r}; use one of {COMMANDS}')
    if not isinstance(config, RunConfig):
        config = RunConfig.from_mapping(config)
    return _runners[command](Run(config))


def mk_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='kla', description='Plan, verify and run Metropolis-adjusted kinetic Langevin sampling'
    )
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--config', help='JSON config file')
    parser.add_argument('--seed', type=int)
    parser.add_argument('--threads', type=int)
    parser.add_argument('--out', help='output directory')
    parser.add_argument('--model', help='iso_gauss, diag_gauss or perturbed')
    parser.add_argument('--dim', dest='d', type=int)
    parser.add_argument('--L', type=float)
    parser.add_argument('--h', help="step size or 'auto'")
    parser.add_argument('--gamma', help="friction or 'auto'")
    parser.add_argument('--eps', type=float)
    parser.add_argument('--replicas', type=int)
    parser.add_argument('--chunk-size', dest='chunk_size', type=int)
    parser.add_argument('--suite', dest='suites', action='append', help='repeatable')
    parser.add_argument('--epoch', type=int, help='override the planned epoch length')
    parser.add_argument('--n-steps', dest='n_steps', type=int)
    parser.add_argument('--thin', type=int)
    parser.add_argument('--ukla', dest='adjusted', action='store_const', const=False)
    parser.add_argument('--c-scale', dest='c_scale', type=float)
    parser.add_argument('-v', '--verbose', action='count', default=0)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = mk_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, stream=sys.stderr, format='%(levelname)s %(name)s: %(message)s')
    flags = {k: v for k, v in vars(args).items() if k not in ('command', 'config', 'verbose')}
    try:
        config = RunConfig.from_mapping(merge_config(load_config(args.config), flags))
        status = run(args.command, config)
    except (
        ConfigError,
        AssumptionError,
        DimensionMismatchError,
        NonFiniteError,
        jsonschema.ValidationError,
    ) as e:
        logger.error(str(e))
        print(json.dumps({'command': args.command, 'status': EXIT_CONFIG_ERROR, 'error': str(e)}))
        return EXIT_CONFIG_ERROR
    except (
        FixedPointError,
        DivergedTrajectoryError,
        SingularJacobianError,
        ResidualSamplerError,
    ) as e:
        logger.error(f'{type(e).__name__}: {e}')
        print(json.dumps({'command': args.command, 'status': EXIT_CHECK_FAILED, 'error': str(e)}))
        return EXIT_CHECK_FAILED
    print(json.dumps({'command': args.command, 'status': status, 'out': config.out}))
    return status


if __name__ == '__main__':
    sys.exit(main())
