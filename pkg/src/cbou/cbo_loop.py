"""End-to-end optimization loops: the graph-unaware method and baselines.

`run_cbo_u` executes the full pipeline — observational sampling, bootstrap
prior over parent sets, belief initialization, posterior updates from
interventional data, exploration-set construction, per-element GP
surrogates, and expected-improvement intervention selection — one
interventional sample per trial, minimizing the target.

Baselines share the same loop skeleton: `run_cbo_known` fixes a point-mass
posterior on the true parent set, `run_cbo_wrong` on a seeded non-parent
set of equal size, `run_random` picks uniform singleton interventions, and
`run_bo` runs one GP over the full manipulative vector.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .acquisition import (AcquisitionError, ExplorationSet, _sobol_draw,
                          build_exploration_set, select_intervention,
                          singleton_exploration_set)
from .dr_prior import DrConfig, bootstrap_prior
from .metrics import mean_accuracy, mean_f1
from .parent_posterior import (LINEAR, ParentSet, PosteriorConfig,
                               init_beliefs, update)
from .scm import (Intervention, Scm, default_domains, sample_interventional,
                  sample_observational)
from .surrogate import GpSurrogate, causal_prior_from_posterior, fit

logger = logging.getLogger(__name__)


class LoopError(RuntimeError):
    """Aborted run; carries the partial trace with a diagnostic summary."""

    def __init__(self, message: str, trace: "Trace"):
        super().__init__(message)
        self.trace = trace


@dataclass
class ExperimentConfig:
    n_obs: int = 200
    n_int: int = 2
    trials: int = 30
    seed: int = 0
    dr: DrConfig = field(default_factory=DrConfig)
    posterior: PosteriorConfig = field(default_factory=PosteriorConfig)
    threshold: float = 1e-6
    grid_size: int = 100
    optimize_hypers: bool = True
    timing: bool = False  # wall_ms stays 0 unless enabled (replay stability)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.n_obs < 1 or self.n_int < 0:
            raise ValueError("need n_obs >= 1 and n_int >= 0")


@dataclass
class IterationRecord:
    t: int
    element: tuple
    values: list
    y: float
    y_star: float
    acquisition: float
    mean_acc: float
    mean_f1: float
    wall_ms: float
    posterior: Optional[list] = None  # (mask, weight) snapshot


@dataclass
class Trace:
    method: str
    header: dict
    iterations: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def best(self):
        """(intervention values, element, y) of the best trial."""
        rec = min(self.iterations, key=lambda r: r.y)
        return rec.values, rec.element, rec.y


def _initial_interventions(scm: Scm, domains, n_int: int, rng):
    """Uniform random singleton interventions for the warm-up batch."""
    manipulative = scm.dag.manipulative
    pairs = []
    for _ in range(n_int):
        j = int(manipulative[rng.integers(0, len(manipulative))])
        lo, hi = domains[j]
        iv = Intervention([j], [float(rng.uniform(lo, hi))])
        d = sample_interventional(scm, iv, 1, int(rng.integers(0, 2**31 - 1)))
        pairs.append((iv, d.rows[0]))
    return pairs


def _posterior_exploration_set(post, scm, cfg, domains):
    """Exploration set from the posterior, robust to the empty parent set.

    The empty set's manipulative intersection is the empty intervention,
    which the exploration set never contains, so its weight is normally
    silent. But when the empty set itself survives the threshold the
    structure question is unresolved (on over-determined systems every
    variable can be redundant given the rest and the statistical prior
    honestly concentrates on "no detectable parent"); optimization must
    still be possible, so that surviving weight maps to the intervention
    element that presumes no structure: the full manipulative vector,
    exactly what the plain-BO baseline optimizes. If no surviving set maps
    to a manipulative element at all, the documented all-singletons
    fallback joins as well, and expected improvement arbitrates. The extras
    are pruned again once the posterior resolves and the empty set falls
    below the threshold.
    """
    empty_survives = post.weight(ParentSet.of(())) > cfg.threshold
    try:
        es = build_exploration_set(post, scm.dag.roles, cfg.threshold,
                                   domains, cfg.grid_size, seed=cfg.seed)
    except AcquisitionError:
        if not empty_survives:
            raise
        es = singleton_exploration_set(scm.dag.roles, domains,
                                       cfg.grid_size, seed=cfg.seed)
    if not empty_survives:
        return es
    elements, grids = list(es.elements), dict(es.grids)
    full = tuple(scm.dag.manipulative)
    if len(full) > 1 and full not in elements:
        from scipy.stats import qmc
        sob = qmc.Sobol(d=len(full), scramble=True, seed=cfg.seed)
        lo = np.array([domains[j][0] for j in full])
        hi = np.array([domains[j][1] for j in full])
        grids[full] = lo + _sobol_draw(sob, cfg.grid_size) * (hi - lo)
        elements.append(full)
    return ExplorationSet(sorted(elements, key=lambda e: (len(e), e)), grids)


def _fit_surrogates(es, post, obs, int_pairs, cfg, domains, seed):
    """Per-element GP: causal prior from the posterior, fit on element data."""
    surrogates = {}
    for element in es.elements:
        prior = causal_prior_from_posterior(element, post, obs)
        gp = GpSurrogate(
            element=element, prior=prior, seed=seed,
            domain=[domains[j] for j in element],
        )
        V = [iv.values for iv, row in int_pairs if tuple(iv.targets) == element]
        y = [row[post.target] for iv, row in int_pairs
             if tuple(iv.targets) == element]
        surrogates[element] = fit(
            gp, np.array(V).reshape(len(y), len(element)), np.array(y),
            optimize=cfg.optimize_hypers and len(y) >= 2,
        )
    return surrogates


def _point_mass_posterior(parent_set, obs, cfg: ExperimentConfig, target):
    pcfg = cfg.posterior
    pcfg = PosteriorConfig(
        mode=pcfg.mode, noise_variance=pcfg.noise_variance,
        theta_variance=pcfg.theta_variance, rff_dimension=pcfg.rff_dimension,
        kernel_variance=pcfg.kernel_variance, lengthscale=pcfg.lengthscale,
        standardize=pcfg.standardize, seed=pcfg.seed, target=target,
    )
    return init_beliefs({parent_set: 1.0}, obs, pcfg)


def _loop(scm, cfg, method, post, es, obs, int_pairs, rng, update_posterior):
    """Shared trial loop: acquire, intervene once, update, refit, record."""
    target = scm.dag.target
    true_set = ParentSet.of(sorted(scm.dag.true_parent_set()))
    domains = scm.domains or default_domains(scm, obs)
    trace = Trace(method=method, header={
        "method": method, "seed": cfg.seed, "trials": cfg.trials,
        "n_obs": cfg.n_obs, "n_int": cfg.n_int,
        "elements": [list(e) for e in es.elements],
    })
    surrogates = _fit_surrogates(
        es, post, obs, int_pairs, cfg, domains, cfg.seed)
    y_star_so_far = math.inf
    try:
        for t in range(1, cfg.trials + 1):
            t0 = time.perf_counter()
            ys = [row[target] for iv, row in int_pairs]
            y_best = min(ys) if ys else float(obs.column(target).min())
            iv, acq = select_intervention(
                es, surrogates, y_best, seed=int(rng.integers(0, 2**31 - 1)))
            d = sample_interventional(
                scm, iv, 1, int(rng.integers(0, 2**31 - 1)))
            row = d.rows[0]
            y = float(row[target])
            if update_posterior:
                update(post, row, y)
                # the exploration set follows the current posterior: parent
                # sets whose weight falls below the threshold stop proposing
                # interventions (their elements are pruned once no surviving
                # set maps to them)
                try:
                    es = _posterior_exploration_set(post, scm, cfg, domains)
                except AcquisitionError:
                    logger.warning(
                        "posterior threshold left no manipulative elements "
                        "at trial %d; keeping the previous exploration set", t)
            int_pairs.append((iv, row))
            surrogates = _fit_surrogates(
                es, post, obs, int_pairs, cfg, domains, cfg.seed)
            y_star_so_far = min(y_star_so_far, y)
            wall = (time.perf_counter() - t0) * 1e3 if cfg.timing else 0.0
            trace.iterations.append(IterationRecord(
                t=t, element=tuple(iv.targets), values=list(map(float,
                                                                iv.values)),
                y=y, y_star=y_star_so_far, acquisition=acq,
                mean_acc=mean_accuracy(post, true_set),
                mean_f1=mean_f1(post, true_set),
                wall_ms=wall, posterior=post.snapshot(),
            ))
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        trace.summary = {"aborted_at": len(trace.iterations) + 1,
                         "error": f"{type(exc).__name__}: {exc}"}
        raise LoopError(str(exc), trace) from exc
    values, element, y = trace.best()
    trace.summary = {"best_values": values, "best_element": list(element),
                     "best_y": y, "y_star": y_star_so_far,
                     "n_int_final": len(int_pairs)}
    return trace


def _prepare(scm: Scm, cfg: ExperimentConfig):
    rng = np.random.default_rng(cfg.seed)
    obs = sample_observational(
        scm, cfg.n_obs, int(rng.integers(0, 2**31 - 1)))
    domains = scm.domains or default_domains(scm, obs)
    int_pairs = _initial_interventions(scm, domains, cfg.n_int, rng)
    return rng, obs, domains, int_pairs


def run_cbo_u(scm: Scm, cfg: ExperimentConfig) -> Trace:
    """Full pipeline with the parent-set posterior learned from data."""
    rng, obs, domains, int_pairs = _prepare(scm, cfg)
    target = scm.dag.target
    prior = bootstrap_prior(obs, cfg.dr, seed=cfg.seed, target=target)
    pcfg = cfg.posterior
    pcfg = PosteriorConfig(
        mode=pcfg.mode, noise_variance=pcfg.noise_variance,
        theta_variance=pcfg.theta_variance, rff_dimension=pcfg.rff_dimension,
        kernel_variance=pcfg.kernel_variance, lengthscale=pcfg.lengthscale,
        standardize=pcfg.standardize, seed=cfg.seed, target=target,
    )
    post = init_beliefs(prior, obs, pcfg)
    for iv, row in int_pairs:
        update(post, row, row[target])
    try:
        es = _posterior_exploration_set(post, scm, cfg, domains)
    except AcquisitionError:
        logger.warning("posterior gave no manipulative elements; "
                       "falling back to singletons")
        es = singleton_exploration_set(
            scm.dag.roles, domains, cfg.grid_size, seed=cfg.seed)
    return _loop(scm, cfg, "cbo-u", post, es, obs, int_pairs, rng,
                 update_posterior=True)


def run_cbo_known(scm: Scm, cfg: ExperimentConfig) -> Trace:
    """Point-mass posterior on the true parent set; no posterior updates."""
    rng, obs, domains, int_pairs = _prepare(scm, cfg)
    true_set = ParentSet.of(sorted(scm.dag.true_parent_set()))
    post = _point_mass_posterior(true_set, obs, cfg, scm.dag.target)
    try:
        es = build_exploration_set(
            post, scm.dag.roles, cfg.threshold, domains,
            cfg.grid_size, seed=cfg.seed)
    except AcquisitionError:
        es = singleton_exploration_set(
            scm.dag.roles, domains, cfg.grid_size, seed=cfg.seed)
    return _loop(scm, cfg, "cbo-known", post, es, obs, int_pairs, rng,
                 update_posterior=False)


def run_cbo_wrong(scm: Scm, cfg: ExperimentConfig) -> Trace:
    """Point mass on a seeded manipulative non-parent set of equal size."""
    rng, obs, domains, int_pairs = _prepare(scm, cfg)
    true_set = set(scm.dag.true_parent_set())
    candidates = [j for j in scm.dag.manipulative if j not in true_set]
    if not candidates:
        raise ValueError("every manipulative variable is a true parent; "
                         "no wrong graph exists")
    k = min(len(true_set) or 1, len(candidates))
    pick_rng = np.random.default_rng(cfg.seed)
    wrong = ParentSet.of(
        sorted(int(j) for j in
               pick_rng.choice(candidates, size=k, replace=False)))
    post = _point_mass_posterior(wrong, obs, cfg, scm.dag.target)
    es = build_exploration_set(
        post, scm.dag.roles, cfg.threshold, domains,
        cfg.grid_size, seed=cfg.seed)
    return _loop(scm, cfg, "cbo-wrong", post, es, obs, int_pairs, rng,
                 update_posterior=False)


def run_random(scm: Scm, cfg: ExperimentConfig) -> Trace:
    """Uniform singleton intervention and uniform value every trial."""
    rng, obs, domains, int_pairs = _prepare(scm, cfg)
    target = scm.dag.target
    manipulative = scm.dag.manipulative
    trace = Trace(method="random", header={
        "method": "random", "seed": cfg.seed, "trials": cfg.trials,
        "n_obs": cfg.n_obs, "n_int": cfg.n_int,
        "elements": [[j] for j in manipulative],
    })
    y_star_so_far = math.inf
    for t in range(1, cfg.trials + 1):
        t0 = time.perf_counter()
        j = int(manipulative[rng.integers(0, len(manipulative))])
        lo, hi = domains[j]
        iv = Intervention([j], [float(rng.uniform(lo, hi))])
        d = sample_interventional(scm, iv, 1, int(rng.integers(0, 2**31 - 1)))
        y = float(d.rows[0][target])
        int_pairs.append((iv, d.rows[0]))
        y_star_so_far = min(y_star_so_far, y)
        wall = (time.perf_counter() - t0) * 1e3 if cfg.timing else 0.0
        trace.iterations.append(IterationRecord(
            t=t, element=(j,), values=list(map(float, iv.values)), y=y,
            y_star=y_star_so_far, acquisition=float("nan"),
            mean_acc=float("nan"), mean_f1=float("nan"), wall_ms=wall,
        ))
    values, element, y = trace.best()
    trace.summary = {"best_values": values, "best_element": list(element),
                     "best_y": y, "y_star": y_star_so_far,
                     "n_int_final": len(int_pairs)}
    return trace


def run_bo(scm: Scm, cfg: ExperimentConfig) -> Trace:
    """One zero-mean GP over the full manipulative vector, EI on a grid."""
    rng, obs, domains, int_pairs = _prepare(scm, cfg)
    target = scm.dag.target
    element = tuple(scm.dag.manipulative)
    if not element:
        raise ValueError("no manipulative variables")
    from .surrogate import constant_prior
    from .acquisition import ExplorationSet, _sobol_draw
    from scipy.stats import qmc
    y_obs = obs.column(target)
    prior = constant_prior(element, 0.0, float(y_obs.std()))
    sob = qmc.Sobol(d=len(element), scramble=True, seed=cfg.seed)
    lo = np.array([domains[j][0] for j in element])
    hi = np.array([domains[j][1] for j in element])
    es = ExplorationSet([element],
                        {element: lo + _sobol_draw(sob, cfg.grid_size)
                         * (hi - lo)})
    trace = Trace(method="bo", header={
        "method": "bo", "seed": cfg.seed, "trials": cfg.trials,
        "n_obs": cfg.n_obs, "n_int": cfg.n_int,
        "elements": [list(element)],
    })
    # warm-up interventions were singletons; restart interventional data
    # with full-vector draws so every training input matches the element
    int_pairs = []
    for _ in range(cfg.n_int):
        vals = rng.uniform(lo, hi)
        iv = Intervention(list(element), vals)
        d = sample_interventional(scm, iv, 1, int(rng.integers(0, 2**31 - 1)))
        int_pairs.append((iv, d.rows[0]))
    gp = GpSurrogate(element=element, prior=prior, seed=cfg.seed,
                     domain=[domains[j] for j in element])

    def refit():
        V = np.array([iv.values for iv, _ in int_pairs]).reshape(
            len(int_pairs), len(element))
        y = np.array([row[target] for _, row in int_pairs])
        return fit(gp, V, y,
                   optimize=cfg.optimize_hypers and len(int_pairs) >= 2)

    model = refit()
    y_star_so_far = math.inf
    for t in range(1, cfg.trials + 1):
        t0 = time.perf_counter()
        ys = [row[target] for _, row in int_pairs]
        y_best = min(ys) if ys else float(y_obs.min())
        iv, acq = select_intervention(
            es, {element: model}, y_best,
            seed=int(rng.integers(0, 2**31 - 1)))
        d = sample_interventional(scm, iv, 1, int(rng.integers(0, 2**31 - 1)))
        y = float(d.rows[0][target])
        int_pairs.append((iv, d.rows[0]))
        model = refit()
        y_star_so_far = min(y_star_so_far, y)
        wall = (time.perf_counter() - t0) * 1e3 if cfg.timing else 0.0
        trace.iterations.append(IterationRecord(
            t=t, element=element, values=list(map(float, iv.values)), y=y,
            y_star=y_star_so_far, acquisition=acq, mean_acc=float("nan"),
            mean_f1=float("nan"), wall_ms=wall,
        ))
    values, el, y = trace.best()
    trace.summary = {"best_values": values, "best_element": list(el),
                     "best_y": y, "y_star": y_star_so_far,
                     "n_int_final": len(int_pairs)}
    return trace


RUNNERS = {
    "cbo-u": run_cbo_u,
    "cbo-known": run_cbo_known,
    "cbo-wrong": run_cbo_wrong,
    "random": run_random,
    "bo": run_bo,
}
