"""Exploration-set construction and expected-improvement intervention choice.

The exploration set collects the manipulative part of every parent set with
posterior weight above a threshold. Each element carries a value grid over
its intervention domain; expected improvement (minimization convention) is
evaluated on the grid and the best candidate wins, with deterministic ties.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, qmc

from .parent_posterior import ParentPosterior
from .scm import ROLE_MANIPULATIVE, Intervention
from .surrogate import GpSurrogate, predict

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 1e-6
DEFAULT_GRID_SIZE = 100


class AcquisitionError(ValueError):
    pass


def _sobol_draw(sampler, n: int) -> np.ndarray:
    # grids default to 100 points; the power-of-two balance warning is noise
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return sampler.random(n)


@dataclass
class ExplorationSet:
    """Candidate intervention variable sets with per-element value grids."""

    elements: list  # sorted tuples of manipulative node indices
    grids: dict = field(default_factory=dict)  # element -> (n, |element|)

    def __post_init__(self):
        if len(set(self.elements)) != len(self.elements):
            raise AcquisitionError("duplicate exploration-set elements")

    def __iter__(self):
        return iter(self.elements)

    def __len__(self):
        return len(self.elements)


def build_exploration_set(post: ParentPosterior, roles,
                          threshold: float = DEFAULT_THRESHOLD,
                          domains=None, grid_size: int = DEFAULT_GRID_SIZE,
                          seed: int = 0) -> ExplorationSet:
    """Manipulative intersections of candidate sets above the weight threshold.

    ``roles`` is the per-node role sequence; only manipulative variables may
    be intervened on, so each candidate set is intersected down to its
    manipulative part. ``domains`` (node -> (lo, hi)) is required to build
    Sobol value grids; omit it for a grid-less set.
    """
    if threshold < 0:
        raise AcquisitionError("threshold must be nonnegative")
    manipulative = {i for i, r in enumerate(roles) if r == ROLE_MANIPULATIVE}
    elements = []
    for s, w in post.weights().items():
        if w <= threshold:
            continue
        reduced = tuple(sorted(set(s.nodes) & manipulative))
        if reduced and reduced not in elements:
            elements.append(reduced)
    if not elements:
        raise AcquisitionError(
            "no manipulative variable survives the posterior threshold; "
            "fall back to singleton elements over all manipulative variables"
        )
    elements.sort(key=lambda e: (len(e), e))
    es = ExplorationSet(elements)
    if domains is not None:
        sampler_seed = np.random.default_rng(seed)
        for element in elements:
            missing = [j for j in element if j not in domains]
            if missing:
                raise AcquisitionError(f"no domain for nodes {missing}")
            sob = qmc.Sobol(
                d=len(element), scramble=True,
                seed=int(sampler_seed.integers(0, 2**31 - 1)),
            )
            unit = _sobol_draw(sob, grid_size)
            lo = np.array([domains[j][0] for j in element])
            hi = np.array([domains[j][1] for j in element])
            es.grids[element] = lo + unit * (hi - lo)
    return es


def singleton_exploration_set(roles, domains=None,
                              grid_size: int = DEFAULT_GRID_SIZE,
                              seed: int = 0) -> ExplorationSet:
    """All manipulative singletons; the documented fallback."""
    manipulative = [i for i, r in enumerate(roles) if r == ROLE_MANIPULATIVE]
    if not manipulative:
        raise AcquisitionError("no manipulative variables")
    es = ExplorationSet([(j,) for j in manipulative])
    if domains is not None:
        rng = np.random.default_rng(seed)
        for element in es.elements:
            sob = qmc.Sobol(d=1, scramble=True,
                            seed=int(rng.integers(0, 2**31 - 1)))
            lo, hi = domains[element[0]]
            es.grids[element] = lo + _sobol_draw(sob, grid_size) * (hi - lo)
    return es


def causal_ei(gp: GpSurrogate, y_best: float, v) -> float:
    """Expected improvement below y_best under the surrogate's prediction."""
    mean, var = predict(gp, v)
    std = math.sqrt(max(var, 0.0))
    if std == 0.0:
        return max(y_best - mean, 0.0)
    u = (y_best - mean) / std
    return float(std * (u * norm.cdf(u) + norm.pdf(u)))


def select_intervention(es: ExplorationSet, surrogates: dict, y_best: float,
                        seed: int = 0) -> tuple:
    """Best (Intervention, EI value) over every element's candidate grid.

    Ties break deterministically: lower element cardinality, then element
    lexicographic order, then lower grid index. A fully flat acquisition
    (all zero) falls back to one seeded uniform draw over elements.
    """
    missing = [e for e in es.elements if e not in surrogates]
    if missing:
        raise AcquisitionError(f"no surrogate for elements {missing}")
    best = None  # (ei, cardinality, element, grid index, values)
    for element in sorted(es.elements, key=lambda e: (len(e), e)):
        grid = es.grids.get(element)
        if grid is None or len(grid) == 0:
            raise AcquisitionError(f"element {element} has no candidate grid")
        gp = surrogates[element]
        for idx, values in enumerate(grid):
            ei = causal_ei(gp, y_best, values)
            key = (-ei, len(element), element, idx)
            if best is None or key < best[0]:
                best = (key, element, np.asarray(values, dtype=float))
    (neg_ei, _, _, _), element, values = best
    if -neg_ei <= 0.0:
        rng = np.random.default_rng(seed)
        element = es.elements[int(rng.integers(0, len(es.elements)))]
        grid = es.grids[element]
        values = np.asarray(grid[int(rng.integers(0, len(grid)))], dtype=float)
        logger.info("flat acquisition; exploring element %s uniformly",
                    element)
        return Intervention(list(element), values), 0.0
    return Intervention(list(element), values), float(-neg_ei)
