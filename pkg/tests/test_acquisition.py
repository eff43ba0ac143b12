"""Exploration-set construction and expected-improvement selection."""

import math

import numpy as np
import pytest

from cbou.acquisition import (AcquisitionError, ExplorationSet,
                              build_exploration_set, causal_ei,
                              select_intervention, singleton_exploration_set)
from cbou.parent_posterior import (LINEAR, GaussianBelief, ParentPosterior,
                                   ParentSet, SetEntry, normalize)
from cbou.surrogate import GpSurrogate, constant_prior

MANIP = ("manipulative", "manipulative", "manipulative", "target")


def _posterior(weights):
    entries = {
        ParentSet.of(nodes): SetEntry(math.log(w),
                                      GaussianBelief(np.zeros(1), np.eye(1)))
        for nodes, w in weights.items()
    }
    post = ParentPosterior(entries=entries, num_nodes=4, target=3, mode=LINEAR)
    normalize(post)
    return post


def _gp(element, mean, rbf_variance=1.0, std0=0.0):
    return GpSurrogate(element=element,
                       prior=constant_prior(element, mean, std0),
                       rbf_variance=rbf_variance)


# ---------------------------------------------------------------------------
# exploration set
# ---------------------------------------------------------------------------

def test_build_collects_manipulative_intersections():
    post = _posterior({(1, 2): 0.7, (2,): 0.3})
    es = build_exploration_set(post, MANIP)
    assert es.elements == [(2,), (1, 2)]


def test_build_applies_threshold():
    post = _posterior({(1, 2): 0.95, (0,): 0.05})
    es = build_exploration_set(post, MANIP, threshold=0.1)
    assert es.elements == [(1, 2)]


def test_build_intersects_out_non_manipulative():
    roles = ("non-manipulative", "manipulative", "manipulative", "target")
    post = _posterior({(0, 1): 1.0})
    es = build_exploration_set(post, roles)
    assert es.elements == [(1,)]


def test_build_empty_result_errors():
    roles = ("non-manipulative", "manipulative", "manipulative", "target")
    post = _posterior({(0,): 1.0})
    with pytest.raises(AcquisitionError):
        build_exploration_set(post, roles)


def test_build_rejects_negative_threshold():
    with pytest.raises(AcquisitionError):
        build_exploration_set(_posterior({(0,): 1.0}), MANIP, threshold=-1.0)


def test_build_grids_live_in_domains():
    post = _posterior({(0,): 0.5, (1, 2): 0.5})
    domains = {0: (-1.0, 1.0), 1: (0.0, 2.0), 2: (5.0, 6.0)}
    es = build_exploration_set(post, MANIP, domains=domains, grid_size=32,
                               seed=3)
    assert es.grids[(0,)].shape == (32, 1)
    assert es.grids[(1, 2)].shape == (32, 2)
    assert np.all(es.grids[(0,)] >= -1.0) and np.all(es.grids[(0,)] <= 1.0)
    g = es.grids[(1, 2)]
    assert np.all(g[:, 0] >= 0.0) and np.all(g[:, 1] >= 5.0)


def test_build_missing_domain_errors():
    post = _posterior({(0,): 1.0})
    with pytest.raises(AcquisitionError):
        build_exploration_set(post, MANIP, domains={1: (0.0, 1.0)})


def test_duplicate_elements_rejected():
    with pytest.raises(AcquisitionError):
        ExplorationSet([(0,), (0,)])


def test_singleton_fallback_set():
    es = singleton_exploration_set(MANIP, domains={0: (0, 1), 1: (0, 1),
                                                   2: (0, 1)})
    assert es.elements == [(0,), (1,), (2,)]
    with pytest.raises(AcquisitionError):
        singleton_exploration_set(("target",))


# ---------------------------------------------------------------------------
# expected improvement
# ---------------------------------------------------------------------------

def test_ei_deterministic_improvement():
    gp = _gp((0,), mean=-1.0, rbf_variance=0.0)
    assert causal_ei(gp, y_best=0.0, v=[0.0]) == pytest.approx(1.0)


def test_ei_at_mean_equals_phi_zero():
    gp = _gp((0,), mean=0.0, rbf_variance=1.0)
    assert causal_ei(gp, 0.0, [0.0]) == pytest.approx(1.0 / math.sqrt(2 * math.pi))


def test_ei_zero_when_no_improvement_possible():
    gp = _gp((0,), mean=1.0, rbf_variance=0.0)
    assert causal_ei(gp, 0.0, [0.0]) == 0.0


def test_ei_nonnegative_on_grid():
    rng = np.random.default_rng(0)
    gp = _gp((0,), mean=0.3, rbf_variance=0.5, std0=0.2)
    for v in rng.normal(size=20):
        assert causal_ei(gp, 0.0, [v]) >= 0.0


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

def _es(grids):
    es = ExplorationSet(sorted(grids, key=lambda e: (len(e), e)))
    es.grids = {e: np.atleast_2d(np.asarray(g, dtype=float))
                for e, g in grids.items()}
    return es


def test_single_candidate_selected():
    es = _es({(0,): [[0.7]]})
    iv, ei = select_intervention(es, {(0,): _gp((0,), mean=-2.0)}, 0.0)
    assert iv.targets == (0,) and iv.values[0] == 0.7
    assert ei > 0


def test_dominant_element_wins():
    es = _es({(0,): [[0.0]], (1,): [[0.0]]})
    surr = {(0,): _gp((0,), mean=0.0), (1,): _gp((1,), mean=-5.0)}
    iv, _ = select_intervention(es, surr, 0.0)
    assert iv.targets == (1,)


def test_tie_prefers_lower_cardinality():
    es = _es({(0,): [[0.1]], (1, 2): [[0.1, 0.1]]})
    surr = {(0,): _gp((0,), mean=-1.0),
            (1, 2): _gp((1, 2), mean=-1.0)}
    iv, _ = select_intervention(es, surr, 0.0)
    assert iv.targets == (0,)


def test_flat_acquisition_falls_back_uniformly():
    es = _es({(0,): [[0.0], [1.0]], (1,): [[0.0], [1.0]]})
    surr = {(0,): _gp((0,), mean=5.0, rbf_variance=0.0),
            (1,): _gp((1,), mean=5.0, rbf_variance=0.0)}
    iv, ei = select_intervention(es, surr, 0.0, seed=11)
    iv2, _ = select_intervention(es, surr, 0.0, seed=11)
    assert ei == 0.0
    assert tuple(iv.targets) in es.elements
    assert iv.targets == iv2.targets
    assert list(iv.values) == list(iv2.values)


def test_missing_surrogate_errors():
    es = _es({(0,): [[0.0]]})
    with pytest.raises(AcquisitionError):
        select_intervention(es, {}, 0.0)


def test_selection_shift_invariance():
    es = _es({(0,): [[0.0], [0.5]], (1,): [[0.0], [0.5]]})
    for c in (0.0, 13.0):
        surr = {(0,): _gp((0,), mean=c + 0.2, std0=0.3),
                (1,): _gp((1,), mean=c - 0.4, std0=0.1)}
        iv, _ = select_intervention(es, surr, c)
        assert iv.targets == (1,)
