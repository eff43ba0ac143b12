"""Gaussian-process surrogates with a graph-marginalized causal prior.

Each exploration-set element gets its own GP over intervention values. The
GP's prior mean and prior standard deviation come from the parent-set
posterior by the law of total expectation/variance: per candidate set the
coefficient belief gives an inner predictive mean and variance, and the
posterior weights combine them into m(v) and sigma(v). The GP kernel adds
the rank-one causal term sigma(v) sigma(v') to an RBF, so prior uncertainty
about the graph inflates covariance exactly where the candidate mechanisms
disagree.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .parent_posterior import ParentPosterior, _phi

logger = logging.getLogger(__name__)


class SurrogateError(ValueError):
    pass


@dataclass
class CausalPrior:
    """Prior mean and std functions over raw intervention values."""

    element: tuple  # intervened node indices, sorted
    mean_fn: Callable[[np.ndarray], float]
    std_fn: Callable[[np.ndarray], float]

    def mean(self, v) -> float:
        return float(self.mean_fn(np.atleast_1d(np.asarray(v, dtype=float))))

    def std(self, v) -> float:
        s = float(self.std_fn(np.atleast_1d(np.asarray(v, dtype=float))))
        if s < 0:
            raise SurrogateError(f"prior std is negative at {v}")
        return s


def constant_prior(element, mean: float, std: float) -> CausalPrior:
    return CausalPrior(tuple(element), lambda v: mean, lambda v: std)


def _mixture_moments(element, post: ParentPosterior, base_row: np.ndarray,
                     y_index: int):
    """Per-query inner moments combined over posterior weights.

    Returns (mean, variance) of Y in raw units for the full raw row
    ``base_row`` (element coordinates already set to the query values,
    everything else imputed with observational means).
    """
    if post.standardizer is not None:
        x_std = post.standardizer.transform(base_row)
        y_scale = float(post.standardizer.stds[y_index])
        y_shift = float(post.standardizer.means[y_index])
    else:
        x_std, y_scale, y_shift = base_row, 1.0, 0.0
    means, variances, weights = [], [], []
    for s, entry in post.entries.items():
        w = math.exp(entry.log_weight)
        if w <= 0.0:
            continue
        phi = _phi(post, entry, s, x_std)
        m = float(entry.belief.mean @ phi) if phi.size else 0.0
        var = (
            float(phi @ entry.belief.cov @ phi) if phi.size else 0.0
        ) + post.noise_variance
        means.append(m * y_scale + y_shift)
        variances.append(var * y_scale**2)
        weights.append(w)
    weights = np.asarray(weights)
    means = np.asarray(means)
    outer_mean = float(weights @ means)
    outer_var = float(
        weights @ (means - outer_mean) ** 2 + weights @ np.asarray(variances)
    )
    return outer_mean, outer_var


def causal_prior_from_posterior(element, post: ParentPosterior,
                                obs) -> CausalPrior:
    """Marginalize the parent-set posterior into a prior mean/std over values.

    Candidate-parent coordinates that are not intervened on are imputed with
    their observational means inside the inner expectation. When the element
    shares no variable with any positive-weight candidate set the prior
    carries no signal and collapses to the observational mean/std of Y.
    """
    element = tuple(sorted(element))
    if not element:
        raise SurrogateError("element must contain at least one variable")
    y_index = post.target
    obs_means = obs.rows.mean(axis=0)
    informative = any(
        set(element) & set(s.nodes)
        for s, e in post.entries.items()
        if math.exp(e.log_weight) > 0
    )
    if not informative:
        y_obs = obs.column(y_index)
        logger.warning(
            "element %s is disjoint from every positive-weight parent set; "
            "prior collapses to the observational mean/std of Y", element,
        )
        return constant_prior(
            element, float(y_obs.mean()), float(y_obs.std())
        )

    def moments(v):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if v.size != len(element):
            raise SurrogateError(
                f"expected {len(element)} values for element {element}"
            )
        row = obs_means.copy()
        row[list(element)] = v
        return _mixture_moments(element, post, row, y_index)

    return CausalPrior(
        element,
        mean_fn=lambda v: moments(v)[0],
        std_fn=lambda v: math.sqrt(max(moments(v)[1], 0.0)),
    )


JITTER_START = 1e-8
JITTER_LIMIT = 1e-2


@dataclass
class GpSurrogate:
    """GP over intervention values for one exploration-set element."""

    element: tuple
    prior: CausalPrior
    rbf_variance: float = 1.0
    lengthscale: float = 1.0
    noise_variance: float = 1e-4
    domain: Optional[list] = None  # per-coordinate (lo, hi), None = unbounded
    seed: int = 0
    train_inputs: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 0)))
    train_outputs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    _chol: Optional[np.ndarray] = None
    _alpha: Optional[np.ndarray] = None
    _train_stds: Optional[np.ndarray] = None

    @property
    def n_train(self) -> int:
        return int(self.train_outputs.size)

    def copy(self) -> "GpSurrogate":
        return replace(self)


def _kernel(gp: GpSurrogate, A: np.ndarray, B: np.ndarray,
            stds_a: np.ndarray, stds_b: np.ndarray) -> np.ndarray:
    sq = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
    rbf = gp.rbf_variance * np.exp(-sq / (2.0 * gp.lengthscale**2))
    return rbf + np.outer(stds_a, stds_b)


def _chol_with_jitter(K: np.ndarray):
    jitter = 0.0
    while True:
        try:
            return np.linalg.cholesky(K + jitter * np.eye(K.shape[0])), jitter
        except np.linalg.LinAlgError:
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_LIMIT:
                raise SurrogateError(
                    "kernel matrix is not positive definite even with "
                    f"jitter {JITTER_LIMIT:g}"
                ) from None


def _mll(gp: GpSurrogate, V: np.ndarray, resid: np.ndarray,
         stds: np.ndarray) -> float:
    n = resid.size
    K = _kernel(gp, V, V, stds, stds) + gp.noise_variance * np.eye(n)
    try:
        L, _ = _chol_with_jitter(K)
    except SurrogateError:
        return -np.inf
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, resid))
    return float(
        -0.5 * resid @ alpha
        - np.log(np.diag(L)).sum()
        - 0.5 * n * math.log(2.0 * math.pi)
    )


# Fraction of the mean squared residual used as a lower bound on the
# optimized noise variance. The prior-uncertainty kernel term sigma(v)sigma(v')
# is rank one, so a near-zero noise estimate from a handful of points would
# collapse predictive variance everywhere and freeze acquisition.
NOISE_FLOOR_FRACTION = 0.05


def _optimize_hyperparameters(gp: GpSurrogate, V, resid, stds,
                              restarts=5, sweeps=20):
    """Coordinate search over log-hyperparameters maximizing the MLL.

    The noise variance is kept above a small fraction of the mean squared
    residual so that sparse, unlucky samples cannot certify the model as
    noiseless.
    """
    rng = np.random.default_rng(gp.seed)
    log_noise_floor = math.log(
        max(1e-8, NOISE_FLOOR_FRACTION * float(np.mean(resid**2)))
    )
    base = np.log(
        [max(gp.rbf_variance, 1e-12), max(gp.lengthscale, 1e-12),
         max(gp.noise_variance, 1e-12)]
    )
    base[2] = max(base[2], log_noise_floor)
    best_logp, best = -np.inf, base
    for r in range(restarts):
        x = base if r == 0 else base + rng.normal(scale=1.0, size=3)
        x[2] = max(x[2], log_noise_floor)
        step = 0.5
        cur = _mll(replace(gp, rbf_variance=math.exp(x[0]),
                           lengthscale=math.exp(x[1]),
                           noise_variance=math.exp(x[2])), V, resid, stds)
        for _ in range(sweeps):
            improved = False
            for i in range(3):
                for delta in (step, -step):
                    trial = x.copy()
                    trial[i] += delta
                    if i == 2 and trial[2] < log_noise_floor:
                        continue
                    cand = _mll(
                        replace(gp, rbf_variance=math.exp(trial[0]),
                                lengthscale=math.exp(trial[1]),
                                noise_variance=math.exp(trial[2])),
                        V, resid, stds,
                    )
                    if cand > cur:
                        x, cur, improved = trial, cand, True
                        break
            if not improved:
                step /= 2.0
                if step < 1e-3:
                    break
        if cur > best_logp:
            best_logp, best = cur, x
    return math.exp(best[0]), math.exp(best[1]), math.exp(best[2])


def fit(gp: GpSurrogate, inputs, outputs, optimize: bool = True) -> GpSurrogate:
    """Condition the GP on interventional pairs (value vector, observed y).

    With zero pairs the returned surrogate predicts from the prior alone.
    Hyperparameters are tuned by a seeded multi-start coordinate search on
    the marginal log likelihood unless ``optimize=False``.
    """
    V = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(outputs, dtype=float).ravel()
    if y.size == 0:
        return replace(gp, train_inputs=np.zeros((0, len(gp.element))),
                       train_outputs=np.zeros(0), _chol=None, _alpha=None,
                       _train_stds=None)
    if V.shape[0] != y.size:
        raise SurrogateError("inputs and outputs disagree on sample count")
    resid = y - np.array([gp.prior.mean(v) for v in V])
    stds = np.array([gp.prior.std(v) for v in V])
    out = replace(gp)
    if optimize:
        rbf, ls, noise = _optimize_hyperparameters(gp, V, resid, stds)
        out = replace(out, rbf_variance=rbf, lengthscale=ls,
                      noise_variance=noise)
    K = _kernel(out, V, V, stds, stds) + out.noise_variance * np.eye(y.size)
    L, jitter = _chol_with_jitter(K)
    if jitter > 0.0:
        logger.debug("kernel needed jitter %g for element %s",
                     jitter, gp.element)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, resid))
    return replace(out, train_inputs=V, train_outputs=y, _chol=L,
                   _alpha=alpha, _train_stds=stds)


def predict(gp: GpSurrogate, v) -> tuple:
    """Posterior (mean, variance) at a raw intervention value vector."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.size != len(gp.element):
        raise SurrogateError(
            f"expected {len(gp.element)} values for element {gp.element}"
        )
    if gp.domain is not None:
        for value, (lo, hi) in zip(v, gp.domain):
            if not lo <= value <= hi:
                raise SurrogateError(
                    f"query {v.tolist()} outside domain {gp.domain}"
                )
    m0 = gp.prior.mean(v)
    s0 = gp.prior.std(v)
    prior_var = gp.rbf_variance + s0 * s0
    if gp.n_train == 0 or gp._chol is None:
        return m0, prior_var
    k_star = _kernel(gp, v[None, :], gp.train_inputs,
                     np.array([s0]), gp._train_stds)[0]
    mean = m0 + float(k_star @ gp._alpha)
    w = np.linalg.solve(gp._chol, k_star)
    var = prior_var - float(w @ w)
    if var < -1e-10:
        logger.debug("clamping negative predictive variance %g", var)
    return mean, max(var, 0.0)
