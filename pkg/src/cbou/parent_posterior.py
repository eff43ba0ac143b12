"""Bayesian posterior over candidate direct-parent sets of the target.

Each candidate set carries a Gaussian belief over the coefficients of the
target mechanism, either directly on the selected coordinates (linear mode)
or on random Fourier features of them (nonlinear mode). Every new sample
(x, y) yields a closed-form log-marginal-likelihood increment per set; set
weights live in log space and are renormalized with log-sum-exp.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import logsumexp

LINEAR = "linear"
NONLINEAR = "nonlinear"

_SPD_TOL = 1e-10


class PosteriorError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class ParentSet:
    """A hypothesized set of direct parents, stored as sorted node indices."""

    nodes: tuple

    @classmethod
    def of(cls, indices) -> "ParentSet":
        return cls(tuple(sorted(int(i) for i in set(indices))))

    def mask(self, num_nodes: int, target: int) -> np.ndarray:
        """0/1 vector over the non-target nodes, in index order."""
        bits = np.zeros(num_nodes, dtype=int)
        bits[list(self.nodes)] = 1
        return np.delete(bits, target)

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, i):
        return i in self.nodes

    def __iter__(self):
        return iter(self.nodes)


@dataclass
class GaussianBelief:
    """Gaussian over mechanism coefficients: mean vector and covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.asarray(self.cov, dtype=float).reshape(
            self.mean.size, self.mean.size
        )

    def validate(self):
        if self.mean.size == 0:
            return
        if not np.allclose(self.cov, self.cov.T, atol=1e-8):
            raise PosteriorError("belief covariance lost symmetry")
        if np.linalg.eigvalsh(self.cov).min() <= _SPD_TOL * -1:
            raise PosteriorError("belief covariance lost positive definiteness")

    def copy(self) -> "GaussianBelief":
        return GaussianBelief(self.mean.copy(), self.cov.copy())


@dataclass(frozen=True)
class FourierFeatureMap:
    """Random Fourier features approximating an RBF kernel (frozen at init)."""

    frequencies: np.ndarray  # (D, input_dim)
    phases: np.ndarray  # (D,)
    kernel_variance: float = 1.0
    lengthscale: float = 1.0

    @property
    def dimension(self) -> int:
        return self.phases.size

    @property
    def input_dim(self) -> int:
        return self.frequencies.shape[1]

    @classmethod
    def draw(cls, input_dim, dimension=100, kernel_variance=1.0,
             lengthscale=1.0, seed=0) -> "FourierFeatureMap":
        rng = np.random.default_rng(seed)
        freqs = rng.normal(0.0, 1.0 / lengthscale, size=(dimension, input_dim))
        phases = rng.uniform(0.0, 2.0 * np.pi, size=dimension)
        return cls(freqs, phases, float(kernel_variance), float(lengthscale))


def featurize(x: np.ndarray, fmap: FourierFeatureMap) -> np.ndarray:
    """Map inputs to sqrt(2 s^2 / D) * cos(w_i . x + b_i) feature vectors.

    Accepts a single vector (input_dim,) or a batch (n, input_dim).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != fmap.input_dim:
        raise PosteriorError(
            f"input dim {X.shape[1]} != feature-map dim {fmap.input_dim}"
        )
    scale = math.sqrt(2.0 * fmap.kernel_variance / fmap.dimension)
    Z = scale * np.cos(X @ fmap.frequencies.T + fmap.phases)
    return Z[0] if single else Z


def rbf_kernel(x, x_prime, variance=1.0, lengthscale=1.0) -> float:
    diff = np.asarray(x, dtype=float) - np.asarray(x_prime, dtype=float)
    return variance * math.exp(-float(diff @ diff) / (2.0 * lengthscale**2))


@dataclass
class Standardizer:
    """Column-wise affine transform frozen from observational statistics."""

    means: np.ndarray
    stds: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray) -> "Standardizer":
        rows = np.asarray(rows, dtype=float)
        stds = rows.std(axis=0)
        return cls(rows.mean(axis=0), np.where(stds < 1e-12, 1.0, stds))

    @classmethod
    def identity(cls, width: int) -> "Standardizer":
        return cls(np.zeros(width), np.ones(width))

    def transform(self, rows: np.ndarray) -> np.ndarray:
        return (np.asarray(rows, dtype=float) - self.means) / self.stds

    def transform_column(self, values, index: int):
        return (np.asarray(values, dtype=float) - self.means[index]) / self.stds[index]

    def inverse_column(self, values, index: int):
        return np.asarray(values, dtype=float) * self.stds[index] + self.means[index]


@dataclass
class PosteriorConfig:
    mode: str = NONLINEAR
    noise_variance: float = 1.0  # sigma^2_Y
    theta_variance: float = 1.0  # sigma^2_theta
    rff_dimension: int = 100
    kernel_variance: float = 1.0
    lengthscale: float = 1.0
    standardize: bool = True
    seed: int = 0
    target: Optional[int] = None  # target column; inferred when omitted


@dataclass
class SetEntry:
    log_weight: float
    belief: GaussianBelief
    feature_map: Optional[FourierFeatureMap] = None

    def copy(self) -> "SetEntry":
        return SetEntry(self.log_weight, self.belief.copy(), self.feature_map)


@dataclass
class ParentPosterior:
    """Log-weighted candidate parent sets with per-set coefficient beliefs."""

    entries: dict  # ParentSet -> SetEntry
    num_nodes: int
    target: int
    mode: str = NONLINEAR
    noise_variance: float = 1.0
    theta_variance: float = 1.0
    standardizer: Optional[Standardizer] = None

    def sets(self) -> list:
        return sorted(self.entries)

    def weights(self) -> dict:
        return {s: math.exp(e.log_weight) for s, e in self.entries.items()}

    def weight(self, s: ParentSet) -> float:
        entry = self.entries.get(s)
        return math.exp(entry.log_weight) if entry is not None else 0.0

    def copy(self) -> "ParentPosterior":
        return replace(
            self, entries={s: e.copy() for s, e in self.entries.items()}
        )

    def snapshot(self) -> list:
        """Serializable (mask, weight) pairs for the experiment trace."""
        return [
            {
                "mask": "".join(map(str, s.mask(self.num_nodes, self.target))),
                "nodes": list(s.nodes),
                "weight": self.weight(s),
            }
            for s in self.sets()
        ]


def _phi(post: ParentPosterior, entry: SetEntry, s: ParentSet,
         x_std: np.ndarray) -> np.ndarray:
    x_s = x_std[list(s.nodes)]
    if post.mode == LINEAR or entry.feature_map is None:
        return x_s
    return featurize(x_s, entry.feature_map)


def init_beliefs(prior: dict, obs, cfg: PosteriorConfig,
                 fit_obs: bool = True) -> ParentPosterior:
    """Batch Bayesian linear regression per candidate set on observational data.

    ``prior`` maps ParentSet to a probability; sets with zero mass are
    dropped. Data is standardized with statistics frozen from ``obs``.

    With ``fit_obs=False`` the coefficient beliefs stay at their
    N(0, theta_variance I) prior and ``obs`` only fixes the standardization;
    every sample then enters through ``update`` so the set weights absorb
    the full evidence, including the complexity penalty that separates a
    parent set from its supersets. The default folds the observational fit
    into the beliefs without touching the weights, which avoids counting
    observational data twice when the prior was estimated from it.
    """
    total = sum(prior.values())
    if total <= 0 or any(p < 0 for p in prior.values()):
        raise PosteriorError("prior must be nonnegative and not all zero")
    if obs.n < 1:
        raise PosteriorError("need at least one observational row")
    target = cfg.target if cfg.target is not None else _infer_target(prior, obs)
    std = (
        Standardizer.fit(obs.rows) if cfg.standardize
        else Standardizer.identity(obs.rows.shape[1])
    )
    X = std.transform(obs.rows)
    y = X[:, target]
    rng = np.random.default_rng(cfg.seed)
    entries = {}
    for s in sorted(k for k, p in prior.items() if p > 0):
        fmap = None
        if cfg.mode == NONLINEAR and len(s) > 0:
            fmap = FourierFeatureMap.draw(
                len(s), cfg.rff_dimension, cfg.kernel_variance,
                cfg.lengthscale, seed=int(rng.integers(0, 2**31 - 1)),
            )
        Phi = X[:, list(s.nodes)]
        if fmap is not None:
            Phi = featurize(Phi, fmap)
        p = Phi.shape[1]
        if fit_obs:
            A = Phi.T @ Phi / cfg.noise_variance + np.eye(p) / cfg.theta_variance
            try:
                cov = np.linalg.inv(A) if p else np.zeros((0, 0))
            except np.linalg.LinAlgError as exc:  # ridge: unreachable
                raise AssertionError(
                    f"singular design for set {s.nodes}") from exc
            mean = cov @ (Phi.T @ y) / cfg.noise_variance if p else np.zeros(0)
            cov = (cov + cov.T) / 2.0
        else:
            mean = np.zeros(p)
            cov = cfg.theta_variance * np.eye(p)
        entries[s] = SetEntry(
            log_weight=math.log(prior[s] / total),
            belief=GaussianBelief(mean, cov),
            feature_map=fmap,
        )
    post = ParentPosterior(
        entries=entries,
        num_nodes=obs.rows.shape[1],
        target=target,
        mode=cfg.mode,
        noise_variance=cfg.noise_variance,
        theta_variance=cfg.theta_variance,
        standardizer=std if cfg.standardize else None,
    )
    return normalize(post)


def _infer_target(prior: dict, obs) -> int:
    width = obs.rows.shape[1]
    used = set()
    for s in prior:
        used.update(s.nodes)
    candidates = set(range(width)) - used
    # The target is whichever column no candidate set may reference; with
    # several unused columns we default to the last (builtin convention).
    return max(candidates) if candidates else width - 1


def log_increment(belief: GaussianBelief, phi: np.ndarray, y: float,
                  noise_variance: float) -> tuple:
    """Closed-form log P(y | x, g_s) increment and the updated belief.

    Implements the exact Gaussian-integral expression (with log-determinants
    throughout): with C = (Sigma^-1 + phi phi^T / s2)^-1 and
    b = C (y phi / s2 + Sigma^-1 mu),

        inc = -1/2 log(2 pi s2) - 1/2 log|Sigma| - y^2 / (2 s2)
              - 1/2 mu^T Sigma^-1 mu + 1/2 b^T C^-1 b + 1/2 log|C|
    """
    s2 = noise_variance
    p = belief.mean.size
    if p == 0:
        inc = -0.5 * math.log(2.0 * math.pi * s2) - y * y / (2.0 * s2)
        return inc, belief
    phi = np.asarray(phi, dtype=float)
    prior_chol = np.linalg.cholesky(belief.cov)
    prior_inv = np.linalg.inv(belief.cov)
    logdet_prior = 2.0 * float(np.log(np.diag(prior_chol)).sum())
    C_inv = prior_inv + np.outer(phi, phi) / s2
    C = np.linalg.inv(C_inv)
    C = (C + C.T) / 2.0
    C_chol = np.linalg.cholesky(C)
    logdet_C = 2.0 * float(np.log(np.diag(C_chol)).sum())
    prior_term = belief.mean @ prior_inv @ belief.mean
    b = C @ (y * phi / s2 + prior_inv @ belief.mean)
    inc = (
        -0.5 * math.log(2.0 * math.pi * s2)
        - 0.5 * logdet_prior
        - y * y / (2.0 * s2)
        - 0.5 * prior_term
        + 0.5 * float(b @ C_inv @ b)
        + 0.5 * logdet_C
    )
    mu_post = C @ (prior_inv @ belief.mean + y * phi / s2)
    return inc, GaussianBelief(mu_post, C)


def update(post: ParentPosterior, x: np.ndarray, y: float) -> ParentPosterior:
    """Single-sample posterior update: weights and beliefs, then renormalize.

    ``x`` is the full raw observation row (the target column is ignored);
    ``y`` is the raw target value. Standardization is applied internally
    when the posterior was initialized with it.
    """
    x = np.asarray(x, dtype=float)
    if not (np.all(np.isfinite(x)) and np.isfinite(y)):
        raise PosteriorError("non-finite observation")
    if post.standardizer is not None:
        x_std = post.standardizer.transform(x)
        y_std = float(post.standardizer.transform_column(y, post.target))
    else:
        x_std, y_std = x, float(y)
    for s, entry in post.entries.items():
        phi = _phi(post, entry, s, x_std)
        inc, belief = log_increment(entry.belief, phi, y_std, post.noise_variance)
        belief.cov = (belief.cov + belief.cov.T) / 2.0
        belief.validate()
        entry.log_weight += inc
        entry.belief = belief
    return normalize(post)


def normalize(post: ParentPosterior) -> ParentPosterior:
    logs = np.array([e.log_weight for e in post.entries.values()])
    if logs.size == 0 or np.all(np.isneginf(logs)):
        raise PosteriorError("cannot normalize a posterior with no mass")
    total = float(logsumexp(logs))
    for entry in post.entries.values():
        entry.log_weight -= total
    return post


def parent_marginals(post: ParentPosterior) -> np.ndarray:
    """Marginal posterior probability of each node being a direct parent."""
    marg = np.zeros(post.num_nodes)
    for s, entry in post.entries.items():
        w = math.exp(entry.log_weight)
        for j in s.nodes:
            marg[j] += w
    return np.clip(marg, 0.0, 1.0)
