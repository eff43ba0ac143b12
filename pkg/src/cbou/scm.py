"""Structural causal models: DAGs, mechanisms, sampling and benchmark environments.

An SCM couples a DAG with one mechanism per node. Sampling is ancestral:
each node is computed from its already-sampled parents plus exogenous noise.
Hard interventions clamp nodes to fixed values and sever their incoming edges.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import yaml

from scipy.special import expit

ROLE_MANIPULATIVE = "manipulative"
ROLE_NON_MANIPULATIVE = "non-manipulative"
ROLE_TARGET = "target"
ROLES = (ROLE_MANIPULATIVE, ROLE_NON_MANIPULATIVE, ROLE_TARGET)

SCM_SPEC_VERSION = 1


class ScmError(ValueError):
    """Base class for SCM construction and spec-file errors."""


class CyclicGraphError(ScmError):
    pass


class MechanismArityError(ScmError):
    pass


class SpecFormatError(ScmError):
    pass


class InterventionError(ScmError):
    pass


@dataclass(frozen=True)
class Dag:
    """Directed acyclic graph with a single target node and per-node roles."""

    num_nodes: int
    edges: tuple
    target: int
    roles: tuple

    def __post_init__(self):
        if len(self.roles) != self.num_nodes:
            raise ScmError("roles must give one label per node")
        for r in self.roles:
            if r not in ROLES:
                raise ScmError(f"unknown role {r!r}")
        if sum(r == ROLE_TARGET for r in self.roles) != 1:
            raise ScmError("exactly one node must have role 'target'")
        if self.roles[self.target] != ROLE_TARGET:
            raise ScmError("target index does not carry the target role")
        for p, c in self.edges:
            if not (0 <= p < self.num_nodes and 0 <= c < self.num_nodes):
                raise ScmError(f"edge ({p}, {c}) out of range")
            if p == self.target:
                raise ScmError("target must have no outgoing edges")
        self.topological_order()  # raises CyclicGraphError on a cycle

    def parents(self, node: int) -> list:
        return sorted(p for p, c in self.edges if c == node)

    def children(self, node: int) -> list:
        return sorted(c for p, c in self.edges if p == node)

    def topological_order(self, names: Optional[list] = None) -> list:
        """Deterministic Kahn order (lowest index first among ready nodes)."""
        indeg = [0] * self.num_nodes
        for _, c in self.edges:
            indeg[c] += 1
        ready = sorted(i for i in range(self.num_nodes) if indeg[i] == 0)
        order = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for c in self.children(n):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
            ready.sort()
        if len(order) != self.num_nodes:
            stuck = [i for i in range(self.num_nodes) if indeg[i] > 0]
            label = [names[i] if names else str(i) for i in stuck]
            raise CyclicGraphError(f"graph has a cycle through nodes {label}")
        return order

    @property
    def manipulative(self) -> list:
        return [i for i, r in enumerate(self.roles) if r == ROLE_MANIPULATIVE]

    def true_parent_set(self) -> frozenset:
        return frozenset(self.parents(self.target))


@dataclass(frozen=True)
class Noise:
    """Exogenous noise specification for one node."""

    kind: str = "normal"  # normal | uniform | none
    std: float = 0.0
    low: float = 0.0
    high: float = 0.0

    def __post_init__(self):
        if self.kind not in ("normal", "uniform", "none"):
            raise ScmError(f"unknown noise kind {self.kind!r}")
        if self.kind == "normal" and self.std < 0:
            raise ScmError("noise std must be nonnegative")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "normal":
            return rng.normal(0.0, self.std, size=n)
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, size=n)
        return np.zeros(n)


# Registry of closed-form mechanisms used by the builtin benchmark SEMs.
# Each entry maps a matrix of parent columns (sorted by node index) to values.
ANALYTIC_REGISTRY: dict = {
    "toy.z": lambda P: 4.0 + np.exp(-P[:, 0]),
    "toy.y": lambda P: np.cos(P[:, 0]) - np.exp(-P[:, 0] / 20.0),
    # Healthcare, parents sorted as (A, B, As, S, C) prefixes
    "healthcare.b": lambda P: 27.0 - 0.1 * P[:, 0],
    "healthcare.as": lambda P: expit(-0.8 + 0.1 * P[:, 0] + 0.03 * P[:, 1]),
    "healthcare.s": lambda P: expit(-13.0 + 0.1 * P[:, 0] + 0.2 * P[:, 1]),
    "healthcare.c": lambda P: expit(
        2.2 - 0.5 * P[:, 0] + 0.01 * P[:, 1] + 0.02 * P[:, 2] - 0.04 * P[:, 3]
    ),
    "healthcare.y": lambda P: (
        6.8 + 0.04 * P[:, 0] - 0.15 * P[:, 1] + 0.55 * P[:, 2]
        - 0.6 * P[:, 3] + P[:, 4]
    ),
    # Epidemiology, node order (B, T, L, R, Y)
    "epi.l": lambda P: expit(0.5 * P[:, 1] + P[:, 0]),
    "epi.r": lambda P: 4.0 + P[:, 1] * P[:, 0],  # parents sorted (T, L)
    "epi.y": lambda P: (
        0.5 + np.cos(4.0 * P[:, 1]) + np.sin(-P[:, 2] + 2.0 * P[:, 3]) + P[:, 0]
    ),
}

_RANDOM_FN_DEPTH = 5
_RANDOM_FN_WIDTH = 16


@dataclass(frozen=True)
class Mechanism:
    """Causal mechanism of one node: value = f(parents) + noise.

    kind is one of:
      * ``linear``          -- f = weights . parents
      * ``random_function`` -- fixed random tanh network drawn from ``seed``
      * ``analytic``        -- closed-form expression looked up by ``expr``
    """

    kind: str
    noise: Noise = field(default_factory=Noise)
    weights: Optional[tuple] = None
    expr: Optional[str] = None
    seed: Optional[int] = None
    arity: int = 0

    def __post_init__(self):
        if self.kind == "linear":
            if self.weights is None:
                raise ScmError("linear mechanism requires weights")
            object.__setattr__(self, "arity", len(self.weights))
        elif self.kind == "random_function":
            if self.seed is None:
                raise ScmError("random_function mechanism requires a seed")
        elif self.kind == "analytic":
            if self.expr not in ANALYTIC_REGISTRY:
                raise ScmError(f"unknown analytic expression {self.expr!r}")
        else:
            raise ScmError(f"unknown mechanism kind {self.kind!r}")

    def evaluate(self, parent_values: np.ndarray) -> np.ndarray:
        """Evaluate f on an (n, arity) matrix of parent columns."""
        P = np.atleast_2d(np.asarray(parent_values, dtype=float))
        if self.kind == "linear":
            w = np.asarray(self.weights, dtype=float)
            if P.shape[1] != w.size:
                if w.size == 0 and P.size == 0:
                    return np.zeros(P.shape[0])
                raise MechanismArityError(
                    f"linear mechanism has {w.size} weights for "
                    f"{P.shape[1]} parents"
                )
            return P @ w if w.size else np.zeros(P.shape[0])
        if self.kind == "analytic":
            return np.asarray(ANALYTIC_REGISTRY[self.expr](P), dtype=float)
        return self._random_net(P)

    def _random_net(self, P: np.ndarray) -> np.ndarray:
        p = self.arity
        if p == 0:
            return np.zeros(P.shape[0])
        rng = np.random.default_rng(self.seed)
        h = P
        w_in = p
        for _ in range(_RANDOM_FN_DEPTH):
            W = rng.normal(0.0, 1.0, size=(w_in, _RANDOM_FN_WIDTH))
            h = np.tanh(h @ W)
            w_in = _RANDOM_FN_WIDTH
        w_out = rng.normal(0.0, 1.0, size=w_in)
        return h @ w_out


@dataclass(frozen=True)
class Scm:
    """A DAG plus one mechanism per node; immutable and safe to share."""

    dag: Dag
    mechanisms: tuple
    names: Optional[tuple] = None
    domains: Optional[dict] = None  # node index -> (lo, hi)

    def __post_init__(self):
        if len(self.mechanisms) != self.dag.num_nodes:
            raise ScmError("need exactly one mechanism per node")
        for i, m in enumerate(self.mechanisms):
            indeg = len(self.dag.parents(i))
            if m.kind == "linear" and m.arity != indeg:
                raise MechanismArityError(
                    f"node {self.node_name(i)}: mechanism arity {m.arity} "
                    f"!= in-degree {indeg}"
                )
            if m.kind == "random_function" and m.arity != indeg:
                object.__setattr__(m, "arity", indeg)

    def node_name(self, i: int) -> str:
        return self.names[i] if self.names else f"X{i}"

    def node_index(self, name) -> int:
        if isinstance(name, int):
            return name
        if self.names is None or name not in self.names:
            raise ScmError(f"unknown node name {name!r}")
        return self.names.index(name)


@dataclass(frozen=True)
class Intervention:
    """Hard intervention do(X_s = v): sorted target indices and values."""

    targets: tuple
    values: tuple

    def __post_init__(self):
        if len(self.targets) != len(self.values):
            raise ScmError("one value per intervention target required")
        order = np.argsort(self.targets)
        object.__setattr__(self, "targets", tuple(int(self.targets[i]) for i in order))
        object.__setattr__(self, "values", tuple(float(self.values[i]) for i in order))

    def validate(self, scm: Scm):
        for t, v in zip(self.targets, self.values):
            role = scm.dag.roles[t]
            if t == scm.dag.target or role == ROLE_TARGET:
                raise InterventionError("cannot intervene on the target variable")
            if role != ROLE_MANIPULATIVE:
                raise InterventionError(
                    f"node {scm.node_name(t)} is non-manipulative"
                )
            if scm.domains and t in scm.domains:
                lo, hi = scm.domains[t]
                if not (lo <= v <= hi):
                    raise InterventionError(
                        f"value {v} for {scm.node_name(t)} outside domain "
                        f"[{lo}, {hi}]"
                    )


@dataclass
class Dataset:
    """Sampled rows (n x num_nodes) with an optional intervention tag per row."""

    columns: tuple
    rows: np.ndarray
    intervention_tags: list

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if self.rows.shape[1] != len(self.columns):
            raise ScmError("row width must equal the number of columns")
        if len(self.intervention_tags) != self.rows.shape[0]:
            raise ScmError("one intervention tag (or None) per row required")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def column(self, i: int) -> np.ndarray:
        return self.rows[:, self.columns.index(i)]

    def append(self, other: "Dataset") -> "Dataset":
        if other.columns != self.columns:
            raise ScmError("cannot append datasets with different columns")
        return Dataset(
            self.columns,
            np.vstack([self.rows, other.rows]),
            self.intervention_tags + other.intervention_tags,
        )


def _ancestral_sample(scm, n, rng, clamp=None):
    clamp = clamp or {}
    rows = np.zeros((n, scm.dag.num_nodes))
    for node in scm.dag.topological_order(scm.names):
        if node in clamp:
            rows[:, node] = clamp[node]
            continue
        mech = scm.mechanisms[node]
        parents = scm.dag.parents(node)
        P = rows[:, parents] if parents else np.zeros((n, 0))
        rows[:, node] = mech.evaluate(P) + mech.noise.draw(rng, n)
    return rows


def sample_observational(scm: Scm, n: int, seed: int) -> Dataset:
    """Draw n i.i.d. rows from the observational distribution."""
    if n < 1:
        raise ScmError("need at least one sample")
    rng = np.random.default_rng(seed)
    rows = _ancestral_sample(scm, n, rng)
    return Dataset(tuple(range(scm.dag.num_nodes)), rows, [None] * n)


def sample_interventional(scm: Scm, iv: Intervention, n: int, seed: int) -> Dataset:
    """Draw n rows from the mutilated model with iv's nodes clamped."""
    if n < 1:
        raise ScmError("need at least one sample")
    iv.validate(scm)
    rng = np.random.default_rng(seed)
    clamp = dict(zip(iv.targets, iv.values))
    rows = _ancestral_sample(scm, n, rng, clamp=clamp)
    return Dataset(tuple(range(scm.dag.num_nodes)), rows, [iv] * n)


def evaluate_noiseless(scm: Scm, clamp: Optional[dict] = None) -> np.ndarray:
    """Single row with every noise term frozen to zero; clamped nodes fixed.

    Clamp keys may be node names or indices. Used for closed-form point
    checks of the benchmark SEMs.
    """
    clamp = {scm.node_index(k): v for k, v in (clamp or {}).items()}
    row = np.zeros(scm.dag.num_nodes)
    for node in scm.dag.topological_order(scm.names):
        if node in clamp:
            row[node] = clamp[node]
            continue
        mech = scm.mechanisms[node]
        parents = scm.dag.parents(node)
        P = row[parents].reshape(1, -1) if parents else np.zeros((1, 0))
        row[node] = mech.evaluate(P)[0]
    return row


def default_domains(scm: Scm, obs: Dataset, lo_pct=1.0, hi_pct=99.0) -> dict:
    """Per-manipulative-variable range from observational percentiles."""
    domains = {}
    for node in scm.dag.manipulative:
        col = obs.column(node)
        domains[node] = (
            float(np.percentile(col, lo_pct)),
            float(np.percentile(col, hi_pct)),
        )
    if scm.domains:
        domains.update(scm.domains)
    return domains


# ---------------------------------------------------------------------------
# Builtin benchmark environments
# ---------------------------------------------------------------------------

def make_toy() -> Scm:
    """Three-node chain X -> Z -> Y with unit Gaussian noise everywhere."""
    dag = Dag(
        num_nodes=3,
        edges=((0, 1), (1, 2)),
        target=2,
        roles=(ROLE_MANIPULATIVE, ROLE_MANIPULATIVE, ROLE_TARGET),
    )
    mechs = (
        Mechanism("linear", weights=(), noise=Noise("normal", std=1.0)),
        Mechanism("analytic", expr="toy.z", noise=Noise("normal", std=1.0)),
        Mechanism("analytic", expr="toy.y", noise=Noise("normal", std=1.0)),
    )
    return Scm(dag, mechs, names=("X", "Z", "Y"))


def make_healthcare() -> Scm:
    """PSA-minimization SEM: age/BMI non-manipulative, statin/aspirin doses
    manipulative. The cancer node saturates near zero over the age range
    because of the -0.5*A term inside its sigmoid; implemented verbatim."""
    # Node order: A=0, B=1, As=2, S=3, C=4, Y=5
    edges = (
        (0, 1), (0, 2), (0, 3), (0, 4), (0, 5),
        (1, 2), (1, 3), (1, 4), (1, 5),
        (2, 4), (2, 5),
        (3, 4), (3, 5),
        (4, 5),
    )
    dag = Dag(
        num_nodes=6,
        edges=edges,
        target=5,
        roles=(
            ROLE_NON_MANIPULATIVE, ROLE_NON_MANIPULATIVE,
            ROLE_MANIPULATIVE, ROLE_MANIPULATIVE,
            ROLE_NON_MANIPULATIVE, ROLE_TARGET,
        ),
    )
    mechs = (
        Mechanism("linear", weights=(), noise=Noise("uniform", low=55.0, high=75.0)),
        Mechanism("analytic", expr="healthcare.b", noise=Noise("normal", std=0.7)),
        Mechanism("analytic", expr="healthcare.as", noise=Noise("none")),
        Mechanism("analytic", expr="healthcare.s", noise=Noise("none")),
        Mechanism("analytic", expr="healthcare.c", noise=Noise("none")),
        Mechanism("analytic", expr="healthcare.y", noise=Noise("normal", std=0.4)),
    )
    # dosage variables admit the full unit interval even though the
    # observational sigmoids saturate near their extremes
    return Scm(dag, mechs, names=("A", "B", "As", "S", "C", "Y"),
               domains={2: (0.0, 1.0), 3: (0.0, 1.0)})


def make_epidemiology() -> Scm:
    """HIV viral-load SEM with two treatments T and R.

    Y's closed form references L, so the graph carries an L -> Y edge to
    keep mechanism arity consistent. L and R are deterministic as written.
    """
    # Node order: B=0, T=1, L=2, R=3, Y=4
    edges = ((0, 2), (0, 4), (1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4))
    dag = Dag(
        num_nodes=5,
        edges=edges,
        target=4,
        roles=(
            ROLE_NON_MANIPULATIVE, ROLE_MANIPULATIVE,
            ROLE_NON_MANIPULATIVE, ROLE_MANIPULATIVE, ROLE_TARGET,
        ),
    )
    mechs = (
        Mechanism("linear", weights=(), noise=Noise("uniform", low=-1.0, high=1.0)),
        Mechanism("linear", weights=(), noise=Noise("uniform", low=4.0, high=8.0)),
        Mechanism("analytic", expr="epi.l", noise=Noise("none")),
        Mechanism("analytic", expr="epi.r", noise=Noise("none")),
        Mechanism("analytic", expr="epi.y", noise=Noise("normal", std=1.0)),
    )
    # treatment ranges follow the structural supports: T is dosed over its
    # observational interval and R = 4 + L*T spans (4, 12)
    return Scm(dag, mechs, names=("B", "T", "L", "R", "Y"),
               domains={1: (4.0, 8.0), 3: (4.0, 12.0)})


BUILTIN_SCMS: dict = {
    "toy": make_toy,
    "healthcare": make_healthcare,
    "epidemiology": make_epidemiology,
}


def generate_erdos_renyi(d: int, kind: str, seed: int, noise_std=1.0,
                         max_retries=100) -> Scm:
    """Random DAG with expected edge count d (edge prob 2/(d-1)).

    The target is uniform among nodes with at least one parent; its outgoing
    edges are dropped. All non-target nodes are manipulative. ``kind`` picks
    linear mechanisms with U(-5, 5) weights or fixed random tanh networks.
    """
    if d < 3:
        raise ScmError("need at least 3 nodes")
    if kind not in ("linear", "nonlinear"):
        raise ScmError(f"unknown mechanism kind {kind!r}")
    rng = np.random.default_rng(seed)
    p_edge = 2.0 / (d - 1)
    for _ in range(max_retries):
        order = rng.permutation(d)
        edges = []
        for i in range(d):
            for j in range(i + 1, d):
                if rng.random() < p_edge:
                    edges.append((int(order[i]), int(order[j])))
        indeg = {c for _, c in edges}
        if not indeg:
            continue
        target = int(rng.choice(sorted(indeg)))
        edges = [(p, c) for p, c in edges if p != target]
        if target not in {c for _, c in edges}:
            continue  # dropping out-edges cannot orphan the target, but be safe
        roles = tuple(
            ROLE_TARGET if i == target else ROLE_MANIPULATIVE for i in range(d)
        )
        dag = Dag(num_nodes=d, edges=tuple(sorted(edges)), target=target, roles=roles)
        mechs = []
        for node in range(d):
            arity = len(dag.parents(node))
            noise = Noise("normal", std=noise_std)
            if arity == 0 or kind == "linear":
                w = tuple(rng.uniform(-5.0, 5.0, size=arity).tolist())
                mechs.append(Mechanism("linear", weights=w, noise=noise))
            else:
                mech = Mechanism(
                    "random_function",
                    seed=int(rng.integers(0, 2**31 - 1)),
                    noise=noise,
                )
                object.__setattr__(mech, "arity", arity)
                mechs.append(mech)
        return Scm(dag, tuple(mechs))
    raise ScmError(f"no valid target found after {max_retries} retries")


# ---------------------------------------------------------------------------
# SCM spec files
# ---------------------------------------------------------------------------

def _noise_to_spec(noise: Noise) -> dict:
    if noise.kind == "normal":
        return {"kind": "normal", "std": noise.std}
    if noise.kind == "uniform":
        return {"kind": "uniform", "low": noise.low, "high": noise.high}
    return {"kind": "none"}


def _noise_from_spec(doc) -> Noise:
    kind = doc.get("kind", "normal")
    if kind == "normal":
        return Noise("normal", std=float(doc.get("std", 0.0)))
    if kind == "uniform":
        return Noise("uniform", low=float(doc["low"]), high=float(doc["high"]))
    if kind == "none":
        return Noise("none")
    raise SpecFormatError(f"unknown noise kind {kind!r}")


def save_scm_spec(scm: Scm, path):
    names = [scm.node_name(i) for i in range(scm.dag.num_nodes)]
    mechanisms = {}
    for i, m in enumerate(scm.mechanisms):
        entry = {"kind": m.kind}
        if m.kind == "linear":
            entry["weights"] = list(m.weights)
        elif m.kind == "analytic":
            entry["expr"] = m.expr
        else:
            entry["seed"] = m.seed
        mechanisms[names[i]] = entry
    doc = {
        "scm_spec_version": SCM_SPEC_VERSION,
        "nodes": [
            {
                "name": names[i],
                "role": scm.dag.roles[i],
                "noise": _noise_to_spec(scm.mechanisms[i].noise),
            }
            for i in range(scm.dag.num_nodes)
        ],
        "edges": [[names[p], names[c]] for p, c in scm.dag.edges],
        "mechanisms": mechanisms,
    }
    if scm.domains:
        doc["domains"] = {
            names[i]: [lo, hi] for i, (lo, hi) in sorted(scm.domains.items())
        }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_scm_spec(path) -> Scm:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise SpecFormatError(f"not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise SpecFormatError("spec document must be a mapping")
    if doc.get("scm_spec_version") != SCM_SPEC_VERSION:
        raise SpecFormatError(
            f"unsupported scm_spec_version {doc.get('scm_spec_version')!r}"
        )
    for key in ("nodes", "edges", "mechanisms"):
        if key not in doc:
            raise SpecFormatError(f"missing required field {key!r}")
    names = []
    roles = []
    noises = {}
    for nd in doc["nodes"]:
        try:
            names.append(str(nd["name"]))
            roles.append(str(nd["role"]))
        except (KeyError, TypeError) as exc:
            raise SpecFormatError(f"malformed node entry {nd!r}") from exc
        noises[names[-1]] = _noise_from_spec(nd.get("noise", {"kind": "none"}))
    index = {n: i for i, n in enumerate(names)}
    try:
        edges = tuple(
            sorted((index[str(p)], index[str(c)]) for p, c in doc["edges"])
        )
    except KeyError as exc:
        raise SpecFormatError(f"edge references unknown node {exc}") from exc
    targets = [i for i, r in enumerate(roles) if r == ROLE_TARGET]
    if len(targets) != 1:
        raise SpecFormatError("spec must declare exactly one target node")
    dag = Dag(len(names), edges, targets[0], tuple(roles))
    mechs = []
    for i, name in enumerate(names):
        m = doc["mechanisms"].get(name)
        if m is None:
            raise SpecFormatError(f"missing mechanism for node {name!r}")
        kind = m.get("kind")
        noise = noises[name]
        if kind == "linear":
            mech = Mechanism("linear", weights=tuple(m.get("weights", [])),
                             noise=noise)
        elif kind == "analytic":
            mech = Mechanism("analytic", expr=m.get("expr"), noise=noise)
        elif kind == "random_function":
            mech = Mechanism("random_function", seed=int(m["seed"]), noise=noise)
            object.__setattr__(mech, "arity", len(dag.parents(i)))
        else:
            raise SpecFormatError(f"unknown mechanism kind {kind!r}")
        mechs.append(mech)
    domains = None
    if "domains" in doc:
        domains = {
            index[name]: (float(lo), float(hi))
            for name, (lo, hi) in doc["domains"].items()
        }
    return Scm(dag, tuple(mechs), names=tuple(names), domains=domains)
