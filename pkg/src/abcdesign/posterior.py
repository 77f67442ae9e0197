"""Approximate posteriors over DAGs and distributions of target functionals.

The posterior is represented by a weighted ensemble of DAGs with plug-in
maximum-likelihood parameters.  Weights are proportional to prior times
likelihood, normalized in log space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Hashable, Sequence

import numpy as np
from scipy.special import logsumexp

from .graphs import Dag, GraphError, InterventionTarget, descendants
from .rng import derive_seed, rng_from
from .sem import Dataset, Design, MleParams, log_likelihood, mle_fit

LOG2 = np.log(2.0)


class PosteriorError(ValueError):
    pass


class BootstrapError(PosteriorError):
    pass


@dataclass(frozen=True)
class DagEnsemble:
    """Weighted DAGs with per-DAG fitted parameters.

    Weights are a probability vector aligned with ``dags``.  Duplicate DAGs
    may appear (the bootstrap keeps them); their weight is shared naturally.
    """

    dags: tuple[Dag, ...]
    weights: np.ndarray
    params: tuple[MleParams, ...]

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if not self.dags:
            raise PosteriorError("ensemble is empty")
        if w.shape != (len(self.dags),):
            raise PosteriorError("weights length does not match ensemble size")
        if np.any(w < 0) or not np.isfinite(w).all():
            raise PosteriorError("weights must be finite and nonnegative")
        s = w.sum()
        if abs(s - 1.0) > 1e-8:
            raise PosteriorError(f"weights sum to {s!r}, expected 1")
        if len(self.params) != len(self.dags):
            raise PosteriorError("params length does not match ensemble size")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dags", tuple(self.dags))
        object.__setattr__(self, "params", tuple(self.params))

    @property
    def size(self) -> int:
        return len(self.dags)

    @property
    def p(self) -> int:
        return self.dags[0].p

    def with_weights(self, weights: np.ndarray) -> "DagEnsemble":
        return DagEnsemble(self.dags, weights, self.params)

    @cached_property
    def weight_stack(self) -> np.ndarray:
        """(size, p, p) stacked edge-weight matrices, read-only."""
        a = np.stack([pr.weights for pr in self.params])
        a.setflags(write=False)
        return a

    @cached_property
    def variance_stack(self) -> np.ndarray:
        a = np.stack([pr.noise_variances for pr in self.params])
        a.setflags(write=False)
        return a

    def to_json(self) -> str:
        items = []
        for g, w, pr in zip(self.dags, self.weights, self.params):
            items.append(
                {
                    "dag": g.to_json_dict(),
                    "weight": float(w),
                    "weights": [[float(v) for v in row] for row in pr.weights],
                    "noise_variances": [float(v) for v in pr.noise_variances],
                }
            )
        return json.dumps(items, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DagEnsemble":
        items = json.loads(text)
        dags = tuple(Dag.from_json_dict(d["dag"]) for d in items)
        w = np.array([d["weight"] for d in items], dtype=float)
        params = tuple(
            MleParams(np.array(d["weights"]), np.array(d["noise_variances"])) for d in items
        )
        return cls(dags, w, params)


@dataclass(frozen=True)
class TargetFunctional:
    """Map from a DAG to the quantity of interest.

    ``spec`` doubles as the canonical parseable name:
    ``full`` | ``edge:i,j`` | ``orient:i,j`` | ``desc:i`` | ``parents:i``.
    """

    spec: str

    _KINDS = ("full", "edge", "orient", "desc", "parents")

    def __post_init__(self):
        kind = self.spec.split(":", 1)[0]
        if kind not in self._KINDS:
            raise PosteriorError(f"unknown functional {self.spec!r}")
        self._args  # validates argument syntax eagerly

    @cached_property
    def _args(self) -> tuple[int, ...]:
        parts = self.spec.split(":", 1)
        kind = parts[0]
        want = {"full": 0, "edge": 2, "orient": 2, "desc": 1, "parents": 1}[kind]
        if want == 0:
            if len(parts) > 1:
                raise PosteriorError(f"functional {self.spec!r} takes no arguments")
            return ()
        if len(parts) != 2:
            raise PosteriorError(f"functional {self.spec!r} is missing arguments")
        try:
            args = tuple(int(s) for s in parts[1].split(","))
        except ValueError:
            raise PosteriorError(f"functional {self.spec!r} has non-integer arguments") from None
        if len(args) != want:
            raise PosteriorError(f"functional {self.spec!r} expects {want} argument(s)")
        if kind in ("edge", "orient") and args[0] == args[1]:
            raise PosteriorError(f"functional {self.spec!r} repeats a node")
        if any(a < 0 for a in args):
            raise PosteriorError(f"functional {self.spec!r} has negative node index")
        return args

    @classmethod
    def full_graph(cls) -> "TargetFunctional":
        return cls("full")

    @classmethod
    def edge_presence(cls, i: int, j: int) -> "TargetFunctional":
        return cls(f"edge:{i},{j}")

    @classmethod
    def edge_orientation(cls, i: int, j: int) -> "TargetFunctional":
        return cls(f"orient:{i},{j}")

    @classmethod
    def descendant_set(cls, i: int) -> "TargetFunctional":
        return cls(f"desc:{i}")

    @classmethod
    def parent_set(cls, i: int) -> "TargetFunctional":
        return cls(f"parents:{i}")

    @classmethod
    def parse(cls, text: str) -> "TargetFunctional":
        return cls(text.strip())

    def __call__(self, g: Dag) -> Hashable:
        kind = self.spec.split(":", 1)[0]
        a = self._args
        if max(a, default=-1) >= g.p:
            raise PosteriorError(f"functional {self.spec!r} references node outside graph")
        if kind == "full":
            return tuple(sorted(g.edges))
        if kind == "edge":
            i, j = a
            return (i, j) in g.edges or (j, i) in g.edges
        if kind == "orient":
            i, j = a
            if (i, j) in g.edges:
                return f"{i}->{j}"
            if (j, i) in g.edges:
                return f"{j}->{i}"
            return "absent"
        if kind == "desc":
            return tuple(sorted(descendants(g, a[0])))
        return g.parents(a[0])


@dataclass(frozen=True)
class FunctionalDistribution:
    """Distribution of a functional's value under an ensemble.

    Support is in first-appearance order over the ensemble, so equal inputs
    give identical objects.
    """

    support: tuple[Hashable, ...]
    probs: np.ndarray

    def __post_init__(self):
        w = np.array(self.probs, dtype=float)
        if w.shape != (len(self.support),):
            raise PosteriorError("probs length does not match support")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-8:
            raise PosteriorError("probs must be a probability vector")
        w.setflags(write=False)
        object.__setattr__(self, "probs", w)
        object.__setattr__(self, "support", tuple(self.support))

    def prob_of(self, value: Hashable) -> float:
        for v, q in zip(self.support, self.probs):
            if v == value:
                return float(q)
        return 0.0


def functional_distribution(ens: DagEnsemble, f: TargetFunctional) -> FunctionalDistribution:
    support: list[Hashable] = []
    index: dict[Hashable, int] = {}
    probs: list[float] = []
    for g, w in zip(ens.dags, ens.weights):
        v = f(g)
        k = index.get(v)
        if k is None:
            index[v] = len(support)
            support.append(v)
            probs.append(float(w))
        else:
            probs[k] += float(w)
    return FunctionalDistribution(tuple(support), np.array(probs))


def entropy(dist: FunctionalDistribution) -> float:
    """Shannon entropy in bits; zero-probability atoms contribute nothing."""
    q = dist.probs[dist.probs > 0]
    h = float(-(q * (np.log(q) / LOG2)).sum())
    return max(h, 0.0)  # roundoff can push a point mass a hair below zero


def functional_groups(ens: DagEnsemble, f: TargetFunctional) -> np.ndarray:
    """Index of each ensemble member's functional value in first-appearance order."""
    index: dict[Hashable, int] = {}
    out = np.zeros(ens.size, dtype=int)
    for t, g in enumerate(ens.dags):
        v = f(g)
        out[t] = index.setdefault(v, len(index))
    return out


# ---------------------------------------------------------------------------
# weight computation


def posterior_weights(
    dags: Sequence[Dag],
    params: Sequence[MleParams],
    data: Dataset,
    log_prior: Callable[[Dag], float] | None = None,
) -> np.ndarray:
    """Normalized weights proportional to prior times plug-in likelihood."""
    if len(dags) != len(params):
        raise PosteriorError("dags and params lengths differ")
    logw = np.zeros(len(dags))
    for t, (g, pr) in enumerate(zip(dags, params)):
        logw[t] = log_likelihood(g, pr, data)
        if log_prior is not None:
            logw[t] += log_prior(g)
    return np.exp(logw - logsumexp(logw))


def reweighted_posterior(ens: DagEnsemble, y: Dataset, xi: Design) -> np.ndarray:
    """Weights after importance-reweighting by new rows ``y`` from design ``xi``.

    Parameters are not refit: each member keeps its plug-in estimate and the
    update multiplies by the likelihood of the new rows alone.
    """
    allowed = set(xi.support)
    for r, t in enumerate(y.targets):
        if t not in allowed:
            raise PosteriorError(
                f"row {r} has target {{{t.encode()}}} outside the design support"
            )
    with np.errstate(divide="ignore"):
        logw = np.log(ens.weights)
    for t in range(ens.size):
        if np.isfinite(logw[t]):
            logw[t] += log_likelihood(ens.dags[t], ens.params[t], y)
    return np.exp(logw - logsumexp(logw))


def loglik_matrix(
    weight_stack: np.ndarray,
    variance_stack: np.ndarray,
    x: np.ndarray,
    target: InterventionTarget,
) -> np.ndarray:
    """(rows, members) log likelihood of each row under every member.

    All rows share one intervention target; intervened-node terms are skipped.
    """
    resid = x[:, None, :] - np.einsum("rp,tpq->rtq", x, weight_stack)
    terms = -0.5 * resid * resid / variance_stack - 0.5 * np.log(2.0 * np.pi * variance_stack)
    if target.nodes:
        keep = np.ones(x.shape[1], dtype=bool)
        keep[list(target.nodes)] = False
        terms = terms[:, :, keep]
    return terms.sum(axis=2)


# ---------------------------------------------------------------------------
# learners and the bootstrap


def enumerate_all_dags(p: int) -> tuple[Dag, ...]:
    """Every DAG on p nodes, deterministic order.  Guarded to p <= 5."""
    if p > 5:
        raise PosteriorError(
            f"exhaustive candidate enumeration over {p} nodes is intractable;"
            " supply an explicit candidate set or learner"
        )
    pairs = [(i, j) for i in range(p) for j in range(i + 1, p)]
    out = []
    # 3 states per unordered pair: absent, i->j, j->i
    def rec(k: int, edges: list):
        if k == len(pairs):
            try:
                out.append(Dag(p, edges))
            except GraphError:
                pass
            return
        i, j = pairs[k]
        rec(k + 1, edges)
        edges.append((i, j))
        rec(k + 1, edges)
        edges[-1] = (j, i)
        rec(k + 1, edges)
        edges.pop()

    rec(0, [])
    return tuple(out)


def bic_score(g: Dag, data: Dataset, known_noise: float | None = None) -> float:
    """Plug-in log likelihood minus (log n)/2 per free edge weight."""
    params = mle_fit(g, data, known_noise)
    return log_likelihood(g, params, data) - 0.5 * np.log(data.n) * len(g.edges)


def exhaustive_learner(
    data: Dataset, candidates: Sequence[Dag], known_noise: float | None = None
) -> Dag:
    """Highest-BIC candidate; ties keep the earliest in candidate order."""
    if not candidates:
        raise PosteriorError("candidate set is empty")
    best = None
    best_score = -np.inf
    for g in candidates:
        s = bic_score(g, data, known_noise)
        if s > best_score:
            best, best_score = g, s
    return best


def dag_bootstrap(
    data: Dataset,
    T: int,
    learner: Callable[[Dataset], Dag],
    seed: int,
    log_prior: Callable[[Dag], float] | None = None,
    known_noise: float | None = None,
) -> DagEnsemble:
    """Nonparametric bootstrap over the learner, reweighted by the posterior.

    Each of the T resamples draws n rows with replacement and runs the
    learner; a failing resample is retried up to 3 times with a fresh
    sub-stream before giving up.  Duplicates stay as separate members.
    Parameters are then fit on the original data and weights computed from
    prior times plug-in likelihood of the original data.
    """
    if T < 1:
        raise PosteriorError(f"ensemble size must be positive, got {T}")
    if data.n == 0:
        raise PosteriorError("cannot bootstrap from an empty dataset")
    dags: list[Dag] = []
    for s in range(T):
        g = None
        last: Exception | None = None
        for attempt in range(3):
            rng = rng_from(derive_seed(seed, "resample", s, attempt))
            idx = rng.integers(0, data.n, size=data.n)
            try:
                g = learner(data.take(idx))
                break
            except Exception as exc:  # learner contract: any failure means retry
                last = exc
        if g is None:
            raise BootstrapError(f"learner failed on resample {s} after 3 attempts") from last
        dags.append(g)
    # params and weights use the original rows, not the resamples
    params = tuple(mle_fit(g, data, known_noise) for g in dags)
    w = posterior_weights(dags, params, data, log_prior)
    return DagEnsemble(tuple(dags), w, params)
