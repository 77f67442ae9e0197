"""Linear-Gaussian structural equation models and interventional data.

Conventions: ``weights[i, j]`` is the coefficient of node i in the equation
for node j, so column j collects the parents of j.  A hard intervention on a
set of nodes replaces their equations with independent Gaussian atoms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

from .graphs import Dag, GraphError, InterventionTarget, topological_order
from .rng import rng_from


class SemError(ValueError):
    pass


class InsufficientDataError(SemError):
    pass


class SingularGramError(SemError):
    pass


class DatasetFormatError(SemError):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_sparsity(weights: np.ndarray, dag: Dag) -> None:
    mask = np.zeros((dag.p, dag.p), dtype=bool)
    for i, j in dag.edges:
        mask[i, j] = True
    stray = np.argwhere((weights != 0.0) & ~mask)
    if stray.size:
        i, j = stray[0]
        raise SemError(f"nonzero weight at ({i}, {j}) without edge {i} -> {j}")


@dataclass(frozen=True)
class LinearGaussianScm:
    """Linear SEM with Gaussian noise and a fixed hard-intervention atom."""

    dag: Dag
    weights: np.ndarray
    noise_variances: np.ndarray
    intervention_mean: float = 0.0
    intervention_variance: float = 1.0

    def __post_init__(self):
        w = _readonly(self.weights)
        v = _readonly(self.noise_variances)
        if w.shape != (self.dag.p, self.dag.p):
            raise SemError(f"weights must be {self.dag.p}x{self.dag.p}, got {w.shape}")
        if v.shape != (self.dag.p,):
            raise SemError(f"noise_variances must have length {self.dag.p}")
        if np.any(v <= 0):
            raise SemError("noise variances must be positive")
        if self.intervention_variance <= 0:
            raise SemError("intervention variance must be positive")
        _check_sparsity(w, self.dag)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "noise_variances", v)

    @property
    def p(self) -> int:
        return self.dag.p

    def __eq__(self, other):
        if not isinstance(other, LinearGaussianScm):
            return NotImplemented
        return (
            self.dag == other.dag
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.noise_variances, other.noise_variances)
            and self.intervention_mean == other.intervention_mean
            and self.intervention_variance == other.intervention_variance
        )

    __hash__ = None


@dataclass(frozen=True)
class MleParams:
    """Fitted edge weights and per-node noise variances for one DAG."""

    weights: np.ndarray
    noise_variances: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _readonly(self.weights))
        object.__setattr__(self, "noise_variances", _readonly(self.noise_variances))

    __hash__ = None

    def __eq__(self, other):
        if not isinstance(other, MleParams):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and np.array_equal(
            self.noise_variances, other.noise_variances
        )


@dataclass(frozen=True)
class Dataset:
    """Rows of samples with the intervention target active for each row."""

    x: np.ndarray
    targets: tuple[InterventionTarget, ...]

    def __post_init__(self):
        x = _readonly(self.x)
        if x.ndim != 2:
            raise DatasetFormatError(f"sample matrix must be 2-d, got shape {x.shape}")
        if len(self.targets) != x.shape[0]:
            raise DatasetFormatError(
                f"{x.shape[0]} rows but {len(self.targets)} target annotations"
            )
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "targets", tuple(self.targets))

    @classmethod
    def empty(cls, p: int) -> "Dataset":
        return cls(np.zeros((0, p)), ())

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return self.n

    @cached_property
    def intervened_mask(self) -> np.ndarray:
        """Boolean (n, p), True where the row's target includes the node."""
        m = np.zeros((self.n, self.p), dtype=bool)
        for r, t in enumerate(self.targets):
            for i in t.nodes:
                if i >= self.p:
                    raise DatasetFormatError(
                        f"row {r}: target node {i} outside 0..{self.p - 1}"
                    )
                m[r, i] = True
        m.setflags(write=False)
        return m

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.x[idx], tuple(self.targets[i] for i in idx))

    def concat(self, other: "Dataset") -> "Dataset":
        if self.p != other.p:
            raise DatasetFormatError("cannot concatenate datasets of different widths")
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        return Dataset(np.vstack([self.x, other.x]), self.targets + other.targets)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow([f"x{i}" for i in range(self.p)] + ["target"])
            for row, t in zip(self.x, self.targets):
                w.writerow([repr(float(v)) for v in row] + [t.encode()])

    @classmethod
    def load_csv(cls, path) -> "Dataset":
        with open(path, newline="") as f:
            reader = csv.reader(f)
            try:
                header = next(reader)
            except StopIteration:
                raise DatasetFormatError(f"{path}: empty file") from None
            rows = list(reader)
        if not header or header[-1] != "target":
            raise DatasetFormatError(f"{path}: last column must be 'target'")
        p = len(header) - 1
        expect = [f"x{i}" for i in range(p)]
        if header[:-1] != expect:
            raise DatasetFormatError(
                f"{path}: expected columns {expect + ['target']}, got {header}"
            )
        xs = np.zeros((len(rows), p))
        targets = []
        for r, row in enumerate(rows):
            if len(row) != p + 1:
                raise DatasetFormatError(f"{path}: row {r + 1} has {len(row)} fields, expected {p + 1}")
            try:
                xs[r] = [float(v) for v in row[:p]]
            except ValueError as exc:
                raise DatasetFormatError(f"{path}: row {r + 1}: {exc}") from None
            try:
                t = InterventionTarget.parse(row[p])
            except GraphError as exc:
                raise DatasetFormatError(f"{path}: row {r + 1}: {exc}") from None
            if max(t.nodes, default=-1) >= p:
                raise DatasetFormatError(
                    f"{path}: row {r + 1}: target node outside 0..{p - 1}"
                )
            targets.append(t)
        return cls(xs, tuple(targets))


@dataclass(frozen=True, init=False)
class Design:
    """Multiset of intervention targets with per-target sample counts.

    Stored canonically (sorted by target encoding) so two designs built in
    different orders compare and hash equal.
    """

    counts: tuple[tuple[InterventionTarget, int], ...]

    def __init__(self, counts: Mapping[InterventionTarget, int] | Iterable[tuple[InterventionTarget, int]] = ()):
        items = counts.items() if isinstance(counts, Mapping) else counts
        agg: dict[InterventionTarget, int] = {}
        for t, c in items:
            c = int(c)
            if c < 0:
                raise SemError(f"negative count {c} for target {{{t.encode()}}}")
            agg[t] = agg.get(t, 0) + c
        norm = tuple(
            (t, c) for t, c in sorted(agg.items(), key=lambda tc: tc[0].encode()) if c > 0
        )
        object.__setattr__(self, "counts", norm)

    @property
    def size(self) -> int:
        return sum(c for _, c in self.counts)

    @property
    def support(self) -> tuple[InterventionTarget, ...]:
        return tuple(t for t, _ in self.counts)

    def count(self, target: InterventionTarget) -> int:
        for t, c in self.counts:
            if t == target:
                return c
        return 0

    def add(self, target: InterventionTarget, k: int = 1) -> "Design":
        return Design(self.counts + ((target, k),))

    def remove_one(self, target: InterventionTarget) -> "Design":
        if self.count(target) == 0:
            raise SemError(f"target {{{target.encode()}}} not in design")
        return Design(tuple((t, c - 1 if t == target else c) for t, c in self.counts))

    def encode(self) -> str:
        return "|".join(f"{t.encode()}x{c}" for t, c in self.counts)

    def to_json_list(self) -> list[dict]:
        return [{"target": t.encode(), "count": c} for t, c in self.counts]

    @classmethod
    def from_json_list(cls, items: list[dict]) -> "Design":
        return cls((InterventionTarget.parse(d["target"]), int(d["count"])) for d in items)

    def __repr__(self) -> str:
        return f"Design({self.encode() or 'empty'})"


# ---------------------------------------------------------------------------
# sampling and estimation


def sample(scm: LinearGaussianScm, target: InterventionTarget, n: int, seed: int) -> Dataset:
    """Draw n i.i.d. rows under a hard intervention on ``target``.

    Nodes are filled in topological order; intervened nodes draw from the
    SCM's intervention atom.
    """
    if n < 0:
        raise SemError(f"sample count must be nonnegative, got {n}")
    if max(target.nodes, default=-1) >= scm.p:
        raise SemError(f"target {{{target.encode()}}} outside node range 0..{scm.p - 1}")
    rng = rng_from(seed) if isinstance(seed, int) else seed
    eps = rng.standard_normal((n, scm.p))
    x = np.zeros((n, scm.p))
    sd = np.sqrt(scm.noise_variances)
    isd = np.sqrt(scm.intervention_variance)
    for i in topological_order(scm.dag):
        if i in target:
            x[:, i] = scm.intervention_mean + isd * eps[:, i]
        else:
            pa = scm.dag.parents(i)
            x[:, i] = sd[i] * eps[:, i]
            if pa:
                x[:, i] += x[:, pa] @ scm.weights[pa, i]
    return Dataset(x, (target,) * n)


def mle_fit(g: Dag, data: Dataset, known_noise: float | None = None) -> MleParams:
    """Per-node least squares on rows where the node was not intervened.

    No intercept: variables are assumed centered.  ``known_noise`` fixes all
    noise variances instead of estimating them from residuals.
    """
    if data.p != g.p:
        raise SemError(f"data has {data.p} columns but graph has {g.p} nodes")
    free = ~data.intervened_mask
    W = np.zeros((g.p, g.p))
    v = np.zeros(g.p)
    for i in range(g.p):
        rows = free[:, i]
        m = int(rows.sum())
        pa = g.parents(i)
        if m < len(pa) + 1:
            raise InsufficientDataError(
                f"node {i}: {m} usable rows for {len(pa)} parents"
            )
        y = data.x[rows, i]
        if pa:
            X = data.x[np.ix_(rows, pa)]
            gram = X.T @ X
            try:
                coef = np.linalg.solve(gram, X.T @ y)
            except np.linalg.LinAlgError:
                raise SingularGramError(f"node {i}: singular parent Gram matrix") from None
            W[list(pa), i] = coef
            resid = y - X @ coef
        else:
            resid = y
        if known_noise is not None:
            v[i] = known_noise
        else:
            v[i] = float(resid @ resid) / m
            if v[i] <= 0:
                raise SingularGramError(f"node {i}: zero residual variance")
    return MleParams(W, v)


def log_likelihood(g: Dag, params: MleParams, data: Dataset) -> float:
    """Gaussian log likelihood of the rows, skipping intervened-node terms.

    The contribution of an intervened node is the same for every candidate
    graph, so dropping it leaves posterior weights unchanged.
    """
    if data.n == 0:
        return 0.0
    if data.p != g.p:
        raise SemError(f"data has {data.p} columns but graph has {g.p} nodes")
    resid = data.x - data.x @ params.weights
    keep = ~data.intervened_mask
    var = params.noise_variances
    terms = -0.5 * (resid * resid) / var - 0.5 * np.log(2.0 * np.pi * var)
    return float(np.sum(terms, where=keep))


# ---------------------------------------------------------------------------
# generators


def _draw_weights(dag: Dag, rng: np.random.Generator) -> np.ndarray:
    """Edge weights uniform on [-1, -0.25] ∪ [0.25, 1], drawn in sorted edge order."""
    W = np.zeros((dag.p, dag.p))
    for i, j in sorted(dag.edges):
        mag = rng.uniform(0.25, 1.0)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        W[i, j] = sign * mag
    return W


def chain_scm(p: int, seed: int) -> LinearGaussianScm:
    """Markov chain 0 -> 1 -> ... -> p-1 with random weights, unit noise."""
    dag = Dag(p, [(i, i + 1) for i in range(p - 1)])
    W = _draw_weights(dag, rng_from(seed, "weights"))
    return LinearGaussianScm(dag, W, np.ones(p))


def er_scm(p: int, density: float, seed: int) -> LinearGaussianScm:
    """Erdos-Renyi DAG: each pair is an edge with prob ``density``, oriented
    along a random node order; weights as in :func:`chain_scm`."""
    if not 0.0 <= density <= 1.0:
        raise SemError(f"density must be in [0, 1], got {density}")
    rng = rng_from(seed, "structure")
    perm = rng.permutation(p)
    pos = np.empty(p, dtype=int)
    pos[perm] = np.arange(p)
    edges = []
    for i in range(p):
        for j in range(i + 1, p):
            if rng.random() < density:
                edges.append((i, j) if pos[i] < pos[j] else (j, i))
    dag = Dag(p, edges)
    W = _draw_weights(dag, rng_from(seed, "weights"))
    return LinearGaussianScm(dag, W, np.ones(p))
