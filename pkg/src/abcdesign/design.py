"""Batch design: utilities over candidate intervention multisets and greedy
selection under a sampling budget.

The Monte-Carlo utility uses common random numbers: the synthetic outcome for
occurrence k of target I under ensemble member t and dataset index m draws
from a stream derived from (seed, encode(I), k, t, m).  A design's estimate is
therefore a deterministic function of the design multiset, identical no matter
how the design was assembled, which keeps greedy increments coherent and
comparisons across candidates low-variance.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .graphs import (
    InterventionFamily,
    InterventionTarget,
    Mec,
    OBSERVATIONAL,
    chordal_nodes,
    imec_members,
    Pdag,
)
from .posterior import DagEnsemble, TargetFunctional, entropy, functional_distribution, functional_groups, loglik_matrix
from .rng import derive_seed, rng_from
from .sem import Design

LOG2 = np.log(2.0)


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class BudgetConfig:
    """Sampling budget: total interventional samples split over batches.

    ``max_unique`` bounds the distinct targets per batch; None leaves the
    count unconstrained (one greedy step per sample).
    """

    total_samples: int
    batches: int
    max_unique: int | None = None

    def __post_init__(self):
        if self.total_samples < 1:
            raise DesignError(f"total_samples must be positive, got {self.total_samples}")
        if self.batches < 1:
            raise DesignError(f"batches must be positive, got {self.batches}")
        if self.total_samples % self.batches:
            raise DesignError(
                f"batches ({self.batches}) must divide total_samples ({self.total_samples})"
            )
        if self.max_unique is not None and self.max_unique < 1:
            raise DesignError(f"max_unique must be positive or None, got {self.max_unique}")

    @property
    def per_batch(self) -> int:
        return self.total_samples // self.batches


@dataclass(frozen=True)
class UtilityEstimate:
    """Monte-Carlo utility value with its standard error and sample sizes."""

    value: float
    std_error: float
    num_datasets: int
    num_dags: int


@dataclass(frozen=True)
class BatchRecord:
    """One executed batch: the design, entropies around it, rows collected."""

    index: int
    design: Design
    pre_entropy: float
    post_entropy: float
    rows: "object"  # Dataset; typed loosely to avoid an import cycle in tools


class MutualInfoUtility:
    """Estimated mutual information between a functional and design outcomes.

    The estimate is the weighted Monte-Carlo average over ensemble members t
    and synthetic datasets m of H1 - H2(y_tm), where H1 is the current
    functional entropy and H2 the entropy after importance-reweighting by the
    simulated outcome y_tm.  Instances memoize per-design log-likelihood sums,
    so greedy evaluation of a design reuses every previously scored prefix.
    """

    def __init__(
        self,
        ensemble: DagEnsemble,
        functional: TargetFunctional,
        num_datasets: int,
        seed: int,
        intervention_mean: float = 0.0,
        intervention_variance: float = 1.0,
    ):
        if num_datasets < 1:
            raise DesignError(f"num_datasets must be positive, got {num_datasets}")
        if intervention_variance <= 0:
            raise DesignError("intervention variance must be positive")
        self.ensemble = ensemble
        self.functional = functional
        self.num_datasets = num_datasets
        self.seed = seed
        self.intervention_mean = intervention_mean
        self.intervention_sd = float(np.sqrt(intervention_variance))

        self._active = np.flatnonzero(ensemble.weights > 0)
        self._w = ensemble.weights[self._active]
        groups = functional_groups(ensemble, functional)[self._active]
        n_groups = int(groups.max()) + 1
        self._onehot = np.zeros((len(self._active), n_groups))
        self._onehot[np.arange(len(self._active)), groups] = 1.0
        self._logw = np.log(self._w)
        self._h1 = entropy(functional_distribution(ensemble, functional))
        self._wstack = ensemble.weight_stack[self._active]
        self._vstack = ensemble.variance_stack[self._active]
        self._orders = [ensemble.dags[t].topological_order for t in self._active]
        self._parents = [ensemble.dags[t].parent_sets for t in self._active]
        self._sums: dict[str, np.ndarray] = {"": np.zeros((len(self._active), num_datasets, len(self._active)))}

    @property
    def prior_entropy(self) -> float:
        return self._h1

    def __call__(self, design: Design) -> UtilityEstimate:
        if design.size == 0:
            raise DesignError("cannot score an empty design")
        S = self._design_sums(design)
        logpost = self._logw[None, None, :] + S
        logpost -= logpost.max(axis=-1, keepdims=True)
        post = np.exp(logpost)
        post /= post.sum(axis=-1, keepdims=True)
        gp = post @ self._onehot
        h2 = -np.sum(gp * np.log(np.where(gp > 0, gp, 1.0)), axis=-1) / LOG2
        u = self._h1 - h2
        value = float(self._w @ u.mean(axis=1))
        if self.num_datasets > 1:
            per_t_var = u.var(axis=1, ddof=1)
            se = float(np.sqrt((self._w**2 * per_t_var).sum() / self.num_datasets))
        else:
            se = 0.0
        return UtilityEstimate(value, se, self.num_datasets, self.ensemble.size)

    # -- internals ----------------------------------------------------------

    def _design_sums(self, design: Design) -> np.ndarray:
        key = design.encode()
        hit = self._sums.get(key)
        if hit is not None:
            return hit
        # walk down to the deepest memoized prefix, preferring peels that hit
        # the cache; only the queried design is memoized, to bound memory
        chain: list[tuple[InterventionTarget, int]] = []
        cur = design
        while cur.encode() not in self._sums:
            peel = None
            for t, _ in cur.counts:
                if cur.remove_one(t).encode() in self._sums:
                    peel = t
                    break
            if peel is None:
                peel = cur.counts[-1][0]
            chain.append((peel, cur.count(peel)))
            cur = cur.remove_one(peel)
        S = self._sums[cur.encode()]
        for t, k in reversed(chain):
            S = S + self._occurrence_ll(t, k)
        self._sums[key] = S
        return S

    def _occurrence_ll(self, target: InterventionTarget, k: int) -> np.ndarray:
        """(t, m, member) log likelihood of the k-th synthetic row of ``target``."""
        n_act = len(self._active)
        M = self.num_datasets
        p = self.ensemble.p
        enc = target.encode()
        rows = np.zeros((n_act, M, p))
        for a, t in enumerate(self._active):
            eps = np.stack(
                [
                    rng_from(self.seed, "y", enc, k, int(t), m).standard_normal(p)
                    for m in range(M)
                ]
            )
            W = self._wstack[a]
            sd = np.sqrt(self._vstack[a])
            x = rows[a]
            for i in self._orders[a]:
                if i in target:
                    x[:, i] = self.intervention_mean + self.intervention_sd * eps[:, i]
                else:
                    x[:, i] = sd[i] * eps[:, i]
                    pa = self._parents[a][i]
                    if pa:
                        x[:, i] += x[:, list(pa)] @ W[list(pa), i]
        flat = rows.reshape(n_act * M, p)
        ll = loglik_matrix(self._wstack, self._vstack, flat, target)
        return ll.reshape(n_act, M, n_act)


def utility_mi_hat(
    ensemble: DagEnsemble,
    functional: TargetFunctional,
    design: Design,
    num_datasets: int,
    seed: int,
    intervention_mean: float = 0.0,
    intervention_variance: float = 1.0,
) -> UtilityEstimate:
    """One-shot wrapper around :class:`MutualInfoUtility`."""
    util = MutualInfoUtility(
        ensemble, functional, num_datasets, seed, intervention_mean, intervention_variance
    )
    return util(design)


# ---------------------------------------------------------------------------
# closed-form utilities for the known-class setting


def _with_observational(p: int, targets: Sequence[InterventionTarget]) -> InterventionFamily:
    uniq: list[InterventionTarget] = []
    for t in tuple(targets) + (OBSERVATIONAL,):
        if t not in uniq:
            uniq.append(t)
    return InterventionFamily(p, uniq)


def utility_infinite(
    mec: Mec, targets: Sequence[InterventionTarget], members: Sequence = None
) -> float:
    """Mean log2 size of the interventional class under the targets.

    This is the residual structural entropy an infinite-sample experiment
    would leave; designs should minimize it.  ``members`` restricts the
    average (and the classes) to a survivor subset.
    """
    ms = tuple(members) if members is not None else mec.members
    if not ms:
        raise DesignError("no members to evaluate")
    fam = _with_observational(mec.representative.p, targets)
    # fsum keeps symmetric candidates exactly tied
    tot = math.fsum(np.log2(len(imec_members(g, fam, ms))) for g in ms)
    return tot / len(ms)


def utility_meek(mec: Mec, posterior: np.ndarray, targets: Sequence[InterventionTarget]) -> float:
    """Expected count of edges oriented by the targets alone.

    For each member G the count is the number of directed edges of the
    interventional essential graph of G under the targets plus the
    observational case, taken within the full class; the expectation uses the
    supplied posterior over members.  The count ignores what earlier batches
    already oriented, which is what makes this score non-adaptive.
    """
    post = np.asarray(posterior, dtype=float)
    if post.shape != (len(mec.members),):
        raise DesignError("posterior length does not match class size")
    fam = _with_observational(mec.representative.p, targets)
    terms = []
    for w, g in zip(post, mec.members):
        if w == 0:
            continue
        eq = imec_members(g, fam, mec.members)
        common = frozenset.intersection(*(h.edges for h in eq))
        terms.append(w * len(common))
    return math.fsum(terms)


# ---------------------------------------------------------------------------
# selection strategies


def _value(u) -> float:
    return u.value if isinstance(u, UtilityEstimate) else float(u)


def _allocations(n_b: int, k: int) -> list[int]:
    """Split n_b samples over k selections; earlier selections get the extras."""
    base, extra = divmod(n_b, k)
    return [base + (1 if s < extra else 0) for s in range(k)]


def greedy_design(
    utility: Callable[[Design], UtilityEstimate | float],
    n_b: int,
    family: InterventionFamily,
    max_unique: int | None = None,
    trace: list | None = None,
) -> Design:
    """Greedy utility maximization of one batch.

    Unconstrained mode adds the best single sample n_b times.  With
    ``max_unique`` = K the batch allocates floor(n_b / K) samples per
    selection (earlier selections absorb the remainder), and a selected
    target leaves the candidate pool.  Ties keep the earliest candidate in
    family order.
    """
    if n_b < 1:
        raise DesignError(f"batch size must be positive, got {n_b}")
    if max_unique is not None and max_unique > len(family):
        raise DesignError(
            f"max_unique ({max_unique}) exceeds the family size ({len(family)})"
        )
    steps = n_b if max_unique is None else max_unique
    allocs = [1] * n_b if max_unique is None else _allocations(n_b, max_unique)
    pool = list(family.targets)
    design = Design()
    for step in range(steps):
        alloc = allocs[step]
        if alloc == 0:
            break
        best_t = None
        best_v = -np.inf
        for cand in pool:
            est = utility(design.add(cand, alloc))
            v = _value(est)
            if trace is not None:
                se = est.std_error if isinstance(est, UtilityEstimate) else 0.0
                trace.append(
                    {
                        "step": step,
                        "candidate": cand.encode(),
                        "value": v,
                        "std_error": se,
                    }
                )
            if v > best_v:
                best_t, best_v = cand, v
        design = design.add(best_t, alloc)
        if max_unique is not None:
            pool.remove(best_t)
    return design


def random_strategy(
    family: InterventionFamily, n_b: int, max_unique: int | None, seed: int
) -> Design:
    """Uniformly chosen distinct targets, samples split evenly."""
    if n_b < 1:
        raise DesignError(f"batch size must be positive, got {n_b}")
    k = min(n_b, len(family)) if max_unique is None else min(max_unique, len(family))
    rng = rng_from(seed)
    chosen = rng.choice(len(family), size=k, replace=False)
    allocs = _allocations(n_b, k)
    return Design(
        (family.targets[int(i)], a) for i, a in zip(chosen, allocs) if a > 0
    )


def chordal_random_strategy(
    rep: Pdag,
    family: InterventionFamily,
    n_b: int,
    max_unique: int | None,
    seed: int,
) -> Design:
    """Random strategy restricted to targets touching still-undirected edges.

    ``rep`` is the current (interventional) essential graph; targets that
    intersect its chordal nodes can still orient something.  Falls back to
    the unrestricted strategy when nothing qualifies.
    """
    nodes = chordal_nodes(rep)
    idx = [i for i, t in enumerate(family.targets) if t.nodes & nodes]
    if not idx:
        return random_strategy(family, n_b, max_unique, seed)
    k = min(n_b, len(idx)) if max_unique is None else min(max_unique, len(idx))
    rng = rng_from(seed)
    chosen = rng.choice(len(idx), size=k, replace=False)
    allocs = _allocations(n_b, k)
    return Design(
        (family.targets[idx[int(i)]], a) for i, a in zip(chosen, allocs) if a > 0
    )


def brute_force_design(
    utility: Callable[[Design], UtilityEstimate | float],
    n_b: int,
    family: InterventionFamily,
) -> tuple[Design, float]:
    """Exact maximizer over all multisets of size n_b; ties keep the first.

    Enumeration order is combinations-with-replacement over the family
    order.  Guarded against blowup.
    """
    if len(family) ** n_b > 10**6:
        raise DesignError(
            f"{len(family)}^{n_b} candidate designs exceed the enumeration guard"
        )
    best = None
    best_v = -np.inf
    for combo in itertools.combinations_with_replacement(family.targets, n_b):
        d = Design((t, 1) for t in combo)
        v = _value(utility(d))
        if v > best_v:
            best, best_v = d, v
    return best, float(best_v)


def abcd_round(
    functional: TargetFunctional,
    data,
    family: InterventionFamily,
    budget: BudgetConfig,
    T: int,
    M: int,
    learner,
    seed: int,
    log_prior=None,
    known_noise: float | None = None,
    intervention_mean: float = 0.0,
    intervention_variance: float = 1.0,
    trace: list | None = None,
) -> Design:
    """One round of budgeted design: bootstrap a posterior, then greedy-select.

    ``data`` is everything observed so far (observational plus earlier
    batches).  Returns the next batch's design.
    """
    from .posterior import dag_bootstrap  # local import: posterior also feeds us types

    ens = dag_bootstrap(
        data, T, learner, derive_seed(seed, "bootstrap"), log_prior, known_noise
    )
    util = MutualInfoUtility(
        ens,
        functional,
        M,
        derive_seed(seed, "utility"),
        intervention_mean,
        intervention_variance,
    )
    return greedy_design(util, budget.per_batch, family, budget.max_unique, trace)
