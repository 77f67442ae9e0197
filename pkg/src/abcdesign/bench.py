"""Simulation harness: sequential design loops on synthetic ground truth.

A replicate draws a ground-truth SCM, runs B batches of a selection strategy
with the given budget, and reports entropy of the target functional before
and after each batch.  The entropy-reduction metric for a replicate is
(H_prior - H_final) / H_prior.
"""

from __future__ import annotations

import csv
import itertools
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .design import (
    BatchRecord,
    BudgetConfig,
    MutualInfoUtility,
    _allocations,
    chordal_random_strategy,
    greedy_design,
    random_strategy,
    utility_infinite,
    utility_meek,
)
from .graphs import (
    Dag,
    InterventionFamily,
    InterventionTarget,
    Mec,
    MecSizeError,
    OBSERVATIONAL,
    cpdag_of,
    enumerate_mec,
    i_essential_graph,
    imec_members,
)
from .posterior import (
    DagEnsemble,
    TargetFunctional,
    entropy,
    functional_distribution,
    posterior_weights,
)
from .rng import derive_seed
from .sem import Dataset, Design, LinearGaussianScm, chain_scm, er_scm, mle_fit, sample


class ConfigError(ValueError):
    pass


STRATEGIES = ("abcd", "random", "chordal-random", "infinite", "meek")
_NEEDS_KNOWN_MEC = ("chordal-random", "infinite", "meek")


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of a simulation study; see README for the file format."""

    scm_kind: str
    p: int
    n_total: int
    batch_counts: tuple[int, ...]
    strategies: tuple[str, ...]
    replicates: int
    seed: int
    density: float = 0.25
    max_unique: int | None = None
    functional: str = "full"
    family: str = "singles"
    n_obs: int = 100
    t_dags: int = 50
    m_datasets: int = 8
    known_mec: bool = True
    mec_cap: int = 100
    extra_mecs: int = 0
    known_noise: float | None = 1.0

    def __post_init__(self):
        if self.scm_kind not in ("chain", "er"):
            raise ConfigError(f"scm.kind must be 'chain' or 'er', got {self.scm_kind!r}")
        if self.p < 2:
            raise ConfigError(f"scm.p must be at least 2, got {self.p}")
        if not 0.0 <= self.density <= 1.0:
            raise ConfigError(f"scm.density must be in [0, 1], got {self.density}")
        if self.n_total < 1:
            raise ConfigError(f"design.n_total must be positive, got {self.n_total}")
        if not self.batch_counts:
            raise ConfigError("design.batch_counts is empty")
        for b in self.batch_counts:
            if b < 1:
                raise ConfigError(f"design.batch_counts entries must be positive, got {b}")
            if self.n_total % b:
                raise ConfigError(
                    f"design.batch_counts entry {b} does not divide n_total ({self.n_total})"
                )
        if not self.strategies:
            raise ConfigError("design.strategies is empty")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}; choose from {STRATEGIES}")
            if s in _NEEDS_KNOWN_MEC and not self.known_mec:
                raise ConfigError(f"strategy {s!r} requires posterior.known_mec = true")
        if self.max_unique is not None and self.max_unique < 1:
            raise ConfigError("design.max_unique must be positive when given")
        if self.replicates < 1:
            raise ConfigError(f"run.replicates must be positive, got {self.replicates}")
        if self.n_obs < 1:
            raise ConfigError(f"posterior.n_obs must be positive, got {self.n_obs}")
        if self.t_dags < 1:
            raise ConfigError(f"posterior.t_dags must be positive, got {self.t_dags}")
        if self.m_datasets < 1:
            raise ConfigError(f"posterior.m_datasets must be positive, got {self.m_datasets}")
        if self.mec_cap < 1:
            raise ConfigError(f"posterior.mec_cap must be positive, got {self.mec_cap}")
        if not 0 <= self.extra_mecs <= 3:
            raise ConfigError("posterior.extra_mecs must be between 0 and 3")
        if self.known_noise is not None and self.known_noise <= 0:
            raise ConfigError("posterior.known_noise must be positive or 'estimate'")
        TargetFunctional.parse(self.functional)
        InterventionFamily.parse(self.p, self.family)
        object.__setattr__(self, "batch_counts", tuple(self.batch_counts))
        object.__setattr__(self, "strategies", tuple(self.strategies))

    _SECTIONS = {
        "scm": {"kind": "scm_kind", "p": "p", "density": "density"},
        "design": {
            "n_total": "n_total",
            "batch_counts": "batch_counts",
            "max_unique": "max_unique",
            "strategies": "strategies",
            "functional": "functional",
            "family": "family",
        },
        "posterior": {
            "t_dags": "t_dags",
            "m_datasets": "m_datasets",
            "known_mec": "known_mec",
            "n_obs": "n_obs",
            "mec_cap": "mec_cap",
            "extra_mecs": "extra_mecs",
            "known_noise": "known_noise",
        },
        "run": {"replicates": "replicates", "seed": "seed"},
    }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        kwargs = {}
        for section, content in d.items():
            fields = cls._SECTIONS.get(section)
            if fields is None:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(content, dict):
                raise ConfigError(f"config section {section!r} must be a table")
            for key, value in content.items():
                name = fields.get(key)
                if name is None:
                    raise ConfigError(f"unknown config key {section}.{key}")
                if name == "known_noise" and value == "estimate":
                    value = None
                if name in ("batch_counts", "strategies"):
                    value = tuple(value)
                kwargs[name] = value
        missing = [
            k for k in ("scm_kind", "p", "n_total", "batch_counts", "strategies", "replicates", "seed")
            if k not in kwargs
        ]
        if missing:
            raise ConfigError(f"missing required config keys: {', '.join(missing)}")
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_json_dict(self) -> dict:
        out: dict = {}
        inverse = {
            name: (section, key)
            for section, fields in self._SECTIONS.items()
            for key, name in fields.items()
        }
        for name, (section, key) in inverse.items():
            value = getattr(self, name)
            if name == "known_noise" and value is None:
                value = "estimate"
            if isinstance(value, tuple):
                value = list(value)
            out.setdefault(section, {})[key] = value
        return out


@dataclass(frozen=True)
class ReplicateResult:
    strategy: str
    batches: int
    replicate: int
    true_dag: Dag
    records: tuple[BatchRecord, ...]
    mass_on_truth: tuple[float, ...]

    @property
    def prior_entropy(self) -> float:
        return self.records[0].pre_entropy

    @property
    def final_entropy(self) -> float:
        return self.records[-1].post_entropy

    @property
    def entropy_reduction(self) -> float:
        h0 = self.prior_entropy
        if h0 <= 0:
            return 0.0
        return (h0 - self.final_entropy) / h0


def _draw_instance(config: ExperimentConfig, replicate: int):
    """Ground truth SCM whose class fits under the enumeration cap.

    Oversized classes are discarded and redrawn with a fresh sub-stream, so
    the instance depends only on (seed, replicate), never on the strategy.
    """
    for attempt in itertools.count():
        s = derive_seed(config.seed, "instance", replicate, attempt)
        if config.scm_kind == "chain":
            scm = chain_scm(config.p, s)
        else:
            scm = er_scm(config.p, config.density, s)
        try:
            mec = enumerate_mec(cpdag_of(scm.dag), cap=config.mec_cap)
        except MecSizeError:
            continue
        return scm, mec, attempt


def _flip_variants(g: Dag, max_flips: int) -> list[Dag]:
    """Acyclic graphs from flipping up to ``max_flips`` non-covered edges of g."""
    noncovered = [
        (i, j)
        for i, j in sorted(g.edges)
        if set(g.parents(j)) - {i} != set(g.parents(i))
    ]
    out = []
    for r in range(1, max_flips + 1):
        for subset in itertools.combinations(noncovered, r):
            edges = set(g.edges)
            for i, j in subset:
                edges.discard((i, j))
                edges.add((j, i))
            try:
                out.append(Dag(g.p, edges))
            except Exception:
                continue
    return out


def _candidate_pool(config: ExperimentConfig, scm: LinearGaussianScm, mec: Mec) -> tuple[Dag, ...]:
    """Candidates for the unknown-class mode: the true class plus classes of
    edge-flip variants, distinct, capped at ``mec_cap`` members total."""
    pool = list(mec.members)
    seen_reps = {mec.representative}
    added = 0
    for variant in _flip_variants(scm.dag, 3):
        if added >= config.extra_mecs or len(pool) >= config.mec_cap:
            break
        rep = cpdag_of(variant)
        if rep in seen_reps:
            continue
        try:
            other = enumerate_mec(rep, cap=config.mec_cap)
        except MecSizeError:
            continue
        if len(pool) + len(other) > config.mec_cap:
            continue
        seen_reps.add(rep)
        pool.extend(other.members)
        added += 1
    return tuple(pool)


def _known_mec_ensemble(
    members: Sequence[Dag], obs: Dataset, interventional: Dataset, known_noise: float | None
) -> DagEnsemble:
    """Uniform prior over the class; weights from the interventional rows only
    (observational rows cannot separate members of one class), parameters fit
    on everything."""
    fit_data = obs.concat(interventional)
    params = tuple(mle_fit(g, fit_data, known_noise) for g in members)
    w = posterior_weights(members, params, interventional)
    return DagEnsemble(tuple(members), w, params)


def _select_design(
    strategy: str,
    config: ExperimentConfig,
    ens: DagEnsemble,
    mec: Mec,
    scm: LinearGaussianScm,
    family: InterventionFamily,
    functional: TargetFunctional,
    n_b: int,
    used: list[InterventionTarget],
    survivors: list[Dag],
    batch_seed: int,
    trace: list | None = None,
) -> Design:
    k_limit = config.max_unique
    if strategy == "abcd":
        util = MutualInfoUtility(
            ens,
            functional,
            config.m_datasets,
            derive_seed(batch_seed, "utility"),
            scm.intervention_mean,
            scm.intervention_variance,
        )
        return greedy_design(util, n_b, family, k_limit, trace)
    if strategy == "random":
        return random_strategy(family, n_b, k_limit, derive_seed(batch_seed, "random"))
    if strategy == "chordal-random":
        fam_so_far = _family_over(scm.p, used)
        rep = i_essential_graph(scm.dag, fam_so_far, mec)[0]
        return chordal_random_strategy(rep, family, n_b, k_limit, derive_seed(batch_seed, "random"))
    if strategy == "infinite":
        k = 1 if k_limit is None else k_limit
        picks: list[InterventionTarget] = []
        pool = list(family.targets)
        for _ in range(min(k, len(pool))):
            best, best_v = None, np.inf
            for cand in pool:
                v = utility_infinite(mec, used + picks + [cand], survivors)
                if v < best_v:
                    best, best_v = cand, v
            picks.append(best)
            pool.remove(best)
        allocs = _allocations(n_b, len(picks))
        return Design((t, a) for t, a in zip(picks, allocs) if a > 0)
    if strategy == "meek":
        post = _posterior_over_members(ens, mec)
        k = 1 if k_limit is None else k_limit
        picks = []
        pool = list(family.targets)
        for _ in range(min(k, len(pool))):
            best, best_v = None, -np.inf
            for cand in pool:
                v = utility_meek(mec, post, [cand])
                if v > best_v:
                    best, best_v = cand, v
            picks.append(best)
            pool.remove(best)
        allocs = _allocations(n_b, len(picks))
        return Design((t, a) for t, a in zip(picks, allocs) if a > 0)
    raise ConfigError(f"unknown strategy {strategy!r}")


def _family_over(p: int, targets: Sequence[InterventionTarget]) -> InterventionFamily:
    uniq: list[InterventionTarget] = []
    for t in tuple(targets) + (OBSERVATIONAL,):
        if t not in uniq:
            uniq.append(t)
    return InterventionFamily(p, uniq)


def _posterior_over_members(ens: DagEnsemble, mec: Mec) -> np.ndarray:
    post = np.zeros(len(mec.members))
    index = {g: i for i, g in enumerate(mec.members)}
    for g, w in zip(ens.dags, ens.weights):
        post[index[g]] += w
    return post


def run_replicate(
    config: ExperimentConfig,
    replicate: int,
    strategy: str | None = None,
    batches: int | None = None,
) -> ReplicateResult:
    strategy = strategy if strategy is not None else config.strategies[0]
    batches = batches if batches is not None else config.batch_counts[0]
    budget = BudgetConfig(config.n_total, batches, config.max_unique)
    n_b = budget.per_batch

    scm, mec, attempt = _draw_instance(config, replicate)
    functional = TargetFunctional.parse(config.functional)
    family = InterventionFamily.parse(scm.p, config.family)
    true_value = functional(scm.dag)
    base_seed = derive_seed(config.seed, "replicate", replicate, attempt)

    obs = sample(scm, OBSERVATIONAL, config.n_obs, derive_seed(base_seed, "obs"))

    if config.known_mec:
        candidates: tuple[Dag, ...] = mec.members
        def build(data_int: Dataset) -> DagEnsemble:
            return _known_mec_ensemble(candidates, obs, data_int, config.known_noise)
    else:
        pool = _candidate_pool(config, scm, mec)
        def build(data_int: Dataset) -> DagEnsemble:
            from .posterior import dag_bootstrap, exhaustive_learner

            all_data = obs.concat(data_int)
            return dag_bootstrap(
                all_data,
                config.t_dags,
                lambda d: exhaustive_learner(d, pool, config.known_noise),
                derive_seed(base_seed, "bootstrap", data_int.n),
                known_noise=config.known_noise,
            )

    data_int = Dataset.empty(scm.p)
    ens = build(data_int)
    used: list[InterventionTarget] = []
    survivors = list(mec.members)
    records: list[BatchRecord] = []
    mass_trace: list[float] = []

    for b in range(1, batches + 1):
        pre_h = entropy(functional_distribution(ens, functional))
        batch_seed = derive_seed(base_seed, "strategy", strategy, batches, "batch", b)
        xi = _select_design(
            strategy, config, ens, mec, scm, family, functional,
            n_b, used, survivors, batch_seed,
        )
        parts = [
            sample(scm, t, c, derive_seed(base_seed, "collect", b, t.encode()))
            for t, c in xi.counts
        ]
        rows = parts[0]
        for part in parts[1:]:
            rows = rows.concat(part)
        data_int = data_int.concat(rows)
        ens = build(data_int)
        dist = functional_distribution(ens, functional)
        post_h = entropy(dist)
        records.append(BatchRecord(b, xi, pre_h, post_h, rows))
        mass_trace.append(dist.prob_of(true_value))
        for t in xi.support:
            if t not in used:
                used.append(t)
        if strategy == "infinite":
            survivors = imec_members(scm.dag, _family_over(scm.p, used), survivors)

    return ReplicateResult(
        strategy, batches, replicate, scm.dag, tuple(records), tuple(mass_trace)
    )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    replicates: list[ReplicateResult]
    summary: dict

    def rows(self) -> list[dict]:
        out = []
        for r in self.replicates:
            h0 = r.prior_entropy
            for rec in r.records:
                red = 0.0 if h0 <= 0 else (h0 - rec.post_entropy) / h0
                out.append(
                    {
                        "strategy": r.strategy,
                        "batch_count": r.batches,
                        "replicate": r.replicate,
                        "batch": rec.index,
                        "pre_entropy": rec.pre_entropy,
                        "post_entropy": rec.post_entropy,
                        "entropy_reduction": red,
                        "selected_targets": rec.design.encode(),
                    }
                )
        return out


def run_experiment(
    config: ExperimentConfig, threads: int | None = None, out_dir=None
) -> ExperimentResult:
    """All strategy x batch-count x replicate cells, optionally in parallel.

    Cell results are merged in deterministic order, so thread count never
    changes the output.
    """
    cells = [
        (s, b, r)
        for s in config.strategies
        for b in config.batch_counts
        for r in range(config.replicates)
    ]
    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda c: run_replicate(config, c[2], c[0], c[1]), cells))
    else:
        results = [run_replicate(config, r, s, b) for s, b, r in cells]

    summary: dict = {}
    for s in config.strategies:
        summary[s] = {}
        for b in config.batch_counts:
            reductions = [
                r.entropy_reduction
                for r in results
                if r.strategy == s and r.batches == b
            ]
            q1, med, q3 = np.percentile(reductions, [25, 50, 75])
            summary[s][str(b)] = {
                "mean": float(np.mean(reductions)),
                "median": float(med),
                "q1": float(q1),
                "q3": float(q3),
            }
    result = ExperimentResult(config, results, summary)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


_CSV_COLUMNS = (
    "strategy",
    "batch_count",
    "replicate",
    "batch",
    "pre_entropy",
    "post_entropy",
    "entropy_reduction",
    "selected_targets",
)


def write_outputs(result: ExperimentResult, out_dir) -> None:
    import os

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "results.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_CSV_COLUMNS)
        for row in result.rows():
            w.writerow(
                [
                    row["strategy"],
                    row["batch_count"],
                    row["replicate"],
                    row["batch"],
                    repr(row["pre_entropy"]),
                    repr(row["post_entropy"]),
                    repr(row["entropy_reduction"]),
                    row["selected_targets"],
                ]
            )
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(result.summary, f, sort_keys=True, indent=2)
        f.write("\n")
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(result.config.to_json_dict(), f, sort_keys=True, indent=2)
        f.write("\n")


# ---------------------------------------------------------------------------
# demos and diagnostics


def bisection_demo(p: int, batches: int | None = None) -> list[int]:
    """Infinite-sample selection on the chain of length p: midpoint bisection.

    The true graph is the ascending chain; each batch intervenes on one node
    chosen to minimize the symbolic residual entropy among the surviving
    members.  Returns the selected node per batch (0-indexed).
    """
    dag = Dag(p, [(i, i + 1) for i in range(p - 1)])
    mec = enumerate_mec(cpdag_of(dag))
    family = InterventionFamily.single_node(p)
    survivors = list(mec.members)
    used: list[InterventionTarget] = []
    selected: list[int] = []

    def more() -> bool:
        if batches is None:
            return len(survivors) > 1
        return len(selected) < batches

    while more():
        best, best_v = None, np.inf
        for cand in family.targets:
            v = utility_infinite(mec, used + [cand], survivors)
            if v < best_v:
                best, best_v = cand, v
        used.append(best)
        selected.append(min(best.nodes))
        survivors = imec_members(dag, _family_over(p, used), survivors)
    return selected


COUNTEREXAMPLE_EDGES = ((2, 0), (2, 1), (2, 3), (0, 1), (0, 3), (1, 3))


@dataclass(frozen=True)
class CounterexampleBatch:
    index: int
    meek_scores: tuple[float, ...]
    meek_selected: int
    meek_entropy_bits: float
    mi_utilities: tuple[float, ...]
    mi_selected: int
    mi_entropy_bits: float


@dataclass(frozen=True)
class CounterexampleResult:
    graph: Dag
    mec_size: int
    batches: tuple[CounterexampleBatch, ...]


def counterexample_repro(batches: int = 5) -> CounterexampleResult:
    """Exact infinite-sample run where the oriented-edge score stalls.

    The truth is a complete 4-node DAG whose class has 24 members.  Both
    selectors intervene on one node per batch.  The oriented-edge score keeps
    re-selecting node 0 (its score stays maximal even after the intervention
    is exhausted), leaving one bit of entropy forever, while the residual
    entropy selector resolves the class in two batches.
    """
    truth = Dag(4, COUNTEREXAMPLE_EDGES)
    mec = enumerate_mec(cpdag_of(truth))
    family = InterventionFamily.single_node(4)

    meek_surv = list(mec.members)
    meek_used: list[InterventionTarget] = []
    mi_surv = list(mec.members)
    mi_used: list[InterventionTarget] = []
    out = []
    for b in range(1, batches + 1):
        post = np.zeros(len(mec.members))
        for g in meek_surv:
            post[mec.index(g)] = 1.0 / len(meek_surv)
        scores = tuple(utility_meek(mec, post, [t]) for t in family.targets)
        meek_sel = int(np.argmax(scores))
        meek_used.append(family.targets[meek_sel])
        meek_surv = imec_members(truth, _family_over(4, meek_used), meek_surv)

        utils = tuple(
            utility_infinite(mec, mi_used + [t], mi_surv) for t in family.targets
        )
        mi_sel = int(np.argmin(utils))
        mi_used.append(family.targets[mi_sel])
        mi_surv = imec_members(truth, _family_over(4, mi_used), mi_surv)

        out.append(
            CounterexampleBatch(
                b,
                scores,
                meek_sel,
                float(np.log2(len(meek_surv))),
                utils,
                mi_sel,
                float(np.log2(len(mi_surv))),
            )
        )
    return CounterexampleResult(truth, len(mec), tuple(out))


def consistency_check(
    replicates: int = 50,
    p: int = 4,
    n_b: int = 25,
    batches: int = 8,
    m_datasets: int = 8,
    seed: int = 0,
) -> list[tuple[float, ...]]:
    """Posterior mass on the true DAG per batch, for chain ground truths."""
    config = ExperimentConfig(
        scm_kind="chain",
        p=p,
        n_total=n_b * batches,
        batch_counts=(batches,),
        strategies=("abcd",),
        replicates=replicates,
        seed=seed,
        m_datasets=m_datasets,
        known_mec=True,
    )
    return [
        run_replicate(config, r).mass_on_truth for r in range(replicates)
    ]


def runtime_probe(
    p: int = 10,
    t_base: int = 512,
    m_base: int = 2,
    n_b: int = 4,
    seed: int = 0,
    repeats: int = 3,
) -> list[dict]:
    """Median wall time of one utility evaluation at (T, M), 2T and 2M.

    Ensemble construction is excluded from the timing; each repeat uses a
    fresh utility instance so memoization cannot carry over.
    """
    scm = er_scm(p, 0.5, derive_seed(seed, "probe-scm"))
    mec = enumerate_mec(cpdag_of(scm.dag), cap=100000)
    obs = sample(scm, OBSERVATIONAL, 200, derive_seed(seed, "probe-obs"))
    functional = TargetFunctional.full_graph()
    target = InterventionTarget([0])
    design = Design([(target, n_b)])

    rows = []
    for t_dags, m in ((t_base, m_base), (2 * t_base, m_base), (t_base, 2 * m_base)):
        members = tuple(mec.members[i % len(mec.members)] for i in range(t_dags))
        params = {g: mle_fit(g, obs, 1.0) for g in mec.members}
        ens = DagEnsemble(
            members,
            np.full(t_dags, 1.0 / t_dags),
            tuple(params[g] for g in members),
        )
        times = []
        for rep in range(repeats):
            util = MutualInfoUtility(ens, functional, m, derive_seed(seed, "probe-util"))
            start = time.perf_counter()
            util(design)
            times.append(time.perf_counter() - start)
        rows.append({"t": t_dags, "m": m, "seconds": float(np.median(times))})
    return rows
