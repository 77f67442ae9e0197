"""Independent reference implementations used to validate the package.

Everything here recomputes quantities by a different route than the library:
brute-force enumeration instead of rule propagation, dense multivariate
normals instead of per-node factorization.
"""

import itertools
import random

import numpy as np
from scipy.stats import multivariate_normal, norm

from abcdesign.graphs import Dag, Pdag, vstructures
from abcdesign.graphs import _pdag_vstructures  # tests may poke internals


def random_dag(p: int, prob: float, rnd: random.Random) -> Dag:
    perm = list(range(p))
    rnd.shuffle(perm)
    edges = []
    for a in range(p):
        for b in range(a + 1, p):
            if rnd.random() < prob:
                edges.append((perm[a], perm[b]))
    return Dag(p, edges)


def pattern_vstructures(pdag: Pdag):
    return frozenset(_pdag_vstructures(set(pdag.directed), set(pdag.skeleton), pdag.p))


def consistent_extensions(pdag: Pdag) -> list[Dag]:
    """All acyclic orientations of the undirected part that keep the directed
    edges and produce exactly the pattern's v-structures."""
    und = sorted(pdag.undirected)
    vs0 = pattern_vstructures(pdag)
    out = []
    for bits in itertools.product((0, 1), repeat=len(und)):
        edges = set(pdag.directed)
        for (i, j), b in zip(und, bits):
            edges.add((i, j) if b == 0 else (j, i))
        try:
            g = Dag(pdag.p, edges)
        except ValueError:
            continue
        if vstructures(g) == vs0:
            out.append(g)
    return out


def orientations_with_pattern(p: int, skeleton, vstructs) -> list[Dag]:
    """All DAGs over the given skeleton with exactly the given v-structures."""
    pairs = sorted(skeleton)
    out = []
    for bits in itertools.product((0, 1), repeat=len(pairs)):
        edges = [(i, j) if b == 0 else (j, i) for (i, j), b in zip(pairs, bits)]
        try:
            g = Dag(p, edges)
        except ValueError:
            continue
        if vstructures(g) == vstructs:
            out.append(g)
    return out


def reachable(g: Dag, node: int) -> frozenset:
    """Descendants via boolean matrix powers."""
    a = np.zeros((g.p, g.p), dtype=bool)
    for i, j in g.edges:
        a[i, j] = True
    reach = a.copy()
    for _ in range(g.p):
        reach = reach | (reach @ a)
    return frozenset(np.flatnonzero(reach[node]).tolist())


def mutilated_gaussian(weights, noise_variances, target_nodes, int_mean, int_var):
    """Mean vector and covariance of the SEM under a hard intervention."""
    p = weights.shape[0]
    W = np.array(weights, dtype=float)
    d = np.array(noise_variances, dtype=float)
    mu_eps = np.zeros(p)
    for i in target_nodes:
        W[:, i] = 0.0
        d[i] = int_var
        mu_eps[i] = int_mean
    A = np.linalg.inv(np.eye(p) - W.T)
    mean = A @ mu_eps
    cov = A @ np.diag(d) @ A.T
    return mean, cov


def full_row_loglik(weights, noise_variances, row, target_nodes, int_mean=0.0, int_var=1.0):
    """Joint Gaussian log density of one row under the mutilated model."""
    mean, cov = mutilated_gaussian(weights, noise_variances, target_nodes, int_mean, int_var)
    return float(multivariate_normal.logpdf(row, mean=mean, cov=cov))


def atom_loglik(row, target_nodes, int_mean=0.0, int_var=1.0):
    """Log density of the intervened coordinates under the intervention atom."""
    return float(
        sum(norm.logpdf(row[i], loc=int_mean, scale=np.sqrt(int_var)) for i in target_nodes)
    )


def exact_posterior(dags, params_list, data, log_prior=None):
    """Empirical-Bayes posterior over DAGs via dense joint densities.

    Uses the full mutilated-model likelihood of every row (including the
    intervened coordinates, which contribute the same factor to every DAG)
    and normalizes directly, with no log-sum-exp shortcuts beyond scaling.
    """
    logs = []
    for g, pr in zip(dags, params_list):
        tot = 0.0 if log_prior is None else log_prior(g)
        for row, t in zip(data.x, data.targets):
            tot += full_row_loglik(pr.weights, pr.noise_variances, row, sorted(t.nodes))
        logs.append(tot)
    logs = np.array(logs)
    w = np.exp(logs - logs.max())
    return w / w.sum()
